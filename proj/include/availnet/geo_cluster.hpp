#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace availnet {

inline constexpr double kEarthRadiusKm = 6371.0;

/// WGS84 position in decimal degrees.
struct GeoPoint {
    double lat = 0.0;
    double lon = 0.0;

    /// Validating constructor; throws ValidationError when out of range.
    static GeoPoint make(double lat, double lon);

    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

void validate(const GeoPoint& p);

/// Great-circle distance in km (standard squared-sine haversine form).
double haversine(const GeoPoint& a, const GeoPoint& b, double radius_km = kEarthRadiusKm);

/// Hotspot centroids. All distances use the radius the model was trained with.
class ClusterModel {
public:
    ClusterModel() = default;
    explicit ClusterModel(std::vector<GeoPoint> centroids, double earth_radius_km = kEarthRadiusKm);

    std::size_t k() const noexcept { return centroids_.size(); }
    const std::vector<GeoPoint>& centroids() const noexcept { return centroids_; }
    double earth_radius_km() const noexcept { return radius_km_; }

    /// Nearest centroid; ties go to the smallest index.
    std::size_t assign(const GeoPoint& p) const;

private:
    std::vector<GeoPoint> centroids_;
    double radius_km_ = kEarthRadiusKm;
};

std::size_t assign_cluster(const ClusterModel& model, const GeoPoint& p);

enum class KMeansInit { uniform, kmeanspp };

struct KMeansOptions {
    std::size_t max_iter = 100;
    double tol_km = 1e-6;
    KMeansInit init = KMeansInit::kmeanspp;
    std::size_t restarts = 5;
    double earth_radius_km = kEarthRadiusKm;
};

struct KMeansResult {
    ClusterModel model;
    std::vector<std::size_t> assignments;
    // Sum of squared haversine distances (km^2) after every assignment step
    // of the selected run, starting with the initial assignment.
    std::vector<double> cost_history;
    std::size_t iterations = 0;
    double cost = 0.0;
};

/// Lloyd's algorithm with haversine assignment and a degree-space mean update.
/// The mean step is only accepted for a cluster when it does not raise that
/// cluster's cost, so the recorded cost never increases. Degree means are a
/// city-scale approximation: clusters straddling the antimeridian or a pole
/// get wrong centroids.
KMeansResult kmeans_haversine(std::span<const GeoPoint> points, std::size_t k, std::uint64_t seed,
                              const KMeansOptions& options = {});

double clustering_cost(std::span<const GeoPoint> points, std::span<const std::size_t> assignments,
                       const ClusterModel& model);

enum class DispersionForm { squared, plain };

/// W_k = sum_i D_i / (2 n_i), D_i summed over ordered pairs inside cluster i.
double within_dispersion(std::span<const GeoPoint> points, std::span<const std::size_t> assignments,
                         const ClusterModel& model, DispersionForm form = DispersionForm::squared);

struct GapStatOptions {
    std::size_t references = 10;
    KMeansOptions kmeans;
    DispersionForm dispersion = DispersionForm::squared;
    double dispersion_floor = 1e-12;
};

struct GapStatResult {
    std::vector<std::size_t> k_values;
    std::vector<double> gap;
    std::vector<double> log_wk;
    std::vector<double> ref_log_wk_mean;
    std::vector<double> ref_log_wk_sd;
    std::size_t chosen_k = 0;
};

/// Gap statistic against references drawn uniformly over the lat/lon bounding
/// box of the data. Picks the k maximizing the gap, smallest k on ties.
GapStatResult gap_statistic(std::span<const GeoPoint> points, std::span<const std::size_t> k_range,
                            std::uint64_t seed, const GapStatOptions& options = {});

}  // namespace availnet
