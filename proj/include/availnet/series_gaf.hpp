#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "availnet/features.hpp"
#include "availnet/geo_cluster.hpp"
#include "availnet/random.hpp"
#include "availnet/tensor.hpp"

namespace availnet {

// ---------------------------------------------------------------------------
// Presence series

struct PresenceSeries {
    std::string service_id;
    std::size_t cluster_id = 0;
    std::chrono::seconds granularity{60};
    Timestamp start{};
    std::vector<std::uint8_t> values;  // step i covers [start + i*g, start + (i+1)*g)
};

/// 1 where any record of `service_id` falls in the step and assigns to
/// `cluster_id`. Spans the first to the last record of the service.
PresenceSeries build_presence_series(std::span<const TraceRecord> records, const ClusterModel& model,
                                     const std::string& service_id, std::size_t cluster_id,
                                     std::chrono::seconds granularity);

/// Same, over an explicit span of `steps` steps starting at `start`; records
/// outside the span are ignored.
PresenceSeries build_presence_series(std::span<const TraceRecord> records, const ClusterModel& model,
                                     const std::string& service_id, std::size_t cluster_id,
                                     std::chrono::seconds granularity, Timestamp start, std::size_t steps);

struct SeriesWindow {
    std::size_t start = 0;
    std::vector<double> values;        // k steps
    std::vector<std::uint8_t> future;  // the gamma steps right after the window
};

/// Windows at starts 0, r, 2r, ... while start + k + gamma <= n.
std::vector<SeriesWindow> roll_windows(std::span<const std::uint8_t> series, std::size_t k, std::size_t r,
                                       std::size_t gamma);

// ---------------------------------------------------------------------------
// Multi-step labels

inline constexpr std::size_t kDefaultMaxGamma = 3;

struct MultiStepLabel {
    std::vector<std::uint8_t> bits;  // l_1 .. l_gamma
    std::size_t class_index = 0;     // sum l_i * 2^(i-1)

    std::size_t gamma() const noexcept { return bits.size(); }
    friend bool operator==(const MultiStepLabel&, const MultiStepLabel&) = default;
};

MultiStepLabel make_label(std::span<const std::uint8_t> future, std::size_t max_gamma = kDefaultMaxGamma);
MultiStepLabel decode_label(std::size_t class_index, std::size_t gamma);

/// "l1 l2 .. lgamma" as a bit string, e.g. "100" for class 1 with gamma 3.
std::string label_string(const MultiStepLabel& label);

// ---------------------------------------------------------------------------
// Window preprocessing and Gramian Angular Fields

inline constexpr double kZeroSeriesEpsilon = 1e-3;

/// All-zero windows become all-epsilon; anything else is returned unchanged.
std::vector<double> perturb_zero_series(std::span<const double> window, double epsilon = kZeroSeriesEpsilon);

/// Min-max to [-1, 1]; a constant window maps to zeros.
std::vector<double> rescale_to_unit(std::span<const double> window);

/// Frame means over m near-equal contiguous frames, the remainder going to the leading frames.
std::vector<double> paa(std::span<const double> window, std::size_t m);

struct PolarCoordinates {
    std::vector<double> psi;  // arccos(x_i), in [0, pi]
    std::vector<double> rho;  // i / span
};

PolarCoordinates to_polar(std::span<const double> window, double span);

/// cos(psi_i + psi_j) for a window already in [-1, 1].
Tensor gasf(std::span<const double> window);

enum class GadfForm { difference, sum };

/// sin(psi_i - psi_j); the sum form gives sin(psi_i + psi_j).
Tensor gadf(std::span<const double> window, GadfForm form = GadfForm::difference);

struct GafOptions {
    double epsilon = kZeroSeriesEpsilon;
    std::size_t paa_size = 0;  // 0 keeps the window length
    GadfForm gadf_form = GadfForm::difference;
};

struct GafImagePair {
    Tensor gasf;  // [T, T]
    Tensor gadf;  // [T, T]
    std::string service_id;
    std::size_t cluster_id = 0;
    std::size_t window_start = 0;

    std::size_t size() const { return gasf.empty() ? 0 : gasf.dim(0); }
};

/// perturb -> optional PAA -> rescale -> GASF and GADF.
GafImagePair encode_gaf_pair(std::span<const double> window, const GafOptions& options = {});

// ---------------------------------------------------------------------------
// Augmentation and balancing

inline constexpr double kDefaultRotationDeg = 40.0;
inline constexpr double kDefaultShear = 0.2;

/// Rotation then horizontal shear about the image center, bilinear resampling,
/// zero outside the source.
Tensor augment(const Tensor& image, double rotation_deg = kDefaultRotationDeg, double shear = kDefaultShear);

struct LabeledPair {
    GafImagePair pair;
    MultiStepLabel label;
};

struct BalanceOptions {
    double rotation_deg = kDefaultRotationDeg;
    double shear = kDefaultShear;
    double tolerance = 0.1;  // minority classes reach at least (1 - tolerance) * majority
    std::uint64_t seed = 0;
};

struct BalanceResult {
    std::vector<LabeledPair> samples;
    std::vector<std::size_t> empty_classes;
    std::vector<std::string> warnings;
};

/// Oversamples minority classes with augmented copies of their members. Each
/// copy draws its rotation from [-rotation, rotation] and shear from
/// [-shear, shear]. Originals keep their order and come first.
BalanceResult balance_classes(std::vector<LabeledPair> samples, std::size_t num_classes,
                              const BalanceOptions& options = {});

std::vector<std::size_t> class_counts(std::span<const LabeledPair> samples, std::size_t num_classes);

// ---------------------------------------------------------------------------
// Files

/// "AVTF" magic, u32 version, u32 rank, u64 dims, then row-major little-endian f32.
void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

/// 8-bit grayscale, [-1, 1] mapped to [0, 255].
void write_png(const std::string& path, const Tensor& image);

}  // namespace availnet
