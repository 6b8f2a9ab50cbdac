#include "availnet/geo_cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <utility>

#include "availnet/error.hpp"
#include "availnet/random.hpp"

namespace availnet {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string describe(const GeoPoint& p) {
    std::ostringstream os;
    os << "(" << p.lat << ", " << p.lon << ")";
    return os.str();
}

std::size_t count_distinct(std::span<const GeoPoint> points) {
    std::set<std::pair<double, double>> seen;
    for (const auto& p : points) seen.emplace(p.lat, p.lon);
    return seen.size();
}

std::vector<std::size_t> assign_all(std::span<const GeoPoint> points, const std::vector<GeoPoint>& centroids,
                                    double radius) {
    std::vector<std::size_t> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < centroids.size(); ++j) {
            const double d = haversine(points[i], centroids[j], radius);
            if (d < best) {
                best = d;
                best_j = j;
            }
        }
        out[i] = best_j;
    }
    return out;
}

double cost_of(std::span<const GeoPoint> points, std::span<const std::size_t> assignment,
               const std::vector<GeoPoint>& centroids, double radius) {
    double cost = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = haversine(points[i], centroids[assignment[i]], radius);
        cost += d * d;
    }
    return cost;
}

std::vector<GeoPoint> init_uniform(std::span<const GeoPoint> points, std::size_t k, Rng& rng) {
    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<GeoPoint> seeds;
    for (std::size_t idx : order) {
        if (std::find(seeds.begin(), seeds.end(), points[idx]) == seeds.end()) seeds.push_back(points[idx]);
        if (seeds.size() == k) break;
    }
    return seeds;
}

std::vector<GeoPoint> init_kmeanspp(std::span<const GeoPoint> points, std::size_t k, double radius, Rng& rng) {
    std::vector<GeoPoint> seeds;
    std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
    seeds.push_back(points[pick(rng)]);
    std::vector<double> d2(points.size(), std::numeric_limits<double>::infinity());
    while (seeds.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double d = haversine(points[i], seeds.back(), radius);
            d2[i] = std::min(d2[i], d * d);
            total += d2[i];
        }
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        std::size_t chosen = points.size();
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (d2[i] <= 0.0) continue;
            chosen = i;
            target -= d2[i];
            if (target <= 0.0) break;
        }
        seeds.push_back(points[chosen]);
    }
    return seeds;
}

struct LloydRun {
    std::vector<GeoPoint> centroids;
    std::vector<std::size_t> assignment;
    std::vector<double> history;
    std::size_t iterations = 0;
};

LloydRun lloyd(std::span<const GeoPoint> points, std::vector<GeoPoint> centroids, const KMeansOptions& opt) {
    const double radius = opt.earth_radius_km;
    const std::size_t k = centroids.size();
    LloydRun run;
    run.assignment = assign_all(points, centroids, radius);
    run.history.push_back(cost_of(points, run.assignment, centroids, radius));

    for (std::size_t iter = 0; iter < opt.max_iter; ++iter) {
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t a : run.assignment) ++counts[a];

        // Empty cluster: steal the point farthest from its own centroid.
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] != 0) continue;
            double worst = -1.0;
            std::size_t worst_i = points.size();
            for (std::size_t i = 0; i < points.size(); ++i) {
                if (counts[run.assignment[i]] < 2) continue;
                const double d = haversine(points[i], centroids[run.assignment[i]], radius);
                if (d > worst) {
                    worst = d;
                    worst_i = i;
                }
            }
            if (worst_i == points.size()) break;
            --counts[run.assignment[worst_i]];
            run.assignment[worst_i] = j;
            counts[j] = 1;
            centroids[j] = points[worst_i];
        }

        std::vector<double> lat_sum(k, 0.0), lon_sum(k, 0.0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            lat_sum[run.assignment[i]] += points[i].lat;
            lon_sum[run.assignment[i]] += points[i].lon;
        }
        std::vector<double> old_cost(k, 0.0), new_cost(k, 0.0);
        std::vector<GeoPoint> proposed = centroids;
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) continue;
            proposed[j] = GeoPoint{lat_sum[j] / counts[j], lon_sum[j] / counts[j]};
        }
        for (std::size_t i = 0; i < points.size(); ++i) {
            const std::size_t j = run.assignment[i];
            const double d_old = haversine(points[i], centroids[j], radius);
            const double d_new = haversine(points[i], proposed[j], radius);
            old_cost[j] += d_old * d_old;
            new_cost[j] += d_new * d_new;
        }
        double movement = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (new_cost[j] <= old_cost[j]) {
                movement = std::max(movement, haversine(centroids[j], proposed[j], radius));
                centroids[j] = proposed[j];
            }
        }

        run.assignment = assign_all(points, centroids, radius);
        run.history.push_back(cost_of(points, run.assignment, centroids, radius));
        run.iterations = iter + 1;
        if (movement < opt.tol_km) break;
    }
    run.centroids = std::move(centroids);
    return run;
}

}  // namespace

GeoPoint GeoPoint::make(double lat, double lon) {
    GeoPoint p{lat, lon};
    validate(p);
    return p;
}

void validate(const GeoPoint& p) {
    if (!std::isfinite(p.lat) || p.lat < -90.0 || p.lat > 90.0)
        throw ValidationError("latitude out of range: " + describe(p));
    if (!std::isfinite(p.lon) || p.lon < -180.0 || p.lon > 180.0)
        throw ValidationError("longitude out of range: " + describe(p));
}

double haversine(const GeoPoint& a, const GeoPoint& b, double radius_km) {
    validate(a);
    validate(b);
    if (!(radius_km > 0.0)) throw ValidationError("earth radius must be positive");
    const double phi1 = a.lat * kDegToRad;
    const double phi2 = b.lat * kDegToRad;
    const double half_lon = (a.lon - b.lon) * kDegToRad / 2.0;
    const double cos_cos = std::cos(phi1) * std::cos(phi2);
    const double s_diff = std::sin((phi1 - phi2) / 2.0);
    const double s_sum = std::sin((phi1 + phi2) / 2.0);
    const double s_lon = std::sin(half_lon), c_lon = std::cos(half_lon);
    // hav(d) and hav(pi - d) = 1 - hav(d), each a sum of non-negative terms,
    // so neither loses precision near zero distance or near the antipode.
    const double h = s_diff * s_diff + cos_cos * s_lon * s_lon;
    const double h_comp = s_sum * s_sum + cos_cos * c_lon * c_lon;
    return radius_km * 2.0 * std::atan2(std::sqrt(h), std::sqrt(h_comp));
}

ClusterModel::ClusterModel(std::vector<GeoPoint> centroids, double earth_radius_km)
    : centroids_(std::move(centroids)), radius_km_(earth_radius_km) {
    if (centroids_.empty()) throw ValidationError("cluster model needs at least one centroid");
    if (!(radius_km_ > 0.0)) throw ValidationError("earth radius must be positive");
    for (std::size_t i = 0; i < centroids_.size(); ++i) {
        validate(centroids_[i]);
        for (std::size_t j = 0; j < i; ++j)
            if (centroids_[i] == centroids_[j])
                throw ValidationError("duplicate centroid " + describe(centroids_[i]));
    }
}

std::size_t ClusterModel::assign(const GeoPoint& p) const {
    validate(p);
    if (centroids_.empty()) throw ValidationError("cluster model is empty");
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < centroids_.size(); ++j) {
        const double d = haversine(p, centroids_[j], radius_km_);
        if (d < best) {
            best = d;
            best_j = j;
        }
    }
    return best_j;
}

std::size_t assign_cluster(const ClusterModel& model, const GeoPoint& p) { return model.assign(p); }

KMeansResult kmeans_haversine(std::span<const GeoPoint> points, std::size_t k, std::uint64_t seed,
                              const KMeansOptions& options) {
    if (points.empty()) throw ValidationError("kmeans: no points");
    if (k == 0) throw ValidationError("kmeans: k must be at least 1");
    if (k > points.size()) throw ValidationError("kmeans: k exceeds the number of points");
    for (const auto& p : points) validate(p);
    if (k > count_distinct(points)) throw ValidationError("kmeans: k exceeds the number of distinct points");

    const std::size_t restarts = std::max<std::size_t>(1, options.restarts);
    LloydRun best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, r));
        auto init = options.init == KMeansInit::uniform
                        ? init_uniform(points, k, rng)
                        : init_kmeanspp(points, k, options.earth_radius_km, rng);
        LloydRun run = lloyd(points, std::move(init), options);
        if (run.history.back() < best_cost) {
            best_cost = run.history.back();
            best = std::move(run);
        }
    }

    KMeansResult result;
    result.model = ClusterModel(std::move(best.centroids), options.earth_radius_km);
    result.assignments = std::move(best.assignment);
    result.cost_history = std::move(best.history);
    result.iterations = best.iterations;
    result.cost = best_cost;
    return result;
}

double clustering_cost(std::span<const GeoPoint> points, std::span<const std::size_t> assignments,
                       const ClusterModel& model) {
    if (points.size() != assignments.size()) throw ValidationError("cost: assignment count mismatch");
    for (std::size_t a : assignments)
        if (a >= model.k()) throw ValidationError("cost: assignment out of range");
    return cost_of(points, assignments, model.centroids(), model.earth_radius_km());
}

double within_dispersion(std::span<const GeoPoint> points, std::span<const std::size_t> assignments,
                         const ClusterModel& model, DispersionForm form) {
    if (points.size() != assignments.size()) throw ValidationError("dispersion: assignment count mismatch");
    std::vector<std::vector<std::size_t>> members(model.k());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (assignments[i] >= model.k()) throw ValidationError("dispersion: assignment out of range");
        members[assignments[i]].push_back(i);
    }
    const double radius = model.earth_radius_km();
    double w = 0.0;
    for (const auto& m : members) {
        if (m.empty()) continue;
        double half_pairs = 0.0;
        for (std::size_t a = 0; a < m.size(); ++a) {
            for (std::size_t b = a + 1; b < m.size(); ++b) {
                const double d = haversine(points[m[a]], points[m[b]], radius);
                half_pairs += form == DispersionForm::squared ? d * d : d;
            }
        }
        w += (2.0 * half_pairs) / (2.0 * static_cast<double>(m.size()));
    }
    return w;
}

GapStatResult gap_statistic(std::span<const GeoPoint> points, std::span<const std::size_t> k_range,
                            std::uint64_t seed, const GapStatOptions& options) {
    if (k_range.empty()) throw ValidationError("gap statistic: empty k range");
    if (options.references == 0) throw ValidationError("gap statistic: need at least one reference sample");
    if (points.empty()) throw ValidationError("gap statistic: no points");
    for (const auto& p : points) validate(p);
    for (std::size_t k : k_range)
        if (k == 0 || k > points.size()) throw ValidationError("gap statistic: k out of range");

    double lat_lo = points[0].lat, lat_hi = points[0].lat;
    double lon_lo = points[0].lon, lon_hi = points[0].lon;
    for (const auto& p : points) {
        lat_lo = std::min(lat_lo, p.lat);
        lat_hi = std::max(lat_hi, p.lat);
        lon_lo = std::min(lon_lo, p.lon);
        lon_hi = std::max(lon_hi, p.lon);
    }

    std::vector<std::vector<GeoPoint>> references(options.references);
    for (std::size_t b = 0; b < options.references; ++b) {
        Rng rng(derive_seed(seed, 1000 + b));
        std::uniform_real_distribution<double> ulat(lat_lo, lat_hi), ulon(lon_lo, lon_hi);
        auto& ref = references[b];
        ref.reserve(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double lat = lat_lo == lat_hi ? lat_lo : ulat(rng);
            const double lon = lon_lo == lon_hi ? lon_lo : ulon(rng);
            ref.push_back(GeoPoint{lat, lon});
        }
    }

    auto log_dispersion = [&](std::span<const GeoPoint> data, std::size_t k, std::uint64_t s) {
        double w = 0.0;
        // Every distinct location its own cluster: dispersion is exactly zero.
        if (k < count_distinct(data)) {
            auto fit = kmeans_haversine(data, k, s, options.kmeans);
            w = within_dispersion(data, fit.assignments, fit.model, options.dispersion);
        }
        return std::log(std::max(w, options.dispersion_floor));
    };

    GapStatResult result;
    for (std::size_t ki = 0; ki < k_range.size(); ++ki) {
        const std::size_t k = k_range[ki];
        const double observed = log_dispersion(points, k, derive_seed(seed, 2 * k));
        std::vector<double> ref_logs(options.references);
        for (std::size_t b = 0; b < options.references; ++b)
            ref_logs[b] = log_dispersion(references[b], k, derive_seed(derive_seed(seed, 2 * k + 1), b));
        double mean = 0.0;
        for (double v : ref_logs) mean += v;
        mean /= static_cast<double>(ref_logs.size());
        double var = 0.0;
        for (double v : ref_logs) var += (v - mean) * (v - mean);
        var /= static_cast<double>(ref_logs.size());

        result.k_values.push_back(k);
        result.log_wk.push_back(observed);
        result.ref_log_wk_mean.push_back(mean);
        result.ref_log_wk_sd.push_back(std::sqrt(var));
        result.gap.push_back(mean - observed);
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < result.gap.size(); ++i) {
        if (result.gap[i] > result.gap[best] ||
            (result.gap[i] == result.gap[best] && result.k_values[i] < result.k_values[best]))
            best = i;
    }
    result.chosen_k = result.k_values[best];
    return result;
}

}  // namespace availnet
