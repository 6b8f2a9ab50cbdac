#include "availnet/series_gaf.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "availnet/error.hpp"

namespace availnet {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

void require_granularity(std::chrono::seconds g) {
    if (g.count() <= 0) throw ValidationError("series granularity must be positive");
}

void require_square(const Tensor& image, const char* what) {
    if (image.rank() != 2 || image.dim(0) != image.dim(1))
        throw ShapeError(std::string(what) + ": expected a square matrix, got " + to_string(image.shape()));
}

}  // namespace

PresenceSeries build_presence_series(std::span<const TraceRecord> records, const ClusterModel& model,
                                     const std::string& service_id, std::size_t cluster_id,
                                     std::chrono::seconds granularity) {
    require_granularity(granularity);
    Timestamp first = Timestamp::max(), last = Timestamp::min();
    for (const auto& r : records) {
        if (r.service_id != service_id) continue;
        first = std::min(first, r.timestamp);
        last = std::max(last, r.timestamp);
    }
    if (first > last) throw DataError("no records for service '" + service_id + "'");
    const auto steps = static_cast<std::size_t>((last - first) / granularity) + 1;
    return build_presence_series(records, model, service_id, cluster_id, granularity, first, steps);
}

PresenceSeries build_presence_series(std::span<const TraceRecord> records, const ClusterModel& model,
                                     const std::string& service_id, std::size_t cluster_id,
                                     std::chrono::seconds granularity, Timestamp start, std::size_t steps) {
    require_granularity(granularity);
    if (steps == 0) throw ValidationError("presence series needs at least one step");
    if (cluster_id >= model.k()) throw ValidationError("cluster id out of range");
    PresenceSeries s;
    s.service_id = service_id;
    s.cluster_id = cluster_id;
    s.granularity = granularity;
    s.start = start;
    s.values.assign(steps, 0);
    for (const auto& r : records) {
        if (r.service_id != service_id || r.timestamp < start) continue;
        const auto step = static_cast<std::size_t>((r.timestamp - start) / granularity);
        if (step >= steps || s.values[step]) continue;
        if (model.assign(r.point) == cluster_id) s.values[step] = 1;
    }
    return s;
}

std::vector<SeriesWindow> roll_windows(std::span<const std::uint8_t> series, std::size_t k, std::size_t r,
                                       std::size_t gamma) {
    if (k == 0) throw ValidationError("window length must be at least 1");
    if (r == 0) throw ValidationError("window stride must be at least 1");
    std::vector<SeriesWindow> out;
    for (std::size_t start = 0; start + k + gamma <= series.size(); start += r) {
        SeriesWindow w;
        w.start = start;
        w.values.assign(series.begin() + start, series.begin() + start + k);
        w.future.assign(series.begin() + start + k, series.begin() + start + k + gamma);
        out.push_back(std::move(w));
    }
    return out;
}

MultiStepLabel make_label(std::span<const std::uint8_t> future, std::size_t max_gamma) {
    if (future.empty()) throw ValidationError("label needs at least one future step");
    if (future.size() > max_gamma || future.size() > 30)
        throw ValidationError("label horizon " + std::to_string(future.size()) + " exceeds the configured maximum " +
                              std::to_string(max_gamma));
    MultiStepLabel label;
    label.bits.assign(future.begin(), future.end());
    for (std::size_t i = 0; i < future.size(); ++i) {
        if (future[i] > 1) throw ValidationError("label steps must be 0 or 1");
        label.class_index |= static_cast<std::size_t>(future[i]) << i;
    }
    return label;
}

MultiStepLabel decode_label(std::size_t class_index, std::size_t gamma) {
    if (gamma == 0 || gamma > 30) throw ValidationError("label horizon out of range");
    if (class_index >= (std::size_t{1} << gamma))
        throw ValidationError("class index " + std::to_string(class_index) + " out of range for gamma " +
                              std::to_string(gamma));
    MultiStepLabel label;
    label.class_index = class_index;
    for (std::size_t i = 0; i < gamma; ++i) label.bits.push_back(static_cast<std::uint8_t>((class_index >> i) & 1U));
    return label;
}

std::string label_string(const MultiStepLabel& label) {
    std::string s;
    for (auto b : label.bits) s.push_back(b ? '1' : '0');
    return s;
}

std::vector<double> perturb_zero_series(std::span<const double> window, double epsilon) {
    if (!(epsilon > 0.0)) throw ValidationError("perturbation epsilon must be positive");
    std::vector<double> out(window.begin(), window.end());
    if (std::all_of(out.begin(), out.end(), [](double v) { return v == 0.0; })) std::fill(out.begin(), out.end(), epsilon);
    return out;
}

std::vector<double> rescale_to_unit(std::span<const double> window) {
    if (window.empty()) throw ValidationError("cannot rescale an empty window");
    const auto [lo, hi] = std::minmax_element(window.begin(), window.end());
    const double min = *lo, max = *hi;
    std::vector<double> out(window.size(), 0.0);
    if (max == min) return out;
    for (std::size_t i = 0; i < window.size(); ++i) out[i] = 2.0 * (window[i] - min) / (max - min) - 1.0;
    return out;
}

std::vector<double> paa(std::span<const double> window, std::size_t m) {
    if (m == 0 || m > window.size())
        throw ValidationError("PAA size " + std::to_string(m) + " must be in [1, " + std::to_string(window.size()) +
                              "]");
    const std::size_t base = window.size() / m, extra = window.size() % m;
    std::vector<double> out;
    out.reserve(m);
    std::size_t pos = 0;
    for (std::size_t j = 0; j < m; ++j) {
        const std::size_t len = base + (j < extra ? 1 : 0);
        double sum = 0.0;
        for (std::size_t i = 0; i < len; ++i) sum += window[pos + i];
        out.push_back(sum / static_cast<double>(len));
        pos += len;
    }
    return out;
}

PolarCoordinates to_polar(std::span<const double> window, double span) {
    if (!(span > 0.0)) throw ValidationError("polar span constant must be positive");
    constexpr double tol = 1e-12;
    PolarCoordinates pc;
    pc.psi.reserve(window.size());
    pc.rho.reserve(window.size());
    for (std::size_t i = 0; i < window.size(); ++i) {
        const double x = window[i];
        if (!(x >= -1.0 - tol && x <= 1.0 + tol))
            throw ValidationError("value " + std::to_string(x) + " at position " + std::to_string(i) +
                                  " lies outside [-1, 1]");
        pc.psi.push_back(std::acos(std::clamp(x, -1.0, 1.0)));
        pc.rho.push_back(static_cast<double>(i) / span);
    }
    return pc;
}

namespace {

// cos and sin of arccos(x), written so that x = +-1 gives exact zeros.
struct UnitAngles {
    std::vector<double> c, s;
};

UnitAngles unit_angles(std::span<const double> window) {
    to_polar(window, static_cast<double>(std::max<std::size_t>(window.size(), 1)));
    UnitAngles a;
    for (double x : window) {
        const double c = std::clamp(x, -1.0, 1.0);
        a.c.push_back(c);
        a.s.push_back(std::sqrt(std::max(0.0, 1.0 - c * c)));
    }
    return a;
}

}  // namespace

Tensor gasf(std::span<const double> window) {
    const auto a = unit_angles(window);
    const std::size_t t = window.size();
    Tensor g({t, t});
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) g.at(i, j) = a.c[i] * a.c[j] - a.s[i] * a.s[j];
    return g;
}

Tensor gadf(std::span<const double> window, GadfForm form) {
    const auto a = unit_angles(window);
    const std::size_t t = window.size();
    const double sign = form == GadfForm::difference ? -1.0 : 1.0;
    Tensor g({t, t});
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) g.at(i, j) = a.s[i] * a.c[j] + sign * a.c[i] * a.s[j];
    return g;
}

GafImagePair encode_gaf_pair(std::span<const double> window, const GafOptions& options) {
    if (window.empty()) throw ValidationError("cannot encode an empty window");
    std::vector<double> w = perturb_zero_series(window, options.epsilon);
    if (options.paa_size != 0) w = paa(w, options.paa_size);
    w = rescale_to_unit(w);
    GafImagePair pair;
    pair.gasf = gasf(w);
    pair.gadf = gadf(w, options.gadf_form);
    return pair;
}

Tensor augment(const Tensor& image, double rotation_deg, double shear) {
    require_square(image, "augment");
    const std::size_t t = image.dim(0);
    const double theta = rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double center = (static_cast<double>(t) - 1.0) / 2.0;
    Tensor out({t, t}, 0.0);

    auto pixel = [&](long long y, long long x) {
        if (y < 0 || x < 0 || y >= static_cast<long long>(t) || x >= static_cast<long long>(t)) return 0.0;
        return image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    };
    for (std::size_t row = 0; row < t; ++row) {
        for (std::size_t col = 0; col < t; ++col) {
            // undo the shear, then the rotation
            const double dy = static_cast<double>(row) - center;
            const double dx = static_cast<double>(col) - center - shear * dy;
            const double sx = c * dx + s * dy + center;
            const double sy = -s * dx + c * dy + center;
            const double fx0 = std::floor(sx), fy0 = std::floor(sy);
            const double fx = sx - fx0, fy = sy - fy0;
            const auto x0 = static_cast<long long>(fx0), y0 = static_cast<long long>(fy0);
            out.at(row, col) = (1 - fy) * ((1 - fx) * pixel(y0, x0) + fx * pixel(y0, x0 + 1)) +
                               fy * ((1 - fx) * pixel(y0 + 1, x0) + fx * pixel(y0 + 1, x0 + 1));
        }
    }
    return out;
}

std::vector<std::size_t> class_counts(std::span<const LabeledPair> samples, std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& s : samples) {
        if (s.label.class_index >= num_classes) throw ValidationError("sample label outside the class range");
        ++counts[s.label.class_index];
    }
    return counts;
}

BalanceResult balance_classes(std::vector<LabeledPair> samples, std::size_t num_classes,
                              const BalanceOptions& options) {
    if (options.tolerance < 0.0 || options.tolerance >= 1.0)
        throw ValidationError("balance tolerance must be in [0, 1)");
    const auto counts = class_counts(samples, num_classes);
    BalanceResult result;
    std::size_t present = 0, majority = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) {
            result.empty_classes.push_back(c);
        } else {
            ++present;
            majority = std::max(majority, counts[c]);
        }
    }
    if (!result.empty_classes.empty())
        result.warnings.push_back(std::to_string(result.empty_classes.size()) + " of " + std::to_string(num_classes) +
                                  " classes have no samples and stay empty");
    if (present < 2) {
        result.warnings.push_back("only one class present; nothing to balance");
        result.samples = std::move(samples);
        return result;
    }

    const auto slack = static_cast<std::size_t>(std::floor(options.tolerance * static_cast<double>(majority) + 1e-9));
    const std::size_t target = majority - slack;
    std::vector<std::vector<std::size_t>> members(num_classes);
    for (std::size_t i = 0; i < samples.size(); ++i) members[samples[i].label.class_index].push_back(i);

    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0 || counts[c] >= target) continue;
        Rng rng(derive_seed(options.seed, c));
        std::uniform_real_distribution<double> rot(-options.rotation_deg, options.rotation_deg);
        std::uniform_real_distribution<double> sh(-options.shear, options.shear);
        for (std::size_t j = 0; counts[c] + j < target; ++j) {
            const LabeledPair& src = samples[members[c][j % members[c].size()]];
            const double r = options.rotation_deg > 0 ? rot(rng) : 0.0;
            const double s = options.shear > 0 ? sh(rng) : 0.0;
            LabeledPair copy;
            copy.pair = src.pair;
            copy.pair.gasf = augment(src.pair.gasf, r, s);
            copy.pair.gadf = augment(src.pair.gadf, r, s);
            copy.label = src.label;
            samples.push_back(std::move(copy));
        }
    }
    result.samples = std::move(samples);
    return result;
}

void write_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    const std::uint32_t version = 1, rank = static_cast<std::uint32_t>(t.rank());
    out.write("AVTF", 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
    for (std::size_t d : t.shape()) {
        const auto dim = static_cast<std::uint64_t>(d);
        out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    }
    std::vector<float> data(t.values().begin(), t.values().end());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw IoError("failed writing " + path);
}

Tensor read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    std::uint32_t version = 0, rank = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&rank), sizeof rank);
    if (!in || std::memcmp(magic, "AVTF", 4) != 0) throw CorruptionError(path + " is not a tensor file");
    if (version != 1) throw UnsupportedVersionError("tensor file version " + std::to_string(version));
    if (rank > 8) throw CorruptionError(path + ": implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
        std::uint64_t dim = 0;
        in.read(reinterpret_cast<char*>(&dim), sizeof dim);
        d = static_cast<std::size_t>(dim);
    }
    if (!in) throw CorruptionError(path + ": truncated header");
    std::vector<float> data(element_count(shape));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in || in.peek() != std::char_traits<char>::eof()) throw CorruptionError(path + ": payload size mismatch");
    return Tensor(std::move(shape), std::vector<double>(data.begin(), data.end()));
}

void write_png(const std::string& path, const Tensor& image) {
    if (image.rank() != 2) throw ShapeError("PNG export needs a matrix, got " + to_string(image.shape()));
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.dim(1));
    img.height = static_cast<png_uint_32>(image.dim(0));
    img.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> pixels(image.size());
    for (std::size_t i = 0; i < image.size(); ++i)
        pixels[i] = static_cast<png_byte>(std::lround((std::clamp(image[i], -1.0, 1.0) + 1.0) * 127.5));
    if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path + ": " + img.message);
}

}  // namespace availnet
