#include "availnet/pipeline.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include "availnet/container.hpp"
#include "availnet/error.hpp"
#include "json_util.hpp"

namespace availnet {

using nlohmann::json;
using detail::ObjectReader;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return in;
}

bool parse_double(std::string_view text, double& out) {
    const auto s = trim(text);
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end && std::isfinite(out);
}

template <class T>
T parse_unsigned(std::string_view text, const std::string& what) {
    T v{};
    const auto s = trim(text);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw ValidationError("invalid " + what + " '" + std::string(text) + "'");
    return v;
}

std::vector<std::uint8_t> parse_bits(std::string_view text, const std::string& what) {
    std::vector<std::uint8_t> bits;
    for (char c : trim(text)) {
        if (c != '0' && c != '1') throw ValidationError(what + " must be a string of 0/1, got '" + std::string(text) + "'");
        bits.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    return bits;
}

std::string bit_string(std::span<const std::uint8_t> bits) {
    std::string s;
    for (auto b : bits) s.push_back(b ? '1' : '0');
    return s;
}

// Quotes a CSV field when it contains a delimiter, quote or newline.
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

// Reads a CSV whose header must match `expected` exactly.
std::vector<std::vector<std::string>> read_table(std::istream& in, const std::vector<std::string>& expected,
                                                 const std::string& what) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(what + " is empty");
    const auto header = split_delimited(trim(line), ',');
    if (header != expected) throw DataError(what + " has an unexpected header: " + line);
    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_delimited(line, ',');
        if (fields.size() != expected.size())
            throw DataError(what + " line " + std::to_string(lineno) + ": expected " + std::to_string(expected.size()) +
                            " fields, got " + std::to_string(fields.size()));
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// Ingestion

void DatasetSchema::validate() const {
    const std::set<std::string> columns{service_id, lat, lon, timestamp};
    if (service_id.empty() || lat.empty() || lon.empty() || timestamp.empty())
        throw ConfigError("schema: all four column roles must be mapped");
    if (columns.size() != 4) throw ConfigError("schema: service_id, lat, lon and timestamp must map to distinct columns");
    if (timestamp_format.empty()) throw ConfigError("schema: timestamp_format must not be empty");
    if (delimiter == '"' || delimiter == '\n' || delimiter == '\r') throw ConfigError("schema: invalid delimiter");
}

DatasetSchema DatasetSchema::parse(std::istream& in) {
    DatasetSchema s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("schema line " + std::to_string(lineno) + ": expected key=value");
        const auto key = trim(t.substr(0, eq));
        // values keep inner spaces; a format like "%Y-%m-%d %H:%M:%S" needs them
        const auto value = t.substr(eq + 1);
        if (key == "service_id") s.service_id = trim(value);
        else if (key == "lat") s.lat = trim(value);
        else if (key == "lon") s.lon = trim(value);
        else if (key == "timestamp") s.timestamp = trim(value);
        else if (key == "timestamp_format") s.timestamp_format = trim(value);
        else if (key == "delimiter") {
            if (value == "\\t" || value == "tab") s.delimiter = '\t';
            else if (value.size() == 1) s.delimiter = value[0];
            else throw ConfigError("schema: delimiter must be a single character, \\t or tab");
        } else {
            throw ConfigError("schema line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    s.validate();
    return s;
}

DatasetSchema DatasetSchema::load(const std::string& path) {
    auto in = open_input(path);
    return parse(in);
}

std::vector<std::string> split_delimited(std::string_view line, char delimiter) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delimiter) {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

IngestResult ingest(std::istream& in, const DatasetSchema& schema) {
    schema.validate();
    std::string line;
    if (!std::getline(in, line)) throw DataError("input has no header row");
    const auto header = split_delimited(line, schema.delimiter);
    auto column = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (trim(header[i]) == name) return i;
        throw DataError("mapped column '" + name + "' is missing from the header");
    };
    const std::size_t c_id = column(schema.service_id), c_lat = column(schema.lat), c_lon = column(schema.lon),
                      c_ts = column(schema.timestamp);

    IngestResult out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        ++out.rows;
        auto reject = [&](std::string reason) { out.rejects.push_back({lineno, std::move(reason)}); };
        if (trim(line).empty()) {
            reject("blank line");
            continue;
        }
        const auto f = split_delimited(line, schema.delimiter);
        if (f.size() != header.size()) {
            reject("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
            continue;
        }
        TraceRecord r;
        r.service_id = trim(f[c_id]);
        if (r.service_id.empty()) {
            reject("empty service id");
            continue;
        }
        double lat = 0, lon = 0;
        if (!parse_double(f[c_lat], lat)) {
            reject("invalid latitude '" + f[c_lat] + "'");
            continue;
        }
        if (!parse_double(f[c_lon], lon)) {
            reject("invalid longitude '" + f[c_lon] + "'");
            continue;
        }
        if (lat < -90.0 || lat > 90.0) {
            reject("latitude out of range");
            continue;
        }
        if (lon < -180.0 || lon > 180.0) {
            reject("longitude out of range");
            continue;
        }
        r.point = {lat, lon};
        try {
            r.timestamp = parse_timestamp(trim(f[c_ts]), schema.timestamp_format);
        } catch (const Error& e) {
            reject(std::string("invalid timestamp: ") + e.what());
            continue;
        }
        out.records.push_back(std::move(r));
    }
    if (out.records.empty())
        throw DataError("no valid rows (" + std::to_string(out.rows) + " rows, " + std::to_string(out.rejects.size()) +
                        " rejected)");
    return out;
}

IngestResult ingest(const std::string& path, const DatasetSchema& schema) {
    auto in = open_input(path);
    try {
        return ingest(in, schema);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

void write_rejects_csv(std::ostream& out, std::span<const RejectedRow> rejects) {
    out << "line,reason\n";
    for (const auto& r : rejects) out << r.line << ',' << csv_field(r.reason) << '\n';
}

FilterResult filter_rare_services(std::vector<TraceRecord> records, std::size_t min_count) {
    if (min_count == 0) throw ValidationError("min_count must be at least 1");
    std::map<std::string, std::size_t> counts;
    for (const auto& r : records) ++counts[r.service_id];
    FilterResult out;
    for (const auto& [id, n] : counts)
        if (n < min_count) out.removed[id] = n;
    std::erase_if(records, [&](const TraceRecord& r) { return out.removed.count(r.service_id) != 0; });
    out.records = std::move(records);
    if (out.records.empty() && !counts.empty())
        out.warnings.push_back("every service has fewer than " + std::to_string(min_count) + " records; nothing left");
    return out;
}

std::vector<TraceRecord> deduplicate(std::span<const TraceRecord> records) {
    std::set<std::tuple<std::string, double, double, Timestamp>> seen;
    std::vector<TraceRecord> out;
    for (const auto& r : records)
        if (seen.emplace(r.service_id, r.point.lat, r.point.lon, r.timestamp).second) out.push_back(r);
    return out;
}

std::pair<std::size_t, std::size_t> split_sizes(std::size_t n, const SplitFractions& fractions) {
    fractions.validate();
    const auto count = [&](double f) {
        return std::min(n, static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 0.5 + 1e-9)));
    };
    const std::size_t n_train = count(fractions.train);
    const std::size_t n_val = std::min(n - n_train, count(fractions.validation));
    return {n_train, n_val};
}

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
    if (data.trace.empty()) throw ConfigError("data.trace is required");
    if (data.min_count == 0) throw ConfigError("data.min_count must be at least 1");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    const auto& c = clustering;
    if (c.k == 0) {
        if (c.k_min == 0 || c.k_min > c.k_max) throw ConfigError("clustering: need 1 <= k_min <= k_max");
        if (c.references == 0) throw ConfigError("clustering.references must be at least 1");
        if (c.max_points < 2) throw ConfigError("clustering.max_points must be at least 2");
    }
    if (c.restarts == 0 || c.max_iter == 0) throw ConfigError("clustering: restarts and max_iter must be positive");
    split.validate();
    stage1.validate();
    if (series.granularity_s <= 0) throw ConfigError("series.granularity_s must be positive");
    if (series.window < 2) throw ConfigError("series.window must be at least 2");
    if (series.stride == 0) throw ConfigError("series.stride must be at least 1");
    if (series.gamma == 0 || series.gamma > stage2.max_gamma) throw ConfigError("series.gamma must lie in [1, max_gamma]");
    if (series.gaf.paa_size > series.window) throw ConfigError("series.gaf.paa_size cannot exceed series.window");
    stage2.validate();
    if (stage2.gamma != series.gamma) throw ConfigError("stage2.gamma must equal series.gamma");
    if (stage2.input_size != series.image_size())
        throw ConfigError("stage2.input_size must equal the GAF image size " + std::to_string(series.image_size()));
}

std::filesystem::path PipelineConfig::resolve(const std::string& path) const {
    const std::filesystem::path p(path);
    return p.is_absolute() ? p : base_dir / p;
}

std::filesystem::path PipelineConfig::output(const std::string& name) const { return resolve(output_dir) / name; }

json PipelineConfig::resolved() const {
    json j;
    j["data"] = {{"trace", data.trace},
                 {"schema", data.schema},
                 {"holidays", data.holidays},
                 {"min_count", data.min_count},
                 {"deduplicate", data.deduplicate}};
    j["output_dir"] = output_dir;
    j["clustering"] = {{"k", clustering.k},
                       {"k_min", clustering.k_min},
                       {"k_max", clustering.k_max},
                       {"references", clustering.references},
                       {"max_points", clustering.max_points},
                       {"restarts", clustering.restarts},
                       {"max_iter", clustering.max_iter}};
    j["encoding"] = {{"normalize_latlon", encoding.normalize_latlon}, {"include_month", encoding.include_month}};
    j["split"] = {{"train", split.train}, {"validation", split.validation}, {"test", split.test}};
    json s1 = to_json(stage1);
    s1.erase("seed");
    s1.erase("fractions");
    j["stage1"] = s1;
    j["series"] = {{"granularity_s", series.granularity_s},
                   {"window", series.window},
                   {"stride", series.stride},
                   {"gamma", series.gamma},
                   {"gaf", to_json(series.gaf)},
                   {"png_count", series.png_count}};
    json s2 = to_json(stage2);
    s2.erase("seed");
    j["stage2"] = s2;
    j["seeds"] = {{"clustering", seeds.clustering},
                  {"split", seeds.split},
                  {"stage1", seeds.stage1},
                  {"stage2", seeds.stage2}};
    return j;
}

std::string PipelineConfig::hash() const { return sha256_hex(resolved().dump()); }

PipelineConfig pipeline_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    PipelineConfig cfg;
    cfg.base_dir = base_dir;
    ObjectReader r(j, "config");

    const auto* data = r.sub("data");
    if (!data) throw ConfigError("missing required section config.data");
    {
        ObjectReader d(*data, "config.data");
        d.require("trace", cfg.data.trace);
        d.read("schema", cfg.data.schema);
        d.read("holidays", cfg.data.holidays);
        d.read("min_count", cfg.data.min_count);
        d.read("deduplicate", cfg.data.deduplicate);
        d.finish();
    }
    r.read("output_dir", cfg.output_dir);

    if (const auto* c = r.sub("clustering")) {
        ObjectReader cr(*c, "config.clustering");
        cr.read("k", cfg.clustering.k);
        cr.read("k_min", cfg.clustering.k_min);
        cr.read("k_max", cfg.clustering.k_max);
        cr.read("references", cfg.clustering.references);
        cr.read("max_points", cfg.clustering.max_points);
        cr.read("restarts", cfg.clustering.restarts);
        cr.read("max_iter", cfg.clustering.max_iter);
        cr.finish();
    }
    if (const auto* e = r.sub("encoding")) {
        ObjectReader er(*e, "config.encoding");
        er.read("normalize_latlon", cfg.encoding.normalize_latlon);
        er.read("include_month", cfg.encoding.include_month);
        er.finish();
    }
    if (const auto* s = r.sub("split")) {
        ObjectReader sr(*s, "config.split");
        sr.read("train", cfg.split.train);
        sr.read("validation", cfg.split.validation);
        sr.read("test", cfg.split.test);
        sr.finish();
    }

    const auto* seeds = r.sub("seeds");
    if (!seeds) throw ConfigError("missing required section config.seeds (clustering, split, stage1, stage2)");
    {
        ObjectReader sr(*seeds, "config.seeds");
        sr.require("clustering", cfg.seeds.clustering);
        sr.require("split", cfg.seeds.split);
        sr.require("stage1", cfg.seeds.stage1);
        sr.require("stage2", cfg.seeds.stage2);
        sr.finish();
    }

    if (const auto* s1 = r.sub("stage1")) {
        if (s1->is_object() && (s1->contains("seed") || s1->contains("fractions")))
            throw ConfigError("config.stage1: seeds belong in config.seeds and fractions in config.split");
        cfg.stage1 = stage1_config_from_json(*s1, cfg.stage1);
    }
    cfg.stage1.seed = cfg.seeds.stage1;
    cfg.stage1.fractions = cfg.split;

    if (const auto* s = r.sub("series")) {
        ObjectReader sr(*s, "config.series");
        sr.read("granularity_s", cfg.series.granularity_s);
        sr.read("window", cfg.series.window);
        sr.read("stride", cfg.series.stride);
        sr.read("gamma", cfg.series.gamma);
        if (const auto* g = sr.sub("gaf")) cfg.series.gaf = gaf_options_from_json(*g, cfg.series.gaf);
        sr.read("png_count", cfg.series.png_count);
        sr.finish();
    }

    cfg.stage2.gamma = cfg.series.gamma;
    cfg.stage2.input_size = cfg.series.image_size();
    if (const auto* s2 = r.sub("stage2")) {
        if (s2->is_object() && s2->contains("seed")) throw ConfigError("config.stage2: seeds belong in config.seeds");
        cfg.stage2 = stage2_config_from_json(*s2, cfg.stage2);
    }
    cfg.stage2.seed = cfg.seeds.stage2;
    r.finish();
    cfg.validate();
    return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    auto in = open_input(path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + " is not valid JSON: " + e.what());
    }
    const auto base = std::filesystem::absolute(path).parent_path();
    return pipeline_config_from_json(j, base);
}

// ---------------------------------------------------------------------------
// Intermediate files

namespace {

const std::vector<std::string> kFeatureHeader{"split",     "service_id", "cluster_id", "lat",        "lon",
                                              "time_of_day", "day_of_week", "is_weekday", "is_holiday", "month"};
const std::vector<std::string> kWindowHeader{"service_id", "cluster_id", "start", "window_start", "values", "future"};
const std::vector<std::string> kIndexHeader{"service_id", "cluster_id", "window_start", "label", "class"};

}  // namespace

void write_features_csv(std::ostream& out, std::span<const FeatureRow> rows) {
    out << "split,service_id,cluster_id,lat,lon,time_of_day,day_of_week,is_weekday,is_holiday,month\n";
    const auto precision = out.precision(17);
    for (const auto& r : rows) {
        const auto& f = r.features;
        out << r.split << ',' << csv_field(r.service_id) << ',' << r.cluster_id << ',' << f.lat << ',' << f.lon << ','
            << f.time_of_day << ',' << f.day_of_week << ',' << int{f.is_weekday} << ',' << int{f.is_holiday} << ','
            << f.month << '\n';
    }
    out.precision(precision);
}

std::vector<FeatureRow> read_features_csv(std::istream& in) {
    std::vector<FeatureRow> rows;
    for (const auto& f : read_table(in, kFeatureHeader, "features file")) {
        FeatureRow r;
        r.split = f[0];
        if (r.split != "train" && r.split != "validation" && r.split != "test")
            throw DataError("features file: unknown split '" + r.split + "'");
        r.service_id = f[1];
        r.cluster_id = parse_unsigned<std::size_t>(f[2], "cluster id");
        if (!parse_double(f[3], r.features.lat) || !parse_double(f[4], r.features.lon))
            throw DataError("features file: invalid coordinates");
        r.features.time_of_day = static_cast<std::int32_t>(parse_unsigned<std::uint32_t>(f[5], "time of day"));
        r.features.day_of_week = static_cast<int>(parse_unsigned<unsigned>(f[6], "day of week"));
        r.features.is_weekday = parse_unsigned<unsigned>(f[7], "weekday flag") != 0;
        r.features.is_holiday = parse_unsigned<unsigned>(f[8], "holiday flag") != 0;
        r.features.month = static_cast<int>(parse_unsigned<unsigned>(f[9], "month"));
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<WindowRow> build_windows(std::span<const TraceRecord> records, const ClusterModel& clusters,
                                     const SeriesConfig& cfg) {
    const std::chrono::seconds g{cfg.granularity_s};
    std::map<std::string, std::vector<TraceRecord>> by_service;
    for (const auto& r : records) by_service[r.service_id].push_back(r);

    std::vector<WindowRow> out;
    for (const auto& [id, recs] : by_service) {
        std::set<std::size_t> visited;
        for (const auto& r : recs) visited.insert(clusters.assign(r.point));
        for (std::size_t c : visited) {
            const auto series = build_presence_series(recs, clusters, id, c, g);
            for (auto& w : roll_windows(series.values, cfg.window, cfg.stride, cfg.gamma)) {
                WindowRow row;
                row.service_id = id;
                row.cluster_id = c;
                row.start = series.start + g * static_cast<std::int64_t>(w.start);
                row.window_start = w.start;
                row.values.reserve(w.values.size());
                for (double v : w.values) row.values.push_back(v != 0.0);
                row.future = std::move(w.future);
                out.push_back(std::move(row));
            }
        }
    }
    return out;
}

std::vector<double> window_before(std::span<const TraceRecord> records, const ClusterModel& clusters,
                                  const std::string& service_id, std::size_t cluster_id, Timestamp at,
                                  const SeriesConfig& cfg) {
    const std::chrono::seconds g{cfg.granularity_s};
    const Timestamp start = at - g * static_cast<std::int64_t>(cfg.window);
    const auto series = build_presence_series(records, clusters, service_id, cluster_id, g, start, cfg.window);
    return {series.values.begin(), series.values.end()};
}

void write_windows_csv(std::ostream& out, std::span<const WindowRow> rows) {
    out << "service_id,cluster_id,start,window_start,values,future\n";
    for (const auto& r : rows)
        out << csv_field(r.service_id) << ',' << r.cluster_id << ',' << format_iso8601(r.start) << ','
            << r.window_start << ',' << bit_string(r.values) << ',' << bit_string(r.future) << '\n';
}

std::vector<WindowRow> read_windows_csv(std::istream& in) {
    std::vector<WindowRow> rows;
    for (const auto& f : read_table(in, kWindowHeader, "windows file")) {
        WindowRow r;
        r.service_id = f[0];
        r.cluster_id = parse_unsigned<std::size_t>(f[1], "cluster id");
        r.start = parse_iso8601(f[2]);
        r.window_start = parse_unsigned<std::size_t>(f[3], "window start");
        r.values = parse_bits(f[4], "values");
        r.future = parse_bits(f[5], "future");
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_gaf_dataset(const std::filesystem::path& dir, std::span<const LabeledPair> pairs) {
    if (pairs.empty()) throw DataError("no GAF pairs to write");
    std::filesystem::create_directories(dir);
    const std::size_t t = pairs.front().pair.size(), area = t * t;
    Tensor gasf({pairs.size(), t, t}), gadf({pairs.size(), t, t});
    std::ofstream index(dir / "index.csv");
    if (!index) throw IoError("cannot write " + (dir / "index.csv").string());
    index << "service_id,cluster_id,window_start,label,class\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (p.pair.size() != t) throw ShapeError("GAF pairs in one dataset must share a size");
        std::copy_n(p.pair.gasf.data(), area, gasf.data() + i * area);
        std::copy_n(p.pair.gadf.data(), area, gadf.data() + i * area);
        index << csv_field(p.pair.service_id) << ',' << p.pair.cluster_id << ',' << p.pair.window_start << ','
              << label_string(p.label) << ',' << p.label.class_index << '\n';
    }
    write_tensor_file((dir / "gasf.avtf").string(), gasf);
    write_tensor_file((dir / "gadf.avtf").string(), gadf);
}

std::vector<LabeledPair> read_gaf_dataset(const std::filesystem::path& dir, std::size_t gamma) {
    auto in = open_input((dir / "index.csv").string());
    const auto rows = read_table(in, kIndexHeader, "GAF index");
    const Tensor gasf = read_tensor_file((dir / "gasf.avtf").string());
    const Tensor gadf = read_tensor_file((dir / "gadf.avtf").string());
    if (gasf.rank() != 3 || gasf.shape() != gadf.shape() || gasf.dim(0) != rows.size() || gasf.dim(1) != gasf.dim(2))
        throw DataError("GAF dataset tensors do not match the index (" + to_string(gasf.shape()) + ", " +
                        to_string(gadf.shape()) + ", " + std::to_string(rows.size()) + " rows)");
    const std::size_t t = gasf.dim(1), area = t * t;
    std::vector<LabeledPair> pairs;
    pairs.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& f = rows[i];
        LabeledPair p;
        p.pair.service_id = f[0];
        p.pair.cluster_id = parse_unsigned<std::size_t>(f[1], "cluster id");
        p.pair.window_start = parse_unsigned<std::size_t>(f[2], "window start");
        p.label = make_label(parse_bits(f[3], "label"), std::max(gamma, kDefaultMaxGamma));
        if (p.label.gamma() != gamma)
            throw DataError("GAF dataset labels have " + std::to_string(p.label.gamma()) + " steps, config expects " +
                            std::to_string(gamma));
        if (p.label.class_index != parse_unsigned<std::size_t>(f[4], "class"))
            throw DataError("GAF index row " + std::to_string(i + 2) + ": class does not match the label bits");
        p.pair.gasf = Tensor({t, t}, std::vector<double>(gasf.data() + i * area, gasf.data() + (i + 1) * area));
        p.pair.gadf = Tensor({t, t}, std::vector<double>(gadf.data() + i * area, gadf.data() + (i + 1) * area));
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace availnet
