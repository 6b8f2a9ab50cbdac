#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "availnet/availability_model.hpp"
#include "availnet/duration_model.hpp"
#include "availnet/features.hpp"
#include "availnet/random.hpp"
#include "availnet/series_gaf.hpp"

namespace availnet {

// ---------------------------------------------------------------------------
// Ingestion

/// Column names for the four record roles. Plain key=value file:
///   service_id=taxi_id
///   lat=latitude
///   lon=longitude
///   timestamp=time
///   timestamp_format=%Y-%m-%d %H:%M:%S
///   delimiter=,        ("\t" or "tab" for tabs)
struct DatasetSchema {
    std::string service_id = "service_id";
    std::string lat = "lat";
    std::string lon = "lon";
    std::string timestamp = "timestamp";
    std::string timestamp_format = "%Y-%m-%dT%H:%M:%S";
    char delimiter = ',';

    void validate() const;
    static DatasetSchema parse(std::istream& in);
    static DatasetSchema load(const std::string& path);
};

/// Splits one delimited line. Fields may be wrapped in double quotes, with ""
/// for a literal quote.
std::vector<std::string> split_delimited(std::string_view line, char delimiter);

struct RejectedRow {
    std::size_t line = 0;  // 1-based, header is line 1
    std::string reason;
};

struct IngestResult {
    std::vector<TraceRecord> records;
    std::vector<RejectedRow> rejects;
    std::size_t rows = 0;  // data rows seen; rows == records.size() + rejects.size()
};

/// Reads a header plus data rows. Blank lines count as rejected rows.
IngestResult ingest(std::istream& in, const DatasetSchema& schema);
IngestResult ingest(const std::string& path, const DatasetSchema& schema);

/// line,reason
void write_rejects_csv(std::ostream& out, std::span<const RejectedRow> rejects);

struct FilterResult {
    std::vector<TraceRecord> records;
    std::map<std::string, std::size_t> removed;  // service id -> records dropped
    std::vector<std::string> warnings;
};

/// Drops services with fewer than `min_count` records, keeping record order.
FilterResult filter_rare_services(std::vector<TraceRecord> records, std::size_t min_count);

/// Removes exact repeats (same service, position and time), keeping the first.
std::vector<TraceRecord> deduplicate(std::span<const TraceRecord> records);

// ---------------------------------------------------------------------------
// Splits

template <class T>
struct DataSplit {
    std::vector<T> train;
    std::vector<T> validation;
    std::vector<T> test;
    std::vector<std::string> warnings;
};

/// Sizes of the train and validation parts; test takes the rest.
std::pair<std::size_t, std::size_t> split_sizes(std::size_t n, const SplitFractions& fractions);

/// Seeded shuffle, then cut into train / validation / test.
template <class T>
DataSplit<T> split(std::span<const T> items, const SplitFractions& fractions, std::uint64_t seed) {
    fractions.validate();
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto [n_train, n_val] = split_sizes(items.size(), fractions);
    DataSplit<T> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& part = i < n_train ? out.train : i < n_train + n_val ? out.validation : out.test;
        part.push_back(items[order[i]]);
    }
    if (out.train.empty()) out.warnings.push_back("training split is empty");
    if (out.validation.empty()) out.warnings.push_back("validation split is empty");
    if (out.test.empty()) out.warnings.push_back("test split is empty");
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline configuration

struct DataConfig {
    std::string trace;     // required
    std::string schema;    // empty: default column names
    std::string holidays;  // empty: no holidays
    std::size_t min_count = 50;
    bool deduplicate = false;
};

struct ClusteringConfig {
    std::size_t k = 0;  // 0 picks k with the gap statistic over [k_min, k_max]
    std::size_t k_min = 1;
    std::size_t k_max = 8;
    std::size_t references = 10;
    std::size_t max_points = 5000;  // gap statistic runs on a seeded subsample of this size
    std::size_t restarts = 5;
    std::size_t max_iter = 100;
};

struct SeriesConfig {
    std::int64_t granularity_s = 60;
    std::size_t window = 32;
    std::size_t stride = 1;
    std::size_t gamma = 3;
    GafOptions gaf;
    std::size_t png_count = 0;  // GAF pairs rendered to PNG by encode-gaf

    std::size_t image_size() const { return gaf.paa_size != 0 ? gaf.paa_size : window; }
};

/// No implicit randomness: every seed must be given in the config file.
struct SeedConfig {
    std::uint64_t clustering = 0;
    std::uint64_t split = 0;
    std::uint64_t stage1 = 0;
    std::uint64_t stage2 = 0;
};

struct PipelineConfig {
    std::filesystem::path base_dir;  // relative paths resolve against this
    DataConfig data;
    std::string output_dir = "out";
    ClusteringConfig clustering;
    EncodingOptions encoding;
    SplitFractions split;
    Stage1Config stage1;
    SeriesConfig series;
    Stage2Config stage2;
    SeedConfig seeds;

    void validate() const;
    std::filesystem::path resolve(const std::string& path) const;
    std::filesystem::path output(const std::string& name) const;
    /// Every value, defaults included.
    nlohmann::json resolved() const;
    /// SHA-256 of the compact resolved JSON.
    std::string hash() const;
};

/// Keys not listed in the documented schema are rejected.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::string& path);

// ---------------------------------------------------------------------------
// Intermediate files

struct FeatureRow {
    std::string split;  // train, validation or test
    std::string service_id;
    std::size_t cluster_id = 0;
    FeatureVector features;
};

/// split,service_id,cluster_id,lat,lon,time_of_day,day_of_week,is_weekday,is_holiday,month
void write_features_csv(std::ostream& out, std::span<const FeatureRow> rows);
std::vector<FeatureRow> read_features_csv(std::istream& in);

struct WindowRow {
    std::string service_id;
    std::size_t cluster_id = 0;
    Timestamp start{};  // time of the first step
    std::size_t window_start = 0;
    std::vector<std::uint8_t> values;
    std::vector<std::uint8_t> future;
};

/// Rolling windows of every (service, cluster) presence series. Each series
/// spans the first to the last record of its service.
std::vector<WindowRow> build_windows(std::span<const TraceRecord> records, const ClusterModel& clusters,
                                     const SeriesConfig& cfg);

/// The `cfg.window` steps ending right before `at`.
std::vector<double> window_before(std::span<const TraceRecord> records, const ClusterModel& clusters,
                                  const std::string& service_id, std::size_t cluster_id, Timestamp at,
                                  const SeriesConfig& cfg);

/// service_id,cluster_id,start,window_start,values,future (bit strings)
void write_windows_csv(std::ostream& out, std::span<const WindowRow> rows);
std::vector<WindowRow> read_windows_csv(std::istream& in);

/// gasf.avtf and gadf.avtf hold [N, T, T]; index.csv holds
/// service_id,cluster_id,window_start,label,class.
void write_gaf_dataset(const std::filesystem::path& dir, std::span<const LabeledPair> pairs);
std::vector<LabeledPair> read_gaf_dataset(const std::filesystem::path& dir, std::size_t gamma);

}  // namespace availnet
