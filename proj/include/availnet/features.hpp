#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "availnet/geo_cluster.hpp"

namespace availnet {

// Civil time of the dataset, second precision. No timezone handling.
using Timestamp = std::chrono::sys_seconds;

/// strptime-style subset: %Y %m %d %H %M %S, %s (epoch seconds) and %%.
/// Everything else must match literally; trailing input is an error.
Timestamp parse_timestamp(std::string_view text, std::string_view format);

/// "YYYY-MM-DDTHH:MM:SS" (a space instead of 'T' and a trailing 'Z' accepted).
Timestamp parse_iso8601(std::string_view text);
std::string format_iso8601(Timestamp t);

std::chrono::sys_days parse_date(std::string_view text);

struct TraceRecord {
    std::string service_id;
    GeoPoint point;
    Timestamp timestamp;
};

class HolidayCalendar {
public:
    HolidayCalendar() = default;
    explicit HolidayCalendar(std::set<std::chrono::sys_days> dates) : dates_(std::move(dates)) {}

    /// One ISO-8601 date per line; blank lines and '#' comments skipped.
    static HolidayCalendar parse(std::istream& in);
    static HolidayCalendar load(const std::string& path);

    void add(std::chrono::sys_days d) { dates_.insert(d); }
    bool contains(std::chrono::sys_days d) const { return dates_.count(d) != 0; }
    std::size_t size() const noexcept { return dates_.size(); }
    const std::set<std::chrono::sys_days>& dates() const noexcept { return dates_; }

private:
    std::set<std::chrono::sys_days> dates_;
};

struct FeatureVector {
    double lat = 0.0;
    double lon = 0.0;
    std::int32_t time_of_day = 0;  // seconds since midnight
    int day_of_week = 0;           // 0 = Monday ... 6 = Sunday
    bool is_weekday = false;
    bool is_holiday = false;
    int month = 1;                 // 1..12, only encoded when enabled

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

FeatureVector extract_features(const TraceRecord& record, const HolidayCalendar& calendar);

/// Service ids in lexicographic order; the label of a service is its position.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> ids);

    static Vocabulary from_records(std::span<const TraceRecord> records);

    std::size_t size() const noexcept { return ids_.size(); }
    bool contains(std::string_view id) const;
    std::size_t index_of(std::string_view id) const;
    const std::string& id_at(std::size_t index) const;
    const std::vector<std::string>& ids() const noexcept { return ids_; }

private:
    std::vector<std::string> ids_;
};

struct TrainingInstance {
    FeatureVector features;
    std::size_t cluster_id = 0;
    std::size_t label = 0;
};

struct RecordIssue {
    std::size_t index = 0;
    std::string reason;
};

struct InstanceBuild {
    std::vector<TrainingInstance> instances;
    Vocabulary vocabulary;
    std::vector<RecordIssue> issues;
};

/// One instance per usable record. Vocabulary is built from the records.
InstanceBuild build_instances(std::span<const TraceRecord> records, const ClusterModel& model,
                              const HolidayCalendar& calendar);

/// Same, against a fixed vocabulary; records of unknown services become issues.
InstanceBuild build_instances(std::span<const TraceRecord> records, const ClusterModel& model,
                              const HolidayCalendar& calendar, const Vocabulary& vocabulary);

struct EncodingOptions {
    bool normalize_latlon = true;
    bool include_month = false;
};

struct EncodingConfig {
    bool normalize_latlon = true;
    bool include_month = false;
    double lat_mean = 0.0;
    double lat_scale = 1.0;
    double lon_mean = 0.0;
    double lon_scale = 1.0;
    std::size_t num_clusters = 1;

    /// 2 + 1 + 7 + 1 + 1 + k, plus 12 with the month one-hot.
    std::size_t width() const noexcept { return 12 + num_clusters + (include_month ? 12 : 0); }
};

/// Normalization statistics from the training split only.
EncodingConfig fit_encoding(std::span<const TrainingInstance> train, std::size_t num_clusters,
                            const EncodingOptions& options = {});

std::vector<double> encode_input(const FeatureVector& fv, std::size_t cluster_id, const EncodingConfig& cfg);

}  // namespace availnet
