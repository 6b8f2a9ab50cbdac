#include "availnet/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>

#include "availnet/error.hpp"

namespace availnet {

namespace {

using namespace std::chrono;

// Up to max_width digits; a leading minus is only allowed for wide fields.
bool read_int(std::string_view text, std::size_t& pos, std::size_t max_width, long long& out) {
    std::size_t end = pos;
    bool negative = false;
    if (end < text.size() && text[end] == '-' && max_width > 4) {
        negative = true;
        ++end;
    }
    const std::size_t digits_start = end;
    while (end < text.size() && end - digits_start < max_width && text[end] >= '0' && text[end] <= '9') ++end;
    if (end == digits_start) return false;
    long long v = 0;
    auto [p, ec] = std::from_chars(text.data() + digits_start, text.data() + end, v);
    if (ec != std::errc{} || p != text.data() + end) return false;
    out = negative ? -v : v;
    pos = end;
    return true;
}

[[noreturn]] void bad_time(std::string_view text, std::string_view why) {
    throw ValidationError("unparseable timestamp '" + std::string(text) + "': " + std::string(why));
}

Timestamp compose(std::string_view text, long long y, long long mo, long long d, long long h, long long mi,
                  long long s) {
    if (mo < 1 || mo > 12) bad_time(text, "month out of range");
    if (h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59) bad_time(text, "time of day out of range");
    const year_month_day ymd{year{static_cast<int>(y)}, month{static_cast<unsigned>(mo)},
                             day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) bad_time(text, "invalid calendar date");
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
}

}  // namespace

Timestamp parse_timestamp(std::string_view text, std::string_view format) {
    long long y = 1970, mo = 1, d = 1, h = 0, mi = 0, s = 0;
    std::optional<long long> epoch;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < format.size(); ++f) {
        if (format[f] != '%') {
            if (pos >= text.size() || text[pos] != format[f]) bad_time(text, "literal mismatch");
            ++pos;
            continue;
        }
        if (++f >= format.size()) throw ValidationError("dangling '%' in timestamp format");
        long long v = 0;
        bool ok = true;
        switch (format[f]) {
            case 'Y': ok = read_int(text, pos, 4, v); y = v; break;
            case 'm': ok = read_int(text, pos, 2, v); mo = v; break;
            case 'd': ok = read_int(text, pos, 2, v); d = v; break;
            case 'H': ok = read_int(text, pos, 2, v); h = v; break;
            case 'M': ok = read_int(text, pos, 2, v); mi = v; break;
            case 'S': ok = read_int(text, pos, 2, v); s = v; break;
            case 's': ok = read_int(text, pos, 19, v); epoch = v; break;
            case '%':
                ok = pos < text.size() && text[pos] == '%';
                ++pos;
                break;
            default: throw ValidationError(std::string("unsupported timestamp directive %") + format[f]);
        }
        if (!ok) bad_time(text, "expected a number");
    }
    if (pos != text.size()) bad_time(text, "trailing characters");
    if (epoch) return Timestamp{seconds{*epoch}};
    return compose(text, y, mo, d, h, mi, s);
}

Timestamp parse_iso8601(std::string_view text) {
    std::string_view t = text;
    if (!t.empty() && t.back() == 'Z') t.remove_suffix(1);
    if (t.size() == 19 && t[10] == ' ') return parse_timestamp(t, "%Y-%m-%d %H:%M:%S");
    return parse_timestamp(t, "%Y-%m-%dT%H:%M:%S");
}

std::string format_iso8601(Timestamp t) {
    const auto day_start = floor<days>(t);
    const year_month_day ymd{day_start};
    const hh_mm_ss<seconds> tod{t - day_start};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(tod.hours().count()), static_cast<long>(tod.minutes().count()),
                  static_cast<long>(tod.seconds().count()));
    return buf;
}

sys_days parse_date(std::string_view text) {
    long long y = 0, mo = 0, d = 0;
    std::size_t pos = 0;
    auto expect_dash = [&] {
        if (pos >= text.size() || text[pos] != '-') throw ValidationError("bad date '" + std::string(text) + "'");
        ++pos;
    };
    if (!read_int(text, pos, 4, y)) throw ValidationError("bad date '" + std::string(text) + "'");
    expect_dash();
    if (!read_int(text, pos, 2, mo)) throw ValidationError("bad date '" + std::string(text) + "'");
    expect_dash();
    if (!read_int(text, pos, 2, d) || pos != text.size()) throw ValidationError("bad date '" + std::string(text) + "'");
    return floor<days>(compose(text, y, mo, d, 0, 0, 0));
}

HolidayCalendar HolidayCalendar::parse(std::istream& in) {
    HolidayCalendar cal;
    std::string line;
    while (std::getline(in, line)) {
        auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#') continue;
        auto e = line.find_last_not_of(" \t\r");
        cal.add(parse_date(std::string_view(line).substr(b, e - b + 1)));
    }
    return cal;
}

HolidayCalendar HolidayCalendar::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open holiday calendar " + path);
    return parse(in);
}

FeatureVector extract_features(const TraceRecord& record, const HolidayCalendar& calendar) {
    if (record.service_id.empty()) throw ValidationError("record has an empty service id");
    validate(record.point);
    const auto day_start = floor<days>(record.timestamp);
    const weekday wd{day_start};
    FeatureVector fv;
    fv.lat = record.point.lat;
    fv.lon = record.point.lon;
    fv.time_of_day = static_cast<std::int32_t>((record.timestamp - day_start).count());
    fv.day_of_week = static_cast<int>(wd.iso_encoding()) - 1;
    fv.is_weekday = fv.day_of_week < 5;
    fv.is_holiday = calendar.contains(day_start);
    fv.month = static_cast<int>(static_cast<unsigned>(year_month_day{day_start}.month()));
    return fv;
}

Vocabulary::Vocabulary(std::vector<std::string> ids) : ids_(std::move(ids)) {
    std::sort(ids_.begin(), ids_.end());
    ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
    for (const auto& id : ids_)
        if (id.empty()) throw ValidationError("vocabulary contains an empty service id");
}

Vocabulary Vocabulary::from_records(std::span<const TraceRecord> records) {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records)
        if (!r.service_id.empty()) ids.push_back(r.service_id);
    return Vocabulary(std::move(ids));
}

bool Vocabulary::contains(std::string_view id) const {
    return std::binary_search(ids_.begin(), ids_.end(), id);
}

std::size_t Vocabulary::index_of(std::string_view id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) throw ValidationError("unknown service id '" + std::string(id) + "'");
    return static_cast<std::size_t>(it - ids_.begin());
}

const std::string& Vocabulary::id_at(std::size_t index) const {
    if (index >= ids_.size()) throw ValidationError("service label out of range");
    return ids_[index];
}

InstanceBuild build_instances(std::span<const TraceRecord> records, const ClusterModel& model,
                              const HolidayCalendar& calendar) {
    return build_instances(records, model, calendar, Vocabulary::from_records(records));
}

InstanceBuild build_instances(std::span<const TraceRecord> records, const ClusterModel& model,
                              const HolidayCalendar& calendar, const Vocabulary& vocabulary) {
    InstanceBuild out;
    out.vocabulary = vocabulary;
    out.instances.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        try {
            TrainingInstance inst;
            inst.features = extract_features(records[i], calendar);
            inst.cluster_id = model.assign(records[i].point);
            inst.label = vocabulary.index_of(records[i].service_id);
            out.instances.push_back(inst);
        } catch (const Error& e) {
            out.issues.push_back({i, e.what()});
        }
    }
    return out;
}

EncodingConfig fit_encoding(std::span<const TrainingInstance> train, std::size_t num_clusters,
                            const EncodingOptions& options) {
    if (num_clusters == 0) throw ValidationError("encoding needs at least one cluster");
    EncodingConfig cfg;
    cfg.normalize_latlon = options.normalize_latlon;
    cfg.include_month = options.include_month;
    cfg.num_clusters = num_clusters;
    if (!options.normalize_latlon || train.empty()) return cfg;

    const double n = static_cast<double>(train.size());
    double lat_sum = 0.0, lon_sum = 0.0;
    for (const auto& t : train) {
        lat_sum += t.features.lat;
        lon_sum += t.features.lon;
    }
    cfg.lat_mean = lat_sum / n;
    cfg.lon_mean = lon_sum / n;
    double lat_var = 0.0, lon_var = 0.0;
    for (const auto& t : train) {
        lat_var += (t.features.lat - cfg.lat_mean) * (t.features.lat - cfg.lat_mean);
        lon_var += (t.features.lon - cfg.lon_mean) * (t.features.lon - cfg.lon_mean);
    }
    const double lat_sd = std::sqrt(lat_var / n);
    const double lon_sd = std::sqrt(lon_var / n);
    cfg.lat_scale = lat_sd > 0.0 ? lat_sd : 1.0;
    cfg.lon_scale = lon_sd > 0.0 ? lon_sd : 1.0;
    return cfg;
}

std::vector<double> encode_input(const FeatureVector& fv, std::size_t cluster_id, const EncodingConfig& cfg) {
    if (cluster_id >= cfg.num_clusters)
        throw ValidationError("cluster id " + std::to_string(cluster_id) + " out of range for k = " +
                              std::to_string(cfg.num_clusters));
    if (fv.day_of_week < 0 || fv.day_of_week > 6) throw ValidationError("day of week out of range");
    if (fv.time_of_day < 0 || fv.time_of_day >= 86400) throw ValidationError("time of day out of range");
    if (cfg.include_month && (fv.month < 1 || fv.month > 12)) throw ValidationError("month out of range");

    std::vector<double> v;
    v.reserve(cfg.width());
    v.push_back((fv.lat - cfg.lat_mean) / cfg.lat_scale);
    v.push_back((fv.lon - cfg.lon_mean) / cfg.lon_scale);
    v.push_back(static_cast<double>(fv.time_of_day) / 86400.0);
    for (int d = 0; d < 7; ++d) v.push_back(d == fv.day_of_week ? 1.0 : 0.0);
    v.push_back(fv.is_weekday ? 1.0 : 0.0);
    v.push_back(fv.is_holiday ? 1.0 : 0.0);
    for (std::size_t c = 0; c < cfg.num_clusters; ++c) v.push_back(c == cluster_id ? 1.0 : 0.0);
    if (cfg.include_month)
        for (int m = 1; m <= 12; ++m) v.push_back(m == fv.month ? 1.0 : 0.0);
    return v;
}

}  // namespace availnet
