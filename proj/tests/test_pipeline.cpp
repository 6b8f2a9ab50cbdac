#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "availnet/container.hpp"
#include "availnet/error.hpp"
#include "availnet/pipeline.hpp"
#include "doctest.h"
#include "support/temp_dir.hpp"
#include "support/toy_data.hpp"

using namespace availnet;
using availnet::testing::TempDir;
using nlohmann::json;

namespace {

IngestResult ingest_text(const std::string& text, const DatasetSchema& schema = {}) {
    std::istringstream in(text);
    return ingest(in, schema);
}

std::vector<TraceRecord> numbered_records(std::size_t n) {
    std::vector<TraceRecord> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back({"s" + std::to_string(i), {0.0, 0.0}, parse_iso8601("2014-01-01T00:00:00") + std::chrono::seconds(i)});
    return out;
}

json minimal_config() {
    return json::parse(R"({
        "data": {"trace": "trace.csv"},
        "seeds": {"clustering": 1, "split": 2, "stage1": 3, "stage2": 4}
    })");
}

}  // namespace

TEST_CASE("ingest") {
    SUBCASE("well-formed rows") {
        const auto r = ingest_text(
            "service_id,lat,lon,timestamp\n"
            "a,41.1,-8.6,2014-04-07T08:00:00\n"
            "b,41.2,-8.5,2014-04-07T09:00:00\n"
            "a,41.1,-8.6,2014-04-07T10:30:15\n");
        REQUIRE(r.records.size() == 3);
        CHECK(r.rejects.empty());
        CHECK(r.rows == 3);
        CHECK(r.records[1].service_id == "b");
        CHECK(r.records[2].timestamp == parse_iso8601("2014-04-07T10:30:15"));
        CHECK(r.records[0].point == GeoPoint{41.1, -8.6});
    }
    SUBCASE("latitude out of range is rejected with its line number") {
        const auto r = ingest_text(
            "service_id,lat,lon,timestamp\n"
            "a,41.1,-8.6,2014-04-07T08:00:00\n"
            "a,91,-8.6,2014-04-07T08:00:00\n");
        REQUIRE(r.rejects.size() == 1);
        CHECK(r.rejects[0].line == 3);
        CHECK(r.rejects[0].reason == "latitude out of range");
    }
    SUBCASE("duplicates are kept; deduplicate is explicit") {
        const auto r = ingest_text(
            "service_id,lat,lon,timestamp\n"
            "a,1,2,2014-04-07T08:00:00\n"
            "a,1,2,2014-04-07T08:00:00\n");
        CHECK(r.records.size() == 2);
        CHECK(deduplicate(r.records).size() == 1);
    }
    SUBCASE("schema with renamed columns, tab delimiter and quoted fields") {
        std::istringstream schema_text(
            "# taxi trace\nservice_id=taxi\nlat=latitude\nlon=longitude\ntimestamp=time\n"
            "timestamp_format=%Y-%m-%d %H:%M:%S\ndelimiter=\\t\n");
        const auto schema = DatasetSchema::parse(schema_text);
        CHECK(schema.delimiter == '\t');
        CHECK(schema.timestamp_format == "%Y-%m-%d %H:%M:%S");
        const auto r = ingest_text("extra\ttime\tlongitude\tlatitude\ttaxi\n"
                                   "x\t2014-04-07 08:00:00\t-8.6\t41.1\t\"taxi \"\"7\"\"\"\n",
                                   schema);
        REQUIRE(r.records.size() == 1);
        CHECK(r.records[0].service_id == "taxi \"7\"");
        CHECK(r.records[0].point.lon == -8.6);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(ingest_text("service_id,lat,timestamp\na,1,2014-04-07T08:00:00\n"), DataError);
        CHECK_THROWS_AS(ingest_text("service_id,lat,lon,timestamp\na,x,1,2014-04-07T08:00:00\n"), DataError);
        CHECK_THROWS_AS(ingest_text(""), DataError);
        std::istringstream dup("service_id=a\nlat=a\n");
        CHECK_THROWS_AS(DatasetSchema::parse(dup), ConfigError);
        std::istringstream unknown("colour=red\n");
        CHECK_THROWS_AS(DatasetSchema::parse(unknown), ConfigError);
        CHECK_THROWS_AS(ingest("/nonexistent/trace.csv", DatasetSchema{}), IoError);
    }
    SUBCASE("valid plus rejected rows always equals input rows") {
        std::mt19937_64 rng(5);
        const std::vector<std::string> samples{
            "a,41.1,-8.6,2014-04-07T08:00:00", "b,-91,0,2014-04-07T08:00:00", "c,0,181,2014-04-07T08:00:00",
            "d,0,0,2014-13-07T08:00:00",       ",0,0,2014-04-07T08:00:00",    "e,0,0",
            "",                                "f,1e1,2,2014-04-07T08:00:00", "g,nan,2,2014-04-07T08:00:00"};
        for (int trial = 0; trial < 50; ++trial) {
            std::string text = "service_id,lat,lon,timestamp\na,1,1,2014-04-07T08:00:00\n";
            const std::size_t n = 1 + rng() % 30;
            for (std::size_t i = 0; i < n; ++i) text += samples[rng() % samples.size()] + "\n";
            const auto r = ingest_text(text);
            CHECK(r.rows == n + 1);
            CHECK(r.records.size() + r.rejects.size() == r.rows);
        }
    }
    SUBCASE("rejects report") {
        std::ostringstream out;
        const std::vector<RejectedRow> rows{{3, "latitude out of range"}, {5, "expected 4 fields, got 2"}};
        write_rejects_csv(out, rows);
        CHECK(out.str() == "line,reason\n3,latitude out of range\n5,\"expected 4 fields, got 2\"\n");
    }
}

TEST_CASE("filter_rare_services") {
    std::vector<TraceRecord> records;
    for (int i = 0; i < 5; ++i) records.push_back({"common", {0, 0}, {}});
    for (int i = 0; i < 2; ++i) records.push_back({"rare", {0, 0}, {}});

    const auto same = filter_rare_services(records, 1);
    CHECK(same.records.size() == 7);
    CHECK(same.removed.empty());

    const auto f = filter_rare_services(records, 3);
    CHECK(f.records.size() == 5);
    CHECK(f.removed == std::map<std::string, std::size_t>{{"rare", 2}});
    CHECK(f.warnings.empty());

    const auto none = filter_rare_services(records, 100);
    CHECK(none.records.empty());
    CHECK(none.warnings.size() == 1);
    CHECK_THROWS_AS(filter_rare_services(records, 0), ValidationError);
}

TEST_CASE("split") {
    const auto records = numbered_records(100);
    const auto s = split<TraceRecord>(records, {}, 9);
    CHECK(s.train.size() == 72);
    CHECK(s.validation.size() == 8);
    CHECK(s.test.size() == 20);
    CHECK(s.warnings.empty());

    std::multiset<std::string> seen;
    for (const auto* part : {&s.train, &s.validation, &s.test})
        for (const auto& r : *part) seen.insert(r.service_id);
    CHECK(seen.size() == 100);
    CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == 100);

    const auto again = split<TraceRecord>(records, {}, 9);
    for (std::size_t i = 0; i < s.train.size(); ++i) CHECK(again.train[i].service_id == s.train[i].service_id);
    const auto other = split<TraceRecord>(records, {}, 10);
    bool differs = false;
    for (std::size_t i = 0; i < s.train.size(); ++i) differs |= other.train[i].service_id != s.train[i].service_id;
    CHECK(differs);

    const auto all_train = split<TraceRecord>(records, {1.0, 0.0, 0.0}, 1);
    CHECK(all_train.train.size() == 100);
    CHECK(all_train.warnings.size() == 2);

    for (std::size_t n : {0u, 1u, 3u, 7u, 13u, 99u}) {
        const auto [tr, va] = split_sizes(n, {});
        CHECK(tr + va <= n);
    }
    CHECK_THROWS_AS(split<TraceRecord>(records, {0.5, 0.5, 0.5}, 1), ConfigError);
}

TEST_CASE("model container") {
    ModelContainer c;
    c.type = ArtifactType::stage1;
    c.config = {{"a", 1}, {"b", {1.5, -2.25e-300}}, {"text", "héllo"}};
    c.vocabulary = {"alpha", "beta", ""};
    c.tensors["w"] = Tensor({2, 3}, {1, -2, 3.5, 1e-310, -0.0, 6});
    c.tensors["scalar"] = Tensor({}, {42.0});
    c.tensors["empty"] = Tensor({0, 4});
    const std::string bytes = serialize_container(c);

    SUBCASE("round trip is exact") {
        const auto back = parse_container(bytes);
        CHECK(back == c);
        CHECK(serialize_container(back) == bytes);
        CHECK(std::signbit(back.tensors.at("w")[4]));
    }
    SUBCASE("any flipped byte is detected") {
        for (std::size_t pos = 8; pos < bytes.size(); pos += 7) {
            std::string bad = bytes;
            bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
            CHECK_THROWS_AS(parse_container(bad), CorruptionError);
        }
    }
    SUBCASE("version gate") {
        std::string future = bytes;
        future[4] = 2;
        CHECK_THROWS_AS(parse_container(future), UnsupportedVersionError);
    }
    SUBCASE("bad magic and truncation") {
        CHECK_THROWS_AS(parse_container("AVM"), CorruptionError);
        CHECK_THROWS_AS(parse_container("XXXX" + bytes.substr(4)), CorruptionError);
        CHECK_THROWS_AS(parse_container(bytes.substr(0, bytes.size() - 1)), CorruptionError);
        CHECK_THROWS_AS(parse_container(bytes.substr(0, 10)), CorruptionError);
    }
    SUBCASE("files and type tags") {
        TempDir dir("container");
        const auto path = (dir / "m.avm").string();
        save_container(path, c);
        CHECK(load_container(path) == c);
        CHECK(load_container(path, ArtifactType::stage1) == c);
        CHECK_THROWS_AS(load_container(path, ArtifactType::stage2), ArtifactTypeError);
        CHECK_THROWS_AS(load_container((dir / "missing.avm").string()), IoError);
        CHECK_THROWS_AS(cluster_from_container(c), ArtifactTypeError);
    }
}

TEST_CASE("models survive a container round trip") {
    SUBCASE("clusters") {
        const ClusterModel m({{41.15, -8.61}, {-33.9, 151.2}}, 6371.0088);
        const auto back = cluster_from_container(parse_container(serialize_container(to_container(m))));
        CHECK(back.centroids() == m.centroids());
        CHECK(back.earth_radius_km() == m.earth_radius_km());
    }
    SUBCASE("stage 1") {
        const auto toy = availnet::testing::make_separable_toy(60, 3);
        Stage1Config cfg;
        cfg.hidden = {{8, 0.01}, {4, 0.02}};
        cfg.max_epochs = 5;
        cfg.batch_size = 16;
        cfg.stop_tol = -INFINITY;
        const auto run = train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg);
        const auto bytes = serialize_container(to_container(run.model));
        const auto back = stage1_from_container(parse_container(bytes));
        CHECK(predict_probabilities(back, toy.instances) == predict_probabilities(run.model, toy.instances));
        CHECK(back.vocabulary.ids() == toy.vocabulary.ids());
        CHECK(back.config.stop_tol == -INFINITY);
        CHECK(serialize_container(to_container(back)) == bytes);
    }
    SUBCASE("stage 2") {
        const auto pairs = availnet::testing::make_gaf_toy(16, 2, 16, 4);
        Stage2Config cfg;
        cfg.gamma = 2;
        cfg.input_size = 16;
        cfg.channels = {16, 32, 64};
        cfg.width_factor = 0.25;
        cfg.max_epochs = 2;
        cfg.batch_size = 8;
        const auto run = train_stage2(pairs, {}, cfg);
        const json extra = {{"series", {{"window", 16}}}};
        const auto c = to_container(run.model, extra);
        const auto back_c = parse_container(serialize_container(c));
        CHECK(back_c.config.at("extra") == extra);
        const auto back = stage2_from_container(back_c);
        CHECK(predict_stage2(back, pairs) == predict_stage2(run.model, pairs));
        CHECK(back.config.channels == cfg.channels);
    }
}

TEST_CASE("pipeline config") {
    SUBCASE("defaults are resolved and hashed") {
        const auto cfg = pipeline_config_from_json(minimal_config(), "/data");
        CHECK(cfg.data.min_count == 50);
        CHECK(cfg.stage1.seed == 3);
        CHECK(cfg.stage2.seed == 4);
        CHECK(cfg.stage2.input_size == 32);
        CHECK(cfg.resolve("trace.csv") == std::filesystem::path("/data/trace.csv"));
        CHECK(cfg.resolve("/abs/t.csv") == std::filesystem::path("/abs/t.csv"));
        const auto r = cfg.resolved();
        CHECK(r.at("split").at("train") == 0.72);
        CHECK(r.at("stage2").at("scheduler").at("drop") == 10);
        CHECK(cfg.hash().size() == 64);
        CHECK(pipeline_config_from_json(r, "/elsewhere").hash() == cfg.hash());

        auto j = minimal_config();
        j["seeds"]["stage2"] = 5;
        CHECK(pipeline_config_from_json(j, "/data").hash() != cfg.hash());
    }
    SUBCASE("series settings flow into stage 2") {
        auto j = minimal_config();
        j["series"] = {{"window", 64}, {"gamma", 2}, {"gaf", {{"paa_size", 16}}}};
        j["stage2"] = {{"channels", {8, 16, 32}}};
        const auto cfg = pipeline_config_from_json(j, ".");
        CHECK(cfg.stage2.input_size == 16);
        CHECK(cfg.stage2.gamma == 2);
    }
    SUBCASE("errors") {
        auto no_seeds = minimal_config();
        no_seeds.erase("seeds");
        CHECK_THROWS_AS(pipeline_config_from_json(no_seeds, "."), ConfigError);
        auto partial = minimal_config();
        partial["seeds"].erase("stage1");
        CHECK_THROWS_AS(pipeline_config_from_json(partial, "."), ConfigError);
        auto unknown = minimal_config();
        unknown["stage1"] = {{"learning_rat", 0.1}};
        CHECK_THROWS_AS(pipeline_config_from_json(unknown, "."), ConfigError);
        auto inline_seed = minimal_config();
        inline_seed["stage2"] = {{"seed", 7}};
        CHECK_THROWS_AS(pipeline_config_from_json(inline_seed, "."), ConfigError);
        auto mismatch = minimal_config();
        mismatch["stage2"] = {{"input_size", 64}};
        CHECK_THROWS_AS(pipeline_config_from_json(mismatch, "."), ConfigError);
        auto negative = minimal_config();
        negative["data"]["min_count"] = -1;
        CHECK_THROWS_AS(pipeline_config_from_json(negative, "."), ConfigError);
        auto no_trace = minimal_config();
        no_trace["data"].erase("trace");
        CHECK_THROWS_AS(pipeline_config_from_json(no_trace, "."), ConfigError);
        CHECK_THROWS_AS(load_pipeline_config("/nonexistent/config.json"), IoError);
    }
}

TEST_CASE("intermediate files round trip") {
    SUBCASE("features") {
        FeatureVector f;
        f.lat = 41.123456789012345;
        f.lon = -8.6;
        f.time_of_day = 3600;
        f.day_of_week = 2;
        f.is_weekday = true;
        f.month = 4;
        const std::vector<FeatureRow> rows{{"train", "a,b", 1, f}, {"test", "c", 0, {}}};
        std::stringstream io;
        write_features_csv(io, rows);
        const auto back = read_features_csv(io);
        REQUIRE(back.size() == 2);
        CHECK(back[0].service_id == "a,b");
        CHECK(back[0].features == f);
        CHECK(back[1].split == "test");
        std::istringstream bad("wrong,header\n");
        CHECK_THROWS_AS(read_features_csv(bad), DataError);
    }
    SUBCASE("windows from a hand-made trace") {
        const ClusterModel clusters({{0.0, 0.0}, {10.0, 10.0}});
        const auto t0 = parse_iso8601("2014-04-07T00:00:00");
        std::vector<TraceRecord> records;
        // present at cluster 0 in hours 0, 2, 3 and 5; at cluster 1 in hour 4
        for (int h : {0, 2, 3, 5}) records.push_back({"s", {0.01, 0.0}, t0 + std::chrono::hours(h)});
        records.push_back({"s", {10.0, 10.0}, t0 + std::chrono::hours(4) + std::chrono::minutes(30)});
        SeriesConfig sc;
        sc.granularity_s = 3600;
        sc.window = 3;
        sc.stride = 1;
        sc.gamma = 2;
        const auto rows = build_windows(records, clusters, sc);
        // 6 steps, windows at 0..1 for each of the two clusters
        REQUIRE(rows.size() == 4);
        CHECK(rows[0].cluster_id == 0);
        CHECK(rows[0].values == std::vector<std::uint8_t>{1, 0, 1});
        CHECK(rows[0].future == std::vector<std::uint8_t>{1, 0});
        CHECK(rows[1].values == std::vector<std::uint8_t>{0, 1, 1});
        CHECK(rows[1].future == std::vector<std::uint8_t>{0, 1});
        CHECK(rows[1].start == t0 + std::chrono::hours(1));
        CHECK(rows[3].cluster_id == 1);
        CHECK(rows[3].future == std::vector<std::uint8_t>{1, 0});

        std::stringstream io;
        write_windows_csv(io, rows);
        const auto back = read_windows_csv(io);
        REQUIRE(back.size() == rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CHECK(back[i].values == rows[i].values);
            CHECK(back[i].future == rows[i].future);
            CHECK(back[i].start == rows[i].start);
            CHECK(back[i].window_start == rows[i].window_start);
        }

        const auto w = window_before(records, clusters, "s", 0, t0 + std::chrono::hours(4), sc);
        CHECK(w == std::vector<double>{0, 1, 1});
    }
    SUBCASE("GAF dataset") {
        TempDir dir("gaf");
        auto pairs = availnet::testing::make_gaf_toy(5, 3, 8, 2);
        pairs[1].pair.service_id = "svc";
        pairs[1].pair.cluster_id = 4;
        write_gaf_dataset(dir.path(), pairs);
        const auto back = read_gaf_dataset(dir.path(), 3);
        REQUIRE(back.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(back[i].label == pairs[i].label);
            CHECK(back[i].pair.window_start == pairs[i].pair.window_start);
            for (std::size_t j = 0; j < 64; ++j) {
                CHECK(back[i].pair.gasf[j] == doctest::Approx(pairs[i].pair.gasf[j]).epsilon(1e-6));
                CHECK(back[i].pair.gadf[j] == doctest::Approx(pairs[i].pair.gadf[j]).epsilon(1e-6));
            }
        }
        CHECK(back[1].pair.service_id == "svc");
        CHECK(back[1].pair.cluster_id == 4);
        CHECK_THROWS_AS(read_gaf_dataset(dir.path(), 2), DataError);
    }
}
