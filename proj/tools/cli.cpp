#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "availnet/container.hpp"
#include "availnet/error.hpp"
#include "availnet/pipeline.hpp"

namespace availnet {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// One subcommand invocation: config, manifest bookkeeping and shared loaders.
class Run {
public:
    Run(std::string name, const std::string& config_path, std::ostream& out, std::ostream& err, bool verbose)
        : name_(std::move(name)), config_path_(config_path), out(out), err(err), verbose(verbose),
          cfg(load_pipeline_config(config_path)) {
        input(config_path);
    }

    void input(const fs::path& p) { inputs_.push_back(p); }
    fs::path output(const fs::path& p) {
        outputs_.push_back(p);
        return p;
    }
    void warn(const std::string& w) {
        warnings_.push_back(w);
        err << "warning: " << w << '\n';
    }
    void log(const std::string& line) {
        if (verbose) err << line << '\n';
    }

    std::vector<TraceRecord> load_records() {
        DatasetSchema schema;
        if (!cfg.data.schema.empty()) {
            const auto p = cfg.resolve(cfg.data.schema);
            schema = DatasetSchema::load(p.string());
            input(p);
        }
        const auto trace = cfg.resolve(cfg.data.trace);
        input(trace);
        auto ingested = ingest(trace.string(), schema);
        {
            std::ofstream rej(output(cfg.output("rejects.csv")));
            write_rejects_csv(rej, ingested.rejects);
        }
        auto records = std::move(ingested.records);
        const std::size_t valid = records.size();
        if (cfg.data.deduplicate) records = deduplicate(records);
        const std::size_t unique = records.size();
        auto filtered = filter_rare_services(std::move(records), cfg.data.min_count);
        for (const auto& w : filtered.warnings) warn(w);
        if (filtered.records.empty()) throw DataError("no records left after filtering rare services");
        results["ingest"] = {{"rows", ingested.rows},
                             {"valid", valid},
                             {"rejected", ingested.rejects.size()},
                             {"after_dedup", unique},
                             {"services_removed", filtered.removed.size()},
                             {"records", filtered.records.size()}};
        return std::move(filtered.records);
    }

    HolidayCalendar load_calendar() {
        if (cfg.data.holidays.empty()) return {};
        const auto p = cfg.resolve(cfg.data.holidays);
        input(p);
        return HolidayCalendar::load(p.string());
    }

    ModelContainer load_artifact(const fs::path& p, ArtifactType type) {
        input(p);
        return load_container(p.string(), type);
    }

    ClusterModel load_clusters() { return cluster_from_container(load_artifact(cfg.output("clusters.avm"), ArtifactType::cluster)); }

    void finish() {
        json manifest;
        manifest["subcommand"] = name_;
        manifest["config_path"] = relative(config_path_);
        manifest["config_hash"] = cfg.hash();
        manifest["config"] = cfg.resolved();
        manifest["seeds"] = manifest["config"]["seeds"];
        manifest["inputs"] = files(inputs_);
        manifest["outputs"] = files(outputs_);
        manifest["results"] = results;
        manifest["warnings"] = warnings_;
        const auto path = cfg.output("manifests") / (name_ + ".json");
        fs::create_directories(path.parent_path());
        std::ofstream(path) << manifest.dump(2) << '\n';
    }

    std::string name_;
    std::string config_path_;
    std::ostream& out;
    std::ostream& err;
    bool verbose = false;
    PipelineConfig cfg;
    json results = json::object();

private:
    json files(const std::vector<fs::path>& paths) const {
        json arr = json::array();
        std::set<fs::path> seen;
        for (const auto& p : paths) {
            if (!seen.insert(p).second) continue;
            arr.push_back({{"path", relative(p)}, {"sha256", file_sha256(p.string())}});
        }
        return arr;
    }

    // Paths relative to the config directory keep manifests portable.
    std::string relative(const fs::path& p) const {
        const auto rel = fs::absolute(p).lexically_relative(cfg.base_dir);
        return rel.empty() ? p.string() : rel.generic_string();
    }

    std::vector<fs::path> inputs_;
    std::vector<fs::path> outputs_;
    std::vector<std::string> warnings_;
};

std::vector<std::size_t> int_range(std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> v;
    for (std::size_t k = lo; k <= hi; ++k) v.push_back(k);
    return v;
}

KMeansOptions kmeans_options(const ClusteringConfig& c) {
    KMeansOptions o;
    o.restarts = c.restarts;
    o.max_iter = c.max_iter;
    return o;
}

// ---------------------------------------------------------------------------

void cmd_cluster(Run& run) {
    const auto& cc = run.cfg.clustering;
    const auto records = run.load_records();
    std::vector<GeoPoint> points;
    points.reserve(records.size());
    for (const auto& r : records) points.push_back(r.point);
    std::set<std::pair<double, double>> distinct;
    for (const auto& p : points) distinct.emplace(p.lat, p.lon);

    std::size_t k = cc.k;
    if (k == 0) {
        std::vector<GeoPoint> sample = points;
        if (sample.size() > cc.max_points) {
            Rng rng(derive_seed(run.cfg.seeds.clustering, 1));
            std::shuffle(sample.begin(), sample.end(), rng);
            sample.resize(cc.max_points);
            run.log("gap statistic on a subsample of " + std::to_string(cc.max_points) + " points");
        }
        std::set<std::pair<double, double>> sample_distinct;
        for (const auto& p : sample) sample_distinct.emplace(p.lat, p.lon);
        std::size_t k_max = cc.k_max;
        if (k_max > sample_distinct.size()) {
            k_max = sample_distinct.size();
            run.warn("k_max lowered to " + std::to_string(k_max) + ", the number of distinct points");
        }
        GapStatOptions opt;
        opt.references = cc.references;
        opt.kmeans = kmeans_options(cc);
        const auto ks = int_range(std::min(cc.k_min, k_max), k_max);
        const auto gap = gap_statistic(sample, ks, derive_seed(run.cfg.seeds.clustering, 2), opt);
        std::ofstream csv(run.output(run.cfg.output("gap.csv")));
        csv << "k,log_wk,ref_log_wk_mean,ref_log_wk_sd,gap\n" << std::setprecision(10);
        for (std::size_t i = 0; i < gap.k_values.size(); ++i)
            csv << gap.k_values[i] << ',' << gap.log_wk[i] << ',' << gap.ref_log_wk_mean[i] << ','
                << gap.ref_log_wk_sd[i] << ',' << gap.gap[i] << '\n';
        k = gap.chosen_k;
    } else if (k > distinct.size()) {
        throw ConfigError("clustering.k = " + std::to_string(k) + " exceeds the " + std::to_string(distinct.size()) +
                          " distinct points");
    }

    const auto fit = kmeans_haversine(points, k, derive_seed(run.cfg.seeds.clustering, 3), kmeans_options(cc));
    save_container(run.output(run.cfg.output("clusters.avm")).string(), to_container(fit.model));
    run.results["chosen_k"] = k;
    run.results["cost_km2"] = fit.cost;
    run.results["iterations"] = fit.iterations;
    run.out << "clusters: k=" << k << " cost=" << fit.cost << " km^2\n";
}

void cmd_featurize(Run& run) {
    const auto records = run.load_records();
    const auto clusters = run.load_clusters();
    const auto calendar = run.load_calendar();
    const auto parts = split<TraceRecord>(records, run.cfg.split, derive_seed(run.cfg.seeds.split, 1));
    for (const auto& w : parts.warnings) run.warn("record " + w);

    std::vector<FeatureRow> rows;
    rows.reserve(records.size());
    auto add = [&](const std::vector<TraceRecord>& part, const char* name) {
        for (const auto& r : part)
            rows.push_back({name, r.service_id, clusters.assign(r.point), extract_features(r, calendar)});
    };
    add(parts.train, "train");
    add(parts.validation, "validation");
    add(parts.test, "test");
    std::ofstream csv(run.output(run.cfg.output("features.csv")));
    write_features_csv(csv, rows);
    run.results["train"] = parts.train.size();
    run.results["validation"] = parts.validation.size();
    run.results["test"] = parts.test.size();
    run.out << "features: " << parts.train.size() << " train, " << parts.validation.size() << " validation, "
            << parts.test.size() << " test\n";
}

struct FeatureSplits {
    Vocabulary vocabulary;
    std::vector<TrainingInstance> train, validation, test;
};

FeatureSplits load_features(Run& run, const ClusterModel& clusters) {
    const auto path = run.cfg.output("features.csv");
    run.input(path);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string() + " (run featurize first)");
    const auto rows = read_features_csv(in);
    std::set<std::string> ids;
    for (const auto& r : rows) ids.insert(r.service_id);
    FeatureSplits s;
    s.vocabulary = Vocabulary({ids.begin(), ids.end()});
    for (const auto& r : rows) {
        if (r.cluster_id >= clusters.k())
            throw DataError("features file refers to cluster " + std::to_string(r.cluster_id) + " but the model has " +
                            std::to_string(clusters.k()));
        TrainingInstance inst{r.features, r.cluster_id, s.vocabulary.index_of(r.service_id)};
        (r.split == "train" ? s.train : r.split == "validation" ? s.validation : s.test).push_back(inst);
    }
    return s;
}

void cmd_train_availability(Run& run) {
    const auto clusters = run.load_clusters();
    const auto data = load_features(run, clusters);
    const auto result = train_stage1(data.train, data.validation, clusters, data.vocabulary, run.cfg.stage1,
                                     run.cfg.encoding, [&](const EpochMetrics& m) {
                                         run.log("epoch " + std::to_string(m.epoch) + " loss " +
                                                 std::to_string(m.train_loss) + " val " + std::to_string(m.val_loss));
                                     });
    save_container(run.output(run.cfg.output("stage1.avm")).string(), to_container(result.model));
    {
        std::ofstream csv(run.output(run.cfg.output("stage1_history.csv")));
        write_history_csv(csv, result.history);
    }
    const auto& last = result.history.back();
    run.results["epochs"] = result.history.size();
    run.results["stop_reason"] = result.stop_reason;
    run.results["train_error"] = last.train_error;
    run.results["val_error"] = last.val_error;
    if (!data.test.empty()) run.results["test_error"] = evaluate_stage1(result.model, data.test);
    run.out << "stage1: " << result.history.size() << " epochs (" << result.stop_reason
            << "), train error " << last.train_error << '\n';
}

void cmd_predict(Run& run, double lat, double lon, const std::string& time, const std::string& model_path,
                 std::size_t top) {
    const auto path = model_path.empty() ? run.cfg.output("stage1.avm") : fs::path(model_path);
    const auto model = stage1_from_container(run.load_artifact(path, ArtifactType::stage1));
    const auto calendar = run.load_calendar();
    const auto ranked = predict_availability(model, GeoPoint::make(lat, lon), parse_iso8601(time), calendar);
    const auto available = available_services(model, ranked);
    const std::set<std::string> avail(available.begin(), available.end());
    run.out << "service_id,probability,available\n" << std::setprecision(6);
    const std::size_t n = top == 0 ? ranked.size() : std::min(top, ranked.size());
    for (std::size_t i = 0; i < n; ++i)
        run.out << ranked[i].service_id << ',' << ranked[i].probability << ',' << avail.count(ranked[i].service_id)
                << '\n';
    run.results["top1"] = {{"service_id", ranked.front().service_id}, {"probability", ranked.front().probability}};
    run.results["available"] = available;
}

void cmd_build_series(Run& run) {
    const auto records = run.load_records();
    const auto clusters = run.load_clusters();
    const auto windows = build_windows(records, clusters, run.cfg.series);
    if (windows.empty())
        throw DataError("no window fits: every presence series is shorter than window + gamma steps");
    std::ofstream csv(run.output(run.cfg.output("windows.csv")));
    write_windows_csv(csv, windows);
    std::set<std::pair<std::string, std::size_t>> series;
    for (const auto& w : windows) series.emplace(w.service_id, w.cluster_id);
    run.results["windows"] = windows.size();
    run.results["series"] = series.size();
    run.out << "series: " << series.size() << " series, " << windows.size() << " windows\n";
}

void cmd_encode_gaf(Run& run) {
    const auto path = run.cfg.output("windows.csv");
    run.input(path);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string() + " (run build-series first)");
    const auto windows = read_windows_csv(in);
    if (windows.empty()) throw DataError("windows file has no rows");
    const auto& sc = run.cfg.series;
    std::vector<LabeledPair> pairs;
    pairs.reserve(windows.size());
    for (const auto& w : windows) {
        if (w.values.size() != sc.window || w.future.size() != sc.gamma)
            throw DataError("windows file does not match series.window / series.gamma");
        const std::vector<double> values(w.values.begin(), w.values.end());
        LabeledPair p;
        p.pair = encode_gaf_pair(values, sc.gaf);
        p.pair.service_id = w.service_id;
        p.pair.cluster_id = w.cluster_id;
        p.pair.window_start = w.window_start;
        p.label = make_label(w.future, run.cfg.stage2.max_gamma);
        pairs.push_back(std::move(p));
    }
    const auto dir = run.cfg.output("gaf");
    write_gaf_dataset(dir, pairs);
    for (const char* f : {"index.csv", "gasf.avtf", "gadf.avtf"}) run.output(dir / f);
    const std::size_t n_png = std::min(sc.png_count, pairs.size());
    if (n_png > 0) fs::create_directories(dir / "png");
    for (std::size_t i = 0; i < n_png; ++i) {
        const auto stem = std::to_string(i);
        write_png(run.output(dir / "png" / (stem + "_gasf.png")).string(), pairs[i].pair.gasf);
        write_png(run.output(dir / "png" / (stem + "_gadf.png")).string(), pairs[i].pair.gadf);
    }
    run.results["pairs"] = pairs.size();
    run.results["class_counts"] = class_counts(pairs, std::size_t{1} << sc.gamma);
    run.out << "gaf: " << pairs.size() << " pairs of " << sc.image_size() << "x" << sc.image_size() << '\n';
}

DataSplit<LabeledPair> load_gaf_splits(Run& run) {
    const auto dir = run.cfg.output("gaf");
    for (const char* f : {"index.csv", "gasf.avtf", "gadf.avtf"}) run.input(dir / f);
    const auto pairs = read_gaf_dataset(dir, run.cfg.series.gamma);
    return split<LabeledPair>(pairs, run.cfg.split, derive_seed(run.cfg.seeds.split, 2));
}

json evaluation_json(const Stage2Evaluation& ev) {
    return {{"error_rate", ev.error_rate}, {"bit_error", ev.bit_error}, {"count", ev.count}};
}

json series_json(const SeriesConfig& s) {
    return {{"granularity_s", s.granularity_s}, {"window", s.window}, {"gamma", s.gamma}, {"gaf", to_json(s.gaf)}};
}

SeriesConfig series_from_container(const ModelContainer& c) {
    try {
        const auto& j = c.config.at("extra").at("series");
        SeriesConfig s;
        s.granularity_s = j.at("granularity_s").get<std::int64_t>();
        s.window = j.at("window").get<std::size_t>();
        s.gamma = j.at("gamma").get<std::size_t>();
        s.gaf = gaf_options_from_json(j.at("gaf"));
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("stage2 container lacks its series settings: ") + e.what());
    }
}

void cmd_train_duration(Run& run) {
    const auto parts = load_gaf_splits(run);
    for (const auto& w : parts.warnings) run.warn("GAF " + w);
    if (parts.train.empty()) throw DataError("no GAF pairs in the training split");
    auto result = train_stage2(parts.train, parts.validation, run.cfg.stage2, [&](const EpochMetrics& m) {
        run.log("epoch " + std::to_string(m.epoch) + " lr " + std::to_string(m.learning_rate) + " loss " +
                std::to_string(m.train_loss) + " val " + std::to_string(m.val_loss));
    });
    for (const auto& w : result.warnings) run.warn(w);
    save_container(run.output(run.cfg.output("stage2.avm")).string(),
                   to_container(result.model, {{"series", series_json(run.cfg.series)}}));
    {
        std::ofstream csv(run.output(run.cfg.output("stage2_history.csv")));
        write_history_csv(csv, result.history);
    }
    const auto& last = result.history.back();
    run.results["epochs"] = result.history.size();
    run.results["stop_reason"] = result.stop_reason;
    run.results["class_counts"] = result.class_counts;
    run.results["train_error"] = last.train_error;
    run.results["val_error"] = last.val_error;
    if (!parts.test.empty()) run.results["test"] = evaluation_json(evaluate_stage2(result.model, parts.test));
    run.out << "stage2: " << result.history.size() << " epochs (" << result.stop_reason << "), train error "
            << last.train_error << '\n';
}

void cmd_forecast(Run& run, const std::string& service, std::size_t cluster, const std::string& at,
                  const std::string& model_path) {
    const auto path = model_path.empty() ? run.cfg.output("stage2.avm") : fs::path(model_path);
    const auto container = run.load_artifact(path, ArtifactType::stage2);
    const auto model = stage2_from_container(container);
    const auto series = series_from_container(container);
    const auto clusters = run.load_clusters();
    if (cluster >= clusters.k())
        throw ValidationError("cluster " + std::to_string(cluster) + " is out of range (k = " +
                              std::to_string(clusters.k()) + ")");
    const auto records = run.load_records();
    const Timestamp when = parse_iso8601(at);
    auto pair = encode_gaf_pair(window_before(records, clusters, service, cluster, when, series), series.gaf);
    pair.service_id = service;
    pair.cluster_id = cluster;
    const auto f = forecast(model, pair);
    run.out << "forecast," << label_string(f.label) << ',' << f.label.class_index << '\n';
    run.out << "class,bits,probability\n" << std::setprecision(6);
    for (std::size_t c = 0; c < f.probabilities.size(); ++c)
        run.out << c << ',' << label_string(decode_label(c, model.config.gamma)) << ',' << f.probabilities[c] << '\n';
    run.results["label"] = label_string(f.label);
    run.results["class"] = f.label.class_index;
    run.results["probabilities"] = f.probabilities;
}

void cmd_eval(Run& run) {
    json report = json::object();
    const auto s1_path = run.cfg.output("stage1.avm");
    if (fs::exists(s1_path)) {
        const auto model = stage1_from_container(run.load_artifact(s1_path, ArtifactType::stage1));
        const auto data = load_features(run, model.clusters);
        if (data.test.empty()) {
            run.warn("stage1 test split is empty");
        } else {
            // Labels must follow the model's vocabulary, not the file's.
            std::vector<TrainingInstance> test;
            for (auto inst : data.test) {
                const auto& id = data.vocabulary.id_at(inst.label);
                if (!model.vocabulary.contains(id)) continue;
                inst.label = model.vocabulary.index_of(id);
                test.push_back(inst);
            }
            report["stage1"] = {{"error_rate", evaluate_stage1(model, test)}, {"count", test.size()}};
        }
    }
    const auto s2_path = run.cfg.output("stage2.avm");
    if (fs::exists(s2_path)) {
        const auto model = stage2_from_container(run.load_artifact(s2_path, ArtifactType::stage2));
        const auto parts = load_gaf_splits(run);
        if (parts.test.empty()) run.warn("stage2 test split is empty");
        else report["stage2"] = evaluation_json(evaluate_stage2(model, parts.test));
    }
    if (report.empty()) throw DataError("nothing to evaluate: train a model first");
    std::ofstream(run.output(run.cfg.output("eval.json"))) << report.dump(2) << '\n';
    run.results = report;
    run.out << report.dump(2) << '\n';
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-stage crowdsourced service availability prediction", "availnet"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Log per-epoch progress to stderr");

    std::string config;
    auto add = [&](const char* name, const char* help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
        return sub;
    };
    auto* cluster = add("cluster", "Choose k with the gap statistic and cluster record locations");
    auto* featurize = add("featurize", "Split records and write stage-1 features");
    auto* train1 = add("train-availability", "Train the stage-1 availability model");
    auto* predict = add("predict", "Rank services available at a place and time");
    auto* build = add("build-series", "Build presence series and rolling windows");
    auto* encode = add("encode-gaf", "Encode windows as GASF/GADF image pairs");
    auto* train2 = add("train-duration", "Train the stage-2 duration model");
    auto* fc = add("forecast", "Forecast the next gamma presence steps of a service");
    auto* eval = add("eval", "Evaluate trained models on the test splits");

    double lat = 0, lon = 0;
    std::string time, model_path, service, at;
    std::size_t top = 0, cluster_id = 0;
    predict->add_option("--lat", lat, "Latitude in degrees")->required();
    predict->add_option("--lon", lon, "Longitude in degrees")->required();
    predict->add_option("--time", time, "ISO-8601 time")->required();
    predict->add_option("--model", model_path, "Stage-1 container (default <output_dir>/stage1.avm)");
    predict->add_option("--top", top, "Print only the first N services (0 = all)");
    fc->add_option("--service", service, "Service id")->required();
    fc->add_option("--cluster", cluster_id, "Cluster id")->required();
    fc->add_option("--at", at, "ISO-8601 time; the window ends right before it")->required();
    fc->add_option("--model", model_path, "Stage-2 container (default <output_dir>/stage2.avm)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        std::string what = one_line(e.what());
        for (int i = 1; i < argc; ++i) {
            const std::string arg = argv[i];
            if (arg.empty() || arg[0] == '-') continue;
            if (!app.get_subcommand_no_throw(arg)) what = "unknown subcommand '" + arg + "'";
            break;
        }
        err << "error: usage: " << what << '\n' << app.help();
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        Run run(sub->get_name(), config, out, err, verbose);
        fs::create_directories(run.cfg.output(""));
        if (sub == cluster) cmd_cluster(run);
        else if (sub == featurize) cmd_featurize(run);
        else if (sub == train1) cmd_train_availability(run);
        else if (sub == predict) cmd_predict(run, lat, lon, time, model_path, top);
        else if (sub == build) cmd_build_series(run);
        else if (sub == encode) cmd_encode_gaf(run);
        else if (sub == train2) cmd_train_duration(run);
        else if (sub == fc) cmd_forecast(run, service, cluster_id, at, model_path);
        else if (sub == eval) cmd_eval(run);
        run.finish();
        return 0;
    } catch (const Error& e) {
        err << "error: " << e.category() << ": " << one_line(e.what()) << '\n';
    } catch (const fs::filesystem_error& e) {
        err << "error: io: " << one_line(e.what()) << '\n';
    } catch (const std::exception& e) {
        err << "error: internal: " << one_line(e.what()) << '\n';
    }
    return 1;
}

}  // namespace availnet
