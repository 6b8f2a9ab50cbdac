// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "availnet/availability_model.hpp"
#include "availnet/container.hpp"
#include "availnet/duration_model.hpp"
#include "availnet/layers.hpp"
#include "availnet/network.hpp"
#include "availnet/optim.hpp"
#include "availnet/series_gaf.hpp"
#include "support/cli_chain.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "support/toy_data.hpp"

using namespace availnet;
using namespace availnet::testing;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) detail = what;
        pass = pass && ok;
    }
};

struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = u(rng);
    return t;
}

Outcome haversine_oracle() {
    Outcome o;
    const double r = kEarthRadiusKm;
    const double pi = std::numbers::pi;
    const auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
    o.require(rel(haversine({0, 0}, {0, 180}, r), pi * r) < 1e-9, "antipodal on the equator");
    o.require(rel(haversine({90, 0}, {-90, 0}, r), pi * r) < 1e-9, "antipodal through the poles");
    o.require(rel(haversine({35, 20}, {-35, -160}, r), pi * r) < 1e-9, "antipodal general");
    o.require(rel(haversine({0, 0}, {0, 90}, r), pi * r / 2) < 1e-9, "quarter circle on the equator");
    o.require(rel(haversine({0, 30}, {90, 0}, r), pi * r / 2) < 1e-9, "equator to pole");
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
    for (int i = 0; i < 1000; ++i) {
        const GeoPoint a{lat(rng), lon(rng)}, b{lat(rng), lon(rng)};
        o.require(haversine(a, b) == haversine(b, a), "symmetry");
        o.require(haversine(a, a) == 0.0, "identity");
        o.require(haversine(a, b) >= 0.0, "non-negative");
    }
    if (o.pass) o.detail = "antipodes and quarter circles exact to 1e-9; 1,000 pairs symmetric";
    return o;
}

Outcome clustering_recovery() {
    Outcome o;
    const auto blobs = make_geo_blobs(three_blob_centers(), 100, 5.0, 42);
    const auto fit = kmeans_haversine(blobs.points, 3, 7);
    const double ari = adjusted_rand_index(fit.assignments, blobs.labels);
    o.require(ari >= 0.99, "ARI " + fmt("%.4f", ari));
    for (std::size_t i = 1; i < fit.cost_history.size(); ++i)
        o.require(fit.cost_history[i] <= fit.cost_history[i - 1], "cost increased at iteration " + std::to_string(i));
    o.detail = o.pass ? "ARI " + fmt("%.4f", ari) + ", " + std::to_string(fit.cost_history.size()) + " costs non-increasing"
                      : o.detail;
    return o;
}

Outcome gap_statistic_choice() {
    Outcome o;
    std::vector<std::size_t> ks{1, 2, 3, 4, 5, 6, 7, 8};
    GapStatOptions opt;
    opt.references = 10;
    int hits = 0;
    std::string chosen;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto blobs = make_geo_blobs(three_blob_centers(), 100, 5.0, 100 + seed);
        const auto g = gap_statistic(blobs.points, ks, seed, opt);
        hits += g.chosen_k == 3;
        chosen += std::to_string(g.chosen_k);
    }
    o.require(hits >= 8, "k=3 in " + std::to_string(hits) + "/10");
    o.detail = "chosen k per seed " + chosen + " (" + std::to_string(hits) + "/10 at 3)";
    return o;
}

double layer_error(const LayerSpec& spec, Tensor x, std::uint64_t seed) {
    Rng rng(seed);
    auto layer = make_layer(spec, rng);
    const Tensor r = random_tensor(layer->forward(x, Mode::train).shape(), seed + 1);
    auto loss = [&] {
        const Tensor y = layer->forward(x, Mode::train);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
        return s;
    };
    // The input is exposed to the checker as an extra parameter.
    Parameter input;
    input.value = x;
    input.grad = Tensor(x.shape());
    std::vector<NamedParameter> params;
    layer->visit_parameters("", [&](const std::string& name, Parameter& p) { params.push_back({name, &p}); });
    params.push_back({"input", &input});
    auto analytic = [&] {
        for (auto& np : params) np.param->zero_grad();
        x = input.value;
        layer->forward(x, Mode::train);
        input.grad = layer->backward(r);
    };
    auto loss_at_input = [&] {
        x = input.value;
        return loss();
    };
    return grad_check(loss_at_input, analytic, params).max_relative_error;
}

Outcome gradient_integrity() {
    Outcome o;
    double worst = 0.0;
    const auto track = [&](double e, const std::string& what) {
        worst = std::max(worst, e);
        o.require(e < 1e-4, what + " " + fmt("%.2e", e));
    };
    track(layer_error(DenseSpec{5, 4}, random_tensor({3, 5}, 1), 2), "dense");
    track(layer_error(LeakyReluSpec{0.01}, random_tensor({4, 6}, 3), 4), "leaky relu");
    track(layer_error(BatchNormSpec{3}, random_tensor({6, 3}, 5), 6), "batch norm (features)");
    track(layer_error(BatchNormSpec{2}, random_tensor({3, 2, 3, 3}, 7), 8), "batch norm (channels)");
    track(layer_error(Conv2dSpec{2, 3, 3, 3, 1, 1}, random_tensor({2, 2, 5, 5}, 9), 10), "conv");
    track(layer_error(Conv2dSpec{2, 2, 7, 7, 2, 3}, random_tensor({1, 2, 9, 9}, 11), 12), "strided conv");
    track(layer_error(PoolSpec{PoolKind::max, 3, 2, 1, false}, random_tensor({1, 2, 6, 6}, 13), 14), "max pool");
    track(layer_error(PoolSpec{PoolKind::avg, 0, 0, 0, true}, random_tensor({2, 3, 3, 3}, 15), 16), "global avg pool");
    track(layer_error(ResidualBlockSpec{2, 3, 2, true}, random_tensor({2, 2, 6, 6}, 17), 18), "residual block");
    track(layer_error(SoftmaxSpec{}, random_tensor({3, 4}, 19), 20), "softmax");

    Sequential dense({DenseSpec{4, 6}, BatchNormSpec{6}, LeakyReluSpec{0.01}, DenseSpec{6, 3}, SoftmaxSpec{}}, 9);
    const std::vector<std::size_t> labels{0, 1, 2, 1, 0, 2, 2, 1};
    track(grad_check(dense, random_tensor({8, 4}, 21), one_hot(labels, 3), LossKind::cross_entropy).max_relative_error,
          "dense+BN+LeakyReLU network");

    Sequential conv({Conv2dSpec{1, 2, 3, 3, 1, 1}, LeakyReluSpec{0.01}, PoolSpec{PoolKind::max, 2, 2, 0, false},
                     ResidualBlockSpec{2, 2, 1, true}, PoolSpec{PoolKind::avg, 0, 0, 0, true}, DenseSpec{2, 4},
                     SoftmaxSpec{}},
                    13);
    const std::vector<std::size_t> conv_labels{3, 0, 1, 2};
    track(grad_check(conv, random_tensor({4, 1, 6, 6}, 22), one_hot(conv_labels, 4), LossKind::cross_entropy)
              .max_relative_error,
          "conv+pool+residual+softmax+CE network");
    if (o.pass) o.detail = "max relative error " + fmt("%.2e", worst);
    return o;
}

Outcome batch_norm_contract() {
    Outcome o;
    double worst_mean = 0.0, worst_var = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const std::size_t d = 5;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> z(0.0, 1.0);
        Tensor x({64, d});
        for (std::size_t j = 0; j < d; ++j) {
            const double scale = 0.1 + j * 3.0, shift = -4.0 + 2.0 * j;
            for (std::size_t i = 0; i < 64; ++i) x.at(i, j) = shift + scale * z(rng);
        }
        BatchNormLayer bn(BatchNormSpec{d});
        const Tensor y = bn.forward(x, Mode::train);
        for (std::size_t j = 0; j < d; ++j) {
            double mx = 0, my = 0;
            for (std::size_t i = 0; i < 64; ++i) mx += x.at(i, j), my += y.at(i, j);
            mx /= 64, my /= 64;
            double vx = 0, vy = 0;
            for (std::size_t i = 0; i < 64; ++i) {
                vx += (x.at(i, j) - mx) * (x.at(i, j) - mx);
                vy += (y.at(i, j) - my) * (y.at(i, j) - my);
            }
            vx /= 64, vy /= 64;
            worst_mean = std::max(worst_mean, std::abs(my));
            worst_var = std::max(worst_var, std::abs(vy - vx / (vx + 1e-5)));
        }
    }
    o.require(worst_mean < 1e-9, "|mean| " + fmt("%.2e", worst_mean));
    o.require(worst_var < 1e-9, "variance gap " + fmt("%.2e", worst_var));
    if (o.pass) o.detail = "max |mean| " + fmt("%.1e", worst_mean) + ", max variance gap " + fmt("%.1e", worst_var);
    return o;
}

Outcome gaf_algebra() {
    Outcome o;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5, 5);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t t = 2 + rng() % 40;
        std::vector<double> raw(t);
        for (double& v : raw) v = u(rng);
        const auto x = rescale_to_unit(raw);
        const Tensor s = gasf(x), d = gadf(x);
        const auto matrix = gasf_matrix_form(x);
        for (std::size_t i = 0; i < t; ++i) {
            o.require(std::abs(s.at(i, i) - (2 * x[i] * x[i] - 1)) < 1e-12, "GASF diagonal");
            o.require(d.at(i, i) == 0.0, "GADF diagonal");
            for (std::size_t j = 0; j < t; ++j) {
                const double trig = std::cos(std::acos(x[i]) + std::acos(x[j]));
                worst = std::max({worst, std::abs(s.at(i, j) - trig), std::abs(s.at(i, j) - matrix[i][j])});
                o.require(s.at(i, j) == s.at(j, i), "GASF symmetry");
                o.require(d.at(i, j) == -d.at(j, i), "GADF antisymmetry");
                o.require(std::abs(s.at(i, j)) <= 1.0 && std::abs(d.at(i, j)) <= 1.0, "range");
            }
        }
    }
    o.require(worst < 1e-12, "matrix vs trigonometric form " + fmt("%.2e", worst));
    if (o.pass) o.detail = "max form difference " + fmt("%.1e", worst);
    return o;
}

Outcome label_codec() {
    Outcome o;
    for (std::size_t gamma = 1; gamma <= 3; ++gamma)
        for (std::size_t c = 0; c < (std::size_t{1} << gamma); ++c) {
            const auto label = decode_label(c, gamma);
            o.require(make_label(label.bits) == label && label.class_index == c,
                      "round trip gamma " + std::to_string(gamma));
        }
    const char* listed[] = {"000", "100", "010", "110", "001", "101", "011", "111"};
    for (std::size_t c = 0; c < 8; ++c)
        o.require(label_string(decode_label(c, 3)) == listed[c], "order at class " + std::to_string(c));
    if (o.pass) o.detail = "14 labels round-trip; 000,100,010,110,001,101,011,111 -> 0..7";
    return o;
}

Outcome scheduler() {
    Outcome o;
    const SchedulerConfig cfg{0.1, 0.5, 10};
    o.require(scheduler_rate(cfg, 0) == 0.1, "epoch 0");
    o.require(scheduler_rate(cfg, 10) == 0.05, "epoch 10");
    o.require(scheduler_rate(cfg, 25) == 0.025, "epoch 25");
    if (o.pass) o.detail = "0.1 / 0.05 / 0.025";
    return o;
}

Outcome stage1_overfit() {
    Outcome o;
    const auto toy = make_separable_toy(200, 7);
    Stage1Config cfg;
    cfg.hidden = {{16, 0.01}, {8, 0.01}};
    cfg.batch_size = 32;
    cfg.learning_rate = 0.05;
    cfg.max_epochs = 500;
    cfg.seed = 3;
    const auto a = train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg);
    const auto b = train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg);
    const double err = evaluate_stage1(a.model, toy.instances);
    o.require(a.history.size() <= 500, "epochs");
    o.require(err < 0.05, "training error " + fmt("%.3f", err));
    o.require(a.model.network.state() == b.model.network.state(), "weights differ between runs");
    o.require(predict_probabilities(a.model, toy.instances) == predict_probabilities(b.model, toy.instances),
              "predictions differ between runs");
    if (o.pass)
        o.detail = "training error " + fmt("%.3f", err) + " after " + std::to_string(a.history.size()) +
                   " epochs; identical reruns";
    return o;
}

Outcome stage2_overfit() {
    Outcome o;
    const auto pairs = make_gaf_toy(100, 3, 32, 5);
    Stage2Config cfg;
    cfg.width_factor = 1.0 / 8;
    cfg.max_epochs = 200;
    const auto run = train_stage2(pairs, {}, cfg);
    for (std::size_t c = 0; c < 8; ++c)
        o.require(run.class_counts.at(c) > 0, "class " + std::to_string(c) + " missing after balancing");
    const auto ev = evaluate_stage2(run.model, pairs);
    // Independent counting pass over argmax of the class probabilities.
    const Tensor probs = predict_stage2(run.model, pairs);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < 8; ++c)
            if (probs.at(i, c) > probs.at(i, best)) best = c;
        wrong += best != pairs[i].label.class_index;
    }
    const double counted = static_cast<double>(wrong) / static_cast<double>(pairs.size());
    o.require(1.0 - ev.error_rate >= 0.95, "training accuracy " + fmt("%.3f", 1.0 - ev.error_rate));
    o.require(ev.error_rate == counted, "evaluation " + fmt("%.4f", ev.error_rate) + " vs count " + fmt("%.4f", counted));
    if (o.pass)
        o.detail = "training accuracy " + fmt("%.3f", 1.0 - ev.error_rate) + " after " +
                   std::to_string(run.history.size()) + " epochs";
    return o;
}

nlohmann::json end_to_end_config() {
    auto cfg = small_chain_config();
    cfg["series"]["window"] = 32;
    cfg["stage2"] = {{"width_factor", 0.125}, {"max_epochs", 8}, {"batch_size", 16}};
    return cfg;
}

Outcome end_to_end() {
    Outcome o;
    TempDir first("acceptance-e2e"), second("acceptance-e2e-rerun");
    std::size_t clusters = 0;
    for (const auto* dir : {&first, &second}) {
        write_chain_inputs(dir->path(), end_to_end_config());
        const auto r = run_chain(dir->path());
        o.require(r.status == 0, r.err);
        if (r.status != 0) return o;
        const auto model = cluster_from_container(load_container((dir->path() / "out" / "clusters.avm").string()));
        const auto f = run_tool({"forecast", "--config", (dir->path() / "config.json").string(), "--service",
                                 "hotspot-b", "--cluster", std::to_string(model.assign({38.72, -9.14})), "--at",
                                 "2014-04-14T18:00:00"});
        o.require(f.status == 0 && f.out.rfind("forecast,", 0) == 0, "forecast: " + f.err);
        clusters = read_manifest(dir->path(), "cluster").at("results").at("chosen_k").get<std::size_t>();
    }
    const auto a = output_checksums(first.path()), b = output_checksums(second.path());
    o.require(!a.empty() && a == b, "artifact checksums differ between runs");
    o.require(read_manifest(first.path(), "train-duration").at("config_hash") ==
                  read_manifest(second.path(), "train-duration").at("config_hash"),
              "config hash differs");
    if (o.pass)
        o.detail = std::to_string(a.size()) + " artifacts reproduced byte for byte; k=" + std::to_string(clusters);
    return o;
}

Outcome paa_and_rescale() {
    Outcome o;
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-100, 100);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = 1 + rng() % 16, k = m * (2 + rng() % 8);
        std::vector<double> w(k);
        for (double& v : w) v = u(rng);
        const auto p = paa(w, m);
        double sw = 0, sp = 0;
        for (double v : w) sw += v;
        for (double v : p) sp += v;
        worst = std::max(worst, std::abs(sw / k - sp / m));
        const auto r = rescale_to_unit(w);
        o.require(*std::min_element(r.begin(), r.end()) == -1.0 && *std::max_element(r.begin(), r.end()) == 1.0,
                  "rescale extremes");
    }
    o.require(worst < 1e-12, "PAA mean drift " + fmt("%.2e", worst));
    const std::vector<double> flat(9, 4.25);
    for (double v : rescale_to_unit(flat)) o.require(v == 0.0, "degenerate window");
    const std::vector<double> zeros(6, 0.0), mixed{0, 0, 1, 0};
    for (double v : perturb_zero_series(zeros)) o.require(v == 1e-3, "all-zero window perturbation");
    o.require(perturb_zero_series(mixed) == mixed, "non-zero window left alone");
    if (o.pass) o.detail = "max PAA mean drift " + fmt("%.1e", worst);
    return o;
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "haversine oracle", 1, haversine_oracle},
        {2, "clustering recovery", 5, clustering_recovery},
        {3, "gap statistic", 60, gap_statistic_choice},
        {4, "gradient integrity", 120, gradient_integrity},
        {5, "batch-norm contract", 1, batch_norm_contract},
        {6, "GAF algebra", 5, gaf_algebra},
        {7, "label codec", 1, label_codec},
        {8, "scheduler", 0, scheduler},
        {9, "stage-1 overfit", 180, stage1_overfit},
        {10, "stage-2 overfit", 600, stage2_overfit},
        {11, "end-to-end pipeline", 900, end_to_end},
        {12, "PAA and rescale", 0, paa_and_rescale},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget_s > 0 && secs >= c.budget_s) {
            o.pass = false;
            o.detail += " (over the " + fmt("%.0f", c.budget_s) + " s budget)";
        }
        failures += !o.pass;
        std::printf("%s %2d %-22s %8.2f s  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
