#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "availnet/duration_model.hpp"
#include "availnet/error.hpp"
#include "doctest.h"
#include "support/toy_data.hpp"

using namespace availnet;
using availnet::testing::make_gaf_toy;

namespace {

Stage2Config small_config() {
    Stage2Config cfg;
    cfg.input_size = 16;
    cfg.channels = {64, 128, 256};
    cfg.width_factor = 1.0 / 16;
    cfg.max_epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 4;
    return cfg;
}

// Real-valued windows so the GADF images are not identically zero.
std::vector<LabeledPair> smooth_pairs(std::size_t n, std::size_t t, std::size_t gamma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<LabeledPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> w(t);
        for (double& v : w) v = u(rng);
        LabeledPair p;
        p.pair = encode_gaf_pair(w);
        p.label = decode_label(i % (std::size_t{1} << gamma), gamma);
        out.push_back(std::move(p));
    }
    return out;
}

std::size_t pathway_output_width(const Stage2Config& cfg) {
    Sequential path(build_pathway(cfg), 1);
    return path.infer(Tensor({2, 1, cfg.input_size, cfg.input_size}, 0.5)).dim(1);
}

}  // namespace

TEST_CASE("pathway output width") {
    Stage2Config cfg;
    cfg.input_size = 64;
    CHECK(pathway_output_width(cfg) == 512);
    cfg.width_factor = 1.0 / 8;
    CHECK(pathway_output_width(cfg) == 64);
    cfg.input_size = 32;
    CHECK(pathway_output_width(cfg) == 64);

    const auto spec = build_pathway(cfg);
    const auto& stem = std::get<Conv2dSpec>(spec.front());
    CHECK((stem.kernel_h == 7 && stem.stride == 2 && stem.out_channels == 8));
    std::size_t blocks = 0;
    for (const auto& s : spec) blocks += kind_of(s) == LayerKind::residual_block;
    CHECK(blocks == 8);
}

TEST_CASE("input below the downsampling chain") {
    Stage2Config cfg;
    cfg.input_size = 16;
    CHECK(cfg.min_input_size() == 32);
    CHECK_THROWS_AS(build_pathway(cfg), ConfigError);
    try {
        build_pathway(cfg);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("32") != std::string::npos);
    }
    cfg.channels = {64, 128, 256};
    CHECK_NOTHROW(build_pathway(cfg));
    cfg.gamma = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.gamma = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("head width and fusion") {
    for (std::size_t gamma : {1u, 2u, 3u}) {
        auto cfg = small_config();
        cfg.gamma = gamma;
        auto model = build_dual_model(cfg);
        const auto head = std::get<DenseSpec>(model.network.head().spec().front());
        CHECK(head.out == (std::size_t{1} << gamma));
        CHECK(head.in == 2 * model.network.pathway_width());
        const auto pairs = smooth_pairs(3, 16, gamma, gamma);
        const Tensor p = predict_stage2(model, pairs);
        CHECK(p.shape() == Shape{3, std::size_t{1} << gamma});
    }
}

TEST_CASE("pathways use disjoint storage") {
    auto model = build_dual_model(small_config());
    std::set<const double*> gasf, gadf;
    model.network.gasf_path().visit_parameters("", [&](const std::string&, Parameter& p) { gasf.insert(p.value.data()); });
    model.network.gadf_path().visit_parameters("", [&](const std::string&, Parameter& p) { gadf.insert(p.value.data()); });
    REQUIRE(gasf.size() == gadf.size());
    for (const double* ptr : gasf) CHECK(gadf.count(ptr) == 0);
    const auto state = model.network.state();
    CHECK_FALSE(std::ranges::equal(state.at("gasf.0.weight").values(), state.at("gadf.0.weight").values()));
}

TEST_CASE("gradient check on a reduced dual-path model") {
    auto cfg = small_config();
    auto model = build_dual_model(cfg);
    auto& net = model.network;
    const auto pairs = smooth_pairs(4, 16, cfg.gamma, 8);
    const auto [s, d] = stack_pairs(pairs, 16);
    std::vector<std::size_t> labels;
    for (const auto& p : pairs) labels.push_back(p.label.class_index);
    const Tensor y = one_hot(labels, cfg.num_classes());

    auto loss = [&] { return cross_entropy_loss(net.forward(s, d, Mode::train), y).value; };
    auto analytic = [&] {
        const auto lv = cross_entropy_loss(net.forward(s, d, Mode::train), y);
        net.backward(lv.grad);
    };
    std::vector<NamedParameter> params;
    net.visit_parameters([&](const std::string& name, Parameter& p) { params.push_back({name, &p}); });
    GradCheckOptions opt;
    opt.max_entries_per_tensor = 6;
    opt.seed = 2;
    opt.denominator_floor = 1e-6;
    const auto report = grad_check(loss, analytic, params, opt);
    INFO(report.worst_name, " analytic ", report.worst_analytic, " numeric ", report.worst_numeric);
    CHECK(report.max_relative_error < 1e-3);
}

TEST_CASE("all-zero GADF input keeps gradients finite") {
    auto cfg = small_config();
    auto model = build_dual_model(cfg);
    const auto pairs = make_gaf_toy(8, cfg.gamma, 16, 3);
    for (const auto& p : pairs)
        for (double v : p.pair.gadf.values()) REQUIRE(v == 0.0);
    const auto [s, d] = stack_pairs(pairs, 16);
    std::vector<std::size_t> labels;
    for (const auto& p : pairs) labels.push_back(p.label.class_index);
    model.network.zero_grad();
    const auto lv = cross_entropy_loss(model.network.forward(s, d, Mode::train), one_hot(labels, 8));
    model.network.backward(lv.grad);
    double worst = 0.0;
    for (auto* p : model.network.parameters())
        for (double g : p->grad.values()) worst = std::max(worst, std::abs(g));
    CHECK(std::isfinite(worst));
    CHECK(worst < 100.0);
}

TEST_CASE("one small SGD step lowers the loss on a fixed batch") {
    auto model = build_dual_model(small_config());
    auto& net = model.network;
    const auto pairs = smooth_pairs(8, 16, 3, 9);
    const auto [s, d] = stack_pairs(pairs, 16);
    std::vector<std::size_t> labels;
    for (const auto& p : pairs) labels.push_back(p.label.class_index);
    const Tensor y = one_hot(labels, 8);
    net.zero_grad();
    const auto before = cross_entropy_loss(net.forward(s, d, Mode::train), y);
    net.backward(before.grad);
    sgd_step(net.parameters(), 1e-3);
    const double after = cross_entropy_loss(net.forward(s, d, Mode::train), y).value;
    CHECK(after < before.value);
}

TEST_CASE("training log, determinism and errors") {
    const auto pairs = make_gaf_toy(24, 3, 16, 2);
    auto cfg = small_config();
    cfg.max_epochs = 12;
    cfg.patience = 100;
    std::vector<double> rates;
    auto a = train_stage2(pairs, {}, cfg, [&](const EpochMetrics& m) { rates.push_back(m.learning_rate); });
    REQUIRE(rates.size() == 12);
    CHECK(rates[0] == doctest::Approx(0.1));
    CHECK(rates[9] == doctest::Approx(0.1));
    CHECK(rates[10] == doctest::Approx(0.05));
    CHECK(a.history[10].learning_rate == doctest::Approx(0.05));
    for (auto c : a.class_counts) CHECK(c >= 3);

    auto b = train_stage2(pairs, {}, cfg);
    CHECK(a.history.back().train_loss == b.history.back().train_loss);
    CHECK(a.model.network.state() == b.model.network.state());

    std::vector<LabeledPair> one_class;
    for (const auto& p : pairs)
        if (p.label.class_index == 5) one_class.push_back(p);
    CHECK_THROWS_AS(train_stage2(one_class, {}, cfg), DataError);
    CHECK_THROWS_AS(train_stage2({}, {}, cfg), DataError);
    auto wrong_gamma = cfg;
    wrong_gamma.gamma = 2;
    CHECK_THROWS_AS(train_stage2(pairs, {}, wrong_gamma), ValidationError);
}

TEST_CASE("overfit, forecast and evaluation") {
    const auto pairs = make_gaf_toy(32, 2, 16, 6, 1);
    auto cfg = small_config();
    cfg.gamma = 2;
    cfg.width_factor = 1.0 / 8;
    cfg.max_epochs = 80;
    const auto run = train_stage2(pairs, {}, cfg);
    const auto ev = evaluate_stage2(run.model, pairs);
    CHECK(ev.error_rate <= 0.05);
    CHECK(ev.count == 32);

    const auto probs = predict_stage2(run.model, pairs);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto f = forecast(run.model, pairs[i].pair);
        double sum = 0.0;
        for (double p : f.probabilities) sum += p;
        CHECK(std::abs(sum - 1.0) < 1e-9);
        std::size_t best = 0;
        for (std::size_t c = 1; c < 4; ++c)
            if (probs.at(i, c) > probs.at(i, best)) best = c;
        CHECK(f.label.class_index == best);
        CHECK(make_label(f.label.bits, 2).class_index == best);
        wrong += best != pairs[i].label.class_index;
    }
    CHECK(ev.error_rate == doctest::Approx(static_cast<double>(wrong) / 32.0));
    for (double b : ev.bit_error) CHECK(b <= ev.error_rate + 1e-12);

    GafImagePair bad;
    bad.gasf = Tensor({8, 8});
    bad.gadf = Tensor({8, 8});
    CHECK_THROWS_AS(forecast(run.model, bad), ShapeError);
    CHECK_THROWS_AS(evaluate_stage2(run.model, {}), ValidationError);
}

TEST_CASE("constant predictor on a balanced 8-class set") {
    // Zero head weights and a bias favouring class 3 predict 3 everywhere.
    auto cfg = small_config();
    auto model = build_dual_model(cfg);
    model.network.head().visit_parameters("", [](const std::string& name, Parameter& p) {
        p.value.fill(0.0);
        if (name.find("bias") != std::string::npos) p.value[3] = 1.0;
    });
    const auto pairs = smooth_pairs(64, 16, 3, 12);
    const auto ev = evaluate_stage2(model, pairs);
    CHECK(ev.error_rate == doctest::Approx(0.875));
    // bits of 3 are (1, 1, 0); each bit is wrong on half the classes
    for (double b : ev.bit_error) CHECK(b == doctest::Approx(0.5));
}
