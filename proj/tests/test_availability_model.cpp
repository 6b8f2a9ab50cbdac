#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "availnet/availability_model.hpp"
#include "availnet/error.hpp"
#include "availnet/optim.hpp"
#include "doctest.h"
#include "support/toy_data.hpp"

using namespace availnet;
using availnet::testing::SeparableToy;
using availnet::testing::make_separable_toy;

namespace {

std::size_t count_kind(const NetworkSpec& spec, LayerKind kind) {
    std::size_t n = 0;
    for (const auto& s : spec) n += kind_of(s) == kind;
    return n;
}

Stage1Config toy_config() {
    Stage1Config cfg;
    cfg.hidden = {{16, 0.01}, {8, 0.01}};
    cfg.batch_size = 32;
    cfg.learning_rate = 0.05;
    cfg.max_epochs = 500;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("build_stage1_network") {
    Stage1Config cfg;
    cfg.hidden = uber_layout();
    const auto uber = build_stage1_network(cfg, 15, 5);
    CHECK(count_kind(uber, LayerKind::dense) == 4);
    CHECK(count_kind(uber, LayerKind::batch_norm) == 3);
    CHECK(count_kind(uber, LayerKind::leaky_relu) == 3);
    CHECK(kind_of(uber.back()) == LayerKind::softmax);
    CHECK(std::get<DenseSpec>(uber[uber.size() - 2]).out == 5);
    CHECK(std::get<DenseSpec>(uber[0]).in == 15);

    cfg.hidden = ecml_pkdd15_layout();
    const auto ecml = build_stage1_network(cfg, 20, 428);
    std::vector<std::size_t> widths;
    for (const auto& s : ecml)
        if (const auto* d = std::get_if<DenseSpec>(&s)) widths.push_back(d->out);
    CHECK(widths == std::vector<std::size_t>{512, 512, 448, 448, 428});
    CHECK(std::get<LeakyReluSpec>(ecml[7]).leak == 0.02);

    cfg.hidden = foursquare_layout();
    CHECK(count_kind(build_stage1_network(cfg, 20, 50), LayerKind::batch_norm) == 5);

    cfg.hidden = {{4, 0.01}};
    CHECK(build_stage1_network(cfg, 3, 2).size() == 5);

    CHECK_THROWS_AS(build_stage1_network(cfg, 3, 1), ConfigError);
    cfg.hidden = {{0, 0.01}};
    CHECK_THROWS_AS(build_stage1_network(cfg, 3, 2), ConfigError);
    cfg.hidden = {{4, 1.5}};
    CHECK_THROWS_AS(build_stage1_network(cfg, 3, 2), ConfigError);
}

TEST_CASE("stage-1 overfits a separable toy set and is deterministic") {
    const SeparableToy toy = make_separable_toy(200, 7);
    const auto cfg = toy_config();
    auto a = train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg);
    auto b = train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg);
    REQUIRE_FALSE(a.history.empty());
    CHECK(a.history.size() <= 500);
    CHECK(a.history.back().train_error < 0.05);
    CHECK(evaluate_stage1(a.model, toy.instances) == a.history.back().train_error);

    CHECK(a.model.network.state() == b.model.network.state());
    CHECK(a.history.back().train_loss == b.history.back().train_loss);

    SUBCASE("query at a training point") {
        const auto& rec = toy.records.front();
        const auto ranked = predict_availability(a.model, rec.point, rec.timestamp, HolidayCalendar{});
        REQUIRE(ranked.size() == 2);
        CHECK(ranked[0].service_id == rec.service_id);
        CHECK(ranked[0].probability > 0.99);
        CHECK(std::abs(ranked[0].probability + ranked[1].probability - 1.0) < 1e-9);
        CHECK(available_services(a.model, ranked) == std::vector<std::string>{rec.service_id});
    }
    SUBCASE("distribution on arbitrary valid queries") {
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> lat(-89, 89), lon(-179, 179);
        for (int i = 0; i < 200; ++i) {
            const auto ranked = predict_availability(a.model, {lat(rng), lon(rng)},
                                                     parse_iso8601("2014-05-01T00:00:00") + std::chrono::seconds(rng() % 5000000),
                                                     HolidayCalendar{});
            double sum = 0.0;
            for (std::size_t j = 0; j < ranked.size(); ++j) {
                CHECK(ranked[j].probability >= 0.0);
                if (j > 0) CHECK(ranked[j].probability <= ranked[j - 1].probability);
                sum += ranked[j].probability;
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
        CHECK_THROWS_AS(predict_availability(a.model, {95, 0}, parse_iso8601("2014-05-01T00:00:00"), {}),
                        ValidationError);
    }
}

TEST_CASE("training loss is near-monotone for a small learning rate") {
    const SeparableToy toy = make_separable_toy(200, 9);
    auto cfg = toy_config();
    cfg.learning_rate = 0.01;
    cfg.batch_size = 200;
    cfg.max_epochs = 200;
    cfg.stop_tol = -std::numeric_limits<double>::infinity();
    const auto run = train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg);
    REQUIRE(run.history.size() == 200);
    std::size_t upticks = 0;
    for (std::size_t i = 1; i < run.history.size(); ++i)
        upticks += run.history[i].train_loss > run.history[i - 1].train_loss + 1e-6;
    CHECK(upticks <= run.history.size() / 20);
}

TEST_CASE("stopping rule") {
    const SeparableToy toy = make_separable_toy(60, 2);
    auto cfg = toy_config();
    cfg.stop_tol = std::numeric_limits<double>::infinity();
    cfg.patience = 1;
    const auto once = train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg);
    CHECK(once.history.size() == 1);
    CHECK(once.stop_reason == "converged");

    cfg.patience = 5;
    CHECK(train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg).history.size() == 5);

    cfg.stop_tol = -std::numeric_limits<double>::infinity();
    cfg.max_epochs = 7;
    const auto capped = train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg);
    CHECK(capped.history.size() == 7);
    CHECK(capped.stop_reason == "max_epochs");
}

TEST_CASE("duplicated data with full batches gives the same model") {
    const SeparableToy toy = make_separable_toy(50, 4);
    std::vector<TrainingInstance> twice = toy.instances;
    twice.insert(twice.end(), toy.instances.begin(), toy.instances.end());
    auto cfg = toy_config();
    cfg.batch_size = 1000;
    cfg.max_epochs = 25;
    cfg.stop_tol = -std::numeric_limits<double>::infinity();
    auto a = train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg);
    auto b = train_stage1(twice, {}, toy.clusters, toy.vocabulary, cfg);
    const auto sa = a.model.network.state(), sb = b.model.network.state();
    REQUIRE(sa.size() == sb.size());
    double worst = 0.0;
    for (const auto& [name, t] : sa)
        for (std::size_t i = 0; i < t.size(); ++i) worst = std::max(worst, std::abs(t[i] - sb.at(name)[i]));
    CHECK(worst < 1e-9);
}

TEST_CASE("mirrored services get matching probabilities") {
    SeparableToy toy = make_separable_toy(120, 5);
    // service "C" copies every record of "A"
    std::vector<TraceRecord> records = toy.records;
    for (const auto& r : toy.records)
        if (r.service_id == "A") records.push_back({"C", r.point, r.timestamp});
    const auto built = build_instances(records, toy.clusters, HolidayCalendar{});
    auto cfg = toy_config();
    cfg.max_epochs = 150;
    const auto run = train_stage1(built.instances, {}, toy.clusters, built.vocabulary, cfg);
    const auto& rec = toy.records.front();
    REQUIRE(rec.service_id == "A");
    const auto ranked = predict_availability(run.model, rec.point, rec.timestamp, HolidayCalendar{});
    double pa = 0, pc = 0;
    for (const auto& r : ranked) {
        if (r.service_id == "A") pa = r.probability;
        if (r.service_id == "C") pc = r.probability;
    }
    CHECK(pa > 0.3);
    CHECK(std::abs(pa - pc) < 0.05);
}

TEST_CASE("error rates") {
    SUBCASE("uniform-random predictor on balanced two classes") {
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> u(0, 1);
        Tensor probs({1000, 2});
        std::vector<std::size_t> labels(1000);
        for (std::size_t i = 0; i < 1000; ++i) {
            const double p = u(rng);
            probs.at(i, 0) = p;
            probs.at(i, 1) = 1 - p;
            labels[i] = i % 2;
        }
        CHECK(std::abs(classification_error(probs, labels) - 0.5) < 0.1);
    }
    SUBCASE("constant predictor on balanced five classes") {
        Tensor probs({100, 5}, 0.0);
        std::vector<std::size_t> labels(100);
        for (std::size_t i = 0; i < 100; ++i) {
            probs.at(i, 2) = 1.0;
            labels[i] = i % 5;
        }
        CHECK(classification_error(probs, labels) == doctest::Approx(0.8));
    }
    SUBCASE("ties go to the smallest class") {
        const Tensor probs({1, 3}, {0.4, 0.4, 0.2});
        CHECK(argmax_rows(probs) == std::vector<std::size_t>{0});
    }
    SUBCASE("matches an independent counting pass") {
        const SeparableToy toy = make_separable_toy(80, 6);
        auto cfg = toy_config();
        cfg.max_epochs = 3;
        const auto run = train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, cfg);
        const Tensor probs = predict_probabilities(run.model, toy.instances);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < toy.instances.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 0; c < probs.dim(1); ++c)
                if (probs.at(i, c) > probs.at(i, best)) best = c;
            correct += best == toy.instances[i].label;
        }
        const double err = evaluate_stage1(run.model, toy.instances);
        CHECK(err == doctest::Approx(1.0 - static_cast<double>(correct) / 80.0));
        CHECK((err >= 0.0 && err <= 1.0));
        CHECK_THROWS_AS(evaluate_stage1(run.model, {}), ValidationError);
    }
}

TEST_CASE("training input errors") {
    const SeparableToy toy = make_separable_toy(40, 1);
    std::vector<TrainingInstance> one_class;
    for (const auto& inst : toy.instances)
        if (inst.label == 0) one_class.push_back(inst);
    CHECK_THROWS_AS(train_stage1(one_class, {}, toy.clusters, toy.vocabulary, toy_config()), DataError);
    CHECK_THROWS_AS(train_stage1({}, {}, toy.clusters, toy.vocabulary, toy_config()), DataError);
    auto bad = toy_config();
    bad.fractions = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(train_stage1(toy.instances, {}, toy.clusters, toy.vocabulary, bad), ConfigError);
}

TEST_CASE("history CSV") {
    std::ostringstream out;
    const std::vector<EpochMetrics> h{{0, 0.01, 0.5, 0.25, 0.6, 0.3}};
    write_history_csv(out, h);
    CHECK(out.str() == "epoch,learning_rate,train_loss,train_error,val_loss,val_error\n0,0.01,0.5,0.25,0.6,0.3\n");
}
