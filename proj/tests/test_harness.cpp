#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>
#include <random>
#include <sstream>

#include "hess/harness.hpp"
#include "hess/image_io.hpp"
#include "hess/synthetic.hpp"

using namespace hess;

TEST_CASE("confusion: 2×2 hand case") {
    const auto cm = confusion({0, 1, 1, 1}, {0, 1, 0, 1}, 2);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 0) == 0);
    CHECK(cm.at(1, 1) == 2);
    const auto m = metrics(cm);
    CHECK(m.accuracy == 0.75);
    REQUIRE(m.iou[0].has_value());
    REQUIRE(m.iou[1].has_value());
    CHECK(*m.iou[0] == 0.5);
    CHECK(*m.iou[1] == 2.0 / 3.0);
    CHECK(m.miou == (0.5 + 2.0 / 3.0) / 2.0);
    CHECK(std::abs(m.miou - 7.0 / 12.0) <= 1e-15);
}

TEST_CASE("confusion: perfect prediction, ignored pixels, invalid labels") {
    const std::vector<int> labels{0, 2, 1, 1, 2, 0};
    const auto cm = confusion(labels, labels, 3);
    for (std::size_t g = 0; g < 3; ++g)
        for (std::size_t p = 0; p < 3; ++p) CHECK(cm.at(g, p) == (g == p ? 2u : 0u));
    CHECK(metrics(cm).accuracy == 1.0);
    CHECK(metrics(cm).miou == 1.0);

    const auto ignored = confusion({0, 1, 2}, {255, 255, 255}, 3);
    CHECK(ignored.total() == 0);
    CHECK_THROWS_AS(metrics(ignored), std::invalid_argument);

    CHECK_THROWS_AS(confusion({0}, {3}, 3), std::out_of_range);
    CHECK_THROWS_AS(confusion({-1}, {0}, 3), std::out_of_range);
    CHECK_THROWS_AS(confusion({0, 1}, {0}, 3), std::invalid_argument);
}

TEST_CASE("metrics: classes with zero union are left out of the mean") {
    const auto cm = confusion({0, 0, 2}, {0, 2, 2}, 3);
    const auto m = metrics(cm);
    CHECK_FALSE(m.iou[1].has_value());
    CHECK(*m.iou[0] == 0.5);
    CHECK(*m.iou[2] == 0.5);
    CHECK(m.miou == 0.5);
    nlohmann::json j = EvalReport{m, cm, 1, std::nullopt};
    CHECK(j["iou"][1].is_null());
}

TEST_CASE("confusion is invariant to pixel order and additive over splits") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> cls(0, 3);
    std::vector<int> pred(500), gt(500);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = cls(rng);
        gt[i] = rng() % 7 == 0 ? 255 : cls(rng);
    }
    const auto whole = confusion(pred, gt, 4);
    std::vector<std::size_t> order(pred.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> sp, sg;
    for (auto i : order) {
        sp.push_back(pred[i]);
        sg.push_back(gt[i]);
    }
    CHECK(confusion(sp, sg, 4) == whole);
    auto merged = confusion({sp.begin(), sp.begin() + 200}, {sg.begin(), sg.begin() + 200}, 4);
    merged += confusion({sp.begin() + 200, sp.end()}, {sg.begin() + 200, sg.end()}, 4);
    CHECK(merged == whole);
}

TEST_CASE("run_eval: report recomputation and emitted label maps") {
    SyntheticConfig sc;
    sc.width = 16;
    sc.height = 16;
    const auto data = make_synthetic_dataset(12, sc, 3);
    NetworkConfig cfg;
    HybridNetwork net(cfg);
    const auto dir = std::filesystem::temp_directory_path() / "hess_test_harness_eval";
    std::filesystem::remove_all(dir);
    EvalOptions opts;
    opts.batch_size = 2;
    opts.emit_images = dir;
    opts.with_energy = true;
    const auto report = run_eval(net, data, opts);
    CHECK(report.samples == 3);
    CHECK(report.energy.has_value());

    const auto batch = make_batch(data, {0, 1, 2}, cfg);
    const auto pred = predict(net, batch);
    const auto cm = confusion(pred, batch.labels, 3);
    CHECK(cm == report.confusion);
    CHECK(metrics(cm).miou == report.metrics.miou);

    const std::size_t hw = 256;
    for (std::size_t s = 0; s < 3; ++s) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "%05zu_pred", s);
        const auto img = read_pgm(dir / (std::string(stem) + ".pgm"));
        for (std::size_t i = 0; i < hw; ++i) CHECK(img.pixels[i] == pred[s * hw + i]);
        CHECK(std::filesystem::exists(dir / (std::string(stem) + ".ppm")));
    }
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(run_eval(net, Dataset{}), std::invalid_argument);
}

TEST_CASE("ablation covers the eight toggle combinations once each") {
    const auto cfgs = ablation_configs(NetworkConfig{});
    REQUIRE(cfgs.size() == 8);
    CHECK_FALSE((cfgs.front().atw_on || cfgs.front().eds_on || cfgs.front().csf_on));
    CHECK((cfgs.back().atw_on && cfgs.back().eds_on && cfgs.back().csf_on));
    std::set<int> seen;
    for (const auto& c : cfgs) seen.insert(c.atw_on * 4 + c.eds_on * 2 + c.csf_on);
    CHECK(seen.size() == 8);
}

TEST_CASE("timestep sweep rows are deterministic and re-bin the events") {
    SyntheticConfig sc;
    sc.width = 16;
    sc.height = 16;
    const auto train_set = make_synthetic_dataset(20, sc, 4);
    const auto test_set = make_synthetic_dataset(21, sc, 2);
    NetworkConfig cfg;
    cfg.scales = {{2, 8}, {4, 16}};
    TrainConfig tc;
    tc.iterations = 2;
    tc.warmup = 1;
    tc.batch_size = 2;
    const auto a = timestep_sweep(cfg, tc, train_set, test_set, {1, 3});
    const auto b = timestep_sweep(cfg, tc, train_set, test_set, {1, 3});
    REQUIRE(a.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a[i].config.timesteps == (i == 0 ? 1u : 3u));
        CHECK(a[i].config.bins == a[i].config.timesteps);
        CHECK(a[i].miou == b[i].miou);
        CHECK(a[i].final_loss == b[i].final_loss);
        CHECK(a[i].energy.e_total_mj == b[i].energy.e_total_mj);
    }
    std::ostringstream table;
    print_table(table, a);
    const std::string text = table.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
    CHECK_THROWS_AS(timestep_sweep(cfg, tc, train_set, test_set, {0}), std::invalid_argument);
}
