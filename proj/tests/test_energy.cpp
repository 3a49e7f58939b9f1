#include <doctest.h>

#include <cmath>

#include "hess/energy.hpp"
#include "hess/synthetic.hpp"

using namespace hess;

namespace {

struct Row {
    double ann, snn, e;
};

const Row kTable[] = {{73.62, 0, 338.65}, {12.45, 0, 57.27}, {16.74, 0, 77.01}, {0, 54.35, 48.91},
                      {16.65, 0, 76.59},  {7.88, 0, 36.25},  {14.22, 0, 65.41}, {9.88, 0, 45.42},
                      {3.84, 0.267, 17.89}, {1.95, 0.110, 9.08}};

const LayerCost& layer(const EnergyReport& r, const std::string& name) {
    for (const auto& l : r.layers)
        if (l.name == name) return l;
    FAIL("missing layer " << name);
    return r.layers.front();
}

}  // namespace

TEST_CASE("energy_total reproduces the reference table within 0.5%") {
    for (const auto& row : kTable) {
        const double e = energy_total(row.ann, row.snn);
        CHECK(std::abs(e - row.e) / row.e <= 0.005);
    }
    CHECK(energy_total(0, 0) == 0.0);
}

TEST_CASE("least-squares fit recovers the per-operation energies") {
    std::vector<EnergyObservation> obs;
    for (const auto& row : kTable) obs.push_back({row.ann, row.snn, row.e});
    const auto fit = fit_energy_coefficients(obs);
    CHECK(std::abs(fit.ann_pj - 4.60) <= 0.02);
    CHECK(std::abs(fit.snn_pj - 0.90) <= 0.05);

    const auto exact = fit_energy_coefficients({{1, 0, 4.6}, {0, 1, 0.9}, {2, 3, 11.9}});
    CHECK(exact.ann_pj == doctest::Approx(4.6).epsilon(1e-12));
    CHECK(exact.snn_pj == doctest::Approx(0.9).epsilon(1e-12));
    CHECK_THROWS_AS(fit_energy_coefficients({{1, 0, 4.6}, {2, 0, 9.2}}), std::invalid_argument);
}

TEST_CASE("MAC and synaptic-operation counts") {
    const auto conv = LayerSpec::conv(3, 8, 3, 16, 16);
    CHECK(count_ann_macs(conv) == 55'296);
    CHECK(count_ann_macs(LayerSpec::conv(6, 6, 1, 5, 7)) == 36 * 35);
    CHECK(count_ann_macs(LayerSpec::linear(10, 5)) == 50);
    CHECK(count_ann_macs(LayerSpec::conv(3, 8, 3, 32, 32)) == 4 * count_ann_macs(conv));

    CHECK(count_snn_synops(conv, 0.1, 5) == doctest::Approx(27'648).epsilon(1e-14));
    CHECK(count_snn_synops(conv, 0.0, 5) == 0.0);
    CHECK(count_snn_synops(conv, 1.0, 1) == count_ann_macs(conv));
    CHECK_THROWS_AS(count_snn_synops(conv, 1.5, 5), std::invalid_argument);
    CHECK_THROWS_AS(count_snn_synops(conv, -0.1, 5), std::invalid_argument);
    CHECK_THROWS_AS(count_snn_synops(conv, std::nan(""), 5), std::invalid_argument);
}

TEST_CASE("profile matches a hand count for a two-scale network without fusion") {
    SyntheticConfig sc;
    sc.width = 16;
    sc.height = 16;
    const auto data = make_synthetic_dataset(4, sc, 3);
    NetworkConfig cfg;
    cfg.scales = {{2, 4}, {4, 8}};
    cfg.atw_on = cfg.eds_on = cfg.csf_on = false;
    HybridNetwork net(cfg);
    const auto r = profile(net, data);
    CHECK(r.samples == 3);

    const double a0 = layer(r, "s0.encode_conv").spike_rate, a1 = layer(r, "s1.snn_conv").spike_rate;
    CHECK(a0 > 0.0);
    CHECK(a1 >= 0.0);
    // s0: 8×8 cells, 1→4; s1: 4×4 cells, 4→8; T = 5, three classes.
    const double ann = 2304 + 2304 * 5 * a0 + 4608  // convolutions
                       + 5 * 4 * 64 + 5 * 8 * 16    // temporal sums
                       + 4 * 3 * 256 + 3 * 4 * 64 + 3 * 8 * 16 + 4 * 3 * 64;  // head
    const double snn = 4608 * a1 * 5;
    CHECK(r.gflops_ann * 1e9 == doctest::Approx(ann).epsilon(1e-12));
    CHECK(r.gflops_snn * 1e9 == doctest::Approx(snn).epsilon(1e-12));
    CHECK(r.e_total_mj == energy_total(r.gflops_ann, r.gflops_snn));
}

TEST_CASE("profile: silent event input has no spike-driven operations") {
    SyntheticConfig sc;
    sc.width = 16;
    sc.height = 16;
    auto data = make_synthetic_dataset(5, sc, 2);
    for (auto& s : data.samples) s.events.events.clear();
    NetworkConfig cfg;
    HybridNetwork net(cfg);
    const auto r = profile(net, data);
    CHECK(r.gflops_snn == 0.0);
    CHECK(layer(r, "s0.encode_conv").ops == 0.0);
    CHECK(r.gflops_ann > 0.0);
}

TEST_CASE("profile: doubling height and width quadruples the dense convolution count") {
    NetworkConfig cfg;
    HybridNetwork net(cfg);
    SyntheticConfig small, big;
    small.width = small.height = 16;
    big.width = big.height = 32;
    const auto rs = profile(net, make_synthetic_dataset(6, small, 1));
    const auto rb = profile(net, make_synthetic_dataset(6, big, 1));
    for (const char* name : {"s0.ann_conv", "s1.ann_conv", "s2.ann_conv"})
        CHECK(layer(rb, name).macs == 4 * layer(rs, name).macs);
    nlohmann::json j = rs;
    CHECK(j["layers"].size() == rs.layers.size());
    CHECK(j["e_total_mj"].get<double>() == rs.e_total_mj);
}
