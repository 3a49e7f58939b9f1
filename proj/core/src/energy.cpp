#include "hess/energy.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hess/ops.hpp"

namespace hess {

LayerSpec LayerSpec::conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t out_h, std::size_t out_w) {
    return LayerSpec{cin, cout, k, k, out_h, out_w};
}

LayerSpec LayerSpec::linear(std::size_t din, std::size_t dout) { return LayerSpec{din, dout, 1, 1, 1, 1}; }

Scalar count_ann_macs(const LayerSpec& s) {
    return static_cast<Scalar>(s.out_channels) * static_cast<Scalar>(s.out_h) * static_cast<Scalar>(s.out_w) *
           static_cast<Scalar>(s.in_channels) * static_cast<Scalar>(s.kernel_h) * static_cast<Scalar>(s.kernel_w);
}

Scalar count_snn_synops(const LayerSpec& spec, Scalar spike_rate, std::size_t timesteps) {
    if (!(spike_rate >= 0.0 && spike_rate <= 1.0)) {
        throw std::invalid_argument("count_snn_synops: spike rate " + std::to_string(spike_rate) +
                                    " outside [0, 1]");
    }
    return count_ann_macs(spec) * spike_rate * static_cast<Scalar>(timesteps);
}

Scalar energy_total(Scalar gflops_ann, Scalar gflops_snn) {
    return kAnnPjPerOp * gflops_ann + kSnnPjPerOp * gflops_snn;
}

EnergyCoefficients fit_energy_coefficients(const std::vector<EnergyObservation>& rows) {
    Scalar aa = 0, as = 0, ss = 0, ae = 0, se = 0;
    for (const auto& r : rows) {
        aa += r.gflops_ann * r.gflops_ann;
        as += r.gflops_ann * r.gflops_snn;
        ss += r.gflops_snn * r.gflops_snn;
        ae += r.gflops_ann * r.e_total_mj;
        se += r.gflops_snn * r.e_total_mj;
    }
    const Scalar det = aa * ss - as * as;
    if (!(std::abs(det) > 1e-12 * std::max(1.0, aa * ss))) {
        throw std::invalid_argument("fit_energy_coefficients: rows do not separate the ANN and SNN columns");
    }
    return {(ae * ss - se * as) / det, (se * aa - ae * as) / det};
}

void to_json(nlohmann::json& j, const EnergyReport& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : r.layers) {
        layers.push_back({{"name", l.name},
                          {"kind", l.kind == CostKind::ANN ? "ANN" : "SNN"},
                          {"macs", l.macs},
                          {"spike_rate", l.spike_rate},
                          {"timesteps", l.timesteps},
                          {"ops", l.ops}});
    }
    j = {{"gflops_ann", r.gflops_ann},
         {"gflops_snn", r.gflops_snn},
         {"e_total_mj", r.e_total_mj},
         {"samples", r.samples},
         {"layers", layers}};
}

namespace {

Scalar atw_ops(std::size_t c, std::size_t h, std::size_t w, std::size_t t, std::size_t k, std::size_t r) {
    const Scalar cr = static_cast<Scalar>(c / r), C = static_cast<Scalar>(c), K = static_cast<Scalar>(k);
    const Scalar adaptor = static_cast<Scalar>(t) * (C * cr + cr * C);
    const Scalar collapse = static_cast<Scalar>(t * c * h * w);
    const Scalar per_query = C * C + C * 2 * K + C * K + 4 * K * C + K * C + C * C;
    return adaptor + collapse + static_cast<Scalar>(h * w) * per_query;
}

Scalar eds_ops(std::size_t c, std::size_t h, std::size_t w, std::size_t t, std::size_t k, std::size_t refs) {
    const Scalar C = static_cast<Scalar>(c), K = static_cast<Scalar>(k);
    const Scalar proj = static_cast<Scalar>(h * w) * C * C;
    const Scalar per_point = C * 2 * K + C * K + 2 * 4 * K * C + K * C + K * C + C * C;
    return proj + static_cast<Scalar>(refs * t) * per_point;
}

Scalar fuse_ops(std::size_t c, std::size_t h, std::size_t w, std::size_t t, bool csf) {
    const Scalar plane = static_cast<Scalar>(c * h * w);
    Scalar ops = static_cast<Scalar>(t) * plane;
    if (csf) ops += 2 * (static_cast<Scalar>(c) * plane + plane);
    return ops;
}

}  // namespace

EnergyReport profile(const HybridNetwork& net, const Dataset& data, const std::vector<std::size_t>& indices) {
    std::vector<std::size_t> picks = indices;
    if (picks.empty()) {
        picks.resize(data.samples.size());
        std::iota(picks.begin(), picks.end(), 0);
    }
    if (picks.empty()) throw std::invalid_argument("profile: no samples");
    const auto& cfg = net.config();
    const std::size_t t = cfg.timesteps, k = cfg.points, nc = cfg.num_classes;
    const std::size_t H = data.height, W = data.width;

    EnergyReport report;
    report.samples = picks.size();
    auto layer = [&](std::size_t& slot, const std::string& name, CostKind kind, Scalar macs, Scalar rate,
                     std::size_t steps, Scalar ops) {
        if (slot == report.layers.size()) report.layers.push_back({name, kind, macs, 0.0, steps, 0.0});
        report.layers[slot].spike_rate += rate;
        report.layers[slot].ops += ops;
        ++slot;
    };

    for (auto idx : picks) {
        const Batch batch = make_batch(data, {idx}, cfg);
        ForwardTrace trace;
        {
            NoGradGuard guard;
            net.forward(batch, &trace);
        }
        std::size_t slot = 0, prev_c = cfg.input_channels;
        for (std::size_t i = 0; i < cfg.scales.size(); ++i) {
            const auto& st = trace.stages[i];
            const std::size_t c = cfg.scales[i].channels, h = st.height, w = st.width;
            const std::string pre = "s" + std::to_string(i) + ".";
            const Scalar ann = count_ann_macs(LayerSpec::conv(prev_c, c, 3, h, w));
            layer(slot, pre + "ann_conv", CostKind::ANN, ann, 1.0, 1, ann);
            if (i == 0) {
                const Scalar enc = count_ann_macs(LayerSpec::conv(1, c, 3, h, w));
                layer(slot, pre + "encode_conv", CostKind::ANN, enc, st.snn_input_activity, t,
                      enc * st.snn_input_activity * static_cast<Scalar>(t));
            } else {
                const LayerSpec spec = LayerSpec::conv(prev_c, c, 3, h, w);
                layer(slot, pre + "snn_conv", CostKind::SNN, count_ann_macs(spec), st.snn_input_activity, t,
                      count_snn_synops(spec, st.snn_input_activity, t));
            }
            if (cfg.atw_on) {
                const Scalar ops = atw_ops(c, h, w, t, k, cfg.reduction);
                layer(slot, pre + "atw", CostKind::ANN, ops, 1.0, 1, ops);
            }
            if (cfg.eds_on) {
                const std::size_t refs = st.ref_counts.empty() ? 0 : st.ref_counts[0];
                const Scalar ops = eds_ops(c, h, w, t, k, refs);
                layer(slot, pre + "eds", CostKind::ANN, ops, 1.0, 1, ops);
            }
            const Scalar fuse = fuse_ops(c, h, w, t, cfg.csf_on);
            layer(slot, pre + "fuse", CostKind::ANN, fuse, 1.0, 1, fuse);
            prev_c = c;
        }
        const std::size_t h0 = trace.stages[0].height, w0 = trace.stages[0].width;
        Scalar head = 4.0 * static_cast<Scalar>(nc * H * W);
        for (std::size_t i = 0; i < cfg.scales.size(); ++i) {
            const auto& st = trace.stages[i];
            head += count_ann_macs(LayerSpec::conv(cfg.scales[i].channels, nc, 1, st.height, st.width));
            if (i > 0) head += 4.0 * static_cast<Scalar>(nc * h0 * w0);
        }
        layer(slot, "head", CostKind::ANN, head, 1.0, 1, head);
    }

    const Scalar n = static_cast<Scalar>(picks.size());
    Scalar ann_ops = 0.0, snn_ops = 0.0;
    for (auto& l : report.layers) {
        l.spike_rate /= n;
        l.ops /= n;
        (l.kind == CostKind::ANN ? ann_ops : snn_ops) += l.ops;
    }
    report.gflops_ann = ann_ops / 1e9;
    report.gflops_snn = snn_ops / 1e9;
    report.e_total_mj = energy_total(report.gflops_ann, report.gflops_snn);
    return report;
}

}  // namespace hess
