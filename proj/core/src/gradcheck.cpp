#include "hess/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "hess/fusion.hpp"
#include "hess/lif.hpp"
#include "hess/synthetic.hpp"

namespace hess {

namespace {

constexpr Scalar kModuleTolerance = 1e-4;
constexpr Scalar kNetworkTolerance = 1e-3;
constexpr Scalar kMinMargin = 1e-3;

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<Scalar> data(numel(shape));
    for (auto& v : data) v = dist(rng);
    return Tensor(std::move(shape), std::move(data));
}

void fill(Tensor& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.mutable_data()) v = dist(rng);
}

void track(ModuleGradCheck& m, const GradCheckResult& r) {
    m.max_rel_error = std::max(m.max_rel_error, r.max_rel_error);
    m.entries += r.entries_checked;
}

// Distance of the nearest sampling coordinate to a grid line. offsets are laid
// out N×Q×K×2 with Q following `queries`.
Scalar kink_margin(const Tensor& offsets, const std::vector<std::pair<std::size_t, std::size_t>>& queries,
                   std::size_t k) {
    Scalar margin = 1.0;
    const std::size_t per_round = queries.size() * k * 2;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        const std::size_t j = (i % per_round) / 2 / k;
        const Scalar base = static_cast<Scalar>((i % 2) ? queries[j].second : queries[j].first);
        const Scalar v = base + offsets[i];
        margin = std::min(margin, std::abs(v - std::round(v)));
    }
    return margin;
}

ReferencePointSet random_refs(std::mt19937_64& rng, std::size_t h, std::size_t w, double rate) {
    std::bernoulli_distribution keep(rate);
    ReferencePointSet r;
    r.height = h;
    r.width = w;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (keep(rng)) r.points.emplace_back(y, x);
    if (r.points.empty()) r.points.emplace_back(h / 2, w / 2);
    return r;
}

}  // namespace

ModuleGradCheck gradcheck_lif(std::uint64_t seed, std::size_t instances) {
    std::mt19937_64 rng(seed);
    ModuleGradCheck m{"lif"};
    m.tolerance = kModuleTolerance;
    LIFConfig cfg;
    while (m.instances < instances && m.skipped < 10 * instances) {
        auto x = random_tensor(rng, {2, 4, 3}, -0.5, 3.0);
        auto probe = random_tensor(rng, {2, 4, 3});
        LIFTrace trace;
        lif_sequence(x, cfg, SpikeFunction::Sigmoid, &trace);
        if (trace.min_margin < kMinMargin) {
            ++m.skipped;
            continue;
        }
        track(m, grad_check([&] { return sum(mul(lif_sequence(x, cfg, SpikeFunction::Sigmoid), probe)); }, {x}));
        ++m.instances;
    }
    return m;
}

ModuleGradCheck gradcheck_atw(std::uint64_t seed, std::size_t instances) {
    std::mt19937_64 rng(seed);
    ModuleGradCheck m{"atw"};
    m.tolerance = kModuleTolerance;
    std::vector<std::pair<std::size_t, std::size_t>> grid;
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 4; ++x) grid.emplace_back(y, x);
    while (m.instances < instances && m.skipped < 10 * instances) {
        auto p = ATWParams::create(4, 2, 3, rng);
        fill(p.w_out, rng);
        fill(p.b_offset, rng);
        fill(p.b_down, rng, 0.1, 0.5);
        auto f_snn = random_tensor(rng, {1, 3, 4, 3, 4});
        auto f_ann = random_tensor(rng, {1, 4, 3, 4});
        auto f_w = random_tensor(rng, {1, 4, 3, 4});
        auto probe = random_tensor(rng, {1, 4, 3, 4});
        auto probe_a = random_tensor(rng, {1, 3, 4});
        auto alpha = random_tensor(rng, {1, 3, 4}, 0.0, 1.0);
        AttentionProbe ap;
        atw_inject(f_ann, f_w, p, &ap);
        if (kink_margin(ap.offsets, grid, 3) < kMinMargin) {
            ++m.skipped;
            continue;
        }
        // With the hidden units active the adaptor biases shift every step's
        // logits equally; their gradients are exactly zero and are left out.
        track(m, grad_check([&] { return sum(mul(atw_temporal_weights(f_snn, p), probe_a)); },
                            {f_snn, p.w_down, p.w_up}));
        track(m, grad_check([&] { return sum(mul(atw_collapse(f_snn, alpha), probe)); }, {f_snn, alpha}));
        track(m, grad_check([&] { return sum(mul(atw_inject(f_ann, f_w, p), probe)); },
                            {f_ann, f_w, p.w_query, p.b_query, p.w_offset, p.b_offset, p.w_attn, p.b_attn, p.w_out,
                             p.b_out}));
        ++m.instances;
    }
    return m;
}

ModuleGradCheck gradcheck_eds(std::uint64_t seed, std::size_t instances) {
    std::mt19937_64 rng(seed);
    ModuleGradCheck m{"eds"};
    m.tolerance = kModuleTolerance;
    while (m.instances < instances && m.skipped < 10 * instances) {
        auto p = EDSParams::create(4, 3, 2, rng);
        fill(p.w_out, rng);
        fill(p.b_offset, rng);
        auto f_ann = random_tensor(rng, {2, 3, 3, 4});
        auto f_snn = random_tensor(rng, {2, 2, 4, 3, 4});
        auto probe = random_tensor(rng, {2, 2, 4, 3, 4});
        auto probe_o = random_tensor(rng, {2, 2, 3, 4, 2, 2});
        auto probe_w = random_tensor(rng, {2, 2, 3, 4, 2});
        std::vector<ReferencePointSet> refs{random_refs(rng, 3, 4, 0.5), random_refs(rng, 3, 4, 0.3)};
        Scalar margin = 1.0;
        for (std::size_t b = 0; b < 2; ++b) {
            AttentionProbe ap;
            eds_inject(reshape(select0(f_snn, b), {1, 2, 4, 3, 4}), reshape(select0(f_ann, b), {1, 3, 3, 4}),
                       {refs[b]}, p, &ap);
            margin = std::min(margin, kink_margin(ap.offsets, refs[b].points, 2));
        }
        if (margin < kMinMargin) {
            ++m.skipped;
            continue;
        }
        track(m, grad_check([&] { return sum(mul(eds_inject(f_snn, f_ann, refs, p), probe)); },
                            {f_snn, f_ann, p.w_offset, p.b_offset, p.w_attn, p.b_attn, p.w_proj, p.b_proj, p.w_out,
                             p.b_out}));
        track(m, grad_check(
                     [&] {
                         auto h = eds_offsets(f_snn, p);
                         return add(sum(mul(h.offsets, probe_o)), sum(mul(h.weights, probe_w)));
                     },
                     {f_snn, p.w_offset, p.w_attn}));
        ++m.instances;
    }
    return m;
}

ModuleGradCheck gradcheck_csf(std::uint64_t seed, std::size_t instances) {
    std::mt19937_64 rng(seed);
    ModuleGradCheck m{"csf"};
    m.tolerance = kModuleTolerance;
    for (; m.instances < instances; ++m.instances) {
        auto a = CSFParams::create(4, rng);
        auto s = CSFParams::create(4, rng);
        auto f_ann = random_tensor(rng, {2, 4, 3, 4});
        auto f_snn = random_tensor(rng, {2, 3, 4, 3, 4});
        auto probe = random_tensor(rng, {2, 4, 3, 4});
        track(m, grad_check([&] { return sum(mul(csf_select(f_ann, a), probe)); }, {f_ann, a.weight, a.bias}));
        track(m, grad_check([&] { return sum(mul(csf_fuse(f_ann, f_snn, a, s), probe)); },
                            {f_ann, f_snn, a.weight, a.bias, s.weight, s.bias}));
    }
    return m;
}

ModuleGradCheck gradcheck_network(std::uint64_t seed, std::size_t entries_per_param) {
    ModuleGradCheck m{"net"};
    m.tolerance = kNetworkTolerance;
    SyntheticConfig sc;
    sc.width = 16;
    sc.height = 16;
    sc.num_shapes = 2;
    const Dataset data = make_synthetic_dataset(seed, sc, 1);
    NetworkConfig cfg;
    cfg.seed = seed;
    HybridNetwork net(cfg);
    net.set_spike_function(SpikeFunction::Sigmoid);

    // Zero-initialized output projections would leave most of the fusion
    // graph without gradient.
    std::mt19937_64 rng(seed + 1);
    std::vector<Tensor> checked;
    for (auto& [name, t] : net.params().entries()) {
        const bool out_proj = name.find(".w_out") != std::string::npos || name.find(".b_out") != std::string::npos;
        if (out_proj) {
            Tensor w = t;
            fill(w, rng, -0.3, 0.3);
        }
        if (name.find(".b_down") != std::string::npos || name.find(".b_up") != std::string::npos) continue;
        checked.push_back(t);
    }

    const Batch batch = make_batch(data, {0}, cfg);
    Scalar best_margin = -1.0, best_theta = cfg.lif.v_threshold;
    for (Scalar delta : {0.0, 0.0137, -0.0211, 0.0293, -0.0347, 0.0419, 0.0531, -0.0613}) {
        for (auto& l : net.lif_configs()) l.v_threshold = cfg.lif.v_threshold + delta;
        ForwardTrace trace;
        {
            NoGradGuard guard;
            net.forward(batch, &trace);
        }
        if (trace.min_lif_margin > best_margin) {
            best_margin = trace.min_lif_margin;
            best_theta = cfg.lif.v_threshold + delta;
        }
    }
    for (auto& l : net.lif_configs()) l.v_threshold = best_theta;
    if (best_margin < kMinMargin) {
        m.skipped = 1;
        return m;
    }
    GradCheckOptions opts;
    opts.max_entries_per_param = entries_per_param;
    // Some adaptor gradients are ~1e-9, where central-difference roundoff is
    // already a few percent of the value.
    opts.abs_floor = 1e-6;
    track(m, grad_check([&] { return segmentation_loss(net.forward(batch), batch.labels); }, checked, opts));
    m.instances = 1;
    return m;
}

std::vector<ModuleGradCheck> run_gradchecks(const std::string& module) {
    std::vector<ModuleGradCheck> out;
    const bool all = module == "all";
    if (!all && module != "lif" && module != "atw" && module != "eds" && module != "csf" && module != "net") {
        throw std::invalid_argument("gradcheck: unknown module '" + module + "' (all, lif, atw, eds, csf, net)");
    }
    if (all || module == "lif") out.push_back(gradcheck_lif());
    if (all || module == "atw") out.push_back(gradcheck_atw());
    if (all || module == "eds") out.push_back(gradcheck_eds());
    if (all || module == "csf") out.push_back(gradcheck_csf());
    if (all || module == "net") out.push_back(gradcheck_network());
    return out;
}

}  // namespace hess
