#include "hess/lif.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "hess/ops.hpp"

namespace hess {

namespace {

Scalar logistic(Scalar x) { return 1.0 / (1.0 + std::exp(-x)); }

// H is a strict convex combination of V and X whenever V != X; rounding must
// not let it reach X (constant X = θ would otherwise fire after ~54 steps).
Scalar membrane_update(Scalar v, Scalar x, Scalar tau) {
    const Scalar h = v + (x - v) / tau;
    if (h == x && v != x) return std::nextafter(x, v);
    return h;
}

void require_finite(std::span<const Scalar> xs, const char* op) {
    for (auto v : xs)
        if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite input current");
}

}  // namespace

void LIFConfig::validate() const {
    if (!(tau > 1.0)) throw std::invalid_argument("LIFConfig: tau must be > 1");
    if (!(v_threshold > v_reset)) throw std::invalid_argument("LIFConfig: v_threshold must exceed v_reset");
}

LIFStepResult lif_step(const LIFState& state, const Tensor& input, const LIFConfig& cfg) {
    cfg.validate();
    require_finite(input.data(), "lif_step");
    if (!state.v.empty() && state.v.size() != input.size()) {
        throw ShapeError("lif_step: state has " + std::to_string(state.v.size()) + " neurons, input has " +
                         std::to_string(input.size()));
    }
    LIFStepResult r{Tensor(input.shape()), LIFState{std::vector<Scalar>(input.size())}};
    auto s = r.spikes.mutable_data();
    for (std::size_t i = 0; i < input.size(); ++i) {
        const Scalar v = state.v.empty() ? cfg.v_reset : state.v[i];
        const Scalar h = membrane_update(v, input[i], cfg.tau);
        const bool fire = h >= cfg.v_threshold;
        s[i] = fire ? 1.0 : 0.0;
        r.state.v[i] = fire ? cfg.v_reset : h;
    }
    return r;
}

Scalar surrogate_grad(Scalar h, const LIFConfig& cfg) {
    const Scalar s = logistic(cfg.surrogate_alpha * (h - cfg.v_threshold));
    return cfg.surrogate_alpha * s * (1.0 - s);
}

Tensor lif_sequence(const Tensor& currents, const LIFConfig& cfg, SpikeFunction fn, LIFTrace* trace) {
    cfg.validate();
    if (currents.rank() < 2) throw ShapeError("lif_sequence: expected N×T×... currents, got " + shape_str(currents.shape()));
    require_finite(currents.data(), "lif_sequence");
    const std::size_t n = currents.dim(0), steps = currents.dim(1);
    const std::size_t width = currents.size() / (n * steps);
    const Scalar decay = 1.0 - 1.0 / cfg.tau;
    const Scalar gain = 1.0 / cfg.tau;

    std::vector<Scalar> out(currents.size());
    auto pre = std::make_shared<std::vector<Scalar>>(currents.size());  // H_t
    auto x = currents.data();
    Scalar margin = std::numeric_limits<Scalar>::infinity();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < width; ++i) {
            Scalar v = cfg.v_reset;
            for (std::size_t t = 0; t < steps; ++t) {
                const std::size_t k = (b * steps + t) * width + i;
                const Scalar h = membrane_update(v, x[k], cfg.tau);
                (*pre)[k] = h;
                margin = std::min(margin, std::abs(h - cfg.v_threshold));
                const bool fire = h >= cfg.v_threshold;
                out[k] = fn == SpikeFunction::Heaviside ? (fire ? 1.0 : 0.0)
                                                        : logistic(cfg.surrogate_alpha * (h - cfg.v_threshold));
                v = fire ? cfg.v_reset : h;
            }
        }
    }
    if (trace) trace->min_margin = margin;

    return Tensor::make_result(currents.shape(), std::move(out), {currents}, [=](const auto& g, auto gin) {
        auto& gx = *gin[0];
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t i = 0; i < width; ++i) {
                Scalar dv = 0.0;  // dL/dV_t flowing back from step t+1
                for (std::size_t t = steps; t-- > 0;) {
                    const std::size_t k = (b * steps + t) * width + i;
                    const Scalar h = (*pre)[k];
                    const bool fire = h >= cfg.v_threshold;
                    const Scalar dh = g[k] * surrogate_grad(h, cfg) + (fire ? 0.0 : dv);
                    gx[k] += dh * gain;
                    dv = dh * decay;
                }
            }
        }
    });
}

Tensor lif_forward_seq(const std::vector<Tensor>& inputs, const LIFConfig& cfg) {
    if (inputs.empty()) throw std::invalid_argument("lif_forward_seq: empty input sequence");
    auto stacked = stack0(inputs);  // T×N×...
    if (stacked.rank() < 3) {
        // Inputs without a batch axis: treat as a single sample.
        return lif_sequence(reshape(stacked, [&] {
                                Shape s{1};
                                s.insert(s.end(), stacked.shape().begin(), stacked.shape().end());
                                return s;
                            }()),
                            cfg);
    }
    std::vector<std::size_t> perm(stacked.rank());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::swap(perm[0], perm[1]);
    return lif_sequence(permute(stacked, perm), cfg);
}

Scalar spike_rate(const Tensor& spikes) {
    Scalar total = 0.0;
    for (auto v : spikes.data()) {
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("spike_rate: tensor is not binary");
        total += v;
    }
    return total / static_cast<Scalar>(spikes.size());
}

Scalar activity_rate(const Tensor& x) {
    std::size_t nz = 0;
    for (auto v : x.data()) nz += v != 0.0;
    return static_cast<Scalar>(nz) / static_cast<Scalar>(x.size());
}

}  // namespace hess
