#pragma once

#include <vector>

#include "hess/tensor.hpp"

namespace hess {

struct LIFConfig {
    Scalar tau = 2.0;
    Scalar v_threshold = 1.0;
    Scalar v_reset = 0.0;
    Scalar surrogate_alpha = 4.0;

    /// Throws std::invalid_argument unless tau > 1 and threshold > reset.
    void validate() const;
};

/// Forward nonlinearity of the spike. `Heaviside` is the real neuron; its
/// backward uses the sigmoid surrogate. `Sigmoid` replaces the step by
/// σ(α(H − θ)) in the forward pass too, so forward and backward agree and
/// finite differences are meaningful. The reset is driven by the hard
/// threshold in both modes and is detached in backward.
enum class SpikeFunction { Heaviside, Sigmoid };

struct LIFState {
    std::vector<Scalar> v;
};

struct LIFStepResult {
    Tensor spikes;
    LIFState state;
};

/// One membrane update: H = V + (X − V)/τ; S = [H ≥ θ]; V' = S ? v_reset : H.
/// An empty state means "at rest" (v_reset everywhere).
LIFStepResult lif_step(const LIFState& state, const Tensor& input, const LIFConfig& cfg);

/// dS/dH surrogate: α σ(α(H − θ)) (1 − σ(α(H − θ))).
Scalar surrogate_grad(Scalar h, const LIFConfig& cfg);

/// Smallest |H − θ| seen by a sequence pass; lets gradient checks move
/// thresholds away from exact crossings.
struct LIFTrace {
    Scalar min_margin = 0.0;
};

/// Differentiable LIF over a current tensor N×T×(...): state starts at rest
/// for every sample and runs sequentially over T. Output has the same shape.
Tensor lif_sequence(const Tensor& currents, const LIFConfig& cfg, SpikeFunction fn = SpikeFunction::Heaviside,
                    LIFTrace* trace = nullptr);

/// T tensors of identical shape S -> spikes of shape S[0]×T×S[1:].
Tensor lif_forward_seq(const std::vector<Tensor>& inputs, const LIFConfig& cfg);

/// Mean of a binary tensor; throws std::invalid_argument on non-binary data.
Scalar spike_rate(const Tensor& spikes);

/// Fraction of nonzero entries (equals spike_rate for binary tensors).
Scalar activity_rate(const Tensor& x);

}  // namespace hess
