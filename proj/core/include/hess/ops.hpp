#pragma once

#include <functional>
#include <vector>

#include "hess/tensor.hpp"

namespace hess {

// Elementwise arithmetic. Binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar factor);
Tensor add_scalar(const Tensor& x, Scalar value);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Sum of all entries, shape [1].
Tensor sum(const Tensor& x);
/// Mean of all entries, shape [1].
Tensor mean(const Tensor& x);
/// Sum over one axis; the axis is removed from the shape.
Tensor sum_axis(const Tensor& x, std::size_t axis);

/// Same data, new shape (element count must match).
Tensor reshape(const Tensor& x, Shape shape);
/// General axis permutation: output axis i is input axis perm[i].
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
/// Slice index `index` of the leading axis.
Tensor select0(const Tensor& x, std::size_t index);
/// Stack equally shaped tensors along a new leading axis.
Tensor stack0(const std::vector<Tensor>& parts);

/// Cross-correlation. input N×Cin×H×W, weight Cout×Cin×Kh×Kw, bias Cout
/// (may be undefined for no bias). Kernel sizes must be odd.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// y = xW + b over the trailing axis. W is Din×Dout, b is Dout (optional).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Numerically stable softmax along `axis`.
Tensor softmax_axis(const Tensor& x, std::size_t axis);

/// N×C×H×W -> N×C spatial mean.
Tensor global_avg_pool(const Tensor& x);

/// Scale each (n, c) plane of an N×C×H×W tensor by gate[n, c].
Tensor mul_channel(const Tensor& x, const Tensor& gate);

/// Normalization over all of C×H×W per sample (a single group), followed by
/// a per-channel affine transform.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = 1e-5);

/// Bilinear interpolation of a C×H×W map at K fractional (y, x) points
/// (K×2). Texels outside the map read as zero. Returns K×C.
Tensor bilinear_sample(const Tensor& map, const Tensor& points);

/// Batched form: maps G×C×H×W, points G×P×2 -> G×P×C. Differentiable in
/// both the map values and the point coordinates.
Tensor bilinear_sample_batched(const Tensor& maps, const Tensor& points);

/// Resize N×C×H×W to N×C×outH×outW with half-pixel-centre bilinear
/// interpolation (edge-clamped).
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// Σ_k weights[..., k] * values[..., k, :]. values is G×Q×K×C, weights G×Q×K.
/// Returns G×Q×C.
Tensor weighted_sum_k(const Tensor& values, const Tensor& weights);

/// Mean softmax cross-entropy. logits N×K×H×W, labels N·H·W class indices;
/// pixels labelled `ignore_index` are skipped.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, int ignore_index);

/// Analytic-vs-central-difference gradient comparison.
struct GradCheckOptions {
    Scalar eps = 1e-5;
    /// Entries checked per parameter tensor (0 = all). Entries are spread
    /// evenly over the tensor.
    std::size_t max_entries_per_param = 0;
    /// Lower bound of the relative-error denominator. Gradients far below it
    /// are compared in absolute terms, which keeps finite-difference roundoff
    /// on near-zero entries from dominating.
    Scalar abs_floor = 1e-8;
};

struct GradCheckResult {
    Scalar max_rel_error = 0.0;
    std::size_t entries_checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    Scalar worst_analytic = 0.0;
    Scalar worst_numeric = 0.0;
};

/// Relative error uses max(|analytic|, |numeric|, abs_floor) as denominator.
/// Throws if `fn` produces a non-finite value.
GradCheckResult grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params,
                           const GradCheckOptions& options = {});

}  // namespace hess
