#pragma once

#include <random>
#include <string>
#include <vector>

#include "hess/params.hpp"
#include "hess/tensor.hpp"
#include "hess/voxel.hpp"

namespace hess {

// ---------------------------------------------------------------------------
// Adaptive temporal weighting injector (SNN -> ANN).
//
// Spike features are squeezed spatially, passed through a bottleneck adaptor
// and turned into per-channel weights over time; the time-collapsed SNN map
// then serves as the value map of a single-head deformable cross-attention
// whose queries are the ANN locations.
// ---------------------------------------------------------------------------

struct ATWParams {
    std::size_t channels = 0;
    std::size_t reduction = 4;
    std::size_t points = 4;

    Tensor w_down, b_down;  // C×(C/r), C/r
    Tensor w_up, b_up;      // (C/r)×C, C
    Tensor w_query, b_query;
    Tensor w_offset, b_offset;  // C×2K, 2K (bias zero-initialized)
    Tensor w_attn, b_attn;      // C×K, K
    Tensor w_out, b_out;        // C×C, C (zero-initialized)

    static ATWParams create(std::size_t channels, std::size_t reduction, std::size_t points, std::mt19937_64& rng,
                            ParamStore* store = nullptr, const std::string& prefix = "atw");
};

/// Softmax over T of the adaptor output, independently per (n, c). N×T×C.
Tensor atw_temporal_weights(const Tensor& f_snn, const ATWParams& p);

/// Σ_t α[n,t,c] · F[n,t,c,:,:]  ->  N×C×H×W.
Tensor atw_collapse(const Tensor& f_snn, const Tensor& alpha);

/// Optional view of the attention internals.
struct AttentionProbe {
    Tensor offsets;  // N×Q×K×2, pixels
    Tensor weights;  // N×Q×K, softmax over K
};

/// F_ANN + OutProj(Σ_k A_k · bilinear(F_SNN^W, q + Δ_k)) for every ANN
/// location q.
Tensor atw_inject(const Tensor& f_ann, const Tensor& f_snn_weighted, const ATWParams& p,
                  AttentionProbe* probe = nullptr);

// ---------------------------------------------------------------------------
// Event-driven sparse injector (ANN -> SNN), anchored on event locations.
// ---------------------------------------------------------------------------

struct EDSParams {
    std::size_t snn_channels = 0;
    std::size_t ann_channels = 0;
    std::size_t points = 4;

    Tensor w_offset, b_offset;  // C_snn×2K, 2K (bias zero-initialized)
    Tensor w_attn, b_attn;      // C_snn×K, K
    Tensor w_proj, b_proj;      // C_ann×C_snn, C_snn
    Tensor w_out, b_out;        // C_snn×C_snn, C_snn (zero-initialized)

    static EDSParams create(std::size_t snn_channels, std::size_t ann_channels, std::size_t points,
                            std::mt19937_64& rng, ParamStore* store = nullptr, const std::string& prefix = "eds");
};

struct EDSHeads {
    Tensor offsets;  // N×T×H×W×K×2
    Tensor weights;  // N×T×H×W×K
};

/// Shared per-location heads evaluated densely at every location and step.
EDSHeads eds_offsets(const Tensor& f_snn, const EDSParams& p);

/// F_SNN plus, at each reference point r and step t,
/// OutProj(Σ_k A_k · Proj(F_ANN)[r + Δ_k] ⊙ F_SNN[t, r + Δ_k]).
/// Locations that are not reference points are returned unchanged.
/// `refs` holds one set per batch sample.
Tensor eds_inject(const Tensor& f_snn, const Tensor& f_ann, const std::vector<ReferencePointSet>& refs,
                  const EDSParams& p, AttentionProbe* probe = nullptr);

// ---------------------------------------------------------------------------
// Channel selection fusion.
// ---------------------------------------------------------------------------

struct CSFParams {
    std::size_t channels = 0;
    Tensor weight;  // C×C×1×1
    Tensor bias;    // C

    static CSFParams create(std::size_t channels, std::mt19937_64& rng, ParamStore* store = nullptr,
                            const std::string& prefix = "csf");
};

/// x · GAP(Conv1×1(σ(x))), gate broadcast over H×W.
Tensor csf_select(const Tensor& x, const CSFParams& p);

/// csf_select(F_ANN^o; ann) + csf_select(Σ_t F_SNN^o; snn).
Tensor csf_fuse(const Tensor& f_ann, const Tensor& f_snn, const CSFParams& ann, const CSFParams& snn);

// Sparse location helpers used by the EDS injector.

/// x: T×C×H×W -> T×R×C values at the reference points.
Tensor gather_locations(const Tensor& x, const ReferencePointSet& refs);

/// base: T×C×H×W, values: T×R×C -> base with values added at the points.
Tensor scatter_add_locations(const Tensor& base, const Tensor& values, const ReferencePointSet& refs);

}  // namespace hess
