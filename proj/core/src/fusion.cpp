#include "hess/fusion.hpp"

#include <stdexcept>

#include "hess/ops.hpp"

namespace hess {

namespace {

Tensor maybe_register(ParamStore* store, const std::string& name, Tensor t) {
    if (store) return store->add(name, std::move(t));
    t.set_requires_grad(true);
    return t;
}

void require_shape(const Tensor& t, const Shape& expected, const char* op, const char* what) {
    if (t.shape() != expected) {
        throw ShapeError(std::string(op) + ": " + what + " has shape " + shape_str(t.shape()) + ", expected " +
                         shape_str(expected));
    }
}

// Constant G×(Q·K)×2 tensor holding each query's own (y, x) repeated K times.
Tensor base_points(std::size_t groups, const std::vector<std::pair<std::size_t, std::size_t>>& locations,
                   std::size_t k) {
    std::vector<Scalar> data;
    data.reserve(groups * locations.size() * k * 2);
    for (std::size_t g = 0; g < groups; ++g)
        for (const auto& [y, x] : locations)
            for (std::size_t j = 0; j < k; ++j) {
                data.push_back(static_cast<Scalar>(y));
                data.push_back(static_cast<Scalar>(x));
            }
    return Tensor(Shape{groups, locations.size() * k, 2}, std::move(data));
}

std::vector<std::pair<std::size_t, std::size_t>> all_locations(std::size_t h, std::size_t w) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out.emplace_back(y, x);
    return out;
}

}  // namespace

ATWParams ATWParams::create(std::size_t channels, std::size_t reduction, std::size_t points, std::mt19937_64& rng,
                            ParamStore* store, const std::string& prefix) {
    if (reduction == 0 || channels % reduction != 0) {
        throw std::invalid_argument("ATW: channels " + std::to_string(channels) + " not divisible by reduction " +
                                    std::to_string(reduction));
    }
    if (points == 0) throw std::invalid_argument("ATW: need at least one sampling point");
    const std::size_t c = channels, cr = channels / reduction, k = points;
    ATWParams p;
    p.channels = c;
    p.reduction = reduction;
    p.points = k;
    p.w_down = maybe_register(store, prefix + ".w_down", uniform_fan_in(rng, {c, cr}, c));
    p.b_down = maybe_register(store, prefix + ".b_down", Tensor::zeros({cr}));
    p.w_up = maybe_register(store, prefix + ".w_up", uniform_fan_in(rng, {cr, c}, cr));
    p.b_up = maybe_register(store, prefix + ".b_up", Tensor::zeros({c}));
    p.w_query = maybe_register(store, prefix + ".w_query", uniform_fan_in(rng, {c, c}, c));
    p.b_query = maybe_register(store, prefix + ".b_query", Tensor::zeros({c}));
    p.w_offset = maybe_register(store, prefix + ".w_offset", uniform_fan_in(rng, {c, 2 * k}, c));
    p.b_offset = maybe_register(store, prefix + ".b_offset", Tensor::zeros({2 * k}));
    p.w_attn = maybe_register(store, prefix + ".w_attn", uniform_fan_in(rng, {c, k}, c));
    p.b_attn = maybe_register(store, prefix + ".b_attn", Tensor::zeros({k}));
    p.w_out = maybe_register(store, prefix + ".w_out", Tensor::zeros({c, c}));
    p.b_out = maybe_register(store, prefix + ".b_out", Tensor::zeros({c}));
    return p;
}

Tensor atw_temporal_weights(const Tensor& f_snn, const ATWParams& p) {
    if (f_snn.rank() != 5) throw ShapeError("atw_temporal_weights: expected N×T×C×H×W, got " + shape_str(f_snn.shape()));
    const std::size_t n = f_snn.dim(0), t = f_snn.dim(1), c = f_snn.dim(2);
    if (c != p.channels) throw ShapeError("atw_temporal_weights: channel mismatch");
    auto pooled = reshape(global_avg_pool(reshape(f_snn, {n * t, c, f_snn.dim(3), f_snn.dim(4)})), {n, t, c});
    auto hidden = relu(linear(pooled, p.w_down, p.b_down));
    auto logits = linear(hidden, p.w_up, p.b_up);
    return softmax_axis(logits, 1);
}

Tensor atw_collapse(const Tensor& f_snn, const Tensor& alpha) {
    if (f_snn.rank() != 5) throw ShapeError("atw_collapse: expected N×T×C×H×W, got " + shape_str(f_snn.shape()));
    const std::size_t n = f_snn.dim(0), t = f_snn.dim(1), c = f_snn.dim(2), hw = f_snn.dim(3) * f_snn.dim(4);
    require_shape(alpha, {n, t, c}, "atw_collapse", "alpha");
    std::vector<Scalar> out(n * c * hw, 0.0);
    auto f = f_snn.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const Scalar a = alpha[(b * t + s) * c + ch];
                const Scalar* src = f.data() + ((b * t + s) * c + ch) * hw;
                Scalar* dst = out.data() + (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) dst[i] += a * src[i];
            }
    return Tensor::make_result(Shape{n, c, f_snn.dim(3), f_snn.dim(4)}, std::move(out), {f_snn, alpha},
                               [=](const auto& g, auto gin) {
                                   auto f = f_snn.data();
                                   for (std::size_t b = 0; b < n; ++b)
                                       for (std::size_t s = 0; s < t; ++s)
                                           for (std::size_t ch = 0; ch < c; ++ch) {
                                               const std::size_t ai = (b * t + s) * c + ch;
                                               const Scalar a = alpha[ai];
                                               const Scalar* go = g.data() + (b * c + ch) * hw;
                                               const Scalar* src = f.data() + ai * hw;
                                               Scalar acc = 0.0;
                                               for (std::size_t i = 0; i < hw; ++i) {
                                                   if (gin[0]) (*gin[0])[ai * hw + i] += a * go[i];
                                                   acc += go[i] * src[i];
                                               }
                                               if (gin[1]) (*gin[1])[ai] += acc;
                                           }
                               });
}

Tensor atw_inject(const Tensor& f_ann, const Tensor& f_snn_weighted, const ATWParams& p, AttentionProbe* probe) {
    if (f_ann.rank() != 4) throw ShapeError("atw_inject: expected N×C×H×W ANN features");
    if (f_ann.shape() != f_snn_weighted.shape()) {
        throw ShapeError("atw_inject: ANN features " + shape_str(f_ann.shape()) + " and weighted SNN features " +
                         shape_str(f_snn_weighted.shape()) + " differ");
    }
    const std::size_t n = f_ann.dim(0), c = f_ann.dim(1), h = f_ann.dim(2), w = f_ann.dim(3), k = p.points;
    if (c != p.channels) throw ShapeError("atw_inject: channel mismatch");
    const std::size_t q = h * w;

    auto tokens = reshape(permute(f_ann, {0, 2, 3, 1}), {n, q, c});
    auto query = linear(tokens, p.w_query, p.b_query);
    auto offsets = reshape(linear(query, p.w_offset, p.b_offset), {n, q * k, 2});
    auto points = add(offsets, base_points(n, all_locations(h, w), k));
    auto weights = softmax_axis(reshape(linear(query, p.w_attn, p.b_attn), {n, q, k}), 2);
    auto sampled = reshape(bilinear_sample_batched(f_snn_weighted, points), {n, q, k, c});
    auto attended = weighted_sum_k(sampled, weights);
    auto projected = linear(attended, p.w_out, p.b_out);
    if (probe) {
        probe->offsets = reshape(offsets, {n, q, k, 2});
        probe->weights = weights;
    }
    return add(f_ann, permute(reshape(projected, {n, h, w, c}), {0, 3, 1, 2}));
}

EDSParams EDSParams::create(std::size_t snn_channels, std::size_t ann_channels, std::size_t points,
                            std::mt19937_64& rng, ParamStore* store, const std::string& prefix) {
    if (points == 0) throw std::invalid_argument("EDS: need at least one sampling point");
    const std::size_t c = snn_channels, ca = ann_channels, k = points;
    EDSParams p;
    p.snn_channels = c;
    p.ann_channels = ca;
    p.points = k;
    p.w_offset = maybe_register(store, prefix + ".w_offset", uniform_fan_in(rng, {c, 2 * k}, c));
    p.b_offset = maybe_register(store, prefix + ".b_offset", Tensor::zeros({2 * k}));
    p.w_attn = maybe_register(store, prefix + ".w_attn", uniform_fan_in(rng, {c, k}, c));
    p.b_attn = maybe_register(store, prefix + ".b_attn", Tensor::zeros({k}));
    p.w_proj = maybe_register(store, prefix + ".w_proj", uniform_fan_in(rng, {ca, c}, ca));
    p.b_proj = maybe_register(store, prefix + ".b_proj", Tensor::zeros({c}));
    p.w_out = maybe_register(store, prefix + ".w_out", Tensor::zeros({c, c}));
    p.b_out = maybe_register(store, prefix + ".b_out", Tensor::zeros({c}));
    return p;
}

EDSHeads eds_offsets(const Tensor& f_snn, const EDSParams& p) {
    if (f_snn.rank() != 5) throw ShapeError("eds_offsets: expected N×T×C×H×W, got " + shape_str(f_snn.shape()));
    const std::size_t n = f_snn.dim(0), t = f_snn.dim(1), c = f_snn.dim(2), h = f_snn.dim(3), w = f_snn.dim(4);
    if (c != p.snn_channels) throw ShapeError("eds_offsets: channel mismatch");
    const std::size_t k = p.points;
    auto tokens = permute(f_snn, {0, 1, 3, 4, 2});
    EDSHeads heads;
    heads.offsets = reshape(linear(tokens, p.w_offset, p.b_offset), {n, t, h, w, k, 2});
    heads.weights = softmax_axis(linear(tokens, p.w_attn, p.b_attn), 4);
    return heads;
}

Tensor gather_locations(const Tensor& x, const ReferencePointSet& refs) {
    if (x.rank() != 4) throw ShapeError("gather_locations: expected T×C×H×W");
    const std::size_t t = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), r = refs.size();
    for (const auto& [y, xx] : refs.points)
        if (y >= h || xx >= w) throw std::out_of_range("reference point outside the feature map");
    std::vector<std::size_t> offs(r);
    for (std::size_t i = 0; i < r; ++i) offs[i] = refs.points[i].first * w + refs.points[i].second;
    std::vector<Scalar> out(t * r * c);
    for (std::size_t s = 0; s < t; ++s)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) out[(s * r + i) * c + ch] = x[(s * c + ch) * h * w + offs[i]];
    return Tensor::make_result(Shape{t, r, c}, std::move(out), {x}, [=](const auto& g, auto gin) {
        auto& gx = *gin[0];
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t ch = 0; ch < c; ++ch) gx[(s * c + ch) * h * w + offs[i]] += g[(s * r + i) * c + ch];
    });
}

Tensor scatter_add_locations(const Tensor& base, const Tensor& values, const ReferencePointSet& refs) {
    if (base.rank() != 4) throw ShapeError("scatter_add_locations: expected T×C×H×W base");
    const std::size_t t = base.dim(0), c = base.dim(1), h = base.dim(2), w = base.dim(3), r = refs.size();
    require_shape(values, {t, r, c}, "scatter_add_locations", "values");
    std::vector<std::size_t> offs(r);
    for (std::size_t i = 0; i < r; ++i) {
        const auto [y, x] = refs.points[i];
        if (y >= h || x >= w) throw std::out_of_range("reference point outside the feature map");
        offs[i] = y * w + x;
    }
    std::vector<Scalar> out(base.data().begin(), base.data().end());
    for (std::size_t s = 0; s < t; ++s)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) out[(s * c + ch) * h * w + offs[i]] += values[(s * r + i) * c + ch];
    return Tensor::make_result(base.shape(), std::move(out), {base, values}, [=](const auto& g, auto gin) {
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1])
            for (std::size_t s = 0; s < t; ++s)
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        (*gin[1])[(s * r + i) * c + ch] += g[(s * c + ch) * h * w + offs[i]];
    });
}

Tensor eds_inject(const Tensor& f_snn, const Tensor& f_ann, const std::vector<ReferencePointSet>& refs,
                  const EDSParams& p, AttentionProbe* probe) {
    if (f_snn.rank() != 5 || f_ann.rank() != 4) throw ShapeError("eds_inject: expected N×T×C×H×W and N×C×H×W inputs");
    const std::size_t n = f_snn.dim(0), t = f_snn.dim(1), c = f_snn.dim(2), h = f_snn.dim(3), w = f_snn.dim(4);
    const std::size_t k = p.points;
    if (c != p.snn_channels || f_ann.dim(1) != p.ann_channels) throw ShapeError("eds_inject: channel mismatch");
    if (f_ann.dim(0) != n || f_ann.dim(2) != h || f_ann.dim(3) != w) {
        throw ShapeError("eds_inject: ANN features " + shape_str(f_ann.shape()) + " do not align with SNN features " +
                         shape_str(f_snn.shape()));
    }
    if (refs.size() != n) throw std::invalid_argument("eds_inject: need one reference set per sample");
    for (const auto& set : refs)
        for (const auto& [y, x] : set.points)
            if (y >= h || x >= w) {
                throw std::out_of_range("eds_inject: reference point (" + std::to_string(y) + "," + std::to_string(x) +
                                        ") outside " + std::to_string(h) + "x" + std::to_string(w) + " features");
            }

    bool any = false;
    for (const auto& set : refs) any = any || !set.empty();
    if (!any) return f_snn;

    std::vector<Tensor> pieces;
    std::vector<Tensor> probe_offsets, probe_weights;
    pieces.reserve(n);
    for (std::size_t b = 0; b < n; ++b) {
        auto fs = select0(f_snn, b);  // T×C×H×W
        const auto& set = refs[b];
        if (set.empty()) {
            pieces.push_back(fs);
            continue;
        }
        const std::size_t r = set.size();
        auto fa = select0(f_ann, b);  // Ca×H×W
        auto proj = permute(linear(permute(fa, {1, 2, 0}), p.w_proj, p.b_proj), {2, 0, 1});  // C×H×W
        auto tokens = gather_locations(fs, set);                                            // T×R×C
        auto offsets = reshape(linear(tokens, p.w_offset, p.b_offset), {t, r * k, 2});
        auto points = add(offsets, base_points(t, set.points, k));
        auto weights = softmax_axis(reshape(linear(tokens, p.w_attn, p.b_attn), {t, r, k}), 2);
        auto from_ann = reshape(bilinear_sample_batched(reshape(proj, {1, c, h, w}), reshape(points, {1, t * r * k, 2})),
                                {t, r, k, c});
        auto from_snn = reshape(bilinear_sample_batched(fs, points), {t, r, k, c});
        auto injected = linear(weighted_sum_k(mul(from_ann, from_snn), weights), p.w_out, p.b_out);  // T×R×C
        pieces.push_back(scatter_add_locations(fs, injected, set));
        if (probe) {
            probe_offsets.push_back(reshape(offsets, {t, r, k, 2}));
            probe_weights.push_back(weights);
        }
    }
    if (probe && !probe_weights.empty()) {
        // Only the last sample's heads are kept when reference counts differ.
        probe->offsets = probe_offsets.back();
        probe->weights = probe_weights.back();
    }
    return stack0(pieces);
}

CSFParams CSFParams::create(std::size_t channels, std::mt19937_64& rng, ParamStore* store, const std::string& prefix) {
    CSFParams p;
    p.channels = channels;
    p.weight = maybe_register(store, prefix + ".weight", uniform_fan_in(rng, {channels, channels, 1, 1}, channels));
    p.bias = maybe_register(store, prefix + ".bias", uniform_fan_in(rng, {channels}, channels));
    return p;
}

Tensor csf_select(const Tensor& x, const CSFParams& p) {
    if (x.rank() != 4 || x.dim(1) != p.channels) throw ShapeError("csf_select: expected N×C×H×W with matching C");
    auto gate = global_avg_pool(conv2d(sigmoid(x), p.weight, p.bias, 1, 0));
    return mul_channel(x, gate);
}

Tensor csf_fuse(const Tensor& f_ann, const Tensor& f_snn, const CSFParams& ann, const CSFParams& snn) {
    if (f_snn.rank() != 5 || f_ann.rank() != 4 || f_snn.dim(0) != f_ann.dim(0) || f_snn.dim(2) != f_ann.dim(1) ||
        f_snn.dim(3) != f_ann.dim(2) || f_snn.dim(4) != f_ann.dim(3)) {
        throw ShapeError("csf_fuse: ANN " + shape_str(f_ann.shape()) + " and SNN " + shape_str(f_snn.shape()) +
                         " features are not compatible");
    }
    return add(csf_select(f_ann, ann), csf_select(sum_axis(f_snn, 1), snn));
}

}  // namespace hess
