#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "hess/fusion.hpp"
#include "hess/ops.hpp"
#include "test_util.hpp"

using namespace hess;
using hess::testing::random_spikes;
using hess::testing::random_tensor;

namespace {

Scalar sigm(Scalar x) { return 1.0 / (1.0 + std::exp(-x)); }

void fill(Tensor& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.mutable_data()) v = dist(rng);
}

void set_identity(Tensor& m) {
    auto d = m.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) d[i * cols + i] = 1.0;
}

// Explicit-loop reference for the temporal weights.
std::vector<Scalar> alpha_oracle(const Tensor& f, const ATWParams& p) {
    const std::size_t n = f.dim(0), t = f.dim(1), c = f.dim(2), hw = f.dim(3) * f.dim(4), cr = c / p.reduction;
    std::vector<Scalar> logits(n * t * c), alpha(n * t * c);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t s = 0; s < t; ++s) {
            std::vector<Scalar> pooled(c, 0.0), hidden(cr, 0.0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t i = 0; i < hw; ++i) pooled[ch] += f[((b * t + s) * c + ch) * hw + i];
                pooled[ch] /= static_cast<Scalar>(hw);
            }
            for (std::size_t j = 0; j < cr; ++j) {
                Scalar acc = p.b_down[j];
                for (std::size_t ch = 0; ch < c; ++ch) acc += pooled[ch] * p.w_down[ch * cr + j];
                hidden[j] = std::max(acc, 0.0);
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
                Scalar acc = p.b_up[ch];
                for (std::size_t j = 0; j < cr; ++j) acc += hidden[j] * p.w_up[j * c + ch];
                logits[(b * t + s) * c + ch] = acc;
            }
        }
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            Scalar mx = -1e300, z = 0.0;
            for (std::size_t s = 0; s < t; ++s) mx = std::max(mx, logits[(b * t + s) * c + ch]);
            for (std::size_t s = 0; s < t; ++s) z += std::exp(logits[(b * t + s) * c + ch] - mx);
            for (std::size_t s = 0; s < t; ++s)
                alpha[(b * t + s) * c + ch] = std::exp(logits[(b * t + s) * c + ch] - mx) / z;
        }
    return alpha;
}

// x · mean(Conv1×1(σ(x))) per channel, explicit loops.
std::vector<Scalar> select_oracle(const std::vector<Scalar>& x, std::size_t n, std::size_t c, std::size_t hw,
                                  const CSFParams& p) {
    std::vector<Scalar> out(x.size());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t co = 0; co < c; ++co) {
            Scalar gate = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                Scalar z = p.bias[co];
                for (std::size_t ci = 0; ci < c; ++ci) z += p.weight[co * c + ci] * sigm(x[(b * c + ci) * hw + i]);
                gate += z;
            }
            gate /= static_cast<Scalar>(hw);
            for (std::size_t i = 0; i < hw; ++i) out[(b * c + co) * hw + i] = x[(b * c + co) * hw + i] * gate;
        }
    return out;
}

ReferencePointSet make_refs(std::size_t h, std::size_t w, std::vector<std::pair<std::size_t, std::size_t>> pts) {
    ReferencePointSet r;
    r.height = h;
    r.width = w;
    r.scale = 1;
    r.points = std::move(pts);
    return r;
}

ReferencePointSet random_refs(std::mt19937_64& rng, std::size_t h, std::size_t w, double rate) {
    std::bernoulli_distribution keep(rate);
    std::vector<std::pair<std::size_t, std::size_t>> pts;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (keep(rng)) pts.emplace_back(y, x);
    return make_refs(h, w, std::move(pts));
}

// Distance of the nearest sampling coordinate to a grid line, where bilinear
// interpolation has a kink. offsets: ...×K×2 laid out per query location.
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

}  // namespace

TEST_CASE("temporal weights: loop oracle, uniform on zero input, normalization") {
    std::mt19937_64 rng(11);
    auto p = ATWParams::create(4, 2, 4, rng);
    fill(p.b_down, rng);
    fill(p.b_up, rng);
    auto f = random_tensor(rng, {1, 3, 4, 4, 4});
    auto alpha = atw_temporal_weights(f, p);
    REQUIRE(alpha.shape() == Shape{1, 3, 4});
    auto expect = alpha_oracle(f, p);
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(alpha[i] - expect[i]) <= 1e-12);

    auto q = ATWParams::create(4, 4, 4, rng);
    auto uniform = atw_temporal_weights(Tensor::zeros({2, 5, 4, 3, 3}), q);
    for (auto v : uniform.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

    for (int trial = 0; trial < 100; ++trial) {
        auto a = atw_temporal_weights(random_spikes(rng, {2, 4, 4, 3, 3}), p);
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 4; ++c) {
                Scalar s = 0.0;
                for (std::size_t t = 0; t < 4; ++t) s += a[(b * 4 + t) * 4 + c];
                CHECK(std::abs(s - 1.0) <= 1e-12);
            }
    }
}

TEST_CASE("temporal collapse: one-hot selection, uniform over constant, loop oracle") {
    std::mt19937_64 rng(12);
    auto f = random_tensor(rng, {2, 3, 2, 3, 4});
    std::vector<Scalar> onehot(2 * 3 * 2, 0.0);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 2; ++c) onehot[(b * 3 + 1) * 2 + c] = 1.0;
    auto picked = atw_collapse(f, Tensor(Shape{2, 3, 2}, onehot));
    REQUIRE(picked.shape() == Shape{2, 2, 3, 4});
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 2 * 12; ++i) CHECK(picked[b * 24 + i] == f[(b * 3 + 1) * 24 + i]);

    auto slice = random_tensor(rng, {1, 1, 2, 3, 4});
    auto repeated = stack0({reshape(slice, {2, 3, 4}), reshape(slice, {2, 3, 4}), reshape(slice, {2, 3, 4})});
    auto avg = atw_collapse(reshape(repeated, {1, 3, 2, 3, 4}), Tensor::full({1, 3, 2}, 1.0 / 3.0));
    for (std::size_t i = 0; i < avg.size(); ++i) CHECK(avg[i] == doctest::Approx(slice[i]).epsilon(1e-14));

    auto alpha = random_tensor(rng, {2, 3, 2}, 0.0, 1.0);
    auto out = atw_collapse(f, alpha);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < 12; ++i) {
                Scalar acc = 0.0;
                for (std::size_t t = 0; t < 3; ++t) acc += alpha[(b * 3 + t) * 2 + c] * f[((b * 3 + t) * 2 + c) * 12 + i];
                CHECK(std::abs(out[(b * 2 + c) * 12 + i] - acc) <= 1e-12);
            }
}

TEST_CASE("ATW injection: identity at init and on silent SNN features") {
    std::mt19937_64 rng(13);
    auto p = ATWParams::create(4, 4, 4, rng);
    auto f_ann = random_tensor(rng, {2, 4, 5, 6});
    auto f_w = random_tensor(rng, {2, 4, 5, 6});
    AttentionProbe probe;
    auto fresh = atw_inject(f_ann, f_w, p, &probe);
    for (std::size_t i = 0; i < f_ann.size(); ++i) CHECK(fresh[i] == f_ann[i]);
    REQUIRE(probe.weights.shape() == Shape{2, 30, 4});
    REQUIRE(probe.offsets.shape() == Shape{2, 30, 4, 2});

    fill(p.w_out, rng);
    fill(p.b_offset, rng, -2.0, 2.0);
    auto silent = atw_inject(f_ann, Tensor::zeros({2, 4, 5, 6}), p);
    for (std::size_t i = 0; i < f_ann.size(); ++i) CHECK(silent[i] == f_ann[i]);

    auto changed = atw_inject(f_ann, f_w, p);
    Scalar diff = 0.0;
    for (std::size_t i = 0; i < f_ann.size(); ++i) diff = std::max(diff, std::abs(changed[i] - f_ann[i]));
    CHECK(diff > 1e-3);

    CHECK_THROWS_AS(atw_inject(f_ann, Tensor::zeros({2, 4, 5, 5}), p), ShapeError);
}

TEST_CASE("ATW injection: fixed offset samples the shifted value map") {
    std::mt19937_64 rng(14);
    auto p = ATWParams::create(2, 2, 1, rng);
    std::fill(p.w_offset.mutable_data().begin(), p.w_offset.mutable_data().end(), 0.0);
    p.b_offset.mutable_data()[0] = 0.0;  // dy
    p.b_offset.mutable_data()[1] = 1.0;  // dx
    set_identity(p.w_out);
    auto f_ann = random_tensor(rng, {1, 2, 3, 4});
    auto f_w = random_tensor(rng, {1, 2, 3, 4});
    auto out = atw_inject(f_ann, f_w, p);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t x = 0; x < 4; ++x) {
                const std::size_t i = (c * 3 + y) * 4 + x;
                const Scalar shifted = x + 1 < 4 ? f_w[i + 1] : 0.0;
                CHECK(out[i] == doctest::Approx(f_ann[i] + shifted).epsilon(1e-14));
            }
}

TEST_CASE("ATW attention weights sum to one over K") {
    std::mt19937_64 rng(15);
    auto p = ATWParams::create(4, 2, 4, rng);
    fill(p.b_attn, rng, -3.0, 3.0);
    for (int trial = 0; trial < 100; ++trial) {
        AttentionProbe probe;
        atw_inject(random_tensor(rng, {1, 4, 3, 3}, -3, 3), random_tensor(rng, {1, 4, 3, 3}), p, &probe);
        for (std::size_t q = 0; q < 9; ++q) {
            Scalar s = 0.0;
            for (std::size_t k = 0; k < 4; ++k) s += probe.weights[q * 4 + k];
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("EDS heads: zero offsets on zero input, loop oracle, normalization") {
    std::mt19937_64 rng(16);
    auto p = EDSParams::create(3, 5, 4, rng);
    auto zero = eds_offsets(Tensor::zeros({1, 2, 3, 4, 4}), p);
    REQUIRE(zero.offsets.shape() == Shape{1, 2, 4, 4, 4, 2});
    REQUIRE(zero.weights.shape() == Shape{1, 2, 4, 4, 4});
    for (auto v : zero.offsets.data()) CHECK(v == 0.0);

    fill(p.b_offset, rng);
    fill(p.b_attn, rng);
    auto f = random_tensor(rng, {2, 2, 3, 3, 4});
    auto heads = eds_offsets(f, p);
    const std::size_t k = 4, c = 3, hw = 12;
    for (std::size_t nt = 0; nt < 4; ++nt)
        for (std::size_t i = 0; i < hw; ++i) {
            std::vector<Scalar> logits(k);
            Scalar mx = -1e300, z = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                for (std::size_t d = 0; d < 2; ++d) {
                    Scalar acc = p.b_offset[j * 2 + d];
                    for (std::size_t ch = 0; ch < c; ++ch) acc += f[(nt * c + ch) * hw + i] * p.w_offset[ch * 2 * k + j * 2 + d];
                    CHECK(std::abs(heads.offsets[((nt * hw + i) * k + j) * 2 + d] - acc) <= 1e-12);
                }
                Scalar a = p.b_attn[j];
                for (std::size_t ch = 0; ch < c; ++ch) a += f[(nt * c + ch) * hw + i] * p.w_attn[ch * k + j];
                logits[j] = a;
                mx = std::max(mx, a);
            }
            for (auto l : logits) z += std::exp(l - mx);
            Scalar total = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const Scalar w = heads.weights[(nt * hw + i) * k + j];
                CHECK(std::abs(w - std::exp(logits[j] - mx) / z) <= 1e-12);
                total += w;
            }
            CHECK(std::abs(total - 1.0) <= 1e-12);
        }
}

TEST_CASE("EDS injection: empty reference set is the identity") {
    std::mt19937_64 rng(17);
    auto p = EDSParams::create(2, 3, 4, rng);
    fill(p.w_out, rng);
    auto f_snn = random_spikes(rng, {2, 3, 2, 4, 4});
    auto f_ann = random_tensor(rng, {2, 3, 4, 4});
    std::vector<ReferencePointSet> none(2, make_refs(4, 4, {}));
    auto out = eds_inject(f_snn, f_ann, none, p);
    REQUIRE(out.shape() == f_snn.shape());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == f_snn[i]);

    std::vector<ReferencePointSet> outside{make_refs(4, 4, {{4, 0}}), make_refs(4, 4, {})};
    CHECK_THROWS_AS(eds_inject(f_snn, f_ann, outside, p), std::out_of_range);
}

TEST_CASE("EDS injection: hand case with zero offsets, one point, identity projections") {
    std::mt19937_64 rng(18);
    auto p = EDSParams::create(2, 2, 1, rng);
    std::fill(p.w_offset.mutable_data().begin(), p.w_offset.mutable_data().end(), 0.0);
    set_identity(p.w_proj);
    set_identity(p.w_out);
    auto f_snn = random_tensor(rng, {1, 2, 2, 4, 4});
    auto f_ann = random_tensor(rng, {1, 2, 4, 4});
    const std::vector<std::pair<std::size_t, std::size_t>> pts{{0, 0}, {1, 2}, {3, 3}};
    auto out = eds_inject(f_snn, f_ann, {make_refs(4, 4, pts)}, p);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 4; ++x) {
                    const std::size_t i = ((t * 2 + c) * 4 + y) * 4 + x;
                    const bool ref = std::find(pts.begin(), pts.end(), std::pair{y, x}) != pts.end();
                    const Scalar expect = ref ? f_snn[i] + f_ann[(c * 4 + y) * 4 + x] * f_snn[i] : f_snn[i];
                    CHECK(out[i] == doctest::Approx(expect).epsilon(1e-14));
                }
}

TEST_CASE("EDS injection changes values only at reference points") {
    std::mt19937_64 rng(19);
    auto p = EDSParams::create(3, 4, 4, rng);
    fill(p.w_out, rng);
    fill(p.b_out, rng);
    fill(p.b_offset, rng, -1.5, 1.5);
    for (int trial = 0; trial < 20; ++trial) {
        auto f_snn = random_spikes(rng, {2, 3, 3, 5, 6}, 0.4);
        auto f_ann = random_tensor(rng, {2, 4, 5, 6});
        std::vector<ReferencePointSet> refs{random_refs(rng, 5, 6, 0.3), random_refs(rng, 5, 6, 0.3)};
        auto out = eds_inject(f_snn, f_ann, refs, p);
        for (std::size_t b = 0; b < 2; ++b) {
            std::set<std::pair<std::size_t, std::size_t>> mask(refs[b].points.begin(), refs[b].points.end());
            for (std::size_t tc = 0; tc < 9; ++tc)
                for (std::size_t y = 0; y < 5; ++y)
                    for (std::size_t x = 0; x < 6; ++x) {
                        const std::size_t i = ((b * 9 + tc) * 5 + y) * 6 + x;
                        const bool changed = out[i] != f_snn[i];
                        if (!mask.count({y, x})) CHECK_FALSE(changed);
                    }
        }
    }
}

TEST_CASE("EDS injection: duplicated points with halved weights leave the output unchanged") {
    std::mt19937_64 rng(20);
    auto one = EDSParams::create(3, 2, 1, rng);
    fill(one.b_offset, rng, -1.0, 1.0);
    fill(one.w_out, rng);
    fill(one.b_attn, rng);
    auto two = EDSParams::create(3, 2, 2, rng);
    two.w_proj = one.w_proj;
    two.b_proj = one.b_proj;
    two.w_out = one.w_out;
    two.b_out = one.b_out;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < 2; ++k) {
            two.w_attn.mutable_data()[c * 2 + k] = one.w_attn[c];
            for (std::size_t d = 0; d < 2; ++d) two.w_offset.mutable_data()[c * 4 + k * 2 + d] = one.w_offset[c * 2 + d];
        }
    for (std::size_t k = 0; k < 2; ++k) {
        two.b_attn.mutable_data()[k] = one.b_attn[0];
        for (std::size_t d = 0; d < 2; ++d) two.b_offset.mutable_data()[k * 2 + d] = one.b_offset[d];
    }
    auto f_snn = random_tensor(rng, {1, 2, 3, 4, 5});
    auto f_ann = random_tensor(rng, {1, 2, 4, 5});
    std::vector<ReferencePointSet> refs{random_refs(rng, 4, 5, 0.5)};
    AttentionProbe probe;
    auto a = eds_inject(f_snn, f_ann, refs, one);
    auto b = eds_inject(f_snn, f_ann, refs, two, &probe);
    for (auto w : probe.weights.data()) CHECK(w == 0.5);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("channel selection: zero input, constant hand case, frozen-gate homogeneity") {
    std::mt19937_64 rng(21);
    auto p = CSFParams::create(3, rng);
    auto zero = csf_select(Tensor::zeros({1, 3, 4, 4}), p);
    for (auto v : zero.data()) CHECK(v == 0.0);

    std::fill(p.weight.mutable_data().begin(), p.weight.mutable_data().end(), 0.0);
    for (std::size_t c = 0; c < 3; ++c) p.weight.mutable_data()[c * 3 + c] = 1.0;
    std::fill(p.bias.mutable_data().begin(), p.bias.mutable_data().end(), 0.0);
    for (Scalar c : {-2.0, -0.3, 0.7, 1.5}) {
        auto s = csf_select(Tensor::full({2, 3, 3, 5}, c), p);
        for (auto v : s.data()) CHECK(v == doctest::Approx(c * sigm(c)).epsilon(1e-14));
    }

    auto x = random_tensor(rng, {1, 3, 4, 4});
    auto gate = random_tensor(rng, {1, 3});
    auto once = mul_channel(x, gate);
    auto twice = mul_channel(scale(x, 2.0), gate);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == 2.0 * once[i]);
}

TEST_CASE("channel selection fusion: loop oracle and silent SNN branch") {
    std::mt19937_64 rng(22);
    auto ann = CSFParams::create(3, rng);
    auto snn = CSFParams::create(3, rng);
    auto f_ann = random_tensor(rng, {2, 3, 4, 5});
    auto f_snn = random_tensor(rng, {2, 4, 3, 4, 5});
    auto fused = csf_fuse(f_ann, f_snn, ann, snn);
    std::vector<Scalar> xa(f_ann.data().begin(), f_ann.data().end()), xs(2 * 3 * 20, 0.0);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t i = 0; i < 60; ++i) xs[b * 60 + i] += f_snn[(b * 4 + t) * 60 + i];
    auto sa = select_oracle(xa, 2, 3, 20, ann);
    auto ss = select_oracle(xs, 2, 3, 20, snn);
    for (std::size_t i = 0; i < fused.size(); ++i) CHECK(std::abs(fused[i] - (sa[i] + ss[i])) <= 1e-12);

    auto ann_only = csf_fuse(f_ann, Tensor::zeros({2, 4, 3, 4, 5}), ann, snn);
    auto direct = csf_select(f_ann, ann);
    for (std::size_t i = 0; i < direct.size(); ++i) CHECK(ann_only[i] == direct[i]);
    auto both_zero = csf_fuse(Tensor::zeros({2, 3, 4, 5}), Tensor::zeros({2, 4, 3, 4, 5}), ann, snn);
    for (auto v : both_zero.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(csf_fuse(f_ann, Tensor::zeros({2, 4, 2, 4, 5}), ann, snn), ShapeError);
}

TEST_CASE("fusion operations pass gradient checks") {
    std::mt19937_64 rng(23);
    double worst = 0.0;
    auto track = [&](const GradCheckResult& r) { worst = std::max(worst, r.max_rel_error); };
    int checked = 0;
    for (int trial = 0; trial < 10 && checked < 5; ++trial) {
        auto atw = ATWParams::create(4, 2, 3, rng);
        fill(atw.w_out, rng);
        fill(atw.b_offset, rng, -1.0, 1.0);
        fill(atw.b_down, rng, 0.1, 0.5);
        auto f_snn = random_tensor(rng, {1, 3, 4, 3, 4});
        auto f_ann = random_tensor(rng, {1, 4, 3, 4});
        auto probe4 = random_tensor(rng, {1, 4, 3, 4});
        auto probe_a = random_tensor(rng, {1, 3, 4});
        // With the hidden units active, the adaptor biases shift every timestep's logits equally, so their
        // gradients are exactly zero under the softmax over T; left out.
        track(grad_check([&] { return sum(mul(atw_temporal_weights(f_snn, atw), probe_a)); },
                         {f_snn, atw.w_down, atw.w_up}));
        auto alpha = random_tensor(rng, {1, 3, 4}, 0.0, 1.0);
        track(grad_check([&] { return sum(mul(atw_collapse(f_snn, alpha), probe4)); }, {f_snn, alpha}));
        auto f_w = random_tensor(rng, {1, 4, 3, 4});
        std::vector<std::pair<std::size_t, std::size_t>> grid;
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t x = 0; x < 4; ++x) grid.emplace_back(y, x);
        AttentionProbe atw_probe;
        atw_inject(f_ann, f_w, atw, &atw_probe);
        if (kink_margin(atw_probe.offsets, grid, 3) < 1e-3) continue;
        track(grad_check([&] { return sum(mul(atw_inject(f_ann, f_w, atw), probe4)); },
                         {f_ann, f_w, atw.w_query, atw.b_query, atw.w_offset, atw.b_offset, atw.w_attn, atw.b_attn,
                          atw.w_out, atw.b_out}));
        track(grad_check(
            [&] {
                auto w = atw_collapse(f_snn, atw_temporal_weights(f_snn, atw));
                return sum(mul(atw_inject(f_ann, w, atw), probe4));
            },
            {f_snn, atw.w_up}));

        auto eds = EDSParams::create(4, 3, 2, rng);
        fill(eds.w_out, rng);
        fill(eds.b_offset, rng, -1.0, 1.0);
        auto f_ann3 = random_tensor(rng, {2, 3, 3, 4});
        auto f_snn2 = random_tensor(rng, {2, 2, 4, 3, 4});
        auto probe5 = random_tensor(rng, {2, 2, 4, 3, 4});
        std::vector<ReferencePointSet> refs{random_refs(rng, 3, 4, 0.5), make_refs(3, 4, {{1, 1}})};
        Scalar eds_margin = 1.0;
        for (std::size_t b = 0; b < 2; ++b) {
            AttentionProbe eds_probe;
            eds_inject(reshape(select0(f_snn2, b), {1, 2, 4, 3, 4}), reshape(select0(f_ann3, b), {1, 3, 3, 4}), {refs[b]},
                       eds, &eds_probe);
            if (!refs[b].empty()) eds_margin = std::min(eds_margin, kink_margin(eds_probe.offsets, refs[b].points, 2));
        }
        if (eds_margin < 1e-3) continue;
        track(grad_check([&] { return sum(mul(eds_inject(f_snn2, f_ann3, refs, eds), probe5)); },
                         {f_snn2, f_ann3, eds.w_offset, eds.b_offset, eds.w_attn, eds.b_attn, eds.w_proj, eds.b_proj,
                          eds.w_out, eds.b_out}));
        auto probe_o = random_tensor(rng, {2, 2, 3, 4, 2, 2});
        auto probe_w = random_tensor(rng, {2, 2, 3, 4, 2});
        track(grad_check(
            [&] {
                auto h = eds_offsets(f_snn2, eds);
                return add(sum(mul(h.offsets, probe_o)), sum(mul(h.weights, probe_w)));
            },
            {f_snn2, eds.w_offset, eds.w_attn}));

        auto csf_a = CSFParams::create(4, rng);
        auto csf_s = CSFParams::create(4, rng);
        track(grad_check([&] { return sum(mul(csf_select(f_ann, csf_a), probe4)); }, {f_ann, csf_a.weight, csf_a.bias}));
        track(grad_check([&] { return sum(mul(csf_fuse(f_ann, f_snn, csf_a, csf_s), probe4)); },
                         {f_ann, f_snn, csf_a.weight, csf_s.weight, csf_s.bias}));
        ++checked;
    }
    CHECK(checked >= 5);
    CHECK(worst <= 1e-4);
}
