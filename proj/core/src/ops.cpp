#include "hess/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hess {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
    }
}

std::vector<Scalar> copy_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// [first, last) range of output positions whose input index o*stride - pad + k
// falls inside [0, in).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t stride,
                                                std::size_t pad, std::size_t k) {
    const long s = static_cast<long>(stride);
    const long off = static_cast<long>(k) - static_cast<long>(pad);
    long first = 0;
    if (off < 0) first = (-off + s - 1) / s;
    long last = (static_cast<long>(in) - 1 - off);
    if (last < 0) return {0, 0};
    last = last / s + 1;
    last = std::min<long>(last, static_cast<long>(out));
    if (first >= last) return {0, 0};
    return {static_cast<std::size_t>(first), static_cast<std::size_t>(last)};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](const auto& g, auto gin) {
        for (auto* buf : gin) {
            if (!buf) continue;
            for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](const auto& g, auto gin) {
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](const auto& g, auto gin) {
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * b[i];
        if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * a[i];
    });
}

Tensor scale(const Tensor& x, Scalar factor) {
    std::vector<Scalar> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    return Tensor::make_result(x.shape(), std::move(out), {x}, [factor](const auto& g, auto gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
    });
}

Tensor add_scalar(const Tensor& x, Scalar value) {
    std::vector<Scalar> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + value;
    return Tensor::make_result(x.shape(), std::move(out), {x}, [](const auto& g, auto gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    });
}

Tensor square(const Tensor& x) { return mul(x, x); }

Tensor relu(const Tensor& x) {
    std::vector<Scalar> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return Tensor::make_result(x.shape(), std::move(out), {x}, [x](const auto& g, auto gin) {
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) (*gin[0])[i] += g[i];
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<Scalar> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    auto y = std::make_shared<std::vector<Scalar>>(out);
    return Tensor::make_result(x.shape(), std::move(out), {x}, [y](const auto& g, auto gin) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Scalar s = (*y)[i];
            (*gin[0])[i] += g[i] * s * (1.0 - s);
        }
    });
}

Tensor sum(const Tensor& x) {
    Scalar total = 0.0;
    for (auto v : x.data()) total += v;
    const std::size_t n = x.size();
    return Tensor::make_result(Shape{1}, {total}, {x}, [n](const auto& g, auto gin) {
        for (std::size_t i = 0; i < n; ++i) (*gin[0])[i] += g[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<Scalar>(x.size())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw ShapeError("sum_axis: axis out of range for " + shape_str(x.shape()));
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<Scalar> out(outer * inner, 0.0);
    auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * len + l) * inner + i];
    return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                               [outer, inner, len](const auto& g, auto gin) {
                                   auto& gx = *gin[0];
                                   for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t l = 0; l < len; ++l)
                                           for (std::size_t i = 0; i < inner; ++i)
                                               gx[(o * len + l) * inner + i] += g[o * inner + i];
                               });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    return Tensor::make_result(std::move(shape), copy_of(x), {x}, [](const auto& g, auto gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    const auto& s = x.shape();
    const std::size_t r = s.size();
    if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch");
    std::vector<bool> used(r, false);
    for (auto p : perm) {
        if (p >= r || used[p]) throw ShapeError("permute: invalid permutation");
        used[p] = true;
    }
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
    Shape out_shape(r);
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = s[perm[i]];
        step[i] = in_stride[perm[i]];
    }
    // Source offset of each output element, in output order.
    std::vector<std::size_t> src(x.size());
    std::vector<std::size_t> idx(r, 0);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < src.size(); ++k) {
        src[k] = offset;
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            offset += step[d];
            if (idx[d] < out_shape[d]) break;
            offset -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    std::vector<Scalar> out(x.size());
    auto xd = x.data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = xd[src[k]];
    auto map = std::make_shared<std::vector<std::size_t>>(std::move(src));
    return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [map](const auto& g, auto gin) {
        auto& gx = *gin[0];
        for (std::size_t k = 0; k < g.size(); ++k) gx[(*map)[k]] += g[k];
    });
}

Tensor select0(const Tensor& x, std::size_t index) {
    const auto& s = x.shape();
    if (index >= s[0]) throw ShapeError("select0: index out of range for " + shape_str(s));
    Shape out_shape(s.begin() + 1, s.end());
    if (out_shape.empty()) out_shape.push_back(1);
    const std::size_t inner = x.size() / s[0];
    auto xd = x.data();
    std::vector<Scalar> out(xd.begin() + index * inner, xd.begin() + (index + 1) * inner);
    return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                               [inner, index](const auto& g, auto gin) {
                                   for (std::size_t i = 0; i < inner; ++i) (*gin[0])[index * inner + i] += g[i];
                               });
}

Tensor stack0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("stack0: no tensors");
    const Shape& base = parts[0].shape();
    for (auto& p : parts) require_same_shape(p, parts[0], "stack0");
    Shape out_shape{parts.size()};
    out_shape.insert(out_shape.end(), base.begin(), base.end());
    const std::size_t inner = parts[0].size();
    std::vector<Scalar> out;
    out.reserve(inner * parts.size());
    for (auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return Tensor::make_result(std::move(out_shape), std::move(out), parts, [inner](const auto& g, auto gin) {
        for (std::size_t k = 0; k < gin.size(); ++k) {
            if (!gin[k]) continue;
            for (std::size_t i = 0; i < inner; ++i) (*gin[k])[i] += g[k * inner + i];
        }
    });
}

namespace {

// Row-major C = alpha·op(A)·op(B) + beta·C on one BLAS thread.
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const Scalar* a, const Scalar* b, Scalar beta,
          Scalar* c) {
    static const bool single_thread = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)single_thread;
    if (m == 0 || n == 0 || k == 0) return;
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), 1.0, a, static_cast<int>(ta ? m : k), b,
                static_cast<int>(tb ? k : n), beta, c, static_cast<int>(n));
}

struct ConvGeometry {
    std::size_t cin, h, w, kh, kw, stride, pad, oh, ow;
};

// cols[(ci·kh + ky)·kw + kx][oy·ow + ox] = padded input sample.
void im2col(const Scalar* in, const ConvGeometry& g, Scalar* cols) {
    const std::size_t plane = g.oh * g.ow;
    std::fill(cols, cols + g.cin * g.kh * g.kw * plane, 0.0);
    for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            auto [y0, y1] = valid_range(g.oh, g.h, g.stride, g.pad, ky);
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                auto [x0, x1] = valid_range(g.ow, g.w, g.stride, g.pad, kx);
                Scalar* row = cols + ((ci * g.kh + ky) * g.kw + kx) * plane;
                const Scalar* ip = in + ci * g.h * g.w;
                for (std::size_t oy = y0; oy < y1; ++oy) {
                    const Scalar* src = ip + (oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
                    for (std::size_t ox = x0; ox < x1; ++ox) row[oy * g.ow + ox] = src[ox * g.stride];
                }
            }
        }
}

void col2im_add(const Scalar* cols, const ConvGeometry& g, Scalar* in) {
    const std::size_t plane = g.oh * g.ow;
    for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            auto [y0, y1] = valid_range(g.oh, g.h, g.stride, g.pad, ky);
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                auto [x0, x1] = valid_range(g.ow, g.w, g.stride, g.pad, kx);
                const Scalar* row = cols + ((ci * g.kh + ky) * g.kw + kx) * plane;
                Scalar* ip = in + ci * g.h * g.w;
                for (std::size_t oy = y0; oy < y1; ++oy) {
                    Scalar* dst = ip + (oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
                    for (std::size_t ox = x0; ox < x1; ++ox) dst[ox * g.stride] += row[oy * g.ow + ox];
                }
            }
        }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(weight, 4, "conv2d", "weight");
    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin) {
        throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels but weight expects " +
                         std::to_string(weight.dim(1)));
    }
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel sizes must be odd");
    if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
        throw ShapeError("conv2d: bias must have " + std::to_string(cout) + " entries");
    }
    if (h + 2 * pad < kh || w + 2 * pad < kw) throw ShapeError("conv2d: kernel larger than padded input");
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
    const ConvGeometry geo{cin, h, w, kh, kw, stride, pad, oh, ow};
    const std::size_t plane = oh * ow, patch = cin * kh * kw;
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

    std::vector<Scalar> out(n * cout * plane, 0.0);
    std::vector<Scalar> cols(pointwise ? 0 : patch * plane);
    auto in = input.data();
    auto wt = weight.data();
    for (std::size_t b = 0; b < n; ++b) {
        Scalar* o = out.data() + b * cout * plane;
        if (bias.defined())
            for (std::size_t co = 0; co < cout; ++co) std::fill(o + co * plane, o + (co + 1) * plane, bias[co]);
        const Scalar* src = in.data() + b * cin * h * w;
        if (!pointwise) {
            im2col(src, geo, cols.data());
            src = cols.data();
        }
        gemm(false, false, cout, plane, patch, wt.data(), src, 1.0, o);
    }

    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    return Tensor::make_result(
        Shape{n, cout, oh, ow}, std::move(out), inputs,
        [=](const std::vector<Scalar>& g, std::span<std::vector<Scalar>* const> gin) {
            auto in = input.data();
            auto wt = weight.data();
            auto* gx = gin[0];
            auto* gw = gin[1];
            auto* gb = gin.size() > 2 ? gin[2] : nullptr;
            std::vector<Scalar> cols(pointwise ? 0 : patch * plane);
            std::vector<Scalar> gcols(gx && !pointwise ? patch * plane : 0);
            for (std::size_t b = 0; b < n; ++b) {
                const Scalar* go = g.data() + b * cout * plane;
                if (gb)
                    for (std::size_t co = 0; co < cout; ++co) {
                        Scalar acc = 0.0;
                        for (std::size_t i = 0; i < plane; ++i) acc += go[co * plane + i];
                        (*gb)[co] += acc;
                    }
                if (gw) {
                    const Scalar* src = in.data() + b * cin * h * w;
                    if (!pointwise) {
                        im2col(src, geo, cols.data());
                        src = cols.data();
                    }
                    gemm(false, true, cout, patch, plane, go, src, 1.0, gw->data());
                }
                if (gx) {
                    Scalar* dst = gx->data() + b * cin * h * w;
                    if (pointwise) {
                        gemm(true, false, patch, plane, cout, wt.data(), go, 1.0, dst);
                    } else {
                        gemm(true, false, patch, plane, cout, wt.data(), go, 0.0, gcols.data());
                        col2im_add(gcols.data(), geo, dst);
                    }
                }
            }
        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "linear", "weight");
    const std::size_t din = weight.dim(0), dout = weight.dim(1);
    if (x.shape().back() != din) {
        throw ShapeError("linear: trailing dimension " + std::to_string(x.shape().back()) +
                         " does not match weight input " + std::to_string(din));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != dout)) {
        throw ShapeError("linear: bias must have " + std::to_string(dout) + " entries");
    }
    const std::size_t rows = x.size() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    std::vector<Scalar> out(rows * dout, 0.0);
    if (bias.defined())
        for (std::size_t m = 0; m < rows; ++m)
            for (std::size_t j = 0; j < dout; ++j) out[m * dout + j] = bias[j];
    gemm(false, false, rows, dout, din, x.data().data(), weight.data().data(), 1.0, out.data());
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return Tensor::make_result(std::move(out_shape), std::move(out), inputs,
                               [=](const std::vector<Scalar>& g, std::span<std::vector<Scalar>* const> gin) {
                                   auto* gx = gin[0];
                                   auto* gw = gin[1];
                                   auto* gb = gin.size() > 2 ? gin[2] : nullptr;
                                   if (gx) gemm(false, true, rows, din, dout, g.data(), weight.data().data(), 1.0, gx->data());
                                   if (gw) gemm(true, false, din, dout, rows, x.data().data(), g.data(), 1.0, gw->data());
                                   if (gb)
                                       for (std::size_t m = 0; m < rows; ++m)
                                           for (std::size_t j = 0; j < dout; ++j) (*gb)[j] += g[m * dout + j];
                               });
}

Tensor softmax_axis(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw ShapeError("softmax_axis: axis out of range for " + shape_str(x.shape()));
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    std::vector<Scalar> out(x.size());
    auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            Scalar mx = -std::numeric_limits<Scalar>::infinity();
            for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, xd[base + l * inner]);
            Scalar z = 0.0;
            for (std::size_t l = 0; l < len; ++l) {
                const Scalar e = std::exp(xd[base + l * inner] - mx);
                out[base + l * inner] = e;
                z += e;
            }
            for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
        }
    }
    auto y = std::make_shared<std::vector<Scalar>>(out);
    return Tensor::make_result(s, std::move(out), {x}, [=](const auto& g, auto gin) {
        auto& gx = *gin[0];
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * len * inner + i;
                Scalar dot = 0.0;
                for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * (*y)[base + l * inner];
                for (std::size_t l = 0; l < len; ++l) {
                    const std::size_t k = base + l * inner;
                    gx[k] += (*y)[k] * (g[k] - dot);
                }
            }
        }
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool", "input");
    const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<Scalar> out(nc, 0.0);
    auto xd = x.data();
    for (std::size_t k = 0; k < nc; ++k) {
        Scalar acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += xd[k * hw + i];
        out[k] = acc / static_cast<Scalar>(hw);
    }
    return Tensor::make_result(Shape{x.dim(0), x.dim(1)}, std::move(out), {x}, [nc, hw](const auto& g, auto gin) {
        auto& gx = *gin[0];
        const Scalar inv = 1.0 / static_cast<Scalar>(hw);
        for (std::size_t k = 0; k < nc; ++k)
            for (std::size_t i = 0; i < hw; ++i) gx[k * hw + i] += g[k] * inv;
    });
}

Tensor mul_channel(const Tensor& x, const Tensor& gate) {
    require_rank(x, 4, "mul_channel", "input");
    if (gate.shape() != Shape{x.dim(0), x.dim(1)}) {
        throw ShapeError("mul_channel: gate " + shape_str(gate.shape()) + " does not match " + shape_str(x.shape()));
    }
    const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<Scalar> out(x.size());
    for (std::size_t k = 0; k < nc; ++k)
        for (std::size_t i = 0; i < hw; ++i) out[k * hw + i] = x[k * hw + i] * gate[k];
    return Tensor::make_result(x.shape(), std::move(out), {x, gate}, [=](const auto& g, auto gin) {
        for (std::size_t k = 0; k < nc; ++k) {
            Scalar acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                if (gin[0]) (*gin[0])[k * hw + i] += g[k * hw + i] * gate[k];
                acc += g[k * hw + i] * x[k * hw + i];
            }
            if (gin[1]) (*gin[1])[k] += acc;
        }
    });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
    require_rank(x, 4, "group_norm", "input");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("group_norm: affine parameters must have " + std::to_string(c) + " entries");
    }
    const std::size_t m = c * hw;
    std::vector<Scalar> xhat(x.size()), out(x.size()), inv_std(n);
    auto xd = x.data();
    for (std::size_t b = 0; b < n; ++b) {
        const Scalar* xs = xd.data() + b * m;
        Scalar mu = 0.0;
        for (std::size_t i = 0; i < m; ++i) mu += xs[i];
        mu /= static_cast<Scalar>(m);
        Scalar var = 0.0;
        for (std::size_t i = 0; i < m; ++i) var += (xs[i] - mu) * (xs[i] - mu);
        var /= static_cast<Scalar>(m);
        inv_std[b] = 1.0 / std::sqrt(var + eps);
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t k = b * m + ch * hw + i;
                xhat[k] = (xd[k] - mu) * inv_std[b];
                out[k] = gamma[ch] * xhat[k] + beta[ch];
            }
        }
    }
    auto saved = std::make_shared<std::pair<std::vector<Scalar>, std::vector<Scalar>>>(std::move(xhat),
                                                                                       std::move(inv_std));
    return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta}, [=](const auto& g, auto gin) {
        const auto& xh = saved->first;
        const auto& istd = saved->second;
        for (std::size_t b = 0; b < n; ++b) {
            Scalar mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t i = 0; i < hw; ++i) {
                    const std::size_t k = b * m + ch * hw + i;
                    const Scalar gh = g[k] * gamma[ch];
                    mean_g += gh;
                    mean_gx += gh * xh[k];
                    if (gin[1]) (*gin[1])[ch] += g[k] * xh[k];
                    if (gin[2]) (*gin[2])[ch] += g[k];
                }
            }
            if (!gin[0]) continue;
            mean_g /= static_cast<Scalar>(m);
            mean_gx /= static_cast<Scalar>(m);
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t i = 0; i < hw; ++i) {
                    const std::size_t k = b * m + ch * hw + i;
                    (*gin[0])[k] += istd[b] * (g[k] * gamma[ch] - mean_g - xh[k] * mean_gx);
                }
            }
        }
    });
}

namespace {

struct Taps {
    long y0, x0;
    Scalar wy, wx;
};

Taps taps_for(Scalar y, Scalar x) {
    const Scalar fy = std::floor(y), fx = std::floor(x);
    return {static_cast<long>(fy), static_cast<long>(fx), y - fy, x - fx};
}

// Texel read with zero outside the map.
inline Scalar texel(const Scalar* plane, long h, long w, long y, long x) {
    if (y < 0 || x < 0 || y >= h || x >= w) return 0.0;
    return plane[y * w + x];
}

bool far_outside(Scalar y, Scalar x, std::size_t h, std::size_t w) {
    return !(y > -1.0 && x > -1.0 && y < static_cast<Scalar>(h) && x < static_cast<Scalar>(w));
}

}  // namespace

Tensor bilinear_sample_batched(const Tensor& maps, const Tensor& points) {
    require_rank(maps, 4, "bilinear_sample", "maps");
    require_rank(points, 3, "bilinear_sample", "points");
    const std::size_t groups = maps.dim(0), c = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
    if (points.dim(0) != groups || points.dim(2) != 2) {
        throw ShapeError("bilinear_sample: points " + shape_str(points.shape()) + " incompatible with maps " +
                         shape_str(maps.shape()));
    }
    const std::size_t np = points.dim(1);
    const long lh = static_cast<long>(h), lw = static_cast<long>(w);
    std::vector<Scalar> out(groups * np * c, 0.0);
    auto md = maps.data();
    auto pd = points.data();
    for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t p = 0; p < np; ++p) {
            const Scalar y = pd[(gi * np + p) * 2], x = pd[(gi * np + p) * 2 + 1];
            if (far_outside(y, x, h, w)) continue;
            const Taps t = taps_for(y, x);
            const Scalar w00 = (1 - t.wy) * (1 - t.wx), w01 = (1 - t.wy) * t.wx;
            const Scalar w10 = t.wy * (1 - t.wx), w11 = t.wy * t.wx;
            Scalar* o = out.data() + (gi * np + p) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const Scalar* plane = md.data() + (gi * c + ch) * h * w;
                o[ch] = w00 * texel(plane, lh, lw, t.y0, t.x0) + w01 * texel(plane, lh, lw, t.y0, t.x0 + 1) +
                        w10 * texel(plane, lh, lw, t.y0 + 1, t.x0) + w11 * texel(plane, lh, lw, t.y0 + 1, t.x0 + 1);
            }
        }
    }
    return Tensor::make_result(Shape{groups, np, c}, std::move(out), {maps, points}, [=](const auto& g, auto gin) {
        auto md = maps.data();
        auto pd = points.data();
        for (std::size_t gi = 0; gi < groups; ++gi) {
            for (std::size_t p = 0; p < np; ++p) {
                const Scalar y = pd[(gi * np + p) * 2], x = pd[(gi * np + p) * 2 + 1];
                if (far_outside(y, x, h, w)) continue;
                const Taps t = taps_for(y, x);
                const Scalar w00 = (1 - t.wy) * (1 - t.wx), w01 = (1 - t.wy) * t.wx;
                const Scalar w10 = t.wy * (1 - t.wx), w11 = t.wy * t.wx;
                const Scalar* go = g.data() + (gi * np + p) * c;
                Scalar gy = 0.0, gxs = 0.0;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t plane_off = (gi * c + ch) * h * w;
                    const Scalar* plane = md.data() + plane_off;
                    const Scalar v00 = texel(plane, lh, lw, t.y0, t.x0);
                    const Scalar v01 = texel(plane, lh, lw, t.y0, t.x0 + 1);
                    const Scalar v10 = texel(plane, lh, lw, t.y0 + 1, t.x0);
                    const Scalar v11 = texel(plane, lh, lw, t.y0 + 1, t.x0 + 1);
                    gy += go[ch] * ((1 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                    gxs += go[ch] * ((1 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                    if (gin[0]) {
                        auto put = [&](long yy, long xx, Scalar wt) {
                            if (yy < 0 || xx < 0 || yy >= lh || xx >= lw) return;
                            (*gin[0])[plane_off + static_cast<std::size_t>(yy * lw + xx)] += wt * go[ch];
                        };
                        put(t.y0, t.x0, w00);
                        put(t.y0, t.x0 + 1, w01);
                        put(t.y0 + 1, t.x0, w10);
                        put(t.y0 + 1, t.x0 + 1, w11);
                    }
                }
                if (gin[1]) {
                    (*gin[1])[(gi * np + p) * 2] += gy;
                    (*gin[1])[(gi * np + p) * 2 + 1] += gxs;
                }
            }
        }
    });
}

Tensor bilinear_sample(const Tensor& map, const Tensor& points) {
    require_rank(map, 3, "bilinear_sample", "map");
    require_rank(points, 2, "bilinear_sample", "points");
    auto maps = reshape(map, Shape{1, map.dim(0), map.dim(1), map.dim(2)});
    auto pts = reshape(points, Shape{1, points.dim(0), points.dim(1)});
    auto out = bilinear_sample_batched(maps, pts);
    return reshape(out, Shape{points.dim(0), map.dim(0)});
}

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    require_rank(x, 4, "upsample_bilinear", "input");
    const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    struct Axis {
        std::vector<std::size_t> i0, i1;
        std::vector<Scalar> frac;
    };
    auto build = [](std::size_t in, std::size_t out) {
        Axis a;
        const Scalar ratio = static_cast<Scalar>(in) / static_cast<Scalar>(out);
        for (std::size_t o = 0; o < out; ++o) {
            Scalar src = (static_cast<Scalar>(o) + 0.5) * ratio - 0.5;
            if (src < 0) src = 0;
            std::size_t lo = static_cast<std::size_t>(src);
            if (lo > in - 1) lo = in - 1;
            const std::size_t hi = std::min(lo + 1, in - 1);
            a.i0.push_back(lo);
            a.i1.push_back(hi);
            a.frac.push_back(src - static_cast<Scalar>(lo));
        }
        return a;
    };
    auto ay = std::make_shared<Axis>(build(h, out_h));
    auto ax = std::make_shared<Axis>(build(w, out_w));
    std::vector<Scalar> out(nc * out_h * out_w);
    auto xd = x.data();
    for (std::size_t k = 0; k < nc; ++k) {
        const Scalar* p = xd.data() + k * h * w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const Scalar fy = ay->frac[oy];
            const Scalar* r0 = p + ay->i0[oy] * w;
            const Scalar* r1 = p + ay->i1[oy] * w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const Scalar fx = ax->frac[ox];
                const std::size_t c0 = ax->i0[ox], c1 = ax->i1[ox];
                out[(k * out_h + oy) * out_w + ox] =
                    (1 - fy) * ((1 - fx) * r0[c0] + fx * r0[c1]) + fy * ((1 - fx) * r1[c0] + fx * r1[c1]);
            }
        }
    }
    return Tensor::make_result(Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x},
                               [=](const auto& g, auto gin) {
                                   auto& gx = *gin[0];
                                   for (std::size_t k = 0; k < nc; ++k) {
                                       Scalar* p = gx.data() + k * h * w;
                                       for (std::size_t oy = 0; oy < out_h; ++oy) {
                                           const Scalar fy = ay->frac[oy];
                                           Scalar* r0 = p + ay->i0[oy] * w;
                                           Scalar* r1 = p + ay->i1[oy] * w;
                                           for (std::size_t ox = 0; ox < out_w; ++ox) {
                                               const Scalar fx = ax->frac[ox];
                                               const Scalar gv = g[(k * out_h + oy) * out_w + ox];
                                               const std::size_t c0 = ax->i0[ox], c1 = ax->i1[ox];
                                               r0[c0] += (1 - fy) * (1 - fx) * gv;
                                               r0[c1] += (1 - fy) * fx * gv;
                                               r1[c0] += fy * (1 - fx) * gv;
                                               r1[c1] += fy * fx * gv;
                                           }
                                       }
                                   }
                               });
}

Tensor weighted_sum_k(const Tensor& values, const Tensor& weights) {
    require_rank(values, 4, "weighted_sum_k", "values");
    require_rank(weights, 3, "weighted_sum_k", "weights");
    const std::size_t g0 = values.dim(0), q = values.dim(1), k = values.dim(2), c = values.dim(3);
    if (weights.shape() != Shape{g0, q, k}) {
        throw ShapeError("weighted_sum_k: weights " + shape_str(weights.shape()) + " do not match values " +
                         shape_str(values.shape()));
    }
    const std::size_t rows = g0 * q;
    std::vector<Scalar> out(rows * c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < k; ++j) {
            const Scalar a = weights[r * k + j];
            for (std::size_t ch = 0; ch < c; ++ch) out[r * c + ch] += a * values[(r * k + j) * c + ch];
        }
    return Tensor::make_result(Shape{g0, q, c}, std::move(out), {values, weights}, [=](const auto& g, auto gin) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < k; ++j) {
                const Scalar a = weights[r * k + j];
                Scalar acc = 0.0;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const Scalar gv = g[r * c + ch];
                    if (gin[0]) (*gin[0])[(r * k + j) * c + ch] += a * gv;
                    acc += gv * values[(r * k + j) * c + ch];
                }
                if (gin[1]) (*gin[1])[r * k + j] += acc;
            }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, int ignore_index) {
    require_rank(logits, 4, "cross_entropy", "logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    if (labels.size() != n * hw) {
        throw ShapeError("cross_entropy: expected " + std::to_string(n * hw) + " labels, got " +
                         std::to_string(labels.size()));
    }
    auto prob = std::make_shared<std::vector<Scalar>>(logits.size(), 0.0);
    Scalar total = 0.0;
    std::size_t counted = 0;
    auto ld = logits.data();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < hw; ++i) {
            const int label = labels[b * hw + i];
            if (label == ignore_index) continue;
            if (label < 0 || static_cast<std::size_t>(label) >= k) {
                throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                        std::to_string(k) + ")");
            }
            Scalar mx = -std::numeric_limits<Scalar>::infinity();
            for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, ld[(b * k + c) * hw + i]);
            Scalar z = 0.0;
            for (std::size_t c = 0; c < k; ++c) z += std::exp(ld[(b * k + c) * hw + i] - mx);
            for (std::size_t c = 0; c < k; ++c)
                (*prob)[(b * k + c) * hw + i] = std::exp(ld[(b * k + c) * hw + i] - mx) / z;
            total += std::log(z) + mx - ld[(b * k + static_cast<std::size_t>(label)) * hw + i];
            ++counted;
        }
    }
    if (counted == 0) throw std::invalid_argument("cross_entropy: every pixel is ignored");
    const Scalar inv = 1.0 / static_cast<Scalar>(counted);
    return Tensor::make_result(Shape{1}, {total * inv}, {logits}, [=](const auto& g, auto gin) {
        auto& gx = *gin[0];
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
                const int label = labels[b * hw + i];
                if (label == ignore_index) continue;
                for (std::size_t c = 0; c < k; ++c) {
                    const std::size_t idx = (b * k + c) * hw + i;
                    const Scalar target = static_cast<int>(c) == label ? 1.0 : 0.0;
                    gx[idx] += g[0] * inv * ((*prob)[idx] - target);
                }
            }
    });
}

GradCheckResult grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params,
                           const GradCheckOptions& options) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tensor loss = fn();
    if (!std::isfinite(loss.item())) throw std::domain_error("grad_check: function value is not finite");
    loss.backward();

    auto eval = [&]() {
        NoGradGuard guard;
        const Scalar v = fn().item();
        if (!std::isfinite(v)) throw std::domain_error("grad_check: function value is not finite");
        return v;
    };

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        std::vector<Scalar> analytic(p.size(), 0.0);
        if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
        std::vector<std::size_t> entries;
        if (options.max_entries_per_param == 0 || p.size() <= options.max_entries_per_param) {
            entries.resize(p.size());
            std::iota(entries.begin(), entries.end(), 0);
        } else {
            for (std::size_t k = 0; k < options.max_entries_per_param; ++k)
                entries.push_back(k * p.size() / options.max_entries_per_param);
        }
        auto data = p.mutable_data();
        for (auto idx : entries) {
            const Scalar orig = data[idx];
            data[idx] = orig + options.eps;
            const Scalar fp = eval();
            data[idx] = orig - options.eps;
            const Scalar fm = eval();
            data[idx] = orig;
            const Scalar numeric = (fp - fm) / (2.0 * options.eps);
            const Scalar a = analytic[idx];
            const Scalar denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
            const Scalar rel = std::abs(a - numeric) / denom;
            ++result.entries_checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = pi;
                result.worst_index = idx;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace hess
