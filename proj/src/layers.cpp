#include "lakd/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace lakd {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

inline std::size_t idx4(int b, int c, int h, int w, int C, int H, int W) {
    return ((static_cast<std::size_t>(b) * C + c) * H + h) * W + w;
}

void check_4d(const Tensor& t, const char* what) {
    if (!t.defined() || t.shape().size() != 4)
        throw std::invalid_argument(std::string(what) + " must be a 4D [B,C,H,W] tensor");
}

}  // namespace

void ConvSpec::validate() const {
    if (in_channels <= 0 || out_channels <= 0)
        throw std::invalid_argument("conv channels must be positive");
    if (kernel_size <= 0 || kernel_size % 2 == 0)
        throw std::invalid_argument("conv kernel size must be odd, got " +
                                    std::to_string(kernel_size));
    if (groups <= 0 || in_channels % groups != 0 || out_channels % groups != 0)
        throw std::invalid_argument("conv channels not divisible by groups: in=" +
                                    std::to_string(in_channels) + " out=" +
                                    std::to_string(out_channels) + " groups=" +
                                    std::to_string(groups));
    if (dilation <= 0) throw std::invalid_argument("conv dilation must be positive");
}

std::size_t ConvSpec::weight_count() const {
    return static_cast<std::size_t>(out_channels) * (in_channels / groups) * kernel_size *
           kernel_size;
}

namespace {

struct ConvDims {
    int B, Cin, Cout, H, W, k, groups, dilation, pad, icg, ocg;
};

// One clamped tap: acc[i] += wv * row[i + off] for i in [a, b) with the
// source index kept inside [0, W).
inline void add_tap(double* acc, const float* row, double wv, int off, int a, int b, int W) {
    const int lo = std::max(a, -off);
    const int hi = std::min(b, W - off);
    for (int i = lo; i < hi; ++i) acc[i] += wv * row[i + off];
}

// Forward: y[b,oc,oh,ow] = bias[oc] + sum over (icl,kh,kw) of
// w[oc,icl,kh,kw] * x[b, g*icg+icl, oh-pad+kh*d, ow-pad+kw*d].
// Row accumulators in double; padding handled by clamping the ow range.
void conv_forward(const ConvDims& d, const float* x, const float* w, const float* bias,
                  float* y) {
    std::vector<double> acc(d.W);
    for (int b = 0; b < d.B; ++b) {
        for (int oc = 0; oc < d.Cout; ++oc) {
            const int g = oc / d.ocg;
            const float bv = bias ? bias[oc] : 0.0f;
            for (int oh = 0; oh < d.H; ++oh) {
                std::fill(acc.begin(), acc.end(), static_cast<double>(bv));
                for (int icl = 0; icl < d.icg; ++icl) {
                    const int ic = g * d.icg + icl;
                    const float* xplane = x + idx4(b, ic, 0, 0, d.Cin, d.H, d.W);
                    const float* wrow = w + (static_cast<std::size_t>(oc) * d.icg + icl) *
                                                d.k * d.k;
                    for (int kh = 0; kh < d.k; ++kh) {
                        const int ih = oh - d.pad + kh * d.dilation;
                        if (ih < 0 || ih >= d.H) continue;
                        const float* xrow = xplane + static_cast<std::size_t>(ih) * d.W;
                        for (int kw = 0; kw < d.k; ++kw)
                            add_tap(acc.data(), xrow, wrow[kh * d.k + kw],
                                    -d.pad + kw * d.dilation, 0, d.W, d.W);
                    }
                }
                float* yrow = y + idx4(b, oc, oh, 0, d.Cout, d.H, d.W);
                for (int ow = 0; ow < d.W; ++ow) yrow[ow] = static_cast<float>(acc[ow]);
            }
        }
    }
}

// dx[b,ic,ih,iw] += sum over (ocl,kh,kw) of w[oc,icl,kh,kw] * dy[b,oc,ih+pad-kh*d, iw+pad-kw*d]
void conv_backward_input(const ConvDims& d, const float* w, const float* dy, float* dx) {
    std::vector<double> acc(d.W);
    for (int b = 0; b < d.B; ++b) {
        for (int ic = 0; ic < d.Cin; ++ic) {
            const int g = ic / d.icg;
            const int icl = ic % d.icg;
            for (int ih = 0; ih < d.H; ++ih) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int ocl = 0; ocl < d.ocg; ++ocl) {
                    const int oc = g * d.ocg + ocl;
                    const float* dyplane = dy + idx4(b, oc, 0, 0, d.Cout, d.H, d.W);
                    const float* wrow = w + (static_cast<std::size_t>(oc) * d.icg + icl) *
                                                d.k * d.k;
                    for (int kh = 0; kh < d.k; ++kh) {
                        const int oh = ih + d.pad - kh * d.dilation;
                        if (oh < 0 || oh >= d.H) continue;
                        const float* dyrow = dyplane + static_cast<std::size_t>(oh) * d.W;
                        for (int kw = 0; kw < d.k; ++kw)
                            add_tap(acc.data(), dyrow, wrow[kh * d.k + kw],
                                    d.pad - kw * d.dilation, 0, d.W, d.W);
                    }
                }
                float* dxrow = dx + idx4(b, ic, ih, 0, d.Cin, d.H, d.W);
                for (int iw = 0; iw < d.W; ++iw) dxrow[iw] += static_cast<float>(acc[iw]);
            }
        }
    }
}

void conv_backward_weight(const ConvDims& d, const float* x, const float* dy, float* dw) {
    // Per-column partial sums keep the inner loop an elementwise
    // multiply-add (vectorizable) instead of a serial reduction; the final
    // left-to-right fold keeps results deterministic.
    std::vector<double> acc(d.W);
    for (int oc = 0; oc < d.Cout; ++oc) {
        const int g = oc / d.ocg;
        for (int icl = 0; icl < d.icg; ++icl) {
            const int ic = g * d.icg + icl;
            float* dwrow = dw + (static_cast<std::size_t>(oc) * d.icg + icl) * d.k * d.k;
            for (int kh = 0; kh < d.k; ++kh) {
                for (int kw = 0; kw < d.k; ++kw) {
                    const int offw = -d.pad + kw * d.dilation;
                    const int lo = std::max(0, -offw);
                    const int hi = std::min(d.W, d.W - offw);
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (int b = 0; b < d.B; ++b) {
                        const float* xplane = x + idx4(b, ic, 0, 0, d.Cin, d.H, d.W);
                        const float* dyplane = dy + idx4(b, oc, 0, 0, d.Cout, d.H, d.W);
                        for (int oh = 0; oh < d.H; ++oh) {
                            const int ih = oh - d.pad + kh * d.dilation;
                            if (ih < 0 || ih >= d.H) continue;
                            const float* xrow = xplane + static_cast<std::size_t>(ih) * d.W;
                            const float* dyrow = dyplane + static_cast<std::size_t>(oh) * d.W;
                            for (int ow = lo; ow < hi; ++ow)
                                acc[ow] += static_cast<double>(dyrow[ow]) * xrow[ow + offw];
                        }
                    }
                    double total = 0.0;
                    for (int ow = lo; ow < hi; ++ow) total += acc[ow];
                    dwrow[kh * d.k + kw] += static_cast<float>(total);
                }
            }
        }
    }
}

void conv_backward_bias(const ConvDims& d, const float* dy, float* db) {
    for (int oc = 0; oc < d.Cout; ++oc) {
        double acc = 0.0;
        for (int b = 0; b < d.B; ++b) {
            const float* dyplane = dy + idx4(b, oc, 0, 0, d.Cout, d.H, d.W);
            const std::size_t plane = static_cast<std::size_t>(d.H) * d.W;
            for (std::size_t i = 0; i < plane; ++i) acc += dyplane[i];
        }
        db[oc] += static_cast<float>(acc);
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
              const Tensor& bias) {
    spec.validate();
    check_4d(input, "conv2d input");
    const Shape& s = input.shape();
    if (s[1] != spec.in_channels)
        throw std::invalid_argument("conv2d input has " + std::to_string(s[1]) +
                                    " channels, spec expects " +
                                    std::to_string(spec.in_channels));
    const Shape want_w = {spec.out_channels, spec.in_channels / spec.groups, spec.kernel_size,
                          spec.kernel_size};
    if (weight.shape() != want_w)
        throw std::invalid_argument("conv2d weight shape " + shape_str(weight.shape()) +
                                    ", expected " + shape_str(want_w));
    if (spec.has_bias) {
        if (!bias.defined() || bias.shape() != Shape{spec.out_channels})
            throw std::invalid_argument("conv2d bias must have shape [" +
                                        std::to_string(spec.out_channels) + "]");
    }

    ConvDims d{s[0],        spec.in_channels, spec.out_channels,
               s[2],        s[3],             spec.kernel_size,
               spec.groups, spec.dilation,    spec.pad(),
               spec.in_channels / spec.groups, spec.out_channels / spec.groups};

    std::vector<float> out(static_cast<std::size_t>(d.B) * d.Cout * d.H * d.W);
    conv_forward(d, input.data(), weight.data(), spec.has_bias ? bias.data() : nullptr,
                 out.data());

    auto xi = input.impl();
    auto wi = weight.impl();
    auto bi = spec.has_bias ? bias.impl() : nullptr;
    auto bwd = [d, xi, wi, bi](TensorImpl& self) {
        const float* dy = self.grad.data();
        if (xi->requires_grad)
            conv_backward_input(d, wi->data.data(), dy, ensure_grad(*xi).data());
        if (wi->requires_grad)
            conv_backward_weight(d, xi->data.data(), dy, ensure_grad(*wi).data());
        if (bi && bi->requires_grad) conv_backward_bias(d, dy, ensure_grad(*bi).data());
    };
    std::vector<Tensor> parents = {input, weight};
    if (spec.has_bias) parents.push_back(bias);
    return make_node({d.B, d.Cout, d.H, d.W}, std::move(out), parents, std::move(bwd));
}

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  float epsilon) {
    check_4d(input, "layer_norm input");
    const Shape& s = input.shape();
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw std::invalid_argument("layer_norm affine must have shape [" + std::to_string(C) +
                                    "], got gamma " + shape_str(gamma.shape()) + " beta " +
                                    shape_str(beta.shape()));

    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t n = input.numel();
    std::vector<float> out(n);
    auto xhat = std::make_shared<std::vector<float>>(n);
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(B) * plane);

    const float* x = input.data();
    const float* gm = gamma.data();
    const float* bt = beta.data();
    for (int b = 0; b < B; ++b) {
        const float* xb = x + static_cast<std::size_t>(b) * C * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            double m = 0.0;
            for (int c = 0; c < C; ++c) m += xb[c * plane + p];
            m /= C;
            double v = 0.0;
            for (int c = 0; c < C; ++c) {
                const double dlt = xb[c * plane + p] - m;
                v += dlt * dlt;
            }
            v /= C;
            const float is = static_cast<float>(1.0 / std::sqrt(v + epsilon));
            (*inv_std)[b * plane + p] = is;
            for (int c = 0; c < C; ++c) {
                const std::size_t i = static_cast<std::size_t>(b) * C * plane + c * plane + p;
                const float xh = (x[i] - static_cast<float>(m)) * is;
                (*xhat)[i] = xh;
                out[i] = xh * gm[c] + bt[c];
            }
        }
    }

    auto xi = input.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto bwd = [B, C, plane, xi, gi, bi, xhat, inv_std](TensorImpl& self) {
        const float* g = self.grad.data();
        const float* xh = xhat->data();
        if (xi->requires_grad) {
            auto& dx = ensure_grad(*xi);
            const float* gm = gi->data.data();
            for (int b = 0; b < B; ++b) {
                const std::size_t base = static_cast<std::size_t>(b) * C * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const std::size_t i = base + c * plane + p;
                        const double gh = static_cast<double>(g[i]) * gm[c];
                        m1 += gh;
                        m2 += gh * xh[i];
                    }
                    m1 /= C;
                    m2 /= C;
                    const float is = (*inv_std)[b * plane + p];
                    for (int c = 0; c < C; ++c) {
                        const std::size_t i = base + c * plane + p;
                        const double gh = static_cast<double>(g[i]) * gm[c];
                        dx[i] += static_cast<float>((gh - m1 - xh[i] * m2) * is);
                    }
                }
            }
        }
        if (gi->requires_grad) {
            auto& dg = ensure_grad(*gi);
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int b = 0; b < B; ++b) {
                    const std::size_t base = static_cast<std::size_t>(b) * C * plane + c * plane;
                    for (std::size_t p = 0; p < plane; ++p)
                        acc += static_cast<double>(g[base + p]) * xh[base + p];
                }
                dg[c] += static_cast<float>(acc);
            }
        }
        if (bi->requires_grad) {
            auto& db = ensure_grad(*bi);
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int b = 0; b < B; ++b) {
                    const std::size_t base = static_cast<std::size_t>(b) * C * plane + c * plane;
                    for (std::size_t p = 0; p < plane; ++p) acc += g[base + p];
                }
                db[c] += static_cast<float>(acc);
            }
        }
    };
    return make_node(s, std::move(out), {input, gamma, beta}, std::move(bwd));
}

Tensor gelu(const Tensor& input) {
    const std::size_t n = input.numel();
    std::vector<float> out(n);
    const float* x = input.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double phi = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
        out[i] = static_cast<float>(x[i] * phi);
    }
    auto xi = input.impl();
    auto bwd = [xi, n](TensorImpl& self) {
        if (!xi->requires_grad) return;
        auto& dx = ensure_grad(*xi);
        const float* g = self.grad.data();
        const float* x = xi->data.data();
        for (std::size_t i = 0; i < n; ++i) {
            const double v = x[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            dx[i] += static_cast<float>(g[i] * (cdf + v * pdf));
        }
    };
    return make_node(input.shape(), std::move(out), {input}, std::move(bwd));
}

namespace {

// index map for unshuffle: out[(b, c*r*r + dy*r + dx, h, w)] = in[(b, c, h*r+dy, w*r+dx)]
void unshuffle_copy(const float* in, float* out, int B, int C, int H, int W, int r,
                    bool accumulate_inverse) {
    const int Ho = H / r, Wo = W / r;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int oc = c * r * r + dy * r + dx;
                    for (int h = 0; h < Ho; ++h)
                        for (int w = 0; w < Wo; ++w) {
                            const std::size_t oi = idx4(b, oc, h, w, C * r * r, Ho, Wo);
                            const std::size_t ii =
                                idx4(b, c, h * r + dy, w * r + dx, C, H, W);
                            if (accumulate_inverse)
                                out[ii] += in[oi];
                            else
                                out[oi] = in[ii];
                        }
                }
}

}  // namespace

Tensor pixel_unshuffle(const Tensor& input, int r) {
    check_4d(input, "pixel_unshuffle input");
    const Shape& s = input.shape();
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    if (r <= 0 || H % r != 0 || W % r != 0)
        throw std::invalid_argument("pixel_unshuffle: spatial size " + std::to_string(H) + "x" +
                                    std::to_string(W) + " not divisible by r=" +
                                    std::to_string(r));
    std::vector<float> out(input.numel());
    unshuffle_copy(input.data(), out.data(), B, C, H, W, r, false);
    auto xi = input.impl();
    auto bwd = [B, C, H, W, r, xi](TensorImpl& self) {
        if (!xi->requires_grad) return;
        unshuffle_copy(self.grad.data(), ensure_grad(*xi).data(), B, C, H, W, r, true);
    };
    return make_node({B, C * r * r, H / r, W / r}, std::move(out), {input}, std::move(bwd));
}

Tensor pixel_shuffle(const Tensor& input, int r) {
    check_4d(input, "pixel_shuffle input");
    const Shape& s = input.shape();
    const int B = s[0], Ci = s[1], Hi = s[2], Wi = s[3];
    if (r <= 0 || Ci % (r * r) != 0)
        throw std::invalid_argument("pixel_shuffle: channel count " + std::to_string(Ci) +
                                    " not divisible by r^2=" + std::to_string(r * r));
    const int C = Ci / (r * r), H = Hi * r, W = Wi * r;
    std::vector<float> out(input.numel());
    // shuffle forward is unshuffle's inverse scatter
    const float* in = input.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int ic = c * r * r + dy * r + dx;
                    for (int h = 0; h < Hi; ++h)
                        for (int w = 0; w < Wi; ++w)
                            out[idx4(b, c, h * r + dy, w * r + dx, C, H, W)] =
                                in[idx4(b, ic, h, w, Ci, Hi, Wi)];
                }
    auto xi = input.impl();
    auto bwd = [B, C, H, W, r, xi](TensorImpl& self) {
        if (!xi->requires_grad) return;
        auto& dx = ensure_grad(*xi);
        const float* g = self.grad.data();
        const int Ci2 = C * r * r, Hi2 = H / r, Wi2 = W / r;
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < r; ++dy)
                    for (int dxo = 0; dxo < r; ++dxo) {
                        const int ic = c * r * r + dy * r + dxo;
                        for (int h = 0; h < Hi2; ++h)
                            for (int w = 0; w < Wi2; ++w)
                                dx[idx4(b, ic, h, w, Ci2, Hi2, Wi2)] +=
                                    g[idx4(b, c, h * r + dy, w * r + dxo, C, H, W)];
                    }
    };
    return make_node({B, C, H, W}, std::move(out), {input}, std::move(bwd));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    check_4d(a, "concat_channels lhs");
    check_4d(b, "concat_channels rhs");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(sa) +
                                    " vs " + shape_str(sb));
    const int B = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<float> out(static_cast<std::size_t>(B) * (Ca + Cb) * plane);
    for (int bi = 0; bi < B; ++bi) {
        std::copy_n(a.data() + static_cast<std::size_t>(bi) * Ca * plane, Ca * plane,
                    out.data() + static_cast<std::size_t>(bi) * (Ca + Cb) * plane);
        std::copy_n(b.data() + static_cast<std::size_t>(bi) * Cb * plane, Cb * plane,
                    out.data() + static_cast<std::size_t>(bi) * (Ca + Cb) * plane + Ca * plane);
    }
    auto ai = a.impl();
    auto bimpl = b.impl();
    auto bwd = [B, Ca, Cb, plane, ai, bimpl](TensorImpl& self) {
        const float* g = self.grad.data();
        for (int bi = 0; bi < B; ++bi) {
            const float* gb = g + static_cast<std::size_t>(bi) * (Ca + Cb) * plane;
            if (ai->requires_grad) {
                auto& da = ensure_grad(*ai);
                float* dst = da.data() + static_cast<std::size_t>(bi) * Ca * plane;
                for (std::size_t i = 0; i < static_cast<std::size_t>(Ca) * plane; ++i)
                    dst[i] += gb[i];
            }
            if (bimpl->requires_grad) {
                auto& db = ensure_grad(*bimpl);
                float* dst = db.data() + static_cast<std::size_t>(bi) * Cb * plane;
                const float* src = gb + static_cast<std::size_t>(Ca) * plane;
                for (std::size_t i = 0; i < static_cast<std::size_t>(Cb) * plane; ++i)
                    dst[i] += src[i];
            }
        }
    };
    return make_node({B, Ca + Cb, H, W}, std::move(out), {a, b}, std::move(bwd));
}

Tensor slice_channels(const Tensor& t, int c0, int c1) {
    check_4d(t, "slice_channels input");
    const Shape& s = t.shape();
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    if (c0 < 0 || c1 > C || c0 >= c1)
        throw std::invalid_argument("slice_channels: bad range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for C=" + std::to_string(C));
    const int Cs = c1 - c0;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<float> out(static_cast<std::size_t>(B) * Cs * plane);
    for (int b = 0; b < B; ++b)
        std::copy_n(t.data() + (static_cast<std::size_t>(b) * C + c0) * plane, Cs * plane,
                    out.data() + static_cast<std::size_t>(b) * Cs * plane);
    auto ti = t.impl();
    auto bwd = [B, C, Cs, c0, plane, ti](TensorImpl& self) {
        if (!ti->requires_grad) return;
        auto& dt = ensure_grad(*ti);
        const float* g = self.grad.data();
        for (int b = 0; b < B; ++b) {
            float* dst = dt.data() + (static_cast<std::size_t>(b) * C + c0) * plane;
            const float* src = g + static_cast<std::size_t>(b) * Cs * plane;
            for (std::size_t i = 0; i < static_cast<std::size_t>(Cs) * plane; ++i)
                dst[i] += src[i];
        }
    };
    return make_node({B, Cs, H, W}, std::move(out), {t}, std::move(bwd));
}

}  // namespace lakd
