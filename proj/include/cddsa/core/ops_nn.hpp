#pragma once

#include <cstdint>
#include <vector>

#include "cddsa/core/ops.hpp"

// Convolution, pooling, normalization and the contrastive primitives.

namespace cddsa::nn {

namespace detail {

// im2col for NCHW input; col is (N*Ho*Wo, Cin*kh*kw) row-major.
template <typename S>
void im2col(const Array<S>& x, int kh, int kw, int stride, int pad, int Ho, int Wo,
            std::vector<S>& col) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int K = C * kh * kw;
    col.assign(static_cast<std::size_t>(N) * Ho * Wo * K, S(0));
    for (int n = 0; n < N; ++n) {
        for (int oh = 0; oh < Ho; ++oh) {
            for (int ow = 0; ow < Wo; ++ow) {
                S* row = col.data() + ((static_cast<long>(n) * Ho + oh) * Wo + ow) * K;
                for (int c = 0; c < C; ++c) {
                    const S* xc = x.ptr() + (static_cast<long>(n) * C + c) * H * W;
                    for (int i = 0; i < kh; ++i) {
                        const int ih = oh * stride - pad + i;
                        if (ih < 0 || ih >= H) continue;
                        for (int j = 0; j < kw; ++j) {
                            const int iw = ow * stride - pad + j;
                            if (iw < 0 || iw >= W) continue;
                            row[(c * kh + i) * kw + j] = xc[ih * W + iw];
                        }
                    }
                }
            }
        }
    }
}

template <typename S>
void col2im(const std::vector<S>& col, int N, int C, int H, int W, int kh, int kw, int stride,
            int pad, int Ho, int Wo, Array<S>& dx) {
    const int K = C * kh * kw;
    for (int n = 0; n < N; ++n) {
        for (int oh = 0; oh < Ho; ++oh) {
            for (int ow = 0; ow < Wo; ++ow) {
                const S* row = col.data() + ((static_cast<long>(n) * Ho + oh) * Wo + ow) * K;
                for (int c = 0; c < C; ++c) {
                    S* xc = dx.ptr() + (static_cast<long>(n) * C + c) * H * W;
                    for (int i = 0; i < kh; ++i) {
                        const int ih = oh * stride - pad + i;
                        if (ih < 0 || ih >= H) continue;
                        for (int j = 0; j < kw; ++j) {
                            const int iw = ow * stride - pad + j;
                            if (iw < 0 || iw >= W) continue;
                            xc[ih * W + iw] += row[(c * kh + i) * kw + j];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x:(N,Cin,H,W)  w:(Cout,Cin,kh,kw)  b:(Cout)
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, int stride, int pad) {
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1])
        throw ShapeError("conv2d: incompatible " + shape_str(sx) + " / " + shape_str(sw));
    const int N = sx[0], Cin = sx[1], H = sx[2], W = sx[3];
    const int Cout = sw[0], kh = sw[2], kw = sw[3];
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: output would be empty");
    const int K = Cin * kh * kw;
    const long P = static_cast<long>(N) * Ho * Wo;

    auto col = std::make_shared<std::vector<S>>();
    detail::im2col(x.value(), kh, kw, stride, pad, Ho, Wo, *col);

    Array<S> out(Shape{N, Cout, Ho, Wo});
    {
        CMapM<S> Col(col->data(), P, K);
        CMapM<S> Wm(w.value().ptr(), Cout, K);
        MatRM<S> Y = Col * Wm.transpose();  // (P, Cout)
        const S* bias = b.value().ptr();
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Cout; ++co) {
                S* o = out.ptr() + (static_cast<long>(n) * Cout + co) * Ho * Wo;
                const S* yrow = Y.data() + static_cast<long>(n) * Ho * Wo * Cout + co;
                for (long i = 0; i < static_cast<long>(Ho) * Wo; ++i)
                    o[i] = yrow[i * Cout] + bias[co];
            }
    }

    return make_op_node<S>(
        std::move(out), {x, w, b},
        [xn = x.node(), wn = w.node(), bn = b.node(), col, N, Cin, H, W, Cout, kh, kw, stride,
         pad, Ho, Wo, K, P](Node<S>& self) {
            // gather dY as (P, Cout)
            MatRM<S> gY(P, Cout);
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Cout; ++co) {
                    const S* g = self.grad.ptr() + (static_cast<long>(n) * Cout + co) * Ho * Wo;
                    S* yrow = gY.data() + static_cast<long>(n) * Ho * Wo * Cout + co;
                    for (long i = 0; i < static_cast<long>(Ho) * Wo; ++i) yrow[i * Cout] = g[i];
                }
            CMapM<S> Col(col->data(), P, K);
            if (wn->requires_grad) {
                wn->ensure_grad();
                MapM<S> dW(wn->grad.ptr(), Cout, K);
                dW.noalias() += gY.transpose() * Col;
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int co = 0; co < Cout; ++co) bn->grad[co] += gY.col(co).sum();
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                CMapM<S> Wm(wn->value.ptr(), Cout, K);
                MatRM<S> dCol = gY * Wm;  // (P, K)
                std::vector<S> dcol(dCol.data(), dCol.data() + P * K);
                detail::col2im(dcol, N, Cin, H, W, kh, kw, stride, pad, Ho, Wo, xn->grad);
            }
        });
}

// 2x2 max pooling, stride 2; ties resolved to the first occurrence.
template <typename S>
Var<S> maxpool2x2(Var<S> x) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[2] % 2 || s[3] % 2) throw ShapeError("maxpool2x2: H,W must be even");
    const int N = s[0], C = s[1], H = s[2], W = s[3], Ho = H / 2, Wo = W / 2;
    Array<S> out(Shape{N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.numel());
    for (int nc = 0; nc < N * C; ++nc) {
        const S* in = x.value().ptr() + static_cast<long>(nc) * H * W;
        S* o = out.ptr() + static_cast<long>(nc) * Ho * Wo;
        std::int32_t* am = argmax->data() + static_cast<long>(nc) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                const int base = (2 * oh) * W + 2 * ow;
                int best = base;
                S bv = in[base];
                const int cand[3] = {base + 1, base + W, base + W + 1};
                for (int k = 0; k < 3; ++k)
                    if (in[cand[k]] > bv) {
                        bv = in[cand[k]];
                        best = cand[k];
                    }
                o[oh * Wo + ow] = bv;
                am[oh * Wo + ow] = best;
            }
    }
    return make_op_node<S>(std::move(out), {x},
                           [xn = x.node(), argmax, N, C, H, W, Ho, Wo](Node<S>& self) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (int nc = 0; nc < N * C; ++nc) {
                                   S* d = xn->grad.ptr() + static_cast<long>(nc) * H * W;
                                   const S* g = self.grad.ptr() + static_cast<long>(nc) * Ho * Wo;
                                   const std::int32_t* am =
                                       argmax->data() + static_cast<long>(nc) * Ho * Wo;
                                   for (long i = 0; i < static_cast<long>(Ho) * Wo; ++i)
                                       d[am[i]] += g[i];
                               }
                           });
}

template <typename S>
Var<S> upsample_nearest2x(Var<S> x) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("upsample_nearest2x: expects 4-d input");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    Array<S> out(Shape{N, C, 2 * H, 2 * W});
    for (int nc = 0; nc < N * C; ++nc) {
        const S* in = x.value().ptr() + static_cast<long>(nc) * H * W;
        S* o = out.ptr() + static_cast<long>(nc) * 4 * H * W;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                const S v = in[h * W + w];
                S* base = o + (2 * h) * 2 * W + 2 * w;
                base[0] = v;
                base[1] = v;
                base[2 * W] = v;
                base[2 * W + 1] = v;
            }
    }
    return make_op_node<S>(std::move(out), {x}, [xn = x.node(), N, C, H, W](Node<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int nc = 0; nc < N * C; ++nc) {
            S* d = xn->grad.ptr() + static_cast<long>(nc) * H * W;
            const S* g = self.grad.ptr() + static_cast<long>(nc) * 4 * H * W;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const S* base = g + (2 * h) * 2 * W + 2 * w;
                    d[h * W + w] += base[0] + base[1] + base[2 * W] + base[2 * W + 1];
                }
        }
    });
}

// Batch normalization over (N,H,W) per channel, biased variance.
// Running statistics live in the owning module and are updated in-place
// during training-mode forwards (unless update_stats is false, for auxiliary
// passes whose inputs should not contaminate the inference statistics).
template <typename S>
Var<S> batchnorm2d(Var<S> x, Var<S> gamma, Var<S> beta, Array<S>& running_mean,
                   Array<S>& running_var, S momentum, S eps, bool training,
                   bool update_stats = true) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("batchnorm2d: expects 4-d input");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const long m = static_cast<long>(N) * H * W;
    const long hw = static_cast<long>(H) * W;

    auto xhat = std::make_shared<std::vector<S>>(x.numel());
    auto inv_std = std::make_shared<std::vector<S>>(C);

    Array<S> out(x.shape());
    for (int c = 0; c < C; ++c) {
        S mean, var;
        if (training) {
            S acc = S(0);
            for (int n = 0; n < N; ++n) {
                const S* p = x.value().ptr() + (static_cast<long>(n) * C + c) * hw;
                for (long i = 0; i < hw; ++i) acc += p[i];
            }
            mean = acc / S(m);
            S vacc = S(0);
            for (int n = 0; n < N; ++n) {
                const S* p = x.value().ptr() + (static_cast<long>(n) * C + c) * hw;
                for (long i = 0; i < hw; ++i) {
                    const S d = p[i] - mean;
                    vacc += d * d;
                }
            }
            var = vacc / S(m);
            if (update_stats) {
                running_mean[c] = (S(1) - momentum) * running_mean[c] + momentum * mean;
                running_var[c] = (S(1) - momentum) * running_var[c] + momentum * var;
            }
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const S inv = S(1) / std::sqrt(var + eps);
        (*inv_std)[c] = inv;
        const S g = gamma.value()[c], bta = beta.value()[c];
        for (int n = 0; n < N; ++n) {
            const S* p = x.value().ptr() + (static_cast<long>(n) * C + c) * hw;
            S* xh = xhat->data() + (static_cast<long>(n) * C + c) * hw;
            S* o = out.ptr() + (static_cast<long>(n) * C + c) * hw;
            for (long i = 0; i < hw; ++i) {
                xh[i] = (p[i] - mean) * inv;
                o[i] = g * xh[i] + bta;
            }
        }
    }

    return make_op_node<S>(
        std::move(out), {x, gamma, beta},
        [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat, inv_std, N, C, hw, m,
         training](Node<S>& self) {
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (int c = 0; c < C; ++c) {
                S sum_g = S(0), sum_gx = S(0);
                for (int n = 0; n < N; ++n) {
                    const S* g = self.grad.ptr() + (static_cast<long>(n) * C + c) * hw;
                    const S* xh = xhat->data() + (static_cast<long>(n) * C + c) * hw;
                    for (long i = 0; i < hw; ++i) {
                        sum_g += g[i];
                        sum_gx += g[i] * xh[i];
                    }
                }
                if (gn->requires_grad) gn->grad[c] += sum_gx;
                if (bn->requires_grad) bn->grad[c] += sum_g;
                if (xn->requires_grad) {
                    const S gm = gn->value[c] * (*inv_std)[c];
                    const S mg = sum_g / S(m), mgx = sum_gx / S(m);
                    for (int n = 0; n < N; ++n) {
                        const S* g = self.grad.ptr() + (static_cast<long>(n) * C + c) * hw;
                        const S* xh = xhat->data() + (static_cast<long>(n) * C + c) * hw;
                        S* d = xn->grad.ptr() + (static_cast<long>(n) * C + c) * hw;
                        if (training)
                            for (long i = 0; i < hw; ++i)
                                d[i] += gm * (g[i] - mg - xh[i] * mgx);
                        else
                            for (long i = 0; i < hw; ++i) d[i] += gm * g[i];
                    }
                }
            }
        });
}

// Adaptive instance normalization. Per (sample, channel): whiten over the
// spatial positions with population std, then scale/shift with the style-
// predicted (gamma, beta), each shaped (N,C). eps is added to the std.
template <typename S>
Var<S> adain(Var<S> x, Var<S> gamma, Var<S> beta, S eps) {
    const auto& s = x.shape();
    const auto& sg = gamma.shape();
    if (s.size() != 4) throw ShapeError("adain: feature must be 4-d");
    if (sg.size() != 2 || sg[0] != s[0] || sg[1] != s[1] || gamma.shape() != beta.shape())
        throw ShapeError("adain: scale/bias must be (N,C) matching the feature");
    const int N = s[0], C = s[1];
    const long hw = static_cast<long>(s[2]) * s[3];

    auto xhat = std::make_shared<std::vector<S>>(x.numel());
    auto sigma = std::make_shared<std::vector<S>>(static_cast<std::size_t>(N) * C);

    Array<S> out(x.shape());
    for (int nc = 0; nc < N * C; ++nc) {
        const S* p = x.value().ptr() + static_cast<long>(nc) * hw;
        S mean = S(0);
        for (long i = 0; i < hw; ++i) mean += p[i];
        mean /= S(hw);
        S var = S(0);
        for (long i = 0; i < hw; ++i) {
            const S d = p[i] - mean;
            var += d * d;
        }
        var /= S(hw);
        const S sd = std::sqrt(var);
        (*sigma)[nc] = sd;
        const S inv = S(1) / (sd + eps);
        const S g = gamma.value()[nc], b = beta.value()[nc];
        S* xh = xhat->data() + static_cast<long>(nc) * hw;
        S* o = out.ptr() + static_cast<long>(nc) * hw;
        for (long i = 0; i < hw; ++i) {
            xh[i] = (p[i] - mean) * inv;
            o[i] = g * xh[i] + b;
        }
    }

    return make_op_node<S>(
        std::move(out), {x, gamma, beta},
        [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat, sigma, N, C, hw,
         eps](Node<S>& self) {
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (int nc = 0; nc < N * C; ++nc) {
                const S* g = self.grad.ptr() + static_cast<long>(nc) * hw;
                const S* xh = xhat->data() + static_cast<long>(nc) * hw;
                S sum_g = S(0), sum_gx = S(0);
                for (long i = 0; i < hw; ++i) {
                    sum_g += g[i];
                    sum_gx += g[i] * xh[i];
                }
                if (gn->requires_grad) gn->grad[nc] += sum_gx;
                if (bn->requires_grad) bn->grad[nc] += sum_g;
                if (xn->requires_grad) {
                    const S sd = (*sigma)[nc];
                    const S inv_s = S(1) / (sd + eps);
                    const S mg = sum_g / S(hw);
                    const S mgx_over_sd = sd > S(1e-30) ? (sum_gx / S(hw)) / sd : S(0);
                    const S gam = gn->value[nc];
                    S* d = xn->grad.ptr() + static_cast<long>(nc) * hw;
                    for (long i = 0; i < hw; ++i)
                        d[i] += gam * ((g[i] - mg) * inv_s - xh[i] * mgx_over_sd);
                }
            }
        });
}

// Softmax over the channel axis of (N,C,H,W).
template <typename S>
Var<S> softmax_channels(Var<S> x) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("softmax_channels: expects 4-d input");
    const int N = s[0], C = s[1];
    const long hw = static_cast<long>(s[2]) * s[3];
    Array<S> out(x.shape());
    for (int n = 0; n < N; ++n)
        for (long i = 0; i < hw; ++i) {
            S mx = x.value()[(static_cast<long>(n) * C) * hw + i];
            for (int c = 1; c < C; ++c)
                mx = std::max(mx, x.value()[(static_cast<long>(n) * C + c) * hw + i]);
            S z = S(0);
            for (int c = 0; c < C; ++c) {
                const S e = std::exp(x.value()[(static_cast<long>(n) * C + c) * hw + i] - mx);
                out[(static_cast<long>(n) * C + c) * hw + i] = e;
                z += e;
            }
            for (int c = 0; c < C; ++c) out[(static_cast<long>(n) * C + c) * hw + i] /= z;
        }
    auto y = std::make_shared<Array<S>>(out);
    return make_op_node<S>(std::move(out), {x}, [xn = x.node(), y, N, C, hw](Node<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (long i = 0; i < hw; ++i) {
                S dot = S(0);
                for (int c = 0; c < C; ++c) {
                    const long idx = (static_cast<long>(n) * C + c) * hw + i;
                    dot += self.grad[idx] * (*y)[idx];
                }
                for (int c = 0; c < C; ++c) {
                    const long idx = (static_cast<long>(n) * C + c) * hw + i;
                    xn->grad[idx] += (*y)[idx] * (self.grad[idx] - dot);
                }
            }
    });
}

// Gumbel softmax over channels. `noise` holds pre-drawn Gumbel(0,1) samples
// (all zeros for deterministic evaluation). hard=true emits per-pixel one-hot
// values with straight-through gradients of the soft distribution.
template <typename S>
Var<S> gumbel_softmax_channels(Var<S> x, const Array<S>& noise, S tau, bool hard) {
    if (tau <= S(0)) throw ConfigError("gumbel_softmax: temperature must be positive");
    check_same_shape(x.value(), noise, "gumbel_softmax noise");
    const auto& s = x.shape();
    const int N = s[0], C = s[1];
    const long hw = static_cast<long>(s[2]) * s[3];

    auto soft = std::make_shared<Array<S>>(x.shape());
    for (int n = 0; n < N; ++n)
        for (long i = 0; i < hw; ++i) {
            S mx = -std::numeric_limits<S>::infinity();
            for (int c = 0; c < C; ++c) {
                const long idx = (static_cast<long>(n) * C + c) * hw + i;
                const S z = (x.value()[idx] + noise[idx]) / tau;
                (*soft)[idx] = z;
                mx = std::max(mx, z);
            }
            S zsum = S(0);
            for (int c = 0; c < C; ++c) {
                const long idx = (static_cast<long>(n) * C + c) * hw + i;
                (*soft)[idx] = std::exp((*soft)[idx] - mx);
                zsum += (*soft)[idx];
            }
            for (int c = 0; c < C; ++c) (*soft)[(static_cast<long>(n) * C + c) * hw + i] /= zsum;
        }

    Array<S> out = *soft;
    if (hard) {
        for (int n = 0; n < N; ++n)
            for (long i = 0; i < hw; ++i) {
                int arg = 0;
                S best = (*soft)[(static_cast<long>(n) * C) * hw + i];
                for (int c = 1; c < C; ++c) {
                    const S v = (*soft)[(static_cast<long>(n) * C + c) * hw + i];
                    if (v > best) {
                        best = v;
                        arg = c;
                    }
                }
                for (int c = 0; c < C; ++c)
                    out[(static_cast<long>(n) * C + c) * hw + i] = (c == arg) ? S(1) : S(0);
            }
    }

    return make_op_node<S>(std::move(out), {x},
                           [xn = x.node(), soft, N, C, hw, tau](Node<S>& self) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (int n = 0; n < N; ++n)
                                   for (long i = 0; i < hw; ++i) {
                                       S dot = S(0);
                                       for (int c = 0; c < C; ++c) {
                                           const long idx = (static_cast<long>(n) * C + c) * hw + i;
                                           dot += self.grad[idx] * (*soft)[idx];
                                       }
                                       for (int c = 0; c < C; ++c) {
                                           const long idx = (static_cast<long>(n) * C + c) * hw + i;
                                           xn->grad[idx] +=
                                               (*soft)[idx] * (self.grad[idx] - dot) / tau;
                                       }
                                   }
                           });
}

// p:(N,K,H,W), labels:(N,H,W) -> (N,1,H,W) with out = p[n, labels, h, w]
template <typename S>
Var<S> gather_label_prob(Var<S> p, const Array<int>& labels) {
    const auto& s = p.shape();
    if (s.size() != 4) throw ShapeError("gather_label_prob: probs must be 4-d");
    const int N = s[0], K = s[1], H = s[2], W = s[3];
    if (labels.shape != Shape{N, H, W})
        throw ShapeError("gather_label_prob: label map must be (N,H,W)");
    const long hw = static_cast<long>(H) * W;
    Array<S> out(Shape{N, 1, H, W});
    for (int n = 0; n < N; ++n)
        for (long i = 0; i < hw; ++i) {
            const int y = labels[n * hw + i];
            if (y < 0 || y >= K)
                throw DataError("label value " + std::to_string(y) + " outside [0," +
                                std::to_string(K) + ")");
            out[n * hw + i] = p.value()[(static_cast<long>(n) * K + y) * hw + i];
        }
    auto lab = std::make_shared<Array<int>>(labels);
    return make_op_node<S>(std::move(out), {p}, [pn = p.node(), lab, N, K, hw](Node<S>& self) {
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (long i = 0; i < hw; ++i) {
                const int y = (*lab)[n * hw + i];
                pn->grad[(static_cast<long>(n) * K + y) * hw + i] += self.grad[n * hw + i];
            }
    });
}

// Pairwise cosine similarity between row sets: X:(A,Z), Y:(B,Z) -> (A,B).
// Norms carry a +1e-12 guard.
template <typename S>
Var<S> cosine_sim_matrix(Var<S> x, Var<S> y) {
    const auto& sx = x.shape();
    const auto& sy = y.shape();
    if (sx.size() != 2 || sy.size() != 2 || sx[1] != sy[1])
        throw ShapeError("cosine_sim_matrix: expects (A,Z) and (B,Z)");
    const int A = sx[0], B = sy[0], Z = sx[1];
    const S guard = S(1e-12);

    auto nx = std::make_shared<std::vector<S>>(A);
    auto ny = std::make_shared<std::vector<S>>(B);
    for (int a = 0; a < A; ++a) {
        S acc = S(0);
        for (int z = 0; z < Z; ++z) acc += x.value()[a * Z + z] * x.value()[a * Z + z];
        (*nx)[a] = std::sqrt(acc) + guard;
    }
    for (int b = 0; b < B; ++b) {
        S acc = S(0);
        for (int z = 0; z < Z; ++z) acc += y.value()[b * Z + z] * y.value()[b * Z + z];
        (*ny)[b] = std::sqrt(acc) + guard;
    }
    Array<S> out(Shape{A, B});
    for (int a = 0; a < A; ++a)
        for (int b = 0; b < B; ++b) {
            S dot = S(0);
            for (int z = 0; z < Z; ++z) dot += x.value()[a * Z + z] * y.value()[b * Z + z];
            out[a * B + b] = dot / ((*nx)[a] * (*ny)[b]);
        }

    auto sims = std::make_shared<Array<S>>(out);
    return make_op_node<S>(
        std::move(out), {x, y},
        [xn = x.node(), yn = y.node(), nx, ny, sims, A, B, Z, guard](Node<S>& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (yn->requires_grad) yn->ensure_grad();
            for (int a = 0; a < A; ++a)
                for (int b = 0; b < B; ++b) {
                    const S g = self.grad[a * B + b];
                    if (g == S(0)) continue;
                    const S inv = S(1) / ((*nx)[a] * (*ny)[b]);
                    const S sab = (*sims)[a * B + b];
                    if (xn->requires_grad) {
                        for (int z = 0; z < Z; ++z)
                            xn->grad[a * Z + z] +=
                                g * (yn->value[b * Z + z] * inv -
                                     sab * xn->value[a * Z + z] / ((*nx)[a] * (*nx)[a]));
                    }
                    if (yn->requires_grad) {
                        for (int z = 0; z < Z; ++z)
                            yn->grad[b * Z + z] +=
                                g * (xn->value[a * Z + z] * inv -
                                     sab * yn->value[b * Z + z] / ((*ny)[b] * (*ny)[b]));
                    }
                }
        });
}

// InfoNCE over a similarity matrix. Anchor a pairs with sims[a, pos_index[a]];
// entries with neg_mask[a*B+b] != 0 form its negative set. Mean over anchors of
//   -log( e^{s_p/tau} / (e^{s_p/tau} + sum_neg e^{s_n/tau}) )
template <typename S>
Var<S> masked_info_nce(Var<S> sims, const std::vector<int>& pos_index,
                       const std::vector<std::uint8_t>& neg_mask, S tau) {
    const auto& s = sims.shape();
    if (s.size() != 2) throw ShapeError("masked_info_nce: sims must be 2-d");
    const int A = s[0], B = s[1];
    if (static_cast<int>(pos_index.size()) != A || static_cast<int>(neg_mask.size()) != A * B)
        throw ShapeError("masked_info_nce: index/mask sizes do not match sims");

    auto weights = std::make_shared<std::vector<S>>(static_cast<std::size_t>(A) * B, S(0));
    S loss = S(0);
    for (int a = 0; a < A; ++a) {
        const S sp = sims.value()[a * B + pos_index[a]] / tau;
        S mx = sp;
        for (int b = 0; b < B; ++b)
            if (neg_mask[a * B + b]) mx = std::max(mx, sims.value()[a * B + b] / tau);
        S z = std::exp(sp - mx);
        const S ep = z;
        for (int b = 0; b < B; ++b)
            if (neg_mask[a * B + b]) {
                const S e = std::exp(sims.value()[a * B + b] / tau - mx);
                (*weights)[a * B + b] = e;
                z += e;
            }
        loss += -(std::log(ep) - std::log(z));
        // normalize stored exps into softmax weights; fold the positive in
        for (int b = 0; b < B; ++b)
            if (neg_mask[a * B + b]) (*weights)[a * B + b] /= z;
        (*weights)[a * B + pos_index[a]] += ep / z - S(1);
    }
    loss /= S(A);

    auto pos = std::make_shared<std::vector<int>>(pos_index);
    auto mask = std::make_shared<std::vector<std::uint8_t>>(neg_mask);
    return make_op_node<S>(Array<S>::scalar(loss), {sims},
                           [sn = sims.node(), weights, pos, mask, A, B, tau](Node<S>& self) {
                               if (!sn->requires_grad) return;
                               sn->ensure_grad();
                               const S g = self.grad[0] / (S(A) * tau);
                               for (long i = 0; i < static_cast<long>(A) * B; ++i)
                                   sn->grad[i] += g * (*weights)[i];
                           });
}

}  // namespace cddsa::nn
