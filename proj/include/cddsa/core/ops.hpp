#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "cddsa/core/graph.hpp"

// Elementwise, reduction, shape and dense-matrix primitives. Each op returns
// a Var wired with a closure that routes gradients to its parents.

namespace cddsa::nn {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapM = Eigen::Map<const MatRM<S>>;

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    check_same_shape(a.value(), b.value(), "add");
    Array<S> out = a.value();
    const S* pb = b.value().ptr();
    for (long i = 0; i < out.numel(); ++i) out[i] += pb[i];
    return make_op_node<S>(std::move(out), {a, b}, [an = a.node(), bn = b.node()](Node<S>& self) {
        accumulate_grad(an, self.grad);
        accumulate_grad(bn, self.grad);
    });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    check_same_shape(a.value(), b.value(), "sub");
    Array<S> out = a.value();
    const S* pb = b.value().ptr();
    for (long i = 0; i < out.numel(); ++i) out[i] -= pb[i];
    return make_op_node<S>(std::move(out), {a, b}, [an = a.node(), bn = b.node()](Node<S>& self) {
        accumulate_grad(an, self.grad);
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (long i = 0; i < self.grad.numel(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
    check_same_shape(a.value(), b.value(), "mul");
    Array<S> out = a.value();
    const S* pb = b.value().ptr();
    for (long i = 0; i < out.numel(); ++i) out[i] *= pb[i];
    return make_op_node<S>(std::move(out), {a, b},
                           [an = a.node(), bn = b.node()](Node<S>& self) {
                               if (an->requires_grad) {
                                   an->ensure_grad();
                                   for (long i = 0; i < self.grad.numel(); ++i)
                                       an->grad[i] += self.grad[i] * bn->value[i];
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (long i = 0; i < self.grad.numel(); ++i)
                                       bn->grad[i] += self.grad[i] * an->value[i];
                               }
                           });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
    Array<S> out = a.value();
    for (long i = 0; i < out.numel(); ++i) out[i] += c;
    return make_op_node<S>(std::move(out), {a},
                           [an = a.node()](Node<S>& self) { accumulate_grad(an, self.grad); });
}

template <typename S>
Var<S> mul_scalar(Var<S> a, S c) {
    Array<S> out = a.value();
    for (long i = 0; i < out.numel(); ++i) out[i] *= c;
    return make_op_node<S>(std::move(out), {a}, [an = a.node(), c](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i) an->grad[i] += c * self.grad[i];
    });
}

template <typename S>
Var<S> exp_op(Var<S> a) {
    Array<S> out = a.value();
    for (long i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
    return make_op_node<S>(Array<S>(out), {a}, [an = a.node(), y = out](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i) an->grad[i] += self.grad[i] * y[i];
    });
}

// log with a floor: inputs are probabilities/variances that the callers keep
// strictly positive; the floor only guards against exact zeros.
template <typename S>
Var<S> log_op(Var<S> a, S floor = S(1e-30)) {
    Array<S> out = a.value();
    for (long i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(out[i], floor));
    return make_op_node<S>(std::move(out), {a}, [an = a.node(), floor](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i)
            an->grad[i] += self.grad[i] / std::max(an->value[i], floor);
    });
}

template <typename S>
Var<S> sqrt_op(Var<S> a) {
    Array<S> out = a.value();
    for (long i = 0; i < out.numel(); ++i) out[i] = std::sqrt(out[i]);
    return make_op_node<S>(Array<S>(out), {a}, [an = a.node(), y = out](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i)
            an->grad[i] += self.grad[i] * S(0.5) / std::max(y[i], S(1e-30));
    });
}

template <typename S>
Var<S> tanh_op(Var<S> a) {
    Array<S> out = a.value();
    for (long i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    return make_op_node<S>(Array<S>(out), {a}, [an = a.node(), y = out](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i)
            an->grad[i] += self.grad[i] * (S(1) - y[i] * y[i]);
    });
}

template <typename S>
Var<S> sigmoid_op(Var<S> a) {
    Array<S> out = a.value();
    for (long i = 0; i < out.numel(); ++i) out[i] = S(1) / (S(1) + std::exp(-out[i]));
    return make_op_node<S>(Array<S>(out), {a}, [an = a.node(), y = out](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i)
            an->grad[i] += self.grad[i] * y[i] * (S(1) - y[i]);
    });
}

template <typename S>
Var<S> leaky_relu(Var<S> a, S slope) {
    Array<S> out = a.value();
    for (long i = 0; i < out.numel(); ++i)
        if (out[i] < S(0)) out[i] *= slope;
    return make_op_node<S>(std::move(out), {a}, [an = a.node(), slope](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i)
            an->grad[i] += self.grad[i] * (an->value[i] > S(0) ? S(1) : slope);
    });
}

template <typename S>
Var<S> relu(Var<S> a) {
    return leaky_relu(a, S(0));
}

template <typename S>
Var<S> clamp_op(Var<S> a, S lo, S hi) {
    Array<S> out = a.value();
    for (long i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], lo, hi);
    return make_op_node<S>(std::move(out), {a}, [an = a.node(), lo, hi](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (long i = 0; i < self.grad.numel(); ++i) {
            const S v = an->value[i];
            if (v > lo && v < hi) an->grad[i] += self.grad[i];
        }
    });
}

template <typename S>
Var<S> sum_all(Var<S> a) {
    S acc = S(0);
    for (long i = 0; i < a.numel(); ++i) acc += a.value()[i];
    return make_op_node<S>(Array<S>::scalar(acc), {a}, [an = a.node()](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const S g = self.grad[0];
        for (long i = 0; i < an->grad.numel(); ++i) an->grad[i] += g;
    });
}

template <typename S>
Var<S> mean_all(Var<S> a) {
    const long n = a.numel();
    S acc = S(0);
    for (long i = 0; i < n; ++i) acc += a.value()[i];
    return make_op_node<S>(Array<S>::scalar(acc / S(n)), {a}, [an = a.node(), n](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const S g = self.grad[0] / S(n);
        for (long i = 0; i < an->grad.numel(); ++i) an->grad[i] += g;
    });
}

// Mean absolute difference. Sub-gradient 0 at exact ties.
template <typename S>
Var<S> mae(Var<S> a, Var<S> b) {
    check_same_shape(a.value(), b.value(), "mae");
    const long n = a.numel();
    S acc = S(0);
    for (long i = 0; i < n; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
    return make_op_node<S>(Array<S>::scalar(acc / S(n)), {a, b},
                           [an = a.node(), bn = b.node(), n](Node<S>& self) {
                               const S g = self.grad[0] / S(n);
                               if (an->requires_grad) an->ensure_grad();
                               if (bn->requires_grad) bn->ensure_grad();
                               for (long i = 0; i < n; ++i) {
                                   const S d = an->value[i] - bn->value[i];
                                   const S s = d > S(0) ? g : (d < S(0) ? -g : S(0));
                                   if (an->requires_grad) an->grad[i] += s;
                                   if (bn->requires_grad) bn->grad[i] -= s;
                               }
                           });
}

template <typename S>
Var<S> reshape(Var<S> a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: incompatible target " + shape_str(shape));
    Array<S> out(shape, a.value().data);
    return make_op_node<S>(std::move(out), {a},
                           [an = a.node()](Node<S>& self) { accumulate_grad(an, self.grad); });
}

// (N,Ca,H,W) ++ (N,Cb,H,W) -> (N,Ca+Cb,H,W)
template <typename S>
Var<S> concat_channels(Var<S> a, Var<S> b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw ShapeError("concat_channels: incompatible " + shape_str(sa) + " / " + shape_str(sb));
    const int N = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
    const long hw = static_cast<long>(H) * W;
    Array<S> out(Shape{N, Ca + Cb, H, W});
    for (int n = 0; n < N; ++n) {
        std::copy_n(a.value().ptr() + n * Ca * hw, Ca * hw, out.ptr() + n * (Ca + Cb) * hw);
        std::copy_n(b.value().ptr() + n * Cb * hw, Cb * hw,
                    out.ptr() + n * (Ca + Cb) * hw + Ca * hw);
    }
    return make_op_node<S>(std::move(out), {a, b},
                           [an = a.node(), bn = b.node(), N, Ca, Cb, hw](Node<S>& self) {
                               if (an->requires_grad) {
                                   an->ensure_grad();
                                   for (int n = 0; n < N; ++n) {
                                       const S* g = self.grad.ptr() + n * (Ca + Cb) * hw;
                                       S* d = an->grad.ptr() + n * Ca * hw;
                                       for (long i = 0; i < Ca * hw; ++i) d[i] += g[i];
                                   }
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (int n = 0; n < N; ++n) {
                                       const S* g = self.grad.ptr() + n * (Ca + Cb) * hw + Ca * hw;
                                       S* d = bn->grad.ptr() + n * Cb * hw;
                                       for (long i = 0; i < Cb * hw; ++i) d[i] += g[i];
                                   }
                               }
                           });
}

// (1,F) -> (n,F) by repetition
template <typename S>
Var<S> repeat_rows(Var<S> a, int n) {
    const auto& sa = a.shape();
    if (sa.size() != 2 || sa[0] != 1) throw ShapeError("repeat_rows: expects (1,F)");
    const int F = sa[1];
    Array<S> out(Shape{n, F});
    for (int r = 0; r < n; ++r) std::copy_n(a.value().ptr(), F, out.ptr() + r * F);
    return make_op_node<S>(std::move(out), {a}, [an = a.node(), n, F](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int r = 0; r < n; ++r)
            for (int f = 0; f < F; ++f) an->grad[f] += self.grad[r * F + f];
    });
}

// (N,C,H,W) -> (N,1,H,W), picks channel c
template <typename S>
Var<S> select_channel(Var<S> a, int c) {
    const auto& s = a.shape();
    if (s.size() != 4 || c < 0 || c >= s[1]) throw ShapeError("select_channel: bad channel");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const long hw = static_cast<long>(H) * W;
    Array<S> out(Shape{N, 1, H, W});
    for (int n = 0; n < N; ++n)
        std::copy_n(a.value().ptr() + (n * C + c) * hw, hw, out.ptr() + n * hw);
    return make_op_node<S>(std::move(out), {a}, [an = a.node(), N, C, c, hw](Node<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const S* g = self.grad.ptr() + n * hw;
            S* d = an->grad.ptr() + (n * C + c) * hw;
            for (long i = 0; i < hw; ++i) d[i] += g[i];
        }
    });
}

// (N,K) x (K,M) -> (N,M)
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw ShapeError("matmul: incompatible " + shape_str(sa) + " x " + shape_str(sb));
    const int N = sa[0], K = sa[1], M = sb[1];
    Array<S> out(Shape{N, M});
    CMapM<S> A(a.value().ptr(), N, K), B(b.value().ptr(), K, M);
    MapM<S> Y(out.ptr(), N, M);
    Y.noalias() = A * B;
    return make_op_node<S>(std::move(out), {a, b},
                           [an = a.node(), bn = b.node(), N, K, M](Node<S>& self) {
                               CMapM<S> G(self.grad.ptr(), N, M);
                               CMapM<S> A(an->value.ptr(), N, K), B(bn->value.ptr(), K, M);
                               if (an->requires_grad) {
                                   an->ensure_grad();
                                   MapM<S> dA(an->grad.ptr(), N, K);
                                   dA.noalias() += G * B.transpose();
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   MapM<S> dB(bn->grad.ptr(), K, M);
                                   dB.noalias() += A.transpose() * G;
                               }
                           });
}

// (N,M) + bias(M) broadcast over rows
template <typename S>
Var<S> add_bias_rows(Var<S> x, Var<S> bias) {
    const auto& sx = x.shape();
    const auto& sbv = bias.shape();
    if (sx.size() != 2 || sbv.size() != 1 || sbv[0] != sx[1])
        throw ShapeError("add_bias_rows: incompatible shapes");
    const int N = sx[0], M = sx[1];
    Array<S> out = x.value();
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) out[n * M + m] += bias.value()[m];
    return make_op_node<S>(std::move(out), {x, bias},
                           [xn = x.node(), bn = bias.node(), N, M](Node<S>& self) {
                               accumulate_grad(xn, self.grad);
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (int n = 0; n < N; ++n)
                                       for (int m = 0; m < M; ++m)
                                           bn->grad[m] += self.grad[n * M + m];
                               }
                           });
}

// (N,M) -> (N,len), columns [start, start+len)
template <typename S>
Var<S> slice_cols(Var<S> x, int start, int len) {
    const auto& s = x.shape();
    if (s.size() != 2 || start < 0 || start + len > s[1])
        throw ShapeError("slice_cols: range out of bounds");
    const int N = s[0], M = s[1];
    Array<S> out(Shape{N, len});
    for (int n = 0; n < N; ++n)
        std::copy_n(x.value().ptr() + n * M + start, len, out.ptr() + n * len);
    return make_op_node<S>(std::move(out), {x}, [xn = x.node(), N, M, start, len](Node<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int j = 0; j < len; ++j)
                xn->grad[n * M + start + j] += self.grad[n * len + j];
    });
}

// (N,C,H,W) -> (N,C) spatial mean
template <typename S>
Var<S> global_avg_pool(Var<S> x) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("global_avg_pool: expects 4-d input");
    const int N = s[0], C = s[1];
    const long hw = static_cast<long>(s[2]) * s[3];
    Array<S> out(Shape{N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const S* p = x.value().ptr() + (n * C + c) * hw;
            S acc = S(0);
            for (long i = 0; i < hw; ++i) acc += p[i];
            out[n * C + c] = acc / S(hw);
        }
    return make_op_node<S>(std::move(out), {x}, [xn = x.node(), N, C, hw](Node<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const S g = self.grad[n * C + c] / S(hw);
                S* d = xn->grad.ptr() + (n * C + c) * hw;
                for (long i = 0; i < hw; ++i) d[i] += g;
            }
    });
}

}  // namespace cddsa::nn
