#include "rdsal/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gemm.hpp"

// Backward closures re-read input data (and re-run im2col). The tape
// therefore assumes forward values stay untouched until backward() has run;
// optimizer updates must happen after backprop, which the trainer respects.

namespace rdsal {

namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!same_shape(a.shape(), b.shape()))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
void checked(const Tensor<T>& t, const char* op) {
    if (checked_mode()) check_finite(t, op);
}

std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

// col is (C*K*K) x (Ho*Wo); caller provides zeroed storage.
template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t K,
            std::int64_t stride, std::int64_t pad, std::int64_t dil, std::int64_t Ho,
            std::int64_t Wo, T* col) {
    const std::int64_t P = Ho * Wo;
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t kh = 0; kh < K; ++kh)
            for (std::int64_t kw = 0; kw < K; ++kw) {
                T* row = col + ((c * K + kh) * K + kw) * P;
                for (std::int64_t ho = 0; ho < Ho; ++ho) {
                    std::int64_t h = ho * stride - pad + kh * dil;
                    if (h < 0 || h >= H) continue;  // row was zeroed
                    const T* src = x + (c * H + h) * W;
                    T* dst = row + ho * Wo;
                    for (std::int64_t wo = 0; wo < Wo; ++wo) {
                        std::int64_t w0 = wo * stride - pad + kw * dil;
                        if (w0 >= 0 && w0 < W) dst[wo] = src[w0];
                    }
                }
            }
}

template <typename T>
void col2im_acc(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t K,
                std::int64_t stride, std::int64_t pad, std::int64_t dil, std::int64_t Ho,
                std::int64_t Wo, T* dx) {
    const std::int64_t P = Ho * Wo;
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t kh = 0; kh < K; ++kh)
            for (std::int64_t kw = 0; kw < K; ++kw) {
                const T* row = col + ((c * K + kh) * K + kw) * P;
                for (std::int64_t ho = 0; ho < Ho; ++ho) {
                    std::int64_t h = ho * stride - pad + kh * dil;
                    if (h < 0 || h >= H) continue;
                    T* dst = dx + (c * H + h) * W;
                    const T* src = row + ho * Wo;
                    for (std::int64_t wo = 0; wo < Wo; ++wo) {
                        std::int64_t w0 = wo * stride - pad + kw * dil;
                        if (w0 >= 0 && w0 < W) dst[w0] += src[wo];
                    }
                }
            }
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same(a, b, "add");
    Tensor<T> out(a.shape());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
    autograd::record<T>({a, b}, out, [a = a, b = b, out]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad_accum();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad_accum();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
    checked(out, "add");
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same(a, b, "sub");
    Tensor<T> out(a.shape());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
    autograd::record<T>({a, b}, out, [a = a, b = b, out]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad_accum();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad_accum();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
    checked(out, "sub");
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same(a, b, "mul");
    Tensor<T> out(a.shape());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    autograd::record<T>({a, b}, out, [a = a, b = b, out]() mutable {
        auto g = out.grad();
        auto ad2 = a.data();
        auto bd2 = b.data();
        if (a.requires_grad()) {
            auto ga = a.grad_accum();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd2[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad_accum();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad2[i];
        }
    });
    checked(out, "mul");
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    Tensor<T> out(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = s * xd[i];
    autograd::record<T>({x}, out, [x = x, out, s]() mutable {
        auto g = out.grad();
        auto gx = x.grad_accum();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
    });
    checked(out, "scale");
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    Tensor<T> out(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] + s;
    autograd::record<T>({x}, out, [x = x, out]() mutable {
        auto g = out.grad();
        auto gx = x.grad_accum();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    checked(out, "add_scalar");
    return out;
}

template <typename T>
Tensor<T> rsub_scalar(T s, const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = s - xd[i];
    autograd::record<T>({x}, out, [x = x, out]() mutable {
        auto g = out.grad();
        auto gx = x.grad_accum();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
    });
    checked(out, "rsub_scalar");
    return out;
}

template <typename T>
Tensor<T> log_elem(const Tensor<T>& x) {
    auto xd = x.data();
    for (T v : xd)
        if (!(v > T(0))) throw ValueError("log_elem: non-positive input");
    Tensor<T> out(x.shape());
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::log(xd[i]);
    autograd::record<T>({x}, out, [x = x, out]() mutable {
        auto g = out.grad();
        auto xd2 = x.data();
        auto gx = x.grad_accum();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xd2[i];
    });
    checked(out, "log_elem");
    return out;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    if (!(lo <= hi)) throw ValueError("clamp: lo > hi");
    Tensor<T> out(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::min(std::max(xd[i], lo), hi);
    autograd::record<T>({x}, out, [x = x, out, lo, hi]() mutable {
        auto g = out.grad();
        auto xd2 = x.data();
        auto gx = x.grad_accum();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xd2[i] >= lo && xd2[i] <= hi) gx[i] += g[i];
    });
    checked(out, "clamp");
    return out;
}

template <typename T>
Tensor<T> pointwise(const Tensor<T>& x, Activation act) {
    Tensor<T> out(x.shape());
    auto xd = x.data();
    auto od = out.data();
    const T seps = T(1e-7);
    switch (act) {
        case Activation::Relu:
            for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > T(0) ? xd[i] : T(0);
            break;
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < od.size(); ++i) {
                T v = T(1) / (T(1) + std::exp(-xd[i]));
                od[i] = std::min(std::max(v, seps), T(1) - seps);
            }
            break;
        case Activation::Tanh:
            for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::tanh(xd[i]);
            break;
    }
    autograd::record<T>({x}, out, [x = x, out, act]() mutable {
        auto g = out.grad();
        auto od2 = out.data();
        auto gx = x.grad_accum();
        switch (act) {
            case Activation::Relu:
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (od2[i] > T(0)) gx[i] += g[i];
                break;
            case Activation::Sigmoid:
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * od2[i] * (T(1) - od2[i]);
                break;
            case Activation::Tanh:
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - od2[i] * od2[i]);
                break;
        }
    });
    checked(out, "pointwise");
    return out;
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out({1});
    T acc = T(0);
    for (T v : x.data()) acc += v;
    out.data()[0] = acc;
    autograd::record<T>({x}, out, [x = x, out]() mutable {
        T g = out.grad()[0];
        auto gx = x.grad_accum();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
    checked(out, "sum");
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    Tensor<T> out({1});
    T acc = T(0);
    for (T v : x.data()) acc += v;
    const T inv = T(1) / static_cast<T>(x.numel());
    out.data()[0] = acc * inv;
    autograd::record<T>({x}, out, [x = x, out, inv]() mutable {
        T g = out.grad()[0] * inv;
        auto gx = x.grad_accum();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
    checked(out, "mean");
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const Shape& s = x.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("softmax: axis out of range for " + shape_str(s));
    std::int64_t len = s[static_cast<std::size_t>(axis)];
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[static_cast<std::size_t>(i)];

    Tensor<T> out(s);
    auto xd = x.data();
    auto od = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const T* xp = xd.data() + o * len * inner + in;
            T* op = od.data() + o * len * inner + in;
            T m = xp[0];
            for (std::int64_t k = 1; k < len; ++k) m = std::max(m, xp[k * inner]);
            T z = T(0);
            for (std::int64_t k = 0; k < len; ++k) {
                T e = std::exp(xp[k * inner] - m);
                op[k * inner] = e;
                z += e;
            }
            T invz = T(1) / z;
            for (std::int64_t k = 0; k < len; ++k) op[k * inner] *= invz;
        }
    autograd::record<T>({x}, out, [x = x, out, outer, inner, len]() mutable {
        auto g = out.grad();
        auto od2 = out.data();
        auto gx = x.grad_accum();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                const T* gp = g.data() + o * len * inner + in;
                const T* op = od2.data() + o * len * inner + in;
                T* dp = gx.data() + o * len * inner + in;
                T dot = T(0);
                for (std::int64_t k = 0; k < len; ++k) dot += gp[k * inner] * op[k * inner];
                for (std::int64_t k = 0; k < len; ++k)
                    dp[k * inner] += op[k * inner] * (gp[k * inner] - dot);
            }
    });
    checked(out, "softmax");
    return out;
}

// ------------------------------------------------------------ linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::int64_t M = a.size(0), K = a.size(1), N = b.size(1);
    Tensor<T> out({M, N});
    detail::gemm_nn(M, N, K, a.data().data(), b.data().data(), out.data().data());
    autograd::record<T>({a, b}, out, [a = a, b = b, out, M, K, N]() mutable {
        auto g = out.grad();
        if (a.requires_grad())
            detail::gemm_abt(M, K, N, g.data(), b.data().data(), a.grad_accum().data());
        if (b.requires_grad())
            detail::gemm_atb(K, N, M, a.data().data(), g.data(), b.grad_accum().data());
    });
    checked(out, "matmul");
    return out;
}

namespace {
template <typename T>
Tensor<T> linear_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    if (x.rank() != 2 || w.rank() != 2 || x.size(1) != w.size(0))
        throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
    const std::int64_t N = x.size(0), In = x.size(1), Out = w.size(1);
    if (bias && (bias->rank() != 1 || bias->size(0) != Out))
        throw ShapeError("linear: bias shape " + shape_str(bias->shape()) + " does not match out=" +
                         std::to_string(Out));
    Tensor<T> out({N, Out});
    detail::gemm_nn(N, Out, In, x.data().data(), w.data().data(), out.data().data());
    if (bias) {
        auto bd = bias->data();
        auto od = out.data();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t j = 0; j < Out; ++j) od[n * Out + j] += bd[j];
    }
    Tensor<T> b = bias ? *bias : Tensor<T>();
    autograd::record<T>({x, w, b}, out, [x = x, w = w, b, out, N, In, Out]() mutable {
        auto g = out.grad();
        if (x.requires_grad())
            detail::gemm_abt(N, In, Out, g.data(), w.data().data(), x.grad_accum().data());
        if (w.requires_grad())
            detail::gemm_atb(In, Out, N, x.data().data(), g.data(), w.grad_accum().data());
        if (b.defined() && b.requires_grad()) {
            auto gb = b.grad_accum();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t j = 0; j < Out; ++j) gb[j] += g[n * Out + j];
        }
    });
    checked(out, "linear");
    return out;
}
}  // namespace

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
    return linear_impl<T>(x, w, nullptr);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    return linear_impl<T>(x, w, &bias);
}

// -------------------------------------------------------------- convolutions

namespace {
template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                      std::int64_t stride, std::int64_t pad, std::int64_t dil) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d: expected 4-d input and weight, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    if (w.size(2) != w.size(3)) throw ShapeError("conv2d: non-square kernel " + shape_str(w.shape()));
    if (x.size(1) != w.size(1))
        throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    if (stride < 1 || pad < 0 || dil < 1) throw ValueError("conv2d: bad stride/padding/dilation");
    const std::int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const std::int64_t O = w.size(0), K = w.size(2);
    const std::int64_t span = dil * (K - 1) + 1;
    const std::int64_t Ho = (H + 2 * pad - span) / stride + 1;
    const std::int64_t Wo = (W + 2 * pad - span) / stride + 1;
    if (Ho < 1 || Wo < 1)
        throw ShapeError("conv2d: kernel does not fit input " + shape_str(x.shape()));
    if (bias && (bias->rank() != 1 || bias->size(0) != O))
        throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()));

    const std::int64_t CKK = C * K * K, P = Ho * Wo;
    const bool unit = (K == 1 && stride == 1 && pad == 0);
    Tensor<T> out({N, O, Ho, Wo});
    const T* xd = x.data().data();
    const T* wd = w.data().data();
    T* od = out.data().data();
    std::vector<T> col;
    if (!unit) col.assign(static_cast<std::size_t>(CKK * P), T(0));
    for (std::int64_t n = 0; n < N; ++n) {
        const T* xn = xd + n * C * H * W;
        const T* cn = xn;
        if (!unit) {
            std::fill(col.begin(), col.end(), T(0));
            im2col(xn, C, H, W, K, stride, pad, dil, Ho, Wo, col.data());
            cn = col.data();
        }
        detail::gemm_nn(O, P, CKK, wd, cn, od + n * O * P);
    }
    if (bias) {
        auto bd = bias->data();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t o = 0; o < O; ++o) {
                T bv = bd[o];
                T* row = od + (n * O + o) * P;
                for (std::int64_t p = 0; p < P; ++p) row[p] += bv;
            }
    }

    Tensor<T> b = bias ? *bias : Tensor<T>();
    autograd::record<T>({x, w, b}, out,
                        [x = x, w = w, b, out, stride, pad, dil, N, C, H, W, O, K, Ho, Wo,
                         CKK, P, unit]() mutable {
        auto g = out.grad();
        const T* gd = g.data();
        const T* xd2 = x.data().data();
        const T* wd2 = w.data().data();
        if (b.defined() && b.requires_grad()) {
            auto gb = b.grad_accum();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t o = 0; o < O; ++o) {
                    const T* row = gd + (n * O + o) * P;
                    T acc = T(0);
                    for (std::int64_t p = 0; p < P; ++p) acc += row[p];
                    gb[o] += acc;
                }
        }
        const bool need_x = x.requires_grad(), need_w = w.requires_grad();
        if (!need_x && !need_w) return;
        T* gw = need_w ? w.grad_accum().data() : nullptr;
        T* gx = need_x ? x.grad_accum().data() : nullptr;
        std::vector<T> col, dcol;
        if (!unit) {
            col.assign(static_cast<std::size_t>(CKK * P), T(0));
            if (need_x) dcol.assign(static_cast<std::size_t>(CKK * P), T(0));
        }
        for (std::int64_t n = 0; n < N; ++n) {
            const T* gn = gd + n * O * P;
            const T* xn = xd2 + n * C * H * W;
            if (unit) {
                if (need_w) detail::gemm_abt(O, CKK, P, gn, xn, gw);
                if (need_x) detail::gemm_atb(CKK, P, O, wd2, gn, gx + n * C * H * W);
            } else {
                std::fill(col.begin(), col.end(), T(0));
                im2col(xn, C, H, W, K, stride, pad, dil, Ho, Wo, col.data());
                if (need_w) detail::gemm_abt(O, CKK, P, gn, col.data(), gw);
                if (need_x) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_atb(CKK, P, O, wd2, gn, dcol.data());
                    col2im_acc(dcol.data(), C, H, W, K, stride, pad, dil, Ho, Wo,
                               gx + n * C * H * W);
                }
            }
        }
    });
    checked(out, "conv2d");
    return out;
}
}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::int64_t stride, std::int64_t padding,
                 std::int64_t dilation) {
    return conv2d_impl<T>(x, w, nullptr, stride, padding, dilation);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::int64_t stride,
                 std::int64_t padding, std::int64_t dilation) {
    return conv2d_impl<T>(x, w, &bias, stride, padding, dilation);
}

namespace {
template <typename T>
Tensor<T> conv2d_transpose_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                                std::int64_t stride, std::int64_t pad) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d_transpose: expected 4-d input and weight");
    if (w.size(2) != w.size(3))
        throw ShapeError("conv2d_transpose: non-square kernel " + shape_str(w.shape()));
    if (x.size(1) != w.size(0))
        throw ShapeError("conv2d_transpose: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    if (stride < 1 || pad < 0) throw ValueError("conv2d_transpose: bad stride/padding");
    const std::int64_t N = x.size(0), I = x.size(1), H = x.size(2), W = x.size(3);
    const std::int64_t O = w.size(1), K = w.size(2);
    const std::int64_t Ho = (H - 1) * stride - 2 * pad + K;
    const std::int64_t Wo = (W - 1) * stride - 2 * pad + K;
    if (Ho < 1 || Wo < 1) throw ShapeError("conv2d_transpose: empty output");
    if (bias && (bias->rank() != 1 || bias->size(0) != O))
        throw ShapeError("conv2d_transpose: bias shape " + shape_str(bias->shape()));

    Tensor<T> out({N, O, Ho, Wo});
    const T* xd = x.data().data();
    const T* wd = w.data().data();
    T* od = out.data().data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t i = 0; i < I; ++i)
            for (std::int64_t h = 0; h < H; ++h)
                for (std::int64_t ww = 0; ww < W; ++ww) {
                    T xv = xd[((n * I + i) * H + h) * W + ww];
                    for (std::int64_t o = 0; o < O; ++o)
                        for (std::int64_t kh = 0; kh < K; ++kh) {
                            std::int64_t ho = h * stride - pad + kh;
                            if (ho < 0 || ho >= Ho) continue;
                            T* orow = od + ((n * O + o) * Ho + ho) * Wo;
                            const T* wrow = wd + ((i * O + o) * K + kh) * K;
                            for (std::int64_t kw = 0; kw < K; ++kw) {
                                std::int64_t wo = ww * stride - pad + kw;
                                if (wo < 0 || wo >= Wo) continue;
                                orow[wo] += xv * wrow[kw];
                            }
                        }
                }
    if (bias) {
        auto bd = bias->data();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t o = 0; o < O; ++o) {
                T bv = bd[o];
                T* row = od + (n * O + o) * Ho * Wo;
                for (std::int64_t p = 0; p < Ho * Wo; ++p) row[p] += bv;
            }
    }

    Tensor<T> b = bias ? *bias : Tensor<T>();
    autograd::record<T>({x, w, b}, out,
                        [x = x, w = w, b, out, stride, pad, N, I, H, W, O, K, Ho, Wo]() mutable {
        auto g = out.grad();
        const T* gd = g.data();
        const T* xd2 = x.data().data();
        const T* wd2 = w.data().data();
        if (b.defined() && b.requires_grad()) {
            auto gb = b.grad_accum();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t o = 0; o < O; ++o) {
                    const T* row = gd + (n * O + o) * Ho * Wo;
                    T acc = T(0);
                    for (std::int64_t p = 0; p < Ho * Wo; ++p) acc += row[p];
                    gb[o] += acc;
                }
        }
        const bool need_x = x.requires_grad(), need_w = w.requires_grad();
        if (!need_x && !need_w) return;
        T* gx = need_x ? x.grad_accum().data() : nullptr;
        T* gw = need_w ? w.grad_accum().data() : nullptr;
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t i = 0; i < I; ++i)
                for (std::int64_t h = 0; h < H; ++h)
                    for (std::int64_t ww = 0; ww < W; ++ww) {
                        T xv = xd2[((n * I + i) * H + h) * W + ww];
                        T dxv = T(0);
                        for (std::int64_t o = 0; o < O; ++o)
                            for (std::int64_t kh = 0; kh < K; ++kh) {
                                std::int64_t ho = h * stride - pad + kh;
                                if (ho < 0 || ho >= Ho) continue;
                                const T* grow = gd + ((n * O + o) * Ho + ho) * Wo;
                                const T* wrow = wd2 + ((i * O + o) * K + kh) * K;
                                T* gwrow = need_w ? gw + ((i * O + o) * K + kh) * K : nullptr;
                                for (std::int64_t kw = 0; kw < K; ++kw) {
                                    std::int64_t wo = ww * stride - pad + kw;
                                    if (wo < 0 || wo >= Wo) continue;
                                    if (need_x) dxv += grow[wo] * wrow[kw];
                                    if (need_w) gwrow[kw] += xv * grow[wo];
                                }
                            }
                        if (need_x) gx[((n * I + i) * H + h) * W + ww] += dxv;
                    }
    });
    checked(out, "conv2d_transpose");
    return out;
}
}  // namespace

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, std::int64_t stride,
                           std::int64_t padding) {
    return conv2d_transpose_impl<T>(x, w, nullptr, stride, padding);
}

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::int64_t stride, std::int64_t padding) {
    return conv2d_transpose_impl<T>(x, w, &bias, stride, padding);
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::int64_t size, std::int64_t stride) {
    if (x.rank() != 4) throw ShapeError("max_pool2d: expected 4-d input, got " + shape_str(x.shape()));
    if (size < 1 || stride < 1) throw ValueError("max_pool2d: bad size/stride");
    const std::int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    if (size > H || size > W) throw ShapeError("max_pool2d: window larger than input");
    const std::int64_t Ho = (H - size) / stride + 1;
    const std::int64_t Wo = (W - size) / stride + 1;
    Tensor<T> out({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(N * C * Ho * Wo));
    const T* xd = x.data().data();
    T* od = out.data().data();
    std::int64_t oi = 0;
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
            const T* plane = xd + (n * C + c) * H * W;
            for (std::int64_t ho = 0; ho < Ho; ++ho)
                for (std::int64_t wo = 0; wo < Wo; ++wo, ++oi) {
                    std::int64_t h0 = ho * stride, w0 = wo * stride;
                    T best = plane[h0 * W + w0];
                    std::int64_t bidx = h0 * W + w0;
                    for (std::int64_t dh = 0; dh < size; ++dh)
                        for (std::int64_t dw = 0; dw < size; ++dw) {
                            std::int64_t idx = (h0 + dh) * W + (w0 + dw);
                            if (plane[idx] > best) {  // first max wins ties
                                best = plane[idx];
                                bidx = idx;
                            }
                        }
                    od[oi] = best;
                    (*argmax)[static_cast<std::size_t>(oi)] = (n * C + c) * H * W + bidx;
                }
        }
    autograd::record<T>({x}, out, [x = x, out, argmax]() mutable {
        auto g = out.grad();
        auto gx = x.grad_accum();
        for (std::size_t i = 0; i < g.size(); ++i)
            gx[static_cast<std::size_t>((*argmax)[i])] += g[i];
    });
    checked(out, "max_pool2d");
    return out;
}

namespace {
struct ResizeTap {
    std::int64_t i0, i1;
    double w1;  // weight of i1; i0 gets (1 - w1)
};

std::vector<ResizeTap> resize_taps(std::int64_t in, std::int64_t out) {
    std::vector<ResizeTap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        double mx = static_cast<double>(in - 1);
        if (src > mx) src = mx;
        std::int64_t i0 = static_cast<std::int64_t>(src);
        std::int64_t i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}
}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
    if (x.rank() != 4) throw ShapeError("bilinear_resize: expected 4-d input, got " + shape_str(x.shape()));
    if (out_h < 1 || out_w < 1) throw ValueError("bilinear_resize: bad output size");
    const std::int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    if (H < 1 || W < 1) throw ShapeError("bilinear_resize: empty input");
    Tensor<T> out({N, C, out_h, out_w});
    auto ty = resize_taps(H, out_h);
    auto tx = resize_taps(W, out_w);
    const T* xd = x.data().data();
    T* od = out.data().data();
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const T* plane = xd + nc * H * W;
        T* oplane = od + nc * out_h * out_w;
        for (std::int64_t yo = 0; yo < out_h; ++yo) {
            const auto& a = ty[static_cast<std::size_t>(yo)];
            const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
            const T* r0 = plane + a.i0 * W;
            const T* r1 = plane + a.i1 * W;
            T* orow = oplane + yo * out_w;
            for (std::int64_t xo = 0; xo < out_w; ++xo) {
                const auto& b = tx[static_cast<std::size_t>(xo)];
                const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
                orow[xo] = wy0 * (wx0 * r0[b.i0] + wx1 * r0[b.i1]) +
                           wy1 * (wx0 * r1[b.i0] + wx1 * r1[b.i1]);
            }
        }
    }
    autograd::record<T>({x}, out, [x = x, out, H, W, out_h, out_w, N, C]() mutable {
        auto g = out.grad();
        auto gx = x.grad_accum();
        auto ty2 = resize_taps(H, out_h);
        auto tx2 = resize_taps(W, out_w);
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            T* gplane = gx.data() + nc * H * W;
            const T* gout = g.data() + nc * out_h * out_w;
            for (std::int64_t yo = 0; yo < out_h; ++yo) {
                const auto& a = ty2[static_cast<std::size_t>(yo)];
                const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
                for (std::int64_t xo = 0; xo < out_w; ++xo) {
                    const auto& b = tx2[static_cast<std::size_t>(xo)];
                    const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
                    T gv = gout[yo * out_w + xo];
                    gplane[a.i0 * W + b.i0] += gv * wy0 * wx0;
                    gplane[a.i0 * W + b.i1] += gv * wy0 * wx1;
                    gplane[a.i1 * W + b.i0] += gv * wy1 * wx0;
                    gplane[a.i1 * W + b.i1] += gv * wy1 * wx1;
                }
            }
        }
    });
    checked(out, "bilinear_resize");
    return out;
}

// ------------------------------------------------------------- data movement

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    const int r = static_cast<int>(s0.size());
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    std::int64_t axis_total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (static_cast<int>(s.size()) != r) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && s[static_cast<std::size_t>(i)] != s0[static_cast<std::size_t>(i)])
                throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
        axis_total += s[static_cast<std::size_t>(axis)];
    }
    Shape os = s0;
    os[static_cast<std::size_t>(axis)] = axis_total;
    Tensor<T> out(os);

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= s0[static_cast<std::size_t>(i)];
    T* od = out.data().data();
    const std::int64_t ostride = axis_total * inner;
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t len = p.size(axis);
        const T* pd = p.data().data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(od + o * ostride + off * inner, pd + o * len * inner,
                        static_cast<std::size_t>(len * inner) * sizeof(T));
        off += len;
    }

    std::vector<Tensor<T>> held(parts.begin(), parts.end());
    autograd::record<T>(std::span<const Tensor<T>>(held.data(), held.size()), out,
                        [held, out, outer, inner, ostride]() mutable {
        auto g = out.grad();
        std::int64_t offset = 0;
        for (auto& p : held) {
            const std::int64_t plen = p.numel() / (outer * inner);
            if (p.requires_grad()) {
                auto gp = p.grad_accum();
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* src = g.data() + o * ostride + offset * inner;
                    T* dst = gp.data() + o * plen * inner;
                    for (std::int64_t i = 0; i < plen * inner; ++i) dst[i] += src[i];
                }
            }
            offset += plen;
        }
    });
    checked(out, "concat");
    return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t len) {
    const Shape& s = x.shape();
    const int r = static_cast<int>(s.size());
    if (axis < 0 || axis >= r) throw ShapeError("narrow: axis out of range");
    const std::int64_t dim = s[static_cast<std::size_t>(axis)];
    if (len < 1 || start < 0 || start + len > dim)
        throw ShapeError("narrow: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for dim " +
                         std::to_string(dim));
    Shape os = s;
    os[static_cast<std::size_t>(axis)] = len;
    Tensor<T> out(os);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= s[static_cast<std::size_t>(i)];
    const T* xd = x.data().data();
    T* od = out.data().data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::memcpy(od + o * len * inner, xd + (o * dim + start) * inner,
                    static_cast<std::size_t>(len * inner) * sizeof(T));
    autograd::record<T>({x}, out, [x = x, out, outer, inner, dim, start, len]() mutable {
        auto g = out.grad();
        auto gx = x.grad_accum();
        for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = g.data() + o * len * inner;
            T* dst = gx.data() + (o * dim + start) * inner;
            for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
    checked(out, "narrow");
    return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::span<const int> perm) {
    const Shape& s = x.shape();
    const int r = static_cast<int>(s.size());
    if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
            throw ShapeError("permute: invalid permutation");
        seen[static_cast<std::size_t>(p)] = true;
    }
    Shape os(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) os[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(perm[i])];
    Tensor<T> out(os);
    auto xstr = row_major_strides(s);
    std::vector<std::int64_t> stride_for_out(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        stride_for_out[static_cast<std::size_t>(i)] = xstr[static_cast<std::size_t>(perm[i])];

    const T* xd = x.data().data();
    T* od = out.data().data();
    const std::int64_t total = out.numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t src = 0;
    for (std::int64_t flat = 0; flat < total; ++flat) {
        od[flat] = xd[src];
        for (int d = r - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            if (++idx[du] < os[du]) {
                src += stride_for_out[du];
                break;
            }
            src -= stride_for_out[du] * (os[du] - 1);
            idx[du] = 0;
        }
    }
    autograd::record<T>({x}, out, [x = x, out, os, stride_for_out]() mutable {
        auto g = out.grad();
        auto gx = x.grad_accum();
        const int rr = static_cast<int>(os.size());
        std::vector<std::int64_t> idx2(os.size(), 0);
        std::int64_t src2 = 0;
        const std::int64_t total2 = out.numel();
        for (std::int64_t flat = 0; flat < total2; ++flat) {
            gx[static_cast<std::size_t>(src2)] += g[static_cast<std::size_t>(flat)];
            for (int d = rr - 1; d >= 0; --d) {
                auto du = static_cast<std::size_t>(d);
                if (++idx2[du] < os[du]) {
                    src2 += stride_for_out[du];
                    break;
                }
                src2 -= stride_for_out[du] * (os[du] - 1);
                idx2[du] = 0;
            }
        }
    });
    checked(out, "permute");
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    Tensor<T> out(std::move(new_shape));
    auto xd = x.data();
    auto od = out.data();
    std::memcpy(od.data(), xd.data(), xd.size() * sizeof(T));
    autograd::record<T>({x}, out, [x = x, out]() mutable {
        auto g = out.grad();
        auto gx = x.grad_accum();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    checked(out, "reshape");
    return out;
}

// ----------------------------------------------------------- instantiations

#define RDSAL_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                             \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                        \
    template Tensor<T> rsub_scalar<T>(T, const Tensor<T>&);                                       \
    template Tensor<T> log_elem<T>(const Tensor<T>&);                                             \
    template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                          \
    template Tensor<T> pointwise<T>(const Tensor<T>&, Activation);                                \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                  \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                 \
    template Tensor<T> softmax<T>(const Tensor<T>&, int);                                         \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::int64_t, std::int64_t,  \
                                 std::int64_t);                                                   \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                 std::int64_t, std::int64_t, std::int64_t);                       \
    template Tensor<T> conv2d_transpose<T>(const Tensor<T>&, const Tensor<T>&, std::int64_t,      \
                                           std::int64_t);                                         \
    template Tensor<T> conv2d_transpose<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                           std::int64_t, std::int64_t);                           \
    template Tensor<T> max_pool2d<T>(const Tensor<T>&, std::int64_t, std::int64_t);               \
    template Tensor<T> bilinear_resize<T>(const Tensor<T>&, std::int64_t, std::int64_t);          \
    template Tensor<T> concat<T>(std::span<const Tensor<T>>, int);                                \
    template Tensor<T> narrow<T>(const Tensor<T>&, int, std::int64_t, std::int64_t);              \
    template Tensor<T> permute<T>(const Tensor<T>&, std::span<const int>);                        \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);

RDSAL_INSTANTIATE_OPS(float)
RDSAL_INSTANTIATE_OPS(double)

#undef RDSAL_INSTANTIATE_OPS

}  // namespace rdsal
