#include "rdsal/layers.hpp"

#include <cmath>

#include "gemm.hpp"

namespace rdsal {

template <typename T>
void ParamSet<T>::add(std::string name, Tensor<T> t) {
    if (!t.defined()) throw StateError("ParamSet: undefined tensor for '" + name + "'");
    if (index_.count(name)) throw StateError("ParamSet: duplicate parameter '" + name + "'");
    index_.emplace(name, items_.size());
    items_.emplace_back(std::move(name), std::move(t));
}

template <typename T>
Tensor<T>& ParamSet<T>::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("ParamSet: unknown parameter '" + name + "'");
    return items_[it->second].second;
}

template <typename T>
std::int64_t ParamSet<T>::total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

template <typename T>
void ParamSet<T>::set_requires_grad(bool v) {
    for (auto& [name, t] : items_) t.set_requires_grad(v);
}

template <typename T>
void ParamSet<T>::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

namespace {
template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
}
}  // namespace

template <typename T>
void Conv2dLayer<T>::init(std::int64_t out_ch, std::int64_t in_ch, std::int64_t k, Rng& rng,
                          bool bias, double gain) {
    w = Tensor<T>({out_ch, in_ch, k, k});
    const double fan_in = static_cast<double>(in_ch * k * k);
    fill_normal(w, rng, std::sqrt(gain / fan_in));
    b = bias ? Tensor<T>({out_ch}) : Tensor<T>();
}

template <typename T>
Tensor<T> Conv2dLayer<T>::operator()(const Tensor<T>& x) const {
    return b.defined() ? conv2d(x, w, b, stride, pad, dil) : conv2d(x, w, stride, pad, dil);
}

template <typename T>
void Conv2dLayer<T>::collect(const std::string& prefix, ParamSet<T>& ps) {
    ps.add(prefix + ".w", w);
    if (b.defined()) ps.add(prefix + ".b", b);
}

template <typename T>
void LinearLayer<T>::init(std::int64_t in, std::int64_t out, Rng& rng, double gain) {
    w = Tensor<T>({in, out});
    fill_normal(w, rng, std::sqrt(gain / static_cast<double>(in)));
    b = Tensor<T>({out});
}

template <typename T>
Tensor<T> LinearLayer<T>::operator()(const Tensor<T>& x) const {
    return linear(x, w, b);
}

template <typename T>
void LinearLayer<T>::collect(const std::string& prefix, ParamSet<T>& ps) {
    ps.add(prefix + ".w", w);
    ps.add(prefix + ".b", b);
}

template <typename T>
void ResidualBlock<T>::init(std::int64_t in_ch, std::int64_t out_ch, Rng& rng, std::int64_t stride,
                            std::int64_t dilation) {
    conv1.init(out_ch, in_ch, 3, rng);
    conv1.stride = stride;
    conv1.pad = dilation;
    conv1.dil = dilation;
    conv2.init(out_ch, out_ch, 3, rng);
    conv2.pad = dilation;
    conv2.dil = dilation;
    if (in_ch != out_ch || stride != 1) {
        proj.init(out_ch, in_ch, 1, rng, /*bias=*/false, /*gain=*/1.0);
        proj.stride = stride;
    } else {
        proj = Conv2dLayer<T>{};
    }
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x) const {
    Tensor<T> y = conv2(relu(conv1(x)));
    Tensor<T> skip = proj.defined() ? proj(x) : x;
    return relu(add(y, skip));
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, ParamSet<T>& ps) {
    conv1.collect(prefix + ".conv1", ps);
    conv2.collect(prefix + ".conv2", ps);
    if (proj.defined()) proj.collect(prefix + ".proj", ps);
}

template <typename T>
void LstmCell<T>::init(std::int64_t in, std::int64_t h, Rng& rng) {
    hidden = h;
    wx = Tensor<T>({in, 4 * h});
    wh = Tensor<T>({h, 4 * h});
    b = Tensor<T>({4 * h});
    fill_normal(wx, rng, std::sqrt(1.0 / static_cast<double>(in)));
    fill_normal(wh, rng, std::sqrt(1.0 / static_cast<double>(h)));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> LstmCell<T>::step(const Tensor<T>& x, const Tensor<T>& h,
                                                  const Tensor<T>& c) const {
    Tensor<T> gates = add(linear(x, wx, b), matmul(h, wh));  // (B, 4h)
    Tensor<T> i = sigmoid(narrow(gates, 1, 0 * hidden, hidden));
    Tensor<T> f = sigmoid(narrow(gates, 1, 1 * hidden, hidden));
    Tensor<T> g = tanh_act(narrow(gates, 1, 2 * hidden, hidden));
    Tensor<T> o = sigmoid(narrow(gates, 1, 3 * hidden, hidden));
    Tensor<T> c2 = add(mul(f, c), mul(i, g));
    Tensor<T> h2 = mul(o, tanh_act(c2));
    return {h2, c2};
}

template <typename T>
void LstmCell<T>::collect(const std::string& prefix, ParamSet<T>& ps) {
    ps.add(prefix + ".wx", wx);
    ps.add(prefix + ".wh", wh);
    ps.add(prefix + ".b", b);
}

template <typename T>
void DirectionalScan<T>::init(std::int64_t in_ch, std::int64_t h, Rng& rng) {
    hidden = h;
    lr.init(in_ch, h, rng);
    rl.init(in_ch, h, rng);
    tb.init(2 * h, h, rng);
    bt.init(2 * h, h, rng);
}

namespace {

// Runs one LSTM sweep along `axis` (3 = over columns, 2 = over rows) and
// returns (N, hidden, H, W)-shaped features placed back at their positions.
template <typename T>
Tensor<T> sweep(const Tensor<T>& x, const LstmCell<T>& cell, int axis, bool reverse) {
    const std::int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const std::int64_t steps = (axis == 3) ? W : H;
    const std::int64_t B = (axis == 3) ? N * H : N * W;
    Tensor<T> h(Shape{B, cell.hidden});
    Tensor<T> c(Shape{B, cell.hidden});
    std::vector<Tensor<T>> placed(static_cast<std::size_t>(steps));
    for (std::int64_t s = 0; s < steps; ++s) {
        const std::int64_t t = reverse ? steps - 1 - s : s;
        Tensor<T> slice = narrow(x, axis, t, 1);
        Tensor<T> xt;
        if (axis == 3)
            xt = reshape(permute(slice, {0, 2, 1, 3}), {N * H, C});
        else
            xt = reshape(permute(slice, {0, 3, 1, 2}), {N * W, C});
        auto [h2, c2] = cell.step(xt, h, c);
        h = h2;
        c = c2;
        Tensor<T> back;
        if (axis == 3)
            back = permute(reshape(h, {N, H, cell.hidden, 1}), {0, 2, 1, 3});  // (N,hid,H,1)
        else
            back = permute(reshape(h, {N, W, cell.hidden, 1}), {0, 2, 3, 1});  // (N,hid,1,W)
        placed[static_cast<std::size_t>(t)] = back;
    }
    return concat(std::span<const Tensor<T>>(placed.data(), placed.size()), axis);
}

}  // namespace

template <typename T>
Tensor<T> DirectionalScan<T>::operator()(const Tensor<T>& x) const {
    if (x.rank() != 4) throw ShapeError("directional scan expects NCHW, got " + shape_str(x.shape()));
    Tensor<T> rows = concat<T>({sweep(x, lr, 3, false), sweep(x, rl, 3, true)}, 1);
    Tensor<T> cols = concat<T>({sweep(rows, tb, 2, false), sweep(rows, bt, 2, true)}, 1);
    return cols;
}

template <typename T>
void DirectionalScan<T>::collect(const std::string& prefix, ParamSet<T>& ps) {
    lr.collect(prefix + ".lr", ps);
    rl.collect(prefix + ".rl", ps);
    tb.collect(prefix + ".tb", ps);
    bt.collect(prefix + ".bt", ps);
}

// ------------------------------------------------------ attention primitives

template <typename T>
Tensor<T> attention_weighted_sum(const Tensor<T>& features, const Tensor<T>& weights,
                                 std::int64_t window) {
    if (features.rank() != 4 || weights.rank() != 4)
        throw ShapeError("attention_weighted_sum expects NCHW tensors");
    const std::int64_t N = features.size(0), C = features.size(1), H = features.size(2),
                       W = features.size(3);
    if (weights.size(0) != N || weights.size(2) != H || weights.size(3) != W)
        throw ShapeError("attention_weighted_sum: weight grid " + shape_str(weights.shape()) +
                         " does not match features " + shape_str(features.shape()));
    const std::int64_t P = H * W;
    if (window == 0) {
        if (weights.size(1) != P)
            throw ShapeError("attention_weighted_sum: global weights need H*W candidates");
    } else {
        if (window < 1 || window % 2 == 0)
            throw ValueError("attention_weighted_sum: window must be odd and positive");
        if (weights.size(1) != window * window)
            throw ShapeError("attention_weighted_sum: local weights need window^2 candidates");
    }

    Tensor<T> out({N, C, H, W});
    const T* fd = features.data().data();
    const T* wd = weights.data().data();
    T* od = out.data().data();
    if (window == 0) {
        // out_n (C,P) = F_n (C,P) x Wgt_n (P,P)
        for (std::int64_t n = 0; n < N; ++n)
            detail::gemm_nn(C, P, P, fd + n * C * P, wd + n * P * P, od + n * C * P);
    } else {
        const std::int64_t r = window / 2;
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const T* fp = fd + (n * C + c) * P;
                T* op = od + (n * C + c) * P;
                for (std::int64_t dy = -r; dy <= r; ++dy)
                    for (std::int64_t dx = -r; dx <= r; ++dx) {
                        const std::int64_t k = (dy + r) * window + (dx + r);
                        const T* wp = wd + (n * window * window + k) * P;
                        for (std::int64_t y = std::max<std::int64_t>(0, -dy);
                             y < std::min(H, H - dy); ++y) {
                            const T* frow = fp + (y + dy) * W;
                            const T* wrow = wp + y * W;
                            T* orow = op + y * W;
                            const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                            const std::int64_t x1 = std::min(W, W - dx);
                            for (std::int64_t x = x0; x < x1; ++x)
                                orow[x] += wrow[x] * frow[x + dx];
                        }
                    }
            }
    }

    autograd::record<T>({features, weights}, out,
                        [f = features, wgt = weights, out, window, N, C, H, W, P]() mutable {
        auto g = out.grad();
        const T* gd = g.data();
        const T* fd2 = f.data().data();
        const T* wd2 = wgt.data().data();
        if (window == 0) {
            for (std::int64_t n = 0; n < N; ++n) {
                if (f.requires_grad())
                    detail::gemm_abt(C, P, P, gd + n * C * P, wd2 + n * P * P,
                                     f.grad_accum().data() + n * C * P);
                if (wgt.requires_grad())
                    detail::gemm_atb(P, P, C, fd2 + n * C * P, gd + n * C * P,
                                     wgt.grad_accum().data() + n * P * P);
            }
        } else {
            const std::int64_t r = window / 2;
            T* gf = f.requires_grad() ? f.grad_accum().data() : nullptr;
            T* gw = wgt.requires_grad() ? wgt.grad_accum().data() : nullptr;
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* fp = fd2 + (n * C + c) * P;
                    const T* gp = gd + (n * C + c) * P;
                    for (std::int64_t dy = -r; dy <= r; ++dy)
                        for (std::int64_t dx = -r; dx <= r; ++dx) {
                            const std::int64_t k = (dy + r) * window + (dx + r);
                            const T* wp = wd2 + (n * window * window + k) * P;
                            T* gwp = gw ? gw + (n * window * window + k) * P : nullptr;
                            T* gfp = gf ? gf + (n * C + c) * P : nullptr;
                            for (std::int64_t y = std::max<std::int64_t>(0, -dy);
                                 y < std::min(H, H - dy); ++y) {
                                const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                                const std::int64_t x1 = std::min(W, W - dx);
                                for (std::int64_t x = x0; x < x1; ++x) {
                                    const T gv = gp[y * W + x];
                                    if (gfp) gfp[(y + dy) * W + (x + dx)] += gv * wp[y * W + x];
                                    if (gwp) gwp[y * W + x] += gv * fp[(y + dy) * W + (x + dx)];
                                }
                            }
                        }
                }
        }
    });
    if (checked_mode()) check_finite(out, "attention_weighted_sum");
    return out;
}

template <typename T>
void GlobalAttention<T>::init(std::int64_t channels, std::int64_t hidden, std::int64_t h,
                              std::int64_t w, Rng& rng) {
    height = h;
    width = w;
    scan.init(channels, hidden, rng);
    to_logits.init(h * w, 2 * hidden, 1, rng, true, 1.0);
    fuse.init(channels, 2 * channels, 1, rng);
}

template <typename T>
Tensor<T> GlobalAttention<T>::operator()(const Tensor<T>& f) const {
    if (f.size(2) != height || f.size(3) != width)
        throw ShapeError("global attention was built for " + std::to_string(height) + "x" +
                         std::to_string(width) + ", got " + shape_str(f.shape()));
    Tensor<T> att = attention_pool(f, to_logits(scan(f)), 0);
    return relu(fuse(concat<T>({f, att}, 1)));
}

template <typename T>
void GlobalAttention<T>::collect(const std::string& prefix, ParamSet<T>& ps) {
    scan.collect(prefix + ".scan", ps);
    to_logits.collect(prefix + ".logits", ps);
    fuse.collect(prefix + ".fuse", ps);
}

template <typename T>
void LocalAttention<T>::init(std::int64_t channels, std::int64_t ctx_ch, std::int64_t win,
                             Rng& rng) {
    window = win;
    ctx.init(ctx_ch, channels, 3, rng);
    ctx.pad = 1;
    to_logits.init(win * win, ctx_ch, 1, rng, true, 1.0);
    fuse.init(channels, 2 * channels, 1, rng);
}

template <typename T>
Tensor<T> LocalAttention<T>::operator()(const Tensor<T>& f) const {
    Tensor<T> att = attention_pool(f, to_logits(relu(ctx(f))), window);
    return relu(fuse(concat<T>({f, att}, 1)));
}

template <typename T>
void LocalAttention<T>::collect(const std::string& prefix, ParamSet<T>& ps) {
    ctx.collect(prefix + ".ctx", ps);
    to_logits.collect(prefix + ".logits", ps);
    fuse.collect(prefix + ".fuse", ps);
}

#define RDSAL_INSTANTIATE_LAYERS(T)                                                      \
    template class ParamSet<T>;                                                          \
    template struct Conv2dLayer<T>;                                                      \
    template struct LinearLayer<T>;                                                      \
    template struct ResidualBlock<T>;                                                    \
    template struct LstmCell<T>;                                                         \
    template struct DirectionalScan<T>;                                                  \
    template struct GlobalAttention<T>;                                                  \
    template struct LocalAttention<T>;                                                   \
    template Tensor<T> attention_weighted_sum<T>(const Tensor<T>&, const Tensor<T>&,     \
                                                 std::int64_t);

RDSAL_INSTANTIATE_LAYERS(float)
RDSAL_INSTANTIATE_LAYERS(double)

#undef RDSAL_INSTANTIATE_LAYERS

}  // namespace rdsal
