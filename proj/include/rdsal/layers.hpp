#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rdsal/ops.hpp"
#include "rdsal/rng.hpp"
#include "rdsal/tensor.hpp"

namespace rdsal {

// Ordered, named collection of parameter handles. Order is the canonical
// iteration order for the optimizer and the checkpoint format.
template <typename T>
class ParamSet {
public:
    void add(std::string name, Tensor<T> t);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor<T>& at(const std::string& name);
    const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    std::int64_t total_elements() const;
    void set_requires_grad(bool v);
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct Conv2dLayer {
    Tensor<T> w;  // (out, in, k, k)
    Tensor<T> b;  // undefined when bias-less
    std::int64_t stride = 1, pad = 0, dil = 1;

    // gain 2 -> He (ReLU); gain 1 -> Xavier-style.
    void init(std::int64_t out_ch, std::int64_t in_ch, std::int64_t k, Rng& rng, bool bias = true,
              double gain = 2.0);
    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamSet<T>& ps);
    bool defined() const { return w.defined(); }
};

template <typename T>
struct LinearLayer {
    Tensor<T> w;  // (in, out)
    Tensor<T> b;  // (out)

    void init(std::int64_t in, std::int64_t out, Rng& rng, double gain = 1.0);
    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamSet<T>& ps);
};

// Two 3x3 convs with a skip connection; 1x1 projection when the channel
// count changes. y = relu(conv2(relu(conv1(x))) + skip(x)).
template <typename T>
struct ResidualBlock {
    Conv2dLayer<T> conv1, conv2, proj;

    void init(std::int64_t in_ch, std::int64_t out_ch, Rng& rng, std::int64_t stride = 1,
              std::int64_t dilation = 1);
    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamSet<T>& ps);
};

// Gate order in the packed 4h dimension: [i, f, g, o].
template <typename T>
struct LstmCell {
    Tensor<T> wx;  // (in, 4h)
    Tensor<T> wh;  // (h, 4h)
    Tensor<T> b;   // (4h)
    std::int64_t hidden = 0;

    void init(std::int64_t in, std::int64_t h, Rng& rng);
    // x (B, in), h/c (B, hidden) -> (h', c')
    std::pair<Tensor<T>, Tensor<T>> step(const Tensor<T>& x, const Tensor<T>& h,
                                         const Tensor<T>& c) const;
    void collect(const std::string& prefix, ParamSet<T>& ps);
};

// Renet-style spatial context: two horizontal passes over rows, then two
// vertical passes over the concatenated row features. Output has 2*hidden
// channels. Built from narrow/permute/reshape + LstmCell steps, so BPTT
// comes from the tape.
template <typename T>
struct DirectionalScan {
    LstmCell<T> lr, rl, tb, bt;
    std::int64_t hidden = 0;

    void init(std::int64_t in_ch, std::int64_t h, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const;  // (N,C,H,W) -> (N,2h,H,W)
    void collect(const std::string& prefix, ParamSet<T>& ps);
};

// Attention weighted sum. window == 0: global, weights (N, H*W, H, W),
// out[n,c,p] = sum_q weights[n,q,p] * f[n,c,q]. window > 0 (odd): local,
// weights (N, window^2, H, W), features read with zero padding.
template <typename T>
Tensor<T> attention_weighted_sum(const Tensor<T>& features, const Tensor<T>& weights,
                                 std::int64_t window);

// softmax over the candidate axis followed by the weighted sum.
template <typename T>
Tensor<T> attention_pool(const Tensor<T>& features, const Tensor<T>& logits, std::int64_t window) {
    return attention_weighted_sum(features, softmax(logits, 1), window);
}

// Global attention refinement: scan -> 1x1 logits over all H*W positions ->
// pool -> concat with input -> 1x1 fuse -> relu. Spatial size is fixed at
// init time because the logits conv emits one channel per position.
template <typename T>
struct GlobalAttention {
    DirectionalScan<T> scan;
    Conv2dLayer<T> to_logits;  // 1x1: 2h -> H*W
    Conv2dLayer<T> fuse;       // 1x1: 2c -> c
    std::int64_t height = 0, width = 0;

    void init(std::int64_t channels, std::int64_t hidden, std::int64_t h, std::int64_t w, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& f) const;
    void collect(const std::string& prefix, ParamSet<T>& ps);
};

// Local attention refinement: 3x3 context conv -> 1x1 logits over window^2
// offsets -> pool -> concat -> 1x1 fuse -> relu.
template <typename T>
struct LocalAttention {
    Conv2dLayer<T> ctx;        // 3x3 pad 1: c -> ctx_ch
    Conv2dLayer<T> to_logits;  // 1x1: ctx_ch -> window^2
    Conv2dLayer<T> fuse;       // 1x1: 2c -> c
    std::int64_t window = 0;

    void init(std::int64_t channels, std::int64_t ctx_ch, std::int64_t win, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& f) const;
    void collect(const std::string& prefix, ParamSet<T>& ps);
};

}  // namespace rdsal
