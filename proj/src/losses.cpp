#include "rdsal/losses.hpp"

namespace rdsal {

template <typename T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& target) {
    if (!same_shape(pred.shape(), target.shape()))
        throw ShapeError("bce: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
    const T eps = T(1e-7);
    Tensor<T> p = clamp(pred, eps, T(1) - eps);
    Tensor<T> pos = mul(target, log_elem(p));
    Tensor<T> neg = mul(rsub_scalar(T(1), target), log_elem(rsub_scalar(T(1), p)));
    return scale(mean(add(pos, neg)), T(-1));
}

template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
    return add(bce(d_real, Tensor<T>::full(d_real.shape(), T(1))),
               bce(d_fake, Tensor<T>::zeros(d_fake.shape())));
}

template <typename T>
Tensor<T> generator_adversarial_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
    return add(bce(d_real, Tensor<T>::zeros(d_real.shape())),
               bce(d_fake, Tensor<T>::full(d_fake.shape(), T(1))));
}

template <typename T>
std::array<Tensor<T>, 5> supervision_targets(const Tensor<T>& gt, const ModelConfig& cfg) {
    std::array<Tensor<T>, 5> out;
    for (int i = 0; i < 5; ++i) {
        const std::int64_t s = cfg.decode_size(i);
        Tensor<T> t = (gt.size(2) == s && gt.size(3) == s) ? gt.clone()
                                                           : bilinear_resize(gt, s, s);
        for (auto& v : t.data()) v = v >= T(0.5) ? T(1) : T(0);
        out[i] = t;
    }
    return out;
}

template <typename T>
Tensor<T> generator_loss(const ForwardResult<T>& fwd, const Tensor<T>& gt,
                         const std::array<Tensor<T>, 5>& gt_pyramid, const Tensor<T>& d_real,
                         const Tensor<T>& d_fake, const Tensor<T>& edge_gt,
                         const SupervisionWeights& sup, GeneratorLossParts* parts) {
    GeneratorLossParts p;
    Tensor<T> total = bce(fwd.s_fused, gt);
    p.fused = static_cast<double>(total.value());

    for (int i = 0; i < 5; ++i) {
        const T w = static_cast<T>(sup.w[static_cast<std::size_t>(i)]);
        if (fwd.side_rgb[i].defined()) {
            Tensor<T> term = scale(bce(fwd.side_rgb[i], gt_pyramid[i]), w);
            p.side_rgb += static_cast<double>(term.value());
            total = add(total, term);
        }
        if (fwd.side_depth[i].defined()) {
            Tensor<T> term = scale(bce(fwd.side_depth[i], gt_pyramid[i]), w);
            p.side_depth += static_cast<double>(term.value());
            total = add(total, term);
        }
    }

    if (d_real.defined() != d_fake.defined())
        throw StateError("generator_loss: d_real and d_fake must be given together");
    if (d_real.defined()) {
        Tensor<T> adv = generator_adversarial_loss(d_real, d_fake);
        p.adversarial = static_cast<double>(adv.value());
        total = add(total, adv);
    }
    if (edge_gt.defined()) {
        if (!fwd.edge_map.defined())
            throw StateError("generator_loss: edge target given but no edge map was produced");
        Tensor<T> e = bce(fwd.edge_map, edge_gt);
        p.edge = static_cast<double>(e.value());
        total = add(total, e);
    }
    p.total = static_cast<double>(total.value());
    if (parts) *parts = p;
    return total;
}

#define RDSAL_INSTANTIATE_LOSSES(T)                                                           \
    template Tensor<T> bce<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> discriminator_loss<T>(const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> generator_adversarial_loss<T>(const Tensor<T>&, const Tensor<T>&);     \
    template std::array<Tensor<T>, 5> supervision_targets<T>(const Tensor<T>&,                \
                                                             const ModelConfig&);             \
    template Tensor<T> generator_loss<T>(const ForwardResult<T>&, const Tensor<T>&,           \
                                         const std::array<Tensor<T>, 5>&, const Tensor<T>&,   \
                                         const Tensor<T>&, const Tensor<T>&,                  \
                                         const SupervisionWeights&, GeneratorLossParts*);

RDSAL_INSTANTIATE_LOSSES(float)
RDSAL_INSTANTIATE_LOSSES(double)

#undef RDSAL_INSTANTIATE_LOSSES

}  // namespace rdsal
