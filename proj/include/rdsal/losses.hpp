#pragma once

#include <array>

#include "rdsal/model.hpp"

namespace rdsal {

// Mean binary cross-entropy. Predictions are clamped to [1e-7, 1-1e-7]
// before the logs; targets are expected in [0,1].
template <typename T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& target);

// Discriminator objective: score ground-truth pairs as 1, generated pairs
// as 0. Equals 2*ln2 when the discriminator outputs 0.5 everywhere.
template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake);

// Adversarial part of the generator objective: the labels of the two terms
// are flipped relative to discriminator_loss. The d_real term carries no
// generator gradient (ground truth is constant) but is part of the printed
// objective.
template <typename T>
Tensor<T> generator_adversarial_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake);

// Per-decode-stage deep-supervision weights, deep to shallow.
struct SupervisionWeights {
    std::array<double, 5> w{0.5, 0.5, 0.5, 0.8, 0.8};
};

// Ground truth resized to each decode resolution and re-binarized at 0.5.
template <typename T>
std::array<Tensor<T>, 5> supervision_targets(const Tensor<T>& gt, const ModelConfig& cfg);

struct GeneratorLossParts {
    double fused = 0;
    double side_rgb = 0;
    double side_depth = 0;
    double adversarial = 0;
    double edge = 0;
    double total = 0;
};

// Full generator objective: fused-map BCE + weighted side-output BCEs
// (+ adversarial terms when d_real/d_fake are defined, + edge BCE when
// edge_gt is defined and the forward produced an edge map).
template <typename T>
Tensor<T> generator_loss(const ForwardResult<T>& fwd, const Tensor<T>& gt,
                         const std::array<Tensor<T>, 5>& gt_pyramid, const Tensor<T>& d_real,
                         const Tensor<T>& d_fake, const Tensor<T>& edge_gt,
                         const SupervisionWeights& sup, GeneratorLossParts* parts = nullptr);

}  // namespace rdsal
