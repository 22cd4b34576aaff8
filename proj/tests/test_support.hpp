#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rdsal/rng.hpp"
#include "rdsal/tensor.hpp"

namespace testsup {

template <typename T>
void fill_uniform(rdsal::Tensor<T>& t, rdsal::Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
}

// Uniform values kept away from zero, for ops with a kink at 0 (relu).
template <typename T>
void fill_uniform_nonzero(rdsal::Tensor<T>& t, rdsal::Rng& rng, double margin = 0.05) {
    for (auto& v : t.data()) {
        double x;
        do {
            x = rng.uniform(-1.0, 1.0);
        } while (std::abs(x) < margin);
        v = static_cast<T>(x);
    }
}

// Distinct values with comfortable pairwise gaps, for argmax-style ops.
template <typename T>
void fill_distinct(rdsal::Tensor<T>& t, rdsal::Rng& rng) {
    auto d = t.data();
    std::vector<std::int64_t> order(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    rng.shuffle(order);
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = static_cast<T>(0.01 * static_cast<double>(order[i]) - 0.4);
}

template <typename T>
double dot(const rdsal::Tensor<T>& a, const rdsal::Tensor<T>& b) {
    double acc = 0;
    auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) acc += static_cast<double>(ad[i]) * bd[i];
    return acc;
}

template <typename T>
double max_abs_diff(const rdsal::Tensor<T>& a, const rdsal::Tensor<T>& b) {
    double m = 0;
    auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(ad[i]) - static_cast<double>(bd[i])));
    return m;
}

}  // namespace testsup
