#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rdsal/tensor.hpp"

namespace rdsal {

struct GradCheckResult {
    std::string name;
    double max_err = 0.0;  // max over elements of |analytic - numeric| / max(1, |a|, |n|)
    double tolerance = 0.0;
    std::int64_t checked = 0;
    bool pass = false;
};

// Builds a scalar loss from the given inputs. Must be a pure function of the
// input values (called repeatedly during finite differencing).
using GradCheckFn = std::function<Tensor<double>(std::span<Tensor<double>>)>;

// Central-difference gradient verification in double precision. Every element
// of every input is perturbed.
GradCheckResult grad_check(const std::string& name, const GradCheckFn& fn,
                           std::vector<Tensor<double>> inputs, double tolerance,
                           double eps = 1e-5);

std::string format_gradcheck_table(std::span<const GradCheckResult> results);

}  // namespace rdsal
