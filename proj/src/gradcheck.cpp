#include "rdsal/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace rdsal {

GradCheckResult grad_check(const std::string& name, const GradCheckFn& fn,
                           std::vector<Tensor<double>> inputs, double tolerance, double eps) {
    GradCheckResult res;
    res.name = name;
    res.tolerance = tolerance;

    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.clear_grad();
    }

    // Analytic pass.
    std::vector<std::vector<double>> analytic;
    {
        GradTape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> loss = fn(inputs);
        if (loss.numel() != 1)
            throw ShapeError("grad_check '" + name + "': loss must be scalar, got " +
                             shape_str(loss.shape()));
        tape.backward(loss);
        for (auto& in : inputs) {
            std::vector<double> g(static_cast<std::size_t>(in.numel()), 0.0);
            for (std::int64_t i = 0; i < in.numel(); ++i) g[static_cast<std::size_t>(i)] = in.grad_at(i);
            analytic.push_back(std::move(g));
        }
    }
    for (auto& in : inputs) in.clear_grad();

    // Numeric pass (no tape active, so forward is pure compute).
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto vals = inputs[t].data();
        for (std::int64_t i = 0; i < inputs[t].numel(); ++i) {
            const double orig = vals[static_cast<std::size_t>(i)];
            vals[static_cast<std::size_t>(i)] = orig + eps;
            double fp = fn(inputs).value();
            vals[static_cast<std::size_t>(i)] = orig - eps;
            double fm = fn(inputs).value();
            vals[static_cast<std::size_t>(i)] = orig;
            double fd = (fp - fm) / (2.0 * eps);
            double an = analytic[t][static_cast<std::size_t>(i)];
            double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
            if (err > res.max_err) res.max_err = err;
            ++res.checked;
        }
    }
    res.pass = res.max_err <= tolerance;
    return res;
}

std::string format_gradcheck_table(std::span<const GradCheckResult> results) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-34s %10s %12s %10s %6s\n", "case", "elements", "max_err",
                  "tol", "status");
    out << buf;
    for (const auto& r : results) {
        std::snprintf(buf, sizeof(buf), "%-34s %10lld %12.3e %10.1e %6s\n", r.name.c_str(),
                      static_cast<long long>(r.checked), r.max_err, r.tolerance,
                      r.pass ? "ok" : "FAIL");
        out << buf;
    }
    return out.str();
}

}  // namespace rdsal
