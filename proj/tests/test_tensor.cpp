#include <doctest.h>

#include <cmath>
#include <vector>

#include "rdsal/gradcheck.hpp"
#include "rdsal/ops.hpp"
#include "rdsal/rng.hpp"
#include "rdsal/tensor.hpp"
#include "test_support.hpp"

using namespace rdsal;
using D = Tensor<double>;
using F = Tensor<float>;

namespace {

// Independent straight-loop convolution used as the oracle for the
// im2col/GEMM implementation.
D conv_ref(const D& x, const D& w, const D* bias, std::int64_t s, std::int64_t p, std::int64_t d) {
    const std::int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const std::int64_t O = w.size(0), K = w.size(2);
    const std::int64_t Ho = (H + 2 * p - d * (K - 1) - 1) / s + 1;
    const std::int64_t Wo = (W + 2 * p - d * (K - 1) - 1) / s + 1;
    D out({N, O, Ho, Wo});
    auto xd = x.data();
    auto wd = w.data();
    auto od = out.data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t ho = 0; ho < Ho; ++ho)
                for (std::int64_t wo = 0; wo < Wo; ++wo) {
                    double acc = bias ? bias->data()[static_cast<std::size_t>(o)] : 0.0;
                    for (std::int64_t c = 0; c < C; ++c)
                        for (std::int64_t kh = 0; kh < K; ++kh)
                            for (std::int64_t kw = 0; kw < K; ++kw) {
                                std::int64_t h = ho * s - p + kh * d;
                                std::int64_t ww2 = wo * s - p + kw * d;
                                if (h < 0 || h >= H || ww2 < 0 || ww2 >= W) continue;
                                acc += xd[static_cast<std::size_t>(((n * C + c) * H + h) * W + ww2)] *
                                       wd[static_cast<std::size_t>(((o * C + c) * K + kh) * K + kw)];
                            }
                    od[static_cast<std::size_t>(((n * O + o) * Ho + ho) * Wo + wo)] = acc;
                }
    return out;
}

D ascending(Shape s) {
    D t(s);
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(i);
    return t;
}

}  // namespace

TEST_CASE("elementwise ops and hand values") {
    D a({2, 2}, {1, 2, 3, 4});
    D b({2, 2}, {10, 20, 30, 40});
    CHECK(add(a, b).at({1, 1}) == 44.0);
    CHECK(sub(b, a).at({0, 1}) == 18.0);
    CHECK(mul(a, b).at({1, 0}) == 90.0);
    CHECK(scale(a, 2.5).at({0, 0}) == 2.5);
    CHECK(add_scalar(a, -1.0).at({0, 0}) == 0.0);
    CHECK(rsub_scalar(1.0, a).at({0, 1}) == -1.0);
    CHECK(sum(a).value() == 10.0);
    CHECK(mean(b).value() == 25.0);
    CHECK_THROWS_AS(add(a, D({3})), ShapeError);
    CHECK_THROWS_AS(a.value(), ShapeError);
}

TEST_CASE("square function gradient: d(x^2)/dx at 3 is 6") {
    D x = D::scalar(3.0);
    x.set_requires_grad(true);
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        D y = mul(x, x);
        tape.backward(y);
    }
    CHECK(x.grad_at(0) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("sigmoid at zero and its derivative") {
    D x = D::scalar(0.0);
    x.set_requires_grad(true);
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    D y = sigmoid(x);
    CHECK(y.value() == doctest::Approx(0.5).epsilon(1e-12));
    tape.backward(y);
    CHECK(x.grad_at(0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("sigmoid output stays strictly inside (0,1) even when saturated") {
    F x({2}, {100.0f, -100.0f});
    F y = sigmoid(x);
    CHECK(y.data()[0] < 1.0f);
    CHECK(y.data()[0] == doctest::Approx(1.0f - 1e-7f));
    CHECK(y.data()[1] > 0.0f);
    CHECK(y.data()[1] == doctest::Approx(1e-7f));
}

TEST_CASE("softmax hand value [0, ln3, 0, 0]") {
    D x({1, 4}, {0.0, std::log(3.0), 0.0, 0.0});
    D y = softmax(x, 1);
    CHECK(y.at({0, 0}) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(y.at({0, 1}) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(y.at({0, 2}) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(y.at({0, 3}) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    double s = 0;
    for (double v : y.data()) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("clamp values and subgradient") {
    D x({3}, {-1.0, 0.5, 2.0});
    x.set_requires_grad(true);
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    D y = clamp(x, 0.0, 1.0);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.5);
    CHECK(y.data()[2] == 1.0);
    tape.backward(sum(y));
    CHECK(x.grad_at(0) == 0.0);
    CHECK(x.grad_at(1) == 1.0);
    CHECK(x.grad_at(2) == 0.0);
}

TEST_CASE("log_elem rejects non-positive input") {
    CHECK_THROWS_AS(log_elem(D({2}, {1.0, 0.0})), ValueError);
    CHECK_THROWS_AS(log_elem(D({1}, {-3.0})), ValueError);
}

TEST_CASE("conv2d pinned values on the 4x4 ascending image") {
    D x = ascending({1, 1, 4, 4});
    D w = D::full({1, 1, 3, 3}, 1.0);

    SUBCASE("3x3 ones, stride 1, padding 1") {
        D y = conv2d(x, w, 1, 1, 1);
        CHECK(y.shape() == Shape{1, 1, 4, 4});
        CHECK(y.at({0, 0, 0, 0}) == 10.0);   // 0+1+4+5
        CHECK(y.at({0, 0, 1, 1}) == 45.0);   // full 3x3 around (1,1)
        CHECK(y.at({0, 0, 3, 3}) == 50.0);   // 10+11+14+15
    }
    SUBCASE("dilation 2 with padding 2 preserves resolution") {
        D y = conv2d(x, w, 1, 2, 2);
        CHECK(y.shape() == Shape{1, 1, 4, 4});
        // taps land on (0,0),(0,2),(2,0),(2,2)
        CHECK(y.at({0, 0, 0, 0}) == 20.0);
    }
    SUBCASE("stride 2 halves resolution") {
        D y = conv2d(x, w, 2, 1, 1);
        CHECK(y.shape() == Shape{1, 1, 2, 2});
    }
}

TEST_CASE("conv2d matches the straight-loop oracle") {
    Rng rng(7);
    struct Cfg {
        std::int64_t C, H, W, O, K, s, p, d;
    };
    for (Cfg c : {Cfg{2, 5, 6, 3, 3, 1, 1, 1}, Cfg{3, 7, 5, 2, 3, 2, 1, 1}, Cfg{2, 8, 8, 4, 1, 1, 0, 1},
                  Cfg{1, 9, 9, 2, 3, 1, 2, 2}, Cfg{2, 11, 7, 3, 3, 2, 4, 4}}) {
        D x({2, c.C, c.H, c.W});
        D w({c.O, c.C, c.K, c.K});
        D b({c.O});
        testsup::fill_uniform(x, rng);
        testsup::fill_uniform(w, rng);
        testsup::fill_uniform(b, rng);
        D got = conv2d(x, w, b, c.s, c.p, c.d);
        D want = conv_ref(x, w, &b, c.s, c.p, c.d);
        CHECK(same_shape(got.shape(), want.shape()));
        CHECK(testsup::max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("conv2d rejects bad geometry") {
    D x({1, 2, 4, 4});
    CHECK_THROWS_AS(conv2d(x, D({1, 3, 3, 3}), 1, 1, 1), ShapeError);   // channel mismatch
    CHECK_THROWS_AS(conv2d(x, D({1, 2, 5, 5}), 1, 0, 1), ShapeError);   // kernel too large
    CHECK_THROWS_AS(conv2d(x, D({1, 2, 3, 3}), 0, 0, 1), ValueError);   // zero stride
}

TEST_CASE("conv2d_transpose stamps the kernel and matches shape rule") {
    D x = D::full({1, 1, 2, 2}, 1.0);
    D w({1, 1, 2, 2}, {1, 2, 3, 4});
    D y = conv2d_transpose(x, w, 2, 0);
    CHECK(y.shape() == Shape{1, 1, 4, 4});
    // non-overlapping stamps -> kernel tiled 2x2
    CHECK(y.at({0, 0, 0, 0}) == 1.0);
    CHECK(y.at({0, 0, 0, 1}) == 2.0);
    CHECK(y.at({0, 0, 1, 0}) == 3.0);
    CHECK(y.at({0, 0, 1, 1}) == 4.0);
    CHECK(y.at({0, 0, 2, 2}) == 1.0);
    CHECK(y.at({0, 0, 3, 3}) == 4.0);
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
    Rng rng(11);
    for (auto [s, p] : {std::pair<std::int64_t, std::int64_t>{1, 1}, {2, 1}, {2, 0}, {1, 0}}) {
        // H, W chosen so the strided conv divides evenly and the transpose
        // recovers the exact input shape.
        const std::int64_t I = 3, O = 2, K = 3, H = 7, W = 7;
        D x({1, I, H, W}), w({O, I, K, K});
        testsup::fill_uniform(x, rng);
        testsup::fill_uniform(w, rng);
        D cx = conv2d(x, w, s, p, 1);
        D y(cx.shape());
        testsup::fill_uniform(y, rng);
        // weight viewed as (in=O, out=I, K, K) plays the transposed role
        D ty = conv2d_transpose(y, w, s, p);
        CHECK(ty.shape() == x.shape());
        CHECK(testsup::dot(cx, y) == doctest::Approx(testsup::dot(x, ty)).epsilon(1e-10));
    }
}

TEST_CASE("max_pool2d picks block maxima and routes gradients to the argmax") {
    D x = ascending({1, 1, 4, 4});
    x.set_requires_grad(true);
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    D y = max_pool2d(x, 2, 2);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.at({0, 0, 0, 0}) == 5.0);
    CHECK(y.at({0, 0, 0, 1}) == 7.0);
    CHECK(y.at({0, 0, 1, 0}) == 13.0);
    CHECK(y.at({0, 0, 1, 1}) == 15.0);
    tape.backward(sum(y));
    CHECK(x.grad_at(5) == 1.0);
    CHECK(x.grad_at(7) == 1.0);
    CHECK(x.grad_at(0) == 0.0);
}

TEST_CASE("max_pool2d ties go to the first element in scan order") {
    D x = D::full({1, 1, 2, 2}, 3.0);
    x.set_requires_grad(true);
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum(max_pool2d(x, 2, 2)));
    CHECK(x.grad_at(0) == 1.0);
    CHECK(x.grad_at(1) == 0.0);
    CHECK(x.grad_at(3) == 0.0);
}

TEST_CASE("bilinear_resize identity, corners, and box-average downscale") {
    SUBCASE("same size is exact identity") {
        Rng rng(3);
        D x({1, 2, 5, 7});
        testsup::fill_uniform(x, rng);
        D y = bilinear_resize(x, 5, 7);
        CHECK(testsup::max_abs_diff(x, y) == 0.0);
    }
    SUBCASE("2x2 -> 4x4 keeps corners") {
        D x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
        D y = bilinear_resize(x, 4, 4);
        CHECK(y.at({0, 0, 0, 0}) == 1.0);
        CHECK(y.at({0, 0, 0, 3}) == 2.0);
        CHECK(y.at({0, 0, 3, 0}) == 3.0);
        CHECK(y.at({0, 0, 3, 3}) == 4.0);
        CHECK(y.at({0, 0, 1, 1}) == doctest::Approx(1.0 * 0.5625 + 2.0 * 0.1875 + 3.0 * 0.1875 + 4.0 * 0.0625));
    }
    SUBCASE("4x4 -> 2x2 averages 2x2 blocks") {
        D x = ascending({1, 1, 4, 4});
        D y = bilinear_resize(x, 2, 2);
        CHECK(y.at({0, 0, 0, 0}) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
        CHECK(y.at({0, 0, 1, 1}) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
    }
}

TEST_CASE("matmul and linear match triple loops") {
    Rng rng(5);
    D a({4, 3}), b({3, 5}), w({3, 5}), bias({5});
    testsup::fill_uniform(a, rng);
    testsup::fill_uniform(b, rng);
    testsup::fill_uniform(w, rng);
    testsup::fill_uniform(bias, rng);
    D mm = matmul(a, b);
    D ln = linear(a, w, bias);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 5; ++j) {
            double acc = 0, acc2 = bias.data()[static_cast<std::size_t>(j)];
            for (std::int64_t k = 0; k < 3; ++k) {
                acc += a.at({i, k}) * b.at({k, j});
                acc2 += a.at({i, k}) * w.at({k, j});
            }
            CHECK(mm.at({i, j}) == doctest::Approx(acc).epsilon(1e-12));
            CHECK(ln.at({i, j}) == doctest::Approx(acc2).epsilon(1e-12));
        }
    CHECK_THROWS_AS(matmul(a, D({4, 2})), ShapeError);
}

TEST_CASE("concat, narrow, permute, reshape round-trips") {
    Rng rng(9);
    D a({2, 3, 4}), b({2, 2, 4});
    testsup::fill_uniform(a, rng);
    testsup::fill_uniform(b, rng);
    D c = concat<double>({a, b}, 1);
    CHECK(c.shape() == Shape{2, 5, 4});
    CHECK(testsup::max_abs_diff(narrow(c, 1, 0, 3), a) == 0.0);
    CHECK(testsup::max_abs_diff(narrow(c, 1, 3, 2), b) == 0.0);
    CHECK_THROWS_AS(narrow(c, 1, 4, 2), ShapeError);

    D p = permute(a, {2, 0, 1});
    CHECK(p.shape() == Shape{4, 2, 3});
    CHECK(p.at({3, 1, 2}) == a.at({1, 2, 3}));
    D back = permute(p, {1, 2, 0});
    CHECK(testsup::max_abs_diff(back, a) == 0.0);

    D r = reshape(a, {6, 4});
    CHECK(r.at({5, 3}) == a.at({1, 2, 3}));
    CHECK_THROWS_AS(reshape(a, Shape{5, 5}), ShapeError);
}

TEST_CASE("backward bookkeeping: off-path leaves, repetition, intermediates") {
    D x = D::scalar(2.0), y = D::scalar(7.0);
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    D mid = mul(x, x);
    D loss = sum(mid);
    CHECK_THROWS_AS(tape.backward(concat<double>({x, y}, 0)), ShapeError);
    tape.backward(loss);
    CHECK(x.grad_at(0) == doctest::Approx(4.0));
    CHECK(y.grad_at(0) == 0.0);       // off the path
    CHECK_FALSE(mid.has_grad());      // intermediate grads are dropped
    CHECK_FALSE(mid.is_leaf());
    CHECK(x.is_leaf());
    tape.backward(loss);              // replays and accumulates
    CHECK(x.grad_at(0) == doctest::Approx(8.0));
    x.zero_grad();
    tape.backward(loss);
    CHECK(x.grad_at(0) == doctest::Approx(4.0));
}

TEST_CASE("no tape means no graph") {
    D x = D::scalar(2.0);
    x.set_requires_grad(true);
    D y = mul(x, x);
    CHECK(y.is_leaf());
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite-difference verification of every primitive op") {
    Rng rng(2024);
    std::vector<GradCheckResult> results;
    auto run = [&](const std::string& name, const GradCheckFn& fn, std::vector<D> inputs) {
        results.push_back(grad_check(name, fn, std::move(inputs), 1e-6));
    };

    {
        D a({2, 3}), b({2, 3});
        testsup::fill_uniform(a, rng);
        testsup::fill_uniform(b, rng);
        run("add", [](std::span<D> in) { return sum(add(in[0], in[1])); }, {a.clone(), b.clone()});
        run("sub", [](std::span<D> in) { return sum(mul(sub(in[0], in[1]), in[1])); },
            {a.clone(), b.clone()});
        run("mul", [](std::span<D> in) { return sum(mul(in[0], in[1])); }, {a.clone(), b.clone()});
        run("scale+add_scalar",
            [](std::span<D> in) { return sum(add_scalar(scale(in[0], 1.7), 0.3)); }, {a.clone()});
        run("rsub_scalar", [](std::span<D> in) { return sum(mul(rsub_scalar(2.0, in[0]), in[0])); },
            {a.clone()});
        run("mean", [](std::span<D> in) { return mean(mul(in[0], in[0])); }, {a.clone()});
    }
    {
        D x({2, 4});
        testsup::fill_uniform(x, rng, 0.2, 2.0);
        run("log_elem", [](std::span<D> in) { return sum(log_elem(in[0])); }, {x.clone()});
    }
    {
        D x({3, 3});
        testsup::fill_uniform_nonzero(x, rng);
        run("relu", [](std::span<D> in) { return sum(mul(relu(in[0]), in[0])); }, {x.clone()});
        run("sigmoid", [](std::span<D> in) { return sum(sigmoid(in[0])); }, {x.clone()});
        run("tanh", [](std::span<D> in) { return sum(mul(tanh_act(in[0]), in[0])); }, {x.clone()});
        run("softmax", [](std::span<D> in) { return sum(mul(softmax(in[0], 1), in[0])); },
            {x.clone()});
    }
    {
        D x({4});
        testsup::fill_uniform(x, rng, -0.8, 0.8);  // keep away from the clamp kinks at +-1
        run("clamp", [](std::span<D> in) { return sum(mul(clamp(in[0], -1.0, 1.0), in[0])); },
            {x.clone()});
    }
    {
        D a({3, 4}), b({4, 2}), w({4, 2}), bias({2});
        testsup::fill_uniform(a, rng);
        testsup::fill_uniform(b, rng);
        testsup::fill_uniform(w, rng);
        testsup::fill_uniform(bias, rng);
        run("matmul", [](std::span<D> in) { return sum(mul(matmul(in[0], in[1]), matmul(in[0], in[1]))); },
            {a.clone(), b.clone()});
        run("linear",
            [](std::span<D> in) {
                D y = linear(in[0], in[1], in[2]);
                return sum(mul(y, y));
            },
            {a.clone(), w.clone(), bias.clone()});
    }
    {
        D x({2, 2, 5, 4}), w({3, 2, 3, 3}), b({3});
        testsup::fill_uniform(x, rng);
        testsup::fill_uniform(w, rng);
        testsup::fill_uniform(b, rng);
        run("conv2d s2p1",
            [](std::span<D> in) {
                D y = conv2d(in[0], in[1], in[2], 2, 1, 1);
                return sum(mul(y, y));
            },
            {x.clone(), w.clone(), b.clone()});
        run("conv2d dil2",
            [](std::span<D> in) {
                D y = conv2d(in[0], in[1], in[2], 1, 2, 2);
                return sum(mul(y, y));
            },
            {x.clone(), w.clone(), b.clone()});
    }
    {
        D x({1, 2, 3, 3}), w({2, 2, 2, 2}), b({2});
        testsup::fill_uniform(x, rng);
        testsup::fill_uniform(w, rng);
        testsup::fill_uniform(b, rng);
        run("conv2d_transpose",
            [](std::span<D> in) {
                D y = conv2d_transpose(in[0], in[1], in[2], 2, 1);
                return sum(mul(y, y));
            },
            {x.clone(), w.clone(), b.clone()});
    }
    {
        D x({1, 2, 4, 4});
        testsup::fill_distinct(x, rng);
        run("max_pool2d", [](std::span<D> in) { return sum(mul(max_pool2d(in[0], 2, 2), max_pool2d(in[0], 2, 2))); },
            {x.clone()});
    }
    {
        D x({1, 2, 4, 5});
        testsup::fill_uniform(x, rng);
        run("bilinear up",
            [](std::span<D> in) {
                D y = bilinear_resize(in[0], 7, 9);
                return sum(mul(y, y));
            },
            {x.clone()});
        run("bilinear down",
            [](std::span<D> in) {
                D y = bilinear_resize(in[0], 2, 3);
                return sum(mul(y, y));
            },
            {x.clone()});
    }
    {
        D a({2, 2, 3}), b({2, 1, 3});
        testsup::fill_uniform(a, rng);
        testsup::fill_uniform(b, rng);
        run("concat+narrow",
            [](std::span<D> in) {
                D c = concat<double>({in[0], in[1]}, 1);
                return sum(mul(narrow(c, 1, 1, 2), narrow(c, 1, 0, 2)));
            },
            {a.clone(), b.clone()});
        run("permute+reshape",
            [](std::span<D> in) {
                D p = permute(in[0], {2, 0, 1});
                D r = reshape(p, {3, 4});
                return sum(mul(r, r));
            },
            {a.clone()});
    }

    for (const auto& r : results) {
        INFO(r.name, " max_err=", r.max_err);
        CHECK(r.pass);
    }
}
