#include <cmath>
#include <random>

#include "doctest.h"
#include "gencast/diff/ops.hpp"
#include "gencast/error.hpp"
#include "support/gradient_cases.hpp"

using namespace gencast;
using namespace gencast::diff;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

}  // namespace

TEST_CASE("grad of x*x at 3 is 6") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0), true);
    auto g = grad(mul(x, x), {x});
    CHECK(g[0].item() == 6.0);
}

TEST_CASE("grad of bilinear x*y at (2,5)") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0), true);
    Var y = tape.leaf(Tensor::scalar(5.0), true);
    auto g = grad(mul(x, y), {x, y});
    CHECK(g[0].item() == 5.0);
    CHECK(g[1].item() == 2.0);
}

TEST_CASE("two-hidden-layer perceptron matches central differences") {
    std::mt19937_64 rng(42);
    const Tensor w1 = random_tensor({10, 8}, rng), b1 = random_tensor({8}, rng);
    const Tensor w2 = random_tensor({8, 6}, rng), b2 = random_tensor({6}, rng);
    const Tensor w3 = random_tensor({6, 1}, rng);
    auto forward = [&](Tape& tape, Var x) {
        Var h = tanh(linear(reshape(x, {1, 10}), tape.constant(w1), tape.constant(b1)));
        h = tanh(linear(h, tape.constant(w2), tape.constant(b2)));
        return sum(linear(h, tape.constant(w3)));
    };
    const Tensor x0 = random_tensor({10}, rng);

    Tape tape;
    Var x = tape.leaf(x0, true);
    const Tensor analytic = grad(forward(tape, x), {x})[0];

    // Independent oracle: central differences on value-only evaluations.
    const double eps = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        Tensor p = x0, m = x0;
        p[i] += eps;
        m[i] -= eps;
        Tape tp, tm;
        const double fd = (forward(tp, tp.constant(p)).value().item() - forward(tm, tm.constant(m)).value().item()) /
                          (2 * eps);
        worst = std::max(worst, std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-12}));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("seeded_grad through identity returns the seed") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.0, 2.0, 3.0, 4.0}), true);
    Var y = scale(x, 1.0);
    Tensor seed(Shape{4}, 0.0);
    seed[2] = 1.0;
    auto g = seeded_grad(y, seed, {x});
    CHECK(g[0].values() == std::vector<double>{0.0, 0.0, 1.0, 0.0});
}

TEST_CASE("all-ones seed equals grad of the summed output") {
    std::mt19937_64 rng(7);
    Tape tape;
    Var x = tape.leaf(random_tensor({3, 4}, rng), true);
    Var w = tape.leaf(random_tensor({4, 5}, rng), true);
    Var y = tanh(matmul(x, w));
    auto seeded = seeded_grad(y, Tensor(y.shape(), 1.0), {x, w});
    auto summed = grad(sum(y), {x, w});
    CHECK(max_abs_diff(seeded[0], summed[0]) == 0.0);
    CHECK(max_abs_diff(seeded[1], summed[1]) == 0.0);
}

TEST_CASE("vector-Jacobian of a linear map is W^T s") {
    const Tensor w = Tensor::matrix({{1.0, 2.0, 0.5}, {-1.0, 0.0, 3.0}});  // 2x3, y = W x
    const Tensor s = Tensor::vector({0.25, -2.0});
    Tape tape;
    Var x = tape.leaf(Tensor::vector({0.3, -0.7, 1.1}), true);
    // y = W x expressed as x^T W^T with the constant transposed.
    Var wt = tape.constant(Tensor::matrix({{1.0, -1.0}, {2.0, 0.0}, {0.5, 3.0}}));
    Var y = reshape(matmul(reshape(x, {1, 3}), wt), {2});
    auto g = seeded_grad(y, s, {x});
    // Direct arithmetic: (W^T s)_j = sum_i W[i][j] s[i]
    for (std::size_t j = 0; j < 3; ++j) {
        const double expected = w.at({0, j}) * s[0] + w.at({1, j}) * s[1];
        CHECK(g[0][j] == doctest::Approx(expected).epsilon(1e-15));
    }
}

TEST_CASE("seeded_grad rejects a seed of the wrong shape") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.0, 2.0}), true);
    Var y = square(x);
    CHECK_THROWS_AS(seeded_grad(y, Tensor(Shape{3}, 1.0), {x}), ShapeMismatch);
}

TEST_CASE("grad errors") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.0, 2.0}), true);
    CHECK_THROWS_AS(grad(square(x), {x}), NonScalarOutput);

    Tape other;
    Var stranger = other.leaf(Tensor::scalar(1.0), true);
    CHECK_THROWS_AS(grad(sum(x), {stranger}), DetachedInput);

    Var frozen = tape.leaf(Tensor::scalar(1.0), false);
    CHECK_THROWS_AS(grad(sum(x), {frozen}), DetachedInput);
}

TEST_CASE("backward populates grad only for participating differentiable values") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.0, -2.0}), true);
    Var unused = tape.leaf(Tensor::vector({5.0}), true);
    Var c = tape.leaf(Tensor::vector({3.0, 3.0}), false);
    Var y = sum(mul(x, c));
    tape.backward(y);
    REQUIRE(x.grad().has_value());
    CHECK(x.grad()->values() == std::vector<double>{3.0, 3.0});
    CHECK_FALSE(unused.grad().has_value());
    CHECK_FALSE(c.grad().has_value());
}

TEST_CASE("repeated reverse passes on one tape agree") {
    std::mt19937_64 rng(3);
    Tape tape;
    Var x = tape.leaf(random_tensor({4}, rng), true);
    Var y = sum(exp(sin(x)));
    auto a = grad(y, {x});
    auto b = grad(y, {x});
    CHECK(max_abs_diff(a[0], b[0]) == 0.0);
}

TEST_CASE("re-recording the same computation gives identical gradients") {
    std::mt19937_64 rng(5);
    const Tensor p = random_tensor({2, 3}, rng);
    auto run = [&] {
        Tape tape;
        Var x = tape.leaf(p, true);
        return grad(sum(softmax(square(x))), {x})[0];
    };
    CHECK(max_abs_diff(run(), run()) == 0.0);
}

TEST_CASE("check_gradients on sum of squares is exact to 1e-8") {
    std::mt19937_64 rng(11);
    auto fn = [](Tape&, Var x) { return sum(square(x)); };
    CHECK(check_gradients(fn, random_tensor({7}, rng), 1e-6) < 1e-8);
}

TEST_CASE("check_gradients on log-softmax first entry") {
    std::mt19937_64 rng(13);
    auto fn = [](Tape&, Var x) { return log(index_select(softmax(x), 0, {0})); };
    CHECK(check_gradients(fn, random_tensor({5}, rng), 1e-6) < 1e-5);
}

TEST_CASE("check_gradients at a ReLU kink does not raise") {
    auto fn = [](Tape&, Var x) { return sum(relu(x)); };
    double at_kink = 0.0;
    CHECK_NOTHROW(at_kink = check_gradients(fn, Tensor::vector({0.0, 1.0}), 1e-6));
    CHECK(std::isfinite(at_kink));
    // Points adjacent to (but not straddling) the kink use the relaxed tolerance.
    CHECK(check_gradients(fn, Tensor::vector({1e-3, -1e-3}), 1e-6) < 1e-3);
}

TEST_CASE("check_gradients reports non-finite values") {
    auto fn = [](Tape&, Var x) { return sum(log(x)); };
    CHECK_THROWS_AS(check_gradients(fn, Tensor::vector({-1.0}), 1e-6), NonFiniteValue);
}

TEST_CASE("softmax is stable for large logits") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1000.0, 1001.0, 999.0}), true);
    Var y = softmax(x);
    double s = 0.0;
    for (double v : y.value().data()) {
        CHECK(std::isfinite(v));
        s += v;
    }
    CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("relu subgradient at zero is zero") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({0.0}), true);
    CHECK(grad(sum(relu(x)), {x})[0][0] == 0.0);
}

TEST_CASE("every primitive matches central differences at random points") {
    for (const auto& c : gencast::testing::primitive_cases()) {
        CAPTURE(c.name);
        CHECK(gencast::testing::worst_primitive_error(c, 10, 99) < 1e-5);
    }
}

TEST_CASE("causal convolution reads no future inputs") {
    std::mt19937_64 rng(17);
    Tape tape;
    Var x = tape.leaf(random_tensor({1, 6, 2, 3}, rng), true);
    Var w = tape.constant(random_tensor({3, 3, 3}, rng));
    Var b = tape.constant(random_tensor({3}, rng));
    Var y = causal_conv1d(x, w, b, 1);
    for (std::size_t t = 0; t < 6; ++t) {
        Tensor seed(y.shape(), 0.0);
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t c = 0; c < 3; ++c) seed.at({0, t, n, c}) = 1.0;
        Tensor g = seeded_grad(y, seed, {x})[0];
        for (std::size_t tt = t + 1; tt < 6; ++tt)
            for (std::size_t n = 0; n < 2; ++n)
                for (std::size_t c = 0; c < 3; ++c) CHECK(g.at({0, tt, n, c}) == 0.0);
    }
}
