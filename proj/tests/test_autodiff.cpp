#include <doctest.h>

#include "invpt/rng.hpp"
#include "invpt/train.hpp"
#include "oracles.hpp"

using namespace invpt;

TEST_SUITE("autodiff") {
    TEST_CASE("sum gives all-ones gradient") {
        auto x = Tensor::from({2, 3}, {1, -2, 3, 4, -5, 6}, true);
        backward(sum(x));
        CHECK(x->grad == std::vector<double>(6, 1.0));
    }

    TEST_CASE("sum of x*x gives 2x") {
        auto x = Tensor::from({4}, {0.5, -1.5, 2.0, 3.0}, true);
        backward(sum(mul(x, x)));
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(x->grad[i] == doctest::Approx(2.0 * x->data[i]));
    }

    TEST_CASE("fan-out accumulates") {
        auto x = Tensor::from({2}, {1.0, 2.0}, true);
        auto y = add(x, x);
        backward(sum(y));
        CHECK(x->grad == std::vector<double>{2.0, 2.0});
    }

    TEST_CASE("backward requires a scalar root") {
        auto x = Tensor::from({2}, {1.0, 2.0}, true);
        CHECK_THROWS_AS(backward(add(x, x)), ArgumentError);
    }

    TEST_CASE("finite_diff_grad basics") {
        auto x = Tensor::from({3}, {1.0, -2.0, 0.5});
        auto fd = finite_diff_grad([&] {
            double s = 0;
            for (double v : x->data) s += v;
            return s;
        }, x);
        for (double g : fd->data) CHECK(g == doctest::Approx(1.0).epsilon(1e-9));

        auto x2 = Tensor::from({1}, {3.0});
        auto fd2 = finite_diff_grad([&] { return x2->data[0] * x2->data[0]; }, x2);
        CHECK(fd2->data[0] == doctest::Approx(6.0).epsilon(1e-8));
    }

    TEST_CASE("two-layer MLP matches finite differences") {
        Rng rng(31);
        auto x = Tensor::zeros({4, 5}, true);
        auto w1 = Tensor::zeros({5, 6}, true);
        auto b1 = Tensor::zeros({6}, true);
        auto w2 = Tensor::zeros({6, 3}, true);
        for (auto* t : {x.get(), w1.get(), b1.get(), w2.get()})
            for (auto& v : t->data) v = rng.uniform(-1.0, 1.0);
        auto fwd = [&] {
            auto h = relu(add_rowvec(matmul(x, w1), b1));
            return sum(mul(matmul(h, w2), matmul(h, w2)));
        };
        backward(fwd());
        auto value = [&] {
            NoGradGuard ng;
            return fwd()->item();
        };
        for (auto& leaf : {x, w1, b1, w2}) {
            auto fd = finite_diff_grad(value, leaf);
            CHECK(train::max_rel_err(leaf->grad, fd->data) < 1e-6);
        }
    }

    TEST_CASE("op sweep: every differentiable op vs central differences") {
        const auto results = train::gradcheck_suite(train::GradCheckScope::Ops, 2024);
        CHECK(results.size() > 30);
        for (const auto& r : results) {
            INFO(r.name, " rel err ", r.max_rel_err);
            CHECK(r.max_rel_err < 1e-6);
        }
    }

    TEST_CASE("checker detects a corrupted backward") {
        // negate the analytic conv input gradient and require a mismatch
        Rng rng(32);
        auto x = Tensor::zeros({2, 5, 5}, true);
        auto w = Tensor::zeros({3, 2, 3, 3}, true);
        for (auto* t : {x.get(), w.get()})
            for (auto& v : t->data) v = rng.uniform(-1.0, 1.0);
        auto r = Tensor::zeros({3, 5, 5});
        for (auto& v : r->data) v = rng.uniform(-1.0, 1.0);
        auto fwd = [&] { return sum(mul(conv2d(x, w, 1, 1), r)); };
        backward(fwd());
        for (auto& g : x->grad) g = -g;  // the deliberate corruption
        auto fd = finite_diff_grad([&] {
            NoGradGuard ng;
            return fwd()->item();
        }, x);
        CHECK(train::max_rel_err(x->grad, fd->data) > 1e-3);
    }

    TEST_CASE("no_grad mode records no tape") {
        auto x = Tensor::from({2}, {1.0, 2.0}, true);
        NoGradGuard ng;
        auto y = add(x, x);
        CHECK_FALSE(y->requires_grad);
        CHECK(y->parents.empty());
    }

    TEST_CASE("gather gradient scatters ones to selected columns") {
        auto a = Tensor::zeros({2, 5}, true);
        for (std::size_t i = 0; i < a->data.size(); ++i) a->data[i] = double(i);
        backward(sum(gather_columns(a, {1, 3})));
        for (std::int64_t i = 0; i < 2; ++i)
            for (std::int64_t j = 0; j < 5; ++j)
                CHECK(a->grad[i * 5 + j] == ((j == 1 || j == 3) ? 1.0 : 0.0));
    }
}
