#include <doctest.h>

#include <cmath>

#include "invpt/rng.hpp"
#include "invpt/tensor.hpp"
#include "oracles.hpp"

using namespace invpt;

namespace {

TensorPtr randt(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    auto t = Tensor::zeros(std::move(s));
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_SUITE("tensor") {
    TEST_CASE("matmul identity and projector") {
        auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
        auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
        CHECK(matmul(eye, m)->data == m->data);
        auto proj = Tensor::from({2, 2}, {1, 0, 0, 0});
        auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
        CHECK(matmul(proj, b)->data == std::vector<double>{5, 6, 0, 0});
    }

    TEST_CASE("matmul matches triple-loop oracle exactly") {
        auto a = randt({4, 3}, 11);
        auto b = randt({3, 5}, 12);
        auto got = matmul(a, b);
        auto want = oracle::matmul(a->data, b->data, 4, 3, 5);
        CHECK(oracle::max_abs_diff(got->data, want) == 0.0);
    }

    TEST_CASE("matmul shape mismatch throws") {
        CHECK_THROWS_AS(matmul(randt({2, 3}, 1), randt({4, 2}, 2)), DimensionError);
    }

    TEST_CASE("conv2d 1x1 identity and all-ones interior") {
        auto x = randt({1, 4, 4}, 13);
        auto w1 = Tensor::from({1, 1, 1, 1}, {1.0});
        CHECK(conv2d(x, w1, 1, 0)->data == x->data);

        auto c = Tensor::full({1, 5, 5}, 2.5);
        auto ones = Tensor::full({1, 1, 3, 3}, 1.0);
        auto y = conv2d(c, ones, 1, 1);
        // interior value 9c
        CHECK(y->data[1 * 5 + 1] == doctest::Approx(22.5));
        CHECK(y->data[2 * 5 + 3] == doctest::Approx(22.5));
        // corner only sees 4 taps
        CHECK(y->data[0] == doctest::Approx(10.0));
    }

    TEST_CASE("conv2d matches direct-loop oracle") {
        auto x = randt({3, 7, 6}, 14);
        auto w = randt({4, 3, 3, 3}, 15);
        for (std::int64_t stride : {1, 2}) {
            auto got = conv2d(x, w, stride, 1);
            auto want = oracle::conv2d(x->data, w->data, 3, 7, 6, 4, 3, 3, stride, 1);
            CHECK(oracle::max_rel_diff(got->data, want) < 1e-12);
        }
    }

    TEST_CASE("conv2d rejects non-positive output extents") {
        CHECK_THROWS_AS(conv2d(randt({1, 2, 2}, 1), randt({1, 1, 5, 5}, 2), 1, 0),
                        DimensionError);
    }

    TEST_CASE("transposed_conv2d outer product and nearest-neighbour cases") {
        auto x = Tensor::from({1, 1, 1}, {3.0});
        auto k = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
        CHECK(transposed_conv2d(x, k, 2)->data == std::vector<double>{3, 6, 9, 12});

        auto img = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
        auto ones = Tensor::full({1, 1, 2, 2}, 1.0);
        CHECK(transposed_conv2d(img, ones, 2)->data ==
              std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
    }

    TEST_CASE("transposed_conv2d matches scatter oracle; kernel!=stride rejected") {
        auto x = randt({2, 3, 4}, 16);
        auto w = randt({2, 3, 2, 2}, 17);
        auto got = transposed_conv2d(x, w, 2);
        auto want = oracle::tconv2d(x->data, w->data, 2, 3, 4, 3, 2);
        CHECK(oracle::max_rel_diff(got->data, want) < 1e-12);
        CHECK_THROWS_AS(transposed_conv2d(x, w, 3), ConfigError);
    }

    TEST_CASE("avg_pool2d examples and mass conservation") {
        auto c = Tensor::full({2, 4, 4}, 1.25);
        CHECK(avg_pool2d(c, 2)->data == std::vector<double>(8, 1.25));
        auto m = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
        CHECK(avg_pool2d(m, 2)->data == std::vector<double>{2.5});

        auto x = randt({3, 6, 6}, 18);
        auto y = avg_pool2d(x, 3);
        double in_sum = 0, out_sum = 0;
        for (double v : x->data) in_sum += v;
        for (double v : y->data) out_sum += v;
        CHECK(out_sum * 9.0 == doctest::Approx(in_sum).epsilon(1e-9));

        CHECK_THROWS_AS(avg_pool2d(randt({1, 5, 4}, 1), 2), DimensionError);
    }

    TEST_CASE("bilinear constant extension and closed-form oracle") {
        auto one = Tensor::from({1, 1, 1}, {7.5});
        CHECK(bilinear_resize(one, 2, 2)->data == std::vector<double>(4, 7.5));
        auto c = Tensor::full({2, 3, 3}, -0.25);
        auto cv = bilinear_resize(c, 7, 5);
        for (double v : cv->data) CHECK(v == doctest::Approx(-0.25));

        auto x = randt({2, 4, 5}, 19);
        auto y = bilinear_resize(x, 8, 10);
        for (std::int64_t ch = 0; ch < 2; ++ch)
            for (std::int64_t oy = 0; oy < 8; oy += 2)
                for (std::int64_t ox = 0; ox < 10; ox += 2) {
                    const double want = oracle::bilinear_at(x->data, 2, 4, 5, 8, 10, ch, oy, ox);
                    const double got = y->data[(ch * 8 + oy) * 10 + ox];
                    CHECK(std::fabs(got - want) <= 1e-12 * std::max(1.0, std::fabs(want)));
                }
    }

    TEST_CASE("softmax rows: basic values, shift invariance, stabilization") {
        auto a = Tensor::from({1, 2}, {0.0, 0.0});
        CHECK(softmax_rows(a)->data == std::vector<double>{0.5, 0.5});

        auto b = Tensor::from({1, 2}, {1.0, 1.0 + std::log(3.0)});
        auto sb = softmax_rows(b);
        CHECK(sb->data[0] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(sb->data[1] == doctest::Approx(0.75).epsilon(1e-12));

        auto big = Tensor::from({1, 2}, {1000.0, 1000.0});
        CHECK(softmax_rows(big)->data == std::vector<double>{0.5, 0.5});

        auto x = randt({5, 7}, 20);
        auto shifted = Tensor::zeros({5, 7});
        Rng rng(21);
        for (std::int64_t i = 0; i < 5; ++i) {
            const double c = rng.uniform(-3.0, 3.0);
            for (std::int64_t j = 0; j < 7; ++j)
                shifted->data[i * 7 + j] = x->data[i * 7 + j] + c;
        }
        auto y1 = softmax_rows(x), y2 = softmax_rows(shifted);
        CHECK(oracle::max_abs_diff(y1->data, y2->data) < 1e-12);
        for (std::int64_t i = 0; i < 5; ++i) {
            double row = 0;
            for (std::int64_t j = 0; j < 7; ++j) row += y1->data[i * 7 + j];
            CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
        }
    }

    TEST_CASE("layer norm row example") {
        auto x = Tensor::from({1, 3}, {1, 2, 3});
        auto g = Tensor::full({3}, 1.0);
        auto b = Tensor::zeros({3});
        auto y = layer_norm_rows(x, g, b);
        double mean = 0, var = 0;
        for (double v : y->data) mean += v / 3.0;
        for (double v : y->data) var += (v - mean) * (v - mean) / 3.0;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shifts variance slightly
    }

    TEST_CASE("batch norm: constant input zeros, eval-mode definition") {
        auto x = Tensor::full({2, 3, 3}, 4.0);
        auto g = Tensor::full({2}, 1.0);
        auto b = Tensor::zeros({2});
        BatchNormState st(2);
        auto y = batch_norm2d(x, g, b, st, true, false);
        for (double v : y->data) CHECK(v == doctest::Approx(0.0));

        st.running_mean = {1.0, -2.0};
        st.running_var = {4.0, 0.25};
        auto g2 = Tensor::from({2}, {2.0, 3.0});
        auto b2 = Tensor::from({2}, {0.5, -1.0});
        auto x2 = randt({2, 2, 2}, 22);
        auto y2 = batch_norm2d(x2, g2, b2, st, false, false);
        for (std::int64_t ch = 0; ch < 2; ++ch)
            for (std::int64_t i = 0; i < 4; ++i) {
                const double want = (x2->data[ch * 4 + i] - st.running_mean[ch]) /
                                        std::sqrt(st.running_var[ch] + 1e-5) * g2->data[ch] +
                                    b2->data[ch];
                CHECK(y2->data[ch * 4 + i] == doctest::Approx(want).epsilon(1e-12));
            }
    }

    TEST_CASE("topk: examples, tie break, sort oracle on 1000 vectors") {
        CHECK(topk_indices(std::vector<double>{0.1, 0.9, 0.5}, 2) ==
              std::vector<std::int64_t>{1, 2});
        CHECK(topk_indices(std::vector<double>{3, 3, 3, 3}, 2) ==
              std::vector<std::int64_t>{0, 1});
        CHECK_THROWS_AS(topk_indices(std::vector<double>{1.0}, 2), ArgumentError);
        CHECK_THROWS_AS(topk_indices(std::vector<double>{1.0}, 0), ArgumentError);

        Rng rng(23);
        for (int rep = 0; rep < 1000; ++rep) {
            const std::int64_t n = 1 + rng.next_below(64);
            std::vector<double> v(n);
            // quantized values so ties actually occur
            for (auto& x : v) x = static_cast<double>(rng.next_below(8));
            const std::int64_t k = 1 + rng.next_below(n);
            CHECK(topk_indices(v, k) == oracle::topk(v, k));
        }
    }

    TEST_CASE("gather and scatter columns") {
        auto a = Tensor::from({1, 3}, {1, 2, 3});
        CHECK(gather_columns(a, {2})->data == std::vector<double>{3});
        auto b = randt({4, 6}, 24);
        std::vector<std::int64_t> all{0, 1, 2, 3, 4, 5};
        CHECK(gather_columns(b, all)->data == b->data);
        CHECK_THROWS_AS(gather_columns(b, {6}), ArgumentError);

        auto s = scatter_columns(gather_columns(b, {1, 4}), {1, 4}, 6);
        for (std::int64_t i = 0; i < 4; ++i)
            for (std::int64_t j = 0; j < 6; ++j) {
                const double want = (j == 1 || j == 4) ? b->data[i * 6 + j] : 0.0;
                CHECK(s->data[i * 6 + j] == want);
            }
    }

    TEST_CASE("shape ops: split/concat identity, relu, double transpose") {
        auto x = randt({6, 4}, 25);
        for (int axis : {0, 1}) {
            auto parts = split_even(x, axis, 2);
            CHECK(concat(parts, axis)->data == x->data);
        }
        auto r = relu(Tensor::from({3}, {-1, 0, 2}));
        CHECK(r->data == std::vector<double>{0, 0, 2});
        CHECK(transpose(transpose(x))->data == x->data);
        CHECK_THROWS_AS(reshape(x, {5, 5}), DimensionError);
        CHECK_THROWS_AS(concat({x, randt({6, 3}, 1)}, 0), DimensionError);
    }

    TEST_CASE("graph nodes are topologically ordered") {
        auto a = randt({2, 2}, 26);
        a->requires_grad = true;
        auto b = matmul(a, a);
        auto c = sum(add(b, a));
        Graph g(c);
        // every parent index precedes its consumer
        for (std::size_t i = 0; i < g.nodes.size(); ++i)
            for (const auto& p : g.nodes[i]->parents) {
                auto it = std::find(g.nodes.begin(), g.nodes.end(), p);
                CHECK(static_cast<std::size_t>(it - g.nodes.begin()) < i);
            }
        CHECK(g.nodes.back() == c);
    }

    TEST_CASE("same seed rebuilds bit-identical graphs") {
        auto build = [] {
            auto x = randt({4, 4}, 27);
            auto y = softmax_rows(matmul(x, transpose(x)));
            return bilinear_resize(reshape(y, {1, 4, 4}), 8, 8);
        };
        CHECK(build()->data == build()->data);
    }

    TEST_CASE("forward ops keep finite values on finite inputs") {
        auto x = randt({3, 16}, 28, -5.0, 5.0);
        CHECK(softmax_rows(x)->all_finite());
        CHECK(log_softmax_rows(x)->all_finite());
        CHECK(exp(x)->all_finite());
        auto lnorm = layer_norm_rows(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
        CHECK(lnorm->all_finite());
    }
}
