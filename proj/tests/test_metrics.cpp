#include <doctest.h>

#include "invpt/metrics.hpp"
#include "invpt/rng.hpp"

using namespace invpt;
namespace m = invpt::metrics;

TEST_SUITE("metrics") {
    TEST_CASE("miou: perfect, hand-counted quarter, degenerate") {
        std::vector<std::int64_t> label{0, 1, 2, 1};
        CHECK(*m::miou(label, label, 3) == doctest::Approx(1.0));

        // 4-pixel grid: pred all 0, labels half 0 half 1
        std::vector<std::int64_t> pred{0, 0, 0, 0}, lab{0, 0, 1, 1};
        CHECK(*m::miou(pred, lab, 2) == doctest::Approx(0.25));

        std::vector<std::int64_t> ignored{255, 255};
        CHECK_FALSE(m::miou({0, 1}, ignored, 2).has_value());
    }

    TEST_CASE("miou rejects out-of-range ids") {
        CHECK_THROWS_AS(m::miou({5}, {0}, 2), DataError);
        CHECK_THROWS_AS(m::miou({0}, {7}, 2), DataError);
    }

    TEST_CASE("rmse: zero, constant offset, two-pass oracle") {
        std::vector<double> a{1, 2, 3, 4};
        std::vector<std::uint8_t> mask{1, 1, 1, 1};
        CHECK(*m::rmse(a, a, mask) == doctest::Approx(0.0));

        std::vector<double> b{1.5, 2.5, 3.5, 4.5};
        CHECK(*m::rmse(b, a, mask) == doctest::Approx(0.5));

        Rng rng(5);
        std::vector<double> p(100), l(100);
        std::vector<std::uint8_t> mk(100);
        for (std::size_t i = 0; i < 100; ++i) {
            p[i] = rng.uniform(-2, 2);
            l[i] = rng.uniform(-2, 2);
            mk[i] = rng.uniform() < 0.7 ? 1 : 0;
        }
        double acc = 0;
        std::int64_t n = 0;
        for (std::size_t i = 0; i < 100; ++i)
            if (mk[i]) {
                acc += (p[i] - l[i]) * (p[i] - l[i]);
                ++n;
            }
        CHECK(*m::rmse(p, l, mk) ==
              doctest::Approx(std::sqrt(acc / n)).epsilon(1e-12));

        CHECK_FALSE(m::rmse(a, a, {0, 0, 0, 0}).has_value());
    }

    TEST_CASE("mean angle error: aligned, orthogonal, antiparallel") {
        // layout (dims, count)
        std::vector<double> unit_x{1, 0, 0};  // one 3-vector, count 1
        CHECK(m::mean_angle_error_deg(unit_x, unit_x, 3, 1) == doctest::Approx(0.0));
        std::vector<double> unit_y{0, 1, 0};
        CHECK(m::mean_angle_error_deg(unit_x, unit_y, 3, 1) == doctest::Approx(90.0));
        std::vector<double> neg_x{-1, 0, 0};
        CHECK(m::mean_angle_error_deg(neg_x, unit_x, 3, 1) == doctest::Approx(180.0));
        // unnormalized predictions are normalized internally
        std::vector<double> big_x{42.0, 0, 0};
        CHECK(m::mean_angle_error_deg(big_x, unit_x, 3, 1) == doctest::Approx(0.0));
    }

    TEST_CASE("boundary f1: identity, empty, one-pixel shift within tolerance") {
        const std::int64_t h = 9, w = 9;
        std::vector<std::uint8_t> ring(h * w, 0);
        for (std::int64_t i = 2; i <= 6; ++i) {
            ring[2 * w + i] = ring[6 * w + i] = 1;
            ring[i * w + 2] = ring[i * w + 6] = 1;
        }
        CHECK(m::boundary_f1(ring, ring, h, w) == doctest::Approx(1.0));

        std::vector<std::uint8_t> empty(h * w, 0);
        CHECK(m::boundary_f1(empty, ring, h, w) == doctest::Approx(0.0));
        CHECK(m::boundary_f1(empty, empty, h, w) == doctest::Approx(1.0));

        // shift the ring one pixel right; tolerance 1 still matches fully
        std::vector<std::uint8_t> shifted(h * w, 0);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 1; x < w; ++x) shifted[y * w + x] = ring[y * w + x - 1];
        CHECK(m::boundary_f1(shifted, ring, h, w, 1) == doctest::Approx(1.0));
        CHECK(m::boundary_f1(shifted, ring, h, w, 0) < 1.0);
    }

    TEST_CASE("delta_m reproduces the published cross-checks") {
        // four-task indoor benchmark row
        CHECK(m::delta_m({44.27, 0.5589, 20.46, 76.10}, {43.29, 0.5975, 20.80, 76.10},
                         {false, true, true, false}) ==
              doctest::Approx(2.59).epsilon(0.004));
        // five-task outdoor benchmark row
        CHECK(m::delta_m({73.93, 62.73, 84.24, 14.15, 72.60},
                         {72.43, 61.13, 83.43, 14.38, 71.50},
                         {false, false, false, true, false}) ==
              doctest::Approx(1.76).epsilon(0.006));
        // identical scores
        CHECK(m::delta_m({1.0, 2.0}, {1.0, 2.0}, {false, true}) == doctest::Approx(0.0));
    }

    TEST_CASE("delta_m is invariant to uniform rescaling of a task pair") {
        const double base = m::delta_m({50.0, 0.6}, {45.0, 0.5}, {false, true});
        const double scaled = m::delta_m({500.0, 0.6}, {450.0, 0.5}, {false, true});
        CHECK(base == doctest::Approx(scaled).epsilon(1e-12));
    }

    TEST_CASE("delta_m error cases") {
        CHECK_THROWS_AS(m::delta_m({1.0}, {0.0}, {false}), ArgumentError);
        CHECK_THROWS_AS(m::delta_m({1.0}, {1.0, 2.0}, {false, false}), ArgumentError);
        CHECK_THROWS_AS(m::delta_m({}, {}, {}), ArgumentError);
    }
}
