#include <doctest.h>

#include "invpt/prelim.hpp"
#include "oracles.hpp"

using namespace invpt;

namespace {

std::vector<TaskSpec> two_tasks(std::int64_t classes = 3) {
    return {{"semseg", TaskKind::Categorical, classes, 1, 1.0, "miou", false},
            {"depth", TaskKind::Continuous, 2, 1, 1.0, "rmse", true}};
}

TensorPtr rand_tokens(std::int64_t rows, std::int64_t c, std::uint64_t seed) {
    Rng rng(seed);
    auto t = Tensor::zeros({rows, c});
    for (auto& v : t->data) v = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_SUITE("prelim") {
    TEST_CASE("zero weights give an all-zero prediction map of shape (K,H0,W0)") {
        ParamStore ps;
        Rng rng(1);
        PrelimStage stage;
        stage.init(ps, two_tasks(4), 6, 5, 8, rng);
        for (const auto& e : ps.entries())
            if (e.trainable) std::fill(e.tensor->data.begin(), e.tensor->data.end(), 0.0);
        auto out = stage.forward(rand_tokens(16, 6, 2), 4, 4, true, false);
        CHECK(out.predictions[0]->shape == Shape{4, 4, 4});
        for (double v : out.predictions[0]->data) CHECK(v == 0.0);
    }

    TEST_CASE("shape chain and combined sequence arithmetic") {
        // T=2, H0=W0=8, C0=16 -> F_c of shape (128, 16)
        ParamStore ps;
        Rng rng(3);
        PrelimStage stage;
        stage.init(ps, two_tasks(3), 6, 5, 16, rng);
        auto out = stage.forward(rand_tokens(64, 6, 4), 8, 8, true, false);
        CHECK(out.features[0]->shape == Shape{5, 8, 8});
        CHECK(out.predictions[0]->shape == Shape{3, 8, 8});
        CHECK(out.predictions[1]->shape == Shape{1, 8, 8});
        CHECK(out.combined.tokens->shape == Shape{128, 16});
        CHECK(out.combined.tasks == 2);
    }

    TEST_CASE("task blocks are contiguous, task 0 first") {
        ParamStore ps;
        Rng rng(5);
        PrelimStage stage;
        stage.init(ps, two_tasks(3), 6, 5, 8, rng);
        for (const auto& e : ps.entries())
            if (e.trainable) std::fill(e.tensor->data.begin(), e.tensor->data.end(), 0.0);
        // give task 0 a distinctive constant via its projection bias
        auto bias = ps.find("prelim.semseg.proj.b");
        REQUIRE(bias);
        std::fill(bias->data.begin(), bias->data.end(), 1.0);
        auto out = stage.forward(rand_tokens(16, 6, 6), 4, 4, true, false);
        for (std::int64_t r = 0; r < 32; ++r)
            for (std::int64_t c = 0; c < 8; ++c)
                CHECK(out.combined.tokens->data[r * 8 + c] == (r < 16 ? 1.0 : 0.0));
    }

    TEST_CASE("identity-extended projection reproduces the concatenated channels") {
        // choose C_p + out_ch == C0 so the projection can be the identity
        std::vector<TaskSpec> tasks = two_tasks(3);
        ParamStore ps;
        Rng rng(7);
        PrelimStage stage;
        stage.init(ps, tasks, 6, 5, 8, rng);  // task 0: 5 + 3 == 8 == C0
        auto w = ps.find("prelim.semseg.proj.w");
        auto b = ps.find("prelim.semseg.proj.b");
        REQUIRE(w);
        std::fill(w->data.begin(), w->data.end(), 0.0);
        std::fill(b->data.begin(), b->data.end(), 0.0);
        for (std::int64_t i = 0; i < 8; ++i) w->data[i * 8 + i] = 1.0;  // (C0, C_in, 1, 1)

        auto enc = rand_tokens(16, 6, 8);
        auto [f_d, p] = stage.decoders[0].forward(enc, 4, 4, true, false);
        auto tokens = stage.combine_task(0, f_d, p);
        auto direct = map_to_tokens(concat({f_d, p}, 0));
        CHECK(oracle::max_abs_diff(tokens->data, direct->data) == 0.0);
    }

    TEST_CASE("round trip through per-task maps is bitwise exact") {
        ParamStore ps;
        Rng rng(9);
        PrelimStage stage;
        stage.init(ps, two_tasks(3), 6, 5, 8, rng);
        auto out = stage.forward(rand_tokens(16, 6, 10), 4, 4, true, false);
        std::vector<TensorPtr> rebuilt;
        for (auto& slice : out.combined.task_slices())
            rebuilt.push_back(map_to_tokens(tokens_to_map(slice, 4, 4)));
        CHECK(concat(rebuilt, 0)->data == out.combined.tokens->data);
    }

    TEST_CASE("gradients reach both the feature and the prediction path") {
        ParamStore ps;
        Rng rng(11);
        PrelimStage stage;
        stage.init(ps, two_tasks(3), 6, 5, 8, rng);
        ps.zero_grads();
        auto out = stage.forward(rand_tokens(16, 6, 12), 4, 4, true, false);
        backward(sum(out.combined.tokens));
        auto pred_w = ps.find("prelim.semseg.pred.w");
        auto feat_w = ps.find("prelim.semseg.u2.conv.w");
        double pred_mag = 0, feat_mag = 0;
        for (double g : pred_w->grad) pred_mag += std::abs(g);
        for (double g : feat_w->grad) feat_mag += std::abs(g);
        CHECK(pred_mag > 0.0);
        CHECK(feat_mag > 0.0);
    }

    TEST_CASE("config errors: too few tasks, C0 not divisible by 4") {
        ParamStore ps;
        Rng rng(13);
        PrelimStage stage;
        CHECK_THROWS_AS(stage.init(ps, {two_tasks()[0]}, 6, 5, 8, rng), ConfigError);
        ParamStore ps2;
        PrelimStage stage2;
        CHECK_THROWS_AS(stage2.init(ps2, two_tasks(), 6, 5, 10, rng), ConfigError);
    }
}
