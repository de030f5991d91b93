#include <doctest.h>

#include <cmath>
#include <sstream>

#include "invpt/train.hpp"

using namespace invpt;
namespace tr = invpt::train;

namespace {

ModelConfig tiny_model_cfg() {
    ModelConfig cfg;
    cfg.encoder.patch = 4;
    cfg.encoder.depth = 4;
    cfg.encoder.width = 8;
    cfg.encoder.heads = 2;
    cfg.encoder.image_h = 16;
    cfg.encoder.image_w = 16;
    cfg.tasks = {
        {"semseg", TaskKind::Categorical, 4, 1, 1.0, "miou", false},
        {"depth", TaskKind::Continuous, 2, 1, 1.0, "rmse", true},
        {"boundary", TaskKind::Categorical, 2, 1, 1.0, "boundary_f1", false},
    };
    cfg.c_p = 8;
    cfg.c0 = 8;
    cfg.decoder.stages = 3;
    cfg.decoder.heads = 1;
    return cfg;
}

std::vector<data::Sample> tiny_dataset(std::int64_t count) {
    data::SceneConfig scene;
    scene.image_h = 16;
    scene.image_w = 16;
    scene.classes = 4;
    scene.shapes_per_scene = 2;
    std::vector<data::Sample> out;
    for (std::int64_t i = 0; i < count; ++i) out.push_back(data::gen_sample(3, i, scene));
    return out;
}

}  // namespace

TEST_SUITE("train") {
    TEST_CASE("continuous loss is zero when prediction equals the label") {
        auto pred = Tensor::from({1, 2, 2}, {0.9, 0.8, 1.0, 0.7});
        CHECK(tr::l1_loss(pred, pred)->item() == doctest::Approx(0.0));
    }

    TEST_CASE("two-class zero logits give ln 2 per pixel") {
        auto logits = Tensor::zeros({2, 2, 2});
        std::vector<std::int64_t> labels{0, 1, 0, 1};
        CHECK(tr::cross_entropy_loss(logits, labels)->item() ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    TEST_CASE("all-ignored labels give zero loss and zero gradient") {
        auto logits = Tensor::zeros({2, 2, 2}, true);
        for (auto& v : logits->data) v = 0.3;
        std::vector<std::int64_t> labels(4, tr::kIgnoreId);
        auto loss = tr::cross_entropy_loss(logits, labels);
        CHECK(loss->item() == 0.0);
        CHECK_FALSE(loss->requires_grad);
    }

    TEST_CASE("ignored pixels contribute exactly zero gradient") {
        auto logits = Tensor::zeros({2, 1, 2}, true);
        logits->data = {0.4, -0.2, 0.1, 0.9};
        std::vector<std::int64_t> labels{0, tr::kIgnoreId};
        backward(tr::cross_entropy_loss(logits, labels));
        // pixel 1 (second column) must have zero grad in both channels
        CHECK(logits->grad[1] == 0.0);
        CHECK(logits->grad[3] == 0.0);
        CHECK(logits->grad[0] != 0.0);
    }

    TEST_CASE("out-of-range label ids are data errors") {
        auto logits = Tensor::zeros({2, 1, 1});
        CHECK_THROWS_AS(tr::cross_entropy_loss(logits, {7}), DataError);
    }

    TEST_CASE("adam: zero grad and zero decay leave params unchanged") {
        auto p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
        p->ensure_grad();
        tr::AdamConfig cfg;
        cfg.weight_decay = 0.0;
        tr::Adam opt({p}, cfg);
        const auto before = p->data;
        opt.step(0);
        CHECK(p->data == before);
    }

    TEST_CASE("adam first step moves by about lr against the gradient sign") {
        auto p = Tensor::from({2}, {0.0, 0.0}, true);
        p->ensure_grad();
        p->grad = {0.3, -1.7};
        tr::AdamConfig cfg;
        cfg.lr = 1e-3;
        cfg.weight_decay = 0.0;
        cfg.max_iters = 10;
        tr::Adam opt({p}, cfg);
        opt.step(0);
        CHECK(p->data[0] == doctest::Approx(-1e-3).epsilon(1e-6));
        CHECK(p->data[1] == doctest::Approx(1e-3).epsilon(1e-6));
    }

    TEST_CASE("polynomial schedule endpoints and monotonicity") {
        tr::AdamConfig cfg;
        cfg.lr = 2e-4;
        cfg.max_iters = 100;
        tr::Adam opt({}, cfg);
        CHECK(opt.lr_at(0) == doctest::Approx(2e-4));
        CHECK(opt.lr_at(100) == doctest::Approx(0.0));
        double prev = opt.lr_at(0);
        for (std::int64_t i = 1; i <= 100; ++i) {
            const double lr = opt.lr_at(i);
            CHECK(lr <= prev + 1e-18);
            prev = lr;
        }
    }

    TEST_CASE("weighted total follows the loss report invariant") {
        MultiTaskModel model;
        auto mcfg = tiny_model_cfg();
        mcfg.tasks[1].loss_weight = 2.5;
        model.init(mcfg, 5);
        tr::TrainSettings settings;
        settings.iters = 2;
        settings.batch = 2;
        settings.seed = 5;
        auto log = tr::train_loop(model, tiny_dataset(4), settings, nullptr);
        for (const auto& rec : log) {
            double want = 0;
            for (std::size_t t = 0; t < mcfg.tasks.size(); ++t)
                want += mcfg.tasks[t].loss_weight *
                        (rec.losses.prelim[t] + rec.losses.final_[t]);
            CHECK(rec.losses.total == doctest::Approx(want).epsilon(1e-12));
        }
    }

    TEST_CASE("training is bitwise deterministic for a fixed seed") {
        auto run = [] {
            MultiTaskModel model;
            model.init(tiny_model_cfg(), 9);
            tr::TrainSettings settings;
            settings.iters = 3;
            settings.batch = 2;
            settings.seed = 9;
            std::ostringstream log;
            tr::train_loop(model, tiny_dataset(6), settings, &log);
            std::vector<std::vector<double>> weights;
            for (const auto& e : model.params().entries()) weights.push_back(e.tensor->data);
            return std::pair{weights, log.str()};
        };
        auto a = run(), b = run();
        CHECK(a.first == b.first);
        CHECK(a.second == b.second);
    }

    TEST_CASE("prelim-only baseline trains without a decoder pass") {
        MultiTaskModel model;
        auto cfg = tiny_model_cfg();
        cfg.decoder.stages = 0;
        model.init(cfg, 11);
        tr::TrainSettings settings;
        settings.iters = 2;
        settings.batch = 1;
        settings.seed = 11;
        auto log = tr::train_loop(model, tiny_dataset(3), settings, nullptr);
        for (const auto& rec : log)
            for (double f : rec.losses.final_) CHECK(f == 0.0);
    }

    TEST_CASE("evaluate returns scores for every task") {
        MultiTaskModel model;
        model.init(tiny_model_cfg(), 13);
        auto scores = tr::evaluate(model, tiny_dataset(3));
        REQUIRE(scores.size() == 3);
        CHECK(scores.at("semseg").has_value());
        CHECK(scores.at("depth").has_value());
        CHECK(scores.at("boundary").has_value());
        CHECK(*scores.at("semseg") >= 0.0);
        CHECK(*scores.at("semseg") <= 1.0);
    }

    TEST_CASE("module-level gradient checks pass at 1e-6") {
        for (const auto& r : tr::gradcheck_suite(tr::GradCheckScope::Modules, 77)) {
            INFO(r.name, " rel err ", r.max_rel_err);
            CHECK(r.max_rel_err < 1e-6);
        }
    }
}
