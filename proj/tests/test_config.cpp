#include <doctest.h>

#include "invpt/config.hpp"

using namespace invpt;

TEST_SUITE("config") {
    TEST_CASE("defaults validate and survive a round trip") {
        auto cfg = RunConfig::defaults();
        cfg.validate();
        auto j1 = cfg.to_json();
        auto again = RunConfig::from_json(j1);
        CHECK(again.to_json().dump() == j1.dump());
    }

    TEST_CASE("schema version is mandatory") {
        auto j = RunConfig::defaults().to_json();
        j.erase("schema_version");
        CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
        j["schema_version"] = 2;
        CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
    }

    TEST_CASE("unknown keys are rejected at every level") {
        auto j = RunConfig::defaults().to_json();
        j["mystery"] = 1;
        CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
        j = RunConfig::defaults().to_json();
        j["decoder"]["window"] = 7;
        CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
        j = RunConfig::defaults().to_json();
        j["tasks"][0]["colour"] = "red";
        CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
    }

    TEST_CASE("cross-field constraints are validated at load") {
        auto j = RunConfig::defaults().to_json();
        j["prelim"]["c0"] = 30;  // not divisible by 4
        CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);

        j = RunConfig::defaults().to_json();
        j["data"]["image_h"] = 24;  // H0 = 6, not divisible by 4
        CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);

        j = RunConfig::defaults().to_json();
        j["data"]["classes"] = 3;  // mismatch with the semseg task
        CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);

        j = RunConfig::defaults().to_json();
        j["decoder"]["retention"] = 0.0;
        CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
    }

    TEST_CASE("dotted overrides reach nested keys and array entries") {
        auto j = RunConfig::defaults().to_json();
        nlohmann::json doc = nlohmann::json::parse(j.dump());
        apply_override(doc, "decoder.retention=0.25");
        apply_override(doc, "train.iters=55");
        apply_override(doc, "tasks.0.loss_weight=2.5");
        apply_override(doc, "decoder.variant=fusion");
        auto cfg = RunConfig::from_json(doc);
        CHECK(cfg.model.decoder.retention == 0.25);
        CHECK(cfg.train.iters == 55);
        CHECK(cfg.model.tasks[0].loss_weight == 2.5);
        CHECK(cfg.model.decoder.variant == AttentionVariant::Fusion);
    }

    TEST_CASE("bad override paths are config errors") {
        auto doc = nlohmann::json::parse(RunConfig::defaults().to_json().dump());
        CHECK_THROWS_AS(apply_override(doc, "tasks.9.loss_weight=2"), ConfigError);
        CHECK_THROWS_AS(apply_override(doc, "no-equals-sign"), ConfigError);
    }

    TEST_CASE("seed propagates into the training settings") {
        auto j = RunConfig::defaults().to_json();
        j["seed"] = 12345;
        auto cfg = RunConfig::from_json(j);
        CHECK(cfg.train.seed == 12345);
    }
}
