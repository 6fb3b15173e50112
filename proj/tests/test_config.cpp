#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ebp/config.hpp"

using namespace ebp;
using namespace ebp::cfg;

TEST_CASE("empty config text yields all defaults") {
    RunConfig c = config_from_json_text("");
    CHECK(c.schema_version == 1);
    CHECK(c.seed == 1);
    CHECK(c.theta_max == 50.0);
    CHECK(c.model.layers == 6);
    CHECK(c.schedule.lr == 0.02);
    CHECK(c.synthetic.prior_family == "worst_case");
    CHECK(c.estimators.size() == 5);
}

TEST_CASE("range violations name the offending key") {
    try {
        config_from_json_text(R"({"schedule": {"lr": -1}})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("schedule.lr") != std::string::npos);
    }
    CHECK_THROWS_AS(config_from_json_text(R"({"theta_max": 0})"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text(R"({"npmle": {"tol": -0.5}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text(R"({"schedule": {"decay": 1.5}})"), ConfigError);
}

TEST_CASE("unknown keys are rejected at every level") {
    try {
        config_from_json_text(R"({"bogus": 1})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("bogus") != std::string::npos);
    }
    CHECK_THROWS_AS(config_from_json_text(R"({"model": {"depth": 6}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text(R"({"synthetic": {"xyz": 2}})"), ConfigError);
}

TEST_CASE("type mismatches are rejected") {
    CHECK_THROWS_AS(config_from_json_text(R"({"seed": "abc"})"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text(R"({"estimators": 3})"), ConfigError);
}

TEST_CASE("unsupported schema version is rejected") {
    CHECK_THROWS_AS(config_from_json_text(R"({"schema_version": 2})"), ConfigError);
}

TEST_CASE("malformed json is rejected") {
    CHECK_THROWS_AS(config_from_json_text("{nope"), ConfigError);
}

TEST_CASE("parse -> serialize -> parse round-trips") {
    std::string text = R"({
        "seed": 99,
        "theta_max": 25.0,
        "estimators": ["mle", "erm"],
        "model": {"layers": 4, "dmodel": 16, "heads": 2, "attention": "linear-identity", "ff": 32},
        "schedule": {"epochs": 10, "seq_len": 64, "lr": 0.005},
        "synthetic": {"prior_family": "multinomial", "lengths": [64, 128], "batches": 7},
        "certify": {"d": 12, "M": 20.0}
    })";
    RunConfig a = config_from_json_text(text);
    RunConfig b = config_from_json_text(config_to_json(a));
    CHECK(config_to_json(a) == config_to_json(b));
    CHECK(b.seed == 99);
    CHECK(b.model.layers == 4);
    CHECK(b.model.attention == tf::AttentionKind::LinearIdentity);
    CHECK(b.schedule.epochs == 10);
    CHECK(b.synthetic.lengths == std::vector<int>{64, 128});
    CHECK(b.certify.d == 12);
}

TEST_CASE("config file not found") {
    CHECK_THROWS_AS(config_parse("definitely_missing_config.json"), ConfigError);
}

TEST_CASE("derived specs inherit the shared fields") {
    RunConfig c = config_from_json_text(R"({"seed": 7, "theta_max": 12.5, "threads": 3})");
    auto spec = c.to_experiment_spec();
    CHECK(spec.seed == 7);
    CHECK(spec.theta_max == 12.5);
    CHECK(spec.threads == 3);
    CHECK(spec.ctx.theta_max == 12.5);
    auto t = c.to_timing_spec();
    CHECK(t.theta_max == 12.5);
}
