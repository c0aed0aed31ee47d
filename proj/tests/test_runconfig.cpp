#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "runconfig.hpp"

using namespace pv;
using nlohmann::json;

TEST_CASE("an empty object yields the documented defaults") {
  RunConfig cfg = parse_run_config(json::object());
  CHECK(cfg.data.kind == "two-phase");
  CHECK(cfg.data.side == 256);
  CHECK(cfg.data.seed == 0);
  CHECK(cfg.patch.side == 16);
  CHECK(cfg.patch.stride == 2);
  CHECK(cfg.model.n_content == 2);
  CHECK(cfg.model.k == 0.5);
  CHECK(cfg.model.enc_hidden == std::vector<int>{128, 128});
  CHECK(cfg.train.epochs == 50);
  CHECK(cfg.train.block_h == 16);
  CHECK(cfg.train.schedule.beta_start == 0.05);
  CHECK(cfg.train.schedule.beta_end == 1.0);
  CHECK(cfg.train.optimizer.learning_rate == 1e-3);
  CHECK(cfg.physics.kind == PhysKind::None);
  CHECK(cfg.physics.w == 0.1);
  CHECK(cfg.segment.denoise == 0.1);
  CHECK(cfg.segment.mode == "binary");
  CHECK(cfg.segment.n_classes == 2);
  CHECK(cfg.output == "out");
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS((void)parse_run_config({{"bogus", 1}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"data", {{"bogus", 1}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"patch", {{"bogus", 1}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"model", {{"bogus", 1}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"train", {{"bogus", 1}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"physics", {{"bogus", 1}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"segment", {{"bogus", 1}}}}), Error);
}

TEST_CASE("enumerations parse and reject unknown variants") {
  json j = {{"physics",
             {{"kind", "sl2"}, {"sign", "maximize"}, {"denoise", "auto_std"},
              {"sl1_reduction", "sum"}}}};
  RunConfig cfg = parse_run_config(j);
  CHECK(cfg.physics.kind == PhysKind::SL2);
  CHECK(cfg.physics.sign == PhysSign::Maximize);
  CHECK(cfg.physics.denoise == DenoiseMode::AutoStd);
  CHECK(cfg.physics.sl1_reduction == Sl1Reduction::Sum);

  CHECK_THROWS_AS((void)parse_run_config({{"physics", {{"kind", "sl3"}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"data", {{"kind", "three-phase"}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"segment", {{"mode", "ternary"}}}}), Error);
}

TEST_CASE("type and range violations are config errors") {
  CHECK_THROWS_AS((void)parse_run_config({{"patch", {{"side", "wide"}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"patch", {{"side", 2}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"patch", {{"stride", 0}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"model", {{"k", 0.0}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"model", {{"enc_hidden", json::array()}}}}),
                  Error);
  CHECK_THROWS_AS((void)parse_run_config({{"data", {{"n_phases", 5}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"data", {{"noise_sigma", -0.1}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"segment", {{"n_classes", 1}}}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"output", ""}}), Error);
  CHECK_THROWS_AS((void)parse_run_config({{"train", {{"seed", -3}}}}), Error);
}

TEST_CASE("overrides land in the right fields") {
  json j = {{"data", {{"kind", "multiphase"}, {"seed", 9}, {"n_phases", 4},
                      {"theta_a_deg", 90.0}}},
            {"patch", {{"side", 8}, {"stride", 4}}},
            {"train", {{"epochs", 7}, {"beta_end", 0.5}}},
            {"output", "elsewhere"}};
  RunConfig cfg = parse_run_config(j);
  CHECK(cfg.data.kind == "multiphase");
  CHECK(cfg.data.seed == 9);
  CHECK(cfg.data.multiphase.n_phases == 4);
  CHECK(cfg.data.two_phase.theta_a == doctest::Approx(M_PI / 2).epsilon(1e-12));
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.train.schedule.beta_end == 0.5);
  CHECK(cfg.output == "elsewhere");
  // generator truth masks follow the extraction geometry
  CHECK(cfg.data.two_phase.patch_side == 8);
  CHECK(cfg.data.two_phase.stride == 4);
  CHECK(cfg.data.multiphase.patch_side == 8);
  CHECK(cfg.data.multiphase.stride == 4);
}

TEST_CASE("data.kind file requires a path") {
  CHECK_THROWS_AS((void)parse_run_config({{"data", {{"kind", "file"}}}}), Error);
  RunConfig cfg =
      parse_run_config({{"data", {{"kind", "file"}, {"path", "m.pgm"}}}});
  CHECK(cfg.data.path == "m.pgm");
}

TEST_CASE("invalid JSON text is a config error naming the origin") {
  try {
    (void)parse_run_config_text("{not json", "c.json");
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Config);
    CHECK(std::string(e.what()).find("c.json") != std::string::npos);
  }
}
