#pragma once

#include <string>

#include <json.hpp>

#include "datapipe.hpp"
#include "trainer.hpp"

namespace pv {

// JSON run configuration: one document drives every command. Parsing is
// schema-checked — unknown keys and wrong types are config errors — and every
// field has the documented default, so an empty object is a valid config.

struct DataConfig {
  std::string kind = "two-phase";  // "two-phase" | "multiphase" | "file"
  std::string path;                // input PGM when kind == "file"
  std::size_t side = 256;          // synthetic image side
  std::uint64_t seed = 0;          // generator seed
  TwoPhaseParams two_phase;
  MultiPhaseParams multiphase;
};

struct PatchConfig {
  int side = 16;
  int stride = 2;
};

struct ModelConfig {
  int n_content = 2;
  double k = 0.5;
  std::vector<int> enc_hidden = {128, 128};
  std::vector<int> dec_hidden = {128, 128};
  std::uint64_t init_seed = 0;
};

struct SegmentConfig {
  double denoise = 0.1;
  std::string mode = "binary";  // "binary" | "multi"
  int n_classes = 2;
};

struct RunConfig {
  DataConfig data;
  PatchConfig patch;
  ModelConfig model;
  TrainConfig train;
  PhysicsLossConfig physics;
  SegmentConfig segment;
  std::string output = "out";
};

// Strict parse: every key must be known, every value well-typed and in range.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig parse_run_config_text(const std::string& text, const std::string& origin);

}  // namespace pv
