#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "datapipe.hpp"
#include "rng.hpp"
#include "trainer.hpp"

using namespace pv;

namespace {

PatchSet small_patches(std::uint64_t seed = 11) {
  // hand-rolled 32x32 two-texture image: a diagonal boundary between two
  // sinusoidal lattices plus mild noise, enough structure for short runs
  Micrograph m;
  m.pixels = Array::zeros({32, 32});
  RngStream rng(seed);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 32; ++c) {
      double u = static_cast<double>(r), v = static_cast<double>(c);
      double tex = r + c < 32 ? std::sin(2.0 * M_PI * u / 6.0)
                              : std::sin(2.0 * M_PI * (u + v) / 8.0);
      double val = 0.5 + 0.25 * tex + 0.05 * rng.normal();
      m.pixels.at(r, c) = std::min(1.0, std::max(0.0, val));
    }
  return extract_patches(m, 8, 4);
}

ModelParams small_model(std::uint64_t seed = 3) {
  return ModelParams::init(LatentLayout{2, 0.5}, 8, {16, 16}, {16, 16},
                           ReconKind::Bernoulli, seed);
}

TrainConfig small_config(int epochs, std::size_t blocks = 2) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.block_h = cfg.block_w = blocks;
  cfg.schedule.ramp_epochs = epochs;
  cfg.seed = 17;
  return cfg;
}

bool same_arrays(const std::vector<Array>& a, const std::vector<Array>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].shape != b[i].shape || a[i].data != b[i].data) return false;
  return true;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  return same_arrays(a.enc_w, b.enc_w) && same_arrays(a.enc_b, b.enc_b) &&
         same_arrays(a.dec_w, b.dec_w) && same_arrays(a.dec_b, b.dec_b);
}

std::string temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() / (std::string("pv_trainer_") + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("stratified batches on an evenly divisible grid deal one patch per block") {
  auto batches = stratified_batches(4, 4, 2, 2, 9, 0);
  REQUIRE(batches.size() == 4);  // min block size 2*2, no leftover
  std::set<std::size_t> seen;
  for (const Batch& b : batches) {
    CHECK(b.physics);
    REQUIRE(b.indices.size() == 4);
    // one index per quadrant, in row-major block order
    for (std::size_t q = 0; q < 4; ++q) {
      std::size_t idx = b.indices[q];
      std::size_t r = idx / 4, c = idx % 4;
      CHECK((r / 2) * 2 + (c / 2) == q);
      CHECK(seen.insert(idx).second);
    }
  }
  CHECK(seen.size() == 16);
}

TEST_CASE("stratified batches balance uneven grids and collect leftovers") {
  // 5x5 grid, 2x2 blocks: rows {0,1,2} vs {3,4}, same for columns
  auto batches = stratified_batches(5, 5, 2, 2, 1, 0);
  REQUIRE(batches.size() == 5);  // min block size 2*2=4, plus leftover
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(batches[k].physics);
    REQUIRE(batches[k].indices.size() == 4);
    total += 4;
    for (std::size_t idx : batches[k].indices) CHECK(seen.insert(idx).second);
  }
  CHECK_FALSE(batches[4].physics);
  CHECK(batches[4].indices.size() == 9);
  for (std::size_t idx : batches[4].indices) CHECK(seen.insert(idx).second);
  CHECK(seen.size() == 25);
}

TEST_CASE("stratified batches are deterministic in (seed, epoch)") {
  auto a = stratified_batches(7, 6, 3, 2, 42, 5);
  auto b = stratified_batches(7, 6, 3, 2, 42, 5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].indices == b[i].indices);

  auto c = stratified_batches(7, 6, 3, 2, 42, 6);
  bool any_diff = false;
  for (std::size_t i = 0; i < std::min(a.size(), c.size()); ++i)
    if (a[i].indices != c[i].indices) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("stratified batches reject block grids that do not fit") {
  CHECK_THROWS_AS((void)stratified_batches(4, 4, 5, 2, 0, 0), Error);
  CHECK_THROWS_AS((void)stratified_batches(4, 4, 0, 2, 0, 0), Error);
}

TEST_CASE("beta schedule follows the linear ramp with clamping") {
  BetaSchedule s;  // 0.05 -> 1 over 50
  CHECK(s.at(0) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(s.at(25) == doctest::Approx(0.05 + 0.95 * 0.5).epsilon(1e-15));
  CHECK(s.at(50) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.at(80) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_NOTHROW(s.validate(50));
  CHECK_NOTHROW(s.validate(40));  // partial runs may end before the ramp does
  s.ramp_epochs = 0;
  CHECK_THROWS_AS(s.validate(50), Error);
}

TEST_CASE("train config validation rejects bad shapes and rates") {
  TrainConfig cfg = small_config(2);
  CHECK_NOTHROW(cfg.validate(49, 2));
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(49, 2), Error);
  cfg = small_config(2);
  cfg.block_h = 10;
  cfg.block_w = 10;
  CHECK_THROWS_AS(cfg.validate(49, 2), Error);
  cfg = small_config(2);
  cfg.optimizer.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(49, 2), Error);
}

TEST_CASE("without physics every batch total equals the vae loss") {
  PatchSet ps = small_patches();
  TrainResult res = train(ps, small_model(), small_config(2));
  REQUIRE_FALSE(res.batch_log.empty());
  for (const BatchLog& b : res.batch_log) {
    CHECK(b.total == b.vae);
    CHECK(b.psi == 0.0);
  }
  for (const EpochMetrics& m : res.metrics) {
    CHECK(m.total_loss == m.vae_loss);
    CHECK(m.psi == 0.0);
  }
}

TEST_CASE("with sl1 the per-batch ratio equals w + psi on physics batches") {
  PatchSet ps = small_patches();
  TrainConfig cfg = small_config(2, 3);
  cfg.physics.kind = PhysKind::SL1;
  cfg.physics.w = 0.1;
  TrainResult res = train(ps, small_model(), cfg);
  int n_phys = 0, n_plain = 0;
  for (const BatchLog& b : res.batch_log) {
    if (b.physics) {
      ++n_phys;
      CHECK(b.total / b.vae == doctest::Approx(cfg.physics.w + b.psi).epsilon(1e-12));
    } else {
      ++n_plain;
      CHECK(b.total == b.vae);
    }
  }
  CHECK(n_phys > 0);
  CHECK(n_plain > 0);  // the 7x7 grid leaves a leftover batch per epoch
}

TEST_CASE("elbo decreases over the first epochs of a short run") {
  PatchSet ps = small_patches();
  TrainResult res = train(ps, small_model(), small_config(4));
  REQUIRE(res.metrics.size() == 4);
  CHECK(res.metrics.back().vae_loss < res.metrics.front().vae_loss);
}

TEST_CASE("embed of a zero-final-layer encoder is all zeros") {
  PatchSet ps = small_patches();
  ModelParams p = small_model();
  for (double& v : p.enc_w.back().data) v = 0.0;
  for (double& v : p.enc_b.back().data) v = 0.0;
  LatentField f = embed(p, ps);
  REQUIRE(f.maps.size() == 2);
  CHECK(f.grid_h == ps.grid_h);
  CHECK(f.grid_w == ps.grid_w);
  for (const Array& m : f.maps)
    for (double v : m.data) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("embed entries are the per-patch posterior content means") {
  PatchSet ps = small_patches();
  ModelParams p = small_model(7);
  LatentField f = embed(p, ps);
  for (std::size_t i = 0; i < ps.patches.size(); i += 11) {
    LatentCode code = encode(p, ps.patches[i]);
    auto [r, c] = ps.coords[i];
    for (int j = 0; j < 2; ++j)
      CHECK(f.maps[static_cast<std::size_t>(j)].at(r, c) ==
            doctest::Approx(code.mu.data[static_cast<std::size_t>(2 + j)])
                .epsilon(1e-14));
  }
}

TEST_CASE("checkpoint round trip restores weights and trainer state bit-exactly") {
  PatchSet ps = small_patches();
  TrainConfig cfg = small_config(2);
  TrainResult res = train(ps, small_model(), cfg);
  std::string dir = temp_dir("ckpt");
  std::string path = dir + "/model.pvae";
  checkpoint_save(path, res.params, res.state);

  ModelParams p2;
  TrainerState s2;
  checkpoint_load(path, p2, s2);
  CHECK(same_params(res.params, p2));
  CHECK(s2.next_epoch == res.state.next_epoch);
  CHECK(s2.step == res.state.step);
  CHECK(s2.seed == res.state.seed);
  CHECK(same_arrays(s2.m, res.state.m));
  CHECK(same_arrays(s2.v, res.state.v));
}

TEST_CASE("training twice with the same seed is bit-identical") {
  PatchSet ps = small_patches();
  TrainConfig cfg = small_config(3, 3);
  cfg.physics.kind = PhysKind::SL1;
  TrainResult a = train(ps, small_model(), cfg);
  TrainResult b = train(ps, small_model(), cfg);
  CHECK(same_params(a.params, b.params));
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].vae_loss == b.metrics[i].vae_loss);
    CHECK(a.metrics[i].psi == b.metrics[i].psi);
    CHECK(a.metrics[i].total_loss == b.metrics[i].total_loss);
  }
}

TEST_CASE("five epochs plus a five-epoch resume equals ten straight epochs") {
  PatchSet ps = small_patches();
  TrainConfig cfg = small_config(10, 3);
  cfg.physics.kind = PhysKind::SL1;

  TrainResult straight = train(ps, small_model(), cfg);

  TrainConfig half = cfg;
  half.epochs = 5;
  half.schedule.ramp_epochs = 10;  // same beta trajectory as the full run
  std::string dir = temp_dir("resume");
  TrainResult first = train(ps, small_model(), half, dir);
  CHECK(first.state.next_epoch == 5);

  ModelParams mid;
  TrainerState mid_state;
  checkpoint_load(dir + "/checkpoint.pvae", mid, mid_state);
  TrainResult second = train(ps, mid, cfg, "", &mid_state);

  CHECK(same_params(straight.params, second.params));
  REQUIRE(second.metrics.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    const EpochMetrics& a = straight.metrics[5 + i];
    const EpochMetrics& b = second.metrics[i];
    CHECK(a.epoch == b.epoch);
    CHECK(a.beta == b.beta);
    CHECK(a.vae_loss == b.vae_loss);
    CHECK(a.psi == b.psi);
    CHECK(a.total_loss == b.total_loss);
  }
}

TEST_CASE("resume with a mismatched seed is rejected") {
  PatchSet ps = small_patches();
  TrainConfig cfg = small_config(2);
  TrainResult res = train(ps, small_model(), cfg);
  TrainConfig other = cfg;
  other.seed = cfg.seed + 1;
  CHECK_THROWS_AS((void)train(ps, res.params, other, "", &res.state), Error);
}

TEST_CASE("a truncated checkpoint reports a format error") {
  PatchSet ps = small_patches();
  TrainConfig cfg = small_config(1);
  TrainResult res = train(ps, small_model(), cfg);
  std::string dir = temp_dir("trunc");
  std::string path = dir + "/model.pvae";
  checkpoint_save(path, res.params, res.state);

  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  ModelParams p2;
  TrainerState s2;
  try {
    checkpoint_load(path, p2, s2);
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Format);
  }
}

TEST_CASE("a diverging run aborts with a runtime error") {
  PatchSet ps = small_patches();
  TrainConfig cfg = small_config(3);
  cfg.optimizer.learning_rate = 1e200;  // one step throws every weight to +-1e200
  try {
    (void)train(ps, small_model(), cfg);
    FAIL("expected a runtime error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Runtime);
  }
}

TEST_CASE("snapshots and per-epoch checkpoints land in the run directory") {
  PatchSet ps = small_patches();
  TrainConfig cfg = small_config(2);
  cfg.snapshot_every = 1;
  std::string dir = temp_dir("snap");
  (void)train(ps, small_model(), cfg, dir);
  CHECK(std::filesystem::exists(dir + "/checkpoint.pvae"));
  CHECK(std::filesystem::exists(dir + "/snapshot_e0000_z0.pgm"));
  CHECK(std::filesystem::exists(dir + "/snapshot_e0001_z1.pgm"));
}
