#pragma once

#include <string>
#include <vector>

#include "datapipe.hpp"
#include "physloss.hpp"
#include "segmentation.hpp"
#include "vae.hpp"

namespace pv {

// Deterministic training orchestration: stratified spatial batching, KL ramp
// scheduling, Adam, physics-loss wiring, metrics, and exact-resume
// checkpoints.

struct BetaSchedule {
  double beta_start = 0.05;
  double beta_end = 1.0;
  int ramp_epochs = 50;

  // beta(i) = start + (end - start) * min(i / ramp, 1)
  double at(int epoch) const;
  void validate(int total_epochs) const;
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int epochs = 50;
  std::size_t block_h = 16, block_w = 16;
  BetaSchedule schedule;
  PhysicsLossConfig physics;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  int snapshot_every = 0;        // 0 disables snapshots
  double snapshot_denoise = 0.1; // segmentation denoise used for snapshots

  void validate(std::size_t n_patches, int n_content) const;
};

// One batch: patch indices in row-major block order. Physics batches carry
// exactly one patch per block; the leftover batch (if any) trains the VAE
// loss only.
struct Batch {
  std::vector<std::size_t> indices;
  bool physics = true;
};

// Partition the patch grid into block_h x block_w balanced spatial blocks and
// deal one uniformly shuffled patch per block per batch; deterministic in
// (seed, epoch).
std::vector<Batch> stratified_batches(std::size_t grid_h, std::size_t grid_w,
                                      std::size_t block_h, std::size_t block_w,
                                      std::uint64_t seed, int epoch);

struct EpochMetrics {
  int epoch = 0;
  double beta = 0.0;
  double vae_loss = 0.0;   // mean over batches
  double psi = 0.0;        // mean over physics batches (0 when none)
  double total_loss = 0.0; // mean over batches
  double wall_ms = 0.0;
};

struct BatchLog {
  int epoch = 0;
  double vae = 0.0, psi = 0.0, total = 0.0;
  bool physics = false;
};

// Adam moments plus the loop position; everything needed to resume a run
// bit-exactly.
struct TrainerState {
  int next_epoch = 0;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::vector<Array> m, v;  // one pair per parameter, in ParamNodes::all order
};

struct TrainResult {
  ModelParams params;
  TrainerState state;
  std::vector<EpochMetrics> metrics;
  std::vector<BatchLog> batch_log;
};

// Runs cfg.epochs - resume.next_epoch epochs. When run_dir is nonempty a
// checkpoint is rewritten there after every epoch and snapshot PGMs are
// emitted every snapshot_every epochs. A non-finite loss aborts with a
// runtime error naming the last good checkpoint.
TrainResult train(const PatchSet& ps, const ModelParams& init,
                  const TrainConfig& cfg, const std::string& run_dir = "",
                  const TrainerState* resume = nullptr);

// Posterior content means of every patch scattered onto the grid.
LatentField embed(const ModelParams& params, const PatchSet& ps);

// Model weights plus trainer state in one file (model container + trailing
// trainer section).
void checkpoint_save(const std::string& path, const ModelParams& params,
                     const TrainerState& state);
void checkpoint_load(const std::string& path, ModelParams& params,
                     TrainerState& state);

}  // namespace pv
