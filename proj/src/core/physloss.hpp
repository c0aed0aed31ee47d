#pragma once

#include <vector>

#include "graph.hpp"
#include "vae.hpp"

namespace pv {

// Physics-driven loss terms computed on low-resolution latent maps assembled
// from one stratified batch, and the multiplicative coupling with the VAE
// loss. SL1 penalizes latent-map edge length; SL2 penalizes Fourier mass
// outside a central low-frequency window.

enum class PhysKind { None, SL1, SL2 };
enum class DenoiseMode { Fixed, AutoStd };
enum class PhysSign { Minimize, Maximize };
enum class Sl1Reduction { Mean, Sum };

struct PhysicsLossConfig {
  PhysKind kind = PhysKind::None;
  double w = 0.1;  // slack, in [0, 0.5]
  DenoiseMode denoise = DenoiseMode::Fixed;
  double denoise_value = 0.1;  // range sigma when denoise == Fixed; 0 skips
  double central_fx = 0.125;   // fractional half-widths of the SL2 window
  double central_fy = 0.125;
  std::vector<int> map_mask = {0, 1};  // content-latent indices entering Psi
  PhysSign sign = PhysSign::Minimize;
  Sl1Reduction sl1_reduction = Sl1Reduction::Mean;

  void validate(int n_content) const;
};

// One b_h x b_w map per content-latent dimension; entry (u, v) is the
// posterior mean of the patch sampled from block (u, v).
struct BatchMap {
  std::vector<NodePtr> maps;
  std::size_t b_h = 0, b_w = 0;
};

// mu is the (B x latent_dim) posterior-mean node of one stratified batch in
// row-major block order; gradients flow back into the encoder through it.
BatchMap assemble_batch_map(const NodePtr& mu, const LatentLayout& layout,
                            std::size_t b_h, std::size_t b_w);

// Map statistics frozen at the current values. The losses differentiate the
// map with these held fixed (they are gradient-detached in production); tests
// reuse a precomputed PhysAux so finite differences see the same function the
// analytic gradient describes.
struct PhysAux {
  struct MapAux {
    bool flat = false;  // detached range < 1e-8: map contributes exactly zero
    double lo = 0.0, inv_range = 1.0;
    double range_sigma = 0.0;  // resolved denoise sigma; <= 0 skips bilateral
    Array guide;               // normalized map values, bilateral weight guide
  };
  std::vector<MapAux> maps;  // one per map_mask entry, in mask order
};

PhysAux compute_aux(const BatchMap& bm, const PhysicsLossConfig& cfg);

// (map - min) / (max - min) with detached extrema; all zeros when the
// detached range is below 1e-8.
NodePtr normalize_map(const NodePtr& map);

// Psi terms. The two-argument forms freeze statistics internally; the aux
// overloads evaluate the same expressions against a caller-supplied PhysAux.
NodePtr sl1(const BatchMap& bm, const PhysicsLossConfig& cfg);
NodePtr sl1(const BatchMap& bm, const PhysicsLossConfig& cfg, const PhysAux& aux);
NodePtr sl2(const BatchMap& bm, const PhysicsLossConfig& cfg);
NodePtr sl2(const BatchMap& bm, const PhysicsLossConfig& cfg, const PhysAux& aux);

// vae_loss * (w + Psi), or vae_loss * (w + max(0, 1 - Psi)) when maximizing.
// Gradients flow through both factors.
NodePtr combined_loss(const NodePtr& vae_loss, const NodePtr& psi,
                      const PhysicsLossConfig& cfg);

}  // namespace pv
