#pragma once

#include <string>
#include <vector>

#include "graph.hpp"

namespace pv {

enum class ReconKind { Bernoulli, Mse };

// Latent layout: two shift dimensions parameterizing a translation of the
// decoder's coordinate grid, plus n_content content dimensions.
struct LatentLayout {
  int n_content = 2;
  double k = 0.5;  // shift scale, 0 < k <= 1
  static constexpr int n_shift = 2;
  int latent_dim() const { return n_shift + n_content; }
};

// MLP encoder (patch -> posterior moments) and coordinate-conditioned MLP
// decoder ((grid point + content latent) -> pixel). Weight layout per layer:
// w is (in x out), b is (1 x out).
struct ModelParams {
  LatentLayout layout;
  int patch_side = 16;
  ReconKind recon = ReconKind::Bernoulli;
  std::vector<int> enc_hidden = {128, 128};
  std::vector<int> dec_hidden = {128, 128};
  std::vector<Array> enc_w, enc_b;
  std::vector<Array> dec_w, dec_b;

  int input_dim() const { return patch_side * patch_side; }
  int enc_out_dim() const { return 2 * layout.latent_dim(); }
  int dec_in_dim() const { return 2 + layout.n_content; }

  static ModelParams init(const LatentLayout& layout, int patch_side,
                          std::vector<int> enc_hidden, std::vector<int> dec_hidden,
                          ReconKind recon, std::uint64_t seed);
};

// Parameters bound into a graph, either as gradient leaves (training) or
// constants (inference).
struct ParamNodes {
  std::vector<NodePtr> enc_w, enc_b, dec_w, dec_b;
  static ParamNodes leaves(const ModelParams& p);
  static ParamNodes constants(const ModelParams& p);
  std::vector<NodePtr> all() const;
};

struct LatentCode {
  Array mu;      // length latent_dim
  Array logvar;  // length latent_dim, clamped to [-10, 10]
};

// Batched posterior moments as graph nodes (B x latent_dim each).
struct EncodedBatch {
  NodePtr mu;
  NodePtr logvar;
};

// X is a (B x s^2) node of patches in [0, 1].
EncodedBatch encode_batch(const ParamNodes& pn, const ModelParams& meta,
                          const NodePtr& X);

// Deterministic single-patch encode (no gradients).
LatentCode encode(const ModelParams& p, const Array& patch);

// z = mu + exp(logvar / 2) * eps, differentiable in mu and logvar.
NodePtr reparameterize(const EncodedBatch& code, const Array& eps);

// z is (B x latent_dim); returns patches as a (B x s^2) node in (0, 1).
NodePtr decode_batch(const ParamNodes& pn, const ModelParams& meta, const NodePtr& z);

// Plain single-latent decode to an s x s patch.
Array decode(const ModelParams& p, const Array& z);

// Evaluate the decoder MLP at arbitrary coordinate rows (N x 2) with a fixed
// content latent (length n_content). This is the raw function the shifted
// grid is fed through; decode(z) equals decode_on_grid(content, G + k*dr).
Array decode_on_grid(const ModelParams& p, const Array& content, const Array& coords);

// Batch-mean KL(q || N(0, I)) from posterior moments (B x latent_dim nodes).
NodePtr gaussian_kl(const NodePtr& mu, const NodePtr& logvar);

struct ElboParts {
  NodePtr total;  // recon + beta * kl (scalar)
  NodePtr recon;  // scalar, batch mean of per-patch sums
  NodePtr kl;     // scalar, batch mean
  EncodedBatch code;
  NodePtr x_hat;  // (B x s^2)
};

// batch is (B x s^2) patch values, eps is (B x latent_dim) standard-normal
// draws supplied by the caller.
ElboParts elbo_loss(const ParamNodes& pn, const ModelParams& meta, const Array& batch,
                    const Array& eps, double beta);

// m x m grid of content latents over [lo, hi]^2 decoded at zero shift and
// tiled into one (m*s) x (m*s) image. Requires n_content == 2.
Array decode_manifold(const ModelParams& p, double lo, double hi, int m);

// Checkpoint file ("PVAE" magic, little-endian). save writes atomically via a
// temp file. The trainer appends its own state section through the extra
// payload; plain model files carry none.
void save_model(const std::string& path, const ModelParams& p,
                const std::vector<unsigned char>* extra = nullptr);
ModelParams load_model(const std::string& path,
                       std::vector<unsigned char>* extra = nullptr);

}  // namespace pv
