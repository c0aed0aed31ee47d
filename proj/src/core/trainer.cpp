#include "trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "binio.hpp"
#include "rng.hpp"

namespace pv {

namespace {

constexpr std::uint64_t kEpsTag = 0x657073696c6fULL;    // reparameterization draws
constexpr std::uint64_t kBatchTag = 0x7368756666ULL;    // per-epoch block shuffles

std::vector<NodePtr> param_leaves(ParamNodes& pn) { return pn.all(); }

void adam_step(std::vector<Array*> params, const std::vector<NodePtr>& leaves,
               TrainerState& st, const OptimizerConfig& opt) {
  st.step += 1;
  double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(st.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Array& w = *params[p];
    Array& m = st.m[p];
    Array& v = st.v[p];
    const Array& g = leaves[p]->grad;
    if (g.size() != w.size())
      fail(ErrKind::Contract, "adam: missing gradient for a parameter");
    for (std::size_t i = 0; i < w.size(); ++i) {
      double gi = g.data[i];
      m.data[i] = opt.beta1 * m.data[i] + (1.0 - opt.beta1) * gi;
      v.data[i] = opt.beta2 * v.data[i] + (1.0 - opt.beta2) * gi * gi;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      w.data[i] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

std::vector<Array*> param_ptrs(ModelParams& p) {
  std::vector<Array*> out;
  for (auto* group : {&p.enc_w, &p.enc_b, &p.dec_w, &p.dec_b})
    for (auto& a : *group) out.push_back(&a);
  return out;
}

void write_snapshot(const std::string& run_dir, int epoch, const ModelParams& params,
                    const PatchSet& ps, double denoise) {
  LatentField field = embed(params, ps);
  SegmentResult seg = segment_pipeline(field, denoise, true);
  char name[64];
  for (std::size_t j = 0; j < seg.per_map.size(); ++j) {
    std::snprintf(name, sizeof name, "snapshot_e%04d_z%zu.pgm", epoch, j);
    Array gray = labels_to_gray(seg.per_map[j].labels, seg.per_map[j].n_classes);
    for (double& v : gray.data) v /= 255.0;
    write_pgm((std::filesystem::path(run_dir) / name).string(), gray);
  }
}

std::vector<unsigned char> encode_state(const TrainerState& st) {
  std::ostringstream os(std::ios::binary);
  binio::put_u32(os, static_cast<std::uint32_t>(st.next_epoch));
  binio::put_u64(os, st.step);
  binio::put_u64(os, st.seed);
  binio::put_u32(os, static_cast<std::uint32_t>(st.m.size()));
  for (const Array& a : st.m) binio::put_array(os, a);
  for (const Array& a : st.v) binio::put_array(os, a);
  std::string s = os.str();
  return {s.begin(), s.end()};
}

TrainerState decode_state(const std::vector<unsigned char>& raw,
                          const std::string& path) {
  std::istringstream is(std::string(raw.begin(), raw.end()), std::ios::binary);
  binio::Reader r(is, path + " (trainer section)");
  TrainerState st;
  st.next_epoch = static_cast<int>(r.u32());
  st.step = r.u64();
  st.seed = r.u64();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) st.m.push_back(binio::get_array(r));
  for (std::uint32_t i = 0; i < n; ++i) st.v.push_back(binio::get_array(r));
  return st;
}

}  // namespace

double BetaSchedule::at(int epoch) const {
  double frac = std::min(static_cast<double>(epoch) / ramp_epochs, 1.0);
  return beta_start + (beta_end - beta_start) * frac;
}

void BetaSchedule::validate(int total_epochs) const {
  if (beta_start < 0.0 || beta_end < 0.0)
    fail(ErrKind::Config, "schedule: beta endpoints must be >= 0");
  if (ramp_epochs < 1)
    fail(ErrKind::Config, "schedule: ramp_epochs must be >= 1");
  // ramp_epochs may exceed total_epochs: a partial run that will be resumed
  // later sees only the start of the ramp
  (void)total_epochs;
}

void TrainConfig::validate(std::size_t n_patches, int n_content) const {
  if (epochs < 1) fail(ErrKind::Config, "train: epochs must be >= 1");
  if (block_h < 1 || block_w < 1 || block_h * block_w > n_patches)
    fail(ErrKind::Config, "train: block grid must be nonempty and fit the patch set");
  schedule.validate(epochs);
  physics.validate(n_content);
  if (optimizer.learning_rate <= 0.0 || optimizer.beta1 <= 0.0 ||
      optimizer.beta2 <= 0.0 || optimizer.eps <= 0.0)
    fail(ErrKind::Config, "train: optimizer rates must be > 0");
  if (snapshot_every < 0) fail(ErrKind::Config, "train: snapshot_every must be >= 0");
}

std::vector<Batch> stratified_batches(std::size_t grid_h, std::size_t grid_w,
                                      std::size_t block_h, std::size_t block_w,
                                      std::uint64_t seed, int epoch) {
  if (block_h < 1 || block_h > grid_h || block_w < 1 || block_w > grid_w)
    fail(ErrKind::Config, "stratified_batches: block grid must fit inside the patch grid");
  // balanced partition: row r belongs to block floor(r * block_h / grid_h),
  // so block extents differ by at most one and no block is empty
  std::vector<std::vector<std::size_t>> members(block_h * block_w);
  for (std::size_t r = 0; r < grid_h; ++r)
    for (std::size_t c = 0; c < grid_w; ++c) {
      std::size_t u = r * block_h / grid_h, v = c * block_w / grid_w;
      members[u * block_w + v].push_back(r * grid_w + c);
    }
  std::size_t min_size = members.front().size();
  for (std::size_t b = 0; b < members.size(); ++b) {
    RngStream rng(key4(seed, kBatchTag, static_cast<std::uint64_t>(epoch), b));
    rng.shuffle(members[b].begin(), members[b].end());
    min_size = std::min(min_size, members[b].size());
  }
  std::vector<Batch> batches;
  for (std::size_t k = 0; k < min_size; ++k) {
    Batch b;
    b.physics = true;
    for (auto& blk : members) b.indices.push_back(blk[k]);
    batches.push_back(std::move(b));
  }
  Batch leftover;
  leftover.physics = false;
  for (auto& blk : members)
    for (std::size_t k = min_size; k < blk.size(); ++k)
      leftover.indices.push_back(blk[k]);
  if (!leftover.indices.empty()) batches.push_back(std::move(leftover));
  return batches;
}

TrainResult train(const PatchSet& ps, const ModelParams& init,
                  const TrainConfig& cfg, const std::string& run_dir,
                  const TrainerState* resume) {
  cfg.validate(ps.patches.size(), init.layout.n_content);
  if (ps.patch_side != init.patch_side)
    fail(ErrKind::Contract, "train: patch set and model disagree on patch side");
  std::size_t D = static_cast<std::size_t>(init.layout.latent_dim());
  std::size_t npix = static_cast<std::size_t>(init.input_dim());

  TrainResult res;
  res.params = init;
  if (resume) {
    res.state = *resume;
    if (res.state.seed != cfg.seed)
      fail(ErrKind::Config, "train: resume state was created with a different seed");
  } else {
    res.state.seed = cfg.seed;
    for (Array* w : param_ptrs(res.params)) {
      res.state.m.push_back(Array::zeros(w->shape));
      res.state.v.push_back(Array::zeros(w->shape));
    }
  }

  std::string ckpt_path;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    ckpt_path = (std::filesystem::path(run_dir) / "checkpoint.pvae").string();
  }
  std::string last_good = resume && !ckpt_path.empty() ? ckpt_path : "";

  for (int epoch = res.state.next_epoch; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double beta = cfg.schedule.at(epoch);
    std::vector<Batch> batches = stratified_batches(
        ps.grid_h, ps.grid_w, cfg.block_h, cfg.block_w, cfg.seed, epoch);

    double sum_vae = 0.0, sum_total = 0.0, sum_psi = 0.0;
    std::size_t n_phys = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      std::size_t B = batch.indices.size();
      Array X = Array::zeros({B, npix});
      for (std::size_t k = 0; k < B; ++k)
        std::copy(ps.patches[batch.indices[k]].data.begin(),
                  ps.patches[batch.indices[k]].data.end(),
                  X.data.begin() + static_cast<std::ptrdiff_t>(k * npix));
      Array eps = Array::zeros({B, D});
      for (std::size_t k = 0; k < B; ++k)
        for (std::size_t d = 0; d < D; ++d)
          eps.at(k, d) = key_normal(key4(
              mix_key(cfg.seed, kEpsTag), static_cast<std::uint64_t>(epoch),
              bi, batch.indices[k] * D + d));

      ParamNodes pn = ParamNodes::leaves(res.params);
      ElboParts parts = elbo_loss(pn, res.params, X, eps, beta);
      NodePtr total = parts.total;
      double psi_val = 0.0;
      bool used_physics = cfg.physics.kind != PhysKind::None && batch.physics;
      if (used_physics) {
        BatchMap bm = assemble_batch_map(parts.code.mu, res.params.layout,
                                         cfg.block_h, cfg.block_w);
        NodePtr psi = cfg.physics.kind == PhysKind::SL1 ? sl1(bm, cfg.physics)
                                                        : sl2(bm, cfg.physics);
        psi_val = psi->value.data[0];
        total = combined_loss(parts.total, psi, cfg.physics);
      }
      double total_val = total->value.data[0];
      double vae_val = parts.total->value.data[0];
      if (!std::isfinite(total_val))
        fail(ErrKind::Runtime,
             "train: non-finite loss at epoch " + std::to_string(epoch) +
                 ", batch " + std::to_string(bi) +
                 (last_good.empty() ? "; no checkpoint written yet"
                                    : "; last good checkpoint: " + last_good));
      backward(total);
      adam_step(param_ptrs(res.params), param_leaves(pn), res.state, cfg.optimizer);

      sum_vae += vae_val;
      sum_total += total_val;
      if (used_physics) {
        sum_psi += psi_val;
        n_phys += 1;
      }
      res.batch_log.push_back({epoch, vae_val, psi_val, total_val, used_physics});
    }

    res.state.next_epoch = epoch + 1;
    EpochMetrics em;
    em.epoch = epoch;
    em.beta = beta;
    em.vae_loss = sum_vae / static_cast<double>(batches.size());
    em.total_loss = sum_total / static_cast<double>(batches.size());
    em.psi = n_phys ? sum_psi / static_cast<double>(n_phys) : 0.0;
    em.wall_ms = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
    res.metrics.push_back(em);

    if (!ckpt_path.empty()) {
      checkpoint_save(ckpt_path, res.params, res.state);
      last_good = ckpt_path;
    }
    if (!run_dir.empty() && cfg.snapshot_every > 0 &&
        (epoch + 1) % cfg.snapshot_every == 0)
      write_snapshot(run_dir, epoch, res.params, ps, cfg.snapshot_denoise);
  }
  return res;
}

LatentField embed(const ModelParams& params, const PatchSet& ps) {
  if (ps.patch_side != params.patch_side)
    fail(ErrKind::Contract, "embed: patch set and model disagree on patch side");
  std::size_t npix = static_cast<std::size_t>(params.input_dim());
  std::size_t n = ps.patches.size();
  LatentField field;
  field.grid_h = ps.grid_h;
  field.grid_w = ps.grid_w;
  for (int j = 0; j < params.layout.n_content; ++j)
    field.maps.push_back(Array::zeros({ps.grid_h, ps.grid_w}));

  ParamNodes pn = ParamNodes::constants(params);
  const std::size_t chunk = 512;
  for (std::size_t base = 0; base < n; base += chunk) {
    std::size_t B = std::min(chunk, n - base);
    Array X = Array::zeros({B, npix});
    for (std::size_t k = 0; k < B; ++k)
      std::copy(ps.patches[base + k].data.begin(), ps.patches[base + k].data.end(),
                X.data.begin() + static_cast<std::ptrdiff_t>(k * npix));
    EncodedBatch code = encode_batch(pn, params, constant(X));
    for (std::size_t k = 0; k < B; ++k) {
      auto [r, c] = ps.coords[base + k];
      for (int j = 0; j < params.layout.n_content; ++j)
        field.maps[static_cast<std::size_t>(j)].at(r, c) = code.mu->value.at(
            k, static_cast<std::size_t>(LatentLayout::n_shift + j));
    }
  }
  return field;
}

void checkpoint_save(const std::string& path, const ModelParams& params,
                     const TrainerState& state) {
  std::vector<unsigned char> extra = encode_state(state);
  save_model(path, params, &extra);
}

void checkpoint_load(const std::string& path, ModelParams& params,
                     TrainerState& state) {
  std::vector<unsigned char> extra;
  params = load_model(path, &extra);
  if (extra.empty())
    fail(ErrKind::Format, path + ": no trainer state section in checkpoint");
  state = decode_state(extra, path);
}

}  // namespace pv
