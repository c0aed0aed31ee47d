#include "physloss.hpp"

#include <algorithm>
#include <cmath>

#include "imops.hpp"

namespace pv {

namespace {

// Scalar zero that still references n, so backward reaches n with an exactly
// zero contribution instead of dropping it from the graph.
NodePtr attached_zero(const NodePtr& n) { return mul_scalar(sum(n), 0.0); }

NodePtr sum_scalars(const std::vector<NodePtr>& terms) {
  NodePtr acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

NodePtr normalize_with(const NodePtr& map, const PhysAux::MapAux& aux) {
  if (aux.flat) return mul_scalar(map, 0.0);
  return mul_scalar(add_scalar(map, -aux.lo), aux.inv_range);
}

void check_mask(const BatchMap& bm, const PhysicsLossConfig& cfg) {
  if (cfg.map_mask.empty())
    fail(ErrKind::Contract, "physics loss: map_mask must select at least one map");
  for (int j : cfg.map_mask)
    if (j < 0 || static_cast<std::size_t>(j) >= bm.maps.size())
      fail(ErrKind::Contract, "physics loss: map_mask index " + std::to_string(j) +
                                  " out of range for " + std::to_string(bm.maps.size()) +
                                  " maps");
}

}  // namespace

void PhysicsLossConfig::validate(int n_content) const {
  if (!(w >= 0.0 && w <= 0.5))
    fail(ErrKind::Config, "physics.w must be in [0, 0.5], got " + std::to_string(w));
  if (denoise == DenoiseMode::Fixed && denoise_value < 0.0)
    fail(ErrKind::Config, "physics.denoise value must be >= 0");
  if (!(central_fx > 0.0 && central_fx < 0.5) || !(central_fy > 0.0 && central_fy < 0.5))
    fail(ErrKind::Config, "physics.central_window fractions must be in (0, 0.5)");
  if (kind != PhysKind::None) {
    if (map_mask.empty())
      fail(ErrKind::Config, "physics.map_mask must be nonempty when a loss is active");
    for (int j : map_mask)
      if (j < 0 || j >= n_content)
        fail(ErrKind::Config, "physics.map_mask index " + std::to_string(j) +
                                  " outside [0, " + std::to_string(n_content) + ")");
  }
}

BatchMap assemble_batch_map(const NodePtr& mu, const LatentLayout& layout,
                            std::size_t b_h, std::size_t b_w) {
  std::size_t d = static_cast<std::size_t>(layout.latent_dim());
  if (mu->value.ndim() != 2 || mu->value.shape[1] != d)
    fail(ErrKind::Shape, "assemble_batch_map: mu must be (B x " + std::to_string(d) +
                             "), got " + Array::shape_str(mu->value.shape));
  if (mu->value.shape[0] != b_h * b_w)
    fail(ErrKind::Contract, "assemble_batch_map: batch size " +
                                std::to_string(mu->value.shape[0]) + " != block grid " +
                                std::to_string(b_h) + "x" + std::to_string(b_w));
  BatchMap bm;
  bm.b_h = b_h;
  bm.b_w = b_w;
  for (int j = 0; j < layout.n_content; ++j) {
    std::size_t c = static_cast<std::size_t>(LatentLayout::n_shift + j);
    bm.maps.push_back(reshape(slice2d(mu, 0, b_h * b_w, c, c + 1), {b_h, b_w}));
  }
  return bm;
}

PhysAux compute_aux(const BatchMap& bm, const PhysicsLossConfig& cfg) {
  check_mask(bm, cfg);
  PhysAux aux;
  for (int j : cfg.map_mask) {
    const Array& v = bm.maps[static_cast<std::size_t>(j)]->value;
    PhysAux::MapAux m;
    auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
    double range = *hi_it - *lo_it;
    if (range < 1e-8) {
      m.flat = true;
      m.guide = Array::zeros(v.shape);
    } else {
      m.lo = *lo_it;
      m.inv_range = 1.0 / range;
      m.guide = Array::zeros(v.shape);
      for (std::size_t i = 0; i < v.size(); ++i)
        m.guide.data[i] = (v.data[i] - m.lo) * m.inv_range;
      if (cfg.denoise == DenoiseMode::Fixed) {
        m.range_sigma = cfg.denoise_value;
      } else {
        double mean = 0.0;
        for (double g : m.guide.data) mean += g;
        mean /= static_cast<double>(m.guide.size());
        double var = 0.0;
        for (double g : m.guide.data) var += (g - mean) * (g - mean);
        m.range_sigma = std::sqrt(var / static_cast<double>(m.guide.size()));
      }
    }
    aux.maps.push_back(std::move(m));
  }
  return aux;
}

NodePtr normalize_map(const NodePtr& map) {
  const Array& v = map->value;
  auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
  double range = *hi_it - *lo_it;
  if (range < 1e-8) return mul_scalar(map, 0.0);
  return mul_scalar(add_scalar(map, -*lo_it), 1.0 / range);
}

NodePtr sl1(const BatchMap& bm, const PhysicsLossConfig& cfg) {
  return sl1(bm, cfg, compute_aux(bm, cfg));
}

NodePtr sl1(const BatchMap& bm, const PhysicsLossConfig& cfg, const PhysAux& aux) {
  if (cfg.kind != PhysKind::SL1) fail(ErrKind::Contract, "sl1: cfg.kind must be SL1");
  check_mask(bm, cfg);
  if (aux.maps.size() != cfg.map_mask.size())
    fail(ErrKind::Contract, "sl1: aux does not match map_mask");
  std::vector<NodePtr> scores;
  for (std::size_t i = 0; i < cfg.map_mask.size(); ++i) {
    const NodePtr& map = bm.maps[static_cast<std::size_t>(cfg.map_mask[i])];
    const PhysAux::MapAux& ma = aux.maps[i];
    if (ma.flat) {
      scores.push_back(attached_zero(map));
      continue;
    }
    NodePtr n = normalize_with(map, ma);
    NodePtr d = ma.range_sigma > 0.0
                    ? bilateral_filter_guided(n, ma.guide, ma.range_sigma)
                    : n;
    NodePtr e = scharr_magnitude(d);
    scores.push_back(cfg.sl1_reduction == Sl1Reduction::Mean ? mean(e) : sum(e));
  }
  return mul_scalar(sum_scalars(scores), 1.0 / static_cast<double>(scores.size()));
}

NodePtr sl2(const BatchMap& bm, const PhysicsLossConfig& cfg) {
  return sl2(bm, cfg, compute_aux(bm, cfg));
}

NodePtr sl2(const BatchMap& bm, const PhysicsLossConfig& cfg, const PhysAux& aux) {
  if (cfg.kind != PhysKind::SL2) fail(ErrKind::Contract, "sl2: cfg.kind must be SL2");
  check_mask(bm, cfg);
  if (aux.maps.size() != cfg.map_mask.size())
    fail(ErrKind::Contract, "sl2: aux does not match map_mask");
  if (bm.b_h < 4 || bm.b_w < 4)
    fail(ErrKind::Contract, "sl2: maps must be at least 4x4, got " +
                                std::to_string(bm.b_h) + "x" + std::to_string(bm.b_w));
  std::size_t H = bm.b_h, W = bm.b_w;
  std::size_t dy = static_cast<std::size_t>(cfg.central_fy * static_cast<double>(H));
  std::size_t dx = static_cast<std::size_t>(cfg.central_fx * static_cast<double>(W));
  std::size_t ch = H / 2, cw = W / 2;

  std::vector<NodePtr> outs, totals;
  for (std::size_t i = 0; i < cfg.map_mask.size(); ++i) {
    const NodePtr& map = bm.maps[static_cast<std::size_t>(cfg.map_mask[i])];
    const PhysAux::MapAux& ma = aux.maps[i];
    if (ma.flat) {
      outs.push_back(attached_zero(map));
      totals.push_back(attached_zero(map));
      continue;
    }
    NodePtr l = dft2_logmag(normalize_with(map, ma));
    NodePtr total = sum(l);
    NodePtr central = sum(slice2d(l, ch - dy, ch + dy + 1, cw - dx, cw + dx + 1));
    outs.push_back(sub(total, central));
    totals.push_back(total);
  }
  NodePtr out_sum = sum_scalars(outs);
  NodePtr total_sum = sum_scalars(totals);
  if (total_sum->value.data[0] < 1e-12) return attached_zero(total_sum);
  return div(out_sum, total_sum);
}

NodePtr combined_loss(const NodePtr& vae_loss, const NodePtr& psi,
                      const PhysicsLossConfig& cfg) {
  if (cfg.kind == PhysKind::None)
    fail(ErrKind::Contract, "combined_loss: physics kind is none");
  if (cfg.sign == PhysSign::Minimize)
    return mul(vae_loss, add_scalar(psi, cfg.w));
  return mul(vae_loss, add_scalar(max0_smooth(rsub_scalar(1.0, psi)), cfg.w));
}

}  // namespace pv
