#include "segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "graph.hpp"
#include "imops.hpp"

namespace pv {

namespace {

constexpr int kBins = 256;
constexpr double kFlatThreshold = 1e-3;
constexpr double kHeavisideEps = 1.0;

int bin_of(double v) {
  int b = static_cast<int>(v * kBins);
  return b < 0 ? 0 : (b >= kBins ? kBins - 1 : b);
}

// Best ascending (k-1)-tuple of interior bin edges by between-class variance;
// ties resolved toward the lexicographically smallest tuple.
std::vector<int> best_cuts(const Array& map, int k) {
  std::vector<double> hist(kBins, 0.0);
  for (double v : map.data) hist[static_cast<std::size_t>(bin_of(v))] += 1.0;
  double total = static_cast<double>(map.size());
  std::vector<double> cw(kBins + 1, 0.0), cm(kBins + 1, 0.0);
  for (int b = 0; b < kBins; ++b) {
    cw[static_cast<std::size_t>(b) + 1] = cw[static_cast<std::size_t>(b)] + hist[static_cast<std::size_t>(b)];
    cm[static_cast<std::size_t>(b) + 1] =
        cm[static_cast<std::size_t>(b)] + hist[static_cast<std::size_t>(b)] * (b + 0.5);
  }
  auto class_term = [&](int lo, int hi) {  // bins [lo, hi)
    double w = cw[static_cast<std::size_t>(hi)] - cw[static_cast<std::size_t>(lo)];
    if (w <= 0.0) return 0.0;
    double m = (cm[static_cast<std::size_t>(hi)] - cm[static_cast<std::size_t>(lo)]) / w;
    return w / total * m * m;
  };
  std::vector<int> best, cur(static_cast<std::size_t>(k) - 1);
  double best_var = -1.0;
  std::function<void(int, int)> rec = [&](int idx, int start) {
    if (idx == k - 1) {
      double var = 0.0;
      int lo = 0;
      for (int i = 0; i < k - 1; ++i) {
        var += class_term(lo, cur[static_cast<std::size_t>(i)]);
        lo = cur[static_cast<std::size_t>(i)];
      }
      var += class_term(lo, kBins);
      if (var > best_var + 1e-15) {
        best_var = var;
        best = cur;
      }
      return;
    }
    for (int t = start; t <= kBins - (k - 1 - idx); ++t) {
      cur[static_cast<std::size_t>(idx)] = t;
      rec(idx + 1, t + 1);
    }
  };
  rec(0, 1);
  return best;
}

Array labels_from_cuts(const Array& map, const std::vector<int>& cuts) {
  Array labels = Array::zeros(map.shape);
  for (std::size_t i = 0; i < map.size(); ++i) {
    int b = bin_of(map.data[i]);
    int l = 0;
    for (int c : cuts) l += b >= c ? 1 : 0;
    labels.data[i] = static_cast<double>(l);
  }
  return labels;
}

// Separable [1/4, 1/2, 1/4] blur with reflect borders. Used to precondition
// the descent direction: its spectrum is positive, so the blurred gradient is
// still a descent direction, but the stiff pixel-frequency components of the
// length term are damped and much larger steps survive the line search.
Array blur3(const Array& g) {
  std::size_t H = g.shape[0], W = g.shape[1];
  const double k[3] = {0.25, 0.5, 0.25};
  auto ref = [](long long i, std::size_t n) {
    if (i < 0) i = -i - 1;
    if (i >= static_cast<long long>(n)) i = 2 * static_cast<long long>(n) - 1 - i;
    return static_cast<std::size_t>(i);
  };
  Array t = Array::zeros(g.shape), o = Array::zeros(g.shape);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      double a = 0.0;
      for (int d = -1; d <= 1; ++d)
        a += k[d + 1] * g.at(r, ref(static_cast<long long>(c) + d, W));
      t.at(r, c) = a;
    }
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      double a = 0.0;
      for (int d = -1; d <= 1; ++d)
        a += k[d + 1] * t.at(ref(static_cast<long long>(r) + d, H), c);
      o.at(r, c) = a;
    }
  return o;
}

// Smoothed two-phase Chan-Vese energy as a graph over phi: anisotropic
// total variation of H(phi) for the length term, the region fit terms, and a
// tiny quadratic tether that bounds phi so the level set settles instead of
// drifting into Heaviside saturation.
NodePtr cv_energy(const NodePtr& phi, const Array& u, double mu, double c1,
                  double c2) {
  std::size_t H = u.shape[0], W = u.shape[1];
  NodePtr h = sigmoid(mul_scalar(phi, 1.0 / kHeavisideEps));
  NodePtr gx = sub(slice2d(h, 0, H, 1, W), slice2d(h, 0, H, 0, W - 1));
  NodePtr gy = sub(slice2d(h, 1, H, 0, W), slice2d(h, 0, H - 1, 0, W));
  NodePtr length = add(sum(abs_smooth(gx)), sum(abs_smooth(gy)));
  Array d1 = Array::zeros(u.shape), d2 = Array::zeros(u.shape);
  for (std::size_t i = 0; i < u.size(); ++i) {
    d1.data[i] = (u.data[i] - c1) * (u.data[i] - c1);
    d2.data[i] = (u.data[i] - c2) * (u.data[i] - c2);
  }
  NodePtr fit = add(sum(mul(h, constant(d1))),
                    sum(mul(rsub_scalar(1.0, h), constant(d2))));
  NodePtr tether = mul_scalar(sum(square(phi)), 1e-4);
  return add(add(mul_scalar(length, mu), fit), tether);
}

void region_means(const Array& phi, const Array& u, double& c1, double& c2) {
  double s1 = 0.0, w1 = 0.0, s2 = 0.0, w2 = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double h = 0.5 * (std::tanh(phi.data[i] / (2.0 * kHeavisideEps)) + 1.0);
    s1 += h * u.data[i];
    w1 += h;
    s2 += (1.0 - h) * u.data[i];
    w2 += 1.0 - h;
  }
  c1 = w1 > 1e-12 ? s1 / w1 : 0.0;
  c2 = w2 > 1e-12 ? s2 / w2 : 0.0;
}

}  // namespace

GuardResult flatness_guard(const Array& map) {
  if (map.ndim() != 2) fail(ErrKind::Shape, "flatness_guard: map must be 2D");
  auto [lo, hi] = std::minmax_element(map.data.begin(), map.data.end());
  GuardResult r;
  if (*hi - *lo < kFlatThreshold) {
    r.flat = true;
    return r;
  }
  r.normalized = Array::zeros(map.shape);
  double inv = 1.0 / (*hi - *lo);
  for (std::size_t i = 0; i < map.size(); ++i)
    r.normalized.data[i] = (map.data[i] - *lo) * inv;
  return r;
}

double otsu(const Array& map) {
  return static_cast<double>(best_cuts(map, 2)[0]) / kBins;
}

std::vector<double> multi_otsu(const Array& map, int n_classes) {
  if (n_classes < 2 || n_classes > 4)
    fail(ErrKind::Config, "multi_otsu: n_classes must be 2, 3 or 4, got " +
                              std::to_string(n_classes));
  std::vector<int> cuts = best_cuts(map, n_classes);
  std::vector<double> out;
  for (int c : cuts) out.push_back(static_cast<double>(c) / kBins);
  return out;
}

ChanVeseResult chan_vese(const Array& map, double mu, double tol, int max_iter,
                         const Array* init) {
  if (map.ndim() != 2 || map.shape[0] < 2 || map.shape[1] < 2)
    fail(ErrKind::Shape, "chan_vese: map must be 2D with extents >= 2");
  if (mu < 0.0 || tol <= 0.0 || max_iter < 1)
    fail(ErrKind::Config, "chan_vese: need mu >= 0, tol > 0, max_iter >= 1");
  std::size_t H = map.shape[0], W = map.shape[1];
  Array phi = Array::zeros({H, W});
  if (init) {
    require_same_shape(*init, map, "chan_vese init");
    for (std::size_t i = 0; i < phi.size(); ++i)
      phi.data[i] = init->data[i] > 0.5 ? 1.0 : -1.0;
  } else {
    // block checkerboard (period 5) plus a small data offset: a perfectly
    // balanced checkerboard leaves the two region means identical, which is a
    // stationary point of the energy, so the offset seeds them apart
    double um = 0.0;
    for (double v : map.data) um += v;
    um /= static_cast<double>(map.size());
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        phi.at(r, c) = ((r / 5 + c / 5) % 2 ? -1.0 : 1.0) + (map.at(r, c) - um);
  }

  ChanVeseResult res;
  double step = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    double c1, c2;
    region_means(phi, map, c1, c2);

    NodePtr leaf_phi = leaf(phi);
    NodePtr e = cv_energy(leaf_phi, map, mu, c1, c2);
    double e0 = e->value.data[0];
    backward(e);
    Array g = blur3(blur3(leaf_phi->grad));

    auto energy_at = [&](const Array& p) {
      return cv_energy(constant(p), map, mu, c1, c2)->value.data[0];
    };
    Array trial = phi;
    double e1 = e0;
    bool accepted = false;
    while (step > 1e-14) {
      for (std::size_t i = 0; i < phi.size(); ++i)
        trial.data[i] = phi.data[i] - step * g.data[i];
      e1 = energy_at(trial);
      if (e1 <= e0) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {  // no descent direction step left: local minimum
      res.energies.push_back(e0);
      res.iterations = it + 1;
      res.converged = true;
      break;
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i)
      delta += std::abs(trial.data[i] - phi.data[i]);
    delta /= static_cast<double>(phi.size());
    phi = trial;
    res.energies.push_back(e1);
    res.iterations = it + 1;
    step = std::min(step * 1.5, 10.0);
    if (delta < tol) {
      res.converged = true;
      break;
    }
  }

  res.labels = Array::zeros({H, W});
  for (std::size_t i = 0; i < phi.size(); ++i)
    res.labels.data[i] = phi.data[i] > 0.0 ? 1.0 : 0.0;
  return res;
}

SegmentResult segment_pipeline(const LatentField& field, double denoise,
                               bool binary, int n_classes) {
  if (denoise < 0.0) fail(ErrKind::Config, "segment: denoise must be >= 0");
  if (!binary && (n_classes < 2 || n_classes > 4))
    fail(ErrKind::Config, "segment: n_classes must be 2, 3 or 4");
  SegmentResult out;
  for (const Array& map : field.maps) {
    if (map.shape != std::vector<std::size_t>{field.grid_h, field.grid_w})
      fail(ErrKind::Shape, "segment: map shape does not match the field grid");
    MapSegmentation seg;
    GuardResult guard = flatness_guard(map);
    if (guard.flat) {
      seg.labels = Array::zeros(map.shape);
      seg.n_classes = 1;
      out.per_map.push_back(std::move(seg));
      continue;
    }
    Array d = denoise > 0.0 ? bilateral_filter_array(guard.normalized, denoise)
                            : guard.normalized;
    Array raw;
    if (binary) {
      Array init = labels_from_cuts(d, best_cuts(d, 2));
      ChanVeseResult cv = chan_vese(d, 0.25, 1e-3, 200, &init);
      raw = cv.labels;
      seg.converged = cv.converged;
    } else {
      raw = labels_from_cuts(d, best_cuts(d, n_classes));
    }
    // canonical labels: renumber the labels that actually occur by ascending
    // region mean of the denoised map
    std::map<int, std::pair<double, double>> stats;  // label -> (sum, count)
    for (std::size_t i = 0; i < raw.size(); ++i) {
      auto& s = stats[static_cast<int>(raw.data[i])];
      s.first += d.data[i];
      s.second += 1.0;
    }
    std::vector<std::pair<double, int>> order;  // (mean, label)
    for (auto& [label, s] : stats) order.emplace_back(s.first / s.second, label);
    std::sort(order.begin(), order.end());
    std::map<int, int> renum;
    for (std::size_t i = 0; i < order.size(); ++i)
      renum[order[i].second] = static_cast<int>(i);
    seg.labels = Array::zeros(raw.shape);
    for (std::size_t i = 0; i < raw.size(); ++i)
      seg.labels.data[i] = renum[static_cast<int>(raw.data[i])];
    seg.n_classes = static_cast<int>(order.size());
    out.per_map.push_back(std::move(seg));
  }
  return out;
}

Array labels_to_gray(const Array& labels, int n_classes) {
  Array g = Array::zeros(labels.shape);
  if (n_classes < 2) return g;
  for (std::size_t i = 0; i < labels.size(); ++i)
    g.data[i] = std::round(255.0 * labels.data[i] / (n_classes - 1));
  return g;
}

}  // namespace pv
