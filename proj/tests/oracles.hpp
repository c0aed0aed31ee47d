#pragma once

// Independent reference implementations used to freeze expected values.
// These deliberately share no code with the library paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "array.hpp"

namespace oracle {

inline std::size_t reflect(long long i, std::size_t n) {
  long long nn = static_cast<long long>(n);
  if (i < 0) i = -i - 1;
  if (i >= nn) i = 2 * nn - 1 - i;
  return static_cast<std::size_t>(i);
}

// Direct 3x3 cross-correlation with reflect padding.
inline pv::Array conv3x3(const pv::Array& img, const double k[3][3]) {
  std::size_t H = img.shape[0], W = img.shape[1];
  pv::Array out = pv::Array::zeros({H, W});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double acc = 0.0;
      for (int u = -1; u <= 1; ++u)
        for (int v = -1; v <= 1; ++v)
          acc += k[u + 1][v + 1] *
                 img.at(reflect(static_cast<long long>(i) + u, H),
                        reflect(static_cast<long long>(j) + v, W));
      out.at(i, j) = acc;
    }
  return out;
}

inline pv::Array scharr_mag(const pv::Array& img) {
  const double kx[3][3] = {{3.0 / 16, 0, -3.0 / 16},
                           {10.0 / 16, 0, -10.0 / 16},
                           {3.0 / 16, 0, -3.0 / 16}};
  const double ky[3][3] = {{3.0 / 16, 10.0 / 16, 3.0 / 16},
                           {0, 0, 0},
                           {-3.0 / 16, -10.0 / 16, -3.0 / 16}};
  pv::Array gx = conv3x3(img, kx), gy = conv3x3(img, ky);
  pv::Array out = pv::Array::zeros(img.shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = std::sqrt(gx.data[i] * gx.data[i] + gy.data[i] * gy.data[i] + 1e-12);
  return out;
}

// Direct window-sum bilateral filter (reflect padding).
inline pv::Array bilateral(const pv::Array& img, double sigma_r, double sigma_s,
                           int radius) {
  std::size_t H = img.shape[0], W = img.shape[1];
  pv::Array out = pv::Array::zeros({H, W});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double num = 0.0, den = 0.0;
      for (int u = -radius; u <= radius; ++u)
        for (int v = -radius; v <= radius; ++v) {
          double q = img.at(reflect(static_cast<long long>(i) + u, H),
                            reflect(static_cast<long long>(j) + v, W));
          double dv = q - img.at(i, j);
          double w = std::exp(-(u * u + v * v) / (2.0 * sigma_s * sigma_s)) *
                     std::exp(-dv * dv / (2.0 * sigma_r * sigma_r));
          num += w * q;
          den += w;
        }
      out.at(i, j) = num / den;
    }
  return out;
}

// Naive O(N^4) double-sum DFT, fftshifted, log(|F| + 1).
inline pv::Array dft_logmag(const pv::Array& img) {
  std::size_t H = img.shape[0], W = img.shape[1];
  pv::Array out = pv::Array::zeros({H, W});
  for (std::size_t u = 0; u < H; ++u)
    for (std::size_t v = 0; v < W; ++v) {
      double re = 0.0, im = 0.0;
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
          double ang = -2.0 * M_PI * (static_cast<double>(u * r) / H +
                                      static_cast<double>(v * c) / W);
          re += img.at(r, c) * std::cos(ang);
          im += img.at(r, c) * std::sin(ang);
        }
      out.at((u + H / 2) % H, (v + W / 2) % W) = std::log(std::sqrt(re * re + im * im) + 1.0);
    }
  return out;
}

// Exhaustive Otsu: best (n_classes-1)-tuple of the 255 interior bin edges by
// between-class variance over a 256-bin histogram.
inline std::vector<int> otsu_exhaustive(const pv::Array& img, int n_classes) {
  const int bins = 256;
  std::vector<double> hist(bins, 0.0);
  for (double v : img.data) {
    int b = static_cast<int>(v * bins);
    if (b >= bins) b = bins - 1;
    if (b < 0) b = 0;
    hist[static_cast<std::size_t>(b)] += 1.0;
  }
  double total = static_cast<double>(img.size());
  std::vector<double> cw(bins + 1, 0.0), cm(bins + 1, 0.0);
  for (int b = 0; b < bins; ++b) {
    cw[b + 1] = cw[b] + hist[b];
    cm[b + 1] = cm[b] + hist[b] * (b + 0.5);
  }
  auto class_term = [&](int lo, int hi) {  // bins [lo, hi)
    double w = cw[hi] - cw[lo];
    if (w <= 0.0) return 0.0;
    double m = (cm[hi] - cm[lo]) / w;
    return w / total * m * m;
  };
  std::vector<int> best, cur(static_cast<std::size_t>(n_classes) - 1);
  double best_var = -1.0;
  // enumerate ascending tuples of cut points in [1, 255]
  std::function<void(int, int)> rec = [&](int idx, int start) {
    if (idx == n_classes - 1) {
      double var = 0.0;
      int lo = 0;
      for (int i = 0; i < n_classes - 1; ++i) {
        var += class_term(lo, cur[static_cast<std::size_t>(i)]);
        lo = cur[static_cast<std::size_t>(i)];
      }
      var += class_term(lo, bins);
      if (var > best_var + 1e-15) {
        best_var = var;
        best = cur;
      }
      return;
    }
    for (int t = start; t <= bins - (n_classes - 1 - idx); ++t) {
      cur[static_cast<std::size_t>(idx)] = t;
      rec(idx + 1, t + 1);
    }
  };
  rec(0, 1);
  return best;
}

}  // namespace oracle
