#pragma once

#include <vector>

#include "array.hpp"

namespace pv {

// Non-differentiable phase-map extraction: normalization with a flatness
// guard, bilateral denoising, Otsu / multi-Otsu thresholding, and Chan-Vese
// level-set refinement, applied per latent map.

// Full-grid posterior-mean maps, one per content-latent dimension.
struct LatentField {
  std::vector<Array> maps;
  std::size_t grid_h = 0, grid_w = 0;
};

struct GuardResult {
  bool flat = false;
  Array normalized;  // min-max normalized to [0, 1]; empty when flat
};

// Flat when max - min < 1e-3; callers emit a uniform single-label map then.
GuardResult flatness_guard(const Array& map);

// Threshold over a 256-bin histogram maximizing between-class variance; ties
// broken toward the smallest threshold. Returned as a value in (0, 1): pixels
// with floor(v*256) below the cut bin fall in the lower class.
double otsu(const Array& map);

// Exhaustive (n_classes - 1)-tuple search over the 255 interior bin edges;
// n_classes = 2 returns exactly otsu's threshold.
std::vector<double> multi_otsu(const Array& map, int n_classes);

struct ChanVeseResult {
  Array labels;  // 2D, values 0/1 (foreground = region with phi > 0)
  bool converged = false;
  int iterations = 0;
  std::vector<double> energies;  // one entry per iteration, non-increasing
};

// Two-phase Chan-Vese (length weight mu, unit region weights) minimized by
// gradient descent on the smoothed-Heaviside energy with backtracking line
// search, so the energy is non-increasing by construction. init, when given,
// seeds phi from a binary mask; otherwise a checkerboard sign pattern.
ChanVeseResult chan_vese(const Array& map, double mu = 0.25, double tol = 1e-3,
                         int max_iter = 200, const Array* init = nullptr);

struct MapSegmentation {
  Array labels;  // 2D integer-valued array
  int n_classes = 1;
  bool converged = true;  // Chan-Vese convergence (binary mode only)
};

struct SegmentResult {
  std::vector<MapSegmentation> per_map;
};

// Per map: flatness guard -> bilateral denoise (skipped when denoise == 0) ->
// binary: Otsu pre-labels seeding Chan-Vese; multi: multi-Otsu labels only.
// Labels are canonical: renumbered by ascending region mean.
SegmentResult segment_pipeline(const LatentField& field, double denoise,
                               bool binary, int n_classes = 2);

// Gray levels for PGM export: label l of n classes maps to
// round(255 * l / (n - 1)); {0, 85, 170, 255} at n = 4. n = 1 maps to 0.
Array labels_to_gray(const Array& labels, int n_classes);

}  // namespace pv
