#pragma once

#include <string>
#include <vector>

#include "array.hpp"

namespace pv {

// Micrograph I/O, patch extraction with coordinate bookkeeping, synthetic
// ground-truth generators, and the portable tensor container.

struct Micrograph {
  Array pixels;  // 2D, values in [0, 1]
  std::string source;
};

struct PatchSet {
  std::vector<Array> patches;  // flattened s*s arrays in [0, 1]
  std::vector<std::pair<std::size_t, std::size_t>> coords;  // (row, col) grid index
  std::size_t grid_h = 0, grid_w = 0;
  int patch_side = 0;
  int stride = 0;
};

struct SyntheticTruth {
  Micrograph micrograph;
  Array phase_mask;  // patch-grid resolution, integer labels
  Array pixel_mask;  // full resolution, integer labels (test/diagnostic aid)
  int n_phases = 2;
};

// Sliding windows at top-left offsets (i*stride, j*stride), each min-max
// normalized with a flat guard (range < 1e-8 becomes all zeros).
PatchSet extract_patches(const Micrograph& m, int patch_side, int stride);

struct TwoPhaseParams {
  double freq_a = 1.0 / 6.0;   // lattice frequency, cycles per pixel
  double theta_a = 0.0;        // orientation, radians
  double freq_b = 1.0 / 6.0;
  double theta_b = 30.0 * M_PI / 180.0;
  double noise_sigma = 0.05;
  int boundary_harmonics = 3;
  int patch_side = 16;  // for the majority-vote phase mask resolution
  int stride = 2;
};

// Smooth random Fourier boundary splitting two sinusoidal-lattice textures,
// plus Gaussian pixel noise; deterministic in (seed, side, params).
SyntheticTruth synth_two_phase(std::uint64_t seed, std::size_t side,
                               const TwoPhaseParams& p = {});

struct MultiPhaseParams {
  int n_phases = 3;
  double freq = 1.0 / 6.0;
  double noise_sigma = 0.05;
  int patch_side = 16;
  int stride = 2;
};

// Voronoi regions around seeded sites, one lattice orientation per phase.
SyntheticTruth synth_multiphase(std::uint64_t seed, std::size_t side,
                                const MultiPhaseParams& p = {});

// Binary PGM (P5). Values map by round(v * maxval) on write and v / maxval on
// read; maxval must be 255 or 65535 (16-bit samples are big-endian).
void write_pgm(const std::string& path, const Array& img, int maxval = 255);
Array read_pgm(const std::string& path);

// "PVTN" tensor container: magic, version u32, dtype u8 (0 = f64), ndim u32,
// shape u32s, little-endian f64 payload. Round trips are bit-exact.
void write_tensor(const std::string& path, const Array& a);
Array read_tensor(const std::string& path);

// CSV with a header row; all cells numeric, printed with 17 significant
// digits so values round trip exactly.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

}  // namespace pv
