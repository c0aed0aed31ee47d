#include "datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "binio.hpp"
#include "rng.hpp"

namespace pv {

namespace {

constexpr char kTensorMagic[4] = {'P', 'V', 'T', 'N'};
constexpr std::uint32_t kTensorVersion = 1;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Two superposed sinusoids along rotated axes: a "lattice" texture whose FFT
// carries two orientation-revealing peaks.
double lattice(double r, double c, double freq, double theta) {
  double u = c * std::cos(theta) + r * std::sin(theta);
  double v = -c * std::sin(theta) + r * std::cos(theta);
  return 0.5 + 0.25 * (std::sin(2.0 * M_PI * freq * u) +
                       std::sin(2.0 * M_PI * freq * v));
}

std::pair<std::size_t, std::size_t> grid_dims(std::size_t rows, std::size_t cols,
                                              int s, int stride) {
  if (s < 3 || stride < 1)
    fail(ErrKind::Config, "extract_patches: need patch_side >= 3 and stride >= 1");
  if (rows < static_cast<std::size_t>(s) + stride ||
      cols < static_cast<std::size_t>(s) + stride)
    fail(ErrKind::Config, "extract_patches: image too small for a 2x2 patch grid");
  return {(rows - static_cast<std::size_t>(s)) / static_cast<std::size_t>(stride) + 1,
          (cols - static_cast<std::size_t>(s)) / static_cast<std::size_t>(stride) + 1};
}

// Patch-grid phase mask by majority vote over each patch window.
Array majority_mask(const Array& pixel_mask, int s, int stride, int n_phases) {
  auto [gh, gw] = grid_dims(pixel_mask.shape[0], pixel_mask.shape[1], s, stride);
  Array out = Array::zeros({gh, gw});
  for (std::size_t r = 0; r < gh; ++r)
    for (std::size_t c = 0; c < gw; ++c) {
      std::vector<int> count(static_cast<std::size_t>(n_phases), 0);
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
          count[static_cast<std::size_t>(pixel_mask.at(
              r * static_cast<std::size_t>(stride) + static_cast<std::size_t>(i),
              c * static_cast<std::size_t>(stride) + static_cast<std::size_t>(j)))]++;
      int best = 0;
      for (int p = 1; p < n_phases; ++p)
        if (count[static_cast<std::size_t>(p)] > count[static_cast<std::size_t>(best)])
          best = p;
      out.at(r, c) = static_cast<double>(best);
    }
  return out;
}

void add_noise(Array& img, std::uint64_t seed, double sigma) {
  if (sigma <= 0.0) return;
  std::size_t W = img.shape[1];
  for (std::size_t r = 0; r < img.shape[0]; ++r)
    for (std::size_t c = 0; c < W; ++c)
      img.at(r, c) = clamp01(img.at(r, c) +
                             sigma * key_normal(key4(seed, 0x6e6f697365ULL, r, c)));
}

}  // namespace

PatchSet extract_patches(const Micrograph& m, int patch_side, int stride) {
  if (m.pixels.ndim() != 2)
    fail(ErrKind::Shape, "extract_patches: micrograph must be 2D");
  auto [gh, gw] = grid_dims(m.pixels.shape[0], m.pixels.shape[1], patch_side, stride);
  PatchSet ps;
  ps.grid_h = gh;
  ps.grid_w = gw;
  ps.patch_side = patch_side;
  ps.stride = stride;
  std::size_t s = static_cast<std::size_t>(patch_side);
  for (std::size_t r = 0; r < gh; ++r)
    for (std::size_t c = 0; c < gw; ++c) {
      Array p = Array::zeros({s * s});
      double lo = 1e300, hi = -1e300;
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          double v = m.pixels.at(r * static_cast<std::size_t>(stride) + i,
                                 c * static_cast<std::size_t>(stride) + j);
          p.data[i * s + j] = v;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      if (hi - lo < 1e-8) {
        std::fill(p.data.begin(), p.data.end(), 0.0);
      } else {
        double inv = 1.0 / (hi - lo);
        for (double& v : p.data) v = (v - lo) * inv;
      }
      ps.patches.push_back(std::move(p));
      ps.coords.emplace_back(r, c);
    }
  return ps;
}

SyntheticTruth synth_two_phase(std::uint64_t seed, std::size_t side,
                               const TwoPhaseParams& p) {
  if (side < 128) fail(ErrKind::Config, "synth_two_phase: side must be >= 128");
  // low-order Fourier boundary curve y(x) around the horizontal midline
  RngStream brng(mix_key(seed, 0x626f756e64ULL));
  std::vector<double> amp, phase;
  for (int k = 1; k <= p.boundary_harmonics; ++k) {
    amp.push_back(brng.uniform(0.5, 1.0) * static_cast<double>(side) /
                  (8.0 * static_cast<double>(k)));
    phase.push_back(brng.uniform(0.0, 2.0 * M_PI));
  }
  auto boundary = [&](double x) {
    double y = static_cast<double>(side) / 2.0;
    for (int k = 1; k <= p.boundary_harmonics; ++k)
      y += amp[static_cast<std::size_t>(k - 1)] *
           std::sin(2.0 * M_PI * k * x / static_cast<double>(side) +
                    phase[static_cast<std::size_t>(k - 1)]);
    return y;
  };

  SyntheticTruth truth;
  truth.n_phases = 2;
  truth.pixel_mask = Array::zeros({side, side});
  Array img = Array::zeros({side, side});
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      bool phase_b = static_cast<double>(r) > boundary(static_cast<double>(c));
      truth.pixel_mask.at(r, c) = phase_b ? 1.0 : 0.0;
      img.at(r, c) = phase_b
                         ? lattice(static_cast<double>(r), static_cast<double>(c),
                                   p.freq_b, p.theta_b)
                         : lattice(static_cast<double>(r), static_cast<double>(c),
                                   p.freq_a, p.theta_a);
    }
  add_noise(img, seed, p.noise_sigma);
  truth.micrograph.pixels = std::move(img);
  truth.micrograph.source = "synth_two_phase";
  truth.phase_mask = majority_mask(truth.pixel_mask, p.patch_side, p.stride, 2);
  return truth;
}

SyntheticTruth synth_multiphase(std::uint64_t seed, std::size_t side,
                                const MultiPhaseParams& p) {
  if (side < 128) fail(ErrKind::Config, "synth_multiphase: side must be >= 128");
  if (p.n_phases < 3 || p.n_phases > 4)
    fail(ErrKind::Config, "synth_multiphase: n_phases must be 3 or 4");
  RngStream srng(mix_key(seed, 0x766f726f6eULL));
  // one Voronoi site per phase, kept away from the borders so every region
  // is sizable
  std::vector<std::pair<double, double>> sites;
  for (int i = 0; i < p.n_phases; ++i)
    sites.emplace_back(
        srng.uniform(0.15, 0.85) * static_cast<double>(side),
        srng.uniform(0.15, 0.85) * static_cast<double>(side));

  SyntheticTruth truth;
  truth.n_phases = p.n_phases;
  truth.pixel_mask = Array::zeros({side, side});
  Array img = Array::zeros({side, side});
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      int best = 0;
      double best_d = 1e300;
      for (int i = 0; i < p.n_phases; ++i) {
        double dr = static_cast<double>(r) - sites[static_cast<std::size_t>(i)].second;
        double dc = static_cast<double>(c) - sites[static_cast<std::size_t>(i)].first;
        double d = dr * dr + dc * dc;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      truth.pixel_mask.at(r, c) = static_cast<double>(best);
      double theta = M_PI * static_cast<double>(best) / (2.0 * p.n_phases);
      img.at(r, c) = lattice(static_cast<double>(r), static_cast<double>(c), p.freq,
                             theta);
    }
  add_noise(img, seed, p.noise_sigma);
  truth.micrograph.pixels = std::move(img);
  truth.micrograph.source = "synth_multiphase";
  truth.phase_mask = majority_mask(truth.pixel_mask, p.patch_side, p.stride,
                                   p.n_phases);
  return truth;
}

void write_pgm(const std::string& path, const Array& img, int maxval) {
  if (img.ndim() != 2) fail(ErrKind::Shape, "write_pgm: image must be 2D");
  if (maxval != 255 && maxval != 65535)
    fail(ErrKind::Config, "write_pgm: maxval must be 255 or 65535");
  binio::atomic_write(path, [&](std::ostream& os) {
    os << "P5\n" << img.shape[1] << " " << img.shape[0] << "\n" << maxval << "\n";
    for (double v : img.data) {
      long q = std::lround(clamp01(v) * maxval);
      if (maxval == 255) {
        binio::put_u8(os, static_cast<std::uint8_t>(q));
      } else {
        binio::put_u8(os, static_cast<std::uint8_t>(q >> 8));
        binio::put_u8(os, static_cast<std::uint8_t>(q & 0xff));
      }
    }
  });
}

Array read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrKind::Io, "cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5")
    fail(ErrKind::Format, path + ": bad magic at offset 0 (expected P5)");
  long w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  if (!is || w < 1 || h < 1 || (maxval != 255 && maxval != 65535))
    fail(ErrKind::Format, path + ": bad PGM header");
  is.get();  // single whitespace before the raster
  std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::size_t bytes = maxval == 255 ? n : 2 * n;
  std::vector<unsigned char> raw(bytes);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(is.gcount()) != bytes)
    fail(ErrKind::Format, path + ": truncated raster");
  Array img = Array::zeros({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t i = 0; i < n; ++i) {
    long q = maxval == 255
                 ? raw[i]
                 : (static_cast<long>(raw[2 * i]) << 8) | raw[2 * i + 1];
    img.data[i] = static_cast<double>(q) / maxval;
  }
  return img;
}

void write_tensor(const std::string& path, const Array& a) {
  if (a.ndim() < 1 || a.ndim() > 4)
    fail(ErrKind::Shape, "write_tensor: ndim must be 1..4");
  binio::atomic_write(path, [&](std::ostream& os) {
    os.write(kTensorMagic, 4);
    binio::put_u32(os, kTensorVersion);
    binio::put_u8(os, 0);  // dtype f64
    binio::put_u32(os, static_cast<std::uint32_t>(a.ndim()));
    for (auto e : a.shape) binio::put_u32(os, static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(a.data.data()),
             static_cast<std::streamsize>(a.data.size() * 8));
  });
}

Array read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrKind::Io, "cannot open " + path);
  binio::Reader r(is, path);
  r.expect_magic(kTensorMagic);
  std::uint32_t version = r.u32();
  if (version != kTensorVersion)
    fail(ErrKind::Format, path + ": unsupported tensor version " +
                              std::to_string(version) + " at offset 4");
  std::uint8_t dtype = r.u8();
  if (dtype != 0)
    fail(ErrKind::Format,
         path + ": unknown dtype code " + std::to_string(dtype) + " at offset 8");
  std::uint32_t nd = r.u32();
  if (nd < 1 || nd > 4)
    fail(ErrKind::Format, path + ": implausible ndim " + std::to_string(nd) +
                              " at offset 9");
  std::vector<std::size_t> shape(nd);
  for (auto& e : shape) e = r.u32();
  Array a = Array::zeros(shape);
  r.raw(a.data.data(), a.data.size() * 8);
  return a;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  binio::atomic_write(path, [&](std::ostream& os) {
    for (std::size_t i = 0; i < header.size(); ++i)
      os << (i ? "," : "") << header[i];
    os << "\n";
    char buf[64];
    for (const auto& row : rows) {
      if (row.size() != header.size())
        fail(ErrKind::Contract, "write_csv: row width does not match header");
      for (std::size_t i = 0; i < row.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", row[i]);
        os << (i ? "," : "") << buf;
      }
      os << "\n";
    }
  });
}

}  // namespace pv
