#include "imops.hpp"

#include <cmath>

namespace pv {

namespace {

std::size_t reflect_index(long long i, std::size_t n) {
  long long nn = static_cast<long long>(n);
  if (i < 0) i = -i - 1;
  if (i >= nn) i = 2 * nn - 1 - i;
  return static_cast<std::size_t>(i);
}

// Normalized bilateral weights from a plain-array map. weights[p] holds the
// (2r+1)^2 window weights of pixel p in row-major window order.
std::vector<std::vector<double>> bilateral_weights(const Array& m, double range_sigma,
                                                   double spatial_sigma, int radius) {
  if (range_sigma <= 0.0 || spatial_sigma <= 0.0)
    fail(ErrKind::Config, "bilateral_filter: sigmas must be positive");
  if (radius < 1) fail(ErrKind::Config, "bilateral_filter: radius must be >= 1");
  if (m.ndim() != 2) fail(ErrKind::Shape, "bilateral_filter: map must be 2D");
  std::size_t H = m.shape[0], W = m.shape[1];
  int win = 2 * radius + 1;
  double inv2ss = 1.0 / (2.0 * spatial_sigma * spatial_sigma);
  double inv2sr = 1.0 / (2.0 * range_sigma * range_sigma);
  std::vector<std::vector<double>> weights(H * W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      std::vector<double> w(static_cast<std::size_t>(win) * win);
      double norm = 0.0;
      double center = m.at(i, j);
      for (int u = -radius; u <= radius; ++u)
        for (int v = -radius; v <= radius; ++v) {
          std::size_t ri = reflect_index(static_cast<long long>(i) + u, H);
          std::size_t rj = reflect_index(static_cast<long long>(j) + v, W);
          double dr = m.at(ri, rj) - center;
          double wk = std::exp(-(static_cast<double>(u * u + v * v)) * inv2ss) *
                      std::exp(-dr * dr * inv2sr);
          w[static_cast<std::size_t>((u + radius) * win + (v + radius))] = wk;
          norm += wk;
        }
      for (double& x : w) x /= norm;
      weights[i * W + j] = std::move(w);
    }
  return weights;
}

Array apply_weights(const Array& m, const std::vector<std::vector<double>>& weights,
                    int radius) {
  std::size_t H = m.shape[0], W = m.shape[1];
  int win = 2 * radius + 1;
  Array out = Array::zeros({H, W});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const auto& w = weights[i * W + j];
      double acc = 0.0;
      for (int u = -radius; u <= radius; ++u)
        for (int v = -radius; v <= radius; ++v) {
          std::size_t ri = reflect_index(static_cast<long long>(i) + u, H);
          std::size_t rj = reflect_index(static_cast<long long>(j) + v, W);
          acc += w[static_cast<std::size_t>((u + radius) * win + (v + radius))] *
                 m.at(ri, rj);
        }
      out.at(i, j) = acc;
    }
  return out;
}

}  // namespace

NodePtr bilateral_filter(const NodePtr& map, double range_sigma, double spatial_sigma,
                         int radius) {
  return bilateral_filter_guided(map, map->value, range_sigma, spatial_sigma, radius);
}

NodePtr bilateral_filter_guided(const NodePtr& map, const Array& guide,
                                double range_sigma, double spatial_sigma, int radius) {
  require_same_shape(map->value, guide, "bilateral_filter_guided");
  auto weights = std::make_shared<std::vector<std::vector<double>>>(
      bilateral_weights(guide, range_sigma, spatial_sigma, radius));
  Array out = apply_weights(map->value, *weights, radius);
  NodePtr pm = map;
  return make_op({map}, std::move(out), [pm, weights, radius](Node& n) {
    if (!pm->needs_grad) return;
    // adjoint of the fixed linear smoother: scatter each output grad back
    // through its window weights
    if (!pm->grad_ready) {
      pm->grad = Array::zeros(pm->value.shape);
      pm->grad_ready = true;
    }
    Array& g = pm->grad;
    std::size_t H = pm->value.shape[0], W = pm->value.shape[1];
    int win = 2 * radius + 1;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const auto& w = (*weights)[i * W + j];
        double go = n.grad.at(i, j);
        for (int u = -radius; u <= radius; ++u)
          for (int v = -radius; v <= radius; ++v) {
            std::size_t ri = reflect_index(static_cast<long long>(i) + u, H);
            std::size_t rj = reflect_index(static_cast<long long>(j) + v, W);
            g.at(ri, rj) +=
                w[static_cast<std::size_t>((u + radius) * win + (v + radius))] * go;
          }
      }
  });
}

Array bilateral_filter_array(const Array& map, double range_sigma, double spatial_sigma,
                             int radius) {
  auto weights = bilateral_weights(map, range_sigma, spatial_sigma, radius);
  return apply_weights(map, weights, radius);
}

const Array& scharr_kernel_x() {
  static const Array k({3, 3}, {3.0 / 16, 0.0, -3.0 / 16,    //
                                10.0 / 16, 0.0, -10.0 / 16,  //
                                3.0 / 16, 0.0, -3.0 / 16});
  return k;
}

const Array& scharr_kernel_y() {
  static const Array k({3, 3}, {3.0 / 16, 10.0 / 16, 3.0 / 16,  //
                                0.0, 0.0, 0.0,                  //
                                -3.0 / 16, -10.0 / 16, -3.0 / 16});
  return k;
}

NodePtr scharr_magnitude(const NodePtr& map) {
  NodePtr gx = conv3x3_reflect(map, scharr_kernel_x());
  NodePtr gy = conv3x3_reflect(map, scharr_kernel_y());
  return sqrt(add_scalar(add(square(gx), square(gy)), 1e-12));
}

NodePtr dft2_logmag(const NodePtr& map) {
  const Array& v = map->value;
  if (v.ndim() != 2 || v.shape[0] < 2 || v.shape[1] < 2)
    fail(ErrKind::Shape, "dft2_logmag: map must be 2D with extents >= 2");
  std::size_t H = v.shape[0], W = v.shape[1];

  auto cos_mat = [](std::size_t n) {
    Array m = Array::zeros({n, n});
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        m.at(a, b) = std::cos(2.0 * M_PI * static_cast<double>(a * b) / static_cast<double>(n));
    return m;
  };
  auto sin_mat = [](std::size_t n) {
    Array m = Array::zeros({n, n});
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        m.at(a, b) = std::sin(2.0 * M_PI * static_cast<double>(a * b) / static_cast<double>(n));
    return m;
  };
  // fftshift as a permutation: row u moves to (u + H/2) mod H
  auto shift_mat = [](std::size_t n) {
    Array m = Array::zeros({n, n});
    for (std::size_t u = 0; u < n; ++u) m.at((u + n / 2) % n, u) = 1.0;
    return m;
  };

  NodePtr ch = constant(cos_mat(H)), sh = constant(sin_mat(H));
  NodePtr cwT = constant(cos_mat(W)), swT = constant(sin_mat(W));  // symmetric
  // F[u,v] = sum x[r,c] e^{-2pi i (ur/H + vc/W)}
  NodePtr xc = matmul(map, cwT);  // (X C^T): C symmetric
  NodePtr xs = matmul(map, swT);
  NodePtr re = sub(matmul(ch, xc), matmul(sh, xs));
  NodePtr im = add(matmul(ch, xs), matmul(sh, xc));  // sign flipped; modulus only
  NodePtr modulus = sqrt(add_scalar(add(square(re), square(im)), 1e-12));
  NodePtr ph = constant(shift_mat(H));
  // centered = P_H * M * P_W^T
  Array pw = shift_mat(W);
  Array pwt = Array::zeros({W, W});
  for (std::size_t a = 0; a < W; ++a)
    for (std::size_t b = 0; b < W; ++b) pwt.at(a, b) = pw.at(b, a);
  NodePtr centered = matmul(matmul(ph, modulus), constant(pwt));
  return log(add_scalar(centered, 1.0));
}

}  // namespace pv
