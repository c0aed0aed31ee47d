#include "graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace pv {

namespace {

#ifdef __GLIBC__
// Graph evaluation allocates and frees many multi-megabyte temporaries. With
// glibc's defaults those go through mmap/munmap, so every step pays the page
// faults again; keeping large blocks on the heap cuts training wall time ~4x.
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

constexpr double kAbsEps = 1e-12;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EVec = Eigen::Map<Eigen::Array<double, Eigen::Dynamic, 1>>;
using ECVec = Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, 1>>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

ECMap as_mat(const Array& a) {
  return ECMap(a.data.data(), static_cast<Eigen::Index>(a.shape[0]),
               static_cast<Eigen::Index>(a.shape[1]));
}
EMap as_mat(Array& a) {
  return EMap(a.data.data(), static_cast<Eigen::Index>(a.shape[0]),
              static_cast<Eigen::Index>(a.shape[1]));
}

NodePtr new_node(std::vector<NodePtr> parents, Array value,
                 std::function<void(Node&)> bwd) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->needs_grad) n->needs_grad = true;
  if (n->needs_grad) n->backward_fn = std::move(bwd);
  return n;
}

void ensure_grad(Node& n) {
  if (!n.grad_ready) {
    n.grad = Array::zeros(n.value.shape);
    n.grad_ready = true;
  }
}

// Elementwise unary helper: y = f(x), dx += df(x, y) * dy.
template <class F, class DF>
NodePtr unary(const NodePtr& a, F f, DF df) {
  Array out = Array::uninit(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(a->value.data[i]);
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa, df](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    for (std::size_t i = 0; i < n.value.size(); ++i)
      pa->grad.data[i] += df(pa->value.data[i], n.value.data[i]) * n.grad.data[i];
  });
}

std::size_t reflect_index(long long i, std::size_t n) {
  // mirror with edge duplication: -1 -> 0, n -> n-1
  long long nn = static_cast<long long>(n);
  if (i < 0) i = -i - 1;
  if (i >= nn) i = 2 * nn - 1 - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

NodePtr constant(Array value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

NodePtr leaf(Array value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->needs_grad = true;
  return n;
}

NodePtr make_op(std::vector<NodePtr> inputs, Array value,
                std::function<void(Node&)> backward_fn) {
  return new_node(std::move(inputs), std::move(value), std::move(backward_fn));
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  require_same_shape(a->value, b->value, "add");
  Array out = Array::uninit(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
  NodePtr pa = a, pb = b;
  return new_node({a, b}, std::move(out), [pa, pb](Node& n) {
    for (const NodePtr& p : {pa, pb}) {
      if (!p->needs_grad) continue;
      ensure_grad(*p);
      for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad.data[i] += n.grad.data[i];
    }
  });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  require_same_shape(a->value, b->value, "sub");
  Array out = Array::uninit(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] - b->value.data[i];
  NodePtr pa = a, pb = b;
  return new_node({a, b}, std::move(out), [pa, pb](Node& n) {
    if (pa->needs_grad) {
      ensure_grad(*pa);
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad.data[i] += n.grad.data[i];
    }
    if (pb->needs_grad) {
      ensure_grad(*pb);
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad.data[i] -= n.grad.data[i];
    }
  });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  require_same_shape(a->value, b->value, "mul");
  Array out = Array::uninit(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] * b->value.data[i];
  NodePtr pa = a, pb = b;
  return new_node({a, b}, std::move(out), [pa, pb](Node& n) {
    if (pa->needs_grad) {
      ensure_grad(*pa);
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        pa->grad.data[i] += pb->value.data[i] * n.grad.data[i];
    }
    if (pb->needs_grad) {
      ensure_grad(*pb);
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        pb->grad.data[i] += pa->value.data[i] * n.grad.data[i];
    }
  });
}

NodePtr div(const NodePtr& a, const NodePtr& b) {
  require_same_shape(a->value, b->value, "div");
  Array out = Array::uninit(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] / b->value.data[i];
  NodePtr pa = a, pb = b;
  return new_node({a, b}, std::move(out), [pa, pb](Node& n) {
    if (pa->needs_grad) {
      ensure_grad(*pa);
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        pa->grad.data[i] += n.grad.data[i] / pb->value.data[i];
    }
    if (pb->needs_grad) {
      ensure_grad(*pb);
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        double bv = pb->value.data[i];
        pb->grad.data[i] -= n.grad.data[i] * pa->value.data[i] / (bv * bv);
      }
    }
  });
}

NodePtr add_scalar(const NodePtr& a, double c) {
  Array out = Array::uninit(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] + c;
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad.data[i] += n.grad.data[i];
  });
}

NodePtr mul_scalar(const NodePtr& a, double c) {
  Array out = Array::uninit(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] * c;
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa, c](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad.data[i] += c * n.grad.data[i];
  });
}

NodePtr rsub_scalar(double c, const NodePtr& a) {
  Array out = Array::uninit(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = c - a->value.data[i];
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad.data[i] -= n.grad.data[i];
  });
}

NodePtr rdiv_scalar(double c, const NodePtr& a) {
  Array out = Array::uninit(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = c / a->value.data[i];
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa, c](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double x = pa->value.data[i];
      pa->grad.data[i] -= n.grad.data[i] * c / (x * x);
    }
  });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 ||
      a->value.shape[1] != b->value.shape[0])
    fail(ErrKind::Shape, "matmul: shapes " + Array::shape_str(a->value.shape) + " and " +
                             Array::shape_str(b->value.shape) + " do not conform");
  Array out = Array::uninit({a->value.shape[0], b->value.shape[1]});
  as_mat(out) = as_mat(a->value) * as_mat(b->value);
  NodePtr pa = a, pb = b;
  return new_node({a, b}, std::move(out), [pa, pb](Node& n) {
    if (pa->needs_grad) {
      ensure_grad(*pa);
      as_mat(pa->grad) += as_mat(n.grad) * as_mat(pb->value).transpose();
    }
    if (pb->needs_grad) {
      ensure_grad(*pb);
      as_mat(pb->grad) += as_mat(pa->value).transpose() * as_mat(n.grad);
    }
  });
}

NodePtr affine(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
  if (x->value.ndim() != 2 || w->value.ndim() != 2 || b->value.ndim() != 2 ||
      x->value.shape[1] != w->value.shape[0] || b->value.shape[0] != 1 ||
      b->value.shape[1] != w->value.shape[1])
    fail(ErrKind::Shape, "affine: shapes " + Array::shape_str(x->value.shape) + ", " +
                             Array::shape_str(w->value.shape) + ", " +
                             Array::shape_str(b->value.shape) + " do not conform");
  std::size_t N = x->value.shape[0], M = w->value.shape[1];
  Array out = Array::uninit({N, M});
  using EVecMap = Eigen::Map<Eigen::VectorXd>;
  using ECVecMap = Eigen::Map<const Eigen::VectorXd>;
  if (M == 1) {
    // vector-shaped operands so Eigen dispatches gemv instead of a degenerate
    // gemm that packs the whole left matrix for a single column
    EVecMap(out.data.data(), static_cast<Eigen::Index>(N)).noalias() =
        as_mat(x->value) * ECVecMap(w->value.data.data(),
                                    static_cast<Eigen::Index>(w->value.shape[0]));
    double b0 = b->value.data[0];
    for (std::size_t i = 0; i < N; ++i) out.data[i] += b0;
  } else {
    as_mat(out).noalias() = as_mat(x->value) * as_mat(w->value);
    EMap(out.data.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(M))
        .rowwise() +=
        Eigen::Map<const Eigen::RowVectorXd>(b->value.data.data(),
                                             static_cast<Eigen::Index>(M));
  }
  NodePtr px = x, pw = w, pb = b;
  return new_node({x, w, b}, std::move(out), [px, pw, pb](Node& n) {
    std::size_t N_ = n.value.shape[0], M_ = n.value.shape[1];
    std::size_t K_ = pw->value.shape[0];
    using EVecMap = Eigen::Map<Eigen::VectorXd>;
    using ECVecMap = Eigen::Map<const Eigen::VectorXd>;
    if (px->needs_grad) {
      ensure_grad(*px);
      if (M_ == 1)  // rank-1 update, evaluated lazily in one pass
        as_mat(px->grad).noalias() +=
            ECVecMap(n.grad.data.data(), static_cast<Eigen::Index>(N_)) *
            ECVecMap(pw->value.data.data(), static_cast<Eigen::Index>(K_)).transpose();
      else
        as_mat(px->grad).noalias() += as_mat(n.grad) * as_mat(pw->value).transpose();
    }
    if (pw->needs_grad) {
      ensure_grad(*pw);
      if (M_ == 1)
        EVecMap(pw->grad.data.data(), static_cast<Eigen::Index>(K_)).noalias() +=
            as_mat(px->value).transpose() *
            ECVecMap(n.grad.data.data(), static_cast<Eigen::Index>(N_));
      else
        as_mat(pw->grad).noalias() += as_mat(px->value).transpose() * as_mat(n.grad);
    }
    if (pb->needs_grad) {
      ensure_grad(*pb);
      for (std::size_t i = 0; i < N_; ++i)
        for (std::size_t j = 0; j < M_; ++j)
          pb->grad.data[j] += n.grad.data[i * M_ + j];
    }
  });
}

NodePtr tanh(const NodePtr& a) {
  // tanh(x) = 1 - 2 / (exp(2x) + 1); phrased through Eigen's vectorized exp,
  // which handles the overflow ends correctly (exp -> 0 or inf gives -1 / +1)
  std::size_t n = a->value.size();
  Array out = Array::uninit(a->value.shape);
  EVec(out.data.data(), static_cast<Eigen::Index>(n)) =
      1.0 - 2.0 / ((2.0 * ECVec(a->value.data.data(), static_cast<Eigen::Index>(n))).exp() + 1.0);
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa](Node& n_) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    auto m = static_cast<Eigen::Index>(n_.value.size());
    EVec(pa->grad.data.data(), m) +=
        (1.0 - ECVec(n_.value.data.data(), m).square()) * ECVec(n_.grad.data.data(), m);
  });
}

NodePtr softplus(const NodePtr& a) {
  return unary(a,
               [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
               [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

NodePtr exp(const NodePtr& a) {
  std::size_t n = a->value.size();
  Array out = Array::uninit(a->value.shape);
  EVec(out.data.data(), static_cast<Eigen::Index>(n)) =
      ECVec(a->value.data.data(), static_cast<Eigen::Index>(n)).exp();
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa](Node& n_) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    auto m = static_cast<Eigen::Index>(n_.value.size());
    EVec(pa->grad.data.data(), m) +=
        ECVec(n_.value.data.data(), m) * ECVec(n_.grad.data.data(), m);
  });
}

NodePtr log(const NodePtr& a) {
  for (double v : a->value.data)
    if (v <= 0.0)
      fail(ErrKind::Domain, "log: non-positive input " + std::to_string(v));
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

NodePtr sqrt(const NodePtr& a) {
  for (double v : a->value.data)
    if (v < 0.0)
      fail(ErrKind::Domain, "sqrt: negative input " + std::to_string(v));
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

NodePtr square(const NodePtr& a) {
  return unary(a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

NodePtr abs_smooth(const NodePtr& a) {
  return unary(a, [](double x) { return std::sqrt(x * x + kAbsEps); },
               [](double x, double y) { return x / y; });
}

NodePtr sum(const NodePtr& a) {
  double s = 0.0;
  for (double v : a->value.data) s += v;
  NodePtr pa = a;
  return new_node({a}, Array::scalar(s), [pa](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    double g = n.grad.data[0];
    for (double& v : pa->grad.data) v += g;
  });
}

NodePtr mean(const NodePtr& a) {
  if (a->value.size() == 0) fail(ErrKind::Shape, "mean: empty array");
  double s = 0.0;
  for (double v : a->value.data) s += v;
  double inv = 1.0 / static_cast<double>(a->value.size());
  NodePtr pa = a;
  return new_node({a}, Array::scalar(s * inv), [pa, inv](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    double g = n.grad.data[0] * inv;
    for (double& v : pa->grad.data) v += g;
  });
}

NodePtr reshape(const NodePtr& a, std::vector<std::size_t> shape) {
  if (Array::count(shape) != a->value.size())
    fail(ErrKind::Shape, "reshape: " + Array::shape_str(a->value.shape) + " to " +
                             Array::shape_str(shape) + " changes element count");
  Array out(shape, a->value.data);
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad.data[i] += n.grad.data[i];
  });
}

NodePtr slice2d(const NodePtr& a, std::size_t r0, std::size_t r1,
                std::size_t c0, std::size_t c1) {
  const Array& v = a->value;
  if (v.ndim() != 2 || r1 > v.shape[0] || c1 > v.shape[1] || r0 >= r1 || c0 >= c1)
    fail(ErrKind::Shape, "slice2d: invalid range on " + Array::shape_str(v.shape));
  Array out = Array::zeros({r1 - r0, c1 - c0});
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) out.at(r - r0, c - c0) = v.at(r, c);
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa, r0, c0](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    for (std::size_t r = 0; r < n.grad.shape[0]; ++r)
      for (std::size_t c = 0; c < n.grad.shape[1]; ++c)
        pa->grad.at(r0 + r, c0 + c) += n.grad.at(r, c);
  });
}

NodePtr concat_rows(const std::vector<NodePtr>& parts) {
  if (parts.empty()) fail(ErrKind::Shape, "concat_rows: no parts");
  std::size_t cols = parts[0]->value.shape.size() == 2 ? parts[0]->value.shape[1] : 0;
  if (cols == 0) fail(ErrKind::Shape, "concat_rows: parts must be 2D");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p->value.ndim() != 2 || p->value.shape[1] != cols)
      fail(ErrKind::Shape, "concat_rows: column mismatch");
    rows += p->value.shape[0];
  }
  Array out = Array::zeros({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + off);
    off += p->value.size();
  }
  std::vector<NodePtr> ps = parts;
  return new_node(ps, std::move(out), [ps](Node& n) {
    std::size_t off = 0;
    for (const auto& p : ps) {
      if (p->needs_grad) {
        ensure_grad(*p);
        for (std::size_t i = 0; i < p->grad.size(); ++i)
          p->grad.data[i] += n.grad.data[off + i];
      }
      off += p->value.size();
    }
  });
}

NodePtr concat_cols(const std::vector<NodePtr>& parts) {
  if (parts.empty()) fail(ErrKind::Shape, "concat_cols: no parts");
  std::size_t rows = parts[0]->value.ndim() == 2 ? parts[0]->value.shape[0] : 0;
  if (rows == 0) fail(ErrKind::Shape, "concat_cols: parts must be 2D");
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p->value.ndim() != 2 || p->value.shape[0] != rows)
      fail(ErrKind::Shape, "concat_cols: row mismatch");
    cols += p->value.shape[1];
  }
  Array out = Array::zeros({rows, cols});
  std::size_t coff = 0;
  for (const auto& p : parts) {
    std::size_t pc = p->value.shape[1];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pc; ++c) out.at(r, coff + c) = p->value.at(r, c);
    coff += pc;
  }
  std::vector<NodePtr> ps = parts;
  return new_node(ps, std::move(out), [ps, rows](Node& n) {
    std::size_t coff = 0;
    for (const auto& p : ps) {
      std::size_t pc = p->value.shape[1];
      if (p->needs_grad) {
        ensure_grad(*p);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < pc; ++c) p->grad.at(r, c) += n.grad.at(r, coff + c);
      }
      coff += pc;
    }
  });
}

NodePtr tile_rows(const NodePtr& a, std::size_t t) {
  const Array& v = a->value;
  if (v.ndim() != 2 || t == 0) fail(ErrKind::Shape, "tile_rows: need 2D input, t >= 1");
  Array out = Array::zeros({v.shape[0] * t, v.shape[1]});
  for (std::size_t i = 0; i < t; ++i)
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + i * v.size());
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa, t](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    std::size_t sz = pa->value.size();
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < sz; ++j) pa->grad.data[j] += n.grad.data[i * sz + j];
  });
}

NodePtr repeat_rows(const NodePtr& a, std::size_t t) {
  const Array& v = a->value;
  if (v.ndim() != 2 || t == 0) fail(ErrKind::Shape, "repeat_rows: need 2D input, t >= 1");
  std::size_t R = v.shape[0], C = v.shape[1];
  Array out = Array::zeros({R * t, C});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < t; ++i)
      std::copy(v.data.begin() + r * C, v.data.begin() + (r + 1) * C,
                out.data.begin() + (r * t + i) * C);
  NodePtr pa = a;
  return new_node({a}, std::move(out), [pa, t](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    std::size_t R = pa->value.shape[0], C = pa->value.shape[1];
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < C; ++c)
          pa->grad.at(r, c) += n.grad.data[(r * t + i) * C + c];
  });
}

NodePtr detach(const NodePtr& a) {
  auto n = std::make_shared<Node>();
  n->value = a->value;
  return n;  // no parents, requires_grad = false
}

NodePtr conv3x3_reflect(const NodePtr& a, const Array& kernel) {
  const Array& v = a->value;
  if (v.ndim() != 2) fail(ErrKind::Shape, "conv3x3_reflect: input must be 2D");
  if (kernel.shape != std::vector<std::size_t>{3, 3})
    fail(ErrKind::Shape, "conv3x3_reflect: kernel must be 3x3");
  if (v.shape[0] < 3 || v.shape[1] < 3)
    fail(ErrKind::Shape, "conv3x3_reflect: input " + Array::shape_str(v.shape) +
                             " smaller than kernel");
  std::size_t H = v.shape[0], W = v.shape[1];
  Array out = Array::zeros({H, W});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double acc = 0.0;
      for (int u = 0; u < 3; ++u)
        for (int w = 0; w < 3; ++w) {
          std::size_t ri = reflect_index(static_cast<long long>(i) + u - 1, H);
          std::size_t rj = reflect_index(static_cast<long long>(j) + w - 1, W);
          acc += kernel.at(u, w) * v.at(ri, rj);
        }
      out.at(i, j) = acc;
    }
  NodePtr pa = a;
  Array k = kernel;
  return new_node({a}, std::move(out), [pa, k](Node& n) {
    if (!pa->needs_grad) return;
    ensure_grad(*pa);
    std::size_t H = pa->value.shape[0], W = pa->value.shape[1];
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double g = n.grad.at(i, j);
        for (int u = 0; u < 3; ++u)
          for (int w = 0; w < 3; ++w) {
            std::size_t ri = reflect_index(static_cast<long long>(i) + u - 1, H);
            std::size_t rj = reflect_index(static_cast<long long>(j) + w - 1, W);
            pa->grad.at(ri, rj) += k.at(u, w) * g;
          }
      }
  });
}

NodePtr neg(const NodePtr& a) { return mul_scalar(a, -1.0); }

NodePtr sigmoid(const NodePtr& a) {
  return mul_scalar(add_scalar(tanh(mul_scalar(a, 0.5)), 1.0), 0.5);
}

NodePtr clamp_smooth(const NodePtr& a, double lo, double hi) {
  if (!(lo < hi)) fail(ErrKind::Config, "clamp_smooth: lo must be < hi");
  // min(x, hi) = 0.5*(x + hi - |x - hi|), max(y, lo) = 0.5*(y + lo + |y - lo|),
  // with the smooth |.| so the clamp stays differentiable.
  NodePtr m = mul_scalar(add(add_scalar(a, hi), neg(abs_smooth(add_scalar(a, -hi)))), 0.5);
  return mul_scalar(add(add_scalar(m, lo), abs_smooth(add_scalar(m, -lo))), 0.5);
}

NodePtr max0_smooth(const NodePtr& a) {
  return mul_scalar(add(a, abs_smooth(a)), 0.5);
}

namespace {

void topo_collect(const NodePtr& n, std::vector<Node*>& order) {
  if (n->topo_mark == 2) return;
  if (n->topo_mark == 1) fail(ErrKind::Contract, "backward: cycle in graph");
  n->topo_mark = 1;
  for (const auto& p : n->parents) topo_collect(p, order);
  n->topo_mark = 2;
  order.push_back(n.get());
}

}  // namespace

void backward(const NodePtr& root) {
  if (!root->value.is_scalar())
    fail(ErrKind::Contract, "backward: root must be scalar, got shape " +
                                Array::shape_str(root->value.shape));
  std::vector<Node*> order;
  {
    // shared_ptr-based DFS; reset marks afterwards so the same node could in
    // principle be checked again (the consumed flag forbids actual reuse).
    std::vector<NodePtr> stack;
    topo_collect(root, order);
    for (Node* n : order) n->topo_mark = 0;
  }
  for (Node* n : order)
    if (n->consumed)
      fail(ErrKind::Contract, "backward: graph already traversed; rebuild it instead");
  for (Node* n : order) {
    n->consumed = true;
    if (n->needs_grad) ensure_grad(*n);
  }
  ensure_grad(*root);
  root->grad.data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->needs_grad) n->backward_fn(*n);
  }
}

GradCheckReport grad_check(const GraphBuilder& f, const std::vector<Array>& inputs,
                           double h, double tol) {
  if (h <= 0.0) fail(ErrKind::Config, "grad_check: h must be positive");
  GradCheckReport rep;
  // analytic pass
  std::vector<NodePtr> leaves;
  leaves.reserve(inputs.size());
  for (const auto& a : inputs) leaves.push_back(leaf(a));
  NodePtr root = f(leaves);
  backward(root);

  auto eval = [&](const std::vector<Array>& xs) {
    std::vector<NodePtr> cs;
    cs.reserve(xs.size());
    for (const auto& a : xs) cs.push_back(constant(a));
    return f(cs)->value.data[0];
  };

  rep.pass = true;
  std::vector<Array> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      double orig = work[k].data[i];
      work[k].data[i] = orig + h;
      double fp = eval(work);
      work[k].data[i] = orig - h;
      double fm = eval(work);
      work[k].data[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = leaves[k]->grad_ready ? leaves[k]->grad.data[i] : 0.0;
      double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    rep.max_rel_err.push_back(worst);
    if (worst > tol) rep.pass = false;
  }
  return rep;
}

}  // namespace pv
