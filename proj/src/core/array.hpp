#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"

namespace pv {

namespace detail {
// std::allocator whose value-less construct is default-initialization, so
// vector::resize skips the zero-fill. Graph ops allocate multi-megabyte
// outputs that are immediately overwritten; zeroing them first roughly
// doubles the memory traffic of every elementwise operation.
template <class T>
struct uninit_alloc : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = uninit_alloc<U>;
  };
  // Fixed 64-byte alignment keeps SIMD loop peeling (and therefore the exact
  // floating-point result of vectorized transcendentals) independent of where
  // the heap happens to place a buffer, which bit-exact reproducibility needs.
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(64)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(64));
  }
  template <class U>
  void construct(U* p) noexcept(noexcept(::new (static_cast<void*>(p)) U)) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... A>
  void construct(U* p, A&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<A>(args)...);
  }
};
}  // namespace detail

using dvec = std::vector<double, detail::uninit_alloc<double>>;

// Dense real-valued array, row-major. The one value type the whole
// project computes with.
struct Array {
  std::vector<std::size_t> shape;
  dvec data;

  Array() = default;
  Array(std::vector<std::size_t> s, dvec d) : shape(std::move(s)), data(std::move(d)) {
    if (count(shape) != data.size())
      fail(ErrKind::Shape, "Array: shape " + shape_str(shape) + " does not match " +
                               std::to_string(data.size()) + " values");
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
  }

  static Array zeros(std::vector<std::size_t> s) {
    std::size_t n = count(s);
    return Array(std::move(s), dvec(n, 0.0));
  }
  static Array full(std::vector<std::size_t> s, double v) {
    std::size_t n = count(s);
    return Array(std::move(s), dvec(n, v));
  }
  // contents unspecified; every element must be written before being read
  static Array uninit(std::vector<std::size_t> s) {
    Array a;
    std::size_t n = count(s);
    a.shape = std::move(s);
    a.data.resize(n);
    return a;
  }
  static Array scalar(double v) { return Array({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : (fail(ErrKind::Shape, "rows(): not 2D"), 0); }
  std::size_t cols() const { return shape.size() == 2 ? shape[1] : (fail(ErrKind::Shape, "cols(): not 2D"), 0); }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  bool same_shape(const Array& o) const { return shape == o.shape; }
  bool is_scalar() const { return size() == 1; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + ")";
  }
};

inline void require_same_shape(const Array& a, const Array& b, const char* op) {
  if (!a.same_shape(b))
    fail(ErrKind::Shape, std::string(op) + ": shapes " + Array::shape_str(a.shape) +
                             " and " + Array::shape_str(b.shape) + " do not conform");
}

}  // namespace pv
