#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "array.hpp"

namespace pv {

// Reverse-mode autodiff over Arrays. A graph is the set of Nodes reachable
// from a root; ops build Nodes eagerly (value computed at construction) and
// attach the exact vector-Jacobian product as a closure. Single-threaded per
// graph; backward runs once per graph.

class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
public:
  Array value;
  Array grad;  // allocated lazily by backward(); same shape as value
  bool requires_grad = false;  // leaf flag
  bool needs_grad = false;     // requires_grad or has an ancestor that does
  std::vector<NodePtr> parents;
  // Accumulates into parents' grads given this node's grad. Null for leaves.
  std::function<void(Node&)> backward_fn;

  // backward() bookkeeping
  bool grad_ready = false;
  bool consumed = false;  // set once the node participated in a backward pass
  int topo_mark = 0;
};

NodePtr constant(Array value);
NodePtr leaf(Array value);  // requires_grad = true

// Extension point for composite operators (bilateral filter): value plus a
// hand-written VJP over the given inputs.
NodePtr make_op(std::vector<NodePtr> inputs, Array value,
                std::function<void(Node&)> backward_fn);

// Elementwise binary (shapes must match exactly; no broadcasting).
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr div(const NodePtr& a, const NodePtr& b);

// Scalar-array ops.
NodePtr add_scalar(const NodePtr& a, double c);
NodePtr mul_scalar(const NodePtr& a, double c);
NodePtr rsub_scalar(double c, const NodePtr& a);  // c - a
NodePtr rdiv_scalar(double c, const NodePtr& a);  // c / a

// 2D matrix product.
NodePtr matmul(const NodePtr& a, const NodePtr& b);

// Fused x (N x K) @ w (K x M) + row-broadcast b (1 x M). One graph node per
// MLP layer instead of three, which matters for the decoder's B*s^2-row
// batches.
NodePtr affine(const NodePtr& x, const NodePtr& w, const NodePtr& b);

// Elementwise unary.
NodePtr tanh(const NodePtr& a);
NodePtr softplus(const NodePtr& a);
NodePtr exp(const NodePtr& a);
NodePtr log(const NodePtr& a);    // domain error on input <= 0
NodePtr sqrt(const NodePtr& a);   // domain error on input < 0
NodePtr square(const NodePtr& a);
NodePtr abs_smooth(const NodePtr& a);  // sqrt(x^2 + 1e-12)

// Full reductions to a scalar (shape {1}).
NodePtr sum(const NodePtr& a);
NodePtr mean(const NodePtr& a);

// Structure ops.
NodePtr reshape(const NodePtr& a, std::vector<std::size_t> shape);
NodePtr slice2d(const NodePtr& a, std::size_t r0, std::size_t r1,
                std::size_t c0, std::size_t c1);  // half-open ranges
NodePtr concat_rows(const std::vector<NodePtr>& parts);
NodePtr concat_cols(const std::vector<NodePtr>& parts);
NodePtr tile_rows(const NodePtr& a, std::size_t t);         // [A; A; ...] t times
NodePtr repeat_rows(const NodePtr& a, std::size_t t);       // each row t times
NodePtr detach(const NodePtr& a);

// 2D cross-correlation with a fixed 3x3 kernel, reflect padding (edge
// mirrored including the edge pixel itself).
NodePtr conv3x3_reflect(const NodePtr& a, const Array& kernel);

// Composites built from the ops above.
NodePtr neg(const NodePtr& a);
NodePtr sigmoid(const NodePtr& a);                       // 0.5*(tanh(x/2)+1)
NodePtr clamp_smooth(const NodePtr& a, double lo, double hi);
NodePtr max0_smooth(const NodePtr& a);                   // smooth max(0, x)

// Populate grads of every needs_grad ancestor of root. root must be scalar;
// a graph may be traversed by backward exactly once.
void backward(const NodePtr& root);

// Finite-difference gradient verification.
struct GradCheckReport {
  std::vector<double> max_rel_err;  // one entry per input
  bool pass = false;
};
using GraphBuilder = std::function<NodePtr(const std::vector<NodePtr>&)>;
GradCheckReport grad_check(const GraphBuilder& f, const std::vector<Array>& inputs,
                           double h, double tol);

}  // namespace pv
