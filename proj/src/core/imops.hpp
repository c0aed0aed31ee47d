#pragma once

#include "graph.hpp"

namespace pv {

// Differentiable image operators used inside the physics losses. All inputs
// and outputs are 2D Nodes.

// Edge-preserving smoother. Weights are computed from a gradient-detached
// copy of the map, so the filter acts as a fixed linear smoother for the
// purpose of differentiation; gradients flow through the map values only.
// Reflect padding at borders. map is expected in [0, 1].
NodePtr bilateral_filter(const NodePtr& map, double range_sigma,
                         double spatial_sigma = 1.0, int radius = 2);

// Same smoother, but with the weight guide supplied explicitly instead of
// taken from map's current value. Finite-difference checks use this to keep
// the weights frozen while the map is perturbed, which is exactly what the
// detached-guide semantics differentiates.
NodePtr bilateral_filter_guided(const NodePtr& map, const Array& guide,
                                double range_sigma, double spatial_sigma = 1.0,
                                int radius = 2);

// Non-differentiable twin with identical numerics, for the segmentation
// pipeline.
Array bilateral_filter_array(const Array& map, double range_sigma,
                             double spatial_sigma = 1.0, int radius = 2);

// sqrt(gx^2 + gy^2 + 1e-12) with the 1/16-normalized Scharr kernels and
// reflect padding; a unit step produces magnitude ~1.
NodePtr scharr_magnitude(const NodePtr& map);

const Array& scharr_kernel_x();  // (1/16) * [[3,0,-3],[10,0,-10],[3,0,-3]]
const Array& scharr_kernel_y();

// Centered 2D DFT log-magnitude: log(|F| + 1) with the zero-frequency
// component at (H/2, W/2). Built from matmuls with explicit DFT matrices so
// gradients flow.
NodePtr dft2_logmag(const NodePtr& map);

}  // namespace pv
