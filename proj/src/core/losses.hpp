#pragma once

#include <vector>

#include "autodiff.hpp"
#include "geometry.hpp"

namespace pprl {

// One side of a reconstruction pair: centroid-relative positions plus
// optional colors.
struct PatchPoints {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;  // empty = no colors

  bool has_colors() const { return !colors.empty(); }
  static PatchPoints from_patch(const PatchSet& set, std::size_t index);
};

// Index of the nearest gt position for each query (ties to lowest index).
std::vector<std::size_t> nearest_indices(const std::vector<Vec3>& queries,
                                         const std::vector<Vec3>& targets);

// Symmetric squared-L2 Chamfer distance: mean over each side of the squared
// distance to the nearest point on the other side.
double chamfer_value(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// Mean squared color error against the geometrically nearest gt point,
// averaged over channels and predicted points.
double color_loss_value(const PatchPoints& pred, const PatchPoints& gt,
                        const std::vector<std::size_t>* nn_cache = nullptr);

// Differentiable Chamfer w.r.t. the predicted patch. `pred` is [k_pd, f]
// (positions in the first three columns); the nearest-neighbor assignment is
// treated as constant at the current iterate. nn_out, when given, receives
// the prediction->gt assignment so the color loss can reuse it.
ad::Tensor chamfer(const ad::Tensor& pred, const PatchPoints& gt,
                   std::vector<std::size_t>* nn_out = nullptr);

// Differentiable color loss w.r.t. the predicted colors (columns 3..5 of
// `pred`). Reuses the prediction->gt assignment when a cache is supplied.
ad::Tensor color_loss(const ad::Tensor& pred, const PatchPoints& gt,
                      const std::vector<std::size_t>* nn_cache = nullptr);

// Mean over patches of chamfer + (color_enabled ? color_loss : 0).
// `predictions` is [n_real, k*f]; ground_truth holds the matching
// Morton-ordered patches.
ad::Tensor aux_loss(const ad::Tensor& predictions,
                    const std::vector<PatchPoints>& ground_truth,
                    bool color_enabled);

}  // namespace pprl
