#include "losses.hpp"

namespace pprl {

PatchPoints PatchPoints::from_patch(const PatchSet& set, std::size_t index) {
  require(index < set.patch_count(), ErrorCode::invalid_argument,
          "PatchPoints::from_patch: index out of range");
  PatchPoints out;
  out.positions = set.patches[index];
  if (set.has_colors) out.colors = set.patch_colors[index];
  return out;
}

std::vector<std::size_t> nearest_indices(const std::vector<Vec3>& queries,
                                         const std::vector<Vec3>& targets) {
  require(!targets.empty(), ErrorCode::invalid_argument,
          "nearest_indices: empty target set");
  std::vector<std::size_t> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::size_t best = 0;
    double best_d2 = squared_dist(queries[i], targets[0]);
    for (std::size_t j = 1; j < targets.size(); ++j) {
      const double d2 = squared_dist(queries[i], targets[j]);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = j;
      }
    }
    out[i] = best;
  }
  return out;
}

double chamfer_value(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  require(!a.empty() && !b.empty(), ErrorCode::invalid_argument,
          "chamfer_value: empty point set");
  double sum_ab = 0.0;
  for (const Vec3& p : a) {
    double best = squared_dist(p, b[0]);
    for (std::size_t j = 1; j < b.size(); ++j) {
      best = std::min(best, squared_dist(p, b[j]));
    }
    sum_ab += best;
  }
  double sum_ba = 0.0;
  for (const Vec3& q : b) {
    double best = squared_dist(q, a[0]);
    for (std::size_t j = 1; j < a.size(); ++j) {
      best = std::min(best, squared_dist(q, a[j]));
    }
    sum_ba += best;
  }
  return sum_ab / static_cast<double>(a.size()) +
         sum_ba / static_cast<double>(b.size());
}

double color_loss_value(const PatchPoints& pred, const PatchPoints& gt,
                        const std::vector<std::size_t>* nn_cache) {
  require(pred.has_colors() && gt.has_colors(), ErrorCode::invalid_argument,
          "color_loss_value: both sides need colors");
  std::vector<std::size_t> nn;
  if (!nn_cache) nn = nearest_indices(pred.positions, gt.positions);
  const std::vector<std::size_t>& idx = nn_cache ? *nn_cache : nn;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.positions.size(); ++i) {
    const Vec3& c = pred.colors[i];
    const Vec3& g = gt.colors[idx[i]];
    for (int a = 0; a < 3; ++a) {
      const double d = c[a] - g[a];
      sum += d * d;
    }
  }
  return sum / (3.0 * static_cast<double>(pred.positions.size()));
}

namespace {

std::vector<Vec3> tensor_positions(const ad::Tensor& pred) {
  require(pred.cols() == 3 || pred.cols() == 6, ErrorCode::invalid_argument,
          "predicted patch must have 3 or 6 features per point");
  require(pred.rows() >= 1, ErrorCode::invalid_argument,
          "predicted patch is empty");
  std::vector<Vec3> out(static_cast<std::size_t>(pred.rows()));
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    out[i] = {pred.value()(i, 0), pred.value()(i, 1), pred.value()(i, 2)};
  }
  return out;
}

ad::Mat rows_from(const std::vector<Vec3>& pts,
                  const std::vector<std::size_t>& idx) {
  ad::Mat out(static_cast<Eigen::Index>(idx.size()), 3);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (int a = 0; a < 3; ++a) out(static_cast<Eigen::Index>(i), a) = pts[idx[i]][a];
  }
  return out;
}

}  // namespace

ad::Tensor chamfer(const ad::Tensor& pred, const PatchPoints& gt,
                   std::vector<std::size_t>* nn_out) {
  require(!gt.positions.empty(), ErrorCode::invalid_argument,
          "chamfer: empty ground-truth patch");
  const std::vector<Vec3> pred_pos = tensor_positions(pred);
  const std::vector<std::size_t> nn = nearest_indices(pred_pos, gt.positions);
  const std::vector<std::size_t> mn = nearest_indices(gt.positions, pred_pos);
  if (nn_out) *nn_out = nn;

  ad::Tensor positions = ad::slice_cols(pred, 0, 3);

  // predicted -> gt, assignment held fixed
  ad::Tensor d1 = ad::sub(positions, ad::constant(rows_from(gt.positions, nn)));
  ad::Tensor t1 = ad::mul_scalar(ad::sum_all(ad::mul(d1, d1)),
                                 1.0 / static_cast<double>(pred.rows()));

  // gt -> predicted, pulled back through the gathered rows
  ad::Tensor gathered = ad::gather_rows(positions, mn);
  std::vector<std::size_t> all_gt(gt.positions.size());
  for (std::size_t j = 0; j < all_gt.size(); ++j) all_gt[j] = j;
  ad::Tensor d2 = ad::sub(gathered, ad::constant(rows_from(gt.positions, all_gt)));
  ad::Tensor t2 = ad::mul_scalar(ad::sum_all(ad::mul(d2, d2)),
                                 1.0 / static_cast<double>(gt.positions.size()));
  return ad::add(t1, t2);
}

ad::Tensor color_loss(const ad::Tensor& pred, const PatchPoints& gt,
                      const std::vector<std::size_t>* nn_cache) {
  require(pred.cols() == 6, ErrorCode::invalid_argument,
          "color_loss: predicted patch has no color columns");
  require(gt.has_colors(), ErrorCode::invalid_argument,
          "color_loss: ground truth has no colors");
  std::vector<std::size_t> nn;
  if (!nn_cache) {
    nn = nearest_indices(tensor_positions(pred), gt.positions);
  }
  const std::vector<std::size_t>& idx = nn_cache ? *nn_cache : nn;

  ad::Tensor pred_rgb = ad::slice_cols(pred, 3, 3);
  ad::Tensor diff = ad::sub(pred_rgb, ad::constant(rows_from(gt.colors, idx)));
  return ad::mean_all(ad::mul(diff, diff));
}

ad::Tensor aux_loss(const ad::Tensor& predictions,
                    const std::vector<PatchPoints>& ground_truth,
                    bool color_enabled) {
  require(static_cast<std::size_t>(predictions.rows()) == ground_truth.size(),
          ErrorCode::invalid_argument, "aux_loss: patch count mismatch");
  require(!ground_truth.empty(), ErrorCode::invalid_argument,
          "aux_loss: no patches");
  const Eigen::Index f = color_enabled ? 6 : 3;
  require(predictions.cols() % f == 0, ErrorCode::invalid_argument,
          "aux_loss: prediction width is not a multiple of the feature width");
  const Eigen::Index k = predictions.cols() / f;

  std::vector<ad::Tensor> per_patch;
  per_patch.reserve(ground_truth.size());
  for (Eigen::Index i = 0; i < predictions.rows(); ++i) {
    ad::Tensor patch = ad::reshape(ad::slice_rows(predictions, i, 1), k, f);
    const PatchPoints& gt = ground_truth[static_cast<std::size_t>(i)];
    std::vector<std::size_t> nn;
    ad::Tensor loss = chamfer(patch, gt, &nn);
    if (color_enabled) {
      loss = ad::add(loss, color_loss(patch, gt, &nn));
    }
    per_patch.push_back(std::move(loss));
  }
  return ad::mean_all(ad::concat_rows(per_patch));
}

}  // namespace pprl
