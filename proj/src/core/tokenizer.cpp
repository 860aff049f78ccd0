#include "tokenizer.hpp"

#include <cmath>

namespace pprl {

namespace {

void check_token_dim(Eigen::Index d) {
  require(d > 0 && d % 6 == 0, ErrorCode::config,
          "token dimension must be a positive multiple of 6");
}

ad::Tensor linear(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b) {
  return ad::add_rowvec(ad::matmul(x, w), b);
}

// One sinusoidal axis block of width d/3.
void fill_axis_block(ad::Mat& out, Eigen::Index row, Eigen::Index block_start,
                     Eigen::Index pairs, double coord) {
  for (Eigen::Index j = 0; j < pairs; ++j) {
    const double exponent =
        pairs > 1 ? 4.0 * static_cast<double>(j) / static_cast<double>(pairs - 1)
                  : 0.0;
    const double wavelength = 2.0 * std::pow(10.0, exponent);
    const double angle = 2.0 * M_PI * coord / wavelength;
    out(row, block_start + 2 * j) = std::sin(angle);
    out(row, block_start + 2 * j + 1) = std::cos(angle);
  }
}

}  // namespace

TokenizerParams TokenizerParams::create(const TokenizerConfig& config, Rng& rng) {
  require(config.token_dim >= 1, ErrorCode::config,
          "token dimension must be positive");
  require(config.point_features == 3 || config.point_features == 6,
          ErrorCode::config, "point features must be 3 or 6");
  require(config.pointnet_width >= 1, ErrorCode::config,
          "pointnet width must be positive");

  TokenizerParams p;
  p.config = config;
  const Eigen::Index f = config.point_features;
  const Eigen::Index h = config.pointnet_width;
  const Eigen::Index d = config.token_dim;

  p.w1a = p.set.add_linear_weight("tokenizer.mlp1.0.weight", f, h, rng);
  p.b1a = p.set.add_zeros("tokenizer.mlp1.0.bias", 1, h);
  p.w1b = p.set.add_linear_weight("tokenizer.mlp1.1.weight", h, 2 * h, rng);
  p.b1b = p.set.add_zeros("tokenizer.mlp1.1.bias", 1, 2 * h);
  p.w2a = p.set.add_linear_weight("tokenizer.mlp2.0.weight", 4 * h, 4 * h, rng);
  p.b2a = p.set.add_zeros("tokenizer.mlp2.0.bias", 1, 4 * h);
  p.w2b = p.set.add_linear_weight("tokenizer.mlp2.1.weight", 4 * h, d, rng);
  p.b2b = p.set.add_zeros("tokenizer.mlp2.1.bias", 1, d);
  p.pad_embed = p.set.add_linear_weight("tokenizer.pad_embed", 1, d, rng);
  return p;
}

ad::Mat patch_feature_matrix(const PatchSet& patches) {
  const Eigen::Index k = static_cast<Eigen::Index>(patches.patch_size);
  const Eigen::Index n = static_cast<Eigen::Index>(patches.patch_count());
  const Eigen::Index f = patches.has_colors ? 6 : 3;
  ad::Mat out(n * k, f);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const Vec3& p = patches.patches[i][j];
      out(i * k + j, 0) = p[0];
      out(i * k + j, 1) = p[1];
      out(i * k + j, 2) = p[2];
      if (patches.has_colors) {
        const Vec3& c = patches.patch_colors[i][j];
        out(i * k + j, 3) = c[0];
        out(i * k + j, 4) = c[1];
        out(i * k + j, 5) = c[2];
      }
    }
  }
  return out;
}

ad::Tensor embed_patch_matrix(const ad::Tensor& points, Eigen::Index patch_size,
                              const TokenizerParams& params) {
  require(points.cols() == params.config.point_features,
          ErrorCode::invalid_argument,
          "embed_patch_matrix: point feature width does not match tokenizer");
  require(patch_size >= 1 && points.rows() % patch_size == 0,
          ErrorCode::invalid_argument,
          "embed_patch_matrix: rows must be a multiple of the patch size");

  ad::Tensor h1 = ad::elu(linear(points, params.w1a, params.b1a));
  ad::Tensor h2 = linear(h1, params.w1b, params.b1b);
  ad::Tensor pooled = ad::rowgroup_max(h2, patch_size);
  ad::Tensor expanded = ad::repeat_rows(pooled, patch_size);
  ad::Tensor both = ad::concat_cols(h2, expanded);
  ad::Tensor h3 = ad::elu(linear(both, params.w2a, params.b2a));
  ad::Tensor h4 = linear(h3, params.w2b, params.b2b);
  return ad::rowgroup_max(h4, patch_size);
}

ad::Tensor embed_patches(const PatchSet& patches, const TokenizerParams& params) {
  const int f = patches.has_colors ? 6 : 3;
  require(f == params.config.point_features, ErrorCode::invalid_argument,
          "embed_patches: patch feature width does not match tokenizer");
  ad::Tensor points = ad::constant(patch_feature_matrix(patches));
  return embed_patch_matrix(points, static_cast<Eigen::Index>(patches.patch_size),
                            params);
}

ad::Mat positional_encoding_values(const std::vector<Vec3>& locations,
                                   Eigen::Index d) {
  check_token_dim(d);
  const Eigen::Index pairs = d / 6;
  const Eigen::Index block = d / 3;
  ad::Mat out(static_cast<Eigen::Index>(locations.size()), d);
  for (std::size_t i = 0; i < locations.size(); ++i) {
    for (int axis = 0; axis < 3; ++axis) {
      fill_axis_block(out, static_cast<Eigen::Index>(i), axis * block, pairs,
                      locations[i][axis]);
    }
  }
  return out;
}

ad::Mat relative_direction_features(const std::vector<Vec3>& sorted_centroids,
                                    Eigen::Index d) {
  require(!sorted_centroids.empty(), ErrorCode::invalid_argument,
          "relative_direction_features: no centroids");
  std::vector<Vec3> dirs(sorted_centroids.size());
  dirs[0] = sorted_centroids[0];  // absolute location of the first patch
  for (std::size_t i = 1; i < sorted_centroids.size(); ++i) {
    Vec3 delta = sub3(sorted_centroids[i], sorted_centroids[i - 1]);
    const double norm =
        std::sqrt(delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]);
    if (norm > 0.0) {
      for (double& v : delta) v /= norm;
    } else {
      delta = {0.0, 0.0, 0.0};
    }
    dirs[i] = delta;
  }
  return positional_encoding_values(dirs, d);
}

ad::Tensor relative_direction_encoding(const std::vector<Vec3>& sorted_centroids,
                                       const ad::Tensor& projection) {
  ad::Mat features =
      relative_direction_features(sorted_centroids, projection.rows());
  return ad::matmul(ad::constant(std::move(features)), projection);
}

PatchSet morton_sorted(const PatchSet& patches, std::vector<std::size_t>* order) {
  const std::vector<std::size_t> perm = morton_rank(patches.centroids);
  PatchSet out;
  out.patch_size = patches.patch_size;
  out.has_colors = patches.has_colors;
  out.centroids.reserve(perm.size());
  out.patches.reserve(perm.size());
  out.source_indices.reserve(perm.size());
  for (const std::size_t i : perm) {
    out.centroids.push_back(patches.centroids[i]);
    out.patches.push_back(patches.patches[i]);
    out.source_indices.push_back(patches.source_indices[i]);
    if (patches.has_colors) out.patch_colors.push_back(patches.patch_colors[i]);
  }
  if (order) *order = perm;
  return out;
}

namespace {

TokenSequence assemble_sequence(ad::Tensor real_tokens,
                                const PatchSet& sorted,
                                std::vector<std::size_t> order,
                                const TokenizerParams& params,
                                std::size_t n_pad) {
  TokenSequence seq;
  seq.n_real = sorted.patch_count();
  seq.morton_order = std::move(order);
  seq.centroids = sorted.centroids;
  seq.is_padding.assign(seq.n_real, 0);
  if (n_pad > 0) {
    ad::Tensor pads =
        ad::repeat_rows(params.pad_embed, static_cast<Eigen::Index>(n_pad));
    const ad::Tensor parts[] = {real_tokens, pads};
    seq.tokens = ad::concat_rows(parts);
    seq.centroids.insert(seq.centroids.end(), n_pad, Vec3{0.0, 0.0, 0.0});
    seq.is_padding.insert(seq.is_padding.end(), n_pad, 1);
  } else {
    seq.tokens = std::move(real_tokens);
  }
  return seq;
}

}  // namespace

TokenSequence make_token_sequence(const PatchSet& patches,
                                  const TokenizerParams& params,
                                  std::size_t n_pad) {
  std::vector<std::size_t> order;
  PatchSet sorted = morton_sorted(patches, &order);
  ad::Tensor tokens = embed_patches(sorted, params);
  return assemble_sequence(std::move(tokens), sorted, std::move(order), params,
                           n_pad);
}

std::vector<TokenSequence> make_token_sequences(
    const std::vector<PatchSet>& sets, const TokenizerParams& params,
    std::vector<PatchSet>* sorted_out) {
  require(!sets.empty(), ErrorCode::invalid_argument,
          "make_token_sequences: empty batch");
  const std::size_t k = sets.front().patch_size;
  std::size_t max_real = 0;
  std::vector<PatchSet> sorted;
  std::vector<std::vector<std::size_t>> orders;
  sorted.reserve(sets.size());
  orders.reserve(sets.size());

  Eigen::Index total_rows = 0;
  for (const PatchSet& set : sets) {
    require(set.patch_size == k, ErrorCode::invalid_argument,
            "make_token_sequences: mixed patch sizes in batch");
    std::vector<std::size_t> order;
    sorted.push_back(morton_sorted(set, &order));
    orders.push_back(std::move(order));
    max_real = std::max(max_real, set.patch_count());
    total_rows += static_cast<Eigen::Index>(set.patch_count() * k);
  }

  const Eigen::Index f = params.config.point_features;
  ad::Mat all_points(total_rows, f);
  Eigen::Index at = 0;
  for (const PatchSet& set : sorted) {
    ad::Mat block = patch_feature_matrix(set);
    require(block.cols() == f, ErrorCode::invalid_argument,
            "make_token_sequences: patch feature width does not match tokenizer");
    all_points.middleRows(at, block.rows()) = block;
    at += block.rows();
  }

  ad::Tensor all_tokens =
      embed_patch_matrix(ad::constant(std::move(all_points)),
                         static_cast<Eigen::Index>(k), params);

  std::vector<TokenSequence> out;
  out.reserve(sets.size());
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < sorted.size(); ++s) {
    const Eigen::Index n = static_cast<Eigen::Index>(sorted[s].patch_count());
    ad::Tensor mine = ad::slice_rows(all_tokens, row, n);
    row += n;
    out.push_back(assemble_sequence(std::move(mine), sorted[s],
                                    std::move(orders[s]), params,
                                    max_real - sorted[s].patch_count()));
  }
  if (sorted_out) *sorted_out = std::move(sorted);
  return out;
}

}  // namespace pprl
