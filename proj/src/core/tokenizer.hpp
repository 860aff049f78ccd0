#pragma once

#include <cstdint>
#include <vector>

#include "autodiff.hpp"
#include "geometry.hpp"

namespace pprl {

struct TokenizerConfig {
  int point_features = 3;          // 3, or 6 with color
  Eigen::Index token_dim = 96;     // D, divisible by 6
  Eigen::Index pointnet_width = 64;  // first hidden width of the mini-PointNet
};

// Mini-PointNet: MLP1 f -> h -> 2h, max-pool, concat pooled back onto each
// point, MLP2 4h -> 4h -> D, max-pool. h = pointnet_width.
struct TokenizerParams {
  TokenizerConfig config;
  ad::ParamSet set;
  ad::Tensor w1a, b1a, w1b, b1b;
  ad::Tensor w2a, b2a, w2b, b2b;
  ad::Tensor pad_embed;  // 1 x D, the learned padding token

  static TokenizerParams create(const TokenizerConfig& config, Rng& rng);
};

// Patch records flattened to one row per point: [x y z (r g b)], positions
// centroid-relative, colors absolute.
ad::Mat patch_feature_matrix(const PatchSet& patches);

// Tokens for a stack of patches laid out as [n*k, f]; returns [n, D].
// Permutation-invariant over the points inside each patch.
ad::Tensor embed_patch_matrix(const ad::Tensor& points, Eigen::Index patch_size,
                              const TokenizerParams& params);

// Convenience wrapper over one PatchSet.
ad::Tensor embed_patches(const PatchSet& patches, const TokenizerParams& params);

// Sinusoidal encodings of 3D locations: per axis D/6 sine/cosine pairs with
// geometrically spaced wavelengths from 2*10^0 to 2*10^4, axis blocks
// concatenated (x block first). Coordinates are assumed roughly in [-1,1].
ad::Mat positional_encoding_values(const std::vector<Vec3>& locations,
                                   Eigen::Index d);

// Direction features for Morton-sorted centroids: row 0 encodes the absolute
// first centroid, row i >= 1 the unit direction from centroid i-1 to i
// (zero vector when they coincide).
ad::Mat relative_direction_features(const std::vector<Vec3>& sorted_centroids,
                                    Eigen::Index d);

// The direction features pushed through a learned D x D projection.
ad::Tensor relative_direction_encoding(const std::vector<Vec3>& sorted_centroids,
                                       const ad::Tensor& projection);

// Reorders a patch set by the Morton rank of its centroids.
PatchSet morton_sorted(const PatchSet& patches, std::vector<std::size_t>* order);

struct TokenSequence {
  ad::Tensor tokens;                    // [n_total, D]
  std::vector<Vec3> centroids;          // padding centroids are (0,0,0)
  std::vector<std::size_t> morton_order;  // permutation applied to real tokens
  std::vector<std::uint8_t> is_padding;
  std::size_t n_real = 0;

  std::size_t n_total() const { return is_padding.size(); }
};

// Morton-sorts the patches, embeds them and appends n_pad padding tokens.
// `sorted` must already be in Morton order (see make_token_sequence).
TokenSequence make_token_sequence(const PatchSet& patches,
                                  const TokenizerParams& params,
                                  std::size_t n_pad);

// Batch path: a single embedding pass over every patch of every set, with all
// sequences padded to the longest one. sorted_out, when given, receives each
// set in Morton order (aligned with the token rows).
std::vector<TokenSequence> make_token_sequences(
    const std::vector<PatchSet>& sets, const TokenizerParams& params,
    std::vector<PatchSet>* sorted_out = nullptr);

}  // namespace pprl
