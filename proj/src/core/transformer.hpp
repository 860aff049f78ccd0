#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "attention_mask.hpp"
#include "autodiff.hpp"
#include "tokenizer.hpp"

namespace pprl {

struct EncoderConfig {
  Eigen::Index token_dim = 96;  // D; pooled size d == D
  Eigen::Index layers = 3;      // encoder depth; the decoder mirrors it
  Eigen::Index heads = 4;       // must divide D
  double mask_ratio = 0.3;      // m
  double prefix_fraction = 0.15;
  std::size_t patch_size = 32;  // k, fixes the prediction head width
  int point_features = 3;       // 3 or 6 (color)
  Eigen::Index state_dim = 0;   // low-dim state size, 0 when absent
};

// One pre-norm block: x += MHA(LN(x)); x += FF(LN(x)), ELU feed-forward of
// width 4D.
struct BlockParams {
  ad::Tensor ln1_g, ln1_b;
  ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Tensor ln2_g, ln2_b;
  ad::Tensor ff1_w, ff1_b, ff2_w, ff2_b;
};

struct StackParams {
  std::vector<BlockParams> blocks;
  ad::Tensor final_ln_g, final_ln_b;
  ad::Tensor rel_proj;  // D x D projection for relative-direction encodings
};

struct TransformerParams {
  EncoderConfig config;
  ad::ParamSet set;
  StackParams encoder;
  StackParams decoder;
  ad::Tensor sos;               // 1 x D, reconstruction mode only
  ad::Tensor pool_w, pool_b;    // sequence pooling logit map, D -> 1
  ad::Tensor head_w, head_b;    // prediction head, D -> k * f
  ad::Tensor fuse_w, fuse_b;    // state projection, state_dim -> D

  static TransformerParams create(const EncoderConfig& config, Rng& rng);
};

// Hybrid random + causal + padding mask over S = n_real + n_pad + 1 slots
// (start-of-sequence at index 0, always visible to real rows). Among the
// eligible real columns (those after the protected prefix of
// ceil(prefix_fraction * n_real) tokens) exactly round(m * n_eligible) are
// hidden. A hidden column stays visible to its immediate successor row.
// Padding columns are invisible to real rows; padding rows see nothing.
AttentionMask build_decoder_mask(std::size_t n_real, std::size_t n_pad,
                                 double mask_ratio, double prefix_fraction,
                                 std::uint64_t seed);

enum class EncodeMode { kRl, kReconstruction };

struct EncoderOutput {
  ad::Tensor encoded;  // [S, D]
  ad::Tensor pooled;   // [1, D], rl mode only
  std::vector<std::uint8_t> is_padding;  // length S
  bool has_sos = false;
};

// RL mode: bidirectional attention over real tokens (padding excluded),
// absolute positional encodings, pooled embedding computed.
// Reconstruction mode: prepends the SOS token, adds relative-direction
// encodings only, and runs under the supplied decoder mask.
EncoderOutput encode(const TokenSequence& seq, EncodeMode mode,
                     const AttentionMask* mask, const TransformerParams& params);

// Softmax-weighted sum over non-padding tokens.
ad::Tensor sequence_pool(const ad::Tensor& encoded,
                         const std::vector<std::uint8_t>& is_padding,
                         const TransformerParams& params);

// Decoder stack over the encoded sequence (same mask semantics, its own
// parameters and relative-direction encodings) followed by the one-layer
// head; returns [n_real, k * f] patch predictions in centroid-relative
// coordinates.
ad::Tensor decode_and_predict(const EncoderOutput& enc, const TokenSequence& seq,
                              const AttentionMask& mask,
                              const TransformerParams& params);

// Projects the state to D and concatenates: [pooled, proj(state)] (1 x 2D).
// Without a state the pooled embedding passes through unchanged.
ad::Tensor fuse_state(const ad::Tensor& pooled,
                      const std::optional<std::vector<double>>& state,
                      const TransformerParams& params);

}  // namespace pprl
