#include "transformer.hpp"

#include <cmath>
#include <string>

namespace pprl {

namespace {

ad::Tensor linear(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b) {
  return ad::add_rowvec(ad::matmul(x, w), b);
}

BlockParams make_block(ad::ParamSet& set, const std::string& prefix,
                       Eigen::Index d, Rng& rng) {
  BlockParams b;
  b.ln1_g = set.add(prefix + ".ln1.gain", ad::Mat::Ones(1, d));
  b.ln1_b = set.add_zeros(prefix + ".ln1.bias", 1, d);
  b.wq = set.add_linear_weight(prefix + ".attn.wq", d, d, rng);
  b.bq = set.add_zeros(prefix + ".attn.bq", 1, d);
  b.wk = set.add_linear_weight(prefix + ".attn.wk", d, d, rng);
  b.bk = set.add_zeros(prefix + ".attn.bk", 1, d);
  b.wv = set.add_linear_weight(prefix + ".attn.wv", d, d, rng);
  b.bv = set.add_zeros(prefix + ".attn.bv", 1, d);
  b.wo = set.add_linear_weight(prefix + ".attn.wo", d, d, rng);
  b.bo = set.add_zeros(prefix + ".attn.bo", 1, d);
  b.ln2_g = set.add(prefix + ".ln2.gain", ad::Mat::Ones(1, d));
  b.ln2_b = set.add_zeros(prefix + ".ln2.bias", 1, d);
  b.ff1_w = set.add_linear_weight(prefix + ".ff.0.weight", d, 4 * d, rng);
  b.ff1_b = set.add_zeros(prefix + ".ff.0.bias", 1, 4 * d);
  b.ff2_w = set.add_linear_weight(prefix + ".ff.1.weight", 4 * d, d, rng);
  b.ff2_b = set.add_zeros(prefix + ".ff.1.bias", 1, d);
  return b;
}

StackParams make_stack(ad::ParamSet& set, const std::string& prefix,
                       const EncoderConfig& cfg, Rng& rng) {
  StackParams s;
  for (Eigen::Index l = 0; l < cfg.layers; ++l) {
    s.blocks.push_back(
        make_block(set, prefix + ".block" + std::to_string(l), cfg.token_dim, rng));
  }
  s.final_ln_g = set.add(prefix + ".final_ln.gain", ad::Mat::Ones(1, cfg.token_dim));
  s.final_ln_b = set.add_zeros(prefix + ".final_ln.bias", 1, cfg.token_dim);
  s.rel_proj =
      set.add_linear_weight(prefix + ".rel_proj", cfg.token_dim, cfg.token_dim, rng);
  return s;
}

ad::Tensor run_stack(ad::Tensor x, const AttentionMask& mask,
                     const StackParams& stack, const EncoderConfig& cfg) {
  const Eigen::Index d = cfg.token_dim;
  const Eigen::Index head_dim = d / cfg.heads;
  for (const BlockParams& b : stack.blocks) {
    ad::Tensor h = ad::layer_norm_rows(x, b.ln1_g, b.ln1_b);
    ad::Tensor q = linear(h, b.wq, b.bq);
    ad::Tensor k = linear(h, b.wk, b.bk);
    ad::Tensor v = linear(h, b.wv, b.bv);
    ad::Tensor heads;
    for (Eigen::Index hd = 0; hd < cfg.heads; ++hd) {
      ad::Tensor ctx = ad::attention(ad::slice_cols(q, hd * head_dim, head_dim),
                                     ad::slice_cols(k, hd * head_dim, head_dim),
                                     ad::slice_cols(v, hd * head_dim, head_dim),
                                     mask);
      heads = hd == 0 ? ctx : ad::concat_cols(heads, ctx);
    }
    x = ad::add(x, linear(heads, b.wo, b.bo));
    ad::Tensor h2 = ad::layer_norm_rows(x, b.ln2_g, b.ln2_b);
    ad::Tensor ff = linear(ad::elu(linear(h2, b.ff1_w, b.ff1_b)), b.ff2_w, b.ff2_b);
    x = ad::add(x, ff);
  }
  return ad::layer_norm_rows(x, stack.final_ln_g, stack.final_ln_b);
}

// Relative-direction encodings for real rows, placed inside an S x D layout
// whose other rows stay zero.
ad::Tensor placed_relative_encoding(const TokenSequence& seq,
                                    const ad::Tensor& rel_proj, bool with_sos) {
  std::vector<Vec3> real(seq.centroids.begin(),
                         seq.centroids.begin() + seq.n_real);
  ad::Tensor rel = relative_direction_encoding(real, rel_proj);
  std::vector<ad::Tensor> parts;
  if (with_sos) parts.push_back(ad::zeros(1, rel.cols()));
  parts.push_back(rel);
  const std::size_t n_pad = seq.n_total() - seq.n_real;
  if (n_pad > 0) {
    parts.push_back(ad::zeros(static_cast<Eigen::Index>(n_pad), rel.cols()));
  }
  return parts.size() == 1 ? parts[0] : ad::concat_rows(parts);
}

}  // namespace

TransformerParams TransformerParams::create(const EncoderConfig& config,
                                            Rng& rng) {
  require(config.token_dim % 6 == 0, ErrorCode::config,
          "token dimension must be a multiple of 6");
  require(config.heads >= 1 && config.token_dim % config.heads == 0,
          ErrorCode::config, "head count must divide the token dimension");
  require(config.layers >= 1, ErrorCode::config, "need at least one layer");
  require(config.point_features == 3 || config.point_features == 6,
          ErrorCode::config, "point features must be 3 or 6");
  require(config.patch_size >= 1, ErrorCode::config, "patch size must be >= 1");

  TransformerParams p;
  p.config = config;
  const Eigen::Index d = config.token_dim;
  p.encoder = make_stack(p.set, "encoder", config, rng);
  p.decoder = make_stack(p.set, "decoder", config, rng);
  p.sos = p.set.add_linear_weight("sos", 1, d, rng);
  p.pool_w = p.set.add_linear_weight("pool.weight", d, 1, rng);
  p.pool_b = p.set.add_zeros("pool.bias", 1, 1);
  const Eigen::Index head_out =
      static_cast<Eigen::Index>(config.patch_size) * config.point_features;
  p.head_w = p.set.add_linear_weight("head.weight", d, head_out, rng);
  p.head_b = p.set.add_zeros("head.bias", 1, head_out);
  if (config.state_dim > 0) {
    p.fuse_w = p.set.add_linear_weight("fuse.weight", config.state_dim, d, rng);
    p.fuse_b = p.set.add_zeros("fuse.bias", 1, d);
  }
  return p;
}

AttentionMask build_decoder_mask(std::size_t n_real, std::size_t n_pad,
                                 double mask_ratio, double prefix_fraction,
                                 std::uint64_t seed) {
  require(n_real >= 1, ErrorCode::invalid_argument,
          "build_decoder_mask: need at least one real token");
  require(mask_ratio >= 0.0 && mask_ratio <= 1.0, ErrorCode::invalid_argument,
          "build_decoder_mask: mask ratio outside [0,1]");
  require(prefix_fraction >= 0.0 && prefix_fraction <= 1.0,
          ErrorCode::invalid_argument,
          "build_decoder_mask: prefix fraction outside [0,1]");

  const std::size_t s = n_real + n_pad + 1;
  const std::size_t prefix_count = static_cast<std::size_t>(
      std::ceil(prefix_fraction * static_cast<double>(n_real)));

  // columns 1..n_real hold real tokens; eligible ones may be hidden
  std::vector<std::size_t> eligible;
  for (std::size_t t = prefix_count + 1; t <= n_real; ++t) eligible.push_back(t);
  const std::size_t n_hidden = static_cast<std::size_t>(
      std::llround(mask_ratio * static_cast<double>(eligible.size())));

  Rng rng(seed);
  std::vector<std::uint8_t> hidden(s, 0);
  for (std::size_t i = 0; i < n_hidden; ++i) {
    const std::size_t j = i + rng.index(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
    hidden[eligible[i]] = 1;
  }

  AttentionMask mask(s);
  mask.set(0, 0, true);  // SOS row attends itself
  for (std::size_t i = 1; i <= n_real; ++i) {
    mask.set(i, 0, true);  // SOS column always visible
    for (std::size_t j = 1; j < i; ++j) {
      mask.set(i, j, !hidden[j]);
    }
    mask.set(i, i - 1, true);  // the immediate predecessor stays visible
  }
  return mask;
}

EncoderOutput encode(const TokenSequence& seq, EncodeMode mode,
                     const AttentionMask* mask, const TransformerParams& params) {
  require(seq.tokens.cols() == params.config.token_dim,
          ErrorCode::invalid_argument, "encode: token width mismatch");
  require(seq.n_real >= 1, ErrorCode::invalid_argument,
          "encode: sequence has no real tokens");

  EncoderOutput out;
  if (mode == EncodeMode::kRl) {
    // bidirectional over real tokens; padding rows and columns are invisible
    AttentionMask rl_mask(seq.n_total());
    for (std::size_t i = 0; i < seq.n_real; ++i) {
      for (std::size_t j = 0; j < seq.n_real; ++j) rl_mask.set(i, j, true);
    }
    ad::Mat pe = positional_encoding_values(seq.centroids, params.config.token_dim);
    for (std::size_t i = seq.n_real; i < seq.n_total(); ++i) {
      pe.row(static_cast<Eigen::Index>(i)).setZero();
    }
    ad::Tensor x = ad::add(seq.tokens, ad::constant(std::move(pe)));
    out.encoded = run_stack(std::move(x), rl_mask, params.encoder, params.config);
    out.is_padding = seq.is_padding;
    out.pooled = sequence_pool(out.encoded, out.is_padding, params);
    return out;
  }

  require(mask != nullptr, ErrorCode::invalid_argument,
          "encode: reconstruction mode needs a decoder mask");
  require(mask->size == seq.n_total() + 1, ErrorCode::invalid_argument,
          "encode: mask size must be n_total + 1 (start-of-sequence slot)");

  const ad::Tensor parts[] = {params.sos, seq.tokens};
  ad::Tensor x = ad::concat_rows(parts);
  x = ad::add(x, placed_relative_encoding(seq, params.encoder.rel_proj, true));
  out.encoded = run_stack(std::move(x), *mask, params.encoder, params.config);
  out.has_sos = true;
  out.is_padding.assign(seq.n_total() + 1, 0);
  for (std::size_t i = 0; i < seq.n_total(); ++i) {
    out.is_padding[i + 1] = seq.is_padding[i];
  }
  return out;
}

ad::Tensor sequence_pool(const ad::Tensor& encoded,
                         const std::vector<std::uint8_t>& is_padding,
                         const TransformerParams& params) {
  require(is_padding.size() == static_cast<std::size_t>(encoded.rows()),
          ErrorCode::invalid_argument, "sequence_pool: flag length mismatch");
  std::vector<std::uint8_t> keep(is_padding.size());
  bool any = false;
  for (std::size_t i = 0; i < is_padding.size(); ++i) {
    keep[i] = is_padding[i] ? 0 : 1;
    any = any || keep[i];
  }
  require(any, ErrorCode::invalid_argument, "sequence_pool: all tokens are padding");
  ad::Tensor logits = linear(encoded, params.pool_w, params.pool_b);
  ad::Tensor weights = ad::masked_softmax_col(logits, keep);
  return ad::matmul(ad::transpose(weights), encoded);
}

ad::Tensor decode_and_predict(const EncoderOutput& enc, const TokenSequence& seq,
                              const AttentionMask& mask,
                              const TransformerParams& params) {
  require(enc.has_sos, ErrorCode::invalid_argument,
          "decode_and_predict: needs a reconstruction-mode encoding");
  require(mask.size == static_cast<std::size_t>(enc.encoded.rows()),
          ErrorCode::invalid_argument, "decode_and_predict: mask size mismatch");

  ad::Tensor x =
      ad::add(enc.encoded,
              placed_relative_encoding(seq, params.decoder.rel_proj, true));
  x = run_stack(std::move(x), mask, params.decoder, params.config);
  ad::Tensor real = ad::slice_rows(x, 1, static_cast<Eigen::Index>(seq.n_real));
  return linear(real, params.head_w, params.head_b);
}

ad::Tensor fuse_state(const ad::Tensor& pooled,
                      const std::optional<std::vector<double>>& state,
                      const TransformerParams& params) {
  if (!state) return pooled;
  require(params.config.state_dim ==
              static_cast<Eigen::Index>(state->size()),
          ErrorCode::invalid_argument, "fuse_state: state size mismatch");
  ad::Mat row(1, params.config.state_dim);
  for (Eigen::Index i = 0; i < row.cols(); ++i) row(0, i) = (*state)[i];
  ad::Tensor proj = linear(ad::constant(std::move(row)), params.fuse_w,
                           params.fuse_b);
  return ad::concat_cols(pooled, proj);
}

}  // namespace pprl
