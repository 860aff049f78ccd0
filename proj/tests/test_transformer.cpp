#include <doctest.h>

#include <cmath>
#include <set>

#include "losses.hpp"
#include "oracles.hpp"
#include "transformer.hpp"

using namespace pprl;

namespace {

struct Setup {
  TokenizerParams tokenizer;
  TransformerParams transformer;
};

Setup make_setup(std::uint64_t seed, int features = 3, Eigen::Index d = 24,
                 std::size_t k = 8) {
  TokenizerConfig tc;
  tc.point_features = features;
  tc.token_dim = d;
  tc.pointnet_width = 8;
  EncoderConfig ec;
  ec.token_dim = d;
  ec.layers = 2;
  ec.heads = 4;
  ec.patch_size = k;
  ec.point_features = features;
  ec.state_dim = 3;
  Rng rng(seed);
  Setup s{TokenizerParams::create(tc, rng), TransformerParams::create(ec, rng)};
  return s;
}

TokenSequence sequence_from_cloud(const PointCloud& cloud, const Setup& s,
                                  std::size_t n, std::size_t n_pad,
                                  PatchSet* sorted_out = nullptr) {
  const auto centers = farthest_point_sample(cloud, n, 17);
  const PatchSet patches =
      knn_group(cloud, centers, s.transformer.config.patch_size);
  if (sorted_out) {
    std::vector<std::size_t> order;
    *sorted_out = morton_sorted(patches, &order);
  }
  return make_token_sequence(patches, s.tokenizer, n_pad);
}

// The masking rules rebuilt independently: collect the hidden column set from
// a fresh RNG, then write each row's visibility from first principles.
AttentionMask reference_mask(std::size_t n_real, std::size_t n_pad, double m,
                             double prefix_fraction, std::uint64_t seed) {
  const std::size_t s = n_real + n_pad + 1;
  const std::size_t protected_prefix =
      static_cast<std::size_t>(std::ceil(prefix_fraction * double(n_real)));
  std::vector<std::size_t> eligible;
  for (std::size_t t = protected_prefix + 1; t <= n_real; ++t) {
    eligible.push_back(t);
  }
  const auto n_hidden = static_cast<std::size_t>(
      std::llround(m * static_cast<double>(eligible.size())));
  Rng rng(seed);
  std::vector<bool> hidden(s, false);
  for (std::size_t i = 0; i < n_hidden; ++i) {
    const std::size_t j = i + rng.index(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
    hidden[eligible[i]] = true;
  }
  AttentionMask mask(s);
  mask.set(0, 0, true);
  for (std::size_t i = 1; i <= n_real; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      bool visible = false;
      if (j == 0) visible = true;                       // SOS column
      else if (j >= i) visible = false;                 // causal
      else if (j > n_real) visible = false;             // padding column
      else visible = !hidden[j] || j == i - 1;          // predecessor override
      mask.set(i, j, visible);
    }
  }
  return mask;
}

}  // namespace

TEST_CASE("mask: zero ratio reduces to pure causal attention with SOS") {
  const AttentionMask mask = build_decoder_mask(3, 0, 0.0, 0.0, 5);
  REQUIRE(mask.size == 4);
  for (std::size_t i = 1; i <= 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(mask.at(i, j) == (j < i));
    }
  }
}

TEST_CASE("mask: full prefix protection disables random hiding") {
  const AttentionMask a = build_decoder_mask(6, 2, 0.9, 1.0, 3);
  const AttentionMask b = build_decoder_mask(6, 2, 0.0, 1.0, 99);
  CHECK(a.visible == b.visible);
}

TEST_CASE("mask: hidden count and reproducibility match the reference") {
  const AttentionMask got = build_decoder_mask(10, 0, 0.3, 0.2, 42);
  const AttentionMask again = build_decoder_mask(10, 0, 0.3, 0.2, 42);
  CHECK(got.visible == again.visible);
  CHECK(got.visible == reference_mask(10, 0, 0.3, 0.2, 42).visible);

  // ceil(0.2*10)=2 protected, so exactly round(0.3*8)=2 columns among tokens
  // 3..10 get hidden; re-derive the sampled set with the stated rule
  std::vector<std::size_t> eligible{3, 4, 5, 6, 7, 8, 9, 10};
  Rng rng(42);
  std::set<std::size_t> hidden;
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t j = i + rng.index(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
    hidden.insert(eligible[i]);
  }
  CHECK(hidden.size() == 2);
  for (const std::size_t col : hidden) CHECK(col >= 3);
  // every hidden column vanishes from the rows past its successor
  for (const std::size_t col : hidden) {
    for (std::size_t i = col + 2; i <= 10; ++i) CHECK_FALSE(got.at(i, col));
  }
}

TEST_CASE("mask: rule sweep against the reference constructor") {
  Rng rng(7);
  for (int rep = 0; rep < 60; ++rep) {
    const std::size_t n_real = 1 + rng.index(24);
    const std::size_t n_pad = rng.index(6);
    const double m = rng.uniform01();
    const double prefix = rng.uniform01();
    const std::uint64_t seed = rng.next_u64();
    const AttentionMask got = build_decoder_mask(n_real, n_pad, m, prefix, seed);
    const AttentionMask want = reference_mask(n_real, n_pad, m, prefix, seed);
    REQUIRE(got.size == want.size);
    CHECK(got.visible == want.visible);

    for (std::size_t i = 1; i <= n_real; ++i) {
      CHECK(got.at(i, 0));          // SOS always visible
      CHECK(got.at(i, i - 1));      // predecessor always visible
      for (std::size_t j = i; j < got.size; ++j) {
        if (j != 0) CHECK_FALSE(got.at(i, j));  // causality
      }
      for (std::size_t j = n_real + 1; j < got.size; ++j) {
        CHECK_FALSE(got.at(i, j));  // padding columns
      }
    }
    for (std::size_t i = n_real + 1; i < got.size; ++i) {
      for (std::size_t j = 0; j < got.size; ++j) {
        CHECK_FALSE(got.at(i, j));  // padding rows are inert
      }
    }
  }
}

TEST_CASE("encode rl: single real token pools to itself") {
  Setup s = make_setup(31);
  Rng rng(33);
  const PointCloud cloud = oracle::random_cloud(30, false, rng);
  const TokenSequence seq = sequence_from_cloud(cloud, s, 1, 0);
  const EncoderOutput out = encode(seq, EncodeMode::kRl, nullptr, s.transformer);
  REQUIRE(out.encoded.rows() == 1);
  CHECK((out.pooled.value() - out.encoded.value().row(0)).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("encode rl: padding leaves real outputs and pooling unchanged") {
  Setup s = make_setup(35);
  Rng rng(37);
  const PointCloud cloud = oracle::random_cloud(70, false, rng);
  PatchSet sorted;
  const TokenSequence plain = sequence_from_cloud(cloud, s, 5, 0, &sorted);
  const TokenSequence padded = sequence_from_cloud(cloud, s, 5, 16);

  const EncoderOutput a = encode(plain, EncodeMode::kRl, nullptr, s.transformer);
  const EncoderOutput b = encode(padded, EncodeMode::kRl, nullptr, s.transformer);
  CHECK((a.encoded.value() - b.encoded.value().topRows(5)).cwiseAbs().maxCoeff() <
        1e-6);
  CHECK((a.pooled.value() - b.pooled.value()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("encode recon: prefix rerun is bitwise identical under causal mask") {
  Setup s = make_setup(41);
  Rng rng(43);
  const PointCloud cloud = oracle::random_cloud(90, false, rng);
  PatchSet sorted;
  const TokenSequence full = sequence_from_cloud(cloud, s, 6, 0, &sorted);
  const AttentionMask full_mask = build_decoder_mask(6, 0, 0.0, 0.0, 1);
  const EncoderOutput full_out =
      encode(full, EncodeMode::kReconstruction, &full_mask, s.transformer);

  for (std::size_t keep = 1; keep < 6; ++keep) {
    // same leading tokens, shorter sequence
    TokenSequence part;
    part.tokens = ad::constant(
        full.tokens.value().topRows(static_cast<Eigen::Index>(keep)));
    part.centroids.assign(full.centroids.begin(), full.centroids.begin() + keep);
    part.morton_order.assign(full.morton_order.begin(),
                             full.morton_order.begin() + keep);
    part.is_padding.assign(keep, 0);
    part.n_real = keep;

    const AttentionMask part_mask = build_decoder_mask(keep, 0, 0.0, 0.0, 1);
    const EncoderOutput part_out =
        encode(part, EncodeMode::kReconstruction, &part_mask, s.transformer);
    for (std::size_t row = 0; row <= keep; ++row) {
      for (Eigen::Index j = 0; j < part_out.encoded.cols(); ++j) {
        CHECK(part_out.encoded.value()(row, j) ==
              full_out.encoded.value()(row, j));  // bitwise
      }
    }
  }
}

TEST_CASE("encode recon: future perturbations never reach earlier positions") {
  Setup s = make_setup(47);
  Rng rng(49);
  const PointCloud cloud = oracle::random_cloud(90, false, rng);
  PatchSet sorted;
  const TokenSequence seq = sequence_from_cloud(cloud, s, 6, 2, &sorted);
  const AttentionMask mask =
      build_decoder_mask(6, 2, 0.4, 0.2, 11);

  const EncoderOutput base =
      encode(seq, EncodeMode::kReconstruction, &mask, s.transformer);
  const ad::Tensor base_pred =
      decode_and_predict(base, seq, mask, s.transformer);

  for (std::size_t j = 2; j <= 6; ++j) {
    // perturb real token j (sequence position j, row j-1 of the raw tokens)
    TokenSequence bumped = seq;
    ad::Mat values = seq.tokens.value();
    values.row(static_cast<Eigen::Index>(j - 1)).array() += 0.35;
    bumped.tokens = ad::constant(std::move(values));
    const EncoderOutput out =
        encode(bumped, EncodeMode::kReconstruction, &mask, s.transformer);
    const ad::Tensor pred = decode_and_predict(out, bumped, mask, s.transformer);
    // encoded positions strictly before j (0..j-1) are untouched
    for (std::size_t row = 0; row < j; ++row) {
      CHECK((out.encoded.value().row(row) - base.encoded.value().row(row))
                .cwiseAbs()
                .maxCoeff() < 1e-6);
    }
    // predictions for patches before j stay fixed as well
    for (std::size_t p = 0; p + 1 < j; ++p) {
      CHECK((pred.value().row(p) - base_pred.value().row(p))
                .cwiseAbs()
                .maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("encode recon: requires a mask") {
  Setup s = make_setup(53);
  Rng rng(55);
  const PointCloud cloud = oracle::random_cloud(40, false, rng);
  const TokenSequence seq = sequence_from_cloud(cloud, s, 3, 0);
  CHECK_THROWS_AS(encode(seq, EncodeMode::kReconstruction, nullptr, s.transformer),
                  Error);
}

TEST_CASE("sequence pool: equal logits average the real tokens") {
  Setup s = make_setup(59);
  s.transformer.pool_w.mutable_value().setZero();  // logits become the bias
  Rng rng(61);
  const ad::Mat tokens = oracle::random_mat(6, 24, rng);
  std::vector<std::uint8_t> pad{0, 0, 0, 0, 1, 1};
  const ad::Tensor pooled =
      sequence_pool(ad::constant(tokens), pad, s.transformer);
  const Eigen::RowVectorXd mean = tokens.topRows(4).colwise().mean();
  for (Eigen::Index j = 0; j < 24; ++j) {
    CHECK(pooled.value()(0, j) == doctest::Approx(mean(j)).epsilon(1e-10));
  }
}

TEST_CASE("sequence pool: weights are a padded softmax over the logits") {
  Setup s = make_setup(67);
  Rng rng(69);
  const ad::Mat tokens = oracle::random_mat(7, 24, rng);
  std::vector<std::uint8_t> pad{0, 1, 0, 0, 1, 0, 0};

  // reconstruct the weights from the same logit map
  ad::Tensor logits = ad::add_rowvec(
      ad::matmul(ad::constant(tokens), s.transformer.pool_w),
      s.transformer.pool_b);
  std::vector<std::uint8_t> keep(pad.size());
  for (std::size_t i = 0; i < pad.size(); ++i) keep[i] = pad[i] ? 0 : 1;
  const ad::Tensor weights = ad::masked_softmax_col(logits, keep);

  double sum = 0.0;
  for (std::size_t i = 0; i < pad.size(); ++i) {
    const double w = weights.value()(static_cast<Eigen::Index>(i), 0);
    CHECK(w >= 0.0);
    if (pad[i]) CHECK(w == 0.0);
    sum += w;
  }
  CHECK(std::abs(sum - 1.0) < 1e-7);

  const ad::Tensor pooled =
      sequence_pool(ad::constant(tokens), pad, s.transformer);
  const ad::Mat manual = weights.value().transpose() * tokens;
  CHECK((pooled.value() - manual).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sequence pool: all padding is rejected") {
  Setup s = make_setup(71);
  const ad::Tensor tokens = ad::constant(ad::Mat::Zero(3, 24));
  std::vector<std::uint8_t> pad{1, 1, 1};
  CHECK_THROWS_AS(sequence_pool(tokens, pad, s.transformer), Error);
}

TEST_CASE("decode: zero head yields zero patches, shapes follow the config") {
  Setup s = make_setup(73, 6, 24, 5);
  Rng rng(75);
  const PointCloud cloud = oracle::random_cloud(50, true, rng);
  const TokenSequence seq = sequence_from_cloud(cloud, s, 4, 2);
  const AttentionMask mask = build_decoder_mask(4, 2, 0.5, 0.0, 7);
  const EncoderOutput enc =
      encode(seq, EncodeMode::kReconstruction, &mask, s.transformer);

  s.transformer.head_w.mutable_value().setZero();
  s.transformer.head_b.mutable_value().setZero();
  const ad::Tensor pred = decode_and_predict(enc, seq, mask, s.transformer);
  CHECK(pred.rows() == 4);
  CHECK(pred.cols() == 5 * 6);  // k * (3 + 3 color)
  CHECK(pred.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decode: chamfer gradient through the head passes finite differences") {
  Setup s = make_setup(79, 3, 24, 4);
  Rng rng(81);
  const PointCloud cloud = oracle::random_cloud(40, false, rng);
  PatchSet sorted;
  const TokenSequence seq = sequence_from_cloud(cloud, s, 3, 0, &sorted);
  const AttentionMask mask = build_decoder_mask(3, 0, 0.3, 0.0, 9);

  std::vector<PatchPoints> gt;
  for (std::size_t p = 0; p < 3; ++p) {
    gt.push_back(PatchPoints::from_patch(sorted, p));
  }
  auto loss = [&] {
    const EncoderOutput enc =
        encode(seq, EncodeMode::kReconstruction, &mask, s.transformer);
    const ad::Tensor pred = decode_and_predict(enc, seq, mask, s.transformer);
    return aux_loss(pred, gt, false);
  };
  CHECK(oracle::gradient_check(s.transformer.head_w, loss) < 1e-5);
  CHECK(oracle::gradient_check(s.transformer.head_b, loss) < 1e-5);
}

TEST_CASE("padding token embedding receives no gradient") {
  Setup s = make_setup(83);
  Rng rng(85);
  const PointCloud cloud = oracle::random_cloud(60, false, rng);
  PatchSet sorted;
  const TokenSequence seq = sequence_from_cloud(cloud, s, 4, 6, &sorted);

  const auto pad_grad_is_zero = [&] {
    return !s.tokenizer.pad_embed.has_grad() ||
           s.tokenizer.pad_embed.grad().cwiseAbs().maxCoeff() == 0.0;
  };

  SUBCASE("rl mode pooled loss") {
    s.tokenizer.set.zero_grad();
    const EncoderOutput out = encode(seq, EncodeMode::kRl, nullptr, s.transformer);
    ad::backward(ad::mean_all(out.pooled));
    CHECK(pad_grad_is_zero());
  }

  SUBCASE("reconstruction loss") {
    s.tokenizer.set.zero_grad();
    const AttentionMask mask = build_decoder_mask(4, 6, 0.4, 0.1, 3);
    const EncoderOutput out =
        encode(seq, EncodeMode::kReconstruction, &mask, s.transformer);
    const ad::Tensor pred = decode_and_predict(out, seq, mask, s.transformer);
    std::vector<PatchPoints> gt;
    for (std::size_t p = 0; p < 4; ++p) {
      gt.push_back(PatchPoints::from_patch(sorted, p));
    }
    ad::backward(aux_loss(pred, gt, false));
    CHECK(pad_grad_is_zero());
  }
}

TEST_CASE("encode and decode stay finite across random mask settings") {
  Setup s = make_setup(89);
  Rng rng(91);
  for (int rep = 0; rep < 10; ++rep) {
    const PointCloud cloud = oracle::random_cloud(50 + rng.index(50), false, rng);
    const std::size_t n = 1 + rng.index(6);
    const std::size_t n_pad = rng.index(5);
    PatchSet sorted;
    const TokenSequence seq = sequence_from_cloud(cloud, s, n, n_pad, &sorted);
    const AttentionMask mask = build_decoder_mask(
        n, n_pad, rng.uniform01(), rng.uniform01(), rng.next_u64());
    const EncoderOutput enc =
        encode(seq, EncodeMode::kReconstruction, &mask, s.transformer);
    CHECK_FALSE(enc.encoded.value().hasNaN());
    const ad::Tensor pred = decode_and_predict(enc, seq, mask, s.transformer);
    CHECK_FALSE(pred.value().hasNaN());
    CHECK(pred.value().allFinite());
  }
}

TEST_CASE("fuse_state: absent, zero and random states") {
  Setup s = make_setup(93);
  Rng rng(95);
  const ad::Tensor pooled = ad::constant(oracle::random_mat(1, 24, rng));

  const ad::Tensor same = fuse_state(pooled, std::nullopt, s.transformer);
  CHECK(same.raw() == pooled.raw());

  const std::optional<std::vector<double>> zero{{0.0, 0.0, 0.0}};
  const ad::Tensor fused = fuse_state(pooled, zero, s.transformer);
  REQUIRE(fused.cols() == 48);
  CHECK((fused.value().leftCols(24) - pooled.value()).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(fused.value().rightCols(24).cwiseAbs().maxCoeff() == 0.0);  // zero bias

  const std::optional<std::vector<double>> state{{0.3, -0.4, 0.9}};
  CHECK(fuse_state(pooled, state, s.transformer).cols() == 48);
}
