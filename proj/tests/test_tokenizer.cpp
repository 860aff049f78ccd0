#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tokenizer.hpp"

using namespace pprl;

namespace {

TokenizerParams make_params(int features, Eigen::Index d, std::uint64_t seed,
                            Eigen::Index width = 16) {
  TokenizerConfig config;
  config.point_features = features;
  config.token_dim = d;
  config.pointnet_width = width;
  Rng rng(seed);
  return TokenizerParams::create(config, rng);
}

PatchSet single_patch(const std::vector<Vec3>& rel_points,
                      const Vec3& centroid) {
  PatchSet set;
  set.patch_size = rel_points.size();
  set.centroids = {centroid};
  set.patches = {rel_points};
  set.source_indices = {std::vector<std::size_t>(rel_points.size(), 0)};
  return set;
}

// the reference encoding re-derived from its definition
double reference_channel(double coord, Eigen::Index pair, Eigen::Index pairs,
                         bool sine) {
  const double expo =
      pairs > 1 ? 4.0 * double(pair) / double(pairs - 1) : 0.0;
  const double wavelength = 2.0 * std::pow(10.0, expo);
  const double angle = 2.0 * M_PI * coord / wavelength;
  return sine ? std::sin(angle) : std::cos(angle);
}

}  // namespace

TEST_CASE("embed: k identical points collapse to the single-point token") {
  TokenizerParams params = make_params(3, 24, 1);
  const Vec3 p{0.2, -0.1, 0.4};
  const ad::Tensor one = embed_patches(single_patch({p}, {0, 0, 0}), params);
  const ad::Tensor many =
      embed_patches(single_patch({p, p, p, p, p}, {0, 0, 0}), params);
  REQUIRE(one.cols() == many.cols());
  for (Eigen::Index j = 0; j < one.cols(); ++j) {
    CHECK(one.value()(0, j) == many.value()(0, j));  // bitwise
  }
}

TEST_CASE("embed: invariant to point order inside a patch") {
  TokenizerParams params = make_params(3, 24, 2);
  Rng rng(3);
  std::vector<Vec3> pts(8);
  for (auto& p : pts) {
    p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  }
  std::vector<Vec3> shuffled = pts;
  rng.shuffle(shuffled);
  const ad::Tensor a = embed_patches(single_patch(pts, {0, 0, 0}), params);
  const ad::Tensor b = embed_patches(single_patch(shuffled, {0, 0, 0}), params);
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    CHECK(a.value()(0, j) == b.value()(0, j));  // bitwise
  }
}

TEST_CASE("embed: gradient check through both MLPs") {
  TokenizerParams params = make_params(3, 32, 4, 8);
  Rng rng(5);
  const ad::Mat pts = oracle::random_mat(6, 3, rng);
  auto loss = [&] {
    ad::Tensor x = ad::constant(pts);
    return ad::mean_all(embed_patch_matrix(x, 6, params));
  };
  for (auto* t : {&params.w1a, &params.b1a, &params.w1b, &params.b1b,
                  &params.w2a, &params.b2a, &params.w2b, &params.b2b}) {
    CHECK(oracle::gradient_check(*t, loss) < 1e-6);
  }
}

TEST_CASE("embed: token invariant to rigid translation when colors absent") {
  TokenizerConfig tc;
  tc.point_features = 3;
  tc.token_dim = 18;
  tc.pointnet_width = 8;
  Rng prng(6);
  TokenizerParams params = TokenizerParams::create(tc, prng);

  Rng rng(7);
  PointCloud cloud = oracle::random_cloud(60, false, rng);
  const auto centers = farthest_point_sample(cloud, 4, 9);
  const PatchSet before = knn_group(cloud, centers, 8);

  PointCloud moved = cloud;
  const Vec3 shift{0.37, -1.2, 2.05};
  for (Vec3& p : moved.positions) {
    for (int a = 0; a < 3; ++a) p[a] += shift[a];
  }
  const PatchSet after = knn_group(moved, farthest_point_sample(moved, 4, 9), 8);

  const ad::Tensor ta = embed_patches(before, params);
  const ad::Tensor tb = embed_patches(after, params);
  CHECK((ta.value() - tb.value()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("embed: feature width mismatch is rejected") {
  TokenizerParams params = make_params(3, 24, 8);
  PatchSet colored = single_patch({{0, 0, 0}}, {0, 0, 0});
  colored.has_colors = true;
  colored.patch_colors = {{{0.5, 0.5, 0.5}}};
  CHECK_THROWS_AS(embed_patches(colored, params), Error);
}

TEST_CASE("positional encoding: origin gives sines 0 and cosines 1") {
  const ad::Mat enc = positional_encoding_values({{0, 0, 0}}, 24);
  for (Eigen::Index j = 0; j < 24; j += 2) {
    CHECK(enc(0, j) == 0.0);
    CHECK(enc(0, j + 1) == 1.0);
  }
}

TEST_CASE("positional encoding: equal locations share the encoding") {
  const ad::Mat enc =
      positional_encoding_values({{0.3, 0.7, -0.2}, {0.3, 0.7, -0.2}}, 48);
  CHECK((enc.row(0) - enc.row(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("positional encoding: matches the reference formula") {
  Rng rng(11);
  std::vector<Vec3> pts(10);
  for (auto& p : pts) {
    p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  }
  const Eigen::Index d = 48;
  const Eigen::Index pairs = d / 6;
  const ad::Mat enc = positional_encoding_values(pts, d);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (int axis = 0; axis < 3; ++axis) {
      for (Eigen::Index pr = 0; pr < pairs; ++pr) {
        const Eigen::Index base = axis * (d / 3) + 2 * pr;
        CHECK(enc(i, base) ==
              doctest::Approx(reference_channel(pts[i][axis], pr, pairs, true))
                  .epsilon(1e-12));
        CHECK(enc(i, base + 1) ==
              doctest::Approx(reference_channel(pts[i][axis], pr, pairs, false))
                  .epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("positional encoding: width must divide by 6") {
  try {
    positional_encoding_values({{0, 0, 0}}, 32);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::config);
  }
}

TEST_CASE("relative directions: collinear equal spacing repeats the row") {
  std::vector<Vec3> centroids;
  for (int i = 0; i < 5; ++i) {
    centroids.push_back({0.1 * i, 0.2 * i, -0.05 * i});
  }
  const ad::Mat feats = relative_direction_features(centroids, 24);
  for (int i = 2; i < 5; ++i) {
    CHECK((feats.row(i) - feats.row(1)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("relative directions: single centroid encodes its absolute location") {
  const std::vector<Vec3> one{{0.4, -0.3, 0.9}};
  const ad::Mat feats = relative_direction_features(one, 24);
  const ad::Mat direct = positional_encoding_values(one, 24);
  CHECK((feats - direct).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("relative directions: invariant to translation and positive scaling") {
  Rng rng(13);
  std::vector<Vec3> centroids(7);
  for (auto& c : centroids) {
    c = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  }
  std::vector<Vec3> scaled = centroids;
  for (auto& c : scaled) {
    for (int a = 0; a < 3; ++a) c[a] = 5.0 * c[a] + 2.0;
  }
  const ad::Mat fa = relative_direction_features(centroids, 30);
  const ad::Mat fb = relative_direction_features(scaled, 30);
  // row 0 encodes the absolute location and is expected to differ
  CHECK((fa.bottomRows(6) - fb.bottomRows(6)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("relative directions: coincident centroids map the zero direction") {
  const std::vector<Vec3> centroids{{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}};
  const ad::Mat feats = relative_direction_features(centroids, 24);
  const ad::Mat zero = positional_encoding_values({{0, 0, 0}}, 24);
  CHECK((feats.row(1) - zero.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("relative direction encoding: gradients flow into the projection") {
  Rng rng(17);
  ad::Tensor proj = ad::parameter(oracle::random_mat(18, 18, rng, 0.3));
  std::vector<Vec3> centroids(4);
  for (auto& c : centroids) {
    c = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  }
  const ad::Mat w = oracle::random_mat(4, 18, rng);
  auto loss = [&] {
    return ad::sum_all(
        ad::mul(relative_direction_encoding(centroids, proj), ad::constant(w)));
  };
  // linear in proj, so a wide step only suppresses roundoff
  CHECK(oracle::gradient_check(proj, loss, 1e-4) < 1e-6);
}

TEST_CASE("token sequences: Morton order, padding flags and pad embedding") {
  TokenizerParams params = make_params(3, 24, 19);
  Rng rng(21);
  const PointCloud cloud = oracle::random_cloud(80, false, rng);
  const auto centers = farthest_point_sample(cloud, 6, 3);
  const PatchSet patches = knn_group(cloud, centers, 8);

  const TokenSequence seq = make_token_sequence(patches, params, 3);
  CHECK(seq.n_real == 6);
  CHECK(seq.n_total() == 9);
  for (std::size_t i = 0; i < seq.n_total(); ++i) {
    CHECK(seq.is_padding[i] == (i >= 6 ? 1 : 0));
  }

  // real rows follow the Morton rank of the original centroids
  const auto order = morton_rank(patches.centroids);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(seq.centroids[i] == patches.centroids[order[i]]);
  }
  for (std::size_t i = 6; i < 9; ++i) {
    CHECK(seq.centroids[i] == Vec3{0, 0, 0});
    for (Eigen::Index j = 0; j < 24; ++j) {
      CHECK(seq.tokens.value()(static_cast<Eigen::Index>(i), j) ==
            params.pad_embed.value()(0, j));
    }
  }
}

TEST_CASE("token sequences: batch path pads to the longest cloud") {
  TokenizerParams params = make_params(3, 24, 23);
  Rng rng(25);
  const PointCloud big = oracle::random_cloud(100, false, rng);
  const PointCloud small = oracle::random_cloud(30, false, rng);

  std::vector<PatchSet> sets;
  sets.push_back(knn_group(big, farthest_point_sample(big, 8, 1), 8));
  sets.push_back(knn_group(small, farthest_point_sample(small, 3, 1), 8));

  std::vector<PatchSet> sorted;
  const auto seqs = make_token_sequences(sets, params, &sorted);
  REQUIRE(seqs.size() == 2);
  CHECK(seqs[0].n_total() == 8);
  CHECK(seqs[1].n_total() == 8);
  CHECK(seqs[1].n_real == 3);
  CHECK(sorted[1].patch_count() == 3);

  // the batch path and the single path agree on token values
  const TokenSequence solo = make_token_sequence(sets[0], params, 0);
  CHECK((solo.tokens.value() - seqs[0].tokens.value().topRows(8))
            .cwiseAbs()
            .maxCoeff() == 0.0);
}
