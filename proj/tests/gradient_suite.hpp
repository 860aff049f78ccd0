// Finite-difference checks for every differentiable operation, shared
// between the unit tests and the acceptance suite.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "attention_mask.hpp"
#include "oracles.hpp"

namespace gradient_suite {

using pprl::AttentionMask;
using pprl::Rng;
namespace ad = pprl::ad;

struct Result {
  std::string op;
  double max_rel_error = 0.0;
  int cases = 0;
};

// Random values kept away from the kinks of elu/clamp/max so central
// differences stay valid.
inline ad::Mat smooth_random(Eigen::Index r, Eigen::Index c, Rng& rng,
                             double lo = 0.1, double hi = 1.5) {
  ad::Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      const double mag = rng.uniform(lo, hi);
      m(i, j) = rng.uniform01() < 0.5 ? -mag : mag;
    }
  }
  return m;
}

inline AttentionMask random_mask(std::size_t s, Rng& rng, double density = 0.6) {
  AttentionMask mask(s);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      mask.set(i, j, rng.uniform01() < density);
    }
  }
  return mask;
}

inline std::vector<Result> run_core_suite(int cases_per_op, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Result> results;

  // every scenario rebuilds its forward pass from the current input values;
  // the checker perturbs entries and compares against the recorded gradient
  auto run = [&](const std::string& name,
                 const std::function<double(Rng&)>& one_case) {
    Result res;
    res.op = name;
    res.cases = cases_per_op;
    for (int c = 0; c < cases_per_op; ++c) {
      res.max_rel_error = std::max(res.max_rel_error, one_case(rng));
    }
    results.push_back(res);
  };

  auto weighted_sum = [](const ad::Tensor& t, const ad::Mat& w) {
    return ad::sum_all(ad::mul(t, ad::constant(w)));
  };

  run("add", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(3, 4, r));
    ad::Tensor b = ad::parameter(smooth_random(3, 4, r));
    const ad::Mat w = oracle::random_mat(3, 4, r);
    auto loss = [&] { return weighted_sum(ad::add(a, b), w); };
    return std::max(oracle::gradient_check(a, loss),
                    oracle::gradient_check(b, loss));
  });

  run("add_rowvec", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(4, 5, r));
    ad::Tensor b = ad::parameter(smooth_random(1, 5, r));
    const ad::Mat w = oracle::random_mat(4, 5, r);
    auto loss = [&] { return weighted_sum(ad::add_rowvec(a, b), w); };
    return std::max(oracle::gradient_check(a, loss),
                    oracle::gradient_check(b, loss));
  });

  run("add_scalar/neg/sub", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(3, 3, r));
    ad::Tensor b = ad::parameter(smooth_random(3, 3, r));
    const ad::Mat w = oracle::random_mat(3, 3, r);
    auto loss = [&] {
      return weighted_sum(ad::sub(ad::add_scalar(a, 0.7), ad::neg(b)), w);
    };
    return std::max(oracle::gradient_check(a, loss),
                    oracle::gradient_check(b, loss));
  });

  run("mul", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(4, 3, r));
    ad::Tensor b = ad::parameter(smooth_random(4, 3, r));
    const ad::Mat w = oracle::random_mat(4, 3, r);
    auto loss = [&] { return weighted_sum(ad::mul(a, b), w); };
    return std::max(oracle::gradient_check(a, loss),
                    oracle::gradient_check(b, loss));
  });

  run("mul_scalar", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(2, 6, r));
    const ad::Mat w = oracle::random_mat(2, 6, r);
    auto loss = [&] { return weighted_sum(ad::mul_scalar(a, -1.3), w); };
    return oracle::gradient_check(a, loss);
  });

  run("exp", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(3, 4, r, 0.05, 1.0));
    const ad::Mat w = oracle::random_mat(3, 4, r);
    auto loss = [&] { return weighted_sum(ad::exp(a), w); };
    return oracle::gradient_check(a, loss);
  });

  run("log", [&](Rng& r) {
    ad::Mat pos = smooth_random(3, 4, r, 0.5, 2.0).array().abs().matrix();
    ad::Tensor a = ad::parameter(std::move(pos));
    const ad::Mat w = oracle::random_mat(3, 4, r);
    auto loss = [&] { return weighted_sum(ad::log(a), w); };
    return oracle::gradient_check(a, loss);
  });

  run("tanh", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(3, 4, r));
    const ad::Mat w = oracle::random_mat(3, 4, r);
    auto loss = [&] { return weighted_sum(ad::tanh(a), w); };
    return oracle::gradient_check(a, loss);
  });

  run("elu", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(3, 4, r, 0.1, 2.0));
    const ad::Mat w = oracle::random_mat(3, 4, r);
    auto loss = [&] { return weighted_sum(ad::elu(a), w); };
    return oracle::gradient_check(a, loss);
  });

  run("softplus", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(3, 4, r, 0.1, 3.0));
    const ad::Mat w = oracle::random_mat(3, 4, r);
    auto loss = [&] { return weighted_sum(ad::softplus(a), w); };
    return oracle::gradient_check(a, loss);
  });

  run("clamp", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(3, 4, r, 0.1, 2.0));
    const ad::Mat w = oracle::random_mat(3, 4, r);
    auto loss = [&] { return weighted_sum(ad::clamp(a, -1.0, 1.0), w); };
    return oracle::gradient_check(a, loss, 1e-6);
  });

  run("min_elem", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(3, 4, r));
    ad::Tensor b = ad::parameter(smooth_random(3, 4, r));
    const ad::Mat w = oracle::random_mat(3, 4, r);
    auto loss = [&] { return weighted_sum(ad::min_elem(a, b), w); };
    return std::max(oracle::gradient_check(a, loss, 1e-7),
                    oracle::gradient_check(b, loss, 1e-7));
  });

  run("matmul", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(5, 7, r));
    ad::Tensor b = ad::parameter(smooth_random(7, 3, r));
    const ad::Mat w = oracle::random_mat(5, 3, r);
    auto loss = [&] { return weighted_sum(ad::matmul(a, b), w); };
    return std::max(oracle::gradient_check(a, loss),
                    oracle::gradient_check(b, loss));
  });

  run("transpose/reshape", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(4, 6, r));
    const ad::Mat w = oracle::random_mat(8, 3, r);
    auto loss = [&] {
      return weighted_sum(ad::reshape(ad::transpose(a), 8, 3), w);
    };
    return oracle::gradient_check(a, loss);
  });

  run("concat_rows/cols", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(2, 3, r));
    ad::Tensor b = ad::parameter(smooth_random(3, 3, r));
    ad::Tensor c = ad::parameter(smooth_random(5, 2, r));
    const ad::Mat w = oracle::random_mat(5, 5, r);
    auto loss = [&] {
      const ad::Tensor parts[] = {a, b};
      return weighted_sum(ad::concat_cols(ad::concat_rows(parts), c), w);
    };
    return std::max({oracle::gradient_check(a, loss),
                     oracle::gradient_check(b, loss),
                     oracle::gradient_check(c, loss)});
  });

  run("slice_rows/cols", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(6, 6, r));
    const ad::Mat w = oracle::random_mat(3, 2, r);
    auto loss = [&] {
      return weighted_sum(ad::slice_cols(ad::slice_rows(a, 1, 3), 2, 2), w);
    };
    return oracle::gradient_check(a, loss);
  });

  run("gather_rows", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(5, 4, r));
    std::vector<std::size_t> idx{4, 0, 2, 0, 1};  // repeats included
    const ad::Mat w = oracle::random_mat(5, 4, r);
    auto loss = [&] { return weighted_sum(ad::gather_rows(a, idx), w); };
    return oracle::gradient_check(a, loss);
  });

  run("repeat_rows", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(3, 4, r));
    const ad::Mat w = oracle::random_mat(9, 4, r);
    auto loss = [&] { return weighted_sum(ad::repeat_rows(a, 3), w); };
    return oracle::gradient_check(a, loss);
  });

  run("reduce_max", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(4, 5, r));
    const ad::Mat w0 = oracle::random_mat(1, 5, r);
    const ad::Mat w1 = oracle::random_mat(4, 1, r);
    auto loss = [&] {
      return ad::add(weighted_sum(ad::reduce_max(a, 0), w0),
                     weighted_sum(ad::reduce_max(a, 1), w1));
    };
    return oracle::gradient_check(a, loss, 1e-7);
  });

  run("rowgroup_max", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(8, 3, r));
    const ad::Mat w = oracle::random_mat(2, 3, r);
    auto loss = [&] { return weighted_sum(ad::rowgroup_max(a, 4), w); };
    return oracle::gradient_check(a, loss, 1e-7);
  });

  run("reduce_mean/sum", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(4, 5, r));
    const ad::Mat w0 = oracle::random_mat(1, 5, r);
    const ad::Mat w1 = oracle::random_mat(4, 1, r);
    auto loss = [&] {
      return ad::add(weighted_sum(ad::reduce_mean(a, 0), w0),
                     weighted_sum(ad::reduce_sum(a, 1), w1));
    };
    return oracle::gradient_check(a, loss);
  });

  run("mean_all", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(3, 7, r));
    auto loss = [&] { return ad::mean_all(ad::mul(a, a)); };
    return oracle::gradient_check(a, loss);
  });

  run("softmax_rows", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(4, 6, r));
    const ad::Mat w = oracle::random_mat(4, 6, r);
    auto loss = [&] { return weighted_sum(ad::softmax_rows(a), w); };
    return oracle::gradient_check(a, loss);
  });

  run("masked_softmax_rows", [&](Rng& r) {
    const std::size_t s = 6;
    ad::Tensor a = ad::parameter(smooth_random(s, s, r));
    const AttentionMask mask = random_mask(s, r);
    const ad::Mat w = oracle::random_mat(s, s, r);
    auto loss = [&] { return weighted_sum(ad::masked_softmax_rows(a, mask), w); };
    return oracle::gradient_check(a, loss);
  });

  run("masked_softmax_col", [&](Rng& r) {
    ad::Tensor a = ad::parameter(smooth_random(7, 1, r));
    std::vector<std::uint8_t> keep(7, 0);
    for (int i = 0; i < 7; ++i) keep[i] = r.uniform01() < 0.7 ? 1 : 0;
    keep[2] = 1;
    const ad::Mat w = oracle::random_mat(7, 1, r);
    auto loss = [&] { return weighted_sum(ad::masked_softmax_col(a, keep), w); };
    return oracle::gradient_check(a, loss);
  });

  run("layer_norm_rows", [&](Rng& r) {
    ad::Tensor x = ad::parameter(smooth_random(4, 6, r));
    ad::Tensor g = ad::parameter(smooth_random(1, 6, r, 0.5, 1.5));
    ad::Tensor b = ad::parameter(smooth_random(1, 6, r, 0.0, 0.5));
    const ad::Mat w = oracle::random_mat(4, 6, r);
    auto loss = [&] { return weighted_sum(ad::layer_norm_rows(x, g, b), w); };
    return std::max({oracle::gradient_check(x, loss),
                     oracle::gradient_check(g, loss),
                     oracle::gradient_check(b, loss)});
  });

  run("attention", [&](Rng& r) {
    const std::size_t s = 6;
    const Eigen::Index dh = 4;
    ad::Tensor q = ad::parameter(smooth_random(s, dh, r));
    ad::Tensor k = ad::parameter(smooth_random(s, dh, r));
    ad::Tensor v = ad::parameter(smooth_random(s, dh, r));
    const AttentionMask mask = random_mask(s, r);
    const ad::Mat w = oracle::random_mat(s, dh, r);
    auto loss = [&] { return weighted_sum(ad::attention(q, k, v, mask), w); };
    return std::max({oracle::gradient_check(q, loss),
                     oracle::gradient_check(k, loss),
                     oracle::gradient_check(v, loss)});
  });

  return results;
}

}  // namespace gradient_suite
