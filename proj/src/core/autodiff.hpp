#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attention_mask.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace pprl::ad {

// Dense row-major matrices; every tensor in the engine is matrix-shaped
// (vectors are n x 1 or 1 x n, scalars 1 x 1).
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Mat value;
  Mat grad;  // lazily allocated; backward accumulates, never overwrites
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Mat& g);
  bool has_grad() const { return grad.size() > 0; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::vector<std::int64_t> shape() const { return {rows(), cols()}; }

  double scalar() const {
    require(rows() == 1 && cols() == 1, ErrorCode::invalid_argument,
            "Tensor::scalar: tensor is not 1x1");
    return node_->value(0, 0);
  }

  void zero_grad() { node_->grad.resize(0, 0); }

  Node* raw() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

// Leaf constructors.
Tensor constant(Mat value);
Tensor constant_scalar(double v);
Tensor parameter(Mat value);
Tensor zeros(Eigen::Index rows, Eigen::Index cols);

// Disables graph recording in the enclosing scope (target computation,
// action selection, evaluation).
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

bool grad_enabled();

// Reverse-topologically ordered view of every recorded node reachable from a
// root; running it accumulates gradients into the leaves.
struct Graph {
  std::vector<Node*> order;  // reverse topological

  static Graph from(const Tensor& root);
  void run(Node* root);
};

// Seeds d(root)/d(root) = 1 and accumulates into every reachable grad.
void backward(const Tensor& root);

// --- elementwise and scalar ops ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& a, const Tensor& row);  // row: 1 x c
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor elu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor min_elem(const Tensor& a, const Tensor& b);  // ties take a

// --- structural ops ---
// Row-stable product: row i of the result depends only on row i of a, with a
// fixed accumulation order over the inner dimension.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, Eigen::Index begin, Eigen::Index count);
Tensor slice_cols(const Tensor& a, Eigen::Index begin, Eigen::Index count);
Tensor gather_rows(const Tensor& a, std::vector<std::size_t> indices);
Tensor repeat_rows(const Tensor& a, Eigen::Index times);
Tensor detach(const Tensor& a);

// --- reductions (argmax ties resolve to the lowest index) ---
Tensor reduce_max(const Tensor& a, int axis);
Tensor rowgroup_max(const Tensor& a, Eigen::Index group);  // [g*n, c] -> [n, c]
Tensor reduce_mean(const Tensor& a, int axis);
Tensor reduce_sum(const Tensor& a, int axis);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);

// --- normalization / attention ---
Tensor softmax_rows(const Tensor& a);
// Rows with an empty visible set produce all-zero weights (and zero
// gradient); visible entries follow the usual softmax.
Tensor masked_softmax_rows(const Tensor& logits, const AttentionMask& mask);
// Softmax over the rows of a column vector restricted to kept entries.
Tensor masked_softmax_col(const Tensor& logits,
                          const std::vector<std::uint8_t>& keep);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);
// Scaled dot-product attention with visibility masking; fully masked rows
// output zeros instead of NaN.
Tensor attention(const Tensor& query, const Tensor& key, const Tensor& value,
                 const AttentionMask& mask);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }

// --- parameters and optimization ---

// Named parameter registry; registration order is the serialization order.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor add(const std::string& name, Mat value) {
    Tensor t = parameter(std::move(value));
    items.emplace_back(name, t);
    return t;
  }

  // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights.
  Tensor add_linear_weight(const std::string& name, Eigen::Index in,
                           Eigen::Index out, Rng& rng);
  Tensor add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  Tensor find(const std::string& name) const;
  void zero_grad();
  void append(const ParamSet& other);
  std::size_t total_size() const;
};

// Standard Adam with bias correction. Moment buffers are created on first
// step and serialize with the checkpoint.
class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<const std::pair<std::string, Tensor>> params);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::int64_t step_count() const { return t_; }

  struct Slot {
    Mat m, v;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace pprl::ad
