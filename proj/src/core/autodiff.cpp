#include "autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace pprl::ad {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

thread_local int g_nograd_depth = 0;

NodePtr new_node(Mat value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

// Builds an op node; drops the graph edges when recording is off or no
// parent needs gradients.
Tensor make_op(Mat value, std::vector<NodePtr> parents,
               std::function<void(Node&)> backward_fn) {
  NodePtr node = new_node(std::move(value));
  bool needs = false;
  if (grad_enabled()) {
    for (const NodePtr& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(node);
}

Mat& grad_storage(Node& node) {
  if (!node.has_grad()) {
    node.grad = Mat::Zero(node.value.rows(), node.value.cols());
  }
  return node.grad;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          ErrorCode::invalid_argument,
          std::string(op) + ": shape mismatch");
}

// C += A * B with a fixed accumulation order: row i of C is built from row i
// of A alone, scanning the inner dimension ascending in groups of four. The
// per-row expression depends only on the inner size, so every row's result is
// independent of the other rows (sequence truncation and permutation change
// nothing bitwise).
void axpy_matmul_acc(Mat& c, const Mat& a, const Mat& b) {
  const Eigen::Index m = a.rows();
  const Eigen::Index kk = a.cols();
  const Eigen::Index n = b.cols();
  const Eigen::Index k4 = kk - kk % 4;
  for (Eigen::Index i = 0; i < m; ++i) {
    double* __restrict crow = c.data() + i * n;
    const double* __restrict arow = a.data() + i * kk;
    Eigen::Index k = 0;
    for (; k < k4; k += 4) {
      const double s0 = arow[k], s1 = arow[k + 1];
      const double s2 = arow[k + 2], s3 = arow[k + 3];
      const double* __restrict b0 = b.data() + k * n;
      const double* __restrict b1 = b0 + n;
      const double* __restrict b2 = b1 + n;
      const double* __restrict b3 = b2 + n;
      for (Eigen::Index j = 0; j < n; ++j) {
        crow[j] += s0 * b0[j] + s1 * b1[j] + s2 * b2[j] + s3 * b3[j];
      }
    }
    for (; k < kk; ++k) {
      const double s = arow[k];
      if (s == 0.0) continue;
      const double* __restrict brow = b.data() + k * n;
      for (Eigen::Index j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

Mat axpy_matmul(const Mat& a, const Mat& b) {
  Mat c = Mat::Zero(a.rows(), b.cols());
  axpy_matmul_acc(c, a, b);
  return c;
}

}  // namespace

void Node::accumulate(const Mat& g) {
  if (!has_grad()) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor constant(Mat value) { return Tensor(new_node(std::move(value))); }

Tensor constant_scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Tensor parameter(Mat value) {
  NodePtr node = new_node(std::move(value));
  node->requires_grad = true;
  return Tensor(node);
}

Tensor zeros(Eigen::Index rows, Eigen::Index cols) {
  return constant(Mat::Zero(rows, cols));
}

NoGrad::NoGrad() { ++g_nograd_depth; }
NoGrad::~NoGrad() { --g_nograd_depth; }

bool grad_enabled() { return g_nograd_depth == 0; }

Graph Graph::from(const Tensor& root) {
  Graph graph;
  if (!root.raw()->requires_grad) return graph;

  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.raw()};
  seen.insert(root.raw());
  while (!stack.empty()) {
    Node* node = stack.back();
    stack.pop_back();
    graph.order.push_back(node);
    for (const NodePtr& p : node->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) {
        stack.push_back(p.get());
      }
    }
  }
  // ids increase with creation, and parents precede children
  std::sort(graph.order.begin(), graph.order.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });
  return graph;
}

void Graph::run(Node* root) {
  // interior gradients are per-pass scratch; only leaves accumulate across
  // backward calls
  for (Node* node : order) {
    if (node->backward_fn) node->grad.resize(0, 0);
  }
  grad_storage(*root).array() += 1.0;
  for (Node* node : order) {
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
  }
}

void backward(const Tensor& root) {
  require(root.rows() == 1 && root.cols() == 1, ErrorCode::invalid_argument,
          "backward: root must be scalar");
  if (!root.raw()->requires_grad) return;
  Graph graph = Graph::from(root);
  graph.run(root.raw());
}

// --- elementwise ---

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  NodePtr pa = a.ptr(), pb = b.ptr();
  return make_op(pa->value + pb->value, {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
  require(row.rows() == 1 && row.cols() == a.cols(),
          ErrorCode::invalid_argument, "add_rowvec: row must be 1 x cols(a)");
  NodePtr pa = a.ptr(), pr = row.ptr();
  Mat out = pa->value;
  out.rowwise() += pr->value.row(0);
  return make_op(std::move(out), {pa, pr}, [pa, pr](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pr->requires_grad) pr->accumulate(self.grad.colwise().sum());
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  NodePtr pa = a.ptr();
  return make_op(pa->value.array() + s, {pa}, [pa](Node& self) {
    pa->accumulate(self.grad);
  });
}

Tensor neg(const Tensor& a) {
  NodePtr pa = a.ptr();
  return make_op(-pa->value, {pa}, [pa](Node& self) {
    grad_storage(*pa).noalias() -= self.grad;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  NodePtr pa = a.ptr(), pb = b.ptr();
  return make_op(pa->value - pb->value, {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) grad_storage(*pb).noalias() -= self.grad;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  NodePtr pa = a.ptr(), pb = b.ptr();
  return make_op(pa->value.cwiseProduct(pb->value), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) pb->accumulate(self.grad.cwiseProduct(pa->value));
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  NodePtr pa = a.ptr();
  return make_op(pa->value * s, {pa}, [pa, s](Node& self) {
    pa->accumulate(self.grad * s);
  });
}

Tensor exp(const Tensor& a) {
  NodePtr pa = a.ptr();
  return make_op(pa->value.array().exp(), {pa}, [pa](Node& self) {
    pa->accumulate(self.grad.cwiseProduct(self.value));
  });
}

Tensor log(const Tensor& a) {
  NodePtr pa = a.ptr();
  return make_op(pa->value.array().log(), {pa}, [pa](Node& self) {
    pa->accumulate(self.grad.cwiseQuotient(pa->value));
  });
}

Tensor tanh(const Tensor& a) {
  NodePtr pa = a.ptr();
  return make_op(pa->value.array().tanh(), {pa}, [pa](Node& self) {
    pa->accumulate(self.grad.cwiseProduct(
        (1.0 - self.value.array().square()).matrix()));
  });
}

Tensor elu(const Tensor& a) {
  NodePtr pa = a.ptr();
  Mat out = pa->value.unaryExpr(
      [](double x) { return x > 0.0 ? x : std::expm1(x); });
  return make_op(std::move(out), {pa}, [pa](Node& self) {
    // derivative is 1 for x > 0, exp(x) = elu(x) + 1 otherwise
    Mat factor = pa->value.binaryExpr(self.value, [](double x, double y) {
      return x > 0.0 ? 1.0 : y + 1.0;
    });
    pa->accumulate(self.grad.cwiseProduct(factor));
  });
}

Tensor softplus(const Tensor& a) {
  NodePtr pa = a.ptr();
  Mat out = pa->value.unaryExpr([](double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  });
  return make_op(std::move(out), {pa}, [pa](Node& self) {
    Mat sig = pa->value.unaryExpr(
        [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    pa->accumulate(self.grad.cwiseProduct(sig));
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  require(lo <= hi, ErrorCode::invalid_argument, "clamp: lo must be <= hi");
  NodePtr pa = a.ptr();
  Mat out = pa->value.unaryExpr(
      [lo, hi](double x) { return std::min(std::max(x, lo), hi); });
  return make_op(std::move(out), {pa}, [pa, lo, hi](Node& self) {
    Mat pass = pa->value.unaryExpr([lo, hi](double x) {
      return (x >= lo && x <= hi) ? 1.0 : 0.0;
    });
    pa->accumulate(self.grad.cwiseProduct(pass));
  });
}

Tensor min_elem(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "min_elem");
  NodePtr pa = a.ptr(), pb = b.ptr();
  Mat out = pa->value.cwiseMin(pb->value);
  return make_op(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    Mat take_a = pa->value.binaryExpr(pb->value, [](double x, double y) {
      return x <= y ? 1.0 : 0.0;
    });
    if (pa->requires_grad) pa->accumulate(self.grad.cwiseProduct(take_a));
    if (pb->requires_grad) {
      pb->accumulate(
          self.grad.cwiseProduct((1.0 - take_a.array()).matrix()));
    }
  });
}

// --- structural ---

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), ErrorCode::invalid_argument,
          "matmul: inner dimensions differ");
  NodePtr pa = a.ptr(), pb = b.ptr();
  return make_op(axpy_matmul(pa->value, pb->value), {pa, pb},
                 [pa, pb](Node& self) {
                   if (pa->requires_grad) {
                     Mat bt = pb->value.transpose();
                     axpy_matmul_acc(grad_storage(*pa), self.grad, bt);
                   }
                   if (pb->requires_grad) {
                     Mat& gb = grad_storage(*pb);
                     const Mat& av = pa->value;
                     for (Eigen::Index i = 0; i < av.rows(); ++i) {
                       for (Eigen::Index k = 0; k < av.cols(); ++k) {
                         const double s = av(i, k);
                         if (s != 0.0) gb.row(k) += s * self.grad.row(i);
                       }
                     }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  NodePtr pa = a.ptr();
  return make_op(pa->value.transpose(), {pa}, [pa](Node& self) {
    pa->accumulate(self.grad.transpose());
  });
}

Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == a.rows() * a.cols(), ErrorCode::invalid_argument,
          "reshape: element count must be preserved");
  NodePtr pa = a.ptr();
  Mat out = Eigen::Map<const Mat>(pa->value.data(), rows, cols);
  const Eigen::Index orows = a.rows(), ocols = a.cols();
  return make_op(std::move(out), {pa}, [pa, orows, ocols](Node& self) {
    pa->accumulate(Eigen::Map<const Mat>(self.grad.data(), orows, ocols));
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), ErrorCode::invalid_argument, "concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  std::vector<NodePtr> parents;
  parents.reserve(parts.size());
  for (const Tensor& t : parts) {
    require(t.cols() == cols, ErrorCode::invalid_argument,
            "concat_rows: column mismatch");
    rows += t.rows();
    parents.push_back(t.ptr());
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const Tensor& t : parts) {
    out.middleRows(at, t.rows()) = t.value();
    at += t.rows();
  }
  auto backward = [parents](Node& self) {
    Eigen::Index at = 0;
    for (const NodePtr& p : parents) {
      if (p->requires_grad) {
        grad_storage(*p).noalias() += self.grad.middleRows(at, p->value.rows());
      }
      at += p->value.rows();
    }
  };
  return make_op(std::move(out), parents, std::move(backward));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), ErrorCode::invalid_argument,
          "concat_cols: row mismatch");
  NodePtr pa = a.ptr(), pb = b.ptr();
  Mat out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = pa->value;
  out.rightCols(b.cols()) = pb->value;
  return make_op(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      grad_storage(*pa).noalias() += self.grad.leftCols(pa->value.cols());
    }
    if (pb->requires_grad) {
      grad_storage(*pb).noalias() += self.grad.rightCols(pb->value.cols());
    }
  });
}

Tensor slice_rows(const Tensor& a, Eigen::Index begin, Eigen::Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.rows(),
          ErrorCode::invalid_argument, "slice_rows: out of range");
  NodePtr pa = a.ptr();
  return make_op(pa->value.middleRows(begin, count), {pa},
                 [pa, begin, count](Node& self) {
                   grad_storage(*pa).middleRows(begin, count).noalias() +=
                       self.grad;
                 });
}

Tensor slice_cols(const Tensor& a, Eigen::Index begin, Eigen::Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.cols(),
          ErrorCode::invalid_argument, "slice_cols: out of range");
  NodePtr pa = a.ptr();
  return make_op(pa->value.middleCols(begin, count), {pa},
                 [pa, begin, count](Node& self) {
                   grad_storage(*pa).middleCols(begin, count).noalias() +=
                       self.grad;
                 });
}

Tensor gather_rows(const Tensor& a, std::vector<std::size_t> indices) {
  NodePtr pa = a.ptr();
  Mat out(static_cast<Eigen::Index>(indices.size()), a.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < static_cast<std::size_t>(a.rows()),
            ErrorCode::invalid_argument, "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = pa->value.row(indices[i]);
  }
  return make_op(std::move(out), {pa},
                 [pa, idx = std::move(indices)](Node& self) {
                   Mat& g = grad_storage(*pa);
                   for (std::size_t i = 0; i < idx.size(); ++i) {
                     g.row(idx[i]) += self.grad.row(i);
                   }
                 });
}

Tensor repeat_rows(const Tensor& a, Eigen::Index times) {
  require(times >= 1, ErrorCode::invalid_argument,
          "repeat_rows: times must be >= 1");
  NodePtr pa = a.ptr();
  Mat out(a.rows() * times, a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index t = 0; t < times; ++t) {
      out.row(i * times + t) = pa->value.row(i);
    }
  }
  return make_op(std::move(out), {pa}, [pa, times](Node& self) {
    Mat& g = grad_storage(*pa);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      for (Eigen::Index t = 0; t < times; ++t) {
        g.row(i) += self.grad.row(i * times + t);
      }
    }
  });
}

Tensor detach(const Tensor& a) { return constant(a.value()); }

// --- reductions ---

Tensor reduce_max(const Tensor& a, int axis) {
  require(axis == 0 || axis == 1, ErrorCode::invalid_argument,
          "reduce_max: axis must be 0 or 1");
  NodePtr pa = a.ptr();
  const Mat& v = pa->value;
  if (axis == 0) {
    Mat out(1, v.cols());
    std::vector<Eigen::Index> arg(v.cols());
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < v.rows(); ++i) {
        if (v(i, j) > v(best, j)) best = i;
      }
      arg[j] = best;
      out(0, j) = v(best, j);
    }
    return make_op(std::move(out), {pa}, [pa, arg = std::move(arg)](Node& self) {
      Mat& g = grad_storage(*pa);
      for (Eigen::Index j = 0; j < g.cols(); ++j) g(arg[j], j) += self.grad(0, j);
    });
  }
  Mat out(v.rows(), 1);
  std::vector<Eigen::Index> arg(v.rows());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < v.cols(); ++j) {
      if (v(i, j) > v(i, best)) best = j;
    }
    arg[i] = best;
    out(i, 0) = v(i, best);
  }
  return make_op(std::move(out), {pa}, [pa, arg = std::move(arg)](Node& self) {
    Mat& g = grad_storage(*pa);
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, arg[i]) += self.grad(i, 0);
  });
}

Tensor rowgroup_max(const Tensor& a, Eigen::Index group) {
  require(group >= 1 && a.rows() % group == 0, ErrorCode::invalid_argument,
          "rowgroup_max: rows must be a multiple of group");
  NodePtr pa = a.ptr();
  const Mat& v = pa->value;
  const Eigen::Index n = v.rows() / group;
  Mat out(n, v.cols());
  std::vector<Eigen::Index> arg(n * v.cols());
  for (Eigen::Index gi = 0; gi < n; ++gi) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      Eigen::Index best = gi * group;
      for (Eigen::Index i = gi * group + 1; i < (gi + 1) * group; ++i) {
        if (v(i, j) > v(best, j)) best = i;
      }
      arg[gi * v.cols() + j] = best;
      out(gi, j) = v(best, j);
    }
  }
  return make_op(std::move(out), {pa}, [pa, arg = std::move(arg)](Node& self) {
    Mat& g = grad_storage(*pa);
    const Eigen::Index cols = g.cols();
    for (Eigen::Index gi = 0; gi < self.grad.rows(); ++gi) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        g(arg[gi * cols + j], j) += self.grad(gi, j);
      }
    }
  });
}

Tensor reduce_mean(const Tensor& a, int axis) {
  require(axis == 0 || axis == 1, ErrorCode::invalid_argument,
          "reduce_mean: axis must be 0 or 1");
  NodePtr pa = a.ptr();
  if (axis == 0) {
    const double inv = 1.0 / static_cast<double>(a.rows());
    Mat out = pa->value.colwise().sum() * inv;
    return make_op(std::move(out), {pa}, [pa, inv](Node& self) {
      Mat& g = grad_storage(*pa);
      g.noalias() += (Mat::Ones(g.rows(), 1) * self.grad) * inv;
    });
  }
  const double inv = 1.0 / static_cast<double>(a.cols());
  Mat out = pa->value.rowwise().sum() * inv;
  return make_op(std::move(out), {pa}, [pa, inv](Node& self) {
    Mat& g = grad_storage(*pa);
    g.noalias() += (self.grad * Mat::Ones(1, g.cols())) * inv;
  });
}

Tensor reduce_sum(const Tensor& a, int axis) {
  require(axis == 0 || axis == 1, ErrorCode::invalid_argument,
          "reduce_sum: axis must be 0 or 1");
  NodePtr pa = a.ptr();
  if (axis == 0) {
    Mat out = pa->value.colwise().sum();
    return make_op(std::move(out), {pa}, [pa](Node& self) {
      Mat& g = grad_storage(*pa);
      g.noalias() += Mat::Ones(g.rows(), 1) * self.grad;
    });
  }
  Mat out = pa->value.rowwise().sum();
  return make_op(std::move(out), {pa}, [pa](Node& self) {
    Mat& g = grad_storage(*pa);
    g.noalias() += self.grad * Mat::Ones(1, g.cols());
  });
}

Tensor mean_all(const Tensor& a) {
  NodePtr pa = a.ptr();
  Mat out(1, 1);
  out(0, 0) = pa->value.mean();
  const double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
  return make_op(std::move(out), {pa}, [pa, inv](Node& self) {
    Mat& g = grad_storage(*pa);
    g.array() += self.grad(0, 0) * inv;
  });
}

Tensor sum_all(const Tensor& a) {
  NodePtr pa = a.ptr();
  Mat out(1, 1);
  out(0, 0) = pa->value.sum();
  return make_op(std::move(out), {pa}, [pa](Node& self) {
    Mat& g = grad_storage(*pa);
    g.array() += self.grad(0, 0);
  });
}

// --- normalization / attention ---

Tensor softmax_rows(const Tensor& a) {
  NodePtr pa = a.ptr();
  Mat out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double mx = pa->value.row(i).maxCoeff();
    Eigen::ArrayXd e = (pa->value.row(i).array() - mx).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return make_op(std::move(out), {pa}, [pa](Node& self) {
    Mat& g = grad_storage(*pa);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double dot = self.grad.row(i).dot(self.value.row(i));
      g.row(i) += self.value.row(i).cwiseProduct(
          (self.grad.row(i).array() - dot).matrix());
    }
  });
}

Tensor masked_softmax_rows(const Tensor& logits, const AttentionMask& mask) {
  require(logits.rows() == logits.cols() &&
              static_cast<std::size_t>(logits.rows()) == mask.size,
          ErrorCode::invalid_argument,
          "masked_softmax_rows: logits must be S x S matching the mask");
  NodePtr pa = logits.ptr();
  const Mat& v = pa->value;
  const Eigen::Index s = v.rows();
  Mat out = Mat::Zero(s, s);
  for (Eigen::Index i = 0; i < s; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s; ++j) {
      if (mask.at(i, j) && v(i, j) > mx) mx = v(i, j);
    }
    if (!std::isfinite(mx)) continue;  // empty visible set: row stays zero
    double sum = 0.0;
    for (Eigen::Index j = 0; j < s; ++j) {
      if (mask.at(i, j)) {
        out(i, j) = std::exp(v(i, j) - mx);
        sum += out(i, j);
      }
    }
    const double inv = 1.0 / sum;
    for (Eigen::Index j = 0; j < s; ++j) {
      if (mask.at(i, j)) out(i, j) *= inv;
    }
  }
  return make_op(std::move(out), {pa}, [pa, mask](Node& self) {
    Mat& g = grad_storage(*pa);
    const Eigen::Index s = g.rows();
    for (Eigen::Index i = 0; i < s; ++i) {
      double dot = 0.0;
      for (Eigen::Index j = 0; j < s; ++j) {
        if (mask.at(i, j)) dot += self.grad(i, j) * self.value(i, j);
      }
      for (Eigen::Index j = 0; j < s; ++j) {
        if (mask.at(i, j)) {
          g(i, j) += self.value(i, j) * (self.grad(i, j) - dot);
        }
      }
    }
  });
}

Tensor masked_softmax_col(const Tensor& logits,
                          const std::vector<std::uint8_t>& keep) {
  require(logits.cols() == 1, ErrorCode::invalid_argument,
          "masked_softmax_col: logits must be a column vector");
  require(keep.size() == static_cast<std::size_t>(logits.rows()),
          ErrorCode::invalid_argument, "masked_softmax_col: flag size mismatch");
  NodePtr pa = logits.ptr();
  const Mat& v = pa->value;
  const Eigen::Index s = v.rows();

  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < s; ++i) {
    if (keep[i] && v(i, 0) > mx) mx = v(i, 0);
  }
  require(std::isfinite(mx), ErrorCode::invalid_argument,
          "masked_softmax_col: no kept entries");

  Mat out = Mat::Zero(s, 1);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < s; ++i) {
    if (keep[i]) {
      out(i, 0) = std::exp(v(i, 0) - mx);
      sum += out(i, 0);
    }
  }
  out /= sum;
  for (Eigen::Index i = 0; i < s; ++i) {
    if (!keep[i]) out(i, 0) = 0.0;
  }
  return make_op(std::move(out), {pa}, [pa, keep](Node& self) {
    Mat& g = grad_storage(*pa);
    double dot = 0.0;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (keep[i]) dot += self.grad(i, 0) * self.value(i, 0);
    }
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (keep[i]) g(i, 0) += self.value(i, 0) * (self.grad(i, 0) - dot);
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  const Eigen::Index c = x.cols();
  require(gain.rows() == 1 && gain.cols() == c && bias.rows() == 1 &&
              bias.cols() == c,
          ErrorCode::invalid_argument, "layer_norm_rows: gain/bias must be 1 x c");
  NodePtr px = x.ptr(), pg = gain.ptr(), pb = bias.ptr();
  const Mat& v = px->value;

  Mat xhat(v.rows(), c);
  Eigen::VectorXd inv_std(v.rows());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double mu = v.row(i).mean();
    const double var = (v.row(i).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std(i) = inv;
    xhat.row(i) = ((v.row(i).array() - mu) * inv).matrix();
  }
  Mat out = xhat;
  out.array().rowwise() *= pg->value.row(0).array();
  out.rowwise() += pb->value.row(0);

  auto backward = [px, pg, pb, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)](Node& self) {
    if (pg->requires_grad) {
      pg->accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
    }
    if (pb->requires_grad) pb->accumulate(self.grad.colwise().sum());
    if (px->requires_grad) {
      Mat& gx = grad_storage(*px);
      for (Eigen::Index i = 0; i < self.grad.rows(); ++i) {
        Eigen::RowVectorXd dxhat =
            self.grad.row(i).cwiseProduct(pg->value.row(0));
        const double mean_dxhat = dxhat.mean();
        const double mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(i)).mean();
        gx.row(i) += (inv_std(i) *
                      (dxhat.array() - mean_dxhat -
                       xhat.row(i).array() * mean_dxhat_xhat))
                         .matrix();
      }
    }
  };
  return make_op(std::move(out), {px, pg, pb}, std::move(backward));
}

Tensor attention(const Tensor& query, const Tensor& key, const Tensor& value,
                 const AttentionMask& mask) {
  require(query.cols() == key.cols(), ErrorCode::invalid_argument,
          "attention: query/key width mismatch");
  require(key.rows() == value.rows(), ErrorCode::invalid_argument,
          "attention: key/value length mismatch");
  require(query.rows() == key.rows() &&
              static_cast<std::size_t>(query.rows()) == mask.size,
          ErrorCode::invalid_argument, "attention: mask size mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(key.cols()));
  Tensor logits = mul_scalar(matmul(query, transpose(key)), scale);
  Tensor weights = masked_softmax_rows(logits, mask);
  return matmul(weights, value);
}

// --- parameters and optimization ---

Tensor ParamSet::add_linear_weight(const std::string& name, Eigen::Index in,
                                   Eigen::Index out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Mat w(in, out);
  for (Eigen::Index i = 0; i < in; ++i) {
    for (Eigen::Index j = 0; j < out; ++j) w(i, j) = rng.uniform(-bound, bound);
  }
  return add(name, std::move(w));
}

Tensor ParamSet::add_zeros(const std::string& name, Eigen::Index rows,
                           Eigen::Index cols) {
  return add(name, Mat::Zero(rows, cols));
}

Tensor ParamSet::find(const std::string& name) const {
  for (const auto& [n, t] : items) {
    if (n == name) return t;
  }
  throw_invalid_argument("ParamSet::find: unknown parameter " + name);
}

void ParamSet::zero_grad() {
  for (auto& [n, t] : items) t.zero_grad();
}

void ParamSet::append(const ParamSet& other) {
  items.insert(items.end(), other.items.begin(), other.items.end());
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items) {
    n += static_cast<std::size_t>(t.rows() * t.cols());
  }
  return n;
}

void Adam::step(std::span<const std::pair<std::string, Tensor>> params) {
  if (slots_.size() < params.size()) slots_.resize(params.size());
  ++t_;
  const double corr1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double corr2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params[i].second;
    Slot& slot = slots_[i];
    if (slot.m.size() == 0) {
      slot.m = Mat::Zero(p.rows(), p.cols());
      slot.v = Mat::Zero(p.rows(), p.cols());
    }
    if (p.has_grad()) {
      const Mat& g = p.grad();
      slot.m = beta1_ * slot.m + (1.0 - beta1_) * g;
      slot.v = beta2_ * slot.v + (1.0 - beta2_) * g.cwiseProduct(g);
    } else {
      slot.m *= beta1_;
      slot.v *= beta2_;
    }
    Mat mhat = slot.m / corr1;
    Mat vhat = slot.v / corr2;
    p.raw()->value.array() -=
        lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

}  // namespace pprl::ad
