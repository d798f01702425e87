#include "signgen/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace signgen {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EigenRowMat>;
using ConstMapMat = Eigen::Map<const EigenRowMat>;

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dim in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

NodePtr make_node(Shape shape, std::vector<double> data, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

const TensorNode& deref(const Tensor& t) {
  if (!t.defined()) throw std::runtime_error("tensor: use of undefined tensor");
  return *t.node();
}

void require_2d(const Tensor& t, const char* op) {
  if (deref(t).shape.size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " +
                                shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (deref(a).shape != deref(b).shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

thread_local bool g_grad_enabled = true;

// Builds the result node of an op: data filled by caller, grad rule attached
// only when some parent participates in the graph.
Tensor make_op(Shape shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn) {
  bool trace = false;
  if (g_grad_enabled)
    for (const Tensor& p : parents) trace = trace || deref(p).requires_grad;
  auto node = make_node(std::move(shape), std::move(data), trace);
  if (trace) {
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("tensor: " + shape_str(shape) + " needs " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_node(Shape{1}, std::vector<double>{value}, requires_grad));
}

const Shape& Tensor::shape() const { return deref(*this).shape; }

int Tensor::dim(int axis) const {
  const auto& s = deref(*this).shape;
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument("tensor: axis " + std::to_string(axis) +
                                " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return deref(*this).numel(); }

bool Tensor::is_scalar() const { return deref(*this).numel() == 1; }

double Tensor::value() const {
  if (!is_scalar())
    throw std::invalid_argument("tensor: value() on non-scalar " + shape_str(shape()));
  return deref(*this).data[0];
}

double Tensor::at(int i) const { return deref(*this).data.at(static_cast<std::size_t>(i)); }

double Tensor::at(int i, int j) const {
  const auto& n = deref(*this);
  if (n.shape.size() != 2)
    throw std::invalid_argument("tensor: at(i,j) on " + shape_str(n.shape));
  return n.data.at(static_cast<std::size_t>(i) * n.shape[1] + j);
}

std::vector<double>& Tensor::values() { return const_cast<TensorNode&>(deref(*this)).data; }
const std::vector<double>& Tensor::values() const { return deref(*this).data; }

bool Tensor::requires_grad() const { return deref(*this).requires_grad; }

bool Tensor::has_grad() const { return !deref(*this).grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  const auto& n = deref(*this);
  if (n.grad.empty())
    throw std::runtime_error("tensor: grad not populated; call backward() first");
  return n.grad;
}

void Tensor::zero_grad() {
  auto& n = const_cast<TensorNode&>(deref(*this));
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = deref(*this);
  return Tensor(make_node(n.shape, n.data, false));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---- tape & backward ------------------------------------------------------

GradTape GradTape::record(const Tensor& root) {
  GradTape tape;
  // Iterative post-order DFS; graphs from long training chains can be deep.
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      NodePtr child = node->parents[next_child++];
      if (child && !visited.count(child.get())) {
        visited.insert(child.get());
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      tape.ops.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void GradTape::replay_reverse() {
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
    TensorNode& node = **it;
    if (!node.backward_fn || node.grad.empty()) continue;
    for (auto& parent : node.parents)
      if (parent->requires_grad) parent->ensure_grad();
    node.backward_fn(node);
  }
}

void backward(const Tensor& loss) {
  if (!loss.is_scalar())
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  if (!loss.requires_grad()) {
    throw std::runtime_error("backward: loss does not require grad (empty tape)");
  }
  GradTape tape = GradTape::record(loss);
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  tape.replay_reverse();
}

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  {
    ConstMapMat A(a.values().data(), m, k);
    ConstMapMat B(b.values().data(), k, n);
    MapMat C(out.data(), m, n);
    C.noalias() = A * B;
  }
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    ConstMapMat G(o.grad.data(), m, n);
    if (pa.requires_grad) {
      ConstMapMat B(pb.data.data(), k, n);
      MapMat GA(pa.grad.data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (pb.requires_grad) {
      ConstMapMat A(pa.data.data(), m, k);
      MapMat GB(pb.grad.data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const int r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(x.numel());
  const auto& in = x.values();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(j) * r + i] = in[static_cast<std::size_t>(i) * c + j];
  return make_op({c, r}, std::move(out), {x}, [r, c](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        p.grad[static_cast<std::size_t>(i) * c + j] +=
            o.grad[static_cast<std::size_t>(j) * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& o) {
    for (int side = 0; side < 2; ++side) {
      TensorNode& p = *o.parents[side];
      if (!p.requires_grad) continue;
      for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] -= o.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * pb.data[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i] * pa.data[i];
  });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * s;
  return make_op(x.shape(), std::move(out), {x}, [s](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + s;
  return make_op(x.shape(), std::move(out), {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
  });
}

Tensor square(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * x.values()[i];
  return make_op(x.shape(), std::move(out), {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * 2.0 * p.data[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  return make_op(x.shape(), std::move(out), {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (p.data[i] > 0.0) p.grad[i] += o.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_op(x.shape(), std::move(out), {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      p.grad[i] += o.grad[i] * o.data[i] * (1.0 - o.data[i]);
  });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.values()[i]);
  return make_op(x.shape(), std::move(out), {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] / p.data[i];
  });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.values()[i]);
  return make_op(x.shape(), std::move(out), {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * o.data[i];
  });
}

Tensor logaddexp(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "logaddexp");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i], y = b.values()[i];
    const double hi = std::max(x, y), lo = std::min(x, y);
    out[i] = std::isinf(hi) && hi < 0.0 ? hi : hi + std::log1p(std::exp(lo - hi));
  }
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      // d/dx log(e^x + e^y) = exp(x - out); exponents are <= 0 so this is
      // stable, and a -inf output (both branches impossible) gets no gradient.
      if (!std::isfinite(o.data[i])) continue;
      if (pa.requires_grad) pa.grad[i] += o.grad[i] * std::exp(pa.data[i] - o.data[i]);
      if (pb.requires_grad) pb.grad[i] += o.grad[i] * std::exp(pb.data[i] - o.data[i]);
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                " invalid for " + shape_str(s));
  const int n = s[axis];
  std::size_t inner = 1, outer = 1;
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
  for (int i = 0; i < axis; ++i) outer *= s[i];

  std::vector<double> out(x.numel());
  const auto& in = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < inner; ++k) {
      const std::size_t base = o * n * inner + k;
      double mx = in[base];
      for (int i = 1; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
      double denom = 0.0;
      for (int i = 0; i < n; ++i) {
        const double e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        denom += e;
      }
      for (int i = 0; i < n; ++i) out[base + i * inner] /= denom;
    }
  }
  return make_op(s, std::move(out), {x}, [n, inner, outer](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t ou = 0; ou < outer; ++ou) {
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t base = ou * n * inner + k;
        double dot = 0.0;
        for (int i = 0; i < n; ++i) dot += o.grad[base + i * inner] * o.data[base + i * inner];
        for (int i = 0; i < n; ++i)
          p.grad[base + i * inner] +=
              o.data[base + i * inner] * (o.grad[base + i * inner] - dot);
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_op({1}, {total}, {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return make_op({1}, {total * inv}, {x}, [inv](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += o.grad[0] * inv;
  });
}

Tensor mean_rows(const Tensor& x) {
  require_2d(x, "mean_rows");
  const int r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[j] += x.values()[static_cast<std::size_t>(i) * c + j];
  const double inv = 1.0 / r;
  for (double& v : out) v *= inv;
  return make_op({c}, std::move(out), {x}, [r, c, inv](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        p.grad[static_cast<std::size_t>(i) * c + j] += o.grad[j] * inv;
  });
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
  require_2d(x, "slice_rows");
  const int r = x.shape()[0], c = x.shape()[1];
  if (begin < 0 || end > r || begin >= end)
    throw std::invalid_argument("slice_rows: [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") invalid for " + shape_str(x.shape()));
  std::vector<double> out(static_cast<std::size_t>(end - begin) * c);
  std::copy(x.values().begin() + static_cast<std::size_t>(begin) * c,
            x.values().begin() + static_cast<std::size_t>(end) * c, out.begin());
  return make_op({end - begin, c}, std::move(out), {x}, [begin, c](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    const std::size_t off = static_cast<std::size_t>(begin) * c;
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[off + i] += o.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
  require_2d(x, "slice_cols");
  const int r = x.shape()[0], c = x.shape()[1];
  if (begin < 0 || end > c || begin >= end)
    throw std::invalid_argument("slice_cols: [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") invalid for " + shape_str(x.shape()));
  const int w = end - begin;
  std::vector<double> out(static_cast<std::size_t>(r) * w);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<std::size_t>(i) * w + j] =
          x.values()[static_cast<std::size_t>(i) * c + begin + j];
  return make_op({r, w}, std::move(out), {x}, [r, c, w, begin](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        p.grad[static_cast<std::size_t>(i) * c + begin + j] +=
            o.grad[static_cast<std::size_t>(i) * w + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  require_2d(parts[0], "concat_rows");
  const int c = parts[0].shape()[1];
  int rows = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    if (p.shape()[1] != c)
      throw std::invalid_argument("concat_rows: column mismatch " + shape_str(p.shape()) +
                                  " vs " + shape_str(parts[0].shape()));
    rows += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows) * c);
  for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_op({rows, c}, std::move(out), parts, [](TensorNode& o) {
    std::size_t off = 0;
    for (auto& p : o.parents) {
      const std::size_t n = p->data.size();
      if (p->requires_grad)
        for (std::size_t i = 0; i < n; ++i) p->grad[i] += o.grad[off + i];
      off += n;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  require_2d(parts[0], "concat_cols");
  const int r = parts[0].shape()[0];
  int cols = 0;
  std::vector<int> widths;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.shape()[0] != r)
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.shape()) +
                                  " vs " + shape_str(parts[0].shape()));
    widths.push_back(p.shape()[1]);
    cols += p.shape()[1];
  }
  std::vector<double> out(static_cast<std::size_t>(r) * cols);
  int col0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& in = parts[k].values();
    const int w = widths[k];
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        out[static_cast<std::size_t>(i) * cols + col0 + j] =
            in[static_cast<std::size_t>(i) * w + j];
    col0 += w;
  }
  return make_op({r, cols}, std::move(out), parts, [r, cols, widths](TensorNode& o) {
    int col0 = 0;
    for (std::size_t k = 0; k < o.parents.size(); ++k) {
      auto& p = *o.parents[k];
      const int w = widths[k];
      if (p.requires_grad)
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < w; ++j)
            p.grad[static_cast<std::size_t>(i) * w + j] +=
                o.grad[static_cast<std::size_t>(i) * cols + col0 + j];
      col0 += w;
    }
  });
}

Tensor add_rows(const Tensor& x, const Tensor& row) {
  require_2d(x, "add_rows");
  if (row.shape().size() != 1 || row.shape()[0] != x.shape()[1])
    throw std::invalid_argument("add_rows: row " + shape_str(row.shape()) +
                                " does not match " + shape_str(x.shape()));
  const int r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(x.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] =
          x.values()[static_cast<std::size_t>(i) * c + j] + row.values()[j];
  return make_op(x.shape(), std::move(out), {x, row}, [r, c](TensorNode& o) {
    TensorNode& px = *o.parents[0];
    TensorNode& pr = *o.parents[1];
    if (px.requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) px.grad[i] += o.grad[i];
    if (pr.requires_grad)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          pr.grad[j] += o.grad[static_cast<std::size_t>(i) * c + j];
  });
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  require_2d(table, "embedding_rows");
  const int v = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw std::invalid_argument("embedding_rows: empty id sequence");
  std::vector<double> out(ids.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= v)
      throw std::invalid_argument("embedding_rows: id " + std::to_string(id) +
                                  " outside table " + shape_str(table.shape()));
    std::copy(table.values().begin() + static_cast<std::size_t>(id) * d,
              table.values().begin() + static_cast<std::size_t>(id + 1) * d,
              out.begin() + i * d);
  }
  return make_op({static_cast<int>(ids.size()), d}, std::move(out), {table},
                 [ids, d](TensorNode& o) {
                   TensorNode& p = *o.parents[0];
                   if (!p.requires_grad) return;
                   for (std::size_t i = 0; i < ids.size(); ++i)
                     for (int j = 0; j < d; ++j)
                       p.grad[static_cast<std::size_t>(ids[i]) * d + j] +=
                           o.grad[i * d + j];
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_2d(x, "layer_norm");
  const int r = x.shape()[0], c = x.shape()[1];
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c})
    throw std::invalid_argument("layer_norm: gain/bias must be [" + std::to_string(c) + "]");
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_sigma = std::make_shared<std::vector<double>>(r);
  for (int i = 0; i < r; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += x.values()[base + j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = x.values()[base + j] - mu;
      var += d * d;
    }
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = inv;
    for (int j = 0; j < c; ++j) {
      const double h = (x.values()[base + j] - mu) * inv;
      (*xhat)[base + j] = h;
      out[base + j] = h * gain.values()[j] + bias.values()[j];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gain, bias},
                 [r, c, xhat, inv_sigma](TensorNode& o) {
                   TensorNode& px = *o.parents[0];
                   TensorNode& pg = *o.parents[1];
                   TensorNode& pb = *o.parents[2];
                   for (int i = 0; i < r; ++i) {
                     const std::size_t base = static_cast<std::size_t>(i) * c;
                     if (px.requires_grad) {
                       double mean_dh = 0.0, mean_dh_h = 0.0;
                       for (int j = 0; j < c; ++j) {
                         const double dh = o.grad[base + j] * pg.data[j];
                         mean_dh += dh;
                         mean_dh_h += dh * (*xhat)[base + j];
                       }
                       mean_dh /= c;
                       mean_dh_h /= c;
                       for (int j = 0; j < c; ++j) {
                         const double dh = o.grad[base + j] * pg.data[j];
                         px.grad[base + j] += (*inv_sigma)[i] *
                             (dh - mean_dh - (*xhat)[base + j] * mean_dh_h);
                       }
                     }
                     if (pg.requires_grad)
                       for (int j = 0; j < c; ++j)
                         pg.grad[j] += o.grad[base + j] * (*xhat)[base + j];
                     if (pb.requires_grad)
                       for (int j = 0; j < c; ++j) pb.grad[j] += o.grad[base + j];
                   }
                 });
}

Tensor select(const Tensor& x, std::size_t flat_index) {
  if (flat_index >= x.numel())
    throw std::invalid_argument("select: index " + std::to_string(flat_index) +
                                " out of range for " + shape_str(x.shape()));
  return make_op({1}, {x.values()[flat_index]}, {x}, [flat_index](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    p.grad[flat_index] += o.grad[0];
  });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  if (logits.numel() != targets.size())
    throw std::invalid_argument("bce_with_logits: " + std::to_string(targets.size()) +
                                " targets for " + shape_str(logits.shape()));
  const std::size_t n = logits.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.values()[i], t = targets[i];
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  const double inv = 1.0 / static_cast<double>(n);
  return make_op({1}, {total * inv}, {logits}, [targets, inv](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      const double z = p.data[i];
      const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                : std::exp(z) / (1.0 + std::exp(z));
      p.grad[i] += o.grad[0] * (s - targets[i]) * inv;
    }
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() >= rate ? keep_scale : 0.0;
    out[i] = x.values()[i] * (*mask)[i];
  }
  return make_op(x.shape(), std::move(out), {x}, [mask](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * (*mask)[i];
  });
}

// ---- finite differences ---------------------------------------------------

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double eps) {
  Tensor probe = x.detach();
  probe.node()->requires_grad = true;
  Tensor loss = f(probe);
  if (!loss.is_scalar())
    throw std::invalid_argument("finite_difference_check: f must return a scalar");
  // a loss that never touched the probe (constant f) has gradient zero
  std::vector<double> autodiff(probe.numel(), 0.0);
  if (loss.requires_grad()) {
    backward(loss);
    if (probe.has_grad()) autodiff = probe.grad();
  }

  Tensor work = x.detach();
  double max_rel = 0.0;
  for (std::size_t i = 0; i < work.numel(); ++i) {
    const double saved = work.values()[i];
    work.values()[i] = saved + eps;
    const double up = f(work).value();
    work.values()[i] = saved - eps;
    const double down = f(work).value();
    work.values()[i] = saved;
    const double fd = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(autodiff[i]), 1e-8});
    max_rel = std::max(max_rel, std::abs(fd - autodiff[i]) / denom);
  }
  return max_rel;
}

}  // namespace signgen
