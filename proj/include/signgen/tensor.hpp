#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "signgen/rng.hpp"

namespace signgen {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

// One node of the dynamic graph. Ops append nodes as they run; backward()
// replays their vector-Jacobian rules in reverse topological order.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward touches this node
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major tensor of doubles. Value-like handle over a shared node;
// copies alias the same storage. Safe to share read-only across threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int dim(int axis) const;
  std::size_t numel() const;
  bool is_scalar() const;

  double value() const;  // scalar tensors only
  double at(int i) const;
  double at(int i, int j) const;

  std::vector<double>& values();
  const std::vector<double>& values() const;

  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;  // throws if backward never reached it
  void zero_grad();

  // Same storage, cut off from the graph (no grad, no parents).
  Tensor detach() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// The recorded-operation list for one backward pass. Built from the loss by
// topological sort, replayed once in reverse; freed when it goes out of scope,
// so every training step starts from a clean tape.
struct GradTape {
  std::vector<std::shared_ptr<detail::TensorNode>> ops;

  static GradTape record(const Tensor& root);
  void replay_reverse();
};

// Populates grads of every reachable node with requires_grad. Loss must be scalar.
void backward(const Tensor& loss);

// While a guard lives, ops run without recording anything on the tape.
// Keeps evaluation-mode decoding from building throwaway graphs.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- differentiable ops -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor logaddexp(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // [T x d] -> [d]

Tensor slice_rows(const Tensor& x, int begin, int end);
Tensor slice_cols(const Tensor& x, int begin, int end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor add_rows(const Tensor& x, const Tensor& row);  // broadcast [d] over rows

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor select(const Tensor& x, std::size_t flat_index);  // scalar view with grad

// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets,
// computed in the numerically safe log1p form.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets);

// Inverted dropout; identity when rate == 0. Mask drawn from rng at call time.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// ---- gradient oracle ----------------------------------------------------

// Central-difference check of d f / d x against the autodiff gradient.
// Returns the max elementwise relative error, denominator max(|a|,|b|,1e-8).
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double eps = 1e-5);

}  // namespace signgen
