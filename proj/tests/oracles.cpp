#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "signgen/losses.hpp"
#include "signgen/rng.hpp"

namespace signgen::oracles {

namespace {

std::vector<int> collapse(const std::vector<int>& path, int blank) {
  std::vector<int> merged;
  for (int label : path)
    if (merged.empty() || merged.back() != label) merged.push_back(label);
  std::vector<int> out;
  for (int label : merged)
    if (label != blank) out.push_back(label);
  return out;
}

void enumerate_paths(const std::vector<std::vector<double>>& frame_probs, std::size_t t,
                     std::vector<int>& path, double prob, const std::vector<int>& target,
                     int blank, double& total) {
  if (t == frame_probs.size()) {
    if (collapse(path, blank) == target) total += prob;
    return;
  }
  for (int label = 0; label < static_cast<int>(frame_probs[t].size()); ++label) {
    path.push_back(label);
    enumerate_paths(frame_probs, t + 1, path, prob * frame_probs[t][label], target, blank,
                    total);
    path.pop_back();
  }
}

}  // namespace

double ctc_brute_force(const std::vector<std::vector<double>>& frame_probs,
                       const std::vector<int>& target, int blank) {
  double total = 0.0;
  std::vector<int> path;
  enumerate_paths(frame_probs, 0, path, 1.0, target, blank, total);
  return total;
}

std::vector<std::vector<int>> all_targets(int n_classes, int blank, int max_len) {
  std::vector<int> labels;
  for (int c = 0; c < n_classes; ++c)
    if (c != blank) labels.push_back(c);
  std::vector<std::vector<int>> out{{}};
  std::vector<std::vector<int>> frontier{{}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& prefix : frontier) {
      for (int label : labels) {
        auto seq = prefix;
        seq.push_back(label);
        next.push_back(seq);
        out.push_back(std::move(seq));
      }
    }
    frontier = std::move(next);
  }
  return out;
}

namespace {

void enumerate_warps(const std::vector<std::vector<double>>& a,
                     const std::vector<std::vector<double>>& b,
                     const std::function<double(const std::vector<double>&,
                                                const std::vector<double>&)>& dist,
                     std::size_t i, std::size_t j, double acc, double& best) {
  acc += dist(a[i], b[j]);
  if (i + 1 == a.size() && j + 1 == b.size()) {
    best = std::min(best, acc);
    return;
  }
  if (i + 1 < a.size() && j + 1 < b.size()) enumerate_warps(a, b, dist, i + 1, j + 1, acc, best);
  if (i + 1 < a.size()) enumerate_warps(a, b, dist, i + 1, j, acc, best);
  if (j + 1 < b.size()) enumerate_warps(a, b, dist, i, j + 1, acc, best);
}

}  // namespace

double dtw_brute_force(const std::vector<std::vector<double>>& a,
                       const std::vector<std::vector<double>>& b,
                       const std::function<double(const std::vector<double>&,
                                                  const std::vector<double>&)>& dist) {
  double best = std::numeric_limits<double>::infinity();
  enumerate_warps(a, b, dist, 0, 0, 0.0, best);
  return best;
}

double params_fd_max_rel_error(const std::function<double()>& loss_value,
                               const std::vector<Param>& params,
                               const std::vector<std::vector<double>>& autodiff_grads,
                               double eps, double fallback_eps) {
  double max_rel = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor tensor = params[k].tensor;
    auto& data = tensor.values();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double ad = autodiff_grads[k][i];
      double rel = std::numeric_limits<double>::infinity();
      for (double h : {eps, fallback_eps}) {
        const double saved = data[i];
        data[i] = saved + h;
        const double up = loss_value();
        data[i] = saved - h;
        const double down = loss_value();
        data[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(ad), 1e-8});
        rel = std::min(rel, std::abs(fd - ad) / denom);
        if (rel < 1e-6) break;
      }
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

std::vector<std::vector<double>> random_prob_rows(int t, int n_classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(t));
  for (auto& row : rows) {
    row.resize(static_cast<std::size_t>(n_classes));
    double denom = 0.0;
    for (double& v : row) {
      v = std::exp(rng.uniform(-1.5, 1.5));
      denom += v;
    }
    for (double& v : row) v /= denom;
  }
  return rows;
}

double all_ops_fd_worst(std::uint64_t seed) {
  Rng rng(seed);
  auto rand_tensor = [&rng](Shape s, double lo, double hi) {
    Tensor t = Tensor::zeros(std::move(s));
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
  };
  // values bounded away from the relu kink so central differences stay honest
  auto rand_nonzero = [&rng](Shape s) {
    Tensor t = Tensor::zeros(std::move(s));
    for (double& v : t.values())
      v = rng.uniform(0.2, 1.0) * (rng.bits() & 1 ? 1.0 : -1.0);
    return t;
  };
  // Reduce an op output to a scalar through fixed random weights so every
  // output coordinate contributes a distinct gradient path.
  auto reducer = [&rng](const Shape& s) {
    Tensor w = Tensor::zeros(s);
    for (double& v : w.values()) v = rng.uniform(0.5, 1.5);
    return [w](const Tensor& y) { return sum(mul(y, w)); };
  };

  double worst = 0.0;
  auto check = [&worst](const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
    worst = std::max(worst, finite_difference_check(f, x, 1e-5));
  };

  {  // elementwise binary ops, both sides
    Tensor c = rand_tensor({2, 3}, -1, 1);
    auto r = reducer({2, 3});
    check([=](const Tensor& x) { return r(add(x, c)); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r(add(c, x)); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r(sub(x, c)); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r(sub(c, x)); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r(mul(x, c)); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r(mul(c, x)); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r(logaddexp(x, c)); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r(logaddexp(c, x)); }, rand_tensor({2, 3}, -1, 1));
  }
  {  // elementwise unary ops
    auto r = reducer({2, 3});
    check([=](const Tensor& x) { return r(scale(x, 1.7)); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r(add_scalar(x, 0.3)); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r(square(x)); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r(relu(x)); }, rand_nonzero({2, 3}));
    check([=](const Tensor& x) { return r(sigmoid(x)); }, rand_tensor({2, 3}, -2, 2));
    check([=](const Tensor& x) { return r(log(x)); }, rand_tensor({2, 3}, 0.2, 2.0));
    check([=](const Tensor& x) { return r(exp(x)); }, rand_tensor({2, 3}, -1, 1));
  }
  {  // softmax along both axes
    auto r = reducer({3, 4});
    check([=](const Tensor& x) { return r(softmax(x, 0)); }, rand_tensor({3, 4}, -2, 2));
    check([=](const Tensor& x) { return r(softmax(x, 1)); }, rand_tensor({3, 4}, -2, 2));
  }
  {  // reductions
    check([](const Tensor& x) { return sum(x); }, rand_tensor({3, 4}, -1, 1));
    check([](const Tensor& x) { return mean(x); }, rand_tensor({3, 4}, -1, 1));
    auto r = reducer({3});
    check([=](const Tensor& x) { return r(mean_rows(x)); }, rand_tensor({4, 3}, -1, 1));
  }
  {  // slicing and concatenation
    auto r1 = reducer({3, 3});
    check([=](const Tensor& x) { return r1(slice_rows(x, 1, 4)); }, rand_tensor({5, 3}, -1, 1));
    auto r2 = reducer({3, 2});
    check([=](const Tensor& x) { return r2(slice_cols(x, 1, 3)); }, rand_tensor({3, 5}, -1, 1));
    Tensor c = rand_tensor({2, 3}, -1, 1);
    auto r3 = reducer({4, 3});
    check([=](const Tensor& x) { return r3(concat_rows({x, c})); }, rand_tensor({2, 3}, -1, 1));
    check([=](const Tensor& x) { return r3(concat_rows({c, x})); }, rand_tensor({2, 3}, -1, 1));
    Tensor c2 = rand_tensor({3, 2}, -1, 1);
    auto r4 = reducer({3, 4});
    check([=](const Tensor& x) { return r4(concat_cols({x, c2})); }, rand_tensor({3, 2}, -1, 1));
    check([=](const Tensor& x) { return r4(concat_cols({c2, x})); }, rand_tensor({3, 2}, -1, 1));
  }
  {  // broadcasting bias add
    Tensor row = rand_tensor({4}, -1, 1);
    Tensor mat = rand_tensor({3, 4}, -1, 1);
    auto r = reducer({3, 4});
    check([=](const Tensor& x) { return r(add_rows(x, row)); }, mat);
    check([=](const Tensor& x) { return r(add_rows(mat, x)); }, row);
  }
  {  // matmul and transpose
    Tensor a = rand_tensor({3, 4}, -1, 1);
    Tensor b = rand_tensor({4, 2}, -1, 1);
    auto r = reducer({3, 2});
    check([=](const Tensor& x) { return r(matmul(x, b)); }, a);
    check([=](const Tensor& x) { return r(matmul(a, x)); }, b);
    auto rt = reducer({4, 3});
    check([=](const Tensor& x) { return rt(transpose(x)); }, a);
  }
  {  // embedding with repeated ids (exercises scatter-add)
    std::vector<int> ids{0, 2, 2, 4};
    auto r = reducer({4, 3});
    check([=](const Tensor& x) { return r(embedding_rows(x, ids)); },
          rand_tensor({5, 3}, -1, 1));
  }
  {  // layer norm, all three inputs
    Tensor x0 = rand_tensor({3, 6}, -1, 1);
    Tensor g0 = rand_tensor({6}, 0.5, 1.5);
    Tensor b0 = rand_tensor({6}, -0.5, 0.5);
    auto r = reducer({3, 6});
    check([=](const Tensor& x) { return r(layer_norm(x, g0, b0)); }, x0);
    check([=](const Tensor& x) { return r(layer_norm(x0, x, b0)); }, g0);
    check([=](const Tensor& x) { return r(layer_norm(x0, g0, x)); }, b0);
  }
  {  // select and bce
    check([](const Tensor& x) { return select(x, 3); }, rand_tensor({2, 3}, -1, 1));
    std::vector<double> targets;
    for (int i = 0; i < 5; ++i) targets.push_back(rng.bits() & 1 ? 1.0 : 0.0);
    check([=](const Tensor& x) { return bce_with_logits(x, targets); },
          rand_tensor({5}, -2, 2));
  }
  {  // attention, each input, masked and unmasked
    Tensor q = rand_tensor({3, 4}, -1, 1);
    Tensor k = rand_tensor({5, 4}, -1, 1);
    Tensor v = rand_tensor({5, 4}, -1, 1);
    Tensor mask = key_padding_mask(3, 5, 4);
    auto r = reducer({3, 4});
    check([=](const Tensor& x) { return r(scaled_dot_product_attention(x, k, v, {})); }, q);
    check([=](const Tensor& x) { return r(scaled_dot_product_attention(q, x, v, {})); }, k);
    check([=](const Tensor& x) { return r(scaled_dot_product_attention(q, k, x, {})); }, v);
    check([=](const Tensor& x) { return r(scaled_dot_product_attention(x, k, v, mask)); }, q);
    Tensor sq = rand_tensor({4, 4}, -1, 1);
    Tensor cm = causal_mask(4);
    auto rs = reducer({4, 4});
    check([=](const Tensor& x) { return rs(scaled_dot_product_attention(x, x, x, cm)); }, sq);
  }
  {  // losses: mse, pooling, triplets
    Tensor truth = rand_tensor({3, 4}, -1, 1);
    check([=](const Tensor& x) { return mse_loss(x, truth); }, rand_tensor({3, 4}, -1, 1));
    check([=](const Tensor& x) { return mse_loss(truth, x); }, rand_tensor({3, 4}, -1, 1));
    auto r = reducer({4});
    check([=](const Tensor& x) { return r(pool_embedding(x)); }, rand_tensor({3, 4}, -1, 1));

    Tensor base = rand_tensor({4}, -1, 1);
    Tensor neg = rand_tensor({4}, -1, 1);
    // margin large enough that the hinge stays active for the gradient probe
    check([=](const Tensor& x) { return triplet_distance(base, x, neg, 5.0); },
          rand_tensor({4}, -1, 1));
    check([=](const Tensor& x) { return triplet_distance(x, base, neg, 5.0); },
          rand_tensor({4}, -1, 1));
    check([=](const Tensor& x) { return triplet_distance(base, neg, x, 5.0); },
          rand_tensor({4}, -1, 1));
  }
  {  // ctc and the probability-form losses
    std::vector<int> target{1, 2, 1};
    check([=](const Tensor& x) { return ctc_probability(x, target, 0); },
          rand_tensor({5, 3}, 0.1, 1.0));
    check([=](const Tensor& x) { return recognition_loss(x, target, LossForm::OneMinusP, 0); },
          rand_tensor({5, 3}, 0.1, 1.0));
    check([=](const Tensor& x) { return recognition_loss(x, target, LossForm::NegLogP, 0); },
          rand_tensor({5, 3}, 0.1, 1.0));
    std::vector<int> sentence{2, 0, 1};
    check([=](const Tensor& x) { return translation_loss(x, sentence, LossForm::OneMinusP); },
          rand_tensor({3, 4}, 0.1, 1.0));
    check([=](const Tensor& x) { return translation_loss(x, sentence, LossForm::NegLogP); },
          rand_tensor({3, 4}, 0.1, 1.0));
  }
  return worst;
}

}  // namespace signgen::oracles
