#include "signgen/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace signgen {

Tensor mse_loss(const Tensor& pred, const Tensor& truth) {
  return mean(square(sub(pred, truth)));
}

Tensor pool_embedding(const Tensor& seq) { return mean_rows(seq); }

namespace {

Tensor squared_distance(const Tensor& a, const Tensor& b) {
  return sum(square(sub(a, b)));
}

}  // namespace

Tensor triplet_distance(const Tensor& baseline, const Tensor& truth,
                        const Tensor& negative, double margin) {
  if (margin < 0.0)
    throw std::invalid_argument("triplet_distance: margin must be >= 0, got " +
                                std::to_string(margin));
  Tensor d_bt = squared_distance(baseline, truth);
  Tensor d_bs = squared_distance(baseline, negative);
  return relu(add_scalar(sub(d_bt, d_bs), margin));
}

std::vector<TripletBatch> select_triplets(const std::vector<Tensor>& truth_seqs,
                                          const std::vector<Tensor>& pred_seqs,
                                          Rng& rng, double margin, bool hardest) {
  if (truth_seqs.size() != pred_seqs.size())
    throw std::invalid_argument("select_triplets: got " + std::to_string(truth_seqs.size()) +
                                " truths for " + std::to_string(pred_seqs.size()) +
                                " predictions");
  const std::size_t n = truth_seqs.size();
  if (n < 2)
    throw std::invalid_argument("select_triplets: batch of " + std::to_string(n) +
                                " has no in-batch negative");

  std::vector<Tensor> pooled_truths;
  pooled_truths.reserve(n);
  for (const Tensor& t : truth_seqs) pooled_truths.push_back(pool_embedding(t).detach());

  std::vector<TripletBatch> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j;
    if (hardest) {
      // negative closest to the baseline makes the margin hardest to satisfy
      j = i == 0 ? 1 : 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i) continue;
        double d = 0.0;
        for (std::size_t c = 0; c < pooled_truths[i].numel(); ++c) {
          const double diff = pooled_truths[i].values()[c] - pooled_truths[k].values()[c];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          j = k;
        }
      }
    } else {
      const std::size_t draw = rng.uniform_int(n - 1);
      j = draw >= i ? draw + 1 : draw;
    }
    TripletBatch t;
    t.baseline = pooled_truths[i];
    t.truth = pool_embedding(pred_seqs[i]);
    t.negative = pooled_truths[j];
    t.margin = margin;
    out.push_back(std::move(t));
  }
  return out;
}

Tensor metric_loss(const std::vector<TripletBatch>& triplets) {
  if (triplets.empty()) throw std::invalid_argument("metric_loss: empty triplet list");
  Tensor total;
  for (const TripletBatch& t : triplets) {
    Tensor d = triplet_distance(t.baseline, t.truth, t.negative, t.margin);
    total = total.defined() ? add(total, d) : d;
  }
  return total;
}

// ---- CTC --------------------------------------------------------------------

std::optional<Tensor> ctc_log_probability(const Tensor& frame_probs,
                                          const TokenSequence& target, int blank) {
  if (frame_probs.shape().size() != 2)
    throw std::invalid_argument("ctc: frame_probs must be [T x (G+1)], got " +
                                shape_str(frame_probs.shape()));
  const int t_steps = frame_probs.shape()[0];
  const int n_classes = frame_probs.shape()[1];
  if (blank < 0 || blank >= n_classes)
    throw std::invalid_argument("ctc: blank index " + std::to_string(blank) +
                                " outside " + std::to_string(n_classes) + " classes");
  for (int label : target)
    if (label < 0 || label >= n_classes || label == blank)
      throw std::invalid_argument("ctc: target label " + std::to_string(label) +
                                  " invalid for " + std::to_string(n_classes) +
                                  " classes with blank " + std::to_string(blank));

  // Minimum frames: one per label plus a blank between adjacent repeats.
  int needed = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++needed;
  if (needed > t_steps) return std::nullopt;

  // Blank-augmented label sequence: blank, l1, blank, l2, ..., blank.
  const int n_states = 2 * static_cast<int>(target.size()) + 1;
  std::vector<int> labels(static_cast<std::size_t>(n_states), blank);
  for (std::size_t i = 0; i < target.size(); ++i) labels[2 * i + 1] = target[i];

  Tensor lp = log(frame_probs);
  auto lp_at = [&](int t, int label) {
    return select(lp, static_cast<std::size_t>(t) * n_classes + label);
  };
  // Undefined tensors stand for log 0; combine() skips them so no -inf node
  // ever enters the graph.
  auto combine = [](const Tensor& a, const Tensor& b) {
    if (!a.defined()) return b;
    if (!b.defined()) return a;
    return logaddexp(a, b);
  };

  std::vector<Tensor> alpha(static_cast<std::size_t>(n_states));
  alpha[0] = lp_at(0, labels[0]);
  if (n_states > 1) alpha[1] = lp_at(0, labels[1]);
  for (int t = 1; t < t_steps; ++t) {
    std::vector<Tensor> next(static_cast<std::size_t>(n_states));
    for (int s = 0; s < n_states; ++s) {
      Tensor acc = alpha[s];
      if (s >= 1) acc = combine(acc, alpha[s - 1]);
      if (s >= 2 && labels[s] != blank && labels[s] != labels[s - 2])
        acc = combine(acc, alpha[s - 2]);
      if (acc.defined()) next[s] = add(acc, lp_at(t, labels[s]));
    }
    alpha = std::move(next);
  }

  Tensor log_p = alpha[n_states - 1];
  if (n_states > 1) log_p = combine(log_p, alpha[n_states - 2]);
  if (!log_p.defined()) return std::nullopt;
  return log_p;
}

Tensor ctc_probability(const Tensor& frame_probs, const TokenSequence& target, int blank) {
  auto log_p = ctc_log_probability(frame_probs, target, blank);
  if (!log_p) return Tensor::scalar(0.0);
  return exp(*log_p);
}

Tensor recognition_loss(const Tensor& frame_probs, const TokenSequence& target,
                        LossForm form, int blank) {
  auto log_p = ctc_log_probability(frame_probs, target, blank);
  if (form == LossForm::OneMinusP) {
    if (!log_p) return Tensor::scalar(1.0);
    return add_scalar(scale(exp(*log_p), -1.0), 1.0);
  }
  if (!log_p) return Tensor::scalar(std::numeric_limits<double>::infinity());
  return scale(*log_p, -1.0);
}

Tensor translation_loss(const Tensor& stepwise, const TokenSequence& target, LossForm form) {
  if (stepwise.shape().size() != 2)
    throw std::invalid_argument("translation_loss: expected [U x W], got " +
                                shape_str(stepwise.shape()));
  const int steps = stepwise.shape()[0];
  const int vocab = stepwise.shape()[1];
  if (steps != static_cast<int>(target.size()))
    throw std::invalid_argument("translation_loss: " + std::to_string(steps) +
                                " distribution rows for target of length " +
                                std::to_string(target.size()));
  for (int label : target)
    if (label < 0 || label >= vocab)
      throw std::invalid_argument("translation_loss: target id " + std::to_string(label) +
                                  " outside vocabulary of " + std::to_string(vocab));

  if (form == LossForm::OneMinusP) {
    Tensor p;
    for (int i = 0; i < steps; ++i) {
      Tensor z = select(stepwise, static_cast<std::size_t>(i) * vocab + target[i]);
      p = p.defined() ? mul(p, z) : z;
    }
    return add_scalar(scale(p, -1.0), 1.0);
  }
  Tensor nll;
  for (int i = 0; i < steps; ++i) {
    Tensor z = log(select(stepwise, static_cast<std::size_t>(i) * vocab + target[i]));
    nll = nll.defined() ? add(nll, z) : z;
  }
  return scale(nll, -1.0);
}

namespace {

Tensor weighted_pair(const Tensor& x, double wx, const Tensor& y, double wy,
                     const char* who) {
  if (wx < 0.0 || wy < 0.0)
    throw std::invalid_argument(std::string(who) + ": loss weights must be >= 0");
  return add(scale(x, wx), scale(y, wy));
}

}  // namespace

Tensor total_text2pose_loss(const Tensor& l_a, const Tensor& l_b, const LossWeights& w) {
  return weighted_pair(l_a, w.lambda_a, l_b, w.lambda_b, "total_text2pose_loss");
}

Tensor total_pose2text_loss(const Tensor& l_c, const Tensor& l_d, const LossWeights& w) {
  return weighted_pair(l_c, w.lambda_c, l_d, w.lambda_d, "total_pose2text_loss");
}

}  // namespace signgen
