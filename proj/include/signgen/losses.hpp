#pragma once

#include <optional>
#include <vector>

#include "signgen/data.hpp"
#include "signgen/rng.hpp"
#include "signgen/tensor.hpp"

namespace signgen {

// One (baseline, truth, false) triple in embedding space. Baseline and the
// false sample are ground truths and arrive detached; gradients reach the
// network only through `truth`, the pooled prediction.
struct TripletBatch {
  Tensor baseline;
  Tensor truth;
  Tensor negative;
  double margin = 0.2;
};

struct LossWeights {
  double lambda_a = 5.0;
  double lambda_b = 5.0;
  double lambda_c = 100.0;
  double lambda_d = 100.0;
};

// The probability-based losses ship in their literal 1 - p form; the negative
// log form is selectable because the product vanishes on long sequences.
enum class LossForm { OneMinusP, NegLogP };

// Mean over all entries of squared difference.
Tensor mse_loss(const Tensor& pred, const Tensor& truth);

// Temporal mean over frames: [T x d] -> [d]. Length-invariant embedding.
Tensor pool_embedding(const Tensor& seq);

// max(d(B,T) - d(B,S) + margin, 0) with d the squared Euclidean distance.
Tensor triplet_distance(const Tensor& baseline, const Tensor& truth,
                        const Tensor& negative, double margin);

// For each sample i: B = pool(truth_i), T = pool(pred_i), S = pool(truth_j)
// with j != i drawn uniformly. `hardest` picks the in-batch negative closest
// to the baseline instead.
std::vector<TripletBatch> select_triplets(const std::vector<Tensor>& truth_seqs,
                                          const std::vector<Tensor>& pred_seqs,
                                          Rng& rng, double margin = 0.2,
                                          bool hardest = false);

// Sum (not mean) of triplet distances over the list.
Tensor metric_loss(const std::vector<TripletBatch>& triplets);

// Forward-algorithm marginal over all alignments collapsing to `target`.
// frame_probs is [T x (G+1)] with rows summing to 1; `blank` indexes the CTC
// blank column. Infeasible targets give probability exactly 0, not an error.
// Computation runs in log space; the returned tensor participates in the graph.
Tensor ctc_probability(const Tensor& frame_probs, const TokenSequence& target,
                       int blank = Vocabulary::kBlank);

// log p, or nullopt when no path exists. Building block for the above.
std::optional<Tensor> ctc_log_probability(const Tensor& frame_probs,
                                          const TokenSequence& target,
                                          int blank = Vocabulary::kBlank);

Tensor recognition_loss(const Tensor& frame_probs, const TokenSequence& target,
                        LossForm form = LossForm::OneMinusP,
                        int blank = Vocabulary::kBlank);

// stepwise [U x W] of per-step word distributions vs a length-U target.
Tensor translation_loss(const Tensor& stepwise, const TokenSequence& target,
                        LossForm form = LossForm::OneMinusP);

Tensor total_text2pose_loss(const Tensor& l_a, const Tensor& l_b, const LossWeights& w);
Tensor total_pose2text_loss(const Tensor& l_c, const Tensor& l_d, const LossWeights& w);

}  // namespace signgen
