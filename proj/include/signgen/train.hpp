#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "signgen/data.hpp"
#include "signgen/losses.hpp"
#include "signgen/nn.hpp"

namespace signgen {

// Non-finite training loss. The CLI maps it to exit code 3.
struct TrainingDivergence : std::runtime_error {
  int epoch;
  int batch;
  TrainingDivergence(int epoch_, int batch_, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch_) +
                           ", batch " + std::to_string(batch_) + ": " + what),
        epoch(epoch_),
        batch(batch_) {}
};

class AdamOptimizer {
 public:
  struct Hyper {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit AdamOptimizer(std::vector<Param> params);  // default hyperparameters
  AdamOptimizer(std::vector<Param> params, Hyper hyper);

  // Bias-corrected update from the gradients currently on the parameters.
  // Parameters backward() never reached count as zero gradient.
  void step();
  void zero_grad();

  double learning_rate() const { return hyper_.lr; }
  void set_learning_rate(double lr) { hyper_.lr = lr; }
  long step_count() const { return t_; }

 private:
  std::vector<Param> params_;
  std::vector<std::vector<double>> m_, v_;
  Hyper hyper_;
  long t_ = 0;
};

// Reduce-on-plateau for a to-be-minimized metric.
class PlateauScheduler {
 public:
  struct Config {
    double factor = 0.5;
    int patience = 5;
    double min_lr = 1e-6;
    double threshold = 1e-6;  // improvements must beat this margin
  };

  PlateauScheduler(Config config, double initial_lr);

  double observe(double metric);  // returns the (possibly reduced) lr
  double lr() const { return lr_; }

 private:
  Config config_;
  double lr_;
  double best_;
  int bad_epochs_ = 0;
};

// ---- training ------------------------------------------------------------------

struct TrainConfig {
  LossWeights weights;
  ModelConfig model;  // callers start from text2pose/pose2text defaults
  int batch_size = 8;
  int max_epochs = 200;
  int early_stop_patience = 0;  // 0 disables early stopping
  PlateauScheduler::Config scheduler;
  AdamOptimizer::Hyper adam;
  std::uint64_t seed = 0;
  std::string source = "text";  // text2pose source arm: "text" | "gloss"
  LossForm loss_form = LossForm::OneMinusP;
  bool hardest_negatives = false;
  double triplet_margin = 0.2;
  int max_gen_frames = 256;
  int max_gen_words = 32;
  double stop_at_train_mse = 0.0;  // > 0: stop once epoch-mean L_a drops below

  void validate() const;
};

// comp1/comp2 are L_a/L_b for text2pose and L_c/L_d for pose2text; extra is
// the EOS-channel term (text2pose only, unit weight). L_a is the mean squared
// error norm per frame (150x the grand-mean MSE of mse_loss).
struct BatchRecord {
  int epoch = 0;
  int batch = 0;
  double comp1 = 0.0;
  double comp2 = 0.0;
  double extra = 0.0;
  double total = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double comp1 = 0.0;
  double comp2 = 0.0;
  double extra = 0.0;
  double total = 0.0;
  double dev_metric = 0.0;
};

struct Text2PoseTrainResult {
  Text2PoseModel model;  // parameters of the best-dev-metric epoch
  std::vector<EpochRecord> log;
  std::vector<BatchRecord> batch_log;
  int best_epoch = -1;
  double best_dev_metric = 0.0;
};

struct Pose2TextTrainResult {
  Pose2TextModel model;
  std::vector<EpochRecord> log;
  std::vector<BatchRecord> batch_log;
  int best_epoch = -1;
  double best_dev_metric = 0.0;
};

// Teacher-forced MSE + in-batch triplet loss per Eq-style weighting; model
// selection on dev DTW over generated (non-teacher-forced) poses, each
// sample's cost normalized by its alignment path length.
Text2PoseTrainResult train_text2pose(const Corpus& corpus, const TrainConfig& config);

// CTC recognition + stepwise translation loss; model selection on dev loss.
Pose2TextTrainResult train_pose2text(const Corpus& corpus, const TrainConfig& config);

// Mean path-normalized DTW between generated and reference poses.
double dev_dtw(const Text2PoseModel& model, const Corpus& corpus,
               const std::string& source, int max_gen_frames);

PoseSequence generate_pose(const Text2PoseModel& model, const TokenSequence& source_ids,
                           int max_frames);

std::vector<std::string> backtranslate_pose(const Pose2TextModel& model,
                                            const Vocabulary& word_vocab,
                                            const PoseSequence& pose, int max_words);

// JSONL, one record per epoch; "kind" selects the component key names.
void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log,
                     const std::string& kind);

// ---- ablation grid -----------------------------------------------------------------

inline const std::vector<std::pair<double, double>>& default_weight_grid() {
  static const std::vector<std::pair<double, double>> grid = {
      {1, 10}, {5, 1}, {5, 5}, {5, 10}, {10, 5}};
  return grid;
}

struct GridCell {
  double lambda_a = 0.0;
  double lambda_b = 0.0;
  std::array<double, 4> bleu_g2p{};
  std::array<double, 4> bleu_t2p{};
  bool failed_g2p = false;
  bool failed_t2p = false;
  std::string error_g2p, error_t2p;
};

// Trains both source arms per cell, back-translates through the fixed
// evaluation model, and reports BLEU-1..4 rows. Failed cells are marked and
// the remaining cells still run.
std::vector<GridCell> grid_search(const Corpus& corpus,
                                  const std::vector<std::pair<double, double>>& grid,
                                  const Pose2TextModel& eval_model,
                                  const Vocabulary& eval_word_vocab,
                                  const TrainConfig& base_config);

std::string format_grid_report(const std::vector<GridCell>& cells);

}  // namespace signgen
