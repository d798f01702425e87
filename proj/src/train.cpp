#include "signgen/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "signgen/metrics.hpp"

namespace signgen {

// ---- Adam ---------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<Param> params)
    : AdamOptimizer(std::move(params), Hyper()) {}

AdamOptimizer::AdamOptimizer(std::vector<Param> params, Hyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
  if (hyper_.lr <= 0.0) throw std::invalid_argument("adam: lr must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor tensor = params_[k].tensor;
    tensor.node()->ensure_grad();  // untouched parameters step with g = 0
    const auto& g = tensor.node()->grad;
    auto& data = tensor.values();
    auto& m = m_[k];
    auto& v = v_[k];
    if (g.size() != data.size())
      throw std::invalid_argument("adam: gradient shape mismatch for " + params_[k].name);
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * g[i];
      v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) {
    Tensor tensor = p.tensor;
    tensor.zero_grad();
  }
}

// ---- plateau scheduler -----------------------------------------------------------

PlateauScheduler::PlateauScheduler(Config config, double initial_lr)
    : config_(config), lr_(initial_lr), best_(std::numeric_limits<double>::infinity()) {
  if (config_.factor <= 0.0 || config_.factor >= 1.0)
    throw std::invalid_argument("scheduler: factor must be in (0,1)");
  if (config_.patience < 1) throw std::invalid_argument("scheduler: patience must be >= 1");
}

double PlateauScheduler::observe(double metric) {
  if (metric < best_ - config_.threshold) {
    best_ = metric;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
    if (bad_epochs_ >= config_.patience) {
      lr_ = std::max(lr_ * config_.factor, config_.min_lr);
      bad_epochs_ = 0;
    }
  }
  return lr_;
}

// ---- config ------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("train config: batch_size must be >= 2");
  if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
  if (early_stop_patience < 0)
    throw std::invalid_argument("train config: early_stop_patience must be >= 0");
  if (source != "text" && source != "gloss")
    throw std::invalid_argument("train config: source must be 'text' or 'gloss'");
  if (triplet_margin < 0.0)
    throw std::invalid_argument("train config: triplet_margin must be >= 0");
  if (max_gen_frames < 1 || max_gen_words < 1)
    throw std::invalid_argument("train config: generation caps must be >= 1");
  model.validate();
}

// ---- shared helpers ------------------------------------------------------------------

namespace {

std::vector<std::vector<double>> snapshot_params(const std::vector<Param>& params) {
  std::vector<std::vector<double>> snap;
  snap.reserve(params.size());
  for (const auto& p : params) snap.push_back(p.tensor.values());
  return snap;
}

void restore_params(const std::vector<Param>& params,
                    const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor tensor = params[i].tensor;
    tensor.values() = snap[i];
  }
}

Tensor mean_of(const std::vector<Tensor>& terms) {
  Tensor acc;
  for (const Tensor& t : terms) acc = acc.defined() ? add(acc, t) : t;
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

const PaddedTokens& source_tokens(const Batch& batch, const std::string& source) {
  return source == "gloss" ? batch.glosses : batch.sentences;
}

TokenSequence source_ids(const Corpus& corpus, std::size_t i, const std::string& source) {
  return source == "gloss" ? corpus.gloss_ids(i) : corpus.sentence_ids(i);
}

}  // namespace

PoseSequence generate_pose(const Text2PoseModel& model, const TokenSequence& ids,
                           int max_frames) {
  NoGradGuard no_grad;
  Tensor enc = model.encode(ids);
  return model.decode_autoregressive(enc, -1, max_frames);
}

double dev_dtw(const Text2PoseModel& model, const Corpus& corpus, const std::string& source,
               int max_gen_frames) {
  double total = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const PoseSequence& truth = corpus.samples[i].pose;
    // generation capped relative to the reference so early epochs with an
    // untrained stop channel stay cheap
    const int cap = std::min(max_gen_frames, 2 * truth.frames() + 8);
    PoseSequence gen = generate_pose(model, source_ids(corpus, i, source), cap);
    DtwResult r = dtw(gen, truth);
    total += r.cost / static_cast<double>(r.path.size());
  }
  return total / static_cast<double>(corpus.size());
}

std::vector<std::string> backtranslate_pose(const Pose2TextModel& model,
                                            const Vocabulary& word_vocab,
                                            const PoseSequence& pose, int max_words) {
  NoGradGuard no_grad;
  Tensor enc = model.encode(pose);
  return word_vocab.decode(model.decode_greedy(enc, max_words));
}

// ---- text2pose training --------------------------------------------------------------

Text2PoseTrainResult train_text2pose(const Corpus& corpus, const TrainConfig& config) {
  config.validate();
  if (corpus.samples.empty()) throw DataError("train_text2pose: empty corpus");
  const Vocabulary& src_vocab =
      config.source == "gloss" ? corpus.gloss_vocab : corpus.word_vocab;

  Text2PoseModel model(config.model, src_vocab.size(), config.seed);
  AdamOptimizer opt(model.params(), config.adam);
  PlateauScheduler scheduler(config.scheduler, config.adam.lr);
  Rng triplet_rng(Rng::derive(config.seed, 5000));

  Text2PoseTrainResult result{std::move(model), {}, {}, -1,
                              std::numeric_limits<double>::infinity()};
  Text2PoseModel& net = result.model;
  std::vector<std::vector<double>> best_snapshot;
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    net.set_training(true);
    auto batches = make_batches(corpus, config.batch_size, config.seed, epoch);
    double sum_a = 0.0, sum_b = 0.0, sum_eos = 0.0, sum_total = 0.0;

    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch& batch = batches[b];
      const PaddedTokens& src = source_tokens(batch, config.source);
      opt.zero_grad();

      std::vector<Tensor> mse_terms, eos_terms, truth_seqs, pred_seqs;
      for (std::size_t k = 0; k < batch.indices.size(); ++k) {
        const auto& sample = corpus.samples[static_cast<std::size_t>(batch.indices[k])];
        Tensor enc = net.encode(src.rows[k], src.lengths[k]);
        PoseDecodeOut out = net.decode_teacher_forced(enc, src.lengths[k], sample.pose);
        Tensor truth = sample.pose.to_tensor();
        // L_a normalizes over frames only: the mean squared error NORM per
        // frame. This keeps it on the same scale as the unnormalized triplet
        // sum, which is what makes the 5/5 weighting meaningful.
        mse_terms.push_back(scale(mse_loss(out.pose, truth), PoseSequence::kFrameDim));
        std::vector<double> eos_target(static_cast<std::size_t>(sample.pose.frames()), 0.0);
        eos_target.back() = 1.0;
        eos_terms.push_back(bce_with_logits(out.eos_logits, eos_target));
        truth_seqs.push_back(std::move(truth));
        pred_seqs.push_back(out.pose);
      }

      Tensor loss_a = mean_of(mse_terms);
      Tensor loss_eos = mean_of(eos_terms);
      Tensor loss_b;
      if (config.weights.lambda_b > 0.0) {
        auto triplets = select_triplets(truth_seqs, pred_seqs, triplet_rng,
                                        config.triplet_margin, config.hardest_negatives);
        loss_b = metric_loss(triplets);
      } else {
        loss_b = Tensor::scalar(0.0);
      }
      Tensor total = add(total_text2pose_loss(loss_a, loss_b, config.weights), loss_eos);

      if (!std::isfinite(total.value()))
        throw TrainingDivergence(epoch, static_cast<int>(b), "non-finite loss");
      backward(total);
      opt.step();

      result.batch_log.push_back({epoch, static_cast<int>(b), loss_a.value(), loss_b.value(),
                                  loss_eos.value(), total.value()});
      sum_a += loss_a.value();
      sum_b += loss_b.value();
      sum_eos += loss_eos.value();
      sum_total += total.value();
    }

    net.set_training(false);
    const double dev = dev_dtw(net, corpus, config.source, config.max_gen_frames);
    const double n_batches = static_cast<double>(batches.size());
    result.log.push_back({epoch, opt.learning_rate(), sum_a / n_batches, sum_b / n_batches,
                          sum_eos / n_batches, sum_total / n_batches, dev});

    if (dev < result.best_dev_metric) {
      result.best_dev_metric = dev;
      result.best_epoch = epoch;
      best_snapshot = snapshot_params(net.params());
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
    }
    opt.set_learning_rate(scheduler.observe(dev));
    if (config.early_stop_patience > 0 && epochs_since_best >= config.early_stop_patience)
      break;
    // stop target is the plain grand-mean MSE; L_a carries the frame-dim factor
    if (config.stop_at_train_mse > 0.0 &&
        sum_a / n_batches / PoseSequence::kFrameDim < config.stop_at_train_mse)
      break;
  }

  if (!best_snapshot.empty()) restore_params(net.params(), best_snapshot);
  return result;
}

// ---- pose2text training ---------------------------------------------------------------

namespace {

struct P2tLosses {
  Tensor recognition;
  Tensor translation;
};

P2tLosses pose2text_sample_losses(const Pose2TextModel& model, const CorpusSample& sample,
                                  const TokenSequence& gloss_ids,
                                  const TokenSequence& sentence_ids, LossForm form) {
  Tensor enc = model.encode(sample.pose);
  Tensor gloss_probs = model.gloss_probabilities_from(enc);
  Tensor l_c = recognition_loss(gloss_probs, gloss_ids, form);

  TokenSequence inputs{Vocabulary::kBos};
  inputs.insert(inputs.end(), sentence_ids.begin(), sentence_ids.end());
  TokenSequence targets = sentence_ids;
  targets.push_back(Vocabulary::kEos);
  Tensor z = model.decode_teacher_forced(enc, inputs);
  Tensor l_d = translation_loss(z, targets, form);
  return {std::move(l_c), std::move(l_d)};
}

double pose2text_dev_loss(const Pose2TextModel& model, const Corpus& corpus,
                          const TrainConfig& config) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto losses = pose2text_sample_losses(model, corpus.samples[i], corpus.gloss_ids(i),
                                          corpus.sentence_ids(i), config.loss_form);
    total += config.weights.lambda_c * losses.recognition.value() +
             config.weights.lambda_d * losses.translation.value();
  }
  return total / static_cast<double>(corpus.size());
}

}  // namespace

Pose2TextTrainResult train_pose2text(const Corpus& corpus, const TrainConfig& config) {
  config.validate();
  if (corpus.samples.empty()) throw DataError("train_pose2text: empty corpus");

  Pose2TextModel model(config.model, corpus.word_vocab.size(), corpus.gloss_vocab.size(),
                       config.seed);
  AdamOptimizer opt(model.params(), config.adam);
  PlateauScheduler scheduler(config.scheduler, config.adam.lr);

  Pose2TextTrainResult result{std::move(model), {}, {}, -1,
                              std::numeric_limits<double>::infinity()};
  Pose2TextModel& net = result.model;
  std::vector<std::vector<double>> best_snapshot;
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    net.set_training(true);
    auto batches = make_batches(corpus, config.batch_size, config.seed, epoch);
    double sum_c = 0.0, sum_d = 0.0, sum_total = 0.0;

    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch& batch = batches[b];
      opt.zero_grad();

      std::vector<Tensor> c_terms, d_terms;
      for (std::size_t k = 0; k < batch.indices.size(); ++k) {
        const std::size_t idx = static_cast<std::size_t>(batch.indices[k]);
        auto losses = pose2text_sample_losses(net, corpus.samples[idx], corpus.gloss_ids(idx),
                                              corpus.sentence_ids(idx), config.loss_form);
        c_terms.push_back(std::move(losses.recognition));
        d_terms.push_back(std::move(losses.translation));
      }

      Tensor loss_c = mean_of(c_terms);
      Tensor loss_d = mean_of(d_terms);
      Tensor total = total_pose2text_loss(loss_c, loss_d, config.weights);

      if (!std::isfinite(total.value()))
        throw TrainingDivergence(epoch, static_cast<int>(b), "non-finite loss");
      backward(total);
      opt.step();

      result.batch_log.push_back({epoch, static_cast<int>(b), loss_c.value(), loss_d.value(),
                                  0.0, total.value()});
      sum_c += loss_c.value();
      sum_d += loss_d.value();
      sum_total += total.value();
    }

    net.set_training(false);
    const double dev = pose2text_dev_loss(net, corpus, config);
    const double n_batches = static_cast<double>(batches.size());
    result.log.push_back({epoch, opt.learning_rate(), sum_c / n_batches, sum_d / n_batches,
                          0.0, sum_total / n_batches, dev});

    if (dev < result.best_dev_metric) {
      result.best_dev_metric = dev;
      result.best_epoch = epoch;
      best_snapshot = snapshot_params(net.params());
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
    }
    opt.set_learning_rate(scheduler.observe(dev));
    if (config.early_stop_patience > 0 && epochs_since_best >= config.early_stop_patience)
      break;
  }

  if (!best_snapshot.empty()) restore_params(net.params(), best_snapshot);
  return result;
}

// ---- logs ------------------------------------------------------------------------------

void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log,
                     const std::string& kind) {
  const bool t2p = kind == "text2pose";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write log " + path.string());
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j[t2p ? "L_a" : "L_c"] = r.comp1;
    j[t2p ? "L_b" : "L_d"] = r.comp2;
    if (t2p) j["L_eos"] = r.extra;
    j["total"] = r.total;
    j[t2p ? "dev_dtw" : "dev_loss"] = r.dev_metric;
    f << j.dump() << "\n";
  }
}

// ---- grid search -----------------------------------------------------------------------

namespace {

std::array<double, 4> grid_arm_bleu(const Corpus& corpus, const TrainConfig& cell_config,
                                    const Pose2TextModel& eval_model,
                                    const Vocabulary& eval_word_vocab) {
  Text2PoseTrainResult trained = train_text2pose(corpus, cell_config);
  std::vector<std::vector<std::string>> candidates, references;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    PoseSequence pose = generate_pose(trained.model, source_ids(corpus, i, cell_config.source),
                                      cell_config.max_gen_frames);
    candidates.push_back(backtranslate_pose(eval_model, eval_word_vocab, pose,
                                            cell_config.max_gen_words));
    references.push_back(corpus.samples[i].sentence);
  }
  return corpus_bleu(candidates, references).bleu;
}

}  // namespace

std::vector<GridCell> grid_search(const Corpus& corpus,
                                  const std::vector<std::pair<double, double>>& grid,
                                  const Pose2TextModel& eval_model,
                                  const Vocabulary& eval_word_vocab,
                                  const TrainConfig& base_config) {
  if (grid.empty()) throw std::invalid_argument("grid_search: empty grid");
  std::vector<GridCell> cells;
  for (auto [la, lb] : grid) {
    GridCell cell;
    cell.lambda_a = la;
    cell.lambda_b = lb;
    TrainConfig config = base_config;
    config.weights.lambda_a = la;
    config.weights.lambda_b = lb;

    config.source = "gloss";
    try {
      cell.bleu_g2p = grid_arm_bleu(corpus, config, eval_model, eval_word_vocab);
    } catch (const std::exception& e) {
      cell.failed_g2p = true;
      cell.error_g2p = e.what();
    }
    config.source = "text";
    try {
      cell.bleu_t2p = grid_arm_bleu(corpus, config, eval_model, eval_word_vocab);
    } catch (const std::exception& e) {
      cell.failed_t2p = true;
      cell.error_t2p = e.what();
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::string format_grid_report(const std::vector<GridCell>& cells) {
  std::string out;
  out += "arm\tlambda_a\tlambda_b\tBLEU1\tBLEU2\tBLEU3\tBLEU4\n";
  auto row = [&out](const char* arm, double la, double lb, const std::array<double, 4>& bleu,
                    bool failed, const std::string& error) {
    out += arm;
    out += '\t' + fmt_double(la) + '\t' + fmt_double(lb);
    if (failed) {
      out += "\tFAILED: " + error + "\n";
      return;
    }
    for (double b : bleu) out += '\t' + fmt_double(b);
    out += '\n';
  };
  for (const auto& c : cells) {
    row("G2P", c.lambda_a, c.lambda_b, c.bleu_g2p, c.failed_g2p, c.error_g2p);
    row("T2P", c.lambda_a, c.lambda_b, c.bleu_t2p, c.failed_t2p, c.error_t2p);
  }
  return out;
}

}  // namespace signgen
