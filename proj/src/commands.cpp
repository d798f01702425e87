#include "signgen/commands.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "signgen/render.hpp"
#include "signgen/train.hpp"

namespace signgen {

namespace fs = std::filesystem;

namespace {

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::string> lowercased(const std::vector<std::string>& words) {
  std::vector<std::string> out = words;
  for (auto& w : out)
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

EvalReport evaluate_backtranslation(const fs::path& pose_dir, const Pose2TextBundle& bundle,
                                    const Corpus& references, int max_words) {
  std::map<std::string, const CorpusSample*> by_id;
  for (const auto& s : references.samples) by_id[s.id] = &s;

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(pose_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if (ext == ".pose" || ext == ".poseb") files.push_back(entry.path());
  }
  if (files.empty()) throw DataError("no pose files in " + pose_dir.string());
  std::sort(files.begin(), files.end());

  EvalReport report;
  std::vector<std::vector<std::string>> candidates, refs;
  double dtw_total = 0.0;
  for (const auto& file : files) {
    const std::string id = file.stem().string();
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw DataError("pose file " + file.string() + " has no reference with id '" + id + "'");
    PoseSequence pose = load_pose(file);
    auto predicted = backtranslate_pose(bundle.model, bundle.word_vocab, pose, max_words);
    report.rows.push_back({id, join_words(it->second->sentence), join_words(predicted)});
    candidates.push_back(lowercased(predicted));
    refs.push_back(lowercased(it->second->sentence));
    DtwResult aligned = dtw(pose, it->second->pose);
    dtw_total += aligned.cost / static_cast<double>(aligned.path.size());
  }
  report.bleu = corpus_bleu(candidates, refs);
  report.mean_dev_dtw = dtw_total / static_cast<double>(files.size());

  const ModelConfig& c = bundle.model.config();
  report.config_echo = {
      {"embed_dim", std::to_string(c.embed_dim)},
      {"n_heads", std::to_string(c.n_heads)},
      {"n_encoder_layers", std::to_string(c.n_encoder_layers)},
      {"n_decoder_layers", std::to_string(c.n_decoder_layers)},
      {"word_vocab", std::to_string(bundle.word_vocab.size())},
      {"gloss_vocab", std::to_string(bundle.gloss_vocab.size())},
      {"max_words", std::to_string(max_words)},
  };
  return report;
}

std::string format_eval_report(const EvalReport& report) {
  std::string out = "# backtranslation report\n";
  out += "# tokenization: whitespace, lowercase\n";
  for (const auto& [k, v] : report.config_echo) out += "# " + k + ": " + v + "\n";
  out += "# id\treference\tprediction\n";
  for (const auto& row : report.rows)
    out += row.id + "\t" + row.reference + "\t" + row.prediction + "\n";
  out += "# summary\n";
  out += "# samples: " + std::to_string(report.rows.size()) + "\n";
  for (int n = 0; n < 4; ++n)
    out += "# bleu" + std::to_string(n + 1) + ": " + fmt_double(report.bleu.bleu[n]) + "\n";
  out += "# brevity_penalty: " + fmt_double(report.bleu.brevity_penalty) + "\n";
  out += "# mean_dev_dtw: " + fmt_double(report.mean_dev_dtw) + "\n";
  return out;
}

// ---- CLI ----------------------------------------------------------------------

namespace {

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

struct TrainFlags {
  TrainConfig config;
  std::string corpus_path;
  std::string out_path;
  std::string log_path;
};

// Shared training options; model defaults come pre-set per subcommand.
void add_train_options(CLI::App* cmd, TrainFlags& flags) {
  cmd->add_option("--corpus", flags.corpus_path, "corpus manifest.tsv")->required();
  cmd->add_option("--out", flags.out_path, "checkpoint output path")->required();
  cmd->add_option("--log", flags.log_path, "epoch log path (default: <out>.log)");
  cmd->add_option("--epochs", flags.config.max_epochs, "max training epochs");
  cmd->add_option("--batch-size", flags.config.batch_size, "batch size");
  cmd->add_option("--seed", flags.config.seed, "rng seed (default 0)");
  cmd->add_option("--lr", flags.config.adam.lr, "Adam learning rate");
  cmd->add_option("--early-stop", flags.config.early_stop_patience,
                  "early-stop patience (0 disables)");
  cmd->add_option("--embed-dim", flags.config.model.embed_dim, "embedding dimension");
  cmd->add_option("--heads", flags.config.model.n_heads, "attention heads");
  cmd->add_option("--enc-layers", flags.config.model.n_encoder_layers, "encoder layers");
  cmd->add_option("--dec-layers", flags.config.model.n_decoder_layers, "decoder layers");
  cmd->add_option("--ff-dim", flags.config.model.ff_dim, "feed-forward width (0: 4x embed)");
  cmd->add_option("--dropout", flags.config.model.dropout, "dropout rate");
  cmd->add_option("--max-seq-len", flags.config.model.max_seq_len, "max sequence length");
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"text-to-pose sign generation and back-translation evaluation"};
  app.require_subcommand(1);
  app.set_config("--config");

  // gen-corpus
  auto* gen_corpus = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  SyntheticSpec spec;
  int n_samples = 50;
  int confusable = 0;
  std::string corpus_out;
  bool binary_poses = false;
  gen_corpus->add_option("--out", corpus_out, "output directory")->required();
  gen_corpus->add_option("--samples", n_samples, "number of samples");
  gen_corpus->add_option("--vocab", spec.vocab_size, "word vocabulary size");
  gen_corpus->add_option("--seed", spec.seed, "rng seed (default 0)");
  gen_corpus->add_option("--noise-std", spec.noise_std, "per-coordinate Gaussian noise");
  gen_corpus->add_option("--motif-min", spec.motif_len_min, "min motif frames");
  gen_corpus->add_option("--motif-max", spec.motif_len_max, "max motif frames");
  gen_corpus->add_option("--sentence-min", spec.sentence_len_min, "min words per sentence");
  gen_corpus->add_option("--sentence-max", spec.sentence_len_max, "max words per sentence");
  gen_corpus->add_option("--confusable", confusable, "number of confusable word pairs");
  gen_corpus->add_option("--confusable-offset", spec.confusable_offset,
                         "per-coordinate offset between confusable motifs");
  gen_corpus->add_flag("--binary", binary_poses, "write binary pose files");

  // train-t2p
  auto* train_t2p = app.add_subcommand("train-t2p", "train the text-to-pose model");
  TrainFlags t2p;
  t2p.config.model = ModelConfig::text2pose_defaults();
  add_train_options(train_t2p, t2p);
  train_t2p->add_option("--source", t2p.config.source, "source tokens: text | gloss");
  train_t2p->add_option("--lambda-a", t2p.config.weights.lambda_a, "regression loss weight");
  train_t2p->add_option("--lambda-b", t2p.config.weights.lambda_b, "metric loss weight");
  train_t2p->add_option("--margin", t2p.config.triplet_margin, "triplet margin");
  train_t2p->add_flag("--hardest", t2p.config.hardest_negatives,
                      "hardest-in-batch negatives instead of random");
  train_t2p->add_option("--max-frames", t2p.config.max_gen_frames, "generation frame cap");

  // train-p2t
  auto* train_p2t = app.add_subcommand("train-p2t", "train the pose-to-text evaluation model");
  TrainFlags p2t;
  p2t.config.model = ModelConfig::pose2text_defaults();
  add_train_options(train_p2t, p2t);
  std::string loss_form = "paper";
  train_p2t->add_option("--lambda-c", p2t.config.weights.lambda_c, "recognition loss weight");
  train_p2t->add_option("--lambda-d", p2t.config.weights.lambda_d, "translation loss weight");
  train_p2t->add_option("--loss-form", loss_form, "paper (1-p) | log (-log p)")
      ->check(CLI::IsMember({"paper", "log"}));

  // generate
  auto* generate = app.add_subcommand("generate", "decode pose files from input text lines");
  std::string gen_ckpt, gen_input, gen_out_dir;
  int gen_max_frames = 256;
  bool gen_binary = false;
  generate->add_option("--ckpt", gen_ckpt, "text2pose checkpoint")->required();
  generate->add_option("--input", gen_input, "input file, one sentence per line "
                                             "(optional leading 'id<TAB>')")
      ->required();
  generate->add_option("--out-dir", gen_out_dir, "pose output directory")->required();
  generate->add_option("--max-frames", gen_max_frames, "generation frame cap");
  generate->add_flag("--binary", gen_binary, "write binary pose files");

  // backtranslate
  auto* backtr = app.add_subcommand("backtranslate", "translate pose files back to text");
  std::string bt_poses, bt_ckpt, bt_refs, bt_out;
  int bt_max_words = 32;
  backtr->add_option("--poses", bt_poses, "directory of pose files")->required();
  backtr->add_option("--ckpt", bt_ckpt, "pose2text checkpoint")->required();
  backtr->add_option("--refs", bt_refs, "reference corpus manifest")->required();
  backtr->add_option("--out", bt_out, "report output path");
  backtr->add_option("--max-words", bt_max_words, "decode word cap");

  // grid
  auto* grid_cmd = app.add_subcommand("grid", "lambda grid ablation over text2pose training");
  TrainFlags grid_flags;
  grid_flags.config.model = ModelConfig::text2pose_defaults();
  std::string grid_eval_ckpt, grid_out, grid_cells;
  grid_cmd->add_option("--corpus", grid_flags.corpus_path, "corpus manifest.tsv")->required();
  grid_cmd->add_option("--eval-ckpt", grid_eval_ckpt, "fixed pose2text checkpoint")->required();
  grid_cmd->add_option("--out", grid_out, "report output path")->required();
  grid_cmd->add_option("--cells", grid_cells,
                       "comma list of lambda_a:lambda_b cells (default paper grid)");
  grid_cmd->add_option("--epochs", grid_flags.config.max_epochs, "epochs per cell");
  grid_cmd->add_option("--batch-size", grid_flags.config.batch_size, "batch size");
  grid_cmd->add_option("--seed", grid_flags.config.seed, "rng seed (default 0)");
  grid_cmd->add_option("--lr", grid_flags.config.adam.lr, "Adam learning rate");
  grid_cmd->add_option("--embed-dim", grid_flags.config.model.embed_dim, "embedding dimension");
  grid_cmd->add_option("--heads", grid_flags.config.model.n_heads, "attention heads");
  grid_cmd->add_option("--ff-dim", grid_flags.config.model.ff_dim, "feed-forward width");
  grid_cmd->add_option("--dropout", grid_flags.config.model.dropout, "dropout rate");
  grid_cmd->add_option("--max-seq-len", grid_flags.config.model.max_seq_len,
                       "max sequence length");

  // render
  auto* render_cmd = app.add_subcommand("render", "render pose frames as SVG stick figures");
  std::string render_pose, render_out_dir;
  int render_stride = 1;
  render_cmd->add_option("--pose", render_pose, "pose file")->required();
  render_cmd->add_option("--out-dir", render_out_dir, "SVG output directory")->required();
  render_cmd->add_option("--stride", render_stride, "frame stride");

  // a config file can stand in for any flag; explicit flags win
  for (CLI::App* sub : {gen_corpus, train_t2p, train_p2t, generate, backtr, grid_cmd,
                        render_cmd})
    sub->set_config("--config");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  }

  if (gen_corpus->parsed()) {
    for (int i = 0; i < confusable; ++i) spec.confusable_pairs.emplace_back(2 * i, 2 * i + 1);
    Corpus corpus = generate_synthetic_corpus(spec, n_samples);
    save_corpus(corpus_out, corpus, binary_poses ? PoseFormat::Binary : PoseFormat::Text);
    save_synthetic_spec(fs::path(corpus_out) / "spec.json", spec);
    out << "wrote " << corpus.size() << " samples to " << corpus_out << "\n";
    return kExitOk;
  }

  if (train_t2p->parsed()) {
    Corpus corpus = load_corpus(t2p.corpus_path);
    Text2PoseTrainResult result = train_text2pose(corpus, t2p.config);
    const Vocabulary& vocab =
        t2p.config.source == "gloss" ? corpus.gloss_vocab : corpus.word_vocab;
    save_text2pose(t2p.out_path, result.model, vocab, t2p.config.source);
    write_epoch_log(t2p.log_path.empty() ? t2p.out_path + ".log" : t2p.log_path, result.log,
                    "text2pose");
    out << "best epoch " << result.best_epoch << " dev_dtw "
        << fmt_double(result.best_dev_metric) << "\n";
    return kExitOk;
  }

  if (train_p2t->parsed()) {
    p2t.config.loss_form = loss_form == "log" ? LossForm::NegLogP : LossForm::OneMinusP;
    Corpus corpus = load_corpus(p2t.corpus_path);
    Pose2TextTrainResult result = train_pose2text(corpus, p2t.config);
    save_pose2text(p2t.out_path, result.model, corpus.word_vocab, corpus.gloss_vocab);
    write_epoch_log(p2t.log_path.empty() ? p2t.out_path + ".log" : p2t.log_path, result.log,
                    "pose2text");
    out << "best epoch " << result.best_epoch << " dev_loss "
        << fmt_double(result.best_dev_metric) << "\n";
    return kExitOk;
  }

  if (generate->parsed()) {
    Text2PoseBundle bundle = load_text2pose(gen_ckpt);
    std::ifstream in(gen_input);
    if (!in) throw DataError("cannot open " + gen_input);
    fs::create_directories(gen_out_dir);
    std::string line;
    int line_no = 0, written = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::string id;
      std::string text = line;
      if (auto tab = line.find('\t'); tab != std::string::npos) {
        id = line.substr(0, tab);
        text = line.substr(tab + 1);
      } else {
        std::string digits = std::to_string(line_no - 1);
        while (digits.size() < 4) digits.insert(digits.begin(), '0');
        id = "gen" + digits;
      }
      std::istringstream ss(text);
      std::vector<std::string> words;
      std::string w;
      while (ss >> w) words.push_back(w);
      if (words.empty()) throw DataError("input line " + std::to_string(line_no) + " is empty");
      TokenSequence ids;
      for (const auto& word : words) {
        if (!bundle.src_vocab.contains(word))
          err << "warning: line " << line_no << ": token '" << word << "' not in vocabulary, "
              << "using <unk>\n";
        ids.push_back(bundle.src_vocab.id_or_unk(word));
      }
      PoseSequence pose = generate_pose(bundle.model, ids, gen_max_frames);
      const char* ext = gen_binary ? ".poseb" : ".pose";
      save_pose(fs::path(gen_out_dir) / (id + ext), pose,
                gen_binary ? PoseFormat::Binary : PoseFormat::Text);
      ++written;
    }
    if (written == 0) throw DataError("input file " + gen_input + " has no lines");
    out << "wrote " << written << " pose files to " << gen_out_dir << "\n";
    return kExitOk;
  }

  if (backtr->parsed()) {
    Pose2TextBundle bundle = load_pose2text(bt_ckpt);
    Corpus refs = load_corpus(bt_refs);
    EvalReport report = evaluate_backtranslation(bt_poses, bundle, refs, bt_max_words);
    const std::string text = format_eval_report(report);
    if (!bt_out.empty()) write_text_file(bt_out, text);
    out << text;
    return kExitOk;
  }

  if (grid_cmd->parsed()) {
    Corpus corpus = load_corpus(grid_flags.corpus_path);
    Pose2TextBundle bundle = load_pose2text(grid_eval_ckpt);
    std::vector<std::pair<double, double>> cells;
    if (grid_cells.empty()) {
      cells = default_weight_grid();
    } else {
      std::istringstream ss(grid_cells);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        const auto colon = cell.find(':');
        if (colon == std::string::npos)
          throw DataError("bad grid cell '" + cell + "', expected lambda_a:lambda_b");
        cells.emplace_back(std::stod(cell.substr(0, colon)), std::stod(cell.substr(colon + 1)));
      }
      if (cells.empty()) throw DataError("empty --cells list");
    }
    auto results = grid_search(corpus, cells, bundle.model, bundle.word_vocab,
                               grid_flags.config);
    const std::string report = format_grid_report(results);
    write_text_file(grid_out, report);
    out << report;
    return kExitOk;
  }

  if (render_cmd->parsed()) {
    PoseSequence pose = load_pose(render_pose);
    auto files = render_svg(pose, render_out_dir, fs::path(render_pose).stem().string(),
                            render_stride);
    out << "wrote " << files.size() << " SVG files to " << render_out_dir << "\n";
    return kExitOk;
  }

  return kExitUsage;  // unreachable: require_subcommand(1)
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return cli_main(args, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingDivergence& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDataError;
  }
}

}  // namespace signgen
