#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "signgen/metrics.hpp"
#include "signgen/nn.hpp"

namespace signgen {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitDataError = 2;
inline constexpr int kExitDivergence = 3;

struct EvalReportRow {
  std::string id;
  std::string reference;
  std::string prediction;
};

struct EvalReport {
  std::vector<EvalReportRow> rows;
  BleuReport bleu;
  double mean_dev_dtw = 0.0;
  std::vector<std::pair<std::string, std::string>> config_echo;
};

// Greedy-decodes every pose file in `pose_dir` (sorted by name, stem = sample
// id) through the evaluation model and scores against the reference corpus.
// Tokens are lowercased before BLEU.
EvalReport evaluate_backtranslation(const std::filesystem::path& pose_dir,
                                    const Pose2TextBundle& bundle, const Corpus& references,
                                    int max_words);

std::string format_eval_report(const EvalReport& report);

// Full CLI: args exclude the program name. Writes a single-line
// "error: ..." to err on failure and returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace signgen
