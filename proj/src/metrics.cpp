#include "signgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace signgen {

double euclidean_frame_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("frame distance: widths differ, " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

DtwResult dtw_frames(const std::vector<std::vector<double>>& a,
                     const std::vector<std::vector<double>>& b, const FrameDistance& dist) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  if (n == 0 || m == 0) throw std::invalid_argument("dtw: empty sequence");

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cost(static_cast<std::size_t>(n) * m);
  auto at = [&](int i, int j) -> double& { return cost[static_cast<std::size_t>(i) * m + j]; };

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double d = dist(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(j)]);
      if (d < 0.0) throw std::invalid_argument("dtw: negative frame distance");
      double best = 0.0;
      if (i > 0 || j > 0) {
        const double diag = (i > 0 && j > 0) ? at(i - 1, j - 1) : inf;
        const double vert = i > 0 ? at(i - 1, j) : inf;
        const double horz = j > 0 ? at(i, j - 1) : inf;
        best = std::min({diag, vert, horz});
      }
      at(i, j) = d + best;
    }
  }

  DtwResult result;
  result.cost = at(n - 1, m - 1);
  int i = n - 1, j = m - 1;
  result.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    const double diag = (i > 0 && j > 0) ? at(i - 1, j - 1) : inf;
    const double vert = i > 0 ? at(i - 1, j) : inf;
    const double horz = j > 0 ? at(i, j - 1) : inf;
    if (diag <= vert && diag <= horz) {
      --i;
      --j;
    } else if (vert <= horz) {
      --i;
    } else {
      --j;
    }
    result.path.emplace_back(i, j);
  }
  std::reverse(result.path.begin(), result.path.end());
  return result;
}

DtwResult dtw(const PoseSequence& a, const PoseSequence& b, const FrameDistance& dist) {
  auto rows = [](const PoseSequence& s) {
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<std::size_t>(s.frames()));
    for (int t = 0; t < s.frames(); ++t)
      out.emplace_back(s.values.begin() + static_cast<std::size_t>(t) * PoseSequence::kFrameDim,
                       s.values.begin() +
                           static_cast<std::size_t>(t + 1) * PoseSequence::kFrameDim);
    return out;
  };
  return dtw_frames(rows(a), rows(b), dist);
}

// ---- BLEU ---------------------------------------------------------------------

namespace {

// n-grams keyed by joining tokens on an unlikely separator
std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& tokens,
                                                  std::size_t n) {
  std::unordered_map<std::string, int> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      if (k) key += '\x1f';
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                       const std::vector<std::vector<std::string>>& references) {
  if (candidates.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (candidates.size() != references.size())
    throw std::invalid_argument("corpus_bleu: " + std::to_string(candidates.size()) +
                                " candidates vs " + std::to_string(references.size()) +
                                " references");

  BleuReport report;
  std::array<long long, 4> matched{};
  std::array<long long, 4> total{};
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& cand = candidates[s];
    const auto& ref = references[s];
    report.candidate_length += cand.size();
    report.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      if (cand.size() < n) continue;
      total[n - 1] += static_cast<long long>(cand.size() - n + 1);
      auto ref_counts = ngram_counts(ref, n);
      for (const auto& [key, count] : ngram_counts(cand, n)) {
        auto it = ref_counts.find(key);
        if (it != ref_counts.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }

  for (int n = 0; n < 4; ++n)
    report.precisions[n] =
        total[n] > 0 ? static_cast<double>(matched[n]) / static_cast<double>(total[n]) : 0.0;

  if (report.candidate_length == 0) {
    report.brevity_penalty = 0.0;
  } else if (report.candidate_length < report.reference_length) {
    report.brevity_penalty = std::exp(1.0 - static_cast<double>(report.reference_length) /
                                                static_cast<double>(report.candidate_length));
  } else {
    report.brevity_penalty = 1.0;
  }

  for (int n = 0; n < 4; ++n) {
    double log_sum = 0.0;
    bool zero = false;
    for (int k = 0; k <= n; ++k) {
      if (report.precisions[k] <= 0.0) {
        zero = true;
        break;
      }
      log_sum += std::log(report.precisions[k]);
    }
    report.bleu[n] = zero ? 0.0 : report.brevity_penalty * std::exp(log_sum / (n + 1));
  }
  return report;
}

}  // namespace signgen
