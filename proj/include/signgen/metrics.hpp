#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "signgen/data.hpp"

namespace signgen {

struct DtwResult {
  double cost = 0.0;
  std::vector<std::pair<int, int>> path;  // (0,0) ... (T1-1, T2-1)
};

using FrameDistance =
    std::function<double(const std::vector<double>&, const std::vector<double>&)>;

double euclidean_frame_distance(const std::vector<double>& a, const std::vector<double>& b);

// Minimal-cost monotone alignment (steps: down, right, diagonal). Ties during
// path reconstruction prefer diagonal, then vertical (advance in a), then
// horizontal.
DtwResult dtw_frames(const std::vector<std::vector<double>>& a,
                     const std::vector<std::vector<double>>& b,
                     const FrameDistance& dist = euclidean_frame_distance);

DtwResult dtw(const PoseSequence& a, const PoseSequence& b,
              const FrameDistance& dist = euclidean_frame_distance);

struct BleuReport {
  std::array<double, 4> bleu{};        // BLEU-1..BLEU-4
  std::array<double, 4> precisions{};  // modified n-gram precisions p1..p4
  double brevity_penalty = 1.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

// Corpus-level BLEU with clipped n-gram counts, single reference per
// candidate, no smoothing: any zero precision zeroes the score.
// BLEU-n = BP * exp((1/n) * sum_{k<=n} ln p_k).
BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                       const std::vector<std::vector<std::string>>& references);

}  // namespace signgen
