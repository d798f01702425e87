#pragma once

// Independent brute-force oracles. These stay deliberately naive: path
// enumeration instead of dynamic programming, so they share no code path with
// the implementations they check.

#include <functional>
#include <vector>

#include "signgen/nn.hpp"
#include "signgen/tensor.hpp"

namespace signgen::oracles {

// Sum of probabilities of every (n_classes)^T frame-label path whose collapse
// (merge adjacent repeats, then drop blanks) equals `target`.
double ctc_brute_force(const std::vector<std::vector<double>>& frame_probs,
                       const std::vector<int>& target, int blank);

// All label sequences (excluding `blank`) with lengths 0..max_len.
std::vector<std::vector<int>> all_targets(int n_classes, int blank, int max_len);

// Minimal total distance over every monotone warping path, enumerated
// recursively from (0,0) with the same left-to-right summation order the
// dynamic program uses.
double dtw_brute_force(const std::vector<std::vector<double>>& a,
                       const std::vector<std::vector<double>>& b,
                       const std::function<double(const std::vector<double>&,
                                                  const std::vector<double>&)>& dist);

// Central-difference check of d(loss)/d(param) for every coordinate of every
// listed parameter, against grads already populated by backward(). Returns the
// max relative error, denominator max(|a|,|b|,1e-8). Coordinates failing at
// `eps` are retried at `fallback_eps` (small steps lose tiny gradients to
// rounding; big steps can straddle a relu kink) and the better error counts.
double params_fd_max_rel_error(const std::function<double()>& loss_value,
                               const std::vector<Param>& params,
                               const std::vector<std::vector<double>>& autodiff_grads,
                               double eps, double fallback_eps = 1e-4);

// Uniformly random softmax-normalized rows, for CTC-style inputs.
std::vector<std::vector<double>> random_prob_rows(int t, int n_classes, std::uint64_t seed);

// Runs finite_difference_check over every differentiable op in the library
// (tensor primitives, attention, and the loss functions), each against random
// inputs drawn from `seed`. Returns the worst relative error seen.
double all_ops_fd_worst(std::uint64_t seed);

}  // namespace signgen::oracles
