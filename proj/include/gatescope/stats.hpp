#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gatescope/types.hpp"

namespace gatescope {

// Judges answering uniformly at random among `options`; a cell passes when
// at least `threshold` of `panel` judges pick the target.
struct NullModel {
  int options = 15;
  int panel = 5;
  int threshold = 3;

  void validate() const;
};

// Exact binomial tail, computed in rational arithmetic.
double cell_pass_prob(const NullModel& nm);
// The same value as an exact fraction "num/den".
std::string cell_pass_prob_fraction(const NullModel& nm);

// n_cells * cell_pass_prob^seeds_required.
double expected_false_cells(const NullModel& nm, int seeds_required, int n_cells);

// P(X >= k) for X ~ Binomial(n, num/den), exact.
double binomial_upper_tail(int n, int k, std::int64_t num, std::int64_t den);

// Fleiss kappa over a subjects x categories table of rater counts.
double fleiss_kappa(const std::vector<std::vector<int>>& counts);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap of the mean of 0/1 outcomes. Resample r draws with
// counter keys (seed, r, i), so the interval does not depend on `threads`.
Interval bootstrap_ci(std::span<const int> hits, int n_resamples = 1000, double level = 0.95,
                      std::uint64_t seed = 0, std::size_t threads = 1);

// Benjamini-Hochberg step-up rejections at FDR level q.
std::vector<bool> bh_fdr(std::span<const double> pvals, double q = 0.05);

}  // namespace gatescope
