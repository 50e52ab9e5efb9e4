#include "gatescope/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/multiprecision/cpp_int.hpp>

#include "gatescope/error.hpp"
#include "gatescope/parallel.hpp"
#include "gatescope/rng.hpp"

namespace gatescope {
namespace {

using boost::multiprecision::cpp_int;
using boost::multiprecision::cpp_rational;

cpp_int choose(int n, int k) {
  cpp_int r = 1;
  for (int i = 1; i <= k; ++i) {
    r *= n - k + i;
    r /= i;
  }
  return r;
}

cpp_rational upper_tail(int n, int k, const cpp_rational& p) {
  const cpp_rational q = 1 - p;
  cpp_rational sum = 0;
  for (int i = std::max(k, 0); i <= n; ++i) {
    cpp_rational term = cpp_rational(choose(n, i));
    for (int a = 0; a < i; ++a) term *= p;
    for (int b = 0; b < n - i; ++b) term *= q;
    sum += term;
  }
  return sum;
}

cpp_rational pass_prob(const NullModel& nm) {
  nm.validate();
  return upper_tail(nm.panel, nm.threshold, cpp_rational(1, nm.options));
}

}  // namespace

void NullModel::validate() const {
  if (options < 2) throw Error("null model: options must be >= 2");
  if (panel < 1) throw Error("null model: panel must be >= 1");
  if (threshold < 1 || threshold > panel) throw Error("null model: threshold must be in [1, panel]");
}

double cell_pass_prob(const NullModel& nm) { return static_cast<double>(pass_prob(nm)); }

std::string cell_pass_prob_fraction(const NullModel& nm) {
  const auto p = pass_prob(nm);
  return numerator(p).str() + "/" + denominator(p).str();
}

double expected_false_cells(const NullModel& nm, int seeds_required, int n_cells) {
  if (seeds_required < 1) throw Error("expected_false_cells: seeds_required must be >= 1");
  if (n_cells < 0) throw Error("expected_false_cells: n_cells must be >= 0");
  const auto p = pass_prob(nm);
  cpp_rational v = n_cells;
  for (int i = 0; i < seeds_required; ++i) v *= p;
  return static_cast<double>(v);
}

double binomial_upper_tail(int n, int k, std::int64_t num, std::int64_t den) {
  if (n < 0 || den <= 0 || num < 0 || num > den) throw Error("binomial_upper_tail: invalid arguments");
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  return static_cast<double>(upper_tail(n, k, cpp_rational(num, den)));
}

double fleiss_kappa(const std::vector<std::vector<int>>& counts) {
  if (counts.empty()) throw Error("fleiss_kappa: no subjects");
  const std::size_t k = counts.front().size();
  if (k == 0) throw Error("fleiss_kappa: no categories");
  long long raters = -1;
  for (const auto& row : counts) {
    if (row.size() != k) throw Error("fleiss_kappa: rows have different category counts");
    long long sum = 0;
    for (int c : row) {
      if (c < 0) throw Error("fleiss_kappa: negative count");
      sum += c;
    }
    if (raters < 0) raters = sum;
    if (sum != raters) throw Error("fleiss_kappa: subjects have unequal rater counts");
  }
  if (raters < 2) throw Error("fleiss_kappa: need at least 2 raters per subject");

  const auto n = static_cast<double>(raters);
  const auto subjects = static_cast<double>(counts.size());
  std::vector<double> p_j(k, 0.0);
  double p_bar = 0.0;
  for (const auto& row : counts) {
    double agree = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p_j[j] += row[j];
      agree += static_cast<double>(row[j]) * (row[j] - 1);
    }
    p_bar += agree / (n * (n - 1));
  }
  p_bar /= subjects;
  double p_e = 0.0;
  for (double& p : p_j) {
    p /= subjects * n;
    p_e += p * p;
  }
  // Every rating in one category: agreement is perfect by definition.
  if (p_e >= 1.0) return 1.0;
  return (p_bar - p_e) / (1.0 - p_e);
}

Interval bootstrap_ci(std::span<const int> hits, int n_resamples, double level, std::uint64_t seed,
                      std::size_t threads) {
  if (hits.empty()) throw Error("bootstrap_ci: no observations");
  if (n_resamples < 1) throw Error("bootstrap_ci: n_resamples must be >= 1");
  if (!(level > 0.0 && level < 1.0)) throw Error("bootstrap_ci: level must be in (0, 1)");
  for (int h : hits)
    if (h != 0 && h != 1) throw Error("bootstrap_ci: observations must be 0 or 1");

  const std::size_t n = hits.size();
  std::vector<double> means(static_cast<std::size_t>(n_resamples));
  parallel_for(means.size(), threads, [&](std::size_t r) {
    const CounterRng rng(seed, r);
    long long sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += hits[rng.below(i, n)];
    means[r] = static_cast<double>(sum) / static_cast<double>(n);
  });
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  const auto b = static_cast<double>(means.size());
  auto lo_idx = static_cast<std::size_t>(std::floor(tail * b + 1e-9));
  auto hi_idx = static_cast<std::size_t>(std::ceil((1.0 - tail) * b - 1e-9));
  hi_idx = hi_idx == 0 ? 0 : hi_idx - 1;
  lo_idx = std::min(lo_idx, means.size() - 1);
  hi_idx = std::min(hi_idx, means.size() - 1);
  return {means[lo_idx], means[hi_idx]};
}

std::vector<bool> bh_fdr(std::span<const double> pvals, double q) {
  if (!(q > 0.0 && q <= 1.0)) throw Error("bh_fdr: q must be in (0, 1]");
  for (double p : pvals)
    if (!(p >= 0.0 && p <= 1.0)) throw Error("bh_fdr: p-value outside [0, 1]");
  const std::size_t m = pvals.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
  std::size_t cutoff = 0;  // number of rejections
  for (std::size_t rank = 1; rank <= m; ++rank) {
    if (pvals[order[rank - 1]] * static_cast<double>(m) <= static_cast<double>(rank) * q) cutoff = rank;
  }
  std::vector<bool> rejected(m, false);
  for (std::size_t i = 0; i < cutoff; ++i) rejected[order[i]] = true;
  return rejected;
}

}  // namespace gatescope
