#include <doctest.h>

#include <chrono>
#include <random>

#include "gatescope/error.hpp"
#include "gatescope/stats.hpp"
#include "oracles.hpp"

using namespace gatescope;

namespace {

// Ten subjects rated by 14 raters into 5 categories; kappa 0.210.
const std::vector<std::vector<int>> kFleissTable{
    {0, 0, 0, 0, 14}, {0, 2, 6, 4, 2}, {0, 0, 3, 5, 6}, {0, 3, 9, 2, 0}, {2, 2, 8, 1, 1},
    {7, 7, 0, 0, 0},  {3, 2, 6, 3, 0}, {2, 5, 3, 2, 2}, {6, 5, 2, 1, 0}, {0, 2, 2, 3, 7}};

std::string fraction(int options, int panel, int threshold) {
  const auto [n, d] = oracle::null_fraction(options, panel, threshold);
  return std::to_string(n) + "/" + std::to_string(d);
}

}  // namespace

TEST_CASE("null model: forced-choice 1-of-15 values") {
  const auto start = std::chrono::steady_clock::now();
  const NullModel nm{15, 5, 3};
  CHECK(cell_pass_prob_fraction(nm) == "677/253125");
  CHECK(cell_pass_prob_fraction(nm) == fraction(15, 5, 3));
  const double p = cell_pass_prob(nm);
  CHECK(std::abs(p - 0.0027) <= 5e-5);
  CHECK(p == doctest::Approx(677.0 / 253125.0).epsilon(1e-15));
  CHECK(std::abs(p * p - 7e-6) <= 5e-7);
  CHECK(std::abs(expected_false_cells(nm, 2, 15) - 1e-4) <= 1e-5);
  CHECK(expected_false_cells(nm, 2, 15) == doctest::Approx(15 * p * p).epsilon(1e-15));
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(1));

  CHECK(cell_pass_prob_fraction({12, 5, 3}) == "211/41472");
}

TEST_CASE("null model matches integer enumeration and is monotone") {
  for (int options = 2; options <= 20; ++options) {
    for (int panel = 1; panel <= 9; ++panel) {
      for (int threshold = 1; threshold <= panel; ++threshold) {
        const NullModel nm{options, panel, threshold};
        CHECK(cell_pass_prob_fraction(nm) == fraction(options, panel, threshold));
        const auto [n, d] = oracle::null_fraction(options, panel, threshold);
        CHECK(cell_pass_prob(nm) == doctest::Approx(static_cast<double>(n) / static_cast<double>(d)).epsilon(1e-14));
        if (threshold > 1) CHECK(cell_pass_prob(nm) < cell_pass_prob({options, panel, threshold - 1}));
        if (options > 2) CHECK(cell_pass_prob(nm) < cell_pass_prob({options - 1, panel, threshold}));
        CHECK(cell_pass_prob(nm) <= cell_pass_prob({options, panel + 1, threshold}));
      }
    }
  }
  CHECK_THROWS_AS(cell_pass_prob({1, 5, 3}), Error);
  CHECK_THROWS_AS(cell_pass_prob({12, 5, 6}), Error);
  CHECK_THROWS_AS(cell_pass_prob({12, 5, 0}), Error);
  CHECK_THROWS_AS(expected_false_cells({}, 0, 15), Error);
  CHECK(binomial_upper_tail(5, 3, 1, 15) == cell_pass_prob({15, 5, 3}));
  CHECK(binomial_upper_tail(4, 0, 1, 3) == 1.0);
  CHECK(binomial_upper_tail(4, 5, 1, 3) == 0.0);
  CHECK(binomial_upper_tail(10, 4, 1, 2) == doctest::Approx(848.0 / 1024.0).epsilon(1e-15));
}

TEST_CASE("Fleiss kappa: textbook table, perfect agreement, oracle") {
  const double k = fleiss_kappa(kFleissTable);
  CHECK(std::abs(k - oracle::fleiss(kFleissTable)) <= 1e-6);
  CHECK(std::abs(k - 0.20993) <= 1e-5);

  CHECK(fleiss_kappa({{5, 0, 0}, {0, 5, 0}, {0, 0, 5}}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(fleiss_kappa({{5, 0}, {5, 0}}) == 1.0);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t subjects = 2 + rng() % 20, cats = 2 + rng() % 6;
    const int raters = 2 + static_cast<int>(rng() % 7);
    std::vector<std::vector<int>> t(subjects, std::vector<int>(cats, 0));
    for (auto& row : t)
      for (int r = 0; r < raters; ++r) ++row[rng() % (rng() % 2 ? 1 : cats)];
    bool single_category = true;
    for (const auto& row : t)
      for (std::size_t c = 1; c < cats; ++c) single_category = single_category && row[c] == 0;
    if (single_category) continue;
    CHECK(fleiss_kappa(t) == doctest::Approx(oracle::fleiss(t)).epsilon(1e-9));
  }

  CHECK_THROWS_AS(fleiss_kappa({}), Error);
  CHECK_THROWS_AS(fleiss_kappa({{3, 2}, {4, 2}}), Error);
  CHECK_THROWS_AS(fleiss_kappa({{1, 0}, {0, 1}}), Error);
}

TEST_CASE("bootstrap CI: seed-deterministic and thread-invariant") {
  const std::vector<int> hits{1, 0, 1, 1, 0, 1, 1, 1, 0, 0, 1, 1, 0, 1, 1};
  const auto a = bootstrap_ci(hits, 2000, 0.95, 7);
  const auto b = bootstrap_ci(hits, 2000, 0.95, 7);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.lo == 0.4);
  CHECK(a.hi == doctest::Approx(13.0 / 15.0).epsilon(1e-15));
  for (std::size_t threads : {2, 3, 8}) {
    const auto t = bootstrap_ci(hits, 2000, 0.95, 7, threads);
    CHECK(t.lo == a.lo);
    CHECK(t.hi == a.hi);
  }
  const double mean = 10.0 / 15.0;
  CHECK(a.lo <= mean);
  CHECK(a.hi >= mean);
  const auto narrow = bootstrap_ci(hits, 2000, 0.5, 7);
  CHECK(narrow.lo >= a.lo);
  CHECK(narrow.hi <= a.hi);

  const std::vector<int> all{1, 1, 1};
  CHECK(bootstrap_ci(all, 100).lo == 1.0);
  const std::vector<int> bad{1, 2};
  CHECK_THROWS_AS(bootstrap_ci(bad), Error);
  CHECK_THROWS_AS(bootstrap_ci(hits, 100, 1.0), Error);
  CHECK_THROWS_AS(bootstrap_ci(std::vector<int>{}), Error);
}

TEST_CASE("Benjamini-Hochberg matches the threshold-enumeration oracle") {
  const std::vector<double> p{0.01, 0.04, 0.03, 0.005, 0.2};
  CHECK(bh_fdr(p, 0.05) == std::vector<bool>{true, true, true, true, false});
  CHECK(bh_fdr(std::vector<double>{0.5, 0.6}, 0.05) == std::vector<bool>{false, false});

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t m = 1 + rng() % 30;
    std::vector<double> ps(m);
    for (auto& x : ps) x = rng() % 3 == 0 ? u(rng) * 0.01 : u(rng);
    if (rng() % 5 == 0) ps[rng() % m] = ps[0];  // ties
    const double q = 0.01 + 0.2 * u(rng);
    const auto got = bh_fdr(ps, q);
    CHECK(got == oracle::bh(ps, q));
    // Raising q never withdraws a rejection.
    const auto looser = bh_fdr(ps, std::min(1.0, q * 1.5));
    for (std::size_t i = 0; i < m; ++i)
      if (got[i]) CHECK(looser[i]);
  }
  CHECK(bh_fdr(std::vector<double>{}, 0.05).empty());
  CHECK_THROWS_AS(bh_fdr(std::vector<double>{1.5}, 0.05), Error);
  CHECK_THROWS_AS(bh_fdr(std::vector<double>{0.5}, 0.0), Error);
}
