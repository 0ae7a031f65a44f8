#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rooted/inference.hpp"

namespace rooted {

struct PermutationMode {
  bool full = false;
  std::int64_t draws = 1000;  // sampled mode: total count including the identity

  static PermutationMode full_mode() { return {true, 0}; }
  static PermutationMode sampled(std::int64_t total_draws) { return {false, total_draws}; }
};

struct SelectedMatch {
  std::size_t community = 0;
  agent_t agent = 0;
  double distance = 0.0;
  double outcome = 0.0;
};

/// Result of the policy-irrelevance test.
struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool reject = false;
  std::int64_t q = 0;
  double alpha = 0.0;
  std::vector<SelectedMatch> matches_first;   // block matched to g, by distance
  std::vector<SelectedMatch> matches_second;  // block matched to g_prime
  PermutationMode mode;
  std::vector<std::size_t> half_first;
  std::vector<std::size_t> half_second;
};

namespace detail {

// Greedy alternating split: repeatedly hand the remaining community with the
// closest observation to g to the first half, then the closest to g_prime to
// the second, until fewer than two communities remain. Odd leftovers drop.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> partition_from_matches(
    std::span<const MatchRecord> to_g, std::span<const MatchRecord> to_gp, RngStream& rng) {
  const std::size_t c_total = to_g.size();
  if (c_total < 2) throw input_error("partition needs at least two communities");
  std::vector<bool> taken(c_total, false);
  std::vector<std::size_t> first, second;
  std::size_t remaining = c_total;
  auto take_closest = [&](std::span<const MatchRecord> dists) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < c_total; ++c) {
      if (!taken[c]) best = std::min(best, dists[c].dist);
    }
    std::vector<std::size_t> tied;
    for (std::size_t c = 0; c < c_total; ++c) {
      if (!taken[c] && dists[c].dist == best) tied.push_back(c);
    }
    const std::size_t pick = tied.size() == 1 ? tied[0] : tied[rng.below(tied.size())];
    taken[pick] = true;
    --remaining;
    return pick;
  };
  while (remaining >= 2) {
    first.push_back(take_closest(to_g));
    second.push_back(take_closest(to_gp));
  }
  return {std::move(first), std::move(second)};
}

inline std::vector<SelectedMatch> ordered_block(const Dataset& ds,
                                                std::span<const MatchRecord> matches,
                                                std::span<const std::size_t> half,
                                                RngStream& order_rng) {
  const auto ordered = order_by_distance(matches, half, order_rng);
  std::vector<SelectedMatch> block;
  block.reserve(ordered.size());
  for (std::size_t c : ordered) {
    const MatchRecord& m = matches[c];
    block.push_back({c, m.agent, m.dist, require_outcome(ds.communities[c], m.agent, c)});
  }
  return block;
}

}  // namespace detail

/// Splits the dataset into the two matched halves of the test.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> partition_communities(
    const Dataset& ds, const Ball& g, const Ball& g_prime, const Seeder& seeder,
    const EstimateOptions& opts = {}) {
  if (ds.size() < 2) throw input_error("partition needs at least two communities");
  const auto views = build_views(ds, opts.threads);
  const QueryView qg(g);
  const QueryView qgp(g_prime);
  RngStream ties = seeder.stream("ties");
  auto [to_g, to_gp] = detail::match_communities(views, *qg, &*qgp, ties, opts);
  RngStream part = seeder.stream("partition");
  return detail::partition_from_matches(to_g, to_gp, part);
}

/// The 2q outcomes entering the test statistic: per half the nearest agents
/// per community, reordered by distance, first q from each, with the block
/// matched to g first.
inline std::vector<double> collect_matched_outcomes(const Dataset& ds, const Ball& g,
                                                    const Ball& g_prime,
                                                    std::span<const std::size_t> half_first,
                                                    std::span<const std::size_t> half_second,
                                                    std::int64_t q, const Seeder& seeder,
                                                    const EstimateOptions& opts = {}) {
  if (q < 1) throw input_error("q must be positive");
  if (static_cast<std::size_t>(q) > half_first.size() ||
      static_cast<std::size_t>(q) > half_second.size()) {
    throw input_error("q = " + std::to_string(q) + " exceeds a half size");
  }
  const auto views = build_views(ds, opts.threads);
  const QueryView qg(g);
  const QueryView qgp(g_prime);
  RngStream ties = seeder.stream("ties");
  auto [to_g, to_gp] = detail::match_communities(views, *qg, &*qgp, ties, opts);
  RngStream order_rng = seeder.stream("order");
  const auto block_g = detail::ordered_block(ds, to_g, half_first, order_rng);
  const auto block_gp = detail::ordered_block(ds, to_gp, half_second, order_rng);
  std::vector<double> s;
  s.reserve(static_cast<std::size_t>(2 * q));
  for (std::int64_t j = 0; j < q; ++j) s.push_back(block_g[static_cast<std::size_t>(j)].outcome);
  for (std::int64_t j = 0; j < q; ++j) s.push_back(block_gp[static_cast<std::size_t>(j)].outcome);
  return s;
}

namespace detail {

// Integer-exact Cramer-von-Mises numerator: with counts over the two halves,
//   sum_j (#{first half <= s_j} - #{second half <= s_j})^2.
// Keeping this integral makes permutation comparisons exact, with no
// floating-point ties lost.
inline std::uint64_t cvm_numerator(std::span<const double> s) {
  const std::size_t n = s.size();
  const std::size_t q = n / 2;
  std::uint64_t total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    std::int64_t c1 = 0, c2 = 0;
    for (std::size_t i = 0; i < q; ++i) c1 += (s[i] <= s[j]) ? 1 : 0;
    for (std::size_t i = q; i < n; ++i) c2 += (s[i] <= s[j]) ? 1 : 0;
    const std::int64_t d = c1 - c2;
    total += static_cast<std::uint64_t>(d * d);
  }
  return total;
}

inline void check_even(std::span<const double> s) {
  if (s.size() < 2 || s.size() % 2 != 0) {
    throw input_error("statistic needs an even-length vector of at least 2 outcomes");
  }
}

}  // namespace detail

/// Two-sample Cramer-von-Mises statistic between the first and second half
/// of s, evaluated at every entry of s.
inline double cvm_statistic(std::span<const double> s) {
  detail::check_even(s);
  const auto q = static_cast<double>(s.size() / 2);
  return static_cast<double>(detail::cvm_numerator(s)) /
         (static_cast<double>(s.size()) * q * q);
}

/// Fraction of permuted statistics at least as large as the observed one.
/// Full enumeration is limited to vectors of length 8; longer vectors use
/// sampled mode, where the identity permutation is always counted.
inline double permutation_pvalue(std::span<const double> s, const PermutationMode& mode,
                                 RngStream& rng) {
  detail::check_even(s);
  const std::size_t n = s.size();
  const std::uint64_t observed = detail::cvm_numerator(s);
  std::vector<double> permuted(n);
  if (mode.full) {
    if (n > 8) {
      throw input_error("full enumeration supports at most 8 outcomes; use sampled mode");
    }
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::uint64_t count = 0, total = 0;
    do {
      for (std::size_t i = 0; i < n; ++i) permuted[i] = s[idx[i]];
      count += (detail::cvm_numerator(permuted) >= observed) ? 1 : 0;
      ++total;
    } while (std::next_permutation(idx.begin(), idx.end()));
    return static_cast<double>(count) / static_cast<double>(total);
  }
  if (mode.draws < 2) throw input_error("sampled mode needs at least 2 permutations");
  std::uint64_t count = 1;  // identity
  for (std::int64_t b = 1; b < mode.draws; ++b) {
    const auto perm = rng.permutation(static_cast<std::uint32_t>(n));
    for (std::size_t i = 0; i < n; ++i) permuted[i] = s[perm[i]];
    count += (detail::cvm_numerator(permuted) >= observed) ? 1 : 0;
  }
  return static_cast<double>(count) / static_cast<double>(mode.draws);
}

/// The approximate permutation test of policy irrelevance, end to end:
/// partition, per-community matching, the Cramer-von-Mises statistic over
/// the 2q best-matched outcomes, and the permutation p-value. Deterministic
/// given (data, parameters, seed); the named streams are consumed in the
/// order ties, partition, order, perm.
inline TestResult test_policy_irrelevance(const Dataset& ds, const Ball& g,
                                          const Ball& g_prime, std::int64_t q, double alpha,
                                          const PermutationMode& mode, const Seeder& seeder,
                                          const EstimateOptions& opts = {}) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw input_error("alpha must lie in [0, 1]");
  if (q < 1) throw input_error("q must be positive");
  if (ds.size() < 2) throw input_error("the test needs at least two communities");
  if (g.covariate_dim != ds.covariate_dim || g_prime.covariate_dim != ds.covariate_dim) {
    throw input_error("query covariate dimension does not match the dataset");
  }
  const auto views = build_views(ds, opts.threads);
  const QueryView qg(g);
  const QueryView qgp(g_prime);

  RngStream ties = seeder.stream("ties");
  auto [to_g, to_gp] = detail::match_communities(views, *qg, &*qgp, ties, opts);

  RngStream part = seeder.stream("partition");
  auto halves = detail::partition_from_matches(to_g, to_gp, part);
  if (static_cast<std::size_t>(q) > halves.first.size()) {
    throw input_error("q = " + std::to_string(q) + " exceeds the half size " +
                      std::to_string(halves.first.size()));
  }

  RngStream order_rng = seeder.stream("order");
  const auto block_g = detail::ordered_block(ds, to_g, halves.first, order_rng);
  const auto block_gp = detail::ordered_block(ds, to_gp, halves.second, order_rng);

  TestResult res;
  res.q = q;
  res.alpha = alpha;
  res.mode = mode;
  res.half_first = std::move(halves.first);
  res.half_second = std::move(halves.second);
  res.matches_first.assign(block_g.begin(), block_g.begin() + q);
  res.matches_second.assign(block_gp.begin(), block_gp.begin() + q);

  std::vector<double> s;
  s.reserve(static_cast<std::size_t>(2 * q));
  for (std::int64_t j = 0; j < q; ++j) s.push_back(res.matches_first[static_cast<std::size_t>(j)].outcome);
  for (std::int64_t j = 0; j < q; ++j) s.push_back(res.matches_second[static_cast<std::size_t>(j)].outcome);

  res.statistic = cvm_statistic(s);
  RngStream perm = seeder.stream("perm");
  res.p_value = permutation_pvalue(s, mode, perm);
  res.reject = res.p_value <= alpha;
  return res;
}

}  // namespace rooted
