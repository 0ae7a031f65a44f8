#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rooted/ball.hpp"
#include "rooted/graph.hpp"
#include "rooted/rng.hpp"

namespace rooted {

inline constexpr double kInfEps = std::numeric_limits<double>::infinity();

/// dampening of the radius term in the rooted-network distance
inline double zeta(weight_t r) { return 1.0 / (1.0 + static_cast<double>(r)); }

struct SearchLimits {
  std::uint64_t max_nodes = 0;  // 0 = unlimited; exceeded caps abort hard
};

/// A root-preserving bijection between two balls: edge weights are preserved
/// exactly in both directions and every per-coordinate covariate gap is at
/// most max_covariate_gap.
struct IsoWitness {
  std::vector<agent_t> mapping;  // index in first ball -> index in second
  double max_covariate_gap = 0.0;
};

namespace detail {

struct VertexSig {
  weight_t dist;
  std::uint32_t outdeg;
  std::uint32_t indeg;
  std::vector<weight_t> out_weights;
  std::vector<weight_t> in_weights;

  bool operator==(const VertexSig&) const = default;
  auto tie() const { return std::tie(dist, outdeg, indeg, out_weights, in_weights); }
  bool operator<(const VertexSig& o) const { return tie() < o.tie(); }
};

inline std::vector<VertexSig> vertex_signatures(const Ball& b) {
  const std::size_t n = b.size();
  std::vector<VertexSig> sigs(n);
  for (std::size_t u = 0; u < n; ++u) {
    sigs[u].dist = b.root_distance[u];
    sigs[u].outdeg = static_cast<std::uint32_t>(b.out[u].size());
    for (const auto& [v, w] : b.out[u]) {
      sigs[u].out_weights.push_back(w);
      sigs[v].in_weights.push_back(w);
      ++sigs[v].indeg;
    }
  }
  for (auto& s : sigs) {
    std::sort(s.out_weights.begin(), s.out_weights.end());
    std::sort(s.in_weights.begin(), s.in_weights.end());
  }
  return sigs;
}

inline double covariate_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double gap = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) gap = std::max(gap, std::fabs(a[p] - b[p]));
  return gap;
}

// Backtracking search for a root-preserving edge-exact bijection with all
// covariate gaps <= eps. Vertices of `a` are assigned in canonical order, so
// every vertex after the root has an already-assigned shortest-path
// predecessor constraining the match.
class BijectionSearch {
 public:
  BijectionSearch(const Ball& a, const Ball& b, double eps, const SearchLimits& limits)
      : a_(a), b_(b), eps_(eps), limits_(limits) {}

  std::optional<std::vector<agent_t>> run() {
    const std::size_t n = a_.size();
    if (b_.size() != n) return std::nullopt;
    if (n == 0) return std::vector<agent_t>{};
    sig_a_ = vertex_signatures(a_);
    sig_b_ = vertex_signatures(b_);
    {
      auto sa = sig_a_;
      auto sb = sig_b_;
      std::sort(sa.begin(), sa.end());
      std::sort(sb.begin(), sb.end());
      if (sa != sb) return std::nullopt;
    }
    mapping_.assign(n, 0);
    used_.assign(n, false);
    if (!assign(0)) return std::nullopt;
    return mapping_;
  }

 private:
  bool compatible(agent_t u, agent_t v) const {
    if (!(sig_a_[u] == sig_b_[v])) return false;
    if (eps_ != kInfEps && covariate_gap(a_.covariates[u], b_.covariates[v]) > eps_) {
      return false;
    }
    return true;
  }

  bool consistent(agent_t u, agent_t v) const {
    for (agent_t t = 0; t < u; ++t) {
      if (a_.edge_weight(u, t) != b_.edge_weight(v, mapping_[t])) return false;
      if (a_.edge_weight(t, u) != b_.edge_weight(mapping_[t], v)) return false;
    }
    return true;
  }

  bool assign(agent_t u) {
    if (u == a_.size()) return true;
    const bool is_root = (u == 0);
    for (agent_t v = 0; v < b_.size(); ++v) {
      if (is_root != (v == 0)) continue;
      if (used_[v]) continue;
      if (limits_.max_nodes != 0 && ++nodes_ > limits_.max_nodes) {
        throw budget_error("isomorphism search exceeded the node budget of " +
                           std::to_string(limits_.max_nodes));
      }
      if (!compatible(u, v)) continue;
      if (!consistent(u, v)) continue;
      mapping_[u] = v;
      used_[v] = true;
      if (assign(u + 1)) return true;
      used_[v] = false;
    }
    return false;
  }

  const Ball& a_;
  const Ball& b_;
  double eps_;
  SearchLimits limits_;
  std::vector<VertexSig> sig_a_;
  std::vector<VertexSig> sig_b_;
  std::vector<agent_t> mapping_;
  std::vector<bool> used_;
  std::uint64_t nodes_ = 0;
};

// multiset of root distances must agree before any bijection can exist
inline bool layer_counts_equal(const Ball& a, const Ball& b) {
  if (a.size() != b.size()) return false;
  // canonical order sorts by root distance, so compare positionally
  return a.root_distance == b.root_distance;
}

inline std::optional<std::vector<agent_t>> find_bijection(const Ball& a, const Ball& b,
                                                          double eps,
                                                          const SearchLimits& limits) {
  if (!layer_counts_equal(a, b)) return std::nullopt;
  if (a.stored_edge_count() != b.stored_edge_count()) return std::nullopt;
  return BijectionSearch(a, b, eps, limits).run();
}

// smallest feasible covariate tolerance; kInfEps when no edge-exact
// root-preserving bijection exists at any tolerance
inline double min_eps_unchecked(const Ball& a, const Ball& b, const SearchLimits& limits) {
  if (a.covariate_dim == 0) {
    return find_bijection(a, b, kInfEps, limits) ? 0.0 : kInfEps;
  }
  const auto unconstrained = find_bijection(a, b, kInfEps, limits);
  if (!unconstrained) return kInfEps;
  double upper = 0.0;
  for (std::size_t u = 0; u < a.size(); ++u) {
    upper = std::max(upper, covariate_gap(a.covariates[u], b.covariates[(*unconstrained)[u]]));
  }
  // the optimum is attained on the finite set of pairwise coordinate gaps
  std::vector<double> gaps{0.0};
  for (const auto& ca : a.covariates) {
    for (const auto& cb : b.covariates) {
      for (std::size_t p = 0; p < a.covariate_dim; ++p) {
        const double gap = std::fabs(ca[p] - cb[p]);
        if (gap < upper) gaps.push_back(gap);
      }
    }
  }
  std::sort(gaps.begin(), gaps.end());
  gaps.erase(std::unique(gaps.begin(), gaps.end()), gaps.end());
  // binary search the smallest feasible tolerance; feasibility is monotone
  std::size_t lo = 0;
  std::size_t hi = gaps.size();  // sentinel: `upper` is known feasible
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (find_bijection(a, b, gaps[mid], limits)) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo < gaps.size() ? gaps[lo] : upper;
}

inline void check_comparable(const Ball& a, const Ball& b) {
  if (a.radius != b.radius) {
    throw input_error("balls have different radii (" + std::to_string(a.radius) +
                      " vs " + std::to_string(b.radius) + ")");
  }
  if (a.covariate_dim != b.covariate_dim) {
    throw input_error("balls have different covariate dimensions");
  }
}

}  // namespace detail

/// Decides whether two equal-radius balls admit a root-preserving bijection
/// with exact edge weights (both directions) and covariate gaps <= eps.
/// One whole-ball bijection suffices: it preserves within-ball root
/// distances, so it restricts to a valid bijection at every smaller radius.
inline std::optional<IsoWitness> eps_isomorphic(const Ball& a, const Ball& b, double eps,
                                                const SearchLimits& limits = {}) {
  detail::check_comparable(a, b);
  if (eps < 0) throw input_error("tolerance must be nonnegative");
  auto mapping = detail::find_bijection(a, b, eps, limits);
  if (!mapping) return std::nullopt;
  IsoWitness w;
  w.mapping = std::move(*mapping);
  for (std::size_t u = 0; u < a.size(); ++u) {
    w.max_covariate_gap = std::max(
        w.max_covariate_gap, detail::covariate_gap(a.covariates[u], b.covariates[w.mapping[u]]));
  }
  return w;
}

/// The smallest tolerance at which the two balls are isomorphic; infinity
/// when no edge-exact root-preserving bijection exists at all. The minimum
/// is attained on the finite set of pairwise covariate gaps.
inline double min_eps(const Ball& a, const Ball& b, const SearchLimits& limits = {}) {
  detail::check_comparable(a, b);
  return detail::min_eps_unchecked(a, b, limits);
}

/// The rooted-network distance together with its witnesses.
///
/// value = min(2, min_r (zeta(r) + eps*(r)), eps*(R)) where R is the largest
/// stabilization radius of the two networks and eps*(r) the per-radius
/// minimum tolerance. witness_radius is empty when the infimum is realized
/// in the large-radius limit (both networks compared whole).
struct DistanceResult {
  double value = 0.0;
  std::optional<weight_t> witness_radius;  // nullopt = limit
  double witness_eps = 0.0;
  std::optional<IsoWitness> witness_map;
  std::vector<double> eps_profile;  // index r = 0..R; kInfEps once infeasible
};

/// Per-run memo of distance results keyed by the canonical serializations of
/// the two rooted networks. Striped for concurrent readers and writers;
/// inserts stop once max_entries is reached.
class DistanceCache {
 public:
  explicit DistanceCache(std::size_t max_entries = 1u << 20) : cap_(max_entries) {}

  std::optional<DistanceResult> lookup(const std::string& key) const {
    const Shard& s = shard(key);
    std::lock_guard<std::mutex> lock(s.mu);
    auto it = s.map.find(key);
    if (it == s.map.end()) return std::nullopt;
    return it->second;
  }

  void store(const std::string& key, const DistanceResult& value) {
    Shard& s = shard(key);
    std::lock_guard<std::mutex> lock(s.mu);
    if (s.map.size() >= cap_ / kShards + 1) return;
    s.map.emplace(key, value);
  }

  std::size_t size() const {
    std::size_t total = 0;
    for (const auto& s : shards_) {
      std::lock_guard<std::mutex> lock(s.mu);
      total += s.map.size();
    }
    return total;
  }

 private:
  static constexpr std::size_t kShards = 16;
  struct Shard {
    mutable std::mutex mu;
    std::unordered_map<std::string, DistanceResult> map;
  };
  const Shard& shard(const std::string& key) const {
    return shards_[fnv1a64(key) % kShards];
  }
  Shard& shard(const std::string& key) { return shards_[fnv1a64(key) % kShards]; }

  std::array<Shard, kShards> shards_;
  std::size_t cap_;
};

struct DistanceOptions {
  SearchLimits limits{};
  DistanceCache* cache = nullptr;
  bool want_witness = false;
  std::optional<weight_t> radius_cap;  // evaluate the profile only up to this radius
};

namespace detail {

inline DistanceResult distance_impl(const RootedView& a, const RootedView& b,
                                    const DistanceOptions& opts) {
  weight_t r_max = std::max(a.stabilization(), b.stabilization());
  bool capped = false;
  if (opts.radius_cap && *opts.radius_cap < r_max) {
    r_max = *opts.radius_cap;
    capped = true;
  }

  DistanceResult res;
  res.eps_profile.reserve(static_cast<std::size_t>(r_max) + 1);
  double best = std::numeric_limits<double>::infinity();
  bool infeasible = false;
  for (weight_t r = 0; r <= r_max; ++r) {
    double eps_r = kInfEps;
    if (!infeasible) {
      if (a.count_at(r) != b.count_at(r)) {
        infeasible = true;
      } else {
        eps_r = min_eps_unchecked(a.ball_at(r), b.ball_at(r), opts.limits);
        if (eps_r == kInfEps) infeasible = true;
      }
    }
    res.eps_profile.push_back(eps_r);
    if (eps_r != kInfEps) {
      const double cand = zeta(r) + eps_r;
      if (cand < best) {
        best = cand;
        res.witness_radius = r;
        res.witness_eps = eps_r;
      }
    }
  }
  // the r -> infinity infimum: both networks are constant beyond r_max
  if (!infeasible && !capped) {
    const double tail = res.eps_profile.back();
    if (tail < best) {
      best = tail;
      res.witness_radius = std::nullopt;
      res.witness_eps = tail;
    }
  }
  res.value = std::min(best, 2.0);
  if (opts.want_witness) {
    const weight_t r = res.witness_radius ? *res.witness_radius : r_max;
    auto mapping = detail::find_bijection(a.ball_at(r), b.ball_at(r), res.witness_eps,
                                          opts.limits);
    if (mapping) {
      IsoWitness w;
      w.mapping = std::move(*mapping);
      w.max_covariate_gap = res.witness_eps;
      res.witness_map = std::move(w);
    }
  }
  return res;
}

}  // namespace detail

/// Computes the rooted-network distance between two community agents.
/// Symmetric in its arguments; the value always lies in [0, 2].
inline DistanceResult distance(const RootedView& a, const RootedView& b,
                               const DistanceOptions& opts = {}) {
  if (a.community().covariate_dim != b.community().covariate_dim) {
    throw input_error("communities have different covariate dimensions");
  }
  if (opts.cache) {
    std::string key = a.canonical_key();
    key.push_back('\x1f');
    key += b.canonical_key();
    if (auto hit = opts.cache->lookup(key)) return *hit;
    DistanceResult res = detail::distance_impl(a, b, opts);
    opts.cache->store(key, res);
    return res;
  }
  return detail::distance_impl(a, b, opts);
}

inline DistanceResult distance(const CommunityGraph& ga, agent_t i,
                               const CommunityGraph& gb, agent_t j,
                               const DistanceOptions& opts = {}) {
  return distance(RootedView(ga, i), RootedView(gb, j), opts);
}

/// Distance between two balls treated as whole rooted networks.
inline DistanceResult distance(const Ball& a, const Ball& b,
                               const DistanceOptions& opts = {}) {
  const CommunityGraph ga = a.to_community();
  const CommunityGraph gb = b.to_community();
  return distance(RootedView(ga, 0), RootedView(gb, 0), opts);
}

struct NearestResult {
  agent_t agent = 0;
  double value = 0.0;
  DistanceResult detail;
};

/// The agent whose rooted network is closest to the query, ties broken
/// uniformly at random from the provided stream.
inline NearestResult nearest_among(const std::vector<RootedView>& agents,
                                   const RootedView& query, RngStream& ties,
                                   const DistanceOptions& opts = {}) {
  if (agents.empty()) throw input_error("community has no agents");
  std::vector<DistanceResult> results(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    results[i] = distance(agents[i], query, opts);
  }
  double best = results[0].value;
  for (const auto& r : results) best = std::min(best, r.value);
  std::vector<agent_t> tied;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (results[i].value == best) tied.push_back(static_cast<agent_t>(i));
  }
  const agent_t pick =
      tied.size() == 1 ? tied[0] : tied[ties.below(tied.size())];
  return NearestResult{pick, best, std::move(results[pick])};
}

inline NearestResult nearest_in_community(const CommunityGraph& g, const RootedView& query,
                                          RngStream& ties, const DistanceOptions& opts = {}) {
  std::vector<RootedView> agents;
  agents.reserve(g.size());
  for (agent_t i = 0; i < g.size(); ++i) agents.emplace_back(g, i);
  return nearest_among(agents, query, ties, opts);
}

}  // namespace rooted
