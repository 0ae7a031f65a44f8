#pragma once

#include <algorithm>
#include <cstring>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rooted/graph.hpp"

namespace rooted {

/// A rooted network truncated at some radius, in canonical form: vertex 0 is
/// the root and the remaining vertices are sorted by (distance from root,
/// degree signature, covariates, source id). The edge set is induced: it
/// contains every community edge between ball vertices.
struct Ball {
  weight_t radius = 0;
  std::size_t covariate_dim = 0;
  bool directed = false;
  std::vector<weight_t> root_distance;          // per vertex; [0] == 0
  std::vector<std::vector<double>> covariates;  // per vertex
  std::vector<std::string> source_ids;          // original agent ids
  std::vector<std::vector<std::pair<agent_t, weight_t>>> out;  // sorted by target

  bool operator==(const Ball&) const = default;

  std::size_t size() const { return root_distance.size(); }

  weight_t edge_weight(agent_t u, agent_t v) const {
    const auto& row = out[u];
    auto it = std::lower_bound(row.begin(), row.end(), v,
                               [](const auto& e, agent_t t) { return e.first < t; });
    return (it != row.end() && it->first == v) ? it->second : 0;
  }

  std::size_t stored_edge_count() const {
    std::size_t n = 0;
    for (const auto& row : out) n += row.size();
    return n;
  }

  CommunityGraph to_community() const {
    CommunityBuilder b(true, covariate_dim);
    for (std::size_t i = 0; i < size(); ++i) {
      b.add_agent(source_ids[i], covariates[i]);
    }
    for (agent_t u = 0; u < size(); ++u) {
      for (const auto& [v, w] : out[u]) b.add_edge(u, v, w);
    }
    CommunityGraph g = b.build();
    g.directed = directed;
    return g;
  }

  // Structural serialization, stable under agent renaming only insofar as the
  // canonical order is; source ids are excluded so the key describes the
  // labeled structure exactly. Equal keys imply identical canonical balls.
  std::string canonical_key() const {
    std::string key;
    key.reserve(32 + size() * (16 + covariate_dim * 8) + stored_edge_count() * 20);
    auto put_u64 = [&key](std::uint64_t v) {
      char buf[8];
      std::memcpy(buf, &v, 8);
      key.append(buf, 8);
    };
    auto put_f64 = [&put_u64](double v) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_u64(bits);
    };
    put_u64(static_cast<std::uint64_t>(radius));
    put_u64(size());
    put_u64(covariate_dim);
    put_u64(directed ? 1 : 0);
    for (std::size_t i = 0; i < size(); ++i) {
      put_u64(static_cast<std::uint64_t>(root_distance[i]));
      for (double c : covariates[i]) put_f64(c);
    }
    for (agent_t u = 0; u < size(); ++u) {
      for (const auto& [v, w] : out[u]) {
        put_u64(u);
        put_u64(v);
        put_u64(static_cast<std::uint64_t>(w));
      }
    }
    return key;
  }
};

namespace detail {

struct CanonicalKey {
  weight_t dist;
  std::uint32_t outdeg;
  std::uint32_t indeg;
  std::vector<weight_t> out_weights;  // sorted
  std::vector<weight_t> in_weights;   // sorted
  const std::vector<double>* covs;
  const std::string* id;

  bool operator<(const CanonicalKey& o) const {
    if (dist != o.dist) return dist < o.dist;
    if (outdeg != o.outdeg) return outdeg < o.outdeg;
    if (indeg != o.indeg) return indeg < o.indeg;
    if (out_weights != o.out_weights) return out_weights < o.out_weights;
    if (in_weights != o.in_weights) return in_weights < o.in_weights;
    if (*covs != *o.covs) return *covs < *o.covs;
    return *id < *o.id;
  }
};

// Assembles a canonical Ball from a member list given in any order.
// members[k] are community indices, dists their root distances.
inline Ball assemble_ball(const CommunityGraph& g, const std::vector<agent_t>& members,
                          const std::vector<weight_t>& dists, weight_t radius) {
  const std::size_t n = members.size();
  std::vector<std::uint32_t> local(g.size(), static_cast<std::uint32_t>(-1));
  for (std::size_t k = 0; k < n; ++k) local[members[k]] = static_cast<std::uint32_t>(k);

  // induced edges, in member-local indices
  std::vector<std::vector<std::pair<agent_t, weight_t>>> adj(n);
  std::vector<std::uint32_t> indeg(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    for (const auto& [v, w] : g.out[members[k]]) {
      const std::uint32_t lv = local[v];
      if (lv == static_cast<std::uint32_t>(-1)) continue;
      adj[k].emplace_back(lv, w);
      ++indeg[lv];
    }
  }

  std::vector<CanonicalKey> keys(n);
  for (std::size_t k = 0; k < n; ++k) {
    CanonicalKey& key = keys[k];
    key.dist = dists[k];
    key.outdeg = static_cast<std::uint32_t>(adj[k].size());
    key.indeg = indeg[k];
    key.out_weights.reserve(adj[k].size());
    for (const auto& [v, w] : adj[k]) {
      (void)v;
      key.out_weights.push_back(w);
    }
    std::sort(key.out_weights.begin(), key.out_weights.end());
    key.covs = &g.covariates[members[k]];
    key.id = &g.agent_ids[members[k]];
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (const auto& [v, w] : adj[k]) keys[v].in_weights.push_back(w);
  }
  for (auto& key : keys) std::sort(key.in_weights.begin(), key.in_weights.end());

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (dists[a] == 0) return true;  // root first
    if (dists[b] == 0) return false;
    return keys[a] < keys[b];
  });

  std::vector<std::uint32_t> rank(n);
  for (std::size_t k = 0; k < n; ++k) rank[order[k]] = static_cast<std::uint32_t>(k);

  Ball ball;
  ball.radius = radius;
  ball.covariate_dim = g.covariate_dim;
  ball.directed = g.directed;
  ball.root_distance.resize(n);
  ball.covariates.resize(n);
  ball.source_ids.resize(n);
  ball.out.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint32_t src = order[k];
    ball.root_distance[k] = dists[src];
    ball.covariates[k] = g.covariates[members[src]];
    ball.source_ids[k] = g.agent_ids[members[src]];
    auto& row = ball.out[k];
    row.reserve(adj[src].size());
    for (const auto& [v, w] : adj[src]) row.emplace_back(rank[v], w);
    std::sort(row.begin(), row.end());
  }
  return ball;
}

}  // namespace detail

/// Extracts the rooted network of `root` truncated at radius r: the subgraph
/// induced by the agents within path distance r, with covariates and
/// per-vertex root distances. r = 0 yields the single-vertex ball.
inline Ball extract_ball(const CommunityGraph& g, const std::vector<weight_t>& dist,
                         agent_t root, weight_t r) {
  if (r < 0) throw input_error("ball radius must be nonnegative");
  std::vector<agent_t> members;
  std::vector<weight_t> dists;
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (dist[j] != kUnreachable && dist[j] <= r) {
      members.push_back(static_cast<agent_t>(j));
      dists.push_back(dist[j]);
    }
  }
  (void)root;
  return detail::assemble_ball(g, members, dists, r);
}

inline Ball extract_ball(const CommunityGraph& g, agent_t root, weight_t r) {
  g.check_agent(root);
  return extract_ball(g, shortest_distances(g, root, r), root, r);
}

inline Ball extract_ball(const CommunityGraph& g, const std::string& root, weight_t r) {
  return extract_ball(g, g.index_of(root), r);
}

/// Truncates a ball: the result is the ball of radius min(b.radius, r), with
/// vertices filtered by root distance and edges re-induced.
inline Ball truncate(const Ball& b, weight_t r) {
  if (r < 0) throw input_error("ball radius must be nonnegative");
  if (r >= b.radius) return b;
  const CommunityGraph g = b.to_community();
  std::vector<agent_t> members;
  std::vector<weight_t> dists;
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (b.root_distance[k] <= r) {
      members.push_back(static_cast<agent_t>(k));
      dists.push_back(b.root_distance[k]);
    }
  }
  Ball out = detail::assemble_ball(g, members, dists, r);
  out.directed = b.directed;
  return out;
}

/// A community agent viewed as a rooted network, with the per-radius
/// truncations built on demand and memoized. Distances from the root are
/// computed once at construction.
class RootedView {
 public:
  RootedView(const CommunityGraph& g, agent_t root)
      : g_(&g), root_(root), dist_(shortest_distances(g, root)) {
    g.check_agent(root);
    stab_ = 0;
    std::size_t reachable = 0;
    for (weight_t d : dist_) {
      if (d != kUnreachable) {
        stab_ = std::max(stab_, d);
        ++reachable;
      }
    }
    counts_.assign(static_cast<std::size_t>(stab_) + 1, 0);
    for (weight_t d : dist_) {
      if (d != kUnreachable) ++counts_[static_cast<std::size_t>(d)];
    }
    for (std::size_t r = 1; r < counts_.size(); ++r) counts_[r] += counts_[r - 1];
    (void)reachable;
    balls_.resize(counts_.size());
  }

  const CommunityGraph& community() const { return *g_; }
  agent_t root() const { return root_; }
  weight_t stabilization() const { return stab_; }
  const std::vector<weight_t>& distances() const { return dist_; }

  // number of vertices within path distance r of the root
  std::size_t count_at(weight_t r) const {
    if (r < 0) return 0;
    const std::size_t idx = static_cast<std::size_t>(std::min(r, stab_));
    return counts_[idx];
  }

  // Truncation at radius r; content stops changing at the stabilization
  // radius, so requests beyond it share the stabilized ball.
  const Ball& ball_at(weight_t r) const {
    const weight_t eff = std::min(r, stab_);
    auto& slot = balls_[static_cast<std::size_t>(eff)];
    if (!slot) slot = extract_ball(*g_, dist_, root_, eff);
    return *slot;
  }

  // cache key of the whole rooted network (the stabilized ball)
  const std::string& canonical_key() const {
    if (key_.empty()) key_ = ball_at(stab_).canonical_key();
    return key_;
  }

 private:
  const CommunityGraph* g_;
  agent_t root_;
  std::vector<weight_t> dist_;
  std::vector<std::size_t> counts_;  // cumulative vertices per radius
  weight_t stab_ = 0;
  mutable std::vector<std::optional<Ball>> balls_;
  mutable std::string key_;
};

}  // namespace rooted
