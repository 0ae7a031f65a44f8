#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rooted {

struct input_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct budget_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using agent_t = std::uint32_t;
using weight_t = std::int64_t;

inline constexpr weight_t kUnreachable = std::numeric_limits<weight_t>::max();

/// One community: a weighted directed graph over named agents with a fixed
/// number of real covariates per agent and optional real outcomes.
///
/// Edge weights are integers >= 1 and a missing entry means no link; the
/// zero distance is reserved for an agent and itself and is never stored.
/// Undirected communities keep a symmetric adjacency.
struct CommunityGraph {
  bool directed = false;
  std::size_t covariate_dim = 0;
  std::vector<std::string> agent_ids;
  std::vector<std::vector<double>> covariates;   // size() x covariate_dim
  std::vector<std::optional<double>> outcomes;   // size()
  std::vector<std::vector<std::pair<agent_t, weight_t>>> out;  // sorted by target

  std::size_t size() const { return agent_ids.size(); }

  agent_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < agent_ids.size(); ++i) {
      if (agent_ids[i] == id) return static_cast<agent_t>(i);
    }
    throw input_error("unknown agent id '" + id + "'");
  }

  // 0 when absent; real weights are always >= 1.
  weight_t edge_weight(agent_t i, agent_t j) const {
    const auto& row = out[i];
    auto it = std::lower_bound(row.begin(), row.end(), j,
                               [](const auto& e, agent_t v) { return e.first < v; });
    return (it != row.end() && it->first == j) ? it->second : 0;
  }

  std::vector<double> covariate_column(std::size_t p) const {
    if (p >= covariate_dim) throw input_error("covariate index out of range");
    std::vector<double> col(size());
    for (std::size_t i = 0; i < size(); ++i) col[i] = covariates[i][p];
    return col;
  }

  void check_agent(agent_t i) const {
    if (i >= size()) throw input_error("agent index out of range");
  }
};

/// Builds a CommunityGraph while enforcing its invariants. Diagnostics carry
/// an optional context label (typically the source file name).
class CommunityBuilder {
 public:
  CommunityBuilder(bool directed, std::size_t covariate_dim, std::string context = {})
      : directed_(directed), dim_(covariate_dim), context_(std::move(context)) {}

  agent_t add_agent(std::string id, std::vector<double> covariates = {},
                    std::optional<double> outcome = std::nullopt) {
    if (ids_seen_.count(id) > 0) fail("duplicate agent id '" + id + "'");
    if (covariates.empty() && dim_ > 0) covariates.assign(dim_, 0.0);
    if (covariates.size() != dim_) {
      fail("agent '" + id + "' has " + std::to_string(covariates.size()) +
           " covariates, expected " + std::to_string(dim_));
    }
    for (double c : covariates) {
      if (!std::isfinite(c)) fail("agent '" + id + "' has a non-finite covariate");
    }
    if (outcome && !std::isfinite(*outcome)) {
      fail("agent '" + id + "' has a non-finite outcome");
    }
    ids_seen_.emplace(id, static_cast<agent_t>(g_.agent_ids.size()));
    g_.agent_ids.push_back(std::move(id));
    g_.covariates.push_back(std::move(covariates));
    g_.outcomes.push_back(outcome);
    return static_cast<agent_t>(g_.agent_ids.size() - 1);
  }

  void add_edge(agent_t src, agent_t dst, weight_t w) {
    if (src >= g_.agent_ids.size() || dst >= g_.agent_ids.size()) {
      fail("edge endpoint out of range");
    }
    if (src == dst) {
      fail("self-loop on agent '" + g_.agent_ids[src] +
           "': the zero distance is reserved for an agent and itself and links "
           "require weight >= 1");
    }
    if (w < 1) {
      fail("edge " + g_.agent_ids[src] + " -> " + g_.agent_ids[dst] + " has weight " +
           std::to_string(w) + "; weights are integers >= 1 (zero distance is "
           "reserved for an agent and itself)");
    }
    insert(src, dst, w);
    if (!directed_) insert(dst, src, w);
  }

  void add_edge(const std::string& src, const std::string& dst, weight_t w) {
    add_edge(lookup(src), lookup(dst), w);
  }

  CommunityGraph build() {
    g_.directed = directed_;
    g_.covariate_dim = dim_;
    g_.out.assign(g_.agent_ids.size(), {});
    for (const auto& [key, w] : edges_) {
      g_.out[key.first].emplace_back(key.second, w);
    }
    return std::move(g_);
  }

 private:
  agent_t lookup(const std::string& id) const {
    auto it = ids_seen_.find(id);
    if (it == ids_seen_.end()) fail("unknown agent id '" + id + "'");
    return it->second;
  }

  void insert(agent_t src, agent_t dst, weight_t w) {
    auto [it, inserted] = edges_.emplace(std::make_pair(src, dst), w);
    if (!inserted && it->second != w) {
      fail("conflicting weights for edge " + g_.agent_ids[src] + " -> " +
           g_.agent_ids[dst]);
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw input_error(context_.empty() ? msg : context_ + ": " + msg);
  }

  bool directed_;
  std::size_t dim_;
  std::string context_;
  CommunityGraph g_;
  std::unordered_map<std::string, agent_t> ids_seen_;
  std::map<std::pair<agent_t, agent_t>, weight_t> edges_;
};

namespace detail {

inline std::vector<weight_t> dial_distances(const CommunityGraph& g, agent_t src,
                                            weight_t cap, weight_t max_w) {
  std::vector<weight_t> dist(g.size(), kUnreachable);
  dist[src] = 0;
  std::vector<std::vector<agent_t>> buckets(1);
  buckets[0].push_back(src);
  for (std::size_t d = 0; d < buckets.size(); ++d) {
    for (std::size_t k = 0; k < buckets[d].size(); ++k) {
      const agent_t u = buckets[d][k];
      if (dist[u] != static_cast<weight_t>(d)) continue;  // stale entry
      for (const auto& [v, w] : g.out[u]) {
        const weight_t nd = static_cast<weight_t>(d) + w;
        if (nd > cap || nd >= dist[v]) continue;
        dist[v] = nd;
        if (static_cast<std::size_t>(nd) >= buckets.size()) {
          buckets.resize(static_cast<std::size_t>(nd) + static_cast<std::size_t>(max_w));
        }
        buckets[static_cast<std::size_t>(nd)].push_back(v);
      }
    }
  }
  return dist;
}

inline std::vector<weight_t> heap_distances(const CommunityGraph& g, agent_t src,
                                            weight_t cap) {
  std::vector<weight_t> dist(g.size(), kUnreachable);
  dist[src] = 0;
  using Item = std::pair<weight_t, agent_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  heap.emplace(0, src);
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (d != dist[u]) continue;
    for (const auto& [v, w] : g.out[u]) {
      const weight_t nd = d + w;
      if (nd > cap || nd >= dist[v]) continue;
      dist[v] = nd;
      heap.emplace(nd, v);
    }
  }
  return dist;
}

}  // namespace detail

/// Shortest-path distances from src to every agent, kUnreachable where no
/// directed path exists (or the distance exceeds cap). Label-setting search:
/// a bucket queue for small integer weights, a binary heap otherwise.
inline std::vector<weight_t> shortest_distances(const CommunityGraph& g, agent_t src,
                                                weight_t cap = kUnreachable) {
  g.check_agent(src);
  weight_t max_w = 1;
  bool small = true;
  for (const auto& row : g.out) {
    for (const auto& [v, w] : row) {
      (void)v;
      max_w = std::max(max_w, w);
      if (w > 64) small = false;
    }
  }
  if (small) {
    // bucket indices stay bounded by n * max_w
    const weight_t reach = static_cast<weight_t>(g.size()) * max_w;
    return detail::dial_distances(g, src, std::min(cap, reach), max_w);
  }
  return detail::heap_distances(g, src, cap);
}

/// Path distance from i to j: the minimum over directed paths of the summed
/// weights. Zero iff i == j, kUnreachable iff no path exists.
inline weight_t path_distance(const CommunityGraph& g, agent_t i, agent_t j) {
  g.check_agent(i);
  g.check_agent(j);
  return shortest_distances(g, i)[j];
}

inline weight_t path_distance(const CommunityGraph& g, const std::string& i,
                              const std::string& j) {
  return path_distance(g, g.index_of(i), g.index_of(j));
}

/// Neighborhood count: the sum of w over agents within path distance r of i.
/// At r = 0 this is w[i] alone.
inline double neighborhood_count(const CommunityGraph& g, std::span<const double> w,
                                 agent_t i, weight_t r) {
  g.check_agent(i);
  if (w.size() != g.size()) throw input_error("per-agent vector has wrong length");
  const auto dist = shortest_distances(g, i, r);
  double total = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (dist[j] != kUnreachable && dist[j] <= r) total += w[j];
  }
  return total;
}

/// The radius from which the root's balls stop growing: the largest finite
/// path distance from root (0 for an isolated root). Balls of any radius at
/// or above this value coincide with the reachable component.
inline weight_t stabilization_radius(const CommunityGraph& g, agent_t root) {
  g.check_agent(root);
  const auto dist = shortest_distances(g, root);
  weight_t ecc = 0;
  for (weight_t d : dist) {
    if (d != kUnreachable) ecc = std::max(ecc, d);
  }
  return ecc;
}

/// A dataset: an ordered list of communities sharing one covariate dimension.
struct Dataset {
  std::vector<CommunityGraph> communities;
  std::size_t covariate_dim = 0;

  std::size_t size() const { return communities.size(); }

  void validate() const {
    for (std::size_t c = 0; c < communities.size(); ++c) {
      if (communities[c].covariate_dim != covariate_dim) {
        throw input_error("community " + std::to_string(c) +
                          " has covariate dimension " +
                          std::to_string(communities[c].covariate_dim) + ", expected " +
                          std::to_string(covariate_dim));
      }
      if (communities[c].size() == 0) {
        throw input_error("community " + std::to_string(c) + " is empty");
      }
    }
  }
};

}  // namespace rooted
