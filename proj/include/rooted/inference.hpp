#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rooted/metric.hpp"
#include "rooted/parallel.hpp"
#include "rooted/rng.hpp"

namespace rooted {

/// All agents of one community viewed as rooted networks.
struct CommunityViews {
  const CommunityGraph* graph = nullptr;
  std::vector<RootedView> agents;
};

inline std::vector<CommunityViews> build_views(const Dataset& ds, int threads = 1) {
  std::vector<CommunityViews> views(ds.size());
  parallel_for(static_cast<std::int64_t>(ds.size()), threads, [&](std::int64_t c) {
    const CommunityGraph& g = ds.communities[static_cast<std::size_t>(c)];
    views[static_cast<std::size_t>(c)].graph = &g;
    views[static_cast<std::size_t>(c)].agents.reserve(g.size());
    for (agent_t i = 0; i < g.size(); ++i) {
      views[static_cast<std::size_t>(c)].agents.emplace_back(g, i);
    }
  });
  return views;
}

/// A query rooted network: a ball re-hosted as its own community.
struct QueryView {
  CommunityGraph community;
  std::optional<RootedView> view;

  explicit QueryView(const Ball& b) : community(b.to_community()) {
    view.emplace(community, 0);
  }
  const RootedView& operator*() const { return *view; }
};

struct MatchRecord {
  double dist = 0.0;
  agent_t agent = 0;
};

struct EstimateOptions {
  int threads = 1;
  DistanceOptions distance{};
};

namespace detail {

// Per-community nearest agents for one or two queries. Distances are
// computed in parallel; tie-breaks then consume `ties` sequentially, per
// community in index order, the draw for the first query before the second.
inline std::pair<std::vector<MatchRecord>, std::vector<MatchRecord>> match_communities(
    const std::vector<CommunityViews>& views, const RootedView& g, const RootedView* gp,
    RngStream& ties, const EstimateOptions& opts) {
  const std::size_t c_total = views.size();
  std::vector<std::vector<double>> dist_g(c_total);
  std::vector<std::vector<double>> dist_gp(c_total);
  parallel_for(static_cast<std::int64_t>(c_total), opts.threads, [&](std::int64_t ci) {
    const auto c = static_cast<std::size_t>(ci);
    const auto& agents = views[c].agents;
    dist_g[c].resize(agents.size());
    if (gp) dist_gp[c].resize(agents.size());
    for (std::size_t i = 0; i < agents.size(); ++i) {
      dist_g[c][i] = distance(agents[i], g, opts.distance).value;
      if (gp) dist_gp[c][i] = distance(agents[i], *gp, opts.distance).value;
    }
  });
  auto resolve = [&ties](const std::vector<double>& d) {
    double best = d[0];
    for (double v : d) best = std::min(best, v);
    std::vector<agent_t> tied;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d[i] == best) tied.push_back(static_cast<agent_t>(i));
    }
    const agent_t pick = tied.size() == 1 ? tied[0] : tied[ties.below(tied.size())];
    return MatchRecord{best, pick};
  };
  std::vector<MatchRecord> m_g(c_total);
  std::vector<MatchRecord> m_gp(gp ? c_total : 0);
  for (std::size_t c = 0; c < c_total; ++c) {
    m_g[c] = resolve(dist_g[c]);
    if (gp) m_gp[c] = resolve(dist_gp[c]);
  }
  return {std::move(m_g), std::move(m_gp)};
}

// Orders community indices by match distance, ties uniformly at random via
// one priority draw per community in index order.
inline std::vector<std::size_t> order_by_distance(std::span<const MatchRecord> matches,
                                                  std::span<const std::size_t> subset,
                                                  RngStream& order_rng) {
  std::vector<double> priority(subset.size());
  for (std::size_t k = 0; k < subset.size(); ++k) priority[k] = order_rng.uniform01();
  std::vector<std::size_t> pos(subset.size());
  std::iota(pos.begin(), pos.end(), 0);
  std::sort(pos.begin(), pos.end(), [&](std::size_t x, std::size_t y) {
    const double dx = matches[subset[x]].dist;
    const double dy = matches[subset[y]].dist;
    if (dx != dy) return dx < dy;
    return priority[x] < priority[y];
  });
  std::vector<std::size_t> out(subset.size());
  for (std::size_t k = 0; k < subset.size(); ++k) out[k] = subset[pos[k]];
  return out;
}

inline double require_outcome(const CommunityGraph& g, agent_t agent, std::size_t community) {
  const auto& y = g.outcomes[agent];
  if (!y) {
    throw input_error("selected agent '" + g.agent_ids[agent] + "' in community " +
                      std::to_string(community) + " has no outcome");
  }
  return *y;
}

}  // namespace detail

struct NeighborRecord {
  std::size_t community = 0;
  agent_t agent = 0;
  double distance = 0.0;
  double outcome = 0.0;
};

/// A k-nearest-neighbor estimate: the mean of the outcomes of the k selected
/// representatives, distances nondecreasing in the selection order.
struct EstimateResult {
  double h_hat = 0.0;
  std::int64_t k = 0;
  std::vector<NeighborRecord> neighbors;
  Ball query;
};

namespace detail {

inline void check_knn_inputs(const Dataset& ds, const Ball& query, std::int64_t k) {
  if (k < 1) throw input_error("k must be positive");
  if (static_cast<std::size_t>(k) > ds.size()) {
    throw input_error("k = " + std::to_string(k) + " exceeds the number of communities (" +
                      std::to_string(ds.size()) + ")");
  }
  if (query.covariate_dim != ds.covariate_dim) {
    throw input_error("query covariate dimension does not match the dataset");
  }
  for (std::size_t c = 0; c < ds.size(); ++c) {
    const auto& outs = ds.communities[c].outcomes;
    if (std::none_of(outs.begin(), outs.end(), [](const auto& y) { return y.has_value(); })) {
      throw input_error("community " + std::to_string(c) + " has no agent with an outcome");
    }
  }
}

inline std::vector<NeighborRecord> select_neighbors(const Dataset& ds,
                                                    const std::vector<CommunityViews>& views,
                                                    const RootedView& query, std::int64_t k,
                                                    const Seeder& seeder,
                                                    const EstimateOptions& opts) {
  RngStream ties = seeder.stream("ties");
  auto [matches, unused] = match_communities(views, query, nullptr, ties, opts);
  (void)unused;
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  RngStream order_rng = seeder.stream("order");
  const auto ordered = order_by_distance(matches, all, order_rng);
  std::vector<NeighborRecord> out;
  out.reserve(static_cast<std::size_t>(k));
  for (std::int64_t j = 0; j < k; ++j) {
    const std::size_t c = ordered[static_cast<std::size_t>(j)];
    const MatchRecord& m = matches[c];
    out.push_back({c, m.agent, m.dist, require_outcome(ds.communities[c], m.agent, c)});
  }
  return out;
}

}  // namespace detail

/// Estimates the mean outcome at the query rooted network: per community the
/// nearest agent is selected, the representatives are ordered by distance,
/// and the first k outcomes are averaged. All ties are uniform draws from
/// the seeded streams, so the result is a pure function of (data, k, seed).
inline EstimateResult knn_estimate(const Dataset& ds, const Ball& query, std::int64_t k,
                                   const Seeder& seeder, const EstimateOptions& opts = {}) {
  detail::check_knn_inputs(ds, query, k);
  const auto views = build_views(ds, opts.threads);
  const QueryView qv(query);
  EstimateResult res;
  res.k = k;
  res.query = query;
  res.neighbors = detail::select_neighbors(ds, views, *qv, k, seeder, opts);
  double total = 0.0;
  for (const auto& n : res.neighbors) total += n.outcome;
  res.h_hat = total / static_cast<double>(k);
  return res;
}

/// The estimated effect of moving the rooted network from g to g_prime:
/// two estimates over the same data with matched tie-break streams.
inline double policy_effect(const Dataset& ds, const Ball& g, const Ball& g_prime,
                            std::int64_t k, const Seeder& seeder,
                            const EstimateOptions& opts = {}) {
  return knn_estimate(ds, g_prime, k, seeder, opts).h_hat -
         knn_estimate(ds, g, k, seeder, opts).h_hat;
}

/// Distributional analogue: the estimated probability that the outcome at
/// the query is at most y. Neighbor records keep the raw outcomes.
inline EstimateResult knn_cdf(const Dataset& ds, const Ball& query, std::int64_t k, double y,
                              const Seeder& seeder, const EstimateOptions& opts = {}) {
  EstimateResult res = knn_estimate(ds, query, k, seeder, opts);
  double hits = 0.0;
  for (const auto& n : res.neighbors) hits += (n.outcome <= y) ? 1.0 : 0.0;
  res.h_hat = hits / static_cast<double>(k);
  return res;
}

/// An empirical regularity curve: one nearest-distance sample per community
/// (or generated draw), evaluated as a right-continuous step function.
class PsiCurve {
 public:
  static PsiCurve from_samples(std::vector<double> samples) {
    if (samples.empty()) throw input_error("regularity curve needs at least one sample");
    std::sort(samples.begin(), samples.end());
    PsiCurve c;
    c.samples_ = samples;
    const auto n = static_cast<double>(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!(samples[i] >= 0.0 && samples[i] <= 2.0)) {
        throw input_error("distance sample outside [0, 2]");
      }
      if (i + 1 < samples.size() && samples[i + 1] == samples[i]) continue;
      c.knots_.push_back(samples[i]);
      c.cum_.push_back(static_cast<double>(i + 1) / n);
    }
    return c;
  }

  // step curve given directly as (knot, cumulative fraction) pairs
  static PsiCurve from_steps(std::vector<double> knots, std::vector<double> cum) {
    if (knots.empty() || knots.size() != cum.size()) {
      throw input_error("step curve needs matching knot and value lists");
    }
    for (std::size_t i = 0; i < knots.size(); ++i) {
      if (!(knots[i] >= 0.0 && knots[i] <= 2.0)) throw input_error("knot outside [0, 2]");
      if (!(cum[i] > 0.0 && cum[i] <= 1.0)) throw input_error("curve value outside (0, 1]");
      if (i > 0 && (knots[i] <= knots[i - 1] || cum[i] < cum[i - 1])) {
        throw input_error("step curve must be sorted and nondecreasing");
      }
    }
    if (cum.back() != 1.0) throw input_error("step curve must reach 1");
    PsiCurve c;
    c.knots_ = std::move(knots);
    c.cum_ = std::move(cum);
    return c;
  }

  // fraction of samples at or below ell
  double operator()(double ell) const {
    auto it = std::upper_bound(knots_.begin(), knots_.end(), ell);
    if (it == knots_.begin()) return 0.0;
    return cum_[static_cast<std::size_t>(it - knots_.begin()) - 1];
  }

  // upper generalized inverse: sup of the set where the curve is <= x,
  // capped at 2 (the metric is bounded by 2)
  double upper_inverse(double x) const {
    auto it = std::upper_bound(cum_.begin(), cum_.end(), x);
    if (it == cum_.end()) return 2.0;
    return knots_[static_cast<std::size_t>(it - cum_.begin())];
  }

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& cum() const { return cum_; }
  const std::vector<double>& samples() const { return samples_; }

 private:
  std::vector<double> samples_;  // empty when loaded from a step file
  std::vector<double> knots_;
  std::vector<double> cum_;
};

/// Empirical regularity of the dataset at the query: the distance from each
/// community's nearest agent to the query, one sample per community.
inline PsiCurve psi_hat(const Dataset& ds, const Ball& query,
                        const EstimateOptions& opts = {}) {
  if (query.covariate_dim != ds.covariate_dim) {
    throw input_error("query covariate dimension does not match the dataset");
  }
  const auto views = build_views(ds, opts.threads);
  const QueryView qv(query);
  std::vector<double> samples(ds.size());
  parallel_for(static_cast<std::int64_t>(ds.size()), opts.threads, [&](std::int64_t ci) {
    const auto c = static_cast<std::size_t>(ci);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& agent : views[c].agents) {
      best = std::min(best, distance(agent, *qv, opts.distance).value);
    }
    samples[c] = best;
  });
  return PsiCurve::from_samples(std::move(samples));
}

/// A modulus-of-continuity family for the bound calculator.
struct PhiSpec {
  enum class Family { indicator, geometric, tabulated };

  Family family = Family::indicator;
  double scale = 0.0;       // M
  weight_t radius = 0;      // indicator: flat below 1/(1+radius)
  double delta_rho = 0.0;   // geometric: |delta| times the spectral radius bound
  std::vector<std::pair<double, double>> table;  // tabulated, sorted nondecreasing

  static PhiSpec indicator(double M, weight_t r) {
    if (M < 0) throw input_error("indicator scale must be nonnegative");
    if (r < 0) throw input_error("indicator radius must be nonnegative");
    PhiSpec p;
    p.family = Family::indicator;
    p.scale = M;
    p.radius = r;
    return p;
  }

  static PhiSpec geometric(double M, double delta_rho) {
    if (M < 0) throw input_error("geometric scale must be nonnegative");
    if (!(delta_rho > 0.0 && delta_rho < 1.0)) {
      throw input_error("geometric ratio must lie in (0, 1)");
    }
    PhiSpec p;
    p.family = Family::geometric;
    p.scale = M;
    p.delta_rho = delta_rho;
    return p;
  }

  static PhiSpec tabulated(std::vector<std::pair<double, double>> entries) {
    if (entries.empty()) throw input_error("tabulated curve needs entries");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].first < 0 || entries[i].second < 0) {
        throw input_error("tabulated entries must be nonnegative");
      }
      if (i > 0 && (entries[i].first <= entries[i - 1].first ||
                    entries[i].second < entries[i - 1].second)) {
        throw input_error("tabulated entries must be sorted and nondecreasing");
      }
    }
    PhiSpec p;
    p.family = Family::tabulated;
    p.table = std::move(entries);
    return p;
  }

  double operator()(double x) const {
    switch (family) {
      case Family::indicator:
        return x > zeta(radius) ? scale : 0.0;
      case Family::geometric:
        if (x <= 0.0) return 0.0;
        return scale * std::pow(delta_rho, (1.0 - x) / x) / (1.0 - delta_rho);
      case Family::tabulated: {
        auto it = std::upper_bound(table.begin(), table.end(), x,
                                   [](double v, const auto& e) { return v < e.first; });
        if (it == table.begin()) return 0.0;
        return (it - 1)->second;
      }
    }
    return 0.0;
  }
};

struct BoundResult {
  double variance_term = 0.0;
  double bias_term = 0.0;
  double total = 0.0;
};

namespace detail {

inline void check_bound_inputs(double sigma2, std::int64_t k, std::int64_t c_total,
                               std::int64_t mc_draws) {
  if (sigma2 < 0) throw input_error("sigma2 must be nonnegative");
  if (k < 1) throw input_error("k must be positive");
  if (k > c_total) {
    throw input_error("k = " + std::to_string(k) + " exceeds C = " + std::to_string(c_total));
  }
  if (mc_draws < 1) throw input_error("mc_draws must be positive");
}

}  // namespace detail

/// Monte Carlo evaluation of the k-nearest-neighbor risk bound
///   sigma2 / k  +  E[ phi(psi^-(U))^2 ],   U ~ Beta(k, C - k + 1),
/// with psi^- the upper generalized inverse of the regularity curve.
inline BoundResult mse_bound(const PhiSpec& phi, const PsiCurve& psi, double sigma2,
                             std::int64_t k, std::int64_t c_total, std::int64_t mc_draws,
                             RngStream& rng) {
  detail::check_bound_inputs(sigma2, k, c_total, mc_draws);
  double acc = 0.0;
  for (std::int64_t i = 0; i < mc_draws; ++i) {
    const double u = rng.beta(static_cast<double>(k), static_cast<double>(c_total - k + 1));
    const double v = phi(psi.upper_inverse(u));
    acc += v * v;
  }
  BoundResult res;
  res.variance_term = sigma2 / static_cast<double>(k);
  res.bias_term = acc / static_cast<double>(mc_draws);
  res.total = res.variance_term + res.bias_term;
  return res;
}

/// Bound for the contrast of two estimates: four times the symmetric bound
/// with the pointwise maximum of the two composed curves.
inline BoundResult effect_bound(const PhiSpec& phi_g, const PhiSpec& phi_gp,
                                const PsiCurve& psi_g, const PsiCurve& psi_gp, double sigma2,
                                std::int64_t k, std::int64_t c_total, std::int64_t mc_draws,
                                RngStream& rng) {
  detail::check_bound_inputs(sigma2, k, c_total, mc_draws);
  double acc = 0.0;
  for (std::int64_t i = 0; i < mc_draws; ++i) {
    const double u = rng.beta(static_cast<double>(k), static_cast<double>(c_total - k + 1));
    const double v = std::max(phi_g(psi_g.upper_inverse(u)), phi_gp(psi_gp.upper_inverse(u)));
    acc += v * v;
  }
  BoundResult res;
  res.variance_term = 4.0 * sigma2 / static_cast<double>(k);
  res.bias_term = 4.0 * acc / static_cast<double>(mc_draws);
  res.total = res.variance_term + res.bias_term;
  return res;
}

}  // namespace rooted
