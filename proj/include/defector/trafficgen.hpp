#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "defector/corpus.hpp"
#include "defector/dnscache.hpp"
#include "defector/error.hpp"
#include "defector/parallel.hpp"
#include "defector/popmodel.hpp"
#include "defector/random.hpp"

namespace defector {

/// Network-wide website-visit load and how it spreads over exits.
struct NetworkModel {
  double visits_per_10min = 700'000.0;
  double scale = 1.0;
  std::vector<double> exit_weights{1.0};  // bandwidth share per exit id

  /// Exit ids 0..n-1 with equal bandwidth.
  static NetworkModel with_equal_exits(std::size_t n_exits, double visits_per_10min = 700'000.0, double scale = 1.0) {
    if (n_exits == 0) throw ConfigError("network needs at least one exit");
    return NetworkModel{visits_per_10min, scale, std::vector<double>(n_exits, 1.0 / static_cast<double>(n_exits))};
  }

  std::size_t n_exits() const noexcept { return exit_weights.size(); }

  /// Visits per second across the whole network.
  double rate() const { return visits_per_10min * scale / 600.0; }

  void validate() const {
    if (!(visits_per_10min >= 0.0) || !std::isfinite(visits_per_10min)) {
      throw ConfigError("visits_per_10min must be a non-negative number");
    }
    if (!(scale >= 0.41 && scale <= 10.0)) throw ConfigError("network scale must lie in [0.41, 10]");
    if (exit_weights.empty()) throw ConfigError("network needs at least one exit");
    double sum = 0.0;
    for (double w : exit_weights) {
      if (!(w >= 0.0)) throw ConfigError("exit weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("exit weights must sum to 1");
  }
};

/// Which exits the attacker watches, and the bandwidth share they carry.
struct AttackerConfig {
  double pct = 0.0;
  std::set<ExitId> observed_exits;

  /// Watches exits 0, 1, ... of an equal-weight network until pct is reached.
  static AttackerConfig first_exits(const NetworkModel& net, double pct) {
    AttackerConfig a{pct, {}};
    double acc = 0.0;
    for (ExitId e = 0; e < net.n_exits() && acc + 1e-12 < pct; ++e) {
      a.observed_exits.insert(e);
      acc += net.exit_weights[e];
    }
    a.validate(net);
    return a;
  }

  void validate(const NetworkModel& net) const {
    if (!(pct >= 0.0 && pct <= 1.0)) throw ConfigError("attacker pct must lie in [0, 1]");
    double sum = 0.0;
    for (ExitId e : observed_exits) {
      if (e >= net.n_exits()) throw ConfigError("observed exit " + std::to_string(e) + " does not exist");
      sum += net.exit_weights[e];
    }
    if (std::abs(sum - pct) > 1e-6) {
      throw ConfigError("observed exits carry " + std::to_string(sum) + " of bandwidth, not pct=" + std::to_string(pct));
    }
  }
};

struct VisitEvent {
  Timestamp time = 0.0;
  SiteId site;
  ExitId exit_id = 0;

  friend bool operator==(const VisitEvent&, const VisitEvent&) = default;
};

/// Length of one generation shard. Each shard draws from its own stream
/// derive_seed(seed, {shard}), so output is identical for any worker count.
inline constexpr double kShardSeconds = 60.0;

/// Homogeneous Poisson visit stream over [0, horizon), time-ordered.
inline std::vector<VisitEvent> generate_visits(const NetworkModel& net, const PopModel& pop, double horizon,
                                               std::uint64_t seed, std::size_t workers = 1) {
  if (!(horizon > 0)) throw ConfigError("horizon must be positive");
  net.validate();
  const WeightedSampler exits(net.exit_weights);
  const auto n_shards = static_cast<std::size_t>(std::ceil(horizon / kShardSeconds));
  std::vector<std::vector<VisitEvent>> shards(n_shards);
  const double rate = net.rate();
  parallel_for(n_shards, workers, [&](std::size_t k) {
    const double begin = static_cast<double>(k) * kShardSeconds;
    const double end = std::min(horizon, begin + kShardSeconds);
    Rng rng{derive_seed(seed, {k})};
    const double mean = rate * (end - begin);
    if (!(mean > 0)) return;
    const auto n = std::poisson_distribution<std::uint64_t>(mean)(rng);
    std::vector<double> times(n);
    for (auto& t : times) t = begin + uniform01(rng) * (end - begin);
    std::sort(times.begin(), times.end());
    auto& out = shards[k];
    out.reserve(n);
    for (double t : times) {
      const SiteId site = pop.sample(rng);
      out.push_back({t, site, static_cast<ExitId>(exits(rng))});
    }
  });
  std::vector<VisitEvent> events;
  std::size_t total = 0;
  for (const auto& s : shards) total += s.size();
  events.reserve(total);
  for (auto& s : shards) events.insert(events.end(), s.begin(), s.end());
  return events;
}

inline std::vector<VisitEvent> observed_subset(std::span<const VisitEvent> events, const AttackerConfig& attacker) {
  std::vector<VisitEvent> out;
  for (const auto& e : events) {
    if (attacker.observed_exits.contains(e.exit_id)) out.push_back(e);
  }
  return out;
}

/// Resolves every domain of every visit through its exit's cache and returns
/// the requests that leave the exit (cache misses), in time order.
/// `caches` is indexed by exit id.
inline std::vector<DnsEvent> expand_to_dns(std::span<const VisitEvent> events, const Corpus& corpus,
                                           std::vector<ExitCache>& caches, const TtlPolicy& policy) {
  policy.validate();
  std::vector<DnsEvent> out;
  for (const auto& e : events) {
    if (!corpus.contains(e.site)) throw DomainError("visit to site rank " + std::to_string(e.site.rank) + " not in corpus");
    if (e.exit_id >= caches.size()) throw DomainError("visit through unknown exit " + std::to_string(e.exit_id));
    auto& cache = caches[e.exit_id];
    for (const auto& rec : corpus.profile(e.site).records) {
      if (cache.lookup(policy, e.time, rec) == CacheOutcome::Miss) out.push_back({e.time, rec.domain, e.exit_id});
    }
  }
  return out;
}

inline std::vector<ExitCache> make_caches(const NetworkModel& net) {
  std::vector<ExitCache> caches;
  caches.reserve(net.n_exits());
  for (ExitId e = 0; e < net.n_exits(); ++e) caches.emplace_back(e);
  return caches;
}

/// Which of `sites` receive at least one observed visit during a window of
/// `window` seconds. Poisson thinning makes the per-site visit counts of
/// generate_visits + observed_subset independent Poisson variables with mean
/// pct * rate * window * p(site), so this draws exactly the marginal the full
/// stream would produce for these sites, without materializing it.
inline SiteSet sample_window_visits(const NetworkModel& net, const PopModel& pop, double pct, double window,
                                    std::span<const SiteId> sites, Rng& rng) {
  SiteSet out;
  const double base = pct * net.rate() * window;
  for (SiteId s : sites) {
    // One draw per site keeps streams coupled across pct and window values.
    const double u = uniform01(rng);
    if (u < -std::expm1(-base * pop.probability(s))) out.insert(s);
  }
  return out;
}

}  // namespace defector
