#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "defector/error.hpp"
#include "defector/random.hpp"
#include "defector/types.hpp"

namespace defector {

struct DomainRecord {
  Domain domain;
  std::uint32_t ttl_raw = 0;  // seconds, as served by the authoritative server

  friend bool operator==(const DomainRecord&, const DomainRecord&) = default;
};

/// A website and the domains a visit to it resolves.
struct SiteProfile {
  SiteId site;
  std::vector<DomainRecord> records;

  friend bool operator==(const SiteProfile&, const SiteProfile&) = default;
};

/// Domain -> site for every domain that appears in exactly one profile.
using UniqueIndex = std::unordered_map<Domain, SiteId>;

/// Builds the unique-domain index over an arbitrary profile list (ranks need
/// not be contiguous). Profiles must have distinct domains.
inline UniqueIndex build_unique_index(std::span<const SiteProfile> profiles) {
  std::unordered_map<Domain, std::pair<SiteId, std::uint32_t>> seen;
  for (const auto& p : profiles) {
    for (const auto& r : p.records) {
      auto [it, inserted] = seen.try_emplace(r.domain, p.site, 0);
      ++it->second.second;
    }
  }
  UniqueIndex index;
  for (auto& [domain, owner] : seen) {
    if (owner.second == 1) index.emplace(domain, owner.first);
  }
  return index;
}

/// Ranked site catalog with its unique-domain index. Immutable after build.
class Corpus {
 public:
  Corpus() = default;

  /// Validates ranks (contiguous from 1, in order) and per-profile domain
  /// distinctness, then indexes unique and shared domains.
  static Corpus build_index(std::vector<SiteProfile> profiles) {
    for (std::size_t i = 0; i < profiles.size(); ++i) {
      const auto expected = static_cast<std::uint64_t>(i + 1);
      if (profiles[i].site.rank != expected) {
        if (i > 0 && profiles[i].site.rank == profiles[i - 1].site.rank) {
          throw DataError("duplicate rank " + std::to_string(profiles[i].site.rank));
        }
        throw DataError("rank " + std::to_string(expected) + " missing (found " +
                        std::to_string(profiles[i].site.rank) + ")");
      }
      if (profiles[i].records.empty()) {
        throw DataError("site rank " + std::to_string(expected) + " has no domains");
      }
      std::unordered_set<Domain> distinct;
      for (const auto& r : profiles[i].records) {
        if (!distinct.insert(r.domain).second) {
          throw DataError("site rank " + std::to_string(expected) + " lists domain " + r.domain.str() + " twice");
        }
      }
    }
    Corpus c;
    c.profiles_ = std::move(profiles);
    c.unique_index_ = build_unique_index(c.profiles_);
    for (const auto& p : c.profiles_) {
      for (const auto& r : p.records) c.domain_sites_[r.domain].push_back(p.site);
    }
    return c;
  }

  const std::vector<SiteProfile>& profiles() const noexcept { return profiles_; }
  const UniqueIndex& unique_index() const noexcept { return unique_index_; }
  std::size_t size() const noexcept { return profiles_.size(); }

  bool contains(SiteId s) const noexcept { return s.rank >= 1 && s.rank <= profiles_.size(); }

  const SiteProfile& profile(SiteId s) const {
    if (!contains(s)) throw DomainError("site rank " + std::to_string(s.rank) + " not in corpus");
    return profiles_[s.rank - 1];
  }

  /// Every site embedding the domain; empty when unknown.
  std::span<const SiteId> sites_of(const Domain& d) const {
    auto it = domain_sites_.find(d);
    if (it == domain_sites_.end()) return {};
    return it->second;
  }

  bool has_unique_domain(SiteId s) const {
    for (const auto& r : profile(s).records) {
      if (unique_index_.contains(r.domain)) return true;
    }
    return false;
  }

  friend bool operator==(const Corpus& a, const Corpus& b) { return a.profiles_ == b.profiles_; }

 private:
  std::vector<SiteProfile> profiles_;
  UniqueIndex unique_index_;
  std::unordered_map<Domain, std::vector<SiteId>> domain_sites_;
};

// ---------------------------------------------------------------------------
// Synthetic corpora

/// Targets for synthetic generation. Defaults follow the Alexa top-1M crawl
/// summary: 10 domains per site median, 12.2 mean, 96.8% of sites with at
/// least one unique domain, about 2.3 unique domains per site, raw TTL median
/// near 255 s and 48% of unique-domain TTLs at or below 60 s.
struct CorpusStats {
  double mean_domains = 12.2;
  double median_domains = 10.0;
  std::uint32_t max_domains = 397;
  double unique_fraction = 0.968;
  double mean_unique = 2.3;
  double short_unique_ttl_fraction = 0.48;
  double shared_ttl_median = 300.0;
  double shared_ttl_sigma = 1.6;
  double pool_skew = 1.0;
  double pool_per_site = 0.25;  // shared pool size relative to n_sites
  double tolerance = 0.02;      // allowed |realized - target| unique fraction
  int max_retries = 8;
};

namespace detail {

/// Dispersion r of a shifted negative binomial 1 + NB(r, p) whose mean is
/// `mean` and whose median is closest to `median`. The smallest such r is
/// picked, which keeps the long right tail of real domain counts.
inline double tune_dispersion(double mean, double median) {
  const double m = mean - 1.0;
  double best_r = 1.0;
  double best_gap = 1e300;
  for (int step = 1; step <= 400; ++step) {
    const double r = 0.05 * step;
    const double p = r / (r + m);
    // pmf recursion: P(0) = p^r, P(k+1) = P(k) (k + r) / (k + 1) (1 - p)
    double pk = std::pow(p, r);
    double cdf = pk;
    int k = 0;
    while (cdf < 0.5 && k < 100000) {
      pk *= (k + r) / (k + 1.0) * (1.0 - p);
      ++k;
      cdf += pk;
    }
    const double gap = std::abs((1.0 + k) - median);
    if (gap < best_gap - 1e-12) {
      best_gap = gap;
      best_r = r;
    }
  }
  return best_r;
}

inline std::uint32_t log_uniform_ttl(Rng& rng, double lo, double hi) {
  const double x = std::exp(std::log(lo) + uniform01(rng) * (std::log(hi) - std::log(lo)));
  return static_cast<std::uint32_t>(std::clamp(std::round(x), lo, hi));
}

}  // namespace detail

/// Fraction of profiles with at least one unique domain.
inline double unique_site_fraction(const Corpus& c) {
  if (c.size() == 0) return 0.0;
  std::size_t with_unique = 0;
  for (const auto& p : c.profiles()) {
    with_unique += std::any_of(p.records.begin(), p.records.end(),
                               [&](const DomainRecord& r) { return c.unique_index().contains(r.domain); });
  }
  return static_cast<double>(with_unique) / static_cast<double>(c.size());
}

/// Generates a corpus of `n_sites` profiles. Sites designated to carry unique
/// evidence get 1 + Poisson site-specific domains; the rest of each site is
/// filled from a shared pool with Zipf-skewed reuse. Sites designated to carry
/// no unique domain draw only pool domains another site already uses.
/// Retries when the realized unique fraction misses its target; throws
/// ConfigError after stats.max_retries attempts.
inline Corpus generate_synthetic(std::uint64_t n_sites, const CorpusStats& stats, Rng& rng) {
  if (n_sites == 0) throw ConfigError("synthetic corpus needs at least one site");
  if (!(stats.unique_fraction >= 0.0 && stats.unique_fraction <= 1.0)) {
    throw ConfigError("unique_fraction must lie in [0, 1]");
  }
  if (!(stats.mean_domains > 1.0) || !(stats.median_domains >= 1.0)) {
    throw ConfigError("mean domains per site must exceed 1");
  }
  const double r = detail::tune_dispersion(stats.mean_domains, stats.median_domains);
  const double m = stats.mean_domains - 1.0;
  // NB(r, p) as a Gamma-Poisson mixture with p = r / (r + m).
  std::gamma_distribution<double> gamma(r, m / r);

  const auto pool_size = static_cast<std::size_t>(
      std::max<double>(16.0, std::ceil(stats.pool_per_site * static_cast<double>(n_sites))));
  std::vector<double> pool_weights(pool_size);
  for (std::size_t j = 0; j < pool_size; ++j) pool_weights[j] = std::pow(static_cast<double>(j + 1), -stats.pool_skew);
  const WeightedSampler pool_sampler(pool_weights);

  const double extra_unique = std::max(
      0.0, (stats.unique_fraction > 0 ? stats.mean_unique / stats.unique_fraction : 1.0) - 1.0);
  const double tol = std::max(stats.tolerance,
                              4.0 * std::sqrt(stats.unique_fraction * (1.0 - stats.unique_fraction) /
                                              static_cast<double>(n_sites)));

  for (int attempt = 0; attempt < std::max(1, stats.max_retries); ++attempt) {
    std::vector<Domain> pool_names;
    std::vector<std::uint32_t> pool_ttl;
    pool_names.reserve(pool_size);
    for (std::size_t j = 0; j < pool_size; ++j) {
      pool_names.emplace_back("s" + std::to_string(j + 1) + ".shared.test");
      std::normal_distribution<double> ln(std::log(stats.shared_ttl_median), stats.shared_ttl_sigma);
      pool_ttl.push_back(static_cast<std::uint32_t>(std::clamp(std::round(std::exp(ln(rng))), 1.0, 604800.0)));
    }
    std::vector<std::uint32_t> pool_usage(pool_size, 0);

    std::vector<SiteProfile> profiles(n_sites);
    std::vector<std::uint32_t> counts(n_sites);
    std::vector<bool> wants_unique(n_sites);
    for (std::uint64_t i = 0; i < n_sites; ++i) {
      std::poisson_distribution<std::uint32_t> pois(std::max(gamma(rng), 1e-9));
      counts[i] = std::min<std::uint32_t>(1 + pois(rng), stats.max_domains);
      wants_unique[i] = bernoulli(rng, stats.unique_fraction);
      profiles[i].site = SiteId{i + 1};
    }

    auto draw_pool = [&](std::unordered_set<std::size_t>& taken, bool only_used) -> std::optional<std::size_t> {
      for (int tries = 0; tries < 64; ++tries) {
        const std::size_t j = pool_sampler(rng);
        if (taken.contains(j)) continue;
        if (only_used && pool_usage[j] == 0) continue;
        return j;
      }
      for (std::size_t j = 0; j < pool_size; ++j) {
        if (!taken.contains(j) && (!only_used || pool_usage[j] > 0)) return j;
      }
      return std::nullopt;
    };

    // Sites with unique evidence first, so the zero-unique sites can hide
    // entirely inside domains that are already shared.
    for (std::uint64_t i = 0; i < n_sites; ++i) {
      if (!wants_unique[i]) continue;
      auto& prof = profiles[i];
      std::uint32_t own = 1;
      if (extra_unique > 0.0) own += std::poisson_distribution<std::uint32_t>(extra_unique)(rng);
      own = std::min(counts[i], own);
      const std::string base = "site" + std::to_string(i + 1) + ".test";
      for (std::uint32_t k = 0; k < own; ++k) {
        std::string name = k == 0 ? "www." + base : "u" + std::to_string(k) + "." + base;
        const std::uint32_t ttl = bernoulli(rng, stats.short_unique_ttl_fraction)
                                      ? detail::log_uniform_ttl(rng, 5.0, 60.0)
                                      : detail::log_uniform_ttl(rng, 61.0, 86400.0);
        prof.records.push_back({Domain{std::move(name)}, ttl});
      }
      std::unordered_set<std::size_t> taken;
      for (std::uint32_t k = own; k < counts[i]; ++k) {
        auto j = draw_pool(taken, false);
        if (!j) break;
        taken.insert(*j);
        ++pool_usage[*j];
        prof.records.push_back({pool_names[*j], pool_ttl[*j]});
      }
    }
    for (std::uint64_t i = 0; i < n_sites; ++i) {
      if (wants_unique[i]) continue;
      auto& prof = profiles[i];
      std::unordered_set<std::size_t> taken;
      for (std::uint32_t k = 0; k < counts[i]; ++k) {
        auto j = draw_pool(taken, true);
        if (!j) break;
        taken.insert(*j);
        prof.records.push_back({pool_names[*j], pool_ttl[*j]});
      }
      // Nothing shared exists yet: fall back to any pool domain.
      while (prof.records.size() < counts[i]) {
        auto j = draw_pool(taken, false);
        if (!j) break;
        taken.insert(*j);
        prof.records.push_back({pool_names[*j], pool_ttl[*j]});
      }
      for (std::size_t j : taken) ++pool_usage[j];
    }

    Corpus c = Corpus::build_index(std::move(profiles));
    if (std::abs(unique_site_fraction(c) - stats.unique_fraction) <= tol) return c;
  }
  throw ConfigError("corpus generation failed: unique-domain fraction " + std::to_string(stats.unique_fraction) +
                    " not reachable within " + std::to_string(stats.max_retries) + " attempts");
}

// ---------------------------------------------------------------------------
// Corpus file: one line per site, `rank<TAB>domain:ttl[,domain:ttl...]`.

inline Corpus parse_corpus(std::istream& in) {
  std::vector<SiteProfile> profiles;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(lineno, "expected rank<TAB>domains");
    SiteProfile p;
    try {
      std::size_t used = 0;
      p.site.rank = std::stoull(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("rank");
    } catch (const std::exception&) {
      throw ParseError(lineno, "bad rank '" + line.substr(0, tab) + "'");
    }
    const std::uint64_t expected = profiles.size() + 1;
    if (p.site.rank != expected) {
      throw ParseError(lineno, (p.site.rank < expected ? "duplicate rank " : "rank gap at ") +
                                   std::to_string(p.site.rank < expected ? p.site.rank : expected));
    }
    std::stringstream fields(line.substr(tab + 1));
    std::string item;
    std::unordered_set<std::string> distinct;
    while (std::getline(fields, item, ',')) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos || colon == 0) throw ParseError(lineno, "expected domain:ttl, got '" + item + "'");
      DomainRecord rec;
      try {
        rec.domain = Domain{item.substr(0, colon)};
      } catch (const DomainError& e) {
        throw ParseError(lineno, e.what());
      }
      try {
        std::size_t used = 0;
        const auto ttl = std::stoll(item.substr(colon + 1), &used);
        if (used != item.size() - colon - 1 || ttl < 0 || ttl > UINT32_MAX) throw std::out_of_range("ttl");
        rec.ttl_raw = static_cast<std::uint32_t>(ttl);
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad ttl in '" + item + "'");
      }
      if (!distinct.insert(rec.domain.str()).second) throw ParseError(lineno, "duplicate domain " + rec.domain.str());
      p.records.push_back(std::move(rec));
    }
    if (p.records.empty()) throw ParseError(lineno, "site without domains");
    profiles.push_back(std::move(p));
  }
  if (profiles.empty()) throw DataError("empty corpus");
  return Corpus::build_index(std::move(profiles));
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& p : corpus.profiles()) {
    out << p.site.rank << '\t';
    for (std::size_t i = 0; i < p.records.size(); ++i) {
      if (i) out << ',';
      out << p.records[i].domain.str() << ':' << p.records[i].ttl_raw;
    }
    out << '\n';
  }
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path);
  return parse_corpus(in);
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file " + path);
  write_corpus(out, corpus);
}

}  // namespace defector
