#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "defector/corpus.hpp"
#include "defector/error.hpp"
#include "defector/metrics.hpp"
#include "defector/parallel.hpp"
#include "defector/random.hpp"
#include "defector/types.hpp"

namespace defector {

/// The domains resolved during one visit.
struct DnsSample {
  Label truth;
  std::vector<Domain> domains;

  friend bool operator==(const DnsSample&, const DnsSample&) = default;
};

/// Maps a sample to the monitored site its unique domains point at.
/// Every unique domain in the sample must agree on one site, and that site
/// must be monitored; otherwise (no unique evidence, a conflict, or evidence
/// for an unmonitored site) the verdict is unmonitored/unknown.
inline Verdict classify_sample(const UniqueIndex& index, const SiteSet& monitored, std::span<const Domain> domains) {
  std::optional<SiteId> owner;
  for (const auto& d : domains) {
    auto it = index.find(d);
    if (it == index.end()) continue;
    if (owner && *owner != it->second) return Verdict::unmonitored();
    owner = it->second;
  }
  if (owner && monitored.contains(*owner)) return Verdict::monitored(*owner);
  return Verdict::unmonitored();
}

inline Verdict classify_sample(const Corpus& corpus, const SiteSet& monitored, const DnsSample& sample) {
  return classify_sample(corpus.unique_index(), monitored, sample.domains);
}

/// One visit sample per call: the site's domains, each dropped independently
/// with probability `drop_prob` (at least one domain is always kept).
inline DnsSample draw_sample(const SiteProfile& profile, Label truth, double drop_prob, Rng& rng) {
  DnsSample s{truth, {}};
  for (const auto& r : profile.records) {
    if (drop_prob <= 0.0 || !bernoulli(rng, drop_prob)) s.domains.push_back(r.domain);
  }
  if (s.domains.empty()) s.domains.push_back(profile.records[uniform_below(rng, profile.records.size())].domain);
  return s;
}

struct DnsMapCvOptions {
  std::size_t folds = 5;
  std::size_t samples_per_site = 5;
  double drop_prob = 0.0;
  std::size_t workers = 1;
};

struct DnsMapFold {
  Counts counts;
  std::vector<SiteId> test_unmonitored;
  std::vector<SiteId> train_unmonitored;
};

struct DnsMapCvResult {
  Counts total;
  std::vector<DnsMapFold> folds;
};

/// k-fold cross-validation of the DNS-to-site classifier.
///
/// Monitored site samples are split by sample index (sample j tests in fold
/// j % folds). Unmonitored sites, `unmonitored_count` of them drawn from the
/// rest of the corpus, are split by site: a fold tests one sample of each of
/// its held-out sites and trains on every other unmonitored site, so a tested
/// unmonitored site is never seen in training. unmonitored_count = 0 gives the
/// closed world.
inline DnsMapCvResult crossvalidate(const Corpus& corpus, const SiteSet& monitored, std::size_t unmonitored_count,
                                    const DnsMapCvOptions& opt, std::uint64_t seed) {
  if (opt.folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (opt.samples_per_site < opt.folds) {
    throw ConfigError("need at least " + std::to_string(opt.folds) + " samples per monitored site, have " +
                      std::to_string(opt.samples_per_site));
  }
  if (monitored.empty()) throw ConfigError("no monitored sites");
  for (SiteId s : monitored) {
    if (!corpus.contains(s)) throw ConfigError("monitored site " + std::to_string(s.rank) + " not in corpus");
  }
  std::vector<SiteId> others;
  for (const auto& p : corpus.profiles()) {
    if (!monitored.contains(p.site)) others.push_back(p.site);
  }
  if (unmonitored_count > others.size()) {
    throw ConfigError("corpus has only " + std::to_string(others.size()) + " unmonitored sites");
  }
  if (unmonitored_count > 0 && unmonitored_count < opt.folds) {
    throw ConfigError("need at least one unmonitored site per fold");
  }
  Rng pick{derive_seed(seed, {0})};
  std::shuffle(others.begin(), others.end(), pick);
  others.resize(unmonitored_count);

  // samples[site][j]
  auto sample_site = [&](SiteId s, std::uint64_t stream, Label truth) {
    Rng rng{derive_seed(seed, {1, stream})};
    std::vector<DnsSample> v;
    for (std::size_t j = 0; j < opt.samples_per_site; ++j) v.push_back(draw_sample(corpus.profile(s), truth, opt.drop_prob, rng));
    return v;
  };
  std::vector<SiteId> mon(monitored.begin(), monitored.end());
  std::vector<std::vector<DnsSample>> mon_samples, unmon_samples;
  for (SiteId s : mon) mon_samples.push_back(sample_site(s, s.rank, Verdict::monitored(s)));
  for (SiteId s : others) unmon_samples.push_back(sample_site(s, s.rank, Verdict::unmonitored()));

  auto union_profile = [](SiteId s, const std::vector<DnsSample>& samples, auto keep) {
    SiteProfile p{s, {}};
    std::set<Domain> seen;
    for (std::size_t j = 0; j < samples.size(); ++j) {
      if (!keep(j)) continue;
      for (const auto& d : samples[j].domains) {
        if (seen.insert(d).second) p.records.push_back({d, 0});
      }
    }
    return p;
  };

  DnsMapCvResult result;
  result.folds.resize(opt.folds);
  parallel_for(opt.folds, opt.workers, [&](std::size_t f) {
    auto& fold = result.folds[f];
    std::vector<SiteProfile> training;
    for (std::size_t i = 0; i < mon.size(); ++i) {
      auto p = union_profile(mon[i], mon_samples[i], [&](std::size_t j) { return j % opt.folds != f; });
      if (!p.records.empty()) training.push_back(std::move(p));
    }
    for (std::size_t i = 0; i < others.size(); ++i) {
      if (i % opt.folds == f) {
        fold.test_unmonitored.push_back(others[i]);
      } else {
        fold.train_unmonitored.push_back(others[i]);
        training.push_back(union_profile(others[i], unmon_samples[i], [](std::size_t) { return true; }));
      }
    }
    const UniqueIndex index = build_unique_index(training);
    for (std::size_t i = 0; i < mon.size(); ++i) {
      for (std::size_t j = f; j < opt.samples_per_site; j += opt.folds) {
        const auto& s = mon_samples[i][j];
        fold.counts.tally(s.truth, classify_sample(index, monitored, s.domains));
      }
    }
    for (std::size_t i = f; i < others.size(); i += opt.folds) {
      const auto& s = unmon_samples[i][f % opt.samples_per_site];
      fold.counts.tally(s.truth, classify_sample(index, monitored, s.domains));
    }
  });
  for (const auto& f : result.folds) result.total += f.counts;
  return result;
}

// ---------------------------------------------------------------------------
// Sample file: CSV `label,domain1;domain2;...`, label = rank or `unmonitored`.

inline std::vector<DnsSample> parse_samples(std::istream& in) {
  std::vector<DnsSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(lineno, "expected label,domains");
    DnsSample s;
    const std::string label = line.substr(0, comma);
    if (label != "unmonitored") {
      try {
        std::size_t used = 0;
        const auto rank = std::stoull(label, &used);
        if (used != label.size() || rank == 0) throw std::invalid_argument("label");
        s.truth = Verdict::monitored(SiteId{rank});
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad label '" + label + "'");
      }
    }
    std::stringstream ds(line.substr(comma + 1));
    std::string d;
    while (std::getline(ds, d, ';')) {
      try {
        s.domains.emplace_back(d);
      } catch (const DomainError& e) {
        throw ParseError(lineno, e.what());
      }
    }
    if (s.domains.empty()) throw ParseError(lineno, "sample without domains");
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_samples(std::ostream& out, std::span<const DnsSample> samples) {
  for (const auto& s : samples) {
    if (s.truth.is_monitored()) {
      out << s.truth.code();
    } else {
      out << "unmonitored";
    }
    out << ',';
    for (std::size_t i = 0; i < s.domains.size(); ++i) out << (i ? ";" : "") << s.domains[i].str();
    out << '\n';
  }
}

}  // namespace defector
