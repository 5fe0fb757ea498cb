#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "defector/csv.hpp"
#include "defector/error.hpp"
#include "defector/parallel.hpp"
#include "defector/random.hpp"
#include "defector/types.hpp"

namespace defector {

struct Relay {
  std::string id;
  double bandwidth = 0.0;
  bool guard = false;
  bool exit = false;
  Asn asn = 0;
  std::vector<std::string> resolver_ips;  // empty: resolver unknown
};

inline Relay relay_from_json(const nlohmann::json& j, std::size_t line) {
  try {
    Relay r;
    r.id = j.at("id").get<std::string>();
    r.bandwidth = j.at("bw").get<double>();
    if (!(r.bandwidth >= 0.0)) throw ParseError(line, "negative bandwidth for relay " + r.id);
    r.guard = j.value("guard", false);
    r.exit = j.value("exit", false);
    r.asn = j.at("asn").get<Asn>();
    if (r.asn == 0) throw ParseError(line, "relay " + r.id + " has ASN 0");
    if (j.contains("resolver_ip")) {
      const auto& v = j.at("resolver_ip");
      if (v.is_string()) {
        r.resolver_ips.push_back(v.get<std::string>());
      } else if (v.is_array()) {
        for (const auto& x : v) r.resolver_ips.push_back(x.get<std::string>());
      } else if (!v.is_null()) {
        throw ParseError(line, "resolver_ip must be a string, an array or null");
      }
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line, e.what());
  }
}

inline std::vector<Relay> parse_relays(std::istream& in) {
  std::vector<Relay> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    try {
      out.push_back(relay_from_json(nlohmann::json::parse(line), lineno));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

inline std::vector<Relay> load_relays(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open relay file " + path);
  return parse_relays(in);
}

// ---------------------------------------------------------------------------
// Relay selection

/// Bandwidth-weighted choice among relays with a given flag.
class RelaySelector {
 public:
  RelaySelector(std::span<const Relay> relays, bool guards) {
    std::vector<double> w;
    for (std::size_t i = 0; i < relays.size(); ++i) {
      if ((guards ? relays[i].guard : relays[i].exit) && relays[i].bandwidth > 0.0) {
        index_.push_back(i);
        w.push_back(relays[i].bandwidth);
      }
    }
    if (index_.empty()) throw ConfigError(std::string("no eligible ") + (guards ? "guard" : "exit") + " relay");
    sampler_ = WeightedSampler(w);
  }

  std::size_t operator()(Rng& rng) const { return index_[sampler_(rng)]; }

 private:
  std::vector<std::size_t> index_;
  WeightedSampler sampler_;
};

inline const Relay& select_guard(std::span<const Relay> relays, Rng& rng) {
  return relays[RelaySelector(relays, true)(rng)];
}

inline const Relay& select_exit(std::span<const Relay> relays, Rng& rng) {
  return relays[RelaySelector(relays, false)(rng)];
}

// ---------------------------------------------------------------------------
// Schedule

inline constexpr std::uint32_t kSecondsPerDay = 86'400;
inline constexpr std::uint32_t kCircuitSeconds = 600;

struct ScheduleEntry {
  std::uint32_t time_of_day = 0;  // seconds after local midnight
  std::vector<std::string> domains;
};

struct UsageSchedule {
  std::vector<ScheduleEntry> entries;
  double tz_offset_hours = -5.0;  // local time of the schedule (recorded, not applied)

  std::size_t visits_per_day() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.domains.size();
    return n;
  }

  static UsageSchedule standard() {
    UsageSchedule s;
    const std::vector<std::string> evening{"www.google.com", "www.startpage.com", "www.ixquick.com"};
    s.entries = {
        {9 * 3600, {"mail.google.com", "www.twitter.com"}},
        {12 * 3600, {"calendar.google.com", "docs.google.com"}},
        {15 * 3600, {"www.facebook.com", "www.instagram.com"}},
        {18 * 3600, evening},
        {18 * 3600 + 20 * 60, evening},
    };
    return s;
  }

  void validate() const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].time_of_day >= kSecondsPerDay) throw ConfigError("schedule time beyond one day");
      if (i && entries[i].time_of_day < entries[i - 1].time_of_day) throw ConfigError("schedule must be time ordered");
    }
  }
};

// ---------------------------------------------------------------------------
// AS paths

/// AS sets keyed by (source ASN, destination key). Rows with the same key
/// are merged.
class PathMap {
 public:
  void add(Asn src, const std::string& key, const AsSet& path) { map_[{src, key}].insert(path.begin(), path.end()); }

  const AsSet* find(Asn src, const std::string& key) const {
    auto it = map_.find({src, key});
    return it == map_.end() ? nullptr : &it->second;
  }

  std::size_t size() const noexcept { return map_.size(); }

 private:
  std::map<std::pair<Asn, std::string>, AsSet> map_;
};

/// CSV `src_asn,dst_key,asn_list` with `;` between ASNs; an optional header
/// row starting with `src_asn` is skipped.
inline PathMap parse_path_map(std::istream& in) {
  PathMap pm;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = csv::trim(line);
    if (s.empty() || s.front() == '#') continue;
    if (lineno == 1 && s.rfind("src_asn", 0) == 0) continue;
    const auto f = csv::split(s, ',');
    if (f.size() != 3) throw ParseError(lineno, "expected src_asn,dst_key,asn_list");
    const auto src = csv::parse_int<Asn>(csv::trim(f[0]), lineno, "src_asn");
    const std::string key = csv::trim(f[1]);
    if (key.empty()) throw ParseError(lineno, "empty dst_key");
    AsSet path;
    for (const auto& a : csv::split(csv::trim(f[2]), ';')) {
      const auto t = csv::trim(a);
      if (t.empty()) continue;
      const auto asn = csv::parse_int<Asn>(t, lineno, "asn");
      if (asn == 0) throw ParseError(lineno, "ASN 0 in path");
      path.insert(asn);
    }
    pm.add(src, key, path);
  }
  return pm;
}

inline PathMap load_path_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open path map " + path);
  return parse_path_map(in);
}

/// Name-server addresses per destination domain: `domain<TAB>ip[,ip...]`.
using NsTargets = std::map<std::string, std::vector<std::string>>;

inline NsTargets parse_ns_targets(std::istream& in) {
  NsTargets out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = csv::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto sep = s.find_first_of(" \t");
    if (sep == std::string::npos) throw ParseError(lineno, "expected domain<TAB>addresses");
    auto& v = out[s.substr(0, sep)];
    for (const auto& a : csv::split(csv::trim(s.substr(sep + 1)), ',')) {
      if (!csv::trim(a).empty()) v.push_back(csv::trim(a));
    }
  }
  return out;
}

inline NsTargets load_ns_targets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open delegation file " + path);
  return parse_ns_targets(in);
}

// ---------------------------------------------------------------------------
// Scenarios

enum class DnsScenario { IspDns, GoogleDns, LocalDns, StatusQuo };

inline const char* to_string(DnsScenario s) {
  switch (s) {
    case DnsScenario::IspDns: return "isp";
    case DnsScenario::GoogleDns: return "google";
    case DnsScenario::LocalDns: return "local";
    case DnsScenario::StatusQuo: return "statusquo";
  }
  return "?";
}

inline DnsScenario parse_scenario(const std::string& s) {
  if (s == "isp") return DnsScenario::IspDns;
  if (s == "google") return DnsScenario::GoogleDns;
  if (s == "local") return DnsScenario::LocalDns;
  if (s == "statusquo") return DnsScenario::StatusQuo;
  throw ConfigError("unknown scenario '" + s + "' (isp, google, local, statusquo)");
}

inline const std::string kGoogleResolver = "8.8.8.8";

struct SimWorld {
  std::vector<Relay> relays;
  UsageSchedule schedule = UsageSchedule::standard();
  PathMap ingress;  // (client ASN, guard id) -> ASes
  PathMap egress;   // (exit ASN, resolver address | name server address | domain) -> ASes
  NsTargets ns_targets;
  std::vector<Asn> client_asns{7922, 42610, 3320, 3215, 2856};
};

struct ClientMetrics {
  std::size_t client_idx = 0;
  Asn client_asn = 0;
  std::size_t compromised = 0;
  std::size_t opportunities = 0;
  double time_to_first = 0.0;

  double fraction() const {
    return opportunities ? static_cast<double>(compromised) / static_cast<double>(opportunities) : 0.0;
  }
};

struct SimOptions {
  std::size_t clients = 2000;
  std::uint32_t days = 31;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

/// Egress AS sets for one scenario, with the per-relay resolver assignment
/// fixed by the seed.
class EgressModel {
 public:
  EgressModel(const SimWorld& world, DnsScenario scenario, std::uint64_t seed) : world_(world), scenario_(scenario) {
    resolver_.resize(world.relays.size());
    for (std::size_t i = 0; i < world.relays.size(); ++i) {
      const auto& ips = world.relays[i].resolver_ips;
      if (ips.empty()) continue;
      Rng rng{derive_seed(seed, {kResolverStream, i})};
      resolver_[i] = ips[ips.size() == 1 ? 0 : uniform_below(rng, ips.size())];
    }
  }

  /// nullopt when the path data needed for this exit and domain is missing.
  std::optional<AsSet> egress(std::size_t exit_idx, const std::string& domain) const {
    const Relay& exit = world_.relays[exit_idx];
    switch (scenario_) {
      case DnsScenario::IspDns: return AsSet{exit.asn};
      case DnsScenario::GoogleDns: return lookup(exit.asn, kGoogleResolver);
      case DnsScenario::LocalDns: {
        auto it = world_.ns_targets.find(domain);
        if (it == world_.ns_targets.end()) return lookup(exit.asn, domain);
        std::optional<AsSet> out;
        for (const auto& ns : it->second) {
          if (const AsSet* p = world_.egress.find(exit.asn, ns)) {
            if (!out) out.emplace();
            out->insert(p->begin(), p->end());
          }
        }
        return out;
      }
      case DnsScenario::StatusQuo:
        if (resolver_[exit_idx].empty()) return std::nullopt;
        return lookup(exit.asn, resolver_[exit_idx]);
    }
    return std::nullopt;
  }

  static constexpr std::uint64_t kResolverStream = 0x7265736f6c76ULL;

 private:
  std::optional<AsSet> lookup(Asn src, const std::string& key) const {
    if (const AsSet* p = world_.egress.find(src, key)) return *p;
    return std::nullopt;
  }

  const SimWorld& world_;
  DnsScenario scenario_;
  std::vector<std::string> resolver_;
};

inline bool intersects(const AsSet& a, const AsSet& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) {
      ++i;
    } else {
      ++j;
    }
  }
  return false;
}

/// Per-client compromise over the horizon.
///
/// Each client keeps one bandwidth-weighted guard and picks a fresh exit for
/// every ten-minute circuit window it is active in. Every scheduled visit is
/// one DNS resolution; it is compromised when the client-to-guard ASes meet
/// the exit-to-resolver ASes. Missing egress data counts as compromised only
/// when the exit's own AS is on the ingress path. Guard and exit draws do not
/// depend on the scenario, so scenarios are paired under one seed.
inline std::vector<ClientMetrics> run_simulation(const SimWorld& world, DnsScenario scenario, const SimOptions& opt) {
  world.schedule.validate();
  if (world.client_asns.empty()) throw ConfigError("no client ASes");
  if (opt.days == 0) throw ConfigError("horizon must be at least one day");
  const RelaySelector guards(world.relays, true);
  const RelaySelector exits(world.relays, false);
  const EgressModel egress(world, scenario, opt.seed);
  const double cap = static_cast<double>(opt.days) * kSecondsPerDay;

  std::vector<ClientMetrics> out(opt.clients);
  parallel_for(opt.clients, opt.workers, [&](std::size_t c) {
    Rng rng{derive_seed(opt.seed, {c})};
    ClientMetrics m;
    m.client_idx = c;
    m.client_asn = world.client_asns[c % world.client_asns.size()];
    m.time_to_first = cap;
    const Relay& guard = world.relays[guards(rng)];
    const AsSet* ingress = world.ingress.find(m.client_asn, guard.id);
    if (!ingress) {
      throw DataError("no ingress path for client AS " + std::to_string(m.client_asn) + " and guard " + guard.id);
    }
    std::optional<std::uint64_t> window;
    std::size_t exit_idx = 0;
    for (std::uint32_t day = 0; day < opt.days; ++day) {
      for (const auto& e : world.schedule.entries) {
        const std::uint64_t t = std::uint64_t{day} * kSecondsPerDay + e.time_of_day;
        if (window != t / kCircuitSeconds) {
          window = t / kCircuitSeconds;
          exit_idx = exits(rng);
        }
        const Asn exit_asn = world.relays[exit_idx].asn;
        for (const auto& domain : e.domains) {
          ++m.opportunities;
          const auto eg = egress.egress(exit_idx, domain);
          const bool hit = eg ? intersects(*ingress, *eg) : ingress->contains(exit_asn);
          if (hit) {
            if (m.compromised == 0) m.time_to_first = static_cast<double>(t);
            ++m.compromised;
          }
        }
      }
    }
    out[c] = m;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Scenario comparison

/// Linear-interpolation quantile of sorted data.
inline double quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct ScenarioSummary {
  DnsScenario scenario = DnsScenario::IspDns;
  Asn client_asn = 0;
  std::size_t clients = 0;
  std::array<double, 3> fraction{};       // q1, median, q3
  std::array<double, 3> time_to_first{};  // q1, median, q3
};

struct ScenarioRun {
  DnsScenario scenario = DnsScenario::IspDns;
  std::vector<ClientMetrics> clients;
};

inline std::vector<ScenarioSummary> summarize(const ScenarioRun& run) {
  std::map<Asn, std::pair<std::vector<double>, std::vector<double>>> by_as;
  for (const auto& m : run.clients) {
    by_as[m.client_asn].first.push_back(m.fraction());
    by_as[m.client_asn].second.push_back(m.time_to_first);
  }
  std::vector<ScenarioSummary> out;
  for (auto& [asn, v] : by_as) {
    std::sort(v.first.begin(), v.first.end());
    std::sort(v.second.begin(), v.second.end());
    ScenarioSummary s{run.scenario, asn, v.first.size(), {}, {}};
    for (int i = 0; i < 3; ++i) {
      s.fraction[i] = quantile(v.first, 0.25 * (i + 1));
      s.time_to_first[i] = quantile(v.second, 0.25 * (i + 1));
    }
    out.push_back(s);
  }
  return out;
}

/// One simulation per scenario under the same seed.
inline std::vector<ScenarioRun> scenario_compare(const SimWorld& world, std::span<const DnsScenario> scenarios,
                                                 const SimOptions& opt) {
  std::vector<ScenarioRun> out;
  for (DnsScenario s : scenarios) out.push_back({s, run_simulation(world, s, opt)});
  return out;
}

inline void write_client_csv(std::ostream& out, std::span<const ScenarioRun> runs) {
  out << "scenario,client_asn,client_idx,fraction,time_to_first_s\n";
  for (const auto& r : runs) {
    for (const auto& m : r.clients) {
      out << to_string(r.scenario) << ',' << m.client_asn << ',' << m.client_idx << ',' << csv::num(m.fraction())
          << ',' << static_cast<std::uint64_t>(m.time_to_first) << '\n';
    }
  }
}

inline void write_scenario_summary(std::ostream& out, std::span<const ScenarioRun> runs) {
  out << "scenario,client_asn,clients,fraction_q1,fraction_median,fraction_q3,ttf_q1_s,ttf_median_s,ttf_q3_s\n";
  for (const auto& r : runs) {
    for (const auto& s : summarize(r)) {
      out << to_string(s.scenario) << ',' << s.client_asn << ',' << s.clients;
      for (double x : s.fraction) out << ',' << csv::num(x);
      for (double x : s.time_to_first) out << ',' << csv::num(x, 1);
      out << '\n';
    }
  }
}

}  // namespace defector
