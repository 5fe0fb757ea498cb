#pragma once

#include <arpa/inet.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defector/csv.hpp"
#include "defector/error.hpp"
#include "defector/types.hpp"

namespace defector {

// ---------------------------------------------------------------------------
// Addresses

struct IpAddress {
  bool v6 = false;
  std::array<std::uint8_t, 16> bytes{};  // IPv4 uses the first 4

  std::size_t bits() const noexcept { return v6 ? 128 : 32; }
  bool bit(std::size_t i) const noexcept { return (bytes[i / 8] >> (7 - i % 8)) & 1u; }

  static std::optional<IpAddress> parse(const std::string& s) {
    IpAddress a;
    if (s.find(':') != std::string::npos) {
      a.v6 = true;
      if (inet_pton(AF_INET6, s.c_str(), a.bytes.data()) != 1) return std::nullopt;
    } else if (inet_pton(AF_INET, s.c_str(), a.bytes.data()) != 1) {
      return std::nullopt;
    }
    return a;
  }

  friend bool operator==(const IpAddress&, const IpAddress&) = default;
  friend auto operator<=>(const IpAddress&, const IpAddress&) = default;
};

inline IpAddress parse_ip(const std::string& s) {
  auto a = IpAddress::parse(s);
  if (!a) throw ParseError(0, "malformed address '" + s + "'");
  return *a;
}

struct Prefix {
  IpAddress base;
  std::size_t length = 0;

  /// "a.b.c.d/len" or "v6/len"; host bits are cleared.
  static Prefix parse(const std::string& s, std::size_t line = 0) {
    const auto slash = s.find('/');
    if (slash == std::string::npos) throw ParseError(line, "prefix without length '" + s + "'");
    auto a = IpAddress::parse(s.substr(0, slash));
    if (!a) throw ParseError(line, "malformed prefix '" + s + "'");
    const auto len = csv::parse_int<std::size_t>(std::string_view(s).substr(slash + 1), line, "prefix length");
    if (len > a->bits()) throw ParseError(line, "prefix length out of range in '" + s + "'");
    Prefix p{*a, len};
    for (std::size_t i = len; i < p.base.bits(); ++i) p.base.bytes[i / 8] &= static_cast<std::uint8_t>(~(1u << (7 - i % 8)));
    return p;
  }

  bool contains(const IpAddress& ip) const noexcept {
    if (ip.v6 != base.v6) return false;
    for (std::size_t i = 0; i < length; ++i) {
      if (ip.bit(i) != base.bit(i)) return false;
    }
    return true;
  }
};

/// Private, loopback, link-local, shared (CGNAT), multicast and reserved
/// space. Hops in these ranges carry no public routing information.
inline bool is_private(const IpAddress& ip) {
  static const std::vector<Prefix> ranges = [] {
    std::vector<Prefix> v;
    for (const char* p : {"0.0.0.0/8", "10.0.0.0/8", "100.64.0.0/10", "127.0.0.0/8", "169.254.0.0/16",
                          "172.16.0.0/12", "192.168.0.0/16", "224.0.0.0/4", "240.0.0.0/4", "::/128", "::1/128",
                          "fc00::/7", "fe80::/10", "ff00::/8"}) {
      v.push_back(Prefix::parse(p));
    }
    return v;
  }();
  return std::any_of(ranges.begin(), ranges.end(), [&](const Prefix& p) { return p.contains(ip); });
}

// ---------------------------------------------------------------------------
// Routing table

/// Longest-prefix match over IPv4 and IPv6 prefixes (one binary trie each).
class RoutingTable {
 public:
  RoutingTable() { clear(); }

  void insert(const Prefix& p, Asn asn) {
    if (asn == 0) throw DataError("ASN 0 is not a valid origin");
    auto& trie = p.base.v6 ? v6_ : v4_;
    std::int32_t node = 0;
    for (std::size_t i = 0; i < p.length; ++i) {
      const auto b = p.base.bit(i);
      if (trie[node].child[b] < 0) {
        trie[node].child[b] = static_cast<std::int32_t>(trie.size());
        trie.push_back({});
      }
      node = trie[node].child[b];
    }
    if (trie[node].asn) throw DataError("duplicate prefix " + describe(p));
    trie[node].asn = asn;
    ++size_;
  }

  std::optional<Asn> lookup(const IpAddress& ip) const {
    const auto& trie = ip.v6 ? v6_ : v4_;
    std::optional<Asn> best = trie[0].asn;
    std::int32_t node = 0;
    for (std::size_t i = 0; i < ip.bits(); ++i) {
      node = trie[node].child[ip.bit(i)];
      if (node < 0) break;
      if (trie[node].asn) best = trie[node].asn;
    }
    return best;
  }

  std::size_t size() const noexcept { return size_; }

  void clear() {
    v4_.assign(1, {});
    v6_.assign(1, {});
    size_ = 0;
  }

 private:
  struct Node {
    std::array<std::int32_t, 2> child{-1, -1};
    std::optional<Asn> asn;
  };

  static std::string describe(const Prefix& p) {
    char buf[INET6_ADDRSTRLEN];
    inet_ntop(p.base.v6 ? AF_INET6 : AF_INET, p.base.bytes.data(), buf, sizeof buf);
    return std::string(buf) + "/" + std::to_string(p.length);
  }

  std::vector<Node> v4_, v6_;
  std::size_t size_ = 0;
};

inline std::optional<Asn> lpm(const RoutingTable& table, const std::string& ip) {
  return table.lookup(parse_ip(ip));
}

/// Routing snapshot: one `prefix<TAB>asn` per line; blank lines and `#`
/// comments are skipped.
inline RoutingTable parse_routing_table(std::istream& in) {
  RoutingTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = csv::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto sep = s.find_first_of(" \t");
    if (sep == std::string::npos) throw ParseError(lineno, "expected prefix<TAB>asn");
    const auto prefix = Prefix::parse(s.substr(0, sep), lineno);
    const auto asn = csv::parse_int<Asn>(csv::trim(s.substr(sep + 1)), lineno, "asn");
    try {
      t.insert(prefix, asn);
    } catch (const ParseError&) {
      throw;
    } catch (const DataError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return t;
}

inline RoutingTable load_routing_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open routing table " + path);
  return parse_routing_table(in);
}

// ---------------------------------------------------------------------------
// Traceroutes

enum class TraceRole { Web, Dns };

struct Hop {
  std::uint32_t ttl = 0;
  std::optional<IpAddress> ip;  // nullopt: no reply
};

struct Traceroute {
  std::string site;
  IpAddress target;
  std::string proto;
  TraceRole role = TraceRole::Web;
  std::vector<Hop> hops;
};

inline Traceroute traceroute_from_json(const nlohmann::json& j, std::size_t line) {
  try {
    Traceroute t;
    t.site = Domain(j.at("site").get<std::string>()).str();
    auto target = IpAddress::parse(j.at("target").get<std::string>());
    if (!target) throw ParseError(line, "malformed target address");
    t.target = *target;
    t.proto = j.at("proto").get<std::string>();
    if (t.proto != "tcp" && t.proto != "udp") throw ParseError(line, "proto must be tcp or udp");
    const auto role = j.at("role").get<std::string>();
    if (role == "web") {
      t.role = TraceRole::Web;
    } else if (role == "dns") {
      t.role = TraceRole::Dns;
    } else {
      throw ParseError(line, "role must be web or dns");
    }
    for (const auto& h : j.at("hops")) {
      Hop hop;
      hop.ttl = h.at("ttl").get<std::uint32_t>();
      if (!t.hops.empty() && hop.ttl <= t.hops.back().ttl) throw ParseError(line, "hop ttl must strictly increase");
      if (h.contains("ip") && !h.at("ip").is_null()) {
        const auto s = h.at("ip").get<std::string>();
        auto ip = IpAddress::parse(s);
        if (!ip) throw ParseError(line, "malformed hop address '" + s + "'");
        hop.ip = *ip;
      }
      t.hops.push_back(hop);
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line, e.what());
  } catch (const ParseError&) {
    throw;
  } catch (const DataError& e) {
    throw ParseError(line, e.what());
  }
}

inline std::vector<Traceroute> parse_traceroutes(std::istream& in) {
  std::vector<Traceroute> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    out.push_back(traceroute_from_json(j, lineno));
  }
  return out;
}

inline std::vector<Traceroute> load_traceroutes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open traceroute file " + path);
  return parse_traceroutes(in);
}

/// ASes traversed by a set of traceroutes. Silent hops, private addresses
/// and unrouted addresses contribute nothing.
inline AsSet as_set(std::span<const Traceroute> traces, const RoutingTable& table) {
  AsSet out;
  for (const auto& t : traces) {
    for (const auto& h : t.hops) {
      if (!h.ip || is_private(*h.ip)) continue;
      if (auto asn = table.lookup(*h.ip)) out.insert(*asn);
    }
  }
  return out;
}

/// Share of all traversed ASes that carry only DNS traffic: |D \ W| / |D u W|.
inline double lambda(const AsSet& dns, const AsSet& web) {
  std::size_t only_dns = 0;
  for (Asn a : dns) only_dns += !web.contains(a);
  const std::size_t all = only_dns + web.size();
  if (all == 0) throw DomainError("exposure undefined when both AS sets are empty");
  return static_cast<double>(only_dns) / static_cast<double>(all);
}

// ---------------------------------------------------------------------------
// Report

struct ExposureResult {
  std::string site;
  AsSet d_set;
  AsSet w_set;
  double lambda = 0.0;
};

struct SkippedSite {
  std::string site;
  std::string reason;
};

struct CdfPoint {
  double lambda = 0.0;
  double fraction = 0.0;  // share of sites with exposure <= lambda
};

struct ExposureReport {
  std::vector<ExposureResult> results;
  std::vector<SkippedSite> skipped;
  std::vector<CdfPoint> cdf;
  std::size_t unique_dns_ases = 0;
  std::size_t unique_web_ases = 0;
  std::size_t ignored_dns_traces = 0;  // DNS traces not aimed at a listed authoritative server
};

/// Authoritative-server addresses per site: `site<TAB>ip[,ip...]`.
using Delegations = std::map<std::string, std::vector<IpAddress>>;

inline Delegations parse_delegations(std::istream& in) {
  Delegations out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = csv::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto sep = s.find_first_of(" \t");
    if (sep == std::string::npos) throw ParseError(lineno, "expected site<TAB>addresses");
    std::string site;
    try {
      site = Domain(s.substr(0, sep)).str();
    } catch (const DomainError& e) {
      throw ParseError(lineno, e.what());
    }
    auto& ips = out[site];
    for (const auto& a : csv::split(csv::trim(s.substr(sep + 1)), ',')) {
      auto ip = IpAddress::parse(csv::trim(a));
      if (!ip) throw ParseError(lineno, "malformed address '" + a + "'");
      ips.push_back(*ip);
    }
  }
  return out;
}

inline Delegations load_delegations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open delegation file " + path);
  return parse_delegations(in);
}

/// Per-site exposure. `sites` empty means every site named in `traces`, in
/// sorted order. With `delegations`, a site's DNS traceroutes count only when
/// aimed at one of its listed authoritative servers.
inline ExposureReport exposure_report(std::span<const std::string> sites, std::span<const Traceroute> traces,
                                      const RoutingTable& table, const Delegations* delegations = nullptr) {
  std::map<std::string, std::pair<std::vector<Traceroute>, std::vector<Traceroute>>> by_site;
  ExposureReport rep;
  for (const auto& t : traces) {
    auto& [web, dns] = by_site[t.site];
    if (t.role == TraceRole::Web) {
      web.push_back(t);
      continue;
    }
    if (delegations) {
      auto it = delegations->find(t.site);
      if (it == delegations->end() || std::find(it->second.begin(), it->second.end(), t.target) == it->second.end()) {
        ++rep.ignored_dns_traces;
        continue;
      }
    }
    dns.push_back(t);
  }
  std::vector<std::string> order(sites.begin(), sites.end());
  if (order.empty()) {
    for (const auto& [s, _] : by_site) order.push_back(s);
  }
  AsSet all_dns, all_web;
  for (const auto& site : order) {
    auto it = by_site.find(site);
    if (it == by_site.end()) {
      rep.skipped.push_back({site, "no traceroutes"});
      continue;
    }
    const auto& [web, dns] = it->second;
    if (web.empty()) {
      rep.skipped.push_back({site, "no web traceroute"});
      continue;
    }
    if (dns.empty()) {
      rep.skipped.push_back({site, "no dns traceroute"});
      continue;
    }
    ExposureResult r{site, as_set(dns, table), as_set(web, table), 0.0};
    if (r.d_set.empty() && r.w_set.empty()) {
      rep.skipped.push_back({site, "no routable hops"});
      continue;
    }
    r.lambda = lambda(r.d_set, r.w_set);
    all_dns.insert(r.d_set.begin(), r.d_set.end());
    all_web.insert(r.w_set.begin(), r.w_set.end());
    rep.results.push_back(std::move(r));
  }
  rep.unique_dns_ases = all_dns.size();
  rep.unique_web_ases = all_web.size();
  std::vector<double> ls;
  for (const auto& r : rep.results) ls.push_back(r.lambda);
  std::sort(ls.begin(), ls.end());
  for (std::size_t i = 0; i < ls.size(); ++i) {
    if (i + 1 < ls.size() && ls[i + 1] == ls[i]) continue;
    rep.cdf.push_back({ls[i], static_cast<double>(i + 1) / static_cast<double>(ls.size())});
  }
  return rep;
}

inline std::string join_asns(const AsSet& s) {
  std::string out;
  for (Asn a : s) {
    if (!out.empty()) out += ';';
    out += std::to_string(a);
  }
  return out;
}

inline void write_exposure_csv(std::ostream& out, const ExposureReport& rep) {
  out << "site,lambda,dns_ases,web_ases\n";
  for (const auto& r : rep.results) {
    out << r.site << ',' << csv::num(r.lambda) << ',' << join_asns(r.d_set) << ',' << join_asns(r.w_set) << '\n';
  }
}

inline void write_exposure_cdf(std::ostream& out, const ExposureReport& rep) {
  out << "lambda,cum_fraction\n";
  for (const auto& p : rep.cdf) out << csv::num(p.lambda) << ',' << csv::num(p.fraction) << '\n';
}

}  // namespace defector
