#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <string>

#include "defector/error.hpp"

namespace defector {

/// 1-based popularity rank of a website. Rank 1 is the most popular site.
struct SiteId {
  std::uint64_t rank = 1;

  constexpr SiteId() = default;
  constexpr explicit SiteId(std::uint64_t r) : rank(r) {}

  friend constexpr auto operator<=>(const SiteId&, const SiteId&) = default;
};

inline std::ostream& operator<<(std::ostream& os, SiteId s) { return os << "site#" << s.rank; }

using SiteSet = std::set<SiteId>;

/// Outcome of a classifier: a monitored site, or "unmonitored / unknown".
class Verdict {
 public:
  constexpr Verdict() = default;

  static constexpr Verdict unmonitored() { return Verdict{}; }
  static constexpr Verdict monitored(SiteId s) { return Verdict{s}; }

  constexpr bool is_monitored() const { return site_.has_value(); }
  constexpr const std::optional<SiteId>& site() const { return site_; }

  /// Rank of the site, 0 for unmonitored. Used for CSV output.
  constexpr std::uint64_t code() const { return site_ ? site_->rank : 0; }

  friend constexpr bool operator==(const Verdict&, const Verdict&) = default;

 private:
  constexpr explicit Verdict(SiteId s) : site_(s) {}
  std::optional<SiteId> site_;
};

inline std::ostream& operator<<(std::ostream& os, const Verdict& v) {
  if (v.is_monitored()) return os << "Monitored(" << v.site()->rank << ")";
  return os << "Unmonitored";
}

/// Ground truth of a trace or sample: monitored site or unmonitored.
/// Shares its representation with Verdict (nullopt = unmonitored).
using Label = Verdict;

/// Autonomous system number.
using Asn = std::uint32_t;
using AsSet = std::set<Asn>;

/// Lowercase fully-qualified domain name.
class Domain {
 public:
  Domain() = default;
  explicit Domain(std::string name) : name_(std::move(name)) { validate(name_); }

  const std::string& str() const noexcept { return name_; }

  friend auto operator<=>(const Domain&, const Domain&) = default;

  static void validate(const std::string& name) {
    if (name.empty()) throw DomainError("empty domain name");
    if (name.front() == '.' || name.back() == '.' || name.find("..") != std::string::npos) {
      throw DomainError("malformed domain name '" + name + "'");
    }
    for (char c : name) {
      if (c >= 'A' && c <= 'Z') throw DomainError("domain name must be lowercase: '" + name + "'");
      if (c == ',' || c == ':' || c == ';' || c == '\t' || c == ' ' || c == '\n') {
        throw DomainError("invalid character in domain name '" + name + "'");
      }
    }
  }

 private:
  std::string name_;
};

inline std::ostream& operator<<(std::ostream& os, const Domain& d) { return os << d.str(); }

}  // namespace defector

template <>
struct std::hash<defector::SiteId> {
  std::size_t operator()(defector::SiteId s) const noexcept { return std::hash<std::uint64_t>{}(s.rank); }
};

template <>
struct std::hash<defector::Domain> {
  std::size_t operator()(const defector::Domain& d) const noexcept { return std::hash<std::string>{}(d.str()); }
};
