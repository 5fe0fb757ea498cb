#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <queue>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "defector/corpus.hpp"
#include "defector/error.hpp"
#include "defector/types.hpp"

namespace defector {

/// Seconds since the start of a simulation.
using Timestamp = double;
using ExitId = std::uint32_t;

enum class TtlMode {
  Clip,  // clamp into [min_ttl, max_ttl]
  Bug,   // every response cached for exactly min_ttl
};

struct TtlPolicy {
  TtlMode mode = TtlMode::Clip;
  std::uint32_t min_ttl = 60;
  std::uint32_t max_ttl = 1800;

  void validate() const {
    if (min_ttl == 0 || min_ttl > max_ttl) throw ConfigError("ttl policy needs 0 < min_ttl <= max_ttl");
  }

  /// Largest lifetime an entry can have under this policy.
  std::uint32_t max_lifetime() const { return mode == TtlMode::Bug ? min_ttl : max_ttl; }
};

inline std::uint32_t clip_ttl(const TtlPolicy& policy, std::uint32_t ttl_raw) {
  if (policy.mode == TtlMode::Bug) return policy.min_ttl;
  return std::clamp(ttl_raw, policy.min_ttl, policy.max_ttl);
}

enum class CacheOutcome { Hit, Miss };

/// One exit relay's DNS cache. An entry inserted at t with lifetime L answers
/// lookups for t <= now < t + L. Hits do not refresh the expiry.
class ExitCache {
 public:
  explicit ExitCache(ExitId exit_id = 0) : exit_id_(exit_id) {}

  ExitId exit_id() const noexcept { return exit_id_; }
  Timestamp clock() const noexcept { return clock_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Drops every entry that expired at or before t.
  void advance(Timestamp t) {
    if (t < clock_) {
      throw ContractError("cache clock regression: " + std::to_string(t) + " < " + std::to_string(clock_));
    }
    clock_ = t;
    while (!expiry_queue_.empty() && expiry_queue_.top().first <= t) {
      auto [expiry, domain] = expiry_queue_.top();
      expiry_queue_.pop();
      auto it = entries_.find(domain);
      if (it != entries_.end() && it->second == expiry) entries_.erase(it);
    }
  }

  CacheOutcome lookup(const TtlPolicy& policy, Timestamp t, const DomainRecord& record) {
    advance(t);
    if (entries_.contains(record.domain)) return CacheOutcome::Hit;
    const Timestamp expiry = t + clip_ttl(policy, record.ttl_raw);
    entries_.emplace(record.domain, expiry);
    expiry_queue_.emplace(expiry, record.domain);
    return CacheOutcome::Miss;
  }

  /// Expiry of a cached domain, if present.
  std::optional<Timestamp> expiry_of(const Domain& d) const {
    auto it = entries_.find(d);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

 private:
  using QueueItem = std::pair<Timestamp, Domain>;

  ExitId exit_id_;
  Timestamp clock_ = 0.0;
  std::unordered_map<Domain, Timestamp> entries_;
  std::priority_queue<QueueItem, std::vector<QueueItem>, std::greater<>> expiry_queue_;
};

/// A DNS request leaving an exit relay.
struct DnsEvent {
  Timestamp time = 0.0;
  Domain domain;
  ExitId exit_id = 0;

  friend bool operator==(const DnsEvent&, const DnsEvent&) = default;
};

/// The attacker's record of DNS requests seen during the last `length` seconds.
class DnsWindow {
 public:
  explicit DnsWindow(double length) : length_(length) {
    if (!(length > 0)) throw ConfigError("window length must be positive");
  }

  double length() const noexcept { return length_; }
  const std::deque<DnsEvent>& events() const noexcept { return events_; }

  /// Appends an event (timestamps must not decrease) and evicts everything
  /// older than event.time - length.
  void observe(DnsEvent e) {
    if (!events_.empty() && e.time < events_.back().time) {
      throw ContractError("window events must arrive in time order");
    }
    const Timestamp now = e.time;
    events_.push_back(std::move(e));
    evict(now);
  }

  void evict(Timestamp now) {
    while (!events_.empty() && events_.front().time < now - length_) events_.pop_front();
  }

  /// Distinct domains in [now - length, now].
  std::unordered_set<Domain> domains_at(Timestamp now) const {
    std::unordered_set<Domain> out;
    for (const auto& e : events_) {
      if (e.time >= now - length_ && e.time <= now) out.insert(e.domain);
    }
    return out;
  }

  /// Merges another shard's window; the result stays time-ordered.
  void merge(const DnsWindow& other) {
    std::deque<DnsEvent> merged;
    std::merge(events_.begin(), events_.end(), other.events_.begin(), other.events_.end(), std::back_inserter(merged),
               [](const DnsEvent& a, const DnsEvent& b) { return a.time < b.time; });
    events_ = std::move(merged);
  }

 private:
  double length_;
  std::deque<DnsEvent> events_;
};

/// Sites the attacker can place in the window at `now`: any site with a unique
/// domain present, plus any site whose complete domain set is present.
inline SiteSet visible_sites(const DnsWindow& window, const Corpus& corpus, Timestamp now) {
  const auto present = window.domains_at(now);
  SiteSet out;
  std::unordered_set<SiteId> candidates;
  for (const auto& d : present) {
    if (auto it = corpus.unique_index().find(d); it != corpus.unique_index().end()) {
      out.insert(it->second);
      continue;
    }
    for (SiteId s : corpus.sites_of(d)) candidates.insert(s);
  }
  for (SiteId s : candidates) {
    if (out.contains(s)) continue;
    const auto& recs = corpus.profile(s).records;
    if (std::all_of(recs.begin(), recs.end(), [&](const DomainRecord& r) { return present.contains(r.domain); })) {
      out.insert(s);
    }
  }
  return out;
}

}  // namespace defector
