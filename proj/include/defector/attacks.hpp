#pragma once

#include <string>

#include "defector/error.hpp"
#include "defector/types.hpp"
#include "defector/wfknn.hpp"

namespace defector {

enum class AttackKind { Wf, Ctw, Hp };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Wf: return "wf";
    case AttackKind::Ctw: return "ctw";
    case AttackKind::Hp: return "hp";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "wf") return AttackKind::Wf;
  if (s == "ctw") return AttackKind::Ctw;
  if (s == "hp") return AttackKind::Hp;
  throw ConfigError("unknown attack '" + s + "' (expected wf, ctw or hp)");
}

/// "Close the world": kNN restricted to monitored classes seen in the DNS
/// data, while every unmonitored training point stays eligible.
inline Verdict attack_ctw(const TrainingSet& train, const Weights& w, const KnnConfig& cfg,
                          std::span<const double> test, const SiteSet& observed_sites) {
  return classify(train, w, cfg, test, &observed_sites);
}

/// "High precision": keep a fingerprinting verdict only when the DNS data
/// shows a visit to the same site.
inline Verdict attack_hp(const Verdict& wf_verdict, const SiteSet& observed_sites) {
  if (wf_verdict.is_monitored() && observed_sites.contains(*wf_verdict.site())) return wf_verdict;
  return Verdict::unmonitored();
}

}  // namespace defector
