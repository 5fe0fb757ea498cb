#pragma once

#include <cstdint>

#include "defector/types.hpp"

namespace defector {

/// Confusion counts for open-world classification.
///
/// A monitored-site verdict naming the wrong site counts as a false positive
/// *and* as a miss (fn) for the trace's true class; `wrong_site` tracks how
/// often that happened, so tp + fp + tn + fn - wrong_site equals the number of
/// tallied traces.
struct Counts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;
  std::uint64_t wrong_site = 0;

  void tally(const Label& truth, const Verdict& verdict) {
    if (truth.is_monitored()) {
      if (verdict == truth) {
        ++tp;
      } else {
        ++fn;
        if (verdict.is_monitored()) {
          ++fp;
          ++wrong_site;
        }
      }
    } else if (verdict.is_monitored()) {
      ++fp;
    } else {
      ++tn;
    }
  }

  std::uint64_t traces() const { return tp + fp + tn + fn - wrong_site; }

  /// tp / (tp + fn); 0 when no monitored trace was tallied.
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }

  /// tp / (tp + fp); 1 when no positive verdict was issued (no wrong claims).
  double precision() const { return tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    wrong_site += o.wrong_site;
    return *this;
  }

  friend bool operator==(const Counts&, const Counts&) = default;
};

}  // namespace defector
