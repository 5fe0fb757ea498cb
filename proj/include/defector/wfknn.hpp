#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "defector/error.hpp"
#include "defector/parallel.hpp"
#include "defector/random.hpp"
#include "defector/types.hpp"

namespace defector {

// ---------------------------------------------------------------------------
// Traces and features

enum class Direction : std::int8_t { Outgoing = 1, Incoming = -1 };

struct Cell {
  std::uint64_t time_ms = 0;
  Direction dir = Direction::Outgoing;

  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Cells between a client and its guard, in time order.
struct CellTrace {
  std::vector<Cell> cells;
  Label label;

  friend bool operator==(const CellTrace&, const CellTrace&) = default;
};

using FeatureVector = std::vector<double>;
using Weights = std::vector<double>;

inline constexpr double kMissing = -1.0;
inline constexpr std::size_t kFeatureCount = 46;
inline constexpr std::size_t kOutgoingIndexSlots = 20;
inline constexpr std::size_t kTimeBuckets = 18;

/// Feature layout:
///   [0] total cells        [1] outgoing      [2] incoming
///   [3] outgoing fraction  [4] duration (ms)
///   [5..24]  positions of the first 20 outgoing cells (-1 when absent)
///   [25..27] outgoing bursts: count, longest, mean length
///   [28..45] outgoing cells per time bucket, 18 equal buckets over the duration
inline FeatureVector extract_features(const CellTrace& trace) {
  const auto& cells = trace.cells;
  if (cells.empty()) throw DomainError("cannot extract features from an empty trace");
  for (std::size_t i = 1; i < cells.size(); ++i) {
    if (cells[i].time_ms < cells[i - 1].time_ms) throw DomainError("trace times must be non-decreasing");
  }
  FeatureVector f(kFeatureCount, 0.0);
  const double total = static_cast<double>(cells.size());
  std::size_t out = 0;
  std::size_t slot = 0;
  std::fill(f.begin() + 5, f.begin() + 5 + kOutgoingIndexSlots, kMissing);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].dir != Direction::Outgoing) continue;
    ++out;
    if (slot < kOutgoingIndexSlots) f[5 + slot++] = static_cast<double>(i);
  }
  f[0] = total;
  f[1] = static_cast<double>(out);
  f[2] = total - static_cast<double>(out);
  f[3] = static_cast<double>(out) / total;
  const std::uint64_t t0 = cells.front().time_ms;
  const std::uint64_t duration = cells.back().time_ms - t0;
  f[4] = static_cast<double>(duration);

  std::size_t bursts = 0, longest = 0, run = 0, in_bursts = 0;
  for (std::size_t i = 0; i <= cells.size(); ++i) {
    if (i < cells.size() && cells[i].dir == Direction::Outgoing) {
      ++run;
      continue;
    }
    if (run > 0) {
      ++bursts;
      longest = std::max(longest, run);
      in_bursts += run;
      run = 0;
    }
  }
  f[25] = static_cast<double>(bursts);
  f[26] = static_cast<double>(longest);
  f[27] = bursts ? static_cast<double>(in_bursts) / static_cast<double>(bursts) : 0.0;

  for (const auto& c : cells) {
    if (c.dir != Direction::Outgoing) continue;
    std::size_t b = 0;
    if (duration > 0) {
      b = static_cast<std::size_t>((c.time_ms - t0) * kTimeBuckets / duration);
      b = std::min(b, kTimeBuckets - 1);
    }
    f[28 + b] += 1.0;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Distance

/// Per-feature replacement for |a_f - b_f| when exactly one side is missing:
/// the 95th percentile of |x_f| over the non-missing training values.
inline std::vector<double> missing_penalties(std::span<const FeatureVector> xs) {
  if (xs.empty()) return {};
  const std::size_t dims = xs.front().size();
  std::vector<double> pen(dims, 0.0);
  std::vector<double> col;
  for (std::size_t f = 0; f < dims; ++f) {
    col.clear();
    for (const auto& x : xs) {
      if (x[f] != kMissing) col.push_back(std::abs(x[f]));
    }
    if (col.empty()) continue;
    const auto k = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(col.size()))) - 1;
    std::nth_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(k), col.end());
    pen[f] = col[k];
  }
  return pen;
}

/// Per-feature unweighted term of the distance.
inline double feature_term(double a, double b, double penalty) {
  const bool ma = a == kMissing, mb = b == kMissing;
  if (ma && mb) return 0.0;
  if (ma || mb) return penalty;
  return std::abs(a - b);
}

/// Weighted L1 distance sum_f w_f |a_f - b_f|; a term with exactly one missing
/// side costs w_f * penalties[f] (or w_f when no penalties are given).
inline double distance(std::span<const double> w, std::span<const double> a, std::span<const double> b,
                       std::span<const double> penalties = {}) {
  if (a.size() != b.size() || w.size() != a.size() || (!penalties.empty() && penalties.size() != a.size())) {
    throw ContractError("feature vector length mismatch");
  }
  double d = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) d += w[f] * feature_term(a[f], b[f], penalties.empty() ? 1.0 : penalties[f]);
  return d;
}

/// Labeled training vectors plus their missing-value penalties.
class TrainingSet {
 public:
  TrainingSet() = default;

  TrainingSet(std::vector<FeatureVector> xs, std::vector<Label> labels) : xs_(std::move(xs)), labels_(std::move(labels)) {
    if (xs_.size() != labels_.size()) throw ContractError("feature/label count mismatch");
    if (!xs_.empty()) {
      dims_ = xs_.front().size();
      for (const auto& x : xs_) {
        if (x.size() != dims_) throw ContractError("feature vector length mismatch in training set");
      }
    }
    penalties_ = missing_penalties(xs_);
  }

  std::size_t size() const noexcept { return xs_.size(); }
  std::size_t dims() const noexcept { return dims_; }
  const std::vector<FeatureVector>& features() const noexcept { return xs_; }
  const std::vector<Label>& labels() const noexcept { return labels_; }
  const std::vector<double>& penalties() const noexcept { return penalties_; }

  double distance_to(const Weights& w, std::size_t i, std::span<const double> x) const {
    return defector::distance(w, xs_[i], x, penalties_);
  }

  /// Distances from x to every training point.
  std::vector<double> distances(const Weights& w, std::span<const double> x) const {
    std::vector<double> d(xs_.size());
    for (std::size_t i = 0; i < xs_.size(); ++i) d[i] = distance_to(w, i, x);
    return d;
  }

 private:
  std::vector<FeatureVector> xs_;
  std::vector<Label> labels_;
  std::vector<double> penalties_;
  std::size_t dims_ = 0;
};

// ---------------------------------------------------------------------------
// Weighted kNN

struct KnnConfig {
  std::size_t k = 2;
  std::size_t rounds = 2500;
  std::size_t learn_neighbors = 5;  // same- and different-class neighbors per round
  double learn_rate = 0.01;

  void validate() const {
    if (k == 0) throw ConfigError("k must be at least 1");
  }
};

inline Weights uniform_weights(std::size_t dims) {
  return Weights(dims, dims ? 1.0 / static_cast<double>(dims) : 0.0);
}

/// Weights drawn uniformly at random and normalized (the "random weights"
/// variant of an unlearned classifier).
inline Weights random_weights(std::size_t dims, Rng& rng) {
  Weights w(dims);
  double sum = 0.0;
  for (auto& x : w) sum += (x = uniform01(rng) + 1e-12);
  for (auto& x : w) x /= sum;
  return w;
}

/// Multiplicative weight learning that shrinks same-class distances.
///
/// Each round picks a monitored training point, finds its nearest same-class and
/// different-class neighbors under the current weights, and scores every
/// feature by how much more it contributes to the same-class distances than
/// to the different-class ones. Features that separate classes grow, features
/// that spread a class out shrink; weights are renormalized to sum to 1.
inline Weights learn_weights(const TrainingSet& train, const KnnConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t dims = train.dims();
  if (train.size() < 2 || dims == 0) throw ConfigError("weight learning needs a non-empty training set");
  // Unmonitored traces come from distinct sites, so each is its own class.
  const auto& labels = train.labels();
  std::map<std::uint64_t, std::size_t> class_sizes;
  std::size_t classes = 0;
  for (const auto& l : labels) {
    if (!l.is_monitored()) {
      ++classes;
    } else if (class_sizes[l.code()]++ == 0) {
      ++classes;
    }
  }
  if (classes < 2) throw ConfigError("weight learning needs at least two classes");
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (labels[i].is_monitored() && class_sizes[labels[i].code()] >= 2) anchors.push_back(i);
  }
  if (anchors.empty()) throw ConfigError("weight learning needs a class with at least two instances");

  Weights w = uniform_weights(dims);
  std::vector<std::pair<double, std::size_t>> same, diff;
  std::vector<double> badness(dims);
  const auto& xs = train.features();
  const auto& pen = train.penalties();
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    const std::size_t p = anchors[uniform_below(rng, anchors.size())];
    same.clear();
    diff.clear();
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (i == p) continue;
      const double d = train.distance_to(w, i, xs[p]);
      (labels[i] == labels[p] ? same : diff).emplace_back(d, i);
    }
    const auto take = [&](auto& v) {
      const std::size_t n = std::min(cfg.learn_neighbors, v.size());
      std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), v.end());
      v.resize(n);
    };
    take(same);
    take(diff);
    std::fill(badness.begin(), badness.end(), 0.0);
    for (const auto& [d, i] : same) {
      for (std::size_t f = 0; f < dims; ++f) badness[f] += w[f] * feature_term(xs[p][f], xs[i][f], pen[f]);
    }
    for (const auto& [d, i] : diff) {
      for (std::size_t f = 0; f < dims; ++f) badness[f] -= w[f] * feature_term(xs[p][f], xs[i][f], pen[f]);
    }
    double total = 0.0;
    for (double b : badness) total += std::abs(b);
    if (!(total > 0.0)) continue;
    double sum = 0.0;
    for (std::size_t f = 0; f < dims; ++f) {
      const double sign = badness[f] > 0 ? 1.0 : (badness[f] < 0 ? -1.0 : 0.0);
      const double step = cfg.learn_rate * sign * std::min(1.0, std::abs(badness[f]) / total);
      w[f] = std::max(0.0, w[f] * (1.0 - step));
      sum += w[f];
    }
    if (sum > 0.0) {
      for (auto& x : w) x /= sum;
    }
  }
  return w;
}

/// k-nearest-neighbor decision over precomputed distances. Only points for
/// which `eligible(i)` holds take part; ties go to the lower index. Returns
/// the common label of the k neighbors if they all name one monitored site,
/// unmonitored otherwise.
template <class Eligible>
Verdict knn_decide(std::span<const double> dists, std::span<const Label> labels, std::size_t k, Eligible&& eligible) {
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(dists.size());
  for (std::size_t i = 0; i < dists.size(); ++i) {
    if (eligible(i)) cand.emplace_back(dists[i], i);
  }
  if (cand.size() < k) {
    throw ConfigError("only " + std::to_string(cand.size()) + " eligible training points for k=" + std::to_string(k));
  }
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
  const Label first = labels[cand[0].second];
  if (!first.is_monitored()) return Verdict::unmonitored();
  for (std::size_t j = 1; j < k; ++j) {
    if (labels[cand[j].second] != first) return Verdict::unmonitored();
  }
  return first;
}

/// Classifies `test`. With `candidates`, monitored training points whose
/// class is not a candidate are skipped; unmonitored points always count.
inline Verdict classify(const TrainingSet& train, const Weights& w, const KnnConfig& cfg, std::span<const double> test,
                        const SiteSet* candidates = nullptr) {
  cfg.validate();
  if (train.size() == 0) throw ConfigError("empty training set");
  const auto d = train.distances(w, test);
  const auto& labels = train.labels();
  return knn_decide(d, labels, cfg.k, [&](std::size_t i) {
    return candidates == nullptr || !labels[i].is_monitored() || candidates->contains(*labels[i].site());
  });
}

// ---------------------------------------------------------------------------
// Synthetic traces

/// Synthetic page-load traces. Each site gets a latent template (length,
/// burst pattern, pacing); instances perturb it by an amount proportional to
/// 1 - separability through cell drops and insertions, a per-instance speed
/// factor and per-gap timing jitter. Separability 1 reproduces the template.
class TraceGenerator {
 public:
  explicit TraceGenerator(double separability) : noise_(1.0 - separability) {
    if (!(separability >= 0.0 && separability <= 1.0)) throw ConfigError("separability must lie in [0, 1]");
  }

  struct Template {
    std::vector<Direction> dirs;
    std::vector<double> gaps;  // ms before each cell
  };

  Template make_template(Rng& rng) const {
    Template t;
    const auto length = 100 + uniform_below(rng, 900);
    const double in_burst_mean = 3.0 + 22.0 * uniform01(rng);
    const double out_burst_mean = 1.0 + 2.0 * uniform01(rng);
    const double gap_mean = 2.0 + 28.0 * uniform01(rng);
    std::exponential_distribution<double> gap(1.0 / gap_mean);
    bool outgoing = true;
    while (t.dirs.size() < length) {
      const double mean = outgoing ? out_burst_mean : in_burst_mean;
      std::geometric_distribution<int> burst(1.0 / mean);
      const int n = 1 + burst(rng);
      for (int i = 0; i < n && t.dirs.size() < length; ++i) {
        t.dirs.push_back(outgoing ? Direction::Outgoing : Direction::Incoming);
        t.gaps.push_back(t.dirs.size() == 1 ? 0.0 : gap(rng));
      }
      outgoing = !outgoing;
    }
    return t;
  }

  CellTrace instance(const Template& t, Label label, Rng& rng) const {
    CellTrace out;
    out.label = label;
    if (noise_ <= 0.0) {
      double now = 0.0;
      for (std::size_t i = 0; i < t.dirs.size(); ++i) {
        now += t.gaps[i];
        out.cells.push_back({static_cast<std::uint64_t>(std::llround(now)), t.dirs[i]});
      }
      return out;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    const double speed = std::exp(0.6 * noise_ * normal(rng));
    const double drop = 0.2 * noise_;
    const double insert = 0.2 * noise_;
    double now = 0.0;
    for (std::size_t i = 0; i < t.dirs.size(); ++i) {
      now += t.gaps[i] * speed * std::exp(0.8 * noise_ * normal(rng));
      if (!bernoulli(rng, drop)) out.cells.push_back({static_cast<std::uint64_t>(std::llround(now)), t.dirs[i]});
      if (bernoulli(rng, insert)) {
        now += uniform01(rng) * 2.0;
        out.cells.push_back({static_cast<std::uint64_t>(std::llround(now)),
                             bernoulli(rng, 0.3) ? Direction::Outgoing : Direction::Incoming});
      }
    }
    if (out.cells.empty()) out.cells.push_back({0, t.dirs.front()});
    return out;
  }

 private:
  double noise_;
};

/// `instances_per_site` traces for each of sites 1..n_sites, site-major.
inline std::vector<CellTrace> generate_traces(std::size_t n_sites, std::size_t instances_per_site, double separability,
                                              Rng& rng, std::size_t workers = 1) {
  if (n_sites == 0) throw ConfigError("need at least one site");
  const TraceGenerator gen(separability);
  const std::uint64_t base = rng();
  std::vector<CellTrace> traces(n_sites * instances_per_site);
  parallel_for(n_sites, workers, [&](std::size_t s) {
    Rng site_rng{derive_seed(base, {s})};
    const auto tmpl = gen.make_template(site_rng);
    for (std::size_t j = 0; j < instances_per_site; ++j) {
      traces[s * instances_per_site + j] = gen.instance(tmpl, Verdict::monitored(SiteId{s + 1}), site_rng);
    }
  });
  return traces;
}

/// One trace for each of `count` distinct unmonitored sites.
inline std::vector<CellTrace> generate_unmonitored_traces(std::size_t count, double separability, Rng& rng,
                                                          std::size_t workers = 1) {
  const TraceGenerator gen(separability);
  const std::uint64_t base = rng();
  std::vector<CellTrace> traces(count);
  parallel_for(count, workers, [&](std::size_t s) {
    Rng site_rng{derive_seed(base, {s})};
    traces[s] = gen.instance(gen.make_template(site_rng), Verdict::unmonitored(), site_rng);
  });
  return traces;
}

// ---------------------------------------------------------------------------
// Trace files: first line is the label (rank or `unmonitored`), then one
// `time_ms,direction` row per cell with direction +1 or -1.

inline CellTrace parse_trace(std::istream& in) {
  CellTrace t;
  std::string line;
  std::size_t lineno = 0;
  bool have_label = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!have_label) {
      have_label = true;
      if (line == "unmonitored") continue;
      try {
        std::size_t used = 0;
        const auto rank = std::stoull(line, &used);
        if (used != line.size() || rank == 0) throw std::invalid_argument("label");
        t.label = Verdict::monitored(SiteId{rank});
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad trace label '" + line + "'");
      }
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(lineno, "expected time_ms,direction");
    Cell c;
    try {
      std::size_t used = 0;
      const auto time = std::stoll(line.substr(0, comma), &used);
      if (used != comma || time < 0) throw std::invalid_argument("time");
      c.time_ms = static_cast<std::uint64_t>(time);
    } catch (const std::exception&) {
      throw ParseError(lineno, "bad time in '" + line + "'");
    }
    const std::string dir = line.substr(comma + 1);
    if (dir == "+1" || dir == "1") {
      c.dir = Direction::Outgoing;
    } else if (dir == "-1") {
      c.dir = Direction::Incoming;
    } else {
      throw ParseError(lineno, "direction must be +1 or -1, got '" + dir + "'");
    }
    if (!t.cells.empty() && c.time_ms < t.cells.back().time_ms) throw ParseError(lineno, "time goes backwards");
    t.cells.push_back(c);
  }
  if (!have_label) throw DataError("empty trace file");
  if (t.cells.empty()) throw DataError("trace without cells");
  return t;
}

inline void write_trace(std::ostream& out, const CellTrace& t) {
  if (t.label.is_monitored()) {
    out << t.label.code() << '\n';
  } else {
    out << "unmonitored\n";
  }
  for (const auto& c : t.cells) out << c.time_ms << ',' << (c.dir == Direction::Outgoing ? "+1" : "-1") << '\n';
}

/// Writes one file per trace under `dir` plus a `traces.csv` manifest of
/// `label,file` rows (label 0 = unmonitored).
inline void save_trace_dataset(const std::filesystem::path& dir, std::span<const CellTrace> traces) {
  std::filesystem::create_directories(dir / "traces");
  std::ofstream manifest(dir / "traces.csv", std::ios::binary);
  if (!manifest) throw DataError("cannot write " + (dir / "traces.csv").string());
  manifest << "label,file\n";
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const std::string rel = "traces/" + std::to_string(i) + ".csv";
    std::ofstream f(dir / rel, std::ios::binary);
    if (!f) throw DataError("cannot write " + (dir / rel).string());
    write_trace(f, traces[i]);
    manifest << traces[i].label.code() << ',' << rel << '\n';
  }
}

inline std::vector<CellTrace> load_trace_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "traces.csv");
  if (!manifest) throw DataError("cannot open " + (dir / "traces.csv").string());
  std::vector<CellTrace> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 || line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(lineno, "expected label,file");
    std::ifstream f(dir / line.substr(comma + 1));
    if (!f) throw DataError("cannot open trace " + line.substr(comma + 1));
    out.push_back(parse_trace(f));
  }
  return out;
}

}  // namespace defector
