#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "defector/attacks.hpp"
#include "defector/csv.hpp"
#include "defector/error.hpp"
#include "defector/metrics.hpp"
#include "defector/parallel.hpp"
#include "defector/popmodel.hpp"
#include "defector/random.hpp"
#include "defector/trafficgen.hpp"
#include "defector/wfknn.hpp"

namespace defector {

/// One open-world experiment. Counts are the full-scale values; the run uses
/// count / desk_scale of each.
struct ExperimentConfig {
  std::size_t monitored_count = 1000;
  std::size_t instances_per_site = 100;
  std::size_t unmonitored_count = 100'000;
  std::size_t folds = 10;
  std::uint64_t start_rank = 10'000;
  std::vector<AttackKind> attacks{AttackKind::Wf, AttackKind::Ctw, AttackKind::Hp};
  double pct = 0.33;
  double window = 60.0;
  double scale = 1.0;
  double visits_per_10min = 700'000.0;
  std::string popularity = "pc";  // pc, pr, uc, ur, or power / uniform with the two fields below
  double pop_alpha = 1.13;
  std::uint64_t pop_sites = PopModel::kDefaultPowerLawSites;
  KnnConfig knn{};
  bool random_weights = false;  // rounds = 0 with random instead of uniform weights
  double separability = 0.7;
  std::uint64_t seed = 1;
  std::size_t desk_scale = 1;
  std::size_t workers = 1;

  std::size_t monitored() const { return monitored_count / desk_scale; }
  std::size_t instances() const { return instances_per_site / desk_scale; }
  std::size_t unmonitored() const { return unmonitored_count / desk_scale; }
  std::size_t monitored_traces() const { return monitored() * instances(); }
  std::size_t test_per_fold() const { return monitored_traces() / folds; }

  void validate() const {
    if (desk_scale == 0) throw ConfigError("desk_scale must be positive");
    if (monitored_count % desk_scale || instances_per_site % desk_scale || unmonitored_count % desk_scale) {
      throw ConfigError("desk_scale " + std::to_string(desk_scale) + " must divide the monitored, instance and unmonitored counts");
    }
    if (monitored() == 0 || instances() == 0) throw ConfigError("need monitored sites and instances");
    if (folds < 2) throw ConfigError("need at least 2 folds");
    if (monitored_traces() % folds) {
      throw ConfigError("monitored traces (" + std::to_string(monitored_traces()) + ") not divisible by " +
                        std::to_string(folds) + " folds");
    }
    if (unmonitored() % folds) {
      throw ConfigError("unmonitored sites (" + std::to_string(unmonitored()) + ") not divisible by " +
                        std::to_string(folds) + " folds");
    }
    if (unmonitored() / folds < test_per_fold()) {
      throw ConfigError("base rate 0.5 needs at least " + std::to_string(test_per_fold() * folds) +
                        " unmonitored sites");
    }
    if (instances() < 2 && folds > 1) throw ConfigError("need at least 2 instances per monitored site");
    if (!(pct >= 0.0 && pct <= 1.0)) throw ConfigError("pct must lie in [0, 1]");
    if (!(window > 0.0)) throw ConfigError("window must be positive");
    if (attacks.empty()) throw ConfigError("no attack selected");
    knn.validate();
  }
};

struct TraceVerdict {
  std::size_t trace_id = 0;
  Label truth;
  Verdict wf, ctw, hp;
  std::size_t observed_sites = 0;
};

struct AttackResult {
  AttackKind kind = AttackKind::Wf;
  Counts total;
  std::vector<Counts> per_fold;
};

struct EvalResult {
  std::vector<AttackResult> attacks;  // in ExperimentConfig::attacks order
  std::vector<TraceVerdict> verdicts;
  std::uint64_t seed = 0;  // stream seed of the DNS observations

  const AttackResult& of(AttackKind k) const {
    for (const auto& a : attacks) {
      if (a.kind == k) return a;
    }
    throw ConfigError(std::string("attack ") + to_string(k) + " was not run");
  }
};

/// Dataset, fold split and learned weights: everything that depends only on
/// the fingerprinting side of the configuration. Sweeps over DNS-side
/// parameters (pct, window, scale, distribution, start rank) reuse it.
class PreparedData {
 public:
  struct Fold {
    TrainingSet train;
    Weights weights;
    std::vector<std::size_t> test;  // trace ids
  };

  /// `traces`, when given, replaces the synthetic dataset: monitored labels
  /// must be 1..monitored() with instances() traces each, plus at least
  /// unmonitored() unmonitored traces.
  static std::shared_ptr<const PreparedData> build(const ExperimentConfig& cfg,
                                                   const std::vector<CellTrace>* traces = nullptr) {
    cfg.validate();
    auto p = std::make_shared<PreparedData>();
    const std::size_t m = cfg.monitored(), inst = cfg.instances(), u = cfg.unmonitored();
    std::vector<CellTrace> dataset;
    if (traces) {
      dataset = arrange(*traces, m, inst, u);
    } else {
      Rng rng{derive_seed(cfg.seed, {kDataStream})};
      dataset = generate_traces(m, inst, cfg.separability, rng, cfg.workers);
      auto un = generate_unmonitored_traces(u, cfg.separability, rng, cfg.workers);
      dataset.insert(dataset.end(), std::make_move_iterator(un.begin()), std::make_move_iterator(un.end()));
    }
    p->features_.resize(dataset.size());
    p->labels_.resize(dataset.size());
    parallel_for(dataset.size(), cfg.workers, [&](std::size_t i) {
      p->features_[i] = extract_features(dataset[i]);
      p->labels_[i] = dataset[i].label;
    });
    p->monitored_traces_ = m * inst;

    const std::size_t folds = cfg.folds;
    const std::size_t n_test = cfg.test_per_fold();
    p->folds_.resize(folds);
    parallel_for(folds, cfg.workers, [&](std::size_t f) {
      auto& fold = p->folds_[f];
      std::vector<FeatureVector> xs;
      std::vector<Label> ys;
      for (std::size_t t = 0; t < m * inst; ++t) {
        if (t % folds == f) {
          fold.test.push_back(t);
        } else {
          xs.push_back(p->features_[t]);
          ys.push_back(p->labels_[t]);
        }
      }
      std::size_t held_out = 0;
      for (std::size_t j = 0; j < u; ++j) {
        const std::size_t t = m * inst + j;
        if (j % folds == f) {
          if (held_out++ < n_test) fold.test.push_back(t);
        } else {
          xs.push_back(p->features_[t]);
          ys.push_back(p->labels_[t]);
        }
      }
      fold.train = TrainingSet(std::move(xs), std::move(ys));
      Rng rng{derive_seed(cfg.seed, {kLearnStream, f})};
      if (cfg.knn.rounds > 0) {
        fold.weights = learn_weights(fold.train, cfg.knn, rng);
      } else if (cfg.random_weights) {
        fold.weights = random_weights(fold.train.dims(), rng);
      } else {
        fold.weights = uniform_weights(fold.train.dims());
      }
    });
    return p;
  }

  const std::vector<Fold>& folds() const noexcept { return folds_; }
  const std::vector<FeatureVector>& features() const noexcept { return features_; }
  const std::vector<Label>& labels() const noexcept { return labels_; }
  std::size_t monitored_traces() const noexcept { return monitored_traces_; }

  static constexpr std::uint64_t kDataStream = 1;
  static constexpr std::uint64_t kLearnStream = 2;
  static constexpr std::uint64_t kDnsStream = 3;

 private:
  static std::vector<CellTrace> arrange(const std::vector<CellTrace>& traces, std::size_t m, std::size_t inst,
                                        std::size_t u) {
    std::vector<std::vector<const CellTrace*>> by_site(m);
    std::vector<const CellTrace*> unmonitored;
    for (const auto& t : traces) {
      if (!t.label.is_monitored()) {
        unmonitored.push_back(&t);
      } else if (t.label.site()->rank <= m) {
        by_site[t.label.site()->rank - 1].push_back(&t);
      }
    }
    std::vector<CellTrace> out;
    for (std::size_t s = 0; s < m; ++s) {
      if (by_site[s].size() < inst) {
        throw DataError("site " + std::to_string(s + 1) + " has " + std::to_string(by_site[s].size()) +
                        " traces, need " + std::to_string(inst));
      }
      for (std::size_t j = 0; j < inst; ++j) out.push_back(*by_site[s][j]);
    }
    if (unmonitored.size() < u) {
      throw DataError("dataset has " + std::to_string(unmonitored.size()) + " unmonitored traces, need " +
                      std::to_string(u));
    }
    for (std::size_t j = 0; j < u; ++j) out.push_back(*unmonitored[j]);
    return out;
  }

  std::vector<FeatureVector> features_;
  std::vector<Label> labels_;
  std::vector<Fold> folds_;
  std::size_t monitored_traces_ = 0;
};

inline PopModel make_popularity(const ExperimentConfig& cfg) {
  if (cfg.popularity == "power") return PopModel::power_law(cfg.pop_alpha, cfg.pop_sites, "power");
  if (cfg.popularity == "uniform") return PopModel::uniform(cfg.pop_sites, "uniform");
  return PopModel::from_label(cfg.popularity);
}

/// Fingerprinting-side settings that decide whether PreparedData can be reused.
inline bool same_preparation(const ExperimentConfig& a, const ExperimentConfig& b) {
  return a.monitored() == b.monitored() && a.instances() == b.instances() && a.unmonitored() == b.unmonitored() &&
         a.folds == b.folds && a.knn.rounds == b.knn.rounds && a.knn.learn_neighbors == b.knn.learn_neighbors &&
         a.knn.learn_rate == b.knn.learn_rate && a.random_weights == b.random_weights &&
         a.separability == b.separability && a.seed == b.seed;
}

/// Runs wf, ctw and hp over every fold.
///
/// Monitored site i (1-based) has popularity rank start_rank + i. For each
/// test trace the attacker's DNS view at the end of the visit holds (a) the
/// target's own visit with probability pct and (b) the background visits
/// observed during one window, drawn per monitored site from the popularity
/// model. DNS-to-site mapping is taken as noise free. `point` selects the
/// DNS observation stream (sweeps pass the point index).
inline EvalResult run_experiment(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t point = 0) {
  cfg.validate();
  const PopModel pop = make_popularity(cfg);
  if (cfg.start_rank + cfg.monitored() > pop.n_sites()) {
    throw ConfigError("monitored ranks exceed the " + std::to_string(pop.n_sites()) + "-site popularity model");
  }
  NetworkModel net;
  net.visits_per_10min = cfg.visits_per_10min;
  net.scale = cfg.scale;
  net.validate();

  const std::size_t m = cfg.monitored();
  std::vector<SiteId> monitored_ranks(m);
  for (std::size_t i = 0; i < m; ++i) monitored_ranks[i] = SiteId{cfg.start_rank + i + 1};
  auto to_rank = [&](const Verdict& v) {
    return v.is_monitored() ? Verdict::monitored(SiteId{cfg.start_rank + v.site()->rank}) : v;
  };

  EvalResult result;
  result.seed = derive_seed(cfg.seed, {PreparedData::kDnsStream, point});
  const auto& folds = data.folds();
  std::vector<std::vector<TraceVerdict>> fold_verdicts(folds.size());
  const KnnConfig knn = cfg.knn;

  parallel_for(folds.size(), cfg.workers, [&](std::size_t f) {
    const auto& fold = folds[f];
    const auto& labels = fold.train.labels();
    for (std::size_t t : fold.test) {
      Rng rng{derive_seed(result.seed, {t})};
      const Label truth = data.labels()[t];
      // Observed monitored sites, in internal labels 1..m.
      SiteSet observed;
      const bool own_seen = uniform01(rng) < cfg.pct;
      if (own_seen && truth.is_monitored()) observed.insert(*truth.site());
      for (SiteId r : sample_window_visits(net, pop, cfg.pct, cfg.window, monitored_ranks, rng)) {
        observed.insert(SiteId{r.rank - cfg.start_rank});
      }
      const auto dists = fold.train.distances(fold.weights, data.features()[t]);
      TraceVerdict tv;
      tv.trace_id = t;
      tv.truth = truth;
      tv.observed_sites = observed.size();
      tv.wf = knn_decide(dists, labels, knn.k, [](std::size_t) { return true; });
      tv.ctw = knn_decide(dists, labels, knn.k, [&](std::size_t i) {
        return !labels[i].is_monitored() || observed.contains(*labels[i].site());
      });
      tv.hp = attack_hp(tv.wf, observed);
      fold_verdicts[f].push_back(tv);
    }
  });

  for (AttackKind kind : cfg.attacks) {
    AttackResult ar{kind, {}, std::vector<Counts>(folds.size())};
    for (std::size_t f = 0; f < folds.size(); ++f) {
      for (const auto& tv : fold_verdicts[f]) {
        const Verdict& v = kind == AttackKind::Wf ? tv.wf : (kind == AttackKind::Ctw ? tv.ctw : tv.hp);
        ar.per_fold[f].tally(tv.truth, v);
      }
      ar.total += ar.per_fold[f];
    }
    result.attacks.push_back(std::move(ar));
  }
  for (auto& fv : fold_verdicts) {
    for (auto& tv : fv) {
      tv.truth = to_rank(tv.truth);
      tv.wf = to_rank(tv.wf);
      tv.ctw = to_rank(tv.ctw);
      tv.hp = to_rank(tv.hp);
      result.verdicts.push_back(tv);
    }
  }
  std::sort(result.verdicts.begin(), result.verdicts.end(),
            [](const TraceVerdict& a, const TraceVerdict& b) { return a.trace_id < b.trace_id; });
  return result;
}

inline EvalResult run_experiment(const ExperimentConfig& cfg) {
  const auto data = PreparedData::build(cfg);
  return run_experiment(cfg, *data);
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { Pct, StartRank, Rounds, Window, Scale, Distribution };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "pct") return SweepAxis::Pct;
  if (s == "start_rank") return SweepAxis::StartRank;
  if (s == "rounds") return SweepAxis::Rounds;
  if (s == "window") return SweepAxis::Window;
  if (s == "scale") return SweepAxis::Scale;
  if (s == "distribution") return SweepAxis::Distribution;
  throw ConfigError("unknown sweep axis '" + s + "'");
}

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Pct: return "pct";
    case SweepAxis::StartRank: return "start_rank";
    case SweepAxis::Rounds: return "rounds";
    case SweepAxis::Window: return "window";
    case SweepAxis::Scale: return "scale";
    case SweepAxis::Distribution: return "distribution";
  }
  return "?";
}

inline ExperimentConfig with_axis_value(ExperimentConfig cfg, SweepAxis axis, const std::string& value) {
  try {
    switch (axis) {
      case SweepAxis::Pct: cfg.pct = std::stod(value); break;
      case SweepAxis::StartRank: cfg.start_rank = std::stoull(value); break;
      case SweepAxis::Rounds: cfg.knn.rounds = std::stoull(value); break;
      case SweepAxis::Window: cfg.window = std::stod(value); break;
      case SweepAxis::Scale: cfg.scale = std::stod(value); break;
      case SweepAxis::Distribution: cfg.popularity = value; break;
    }
  } catch (const std::logic_error&) {
    throw ConfigError(std::string("bad value '") + value + "' for axis " + to_string(axis));
  }
  return cfg;
}

struct SweepPoint {
  std::string value;
  EvalResult result;
};

/// One experiment per value. Every point shares the trace dataset; the DNS
/// observation stream of point i is derive_seed(seed, {dns, i}).
inline std::vector<SweepPoint> sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<std::string>& values) {
  std::vector<SweepPoint> out;
  std::shared_ptr<const PreparedData> data;
  ExperimentConfig prepared_for;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const ExperimentConfig cfg = with_axis_value(base, axis, values[i]);
    cfg.validate();
    if (!data || !same_preparation(cfg, prepared_for)) {
      data = PreparedData::build(cfg);
      prepared_for = cfg;
    }
    out.push_back({values[i], run_experiment(cfg, *data, i)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output tables

inline void write_results_header(std::ostream& out) {
  out << "attack,axis,value,fold,tp,fp,tn,fn,recall,precision,seed\n";
}

inline void write_results_rows(std::ostream& out, const EvalResult& r, const std::string& axis, const std::string& value) {
  for (const auto& a : r.attacks) {
    for (std::size_t f = 0; f < a.per_fold.size(); ++f) {
      const auto& c = a.per_fold[f];
      out << to_string(a.kind) << ',' << axis << ',' << value << ',' << f << ',' << c.tp << ',' << c.fp << ','
          << c.tn << ',' << c.fn << ',' << csv::num(c.recall()) << ',' << csv::num(c.precision()) << ',' << r.seed
          << '\n';
    }
  }
}

inline void write_summary_header(std::ostream& out) {
  out << "attack,axis,value,tp,fp,tn,fn,recall,precision,desk_scale,seed\n";
}

inline void write_summary_rows(std::ostream& out, const EvalResult& r, const std::string& axis, const std::string& value,
                               std::size_t desk_scale) {
  for (const auto& a : r.attacks) {
    const auto& c = a.total;
    out << to_string(a.kind) << ',' << axis << ',' << value << ',' << c.tp << ',' << c.fp << ',' << c.tn << ','
        << c.fn << ',' << csv::num(c.recall()) << ',' << csv::num(c.precision()) << ',' << desk_scale << ','
        << r.seed << '\n';
  }
}

inline void write_verdict_log(std::ostream& out, const EvalResult& r) {
  out << "trace_id,true_label,wf,ctw,hp,observed_sites_count\n";
  for (const auto& v : r.verdicts) {
    out << v.trace_id << ',' << v.truth.code() << ',' << v.wf.code() << ',' << v.ctw.code() << ',' << v.hp.code()
        << ',' << v.observed_sites << '\n';
  }
}

}  // namespace defector
