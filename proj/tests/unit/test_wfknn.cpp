#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "defector/wfknn.hpp"

using namespace defector;

namespace {

CellTrace trace_of(std::initializer_list<std::pair<std::uint64_t, int>> cells, Label label = {}) {
  CellTrace t;
  t.label = label;
  for (auto [time, dir] : cells) t.cells.push_back({time, dir > 0 ? Direction::Outgoing : Direction::Incoming});
  return t;
}

Label site(std::uint64_t r) { return Verdict::monitored(SiteId{r}); }

std::vector<FeatureVector> features_of(const std::vector<CellTrace>& ts) {
  std::vector<FeatureVector> out;
  for (const auto& t : ts) out.push_back(extract_features(t));
  return out;
}

std::vector<Label> labels_of(const std::vector<CellTrace>& ts) {
  std::vector<Label> out;
  for (const auto& t : ts) out.push_back(t.label);
  return out;
}

// Two classes of 10 points in 8 dimensions that differ only in feature 3.
TrainingSet feature3_dataset(Rng& rng) {
  std::vector<FeatureVector> xs;
  std::vector<Label> ls;
  for (int i = 0; i < 20; ++i) {
    FeatureVector x(8);
    for (auto& v : x) v = 10.0 * uniform01(rng);
    x[3] = (i < 10 ? 0.0 : 10.0) + 0.5 * uniform01(rng);
    xs.push_back(x);
    ls.push_back(site(i < 10 ? 1 : 2));
  }
  return TrainingSet(xs, ls);
}

// Leave-one-out 1-NN accuracy when all weight sits on one feature.
double single_feature_accuracy(const TrainingSet& t, std::size_t f) {
  Weights w(t.dims(), 0.0);
  w[f] = 1.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (j == i) continue;
      const double d = t.distance_to(w, j, t.features()[i]);
      if (d < best) best = d, arg = j;
    }
    correct += t.labels()[arg] == t.labels()[i];
  }
  return static_cast<double>(correct) / static_cast<double>(t.size());
}

double mean_intra_class_nn(const TrainingSet& t, const Weights& w) {
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double best = 1e300;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (j != i && t.labels()[j] == t.labels()[i]) best = std::min(best, t.distance_to(w, j, t.features()[i]));
    }
    sum += best;
  }
  return sum / static_cast<double>(t.size());
}

}  // namespace

TEST(ExtractFeatures, HandExample) {
  const auto f = extract_features(trace_of({{0, 1}, {1, -1}, {2, 1}, {3, 1}}));
  ASSERT_EQ(f.size(), kFeatureCount);
  EXPECT_EQ(f[0], 4);
  EXPECT_EQ(f[1], 3);
  EXPECT_EQ(f[2], 1);
  EXPECT_EQ(f[3], 0.75);
  EXPECT_EQ(f[4], 3);
  EXPECT_EQ(f[5], 0);
  EXPECT_EQ(f[6], 2);
  EXPECT_EQ(f[7], 3);
  EXPECT_EQ(f[8], kMissing);
  EXPECT_EQ(f[25], 2);
  EXPECT_EQ(f[26], 2);
  EXPECT_EQ(f[27], 1.5);
}

TEST(ExtractFeatures, AllIncoming) {
  const auto f = extract_features(trace_of({{0, -1}, {1, -1}, {2, -1}, {3, -1}, {4, -1}}));
  EXPECT_EQ(f[1], 0);
  for (std::size_t i = 5; i < 25; ++i) EXPECT_EQ(f[i], kMissing);
}

TEST(ExtractFeatures, SingleCellLandsInFirstBucket) {
  const auto f = extract_features(trace_of({{0, 1}}));
  EXPECT_EQ(f[4], 0);
  EXPECT_EQ(f[28], 1);
  EXPECT_EQ(std::accumulate(f.begin() + 29, f.end(), 0.0), 0.0);
}

TEST(ExtractFeatures, Errors) {
  EXPECT_THROW(extract_features(CellTrace{}), DomainError);
  EXPECT_THROW(extract_features(trace_of({{5, 1}, {4, 1}})), DomainError);
}

TEST(ExtractFeatures, PureFunction) {
  Rng rng{1};
  const auto ts = generate_traces(3, 2, 0.5, rng);
  for (const auto& t : ts) EXPECT_EQ(extract_features(t), extract_features(CellTrace(t)));
}

TEST(Distance, Examples) {
  const std::vector<double> w(3, 1.0), a{0, 0, 0}, b{1, 0, 0};
  EXPECT_EQ(distance(w, a, a), 0.0);
  EXPECT_EQ(distance(w, a, b), 1.0);
  EXPECT_EQ(distance(w, a, b), distance(w, b, a));
  const std::vector<double> m{kMissing, 0, 0};
  EXPECT_EQ(distance(w, a, m, std::vector<double>{7, 1, 1}), 7.0);
  EXPECT_EQ(distance(w, m, m, std::vector<double>{7, 1, 1}), 0.0);
  EXPECT_THROW(distance(w, a, std::vector<double>{1, 2}), ContractError);
}

TEST(Distance, MissingPenaltyIs95thPercentile) {
  std::vector<FeatureVector> xs;
  for (int i = 1; i <= 100; ++i) xs.push_back({static_cast<double>(i)});
  xs.push_back({kMissing});
  EXPECT_EQ(missing_penalties(xs)[0], 95.0);
}

TEST(Classify, AllKAgreeRule) {
  const TrainingSet t({{0.0}, {0.1}, {0.2}, {5.0}}, {site(7), site(7), site(9), Label{}});
  const Weights w{1.0};
  KnnConfig k2;
  EXPECT_EQ(classify(t, w, k2, std::vector<double>{0.0}), site(7));
  EXPECT_EQ(classify(t, w, k2, std::vector<double>{0.18}), Verdict::unmonitored());
  KnnConfig k1;
  k1.k = 1;
  EXPECT_EQ(classify(t, w, k1, std::vector<double>{4.9}), Verdict::unmonitored());
  KnnConfig k5;
  k5.k = 5;
  EXPECT_THROW(classify(t, w, k5, std::vector<double>{0.0}), ConfigError);
}

TEST(Classify, TiesGoToLowerIndex) {
  const TrainingSet t({{1.0}, {-1.0}}, {site(3), site(4)});
  KnnConfig k1;
  k1.k = 1;
  EXPECT_EQ(classify(t, Weights{1.0}, k1, std::vector<double>{0.0}), site(3));
}

TEST(Classify, ArgminInvariantUnderWeightScaling) {
  Rng rng{12};
  const auto ts = generate_traces(10, 4, 0.6, rng);
  const auto xs = features_of(ts);
  const TrainingSet t(xs, labels_of(ts));
  Weights w = random_weights(kFeatureCount, rng), w2 = w;
  for (auto& x : w2) x *= 2.0;
  KnnConfig cfg;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto d1 = t.distances(w, xs[i]), d2 = t.distances(w2, xs[i]);
    for (std::size_t j = 0; j < d1.size(); ++j) ASSERT_DOUBLE_EQ(d2[j], 2.0 * d1[j]);
    ASSERT_EQ(classify(t, w, cfg, xs[i]), classify(t, w2, cfg, xs[i]));
  }
}

TEST(Classify, AllMonitoredCandidatesMatchUnrestricted) {
  Rng rng{13};
  auto ts = generate_traces(8, 3, 0.5, rng);
  const auto un = generate_unmonitored_traces(10, 0.5, rng);
  ts.insert(ts.end(), un.begin(), un.end());
  const TrainingSet t(features_of(ts), labels_of(ts));
  SiteSet all;
  for (std::uint64_t s = 1; s <= 8; ++s) all.insert(SiteId{s});
  const auto w = uniform_weights(kFeatureCount);
  const auto probes = generate_unmonitored_traces(20, 0.5, rng);
  for (const auto& p : probes) {
    const auto x = extract_features(p);
    ASSERT_EQ(classify(t, w, KnnConfig{}, x, &all), classify(t, w, KnnConfig{}, x));
  }
}

TEST(LearnWeights, ZeroRoundsIsUniform) {
  Rng rng{1};
  const auto t = feature3_dataset(rng);
  KnnConfig cfg;
  cfg.rounds = 0;
  EXPECT_EQ(learn_weights(t, cfg, rng), uniform_weights(8));
}

TEST(LearnWeights, FindsTheSeparatingFeature) {
  Rng rng{99};
  const auto t = feature3_dataset(rng);
  // grid-search oracle over single-feature weightings
  std::size_t best = 0;
  for (std::size_t f = 1; f < t.dims(); ++f) {
    if (single_feature_accuracy(t, f) > single_feature_accuracy(t, best)) best = f;
  }
  ASSERT_EQ(best, 3u);
  Rng learn{5};
  const auto w = learn_weights(t, KnnConfig{}, learn);
  EXPECT_GT(w[3], 1.0 / 8.0);
  EXPECT_EQ(static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin()), best);
  for (double x : w) EXPECT_GE(x, 0.0);
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
}

TEST(LearnWeights, IdenticalInstancesKeepUniformWeights) {
  std::vector<FeatureVector> xs(6, FeatureVector{1.0, 2.0, 3.0});
  std::vector<Label> ls{site(1), site(1), site(1), site(2), site(2), site(2)};
  Rng rng{3};
  EXPECT_EQ(learn_weights(TrainingSet(xs, ls), KnnConfig{}, rng), uniform_weights(3));
}

TEST(LearnWeights, DoesNotIncreaseIntraClassDistance) {
  Rng rng{21};
  const auto ts = generate_traces(10, 5, 0.6, rng);
  const TrainingSet t(features_of(ts), labels_of(ts));
  KnnConfig cfg;
  cfg.rounds = 500;
  const auto w = learn_weights(t, cfg, rng);
  for (double x : w) EXPECT_GE(x, 0.0);
  EXPECT_LE(mean_intra_class_nn(t, w), mean_intra_class_nn(t, uniform_weights(kFeatureCount)));
}

TEST(LearnWeights, DegenerateInputs) {
  Rng rng{1};
  EXPECT_THROW(learn_weights(TrainingSet({{1.0}, {2.0}}, {site(1), site(1)}), KnnConfig{}, rng), ConfigError);
  EXPECT_THROW(learn_weights(TrainingSet({{1.0}, {2.0}}, {site(1), site(2)}), KnnConfig{}, rng), ConfigError);
  EXPECT_THROW(learn_weights(TrainingSet({{1.0}}, {site(1)}), KnnConfig{}, rng), ConfigError);
}

TEST(TraceGenerator, FullSeparabilityGivesIdenticalInstances) {
  Rng rng{4};
  const auto ts = generate_traces(5, 4, 1.0, rng);
  for (std::size_t s = 0; s < 5; ++s) {
    for (std::size_t j = 1; j < 4; ++j) EXPECT_EQ(extract_features(ts[s * 4 + j]), extract_features(ts[s * 4]));
  }
}

TEST(TraceGenerator, FullSeparabilityClosedWorldRecallIsOne) {
  Rng rng{6};
  const auto ts = generate_traces(20, 4, 1.0, rng);
  const auto xs = features_of(ts);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    std::vector<FeatureVector> tx;
    std::vector<Label> tl;
    for (std::size_t j = 0; j < ts.size(); ++j) {
      if (j != i) tx.push_back(xs[j]), tl.push_back(ts[j].label);
    }
    correct += classify(TrainingSet(tx, tl), uniform_weights(kFeatureCount), KnnConfig{}, xs[i]) == ts[i].label;
  }
  EXPECT_EQ(correct, ts.size());
}

TEST(TraceGenerator, HalfSeparabilityBeatsMajorityBaseline) {
  Rng rng{7};
  const std::size_t sites = 50, inst = 10;
  const auto ts = generate_traces(sites, inst, 0.5, rng);
  const auto xs = features_of(ts);
  std::size_t correct = 0, total = 0;
  for (std::size_t fold = 0; fold < 5; ++fold) {
    std::vector<FeatureVector> tx;
    std::vector<Label> tl;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (i % inst % 5 != fold) tx.push_back(xs[i]), tl.push_back(ts[i].label);
    }
    const TrainingSet t(tx, tl);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (i % inst % 5 != fold) continue;
      ++total;
      correct += classify(t, uniform_weights(kFeatureCount), KnnConfig{}, xs[i]) == ts[i].label;
    }
  }
  // majority-class baseline: every class has the same size, so 1 / sites
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(total), 1.0 / static_cast<double>(sites));
}

TEST(TraceGenerator, DeterministicAcrossWorkers) {
  Rng a{11}, b{11};
  EXPECT_EQ(generate_traces(6, 3, 0.7, a, 1), generate_traces(6, 3, 0.7, b, 4));
  EXPECT_THROW(TraceGenerator(1.5), ConfigError);
}

TEST(TraceFile, RoundTrip) {
  const auto t = trace_of({{0, 1}, {4, -1}, {9, 1}}, site(12));
  std::ostringstream out;
  write_trace(out, t);
  EXPECT_EQ(out.str(), "12\n0,+1\n4,-1\n9,+1\n");
  std::istringstream in(out.str());
  EXPECT_EQ(parse_trace(in), t);
  std::istringstream bad("12\n0,2\n");
  EXPECT_THROW(parse_trace(bad), ParseError);
}
