#include <gtest/gtest.h>

#include <sstream>

#include "defector/pathsim.hpp"

using namespace defector;

namespace {

const std::string kFixtures = std::string(DEFECTOR_DATA_DIR) + "/fixtures/pathsim/";

SimWorld fixture_world(const std::string& egress_file) {
  SimWorld w;
  w.relays = load_relays(kFixtures + "relays.jsonl");
  w.ingress = load_path_map(kFixtures + "ingress.csv");
  w.egress = load_path_map(kFixtures + "egress_" + egress_file + ".csv");
  w.client_asns = {7922};
  return w;
}

Relay relay(std::string id, double bw, bool guard, bool exit, Asn asn) { return {std::move(id), bw, guard, exit, asn, {}}; }

// Two exits in different ASes; the client's ingress path crosses AS 10 only.
SimWorld two_exit_world(UsageSchedule schedule) {
  SimWorld w;
  w.relays = {relay("g", 1, true, false, 5), relay("a", 1, false, true, 10), relay("b", 1, false, true, 11)};
  w.schedule = std::move(schedule);
  w.client_asns = {100};
  w.ingress.add(100, "g", {10});
  return w;
}

UsageSchedule evening(std::uint32_t second_offset) {
  UsageSchedule s;
  s.entries = {{18 * 3600, {"x.example"}}, {18 * 3600 + second_offset, {"y.example"}}};
  return s;
}

}  // namespace

TEST(RelaySelection, BandwidthProportional) {
  const std::vector<Relay> rs{relay("a", 3, false, true, 1), relay("b", 1, false, true, 2)};
  Rng rng{2024};
  std::size_t a = 0;
  for (int i = 0; i < 100'000; ++i) a += select_exit(rs, rng).id == "a";
  // 99.99% binomial interval around 0.75
  EXPECT_GE(a / 1e5, 0.74466);
  EXPECT_LE(a / 1e5, 0.75532);
}

TEST(RelaySelection, SingleAndZeroWeight) {
  const std::vector<Relay> rs{relay("g", 5, true, false, 1), relay("z", 0, true, true, 2), relay("e", 2, false, true, 3)};
  Rng rng{1};
  for (int i = 0; i < 100'000; ++i) {
    ASSERT_EQ(select_guard(rs, rng).id, "g");
    ASSERT_EQ(select_exit(rs, rng).id, "e");
  }
  const std::vector<Relay> none{relay("z", 0, true, true, 2)};
  EXPECT_THROW(select_guard(none, rng), ConfigError);
}

TEST(Schedule, StandardHasTwelveVisitsPerDay) {
  const auto s = UsageSchedule::standard();
  EXPECT_EQ(s.visits_per_day(), 12u);
  EXPECT_EQ(s.entries.front().time_of_day, 32'400u);
}

TEST(Fixture, EveryVisitCompromised) {
  const auto w = fixture_world("hit");
  for (auto sc : {DnsScenario::GoogleDns, DnsScenario::StatusQuo}) {
    const auto m = run_simulation(w, sc, SimOptions{1, 31, 1, 1});
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].opportunities, 372u);
    EXPECT_EQ(m[0].compromised, 372u);
    EXPECT_EQ(m[0].fraction(), 1.0);
    EXPECT_EQ(m[0].time_to_first, 32'400.0);
  }
}

TEST(Fixture, NoVisitCompromised) {
  const auto w = fixture_world("miss");
  for (auto sc : {DnsScenario::IspDns, DnsScenario::GoogleDns, DnsScenario::StatusQuo}) {
    const auto m = run_simulation(w, sc, SimOptions{1, 31, 1, 1});
    EXPECT_EQ(m[0].opportunities, 372u);
    EXPECT_EQ(m[0].fraction(), 0.0);
    EXPECT_EQ(m[0].time_to_first, 31.0 * 86'400.0);
  }
}

TEST(Fixture, ClientCsvFormat) {
  const auto w = fixture_world("hit");
  const std::vector<DnsScenario> sc{DnsScenario::GoogleDns, DnsScenario::IspDns};
  const auto runs = scenario_compare(w, sc, SimOptions{1, 31, 1, 1});
  std::ostringstream out;
  write_client_csv(out, runs);
  EXPECT_EQ(out.str(),
            "scenario,client_asn,client_idx,fraction,time_to_first_s\n"
            "google,7922,0,1.000000,32400\n"
            "isp,7922,0,0.000000,2678400\n");
}

TEST(Simulation, MissingIngressIsDataError) {
  auto w = fixture_world("hit");
  w.client_asns = {1234};
  EXPECT_THROW(run_simulation(w, DnsScenario::IspDns, SimOptions{1, 1, 1, 1}), DataError);
}

TEST(Simulation, CircuitsFollowTenMinuteWindows) {
  // 18:00 and 18:20 fall in different windows, so some clients see exactly
  // one of the two visits compromised; 18:00 and 18:05 share a circuit.
  auto split = two_exit_world(evening(20 * 60));
  auto shared = two_exit_world(evening(5 * 60));
  const SimOptions opt{1000, 1, 3, 1};
  std::size_t split_mixed = 0, shared_mixed = 0;
  for (const auto& m : run_simulation(split, DnsScenario::IspDns, opt)) split_mixed += m.compromised == 1;
  for (const auto& m : run_simulation(shared, DnsScenario::IspDns, opt)) shared_mixed += m.compromised == 1;
  EXPECT_GT(split_mixed, 300u);
  EXPECT_EQ(shared_mixed, 0u);
}

TEST(Simulation, MissingEgressUsesExitAsRule) {
  auto w = two_exit_world(UsageSchedule::standard());
  // no egress data at all: only exit a (AS 10) sits on the ingress path
  const auto google = run_simulation(w, DnsScenario::GoogleDns, SimOptions{200, 31, 4, 1});
  const auto isp = run_simulation(w, DnsScenario::IspDns, SimOptions{200, 31, 4, 1});
  for (std::size_t i = 0; i < google.size(); ++i) EXPECT_EQ(google[i].compromised, isp[i].compromised);
}

TEST(Simulation, StatusQuoPicksOneResolverPerRelay) {
  auto w = two_exit_world(UsageSchedule::standard());
  w.relays[1].resolver_ips = {"r1", "r2"};
  w.relays[2].resolver_ips = {"r1", "r2"};
  w.egress.add(10, "r1", {10});
  w.egress.add(10, "r2", {99});
  w.egress.add(11, "r1", {10});
  w.egress.add(11, "r2", {98});
  const EgressModel model(w, DnsScenario::StatusQuo, 7);
  const auto a1 = model.egress(1, "x"), a2 = model.egress(1, "y");
  ASSERT_TRUE(a1 && a2);
  EXPECT_EQ(*a1, *a2);
}

TEST(Simulation, LocalDnsUsesNameServerPaths) {
  auto w = two_exit_world(UsageSchedule::standard());
  for (const auto& e : w.schedule.entries) {
    for (const auto& d : e.domains) w.ns_targets[d] = {"ns1", "ns2"};
  }
  w.relays[1].asn = 20;  // neither exit AS is on the ingress path
  w.egress.add(20, "ns1", {30});
  w.egress.add(20, "ns2", {10});
  w.egress.add(11, "ns1", {31});
  const SimOptions opt{500, 31, 9, 1};
  double isp = 0, local = 0;
  for (const auto& m : run_simulation(w, DnsScenario::IspDns, opt)) isp += m.fraction();
  for (const auto& m : run_simulation(w, DnsScenario::LocalDns, opt)) local += m.fraction();
  EXPECT_EQ(isp, 0.0);
  EXPECT_GT(local, isp);
}

TEST(Simulation, IdenticalEgressGivesIdenticalMetrics) {
  auto w = two_exit_world(UsageSchedule::standard());
  w.egress.add(10, kGoogleResolver, {10});
  w.egress.add(11, kGoogleResolver, {11});
  const SimOptions opt{300, 31, 5, 1};
  const auto a = run_simulation(w, DnsScenario::IspDns, opt);
  const auto b = run_simulation(w, DnsScenario::GoogleDns, opt);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].compromised, b[i].compromised);
    ASSERT_EQ(a[i].time_to_first, b[i].time_to_first);
  }
}

TEST(Simulation, CapIffNeverCompromisedAndWorkerInvariance) {
  auto w = two_exit_world(UsageSchedule::standard());
  w.relays.push_back(relay("c", 30, false, true, 12));
  const SimOptions one{400, 31, 11, 1}, many{400, 31, 11, 8};
  const auto a = run_simulation(w, DnsScenario::IspDns, one);
  const auto b = run_simulation(w, DnsScenario::IspDns, many);
  std::size_t never = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].opportunities, 372u);
    EXPECT_EQ(a[i].time_to_first == 31.0 * 86'400.0, a[i].compromised == 0);
    ASSERT_EQ(a[i].compromised, b[i].compromised);
    ASSERT_EQ(a[i].time_to_first, b[i].time_to_first);
    never += a[i].compromised == 0;
  }
  EXPECT_GT(never, 0u);
  EXPECT_LT(never, a.size());
}

TEST(Simulation, EgressSupersetsNeverLowerCompromise) {
  Rng rng{31337};
  for (int trial = 0; trial < 100; ++trial) {
    SimWorld w;
    const std::size_t n_exits = 1 + uniform_below(rng, 4);
    w.relays.push_back(relay("g", 1, true, false, 1));
    for (std::size_t e = 0; e < n_exits; ++e) {
      w.relays.push_back(relay("e" + std::to_string(e), 1 + uniform01(rng), false, true, static_cast<Asn>(2 + e)));
    }
    w.client_asns = {100};
    AsSet in;
    for (Asn a = 1; a <= 8; ++a) {
      if (bernoulli(rng, 0.3)) in.insert(a);
    }
    w.ingress.add(100, "g", in);
    SimWorld bigger = w;
    for (std::size_t e = 0; e < n_exits; ++e) {
      AsSet eg, extra;
      for (Asn a = 1; a <= 8; ++a) {
        if (bernoulli(rng, 0.3)) eg.insert(a);
        if (bernoulli(rng, 0.3)) extra.insert(a);
      }
      if (bernoulli(rng, 0.8)) w.egress.add(static_cast<Asn>(2 + e), kGoogleResolver, eg);
      extra.insert(eg.begin(), eg.end());
      bigger.egress.add(static_cast<Asn>(2 + e), kGoogleResolver, extra);
    }
    // a missing path may only grow into a superset of the exit-AS rule
    for (std::size_t e = 0; e < n_exits; ++e) {
      const Asn x = static_cast<Asn>(2 + e);
      if (!w.egress.find(x, kGoogleResolver)) bigger.egress.add(x, kGoogleResolver, {x});
    }
    const SimOptions opt{20, 5, static_cast<std::uint64_t>(trial), 1};
    const auto a = run_simulation(w, DnsScenario::GoogleDns, opt);
    const auto b = run_simulation(bigger, DnsScenario::GoogleDns, opt);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_LE(a[i].compromised, b[i].compromised);
  }
}

TEST(ScenarioCompare, EmptyListGivesEmptyTable) {
  const auto w = fixture_world("hit");
  const auto runs = scenario_compare(w, std::vector<DnsScenario>{}, SimOptions{});
  EXPECT_TRUE(runs.empty());
  std::ostringstream out;
  write_scenario_summary(out, runs);
  EXPECT_EQ(out.str().find('\n'), out.str().size() - 1);
}

TEST(Summary, Quantiles) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  EXPECT_EQ(quantile(v, 0.5), 3.0);
  EXPECT_EQ(quantile(v, 0.25), 2.0);
  EXPECT_EQ(quantile(std::vector<double>{1, 2}, 0.5), 1.5);
}

TEST(Parsing, RelayAndPathErrors) {
  std::istringstream r1(R"({"id":"x","bw":-1,"asn":3})");
  EXPECT_THROW(parse_relays(r1), ParseError);
  std::istringstream r2(R"({"id":"x","bw":1,"asn":3,"resolver_ip":["a","b"]})");
  EXPECT_EQ(parse_relays(r2)[0].resolver_ips.size(), 2u);
  std::istringstream p1("1,x\n");
  EXPECT_THROW(parse_path_map(p1), ParseError);
  std::istringstream p2("1,x,2;0\n");
  EXPECT_THROW(parse_path_map(p2), ParseError);
  EXPECT_THROW(parse_scenario("dnssec"), ConfigError);
}
