#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "defector/exposure.hpp"
#include "defector/random.hpp"

using namespace defector;

namespace {

const std::string kFixtures = std::string(DEFECTOR_DATA_DIR) + "/fixtures/exposure/";

RoutingTable table_of(const std::string& text) {
  std::istringstream in(text);
  return parse_routing_table(in);
}

Traceroute trace_through(std::vector<std::optional<std::string>> hops, TraceRole role = TraceRole::Web) {
  Traceroute t{"x.example", parse_ip("192.0.2.1"), role == TraceRole::Web ? "tcp" : "udp", role, {}};
  std::uint32_t ttl = 0;
  for (const auto& h : hops) t.hops.push_back({++ttl, h ? std::optional<IpAddress>(parse_ip(*h)) : std::nullopt});
  return t;
}

AsSet random_set(Rng& rng) {
  AsSet s;
  const auto n = uniform_below(rng, 6);
  for (std::uint64_t i = 0; i < n; ++i) s.insert(static_cast<Asn>(1 + uniform_below(rng, 8)));
  return s;
}

}  // namespace

TEST(Lpm, LongestMatchWins) {
  const auto t = table_of("10.0.0.0/8\t1\n10.1.0.0/16\t2\n");
  EXPECT_EQ(lpm(t, "10.1.2.3"), 2u);
  EXPECT_EQ(lpm(t, "10.9.9.9"), 1u);
  EXPECT_EQ(lpm(t, "192.0.2.1"), std::nullopt);
  EXPECT_THROW(lpm(t, "10.1.2"), ParseError);
}

TEST(Lpm, Ipv6AndDefaultRoute) {
  const auto t = table_of("2001:db8::/32\t9\n2001:db8:1::/48\t10\n0.0.0.0/0\t7\n");
  EXPECT_EQ(lpm(t, "2001:db8:1::5"), 10u);
  EXPECT_EQ(lpm(t, "2001:db8:ffff::5"), 9u);
  EXPECT_EQ(lpm(t, "2001:db9::1"), std::nullopt);
  EXPECT_EQ(lpm(t, "8.8.8.8"), 7u);
}

TEST(Lpm, TableErrors) {
  EXPECT_THROW(table_of("10.0.0.0/8\t1\n10.0.0.0/8\t2\n"), ParseError);
  EXPECT_THROW(table_of("10.0.0.0/33\t1\n"), ParseError);
  EXPECT_THROW(table_of("10.0.0.0\t1\n"), ParseError);
  EXPECT_THROW(table_of("10.0.0.0/8\tx\n"), ParseError);
  EXPECT_THROW(table_of("10.0.0.0/8\t0\n"), ParseError);
  EXPECT_EQ(table_of("# comment\n\n1.2.0.0/16 5\n").size(), 1u);
}

TEST(Lpm, HostBitsAreCleared) {
  const auto t = table_of("10.1.2.3/16\t4\n");
  EXPECT_EQ(lpm(t, "10.1.200.1"), 4u);
}

TEST(Lpm, AgreesWithBruteForceScan) {
  Rng rng{77};
  for (int trial = 0; trial < 5; ++trial) {
    RoutingTable t;
    std::vector<std::pair<Prefix, Asn>> entries;
    std::set<std::pair<std::uint32_t, std::size_t>> used;
    while (entries.size() < 10'000) {
      const auto len = static_cast<std::size_t>(uniform_below(rng, 25)) + 8;
      std::uint32_t addr = static_cast<std::uint32_t>(rng()) & (len == 0 ? 0u : ~0u << (32 - len));
      // cluster addresses so that prefixes nest
      addr = (addr & 0x00ffffffu) | 0x0b000000u;
      if (!used.insert({addr, len}).second) continue;
      Prefix p;
      p.length = len;
      for (int b = 0; b < 4; ++b) p.base.bytes[b] = static_cast<std::uint8_t>(addr >> (24 - 8 * b));
      p = Prefix::parse(std::to_string(p.base.bytes[0]) + "." + std::to_string(p.base.bytes[1]) + "." +
                        std::to_string(p.base.bytes[2]) + "." + std::to_string(p.base.bytes[3]) + "/" +
                        std::to_string(len));
      const auto asn = static_cast<Asn>(1 + uniform_below(rng, 60'000));
      t.insert(p, asn);
      entries.emplace_back(p, asn);
    }
    for (int q = 0; q < 2000; ++q) {
      IpAddress ip;
      const std::uint32_t a = (static_cast<std::uint32_t>(rng()) & 0x00ffffffu) | 0x0b000000u;
      for (int b = 0; b < 4; ++b) ip.bytes[b] = static_cast<std::uint8_t>(a >> (24 - 8 * b));
      std::optional<Asn> best;
      std::size_t best_len = 0;
      for (const auto& [p, asn] : entries) {
        if (p.contains(ip) && (!best || p.length > best_len)) best = asn, best_len = p.length;
      }
      ASSERT_EQ(t.lookup(ip), best);
    }
  }
}

TEST(AsSet, UnionOfRoutedHops) {
  const auto t = table_of("11.0.0.0/8\t1\n12.0.0.0/8\t2\n");
  const std::vector<Traceroute> one{trace_through({"11.0.0.1", "11.0.0.2", "12.0.0.1"})};
  EXPECT_EQ(as_set(one, t), (AsSet{1, 2}));
  const std::vector<Traceroute> silent{trace_through({std::nullopt, std::nullopt})};
  EXPECT_TRUE(as_set(silent, t).empty());
  const std::vector<Traceroute> two{trace_through({"11.0.0.1"}), trace_through({"12.0.0.1"})};
  EXPECT_EQ(as_set(two, t), (AsSet{1, 2}));
}

TEST(AsSet, PrivateAndUnroutedHopsAreDropped) {
  const auto t = table_of("10.0.0.0/8\t1\n192.168.0.0/16\t2\n12.0.0.0/8\t3\n");
  const std::vector<Traceroute> tr{trace_through({"10.0.0.1", "192.168.1.1", "198.51.100.7", "12.0.0.1"})};
  EXPECT_EQ(as_set(tr, t), (AsSet{3}));
  EXPECT_TRUE(is_private(parse_ip("fe80::1")));
  EXPECT_TRUE(is_private(parse_ip("100.64.3.1")));
  EXPECT_FALSE(is_private(parse_ip("198.51.100.7")));
  EXPECT_FALSE(is_private(parse_ip("2001:db8::1")));
}

TEST(AsSet, HopOrderDoesNotMatter) {
  const auto t = table_of("11.0.0.0/8\t1\n12.0.0.0/8\t2\n13.0.0.0/8\t3\n14.0.0.0/8\t4\n");
  Rng rng{5};
  std::vector<std::optional<std::string>> hops{"11.0.0.1", std::nullopt, "12.0.0.1", "13.9.9.9", "14.0.0.1",
                                               "10.0.0.1", "12.0.0.2"};
  const std::vector<Traceroute> base{trace_through(hops)};
  const auto expected = as_set(base, t);
  for (int i = 0; i < 100; ++i) {
    std::shuffle(hops.begin(), hops.end(), rng);
    const std::vector<Traceroute> permuted{trace_through(hops)};
    ASSERT_EQ(as_set(permuted, t), expected);
  }
}

TEST(Lambda, Examples) {
  EXPECT_EQ(lambda({1, 2, 3}, {2, 3, 4}), 0.25);
  EXPECT_EQ(lambda({5, 6}, {5, 6}), 0.0);
  EXPECT_EQ(lambda({1}, {2}), 0.5);
  EXPECT_EQ(lambda({1, 2}, {}), 1.0);
  EXPECT_EQ(lambda({}, {3}), 0.0);
  EXPECT_THROW(lambda({}, {}), DomainError);
}

TEST(Lambda, RangeAndUnitCharacterization) {
  Rng rng{2020};
  for (int i = 0; i < 10'000; ++i) {
    const auto d = random_set(rng), w = random_set(rng);
    if (d.empty() && w.empty()) continue;
    const double l = lambda(d, w);
    ASSERT_GE(l, 0.0);
    ASSERT_LE(l, 1.0);
    ASSERT_EQ(l == 1.0, w.empty() && !d.empty());
  }
}

TEST(Traceroutes, ParsingAndErrors) {
  std::istringstream ok(
      R"({"target":"192.0.2.1","proto":"tcp","site":"a.example","role":"web","hops":[{"ttl":1,"ip":"11.0.0.1"},{"ttl":3,"ip":null},{"ttl":4}]})"
      "\n");
  const auto ts = parse_traceroutes(ok);
  ASSERT_EQ(ts.size(), 1u);
  EXPECT_EQ(ts[0].hops.size(), 3u);
  EXPECT_FALSE(ts[0].hops[1].ip);
  std::istringstream bad_ttl(
      R"({"target":"192.0.2.1","proto":"tcp","site":"a.example","role":"web","hops":[{"ttl":2,"ip":null},{"ttl":2,"ip":null}]})");
  EXPECT_THROW(parse_traceroutes(bad_ttl), ParseError);
  std::istringstream bad_role(R"({"target":"192.0.2.1","proto":"tcp","site":"a.example","role":"x","hops":[]})");
  EXPECT_THROW(parse_traceroutes(bad_role), ParseError);
  std::istringstream bad_json("{not json\n");
  EXPECT_THROW(parse_traceroutes(bad_json), ParseError);
}

TEST(ExposureReport, FixtureMatchesHandComputation) {
  const auto table = load_routing_table(kFixtures + "routes.tsv");
  const auto traces = load_traceroutes(kFixtures + "traces.jsonl");
  const auto rep = exposure_report({}, traces, table);
  std::ifstream expected(kFixtures + "expected.csv");
  std::string line;
  std::getline(expected, line);
  std::size_t i = 0;
  while (std::getline(expected, line)) {
    const auto f = csv::split(line, ',');
    ASSERT_LT(i, rep.results.size());
    const auto& r = rep.results[i++];
    EXPECT_EQ(r.site, f[0]);
    EXPECT_EQ(r.lambda, std::stod(f[1]) / std::stod(f[2])) << r.site;
    EXPECT_EQ(join_asns(r.d_set), f[3]) << r.site;
    EXPECT_EQ(join_asns(r.w_set), f[4]) << r.site;
  }
  EXPECT_EQ(i, rep.results.size());
  ASSERT_EQ(rep.skipped.size(), 1u);
  EXPECT_EQ(rep.skipped[0].site, "s11.example");
  EXPECT_EQ(rep.unique_dns_ases, 10u);
  EXPECT_EQ(rep.unique_web_ases, 9u);

  std::ostringstream csv_out;
  write_exposure_csv(csv_out, rep);
  std::ifstream golden(kFixtures + "exposure.expected.csv");
  std::stringstream golden_text;
  golden_text << golden.rdbuf();
  EXPECT_EQ(csv_out.str(), golden_text.str());
}

TEST(ExposureReport, DnsInsideWebGivesStepAtZero) {
  const auto t = table_of("11.0.0.0/8\t1\n12.0.0.0/8\t2\n");
  std::vector<Traceroute> traces;
  for (const char* site : {"a.example", "b.example", "c.example"}) {
    auto w = trace_through({"11.0.0.1", "12.0.0.1"});
    auto d = trace_through({"12.0.0.1"}, TraceRole::Dns);
    w.site = d.site = site;
    traces.push_back(w);
    traces.push_back(d);
  }
  const auto rep = exposure_report({}, traces, t);
  ASSERT_EQ(rep.cdf.size(), 1u);
  EXPECT_EQ(rep.cdf[0].lambda, 0.0);
  EXPECT_EQ(rep.cdf[0].fraction, 1.0);
}

TEST(ExposureReport, DelegationsFilterDnsTraces) {
  const auto table = load_routing_table(kFixtures + "routes.tsv");
  const auto traces = load_traceroutes(kFixtures + "traces.jsonl");
  std::istringstream del("s01.example\t13.0.0.9\ns10.example\t13.0.0.53\n");
  const auto d = parse_delegations(del);
  const std::vector<std::string> sites{"s01.example", "s10.example", "s02.example", "missing.example"};
  const auto rep = exposure_report(sites, traces, table, &d);
  ASSERT_EQ(rep.results.size(), 2u);
  EXPECT_EQ(rep.results[0].lambda, 0.25);
  EXPECT_EQ(rep.results[1].d_set, (AsSet{3}));
  EXPECT_EQ(rep.results[1].lambda, 1.0 / 3.0);
  ASSERT_EQ(rep.skipped.size(), 2u);
  EXPECT_EQ(rep.skipped[0].reason, "no dns traceroute");
  EXPECT_EQ(rep.skipped[1].reason, "no traceroutes");
}
