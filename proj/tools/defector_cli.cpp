#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "defector/defector.hpp"

#ifndef DEFECTOR_VERSION
#define DEFECTOR_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace defector;

namespace {

// ---------------------------------------------------------------------------
// Flags and configuration keys

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

const std::vector<FlagSpec> kCommonFlags = {
    {"--seed", "seed", "master seed"},
    {"--workers", "workers", "worker threads"},
    {"--desk-scale", "desk_scale", "divide dataset counts by this factor"},
};

const std::vector<FlagSpec> kModelFlags = {
    {"--popularity", "popularity.label", "pc, pr, uc or ur"},
    {"--pop-kind", "popularity.kind", "power or uniform (with --alpha and --pop-sites)"},
    {"--alpha", "popularity.alpha", "power-law exponent"},
    {"--pop-sites", "popularity.n_sites", "catalog size"},
    {"--visits", "network.visits_per_10min", "network-wide visits per ten minutes"},
    {"--scale", "network.scale", "network size multiplier"},
    {"--pct", "attacker.pct", "share of exit bandwidth observed"},
    {"--window", "window.length", "DNS window in seconds"},
};

const std::vector<FlagSpec> kExperimentFlags = {
    {"--monitored", "experiment.monitored", "monitored sites (before desk scaling)"},
    {"--instances", "experiment.instances", "instances per monitored site (before desk scaling)"},
    {"--unmonitored", "experiment.unmonitored", "unmonitored sites (before desk scaling)"},
    {"--folds", "experiment.folds", "cross-validation folds"},
    {"--start-rank", "experiment.start_rank", "monitored sites start after this rank"},
    {"--attacks", "experiment.attacks", "comma list of wf, ctw, hp"},
    {"--separability", "experiment.separability", "synthetic trace separability in [0, 1]"},
    {"--k", "knn.k", "neighbors that must agree"},
    {"--rounds", "knn.rounds", "weight-learning rounds"},
    {"--random-weights", "knn.random_weights", "with 0 rounds, draw random weights (true/false)"},
};

const std::vector<FlagSpec> kCorpusFlags = {
    {"--sites", "corpus.sites", "sites in the synthetic corpus"},
    {"--mean-domains", "corpus.mean_domains", "mean domains per site"},
    {"--median-domains", "corpus.median_domains", "median domains per site"},
    {"--unique-fraction", "corpus.unique_fraction", "share of sites with a unique domain"},
    {"--crossvalidate", "dnsmap.crossvalidate", "also cross-validate the DNS mapping (true/false)"},
    {"--cv-monitored", "dnsmap.monitored", "monitored sites for cross-validation"},
    {"--cv-unmonitored", "dnsmap.unmonitored", "unmonitored sites for cross-validation"},
    {"--cv-folds", "dnsmap.folds", "cross-validation folds"},
    {"--cv-samples", "dnsmap.samples", "samples per monitored site"},
    {"--cv-drop", "dnsmap.drop_prob", "per-domain drop probability in samples"},
    {"--events", "events.horizon", "also dump this many seconds of visit events"},
    {"--exits", "network.exits", "equal-weight exits for the event dump"},
    {"--ttl-mode", "ttl.mode", "exit cache policy for the DNS dump: clip or bug"},
    {"--ttl-min", "ttl.min", "minimum cache lifetime in seconds"},
    {"--ttl-max", "ttl.max", "maximum cache lifetime in seconds"},
};

const std::vector<FlagSpec> kSweepFlags = {
    {"--axis", "sweep.axis", "pct, start_rank, rounds, window, scale or distribution"},
    {"--values", "sweep.values", "comma list of axis values"},
};

const std::vector<FlagSpec> kExposureFlags = {
    {"--routes", "exposure.routes", "routing snapshot (prefix<TAB>asn)"},
    {"--traces", "exposure.traces", "traceroutes (JSON lines)"},
    {"--delegations", "exposure.delegations", "authoritative servers per site"},
    {"--sites", "exposure.sites", "site list, one per line"},
};

const std::vector<FlagSpec> kPathsimFlags = {
    {"--relays", "pathsim.relays", "relays (JSON lines)"},
    {"--ingress", "pathsim.ingress", "client-to-guard AS paths (CSV)"},
    {"--egress", "pathsim.egress", "exit-to-destination AS paths (CSV)"},
    {"--ns-targets", "pathsim.ns_targets", "name servers per destination domain"},
    {"--clients", "pathsim.clients", "simulated clients"},
    {"--days", "pathsim.days", "simulated days"},
    {"--scenarios", "pathsim.scenarios", "comma list of isp, google, local, statusquo"},
    {"--client-asns", "pathsim.client_asns", "comma list of client ASes, assigned round robin"},
    {"--tz-offset", "pathsim.tz_offset", "schedule timezone offset in hours (recorded)"},
};

std::set<std::string> known_keys() {
  std::set<std::string> keys;
  for (const auto* group : {&kCommonFlags, &kModelFlags, &kExperimentFlags, &kCorpusFlags, &kSweepFlags,
                            &kExposureFlags, &kPathsimFlags}) {
    for (const auto& f : *group) keys.insert(f.key);
  }
  keys.insert("eval.traces");
  return keys;
}

// ---------------------------------------------------------------------------
// Files and digests

std::string sha256_bytes(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Digest of a file, or of every file under a directory (relative path and
/// contents, in path order).
std::string digest_path(const fs::path& p) {
  if (!fs::is_directory(p)) return sha256_bytes(read_file(p));
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += fs::relative(f, p).generic_string() + '\n' + sha256_bytes(read_file(f)) + '\n';
  return sha256_bytes(acc);
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << content;
  if (!out) throw DataError("write failed for " + p.string());
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Run context shared by the subcommands

struct Run {
  std::string command;
  Config config;
  fs::path out;
  std::string started = utc_now();
  json inputs = json::object();
  json params = json::object();

  std::uint64_t seed() const { return config.get_uint("seed", 1); }
  std::size_t workers() const { return config.get_uint("workers", 1); }

  void input(const std::string& name, const fs::path& p) {
    if (!fs::exists(p)) throw DataError("input not found: " + p.string());
    inputs[name] = {{"path", p.string()}, {"sha256", digest_path(p)}};
  }

  void write_manifest(const fs::path& dir) const {
    json m;
    m["command"] = command;
    m["version"] = DEFECTOR_VERSION;
    m["seed"] = seed();
    m["config"] = config.values();
    m["parameters"] = params;
    m["inputs"] = inputs;
    m["started"] = started;
    m["finished"] = utc_now();
    write_file(dir / "manifest.json", m.dump(2) + "\n");
  }
};

std::string require(const Config& c, const std::string& key, const char* flag) {
  auto v = c.get_string(key, "");
  if (v.empty()) throw ConfigError(std::string("missing required ") + flag);
  return v;
}

ExperimentConfig experiment_from(const Config& c) {
  ExperimentConfig e;
  e.monitored_count = c.get_uint("experiment.monitored", e.monitored_count);
  e.instances_per_site = c.get_uint("experiment.instances", e.instances_per_site);
  e.unmonitored_count = c.get_uint("experiment.unmonitored", e.unmonitored_count);
  e.folds = c.get_uint("experiment.folds", e.folds);
  e.start_rank = c.get_uint("experiment.start_rank", e.start_rank);
  e.attacks.clear();
  for (const auto& a : c.get_list("experiment.attacks", {"wf", "ctw", "hp"})) e.attacks.push_back(parse_attack_kind(a));
  e.separability = c.get_double("experiment.separability", e.separability);
  e.pct = c.get_double("attacker.pct", e.pct);
  e.window = c.get_double("window.length", e.window);
  e.scale = c.get_double("network.scale", e.scale);
  e.visits_per_10min = c.get_double("network.visits_per_10min", e.visits_per_10min);
  e.popularity = c.get_string("popularity.label", e.popularity);
  if (c.has("popularity.kind")) {
    e.popularity = c.get_string("popularity.kind", "");
    if (e.popularity != "power" && e.popularity != "uniform") throw ConfigError("popularity.kind must be power or uniform");
  }
  e.pop_alpha = c.get_double("popularity.alpha", e.pop_alpha);
  e.pop_sites = c.get_uint("popularity.n_sites", e.pop_sites);
  e.knn.k = c.get_uint("knn.k", e.knn.k);
  e.knn.rounds = c.get_uint("knn.rounds", e.knn.rounds);
  e.random_weights = c.get_bool("knn.random_weights", false);
  e.seed = c.get_uint("seed", 1);
  e.desk_scale = c.get_uint("desk_scale", 20);
  e.workers = c.get_uint("workers", 1);
  if (e.workers == 0) throw ConfigError("workers must be positive");
  if (!(e.separability >= 0.0 && e.separability <= 1.0)) throw ConfigError("separability must lie in [0, 1]");
  return e;
}

json describe(const ExperimentConfig& e) {
  json attacks = json::array();
  for (auto a : e.attacks) attacks.push_back(to_string(a));
  return {{"monitored_sites", e.monitored()},
          {"instances_per_site", e.instances()},
          {"unmonitored_sites", e.unmonitored()},
          {"folds", e.folds},
          {"start_rank", e.start_rank},
          {"attacks", attacks},
          {"pct", e.pct},
          {"window", e.window},
          {"scale", e.scale},
          {"visits_per_10min", e.visits_per_10min},
          {"popularity", e.popularity},
          {"pop_alpha", e.pop_alpha},
          {"pop_sites", e.pop_sites},
          {"k", e.knn.k},
          {"rounds", e.knn.rounds},
          {"random_weights", e.random_weights},
          {"separability", e.separability},
          {"desk_scale", e.desk_scale}};
}

// ---------------------------------------------------------------------------
// Subcommands

TtlPolicy ttl_policy_from(const Config& c) {
  TtlPolicy p;
  const auto mode = c.get_string("ttl.mode", "clip");
  if (mode == "bug") {
    p.mode = TtlMode::Bug;
  } else if (mode != "clip") {
    throw ConfigError("ttl.mode must be clip or bug, not '" + mode + "'");
  }
  const auto min = c.get_uint("ttl.min", p.min_ttl), max = c.get_uint("ttl.max", p.max_ttl);
  if (min > std::numeric_limits<std::uint32_t>::max() || max > std::numeric_limits<std::uint32_t>::max()) {
    throw ConfigError("ttl bounds out of range");
  }
  p.min_ttl = static_cast<std::uint32_t>(min);
  p.max_ttl = static_cast<std::uint32_t>(max);
  p.validate();
  return p;
}

void cmd_gen_corpus(Run& run) {
  const auto& c = run.config;
  CorpusStats stats;
  stats.mean_domains = c.get_double("corpus.mean_domains", stats.mean_domains);
  stats.median_domains = c.get_double("corpus.median_domains", stats.median_domains);
  stats.unique_fraction = c.get_double("corpus.unique_fraction", stats.unique_fraction);
  const auto n = c.get_uint("corpus.sites", 10'000);
  Rng rng{derive_seed(run.seed(), {1})};
  const Corpus corpus = generate_synthetic(n, stats, rng);
  std::ostringstream ss;
  write_corpus(ss, corpus);
  write_file(run.out / "corpus.tsv", ss.str());
  run.params["corpus"] = {{"sites", n},
                          {"mean_domains", stats.mean_domains},
                          {"median_domains", stats.median_domains},
                          {"unique_fraction_target", stats.unique_fraction},
                          {"unique_fraction", unique_site_fraction(corpus)}};

  if (c.get_bool("dnsmap.crossvalidate", false)) {
    DnsMapCvOptions opt;
    opt.folds = c.get_uint("dnsmap.folds", opt.folds);
    opt.samples_per_site = c.get_uint("dnsmap.samples", opt.samples_per_site);
    opt.drop_prob = c.get_double("dnsmap.drop_prob", opt.drop_prob);
    opt.workers = run.workers();
    const auto m = c.get_uint("dnsmap.monitored", std::min<std::uint64_t>(100, n));
    const auto u = c.get_uint("dnsmap.unmonitored", std::min<std::uint64_t>(500, n - m));
    SiteSet monitored;
    for (std::uint64_t r = 1; r <= m; ++r) monitored.insert(SiteId{r});
    const auto cv = crossvalidate(corpus, monitored, u, opt, derive_seed(run.seed(), {2}));
    std::ostringstream cs;
    cs << "fold,tp,fp,tn,fn,recall,precision\n";
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
      const auto& k = cv.folds[f].counts;
      cs << f << ',' << k.tp << ',' << k.fp << ',' << k.tn << ',' << k.fn << ',' << csv::num(k.recall()) << ','
         << csv::num(k.precision()) << '\n';
    }
    write_file(run.out / "dnsmap_cv.csv", cs.str());
    run.params["dnsmap"] = {{"monitored", m},     {"unmonitored", u},           {"folds", opt.folds},
                            {"samples", opt.samples_per_site}, {"drop_prob", opt.drop_prob}};
  }

  if (const auto horizon = c.get_double("events.horizon", 0.0); horizon > 0.0) {
    const ExperimentConfig e = experiment_from(c);
    const auto net = NetworkModel::with_equal_exits(c.get_uint("network.exits", 10), e.visits_per_10min, e.scale);
    const auto events = generate_visits(net, make_popularity(e), horizon, derive_seed(run.seed(), {3}), run.workers());
    std::ostringstream es;
    es << "time,site,exit\n";
    for (const auto& v : events) es << csv::num(v.time) << ',' << v.site.rank << ',' << v.exit_id << '\n';
    write_file(run.out / "events.csv", es.str());

    // Exit-side DNS requests (cache misses) for visits to sites in the corpus.
    const TtlPolicy policy = ttl_policy_from(c);
    std::vector<VisitEvent> covered;
    std::copy_if(events.begin(), events.end(), std::back_inserter(covered),
                 [&](const VisitEvent& v) { return corpus.contains(v.site); });
    auto caches = make_caches(net);
    const auto requests = expand_to_dns(covered, corpus, caches, policy);
    std::ostringstream ds;
    ds << "time,exit,domain\n";
    for (const auto& r : requests) ds << csv::num(r.time) << ',' << r.exit_id << ',' << r.domain << '\n';
    write_file(run.out / "dns.csv", ds.str());
    run.params["events"] = {{"horizon", horizon},
                            {"exits", net.n_exits()},
                            {"count", events.size()},
                            {"in_corpus", covered.size()},
                            {"dns_requests", requests.size()},
                            {"ttl", {{"mode", policy.mode == TtlMode::Bug ? "bug" : "clip"},
                                     {"min", policy.min_ttl},
                                     {"max", policy.max_ttl}}}};
  }
}

void cmd_gen_traces(Run& run) {
  const ExperimentConfig e = experiment_from(run.config);
  if (e.desk_scale == 0 || e.monitored_count % e.desk_scale || e.instances_per_site % e.desk_scale ||
      e.unmonitored_count % e.desk_scale) {
    throw ConfigError("desk_scale must divide the monitored, instance and unmonitored counts");
  }
  Rng rng{derive_seed(e.seed, {PreparedData::kDataStream})};
  auto traces = generate_traces(e.monitored(), e.instances(), e.separability, rng, e.workers);
  auto un = generate_unmonitored_traces(e.unmonitored(), e.separability, rng, e.workers);
  traces.insert(traces.end(), un.begin(), un.end());
  save_trace_dataset(run.out, traces);
  run.params = describe(e);
}

void write_eval_outputs(const fs::path& dir, const std::vector<std::pair<std::string, EvalResult>>& points,
                        const std::string& axis, std::size_t desk_scale) {
  std::ostringstream rs, ss;
  write_results_header(rs);
  write_summary_header(ss);
  for (const auto& [value, r] : points) {
    write_results_rows(rs, r, axis, value);
    write_summary_rows(ss, r, axis, value, desk_scale);
  }
  write_file(dir / "results.csv", rs.str());
  write_file(dir / "summary.csv", ss.str());
}

void cmd_eval(Run& run) {
  const ExperimentConfig e = experiment_from(run.config);
  std::shared_ptr<const PreparedData> data;
  if (const auto dir = run.config.get_string("eval.traces", ""); !dir.empty()) {
    run.input("traces", dir);
    const auto traces = load_trace_dataset(dir);
    data = PreparedData::build(e, &traces);
  } else {
    data = PreparedData::build(e);
  }
  const EvalResult r = run_experiment(e, *data);
  write_eval_outputs(run.out, {{"-", r}}, "none", e.desk_scale);
  std::ostringstream vs;
  write_verdict_log(vs, r);
  write_file(run.out / "verdicts.csv", vs.str());
  run.params = describe(e);
}

void cmd_sweep(Run& run) {
  const ExperimentConfig e = experiment_from(run.config);
  const auto axis = parse_axis(require(run.config, "sweep.axis", "--axis"));
  const auto values = run.config.get_list("sweep.values", {});
  if (values.empty()) throw ConfigError("missing required --values");
  const auto points = sweep(e, axis, values);
  std::vector<std::pair<std::string, EvalResult>> rows;
  for (const auto& p : points) rows.emplace_back(p.value, p.result);
  write_eval_outputs(run.out, rows, to_string(axis), e.desk_scale);
  run.params = describe(e);
  run.params["axis"] = to_string(axis);
  run.params["values"] = values;
}

void cmd_exposure(Run& run) {
  const auto& c = run.config;
  const auto routes = require(c, "exposure.routes", "--routes");
  const auto traces_path = require(c, "exposure.traces", "--traces");
  run.input("routes", routes);
  run.input("traces", traces_path);
  const RoutingTable table = load_routing_table(routes);
  const auto traces = load_traceroutes(traces_path);
  std::optional<Delegations> delegations;
  if (auto d = c.get_string("exposure.delegations", ""); !d.empty()) {
    run.input("delegations", d);
    delegations = load_delegations(d);
  }
  std::vector<std::string> sites;
  if (auto s = c.get_string("exposure.sites", ""); !s.empty()) {
    run.input("sites", s);
    std::ifstream in(s);
    std::string line;
    while (std::getline(in, line)) {
      if (auto t = csv::trim(line); !t.empty()) sites.push_back(t);
    }
  }
  const auto rep = exposure_report(sites, traces, table, delegations ? &*delegations : nullptr);
  for (const auto& sk : rep.skipped) std::cerr << "warning: skipped " << sk.site << ": " << sk.reason << '\n';

  // --out naming a .csv file puts the table there and the rest beside it.
  fs::path table_path = run.out / "exposure.csv";
  std::string prefix;
  if (run.out.extension() == ".csv") {
    table_path = run.out;
    prefix = run.out.stem().string() + "_";
    run.out = run.out.has_parent_path() ? run.out.parent_path() : fs::path(".");
  }
  std::ostringstream ts, cs, ks;
  write_exposure_csv(ts, rep);
  write_exposure_cdf(cs, rep);
  ks << "site,reason\n";
  for (const auto& sk : rep.skipped) ks << sk.site << ',' << sk.reason << '\n';
  write_file(table_path, ts.str());
  write_file(run.out / (prefix + "cdf.csv"), cs.str());
  write_file(run.out / (prefix + "skipped.csv"), ks.str());
  run.params = {{"sites", rep.results.size()},
                {"skipped", rep.skipped.size()},
                {"unique_dns_ases", rep.unique_dns_ases},
                {"unique_web_ases", rep.unique_web_ases},
                {"ignored_dns_traces", rep.ignored_dns_traces}};
}

void cmd_pathsim(Run& run) {
  const auto& c = run.config;
  SimWorld world;
  const auto relays = require(c, "pathsim.relays", "--relays");
  const auto ingress = require(c, "pathsim.ingress", "--ingress");
  const auto egress = require(c, "pathsim.egress", "--egress");
  run.input("relays", relays);
  run.input("ingress", ingress);
  run.input("egress", egress);
  world.relays = load_relays(relays);
  world.ingress = load_path_map(ingress);
  world.egress = load_path_map(egress);
  if (auto ns = c.get_string("pathsim.ns_targets", ""); !ns.empty()) {
    run.input("ns_targets", ns);
    world.ns_targets = load_ns_targets(ns);
  }
  world.schedule.tz_offset_hours = c.get_double("pathsim.tz_offset", world.schedule.tz_offset_hours);
  if (c.has("pathsim.client_asns")) {
    world.client_asns.clear();
    for (const auto& a : c.get_list("pathsim.client_asns", {})) {
      world.client_asns.push_back(csv::parse_int<Asn>(a, 0, "client ASN"));
    }
  }
  SimOptions opt;
  opt.clients = c.get_uint("pathsim.clients", opt.clients);
  opt.days = static_cast<std::uint32_t>(c.get_uint("pathsim.days", opt.days));
  opt.seed = run.seed();
  opt.workers = run.workers();
  std::vector<DnsScenario> scenarios;
  std::vector<std::string> names;
  for (const auto& s : c.get_list("pathsim.scenarios", {"isp", "google", "local", "statusquo"})) {
    scenarios.push_back(parse_scenario(s));
    names.push_back(s);
  }
  const auto runs = scenario_compare(world, scenarios, opt);
  std::ostringstream cs, ss;
  write_client_csv(cs, runs);
  write_scenario_summary(ss, runs);
  write_file(run.out / "clients.csv", cs.str());
  write_file(run.out / "summary.csv", ss.str());
  run.params = {{"clients", opt.clients},
                {"days", opt.days},
                {"scenarios", names},
                {"client_asns", world.client_asns},
                {"tz_offset_hours", world.schedule.tz_offset_hours},
                {"visits_per_day", world.schedule.visits_per_day()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DNS-assisted website fingerprinting toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DEFECTOR_VERSION);

  std::map<std::string, std::string> overrides;
  std::string config_path;
  std::string out;

  auto add_flags = [&](CLI::App* sub, const std::vector<FlagSpec>& flags) {
    for (const auto& f : flags) {
      sub->add_option_function<std::string>(f.flag, [&overrides, key = std::string(f.key)](const std::string& v) {
        overrides[key] = v;
      }, f.help);
    }
  };

  struct Sub {
    const char* name;
    const char* help;
    std::vector<const std::vector<FlagSpec>*> groups;
    void (*fn)(Run&);
  };
  const std::vector<Sub> subs = {
      {"gen-corpus", "generate a synthetic domain corpus", {&kModelFlags, &kCorpusFlags}, cmd_gen_corpus},
      {"gen-traces", "generate a synthetic trace dataset", {&kExperimentFlags}, cmd_gen_traces},
      {"eval", "run wf, ctw and hp with cross-validation", {&kModelFlags, &kExperimentFlags}, cmd_eval},
      {"sweep", "run one experiment per axis value", {&kModelFlags, &kExperimentFlags, &kSweepFlags}, cmd_sweep},
      {"exposure", "per-site DNS-only AS exposure", {&kExposureFlags}, cmd_exposure},
      {"pathsim", "simulate clients under DNS configurations", {&kPathsimFlags}, cmd_pathsim},
  };
  std::map<std::string, CLI::App*> handles;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "flat key = value configuration file");
    sub->add_option("--out", out, "output directory")->required();
    add_flags(sub, kCommonFlags);
    for (const auto* g : s.groups) add_flags(sub, *g);
    if (std::string(s.name) == "eval") {
      sub->add_option_function<std::string>("--traces", [&overrides](const std::string& v) {
        overrides["eval.traces"] = v;
      }, "trace dataset directory (default: synthesize)");
    }
    handles[s.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    Run run;
    for (const auto& s : subs) {
      if (!handles[s.name]->parsed()) continue;
      run.command = s.name;
      if (!config_path.empty()) {
        run.config = Config::load(config_path);
        run.input("config", config_path);
      }
      for (const auto& [k, v] : overrides) run.config.set(k, v);
      run.config.require_known(known_keys());
      run.out = out;
      s.fn(run);
      run.write_manifest(fs::is_directory(run.out) ? run.out : run.out.parent_path());
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
