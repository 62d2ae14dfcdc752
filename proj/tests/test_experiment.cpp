#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "rwre/experiment.hpp"

using namespace rwre;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("rwre_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> errors_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.errors();
  }
  return {};
}

bool any_contains(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

const char* kSmallRate = R"({
  "kind": "rate",
  "range": "nn:d=1",
  "environment": {"model": "iid", "kappa": 0.2},
  "horizons": [32, 64, 128, 256],
  "directions": [[-0.5], [0.0], [0.25], [0.5]],
  "seeds": [3]
})";

}  // namespace

TEST(ParseConfig, MinimalGeometryGetsDefaults) {
  auto c = parse_config(R"({"kind": "geometry", "range": "nn:d=2", "horizons": [10]})");
  EXPECT_EQ(c.kind, "geometry");
  EXPECT_EQ(c.model, "homogeneous");
  EXPECT_DOUBLE_EQ(c.kappa, 0.25);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0}));
  EXPECT_EQ(c.checks, (std::vector<std::string>{"reach-hull-identity", "gauge-sandwich", "bridge-bounds"}));
  EXPECT_EQ(c.budget_mb, 2048u);
}

TEST(ParseConfig, RepeatedHorizonIsNonIncreasing) {
  auto e = errors_of(R"({"kind": "geometry", "horizons": [8, 8]})");
  ASSERT_EQ(e.size(), 1u);
  EXPECT_NE(e[0].find("non-increasing"), std::string::npos);
}

TEST(ParseConfig, CollectsEveryError) {
  auto e = errors_of(R"({
    "kind": "rate",
    "colour": 1,
    "environment": {"model": "iid", "kappa": 0.2, "sigma": 2},
    "horizons": [64, 32],
    "seeds": [],
    "tolerances": {"convex": -1, "bogus": 1},
    "checks": ["convexity", "convexity", "nope"]
  })");
  EXPECT_TRUE(any_contains(e, "colour"));
  EXPECT_TRUE(any_contains(e, "sigma"));
  EXPECT_TRUE(any_contains(e, "non-increasing"));
  EXPECT_TRUE(any_contains(e, "seed list is empty"));
  EXPECT_TRUE(any_contains(e, "'convex' must be positive"));
  EXPECT_TRUE(any_contains(e, "bogus"));
  EXPECT_TRUE(any_contains(e, "listed twice"));
  EXPECT_TRUE(any_contains(e, "'nope' does not exist"));
  EXPECT_TRUE(any_contains(e, "directions"));
  EXPECT_GE(e.size(), 9u);
}

TEST(ParseConfig, MissingKindAndBadJson) {
  EXPECT_TRUE(any_contains(errors_of(R"({"range": "nn:d=1"})"), "kind"));
  EXPECT_TRUE(any_contains(errors_of("{"), "malformed"));
  EXPECT_TRUE(any_contains(errors_of(R"({"kind": "teleport"})"), "unknown experiment kind"));
  EXPECT_TRUE(any_contains(errors_of(R"({"kind": "geometry", "range": "hex:d=2", "horizons": [3]})"), "range"));
  EXPECT_TRUE(any_contains(errors_of(R"({"kind": "rate", "range": "nn:d=2", "horizons": [1,2,3,4], "directions": [[0.1]]})"),
                           "wrong dimension"));
}

TEST(ParseConfig, RoundTripsThroughSerialize) {
  const char* full = R"({
    "kind": "ldp",
    "range": "nn:d=1",
    "environment": {"model": "spin-flip", "kappa": 0.2, "density": 0.4, "flip": 0.2,
                    "occupied": [0.7, 0.3], "vacant": [0.3, 0.7]},
    "horizons": [16, 32, 64, 128],
    "directions": [[0.4], [0.5], [0.6]],
    "sets": [{"lo": [0.4], "hi": [0.6], "kind": "closed"}, {"lo": [0.4], "hi": [0.6], "kind": "open"}],
    "seeds": [5, 6],
    "tolerances": {"ldp_slack": 0.07},
    "output": "somewhere"
  })";
  const auto a = parse_config(full);
  const auto b = parse_config(serialize_config(a));
  EXPECT_EQ(a, b);
  EXPECT_EQ(serialize_config(a), serialize_config(b));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_DOUBLE_EQ(a.tolerance("ldp_slack"), 0.07);
  EXPECT_DOUBLE_EQ(a.tolerance("cramer"), 0.02);
  auto moved = a;
  moved.output = "elsewhere";
  moved.budget_mb = 7;
  EXPECT_EQ(config_hash(moved), config_hash(a));
  moved.seeds = {9, 10};
  EXPECT_NE(config_hash(moved), config_hash(a));
}

TEST(SlabCache, ColdWarmVersionBumpAndCorruption) {
  const auto dir = scratch("cache");
  SlabCache cache(dir);
  DiscreteEnvSpec s;
  s.model = EnvModel::iid;
  s.range = JumpRange::nearest_neighbor(1);
  s.kappa = 0.2;
  int calls = 0;
  auto produce = [&] {
    ++calls;
    return forward_solve(EnvironmentField(s), 20);
  };
  const std::vector<std::int64_t> keep{10};
  const auto key = SlabCache::key(s.canonical(), 20, keep);
  auto cold = cache.get(key, produce);
  EXPECT_EQ(calls, 1);
  auto warm = cache.get(key, produce);
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(cache.hits(), 1u);
  EXPECT_EQ(serialize_table(cold), serialize_table(warm));

  const auto bumped = SlabCache::key(s.canonical(), 20, keep, "9.9.9");
  EXPECT_NE(bumped, key);
  cache.get(bumped, produce);
  EXPECT_EQ(calls, 2);

  {
    std::fstream f(dir / (key + ".tbl"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    f.put('#');
  }
  auto again = cache.get(key, produce);
  EXPECT_EQ(calls, 3);
  EXPECT_EQ(cache.corrupt(), 1u);
  EXPECT_EQ(serialize_table(again), serialize_table(cold));
  cache.get(key, produce);
  EXPECT_EQ(calls, 3);
}

namespace {

RunManifest sample_manifest() {
  RunManifest m;
  m.kind = "rate";
  m.config_hash = "0123456789abcdef";
  CheckResult a{"convexity", "midpoint convexity of the limit", 0.001, 0.02, "<=", Verdict::pass, ""};
  CheckResult b{"lipschitz", "Lipschitz bound", -0.3, 0.01, "<=", Verdict::pass, ""};
  m.checks = {a, b};
  return m;
}

}  // namespace

TEST(Report, AllPass) {
  auto m = sample_manifest();
  const auto r = report(m);
  EXPECT_NE(r.find("convexity"), std::string::npos);
  EXPECT_NE(r.find("midpoint convexity of the limit"), std::string::npos);
  EXPECT_NE(r.find("summary: 2 pass, 0 fail, 0 skipped -> PASS"), std::string::npos);
  EXPECT_EQ(std::count(r.begin(), r.end(), '\n'), 4);
  EXPECT_EQ(m.exit_code(), 0);
}

TEST(Report, OneFail) {
  auto m = sample_manifest();
  m.checks[1].measured = 0.5;
  m.checks[1].verdict = Verdict::fail;
  const auto r = report(m);
  EXPECT_NE(r.find("0.5"), std::string::npos);
  EXPECT_NE(r.find(" fail"), std::string::npos);
  EXPECT_NE(r.find("summary: 1 pass, 1 fail, 0 skipped -> FAIL"), std::string::npos);
  EXPECT_EQ(m.exit_code(), 1);
  EXPECT_FALSE(to_json(m)["passed"].get<bool>());
}

TEST(Report, ResourceSkip) {
  auto m = sample_manifest();
  m.checks[1].verdict = Verdict::skipped;
  m.checks[1].measured = kInf;
  m.checks[1].detail = "resource limit: too big";
  m.resource_hints = {"raise --budget-mb"};
  const auto r = report(m);
  EXPECT_NE(r.find("skipped  (resource limit: too big)"), std::string::npos);
  EXPECT_NE(r.find("summary: 1 pass, 0 fail, 1 skipped -> PASS"), std::string::npos);
  const auto j = to_json(m);
  EXPECT_EQ(j["checks"][1]["measured"], "inf");
  EXPECT_EQ(j["resource_hints"][0], "raise --budget-mb");
}

TEST(Run, GeometryNearestNeighbor) {
  const auto out = scratch("geometry");
  auto c = parse_config(R"({"kind": "geometry", "range": "nn:d=2", "horizons": [10]})");
  RunOptions o;
  o.out_dir = out.string();
  auto m = run(c, o);
  ASSERT_EQ(m.checks.size(), 3u);
  EXPECT_EQ(m.checks[0].name, "reach-hull-identity");
  EXPECT_EQ(m.checks[0].verdict, Verdict::pass);
  EXPECT_EQ(m.checks[1].verdict, Verdict::pass);
  EXPECT_EQ(m.checks[2].verdict, Verdict::skipped);
  EXPECT_EQ(m.exit_code(), 0);
  EXPECT_TRUE(fs::exists(out / "reach.csv"));
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  auto j = json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(j["config_hash"], config_hash(c));
  EXPECT_EQ(j["module_versions"].size(), 6u);
}

TEST(Run, FairWalkRateReportsCramer) {
  const auto out = scratch("fair");
  auto c = parse_config(R"({"kind": "rate", "range": "nn:d=1", "environment": {"model": "homogeneous"},
                            "horizons": [128, 256, 512, 1024],
                            "directions": [[-0.5], [0.0], [0.25], [0.5]]})");
  RunOptions o;
  o.out_dir = out.string();
  auto m = run(c, o);
  for (const auto& ck : m.checks) EXPECT_EQ(ck.verdict, Verdict::pass) << ck.name << " " << ck.detail;
  auto it = std::find_if(m.checks.begin(), m.checks.end(), [](const CheckResult& r) { return r.name == "cramer-limit"; });
  ASSERT_NE(it, m.checks.end());
  EXPECT_LE(it->measured, 5e-3);
  EXPECT_TRUE(fs::exists(out / "rate_curve.csv"));
}

TEST(Run, ArtifactsCarryHashAndNoTempFilesRemain) {
  const auto out = scratch("atomic");
  auto c = parse_config(kSmallRate);
  RunOptions o;
  o.out_dir = out.string();
  auto m = run(c, o);
  const auto hash = config_hash(c);
  for (const auto& e : fs::directory_iterator(out)) {
    EXPECT_NE(e.path().extension(), ".tmp");
    if (e.path().extension() != ".csv") continue;
    std::istringstream in(slurp(e.path()));
    std::string line;
    std::getline(in, line);
    EXPECT_TRUE(line.ends_with(",config_hash")) << e.path();
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      EXPECT_TRUE(line.ends_with("," + hash)) << line;
      ++rows;
    }
    EXPECT_GT(rows, 0u);
  }
  EXPECT_FALSE(m.artifacts.empty());
}

TEST(Run, RerunIsBitIdenticalAcrossThreadsAndCache) {
  auto c = parse_config(kSmallRate);
  const auto cache = scratch("rerun_cache");
  std::vector<std::string> outputs;
  int i = 0;
  for (int threads : {1, 3, 1}) {
    const auto out = scratch("rerun" + std::to_string(i++));
    RunOptions o;
    o.out_dir = out.string();
    o.threads = threads;
    o.cache_dir = cache;
    run(c, o);
    outputs.push_back(slurp(out / "rate_curve.csv"));
  }
  EXPECT_EQ(outputs[0], outputs[1]);
  EXPECT_EQ(outputs[0], outputs[2]);
}

TEST(Run, ResourceErrorSkipsWithHint) {
  const auto out = scratch("budget");
  auto c = parse_config(R"({"kind": "rate", "range": "nn:d=2", "horizons": [1000, 2000, 3000, 4000],
                            "directions": [[0.1, 0.0]], "budget_mb": 1})");
  RunOptions o;
  o.out_dir = out.string();
  auto m = run(c, o);
  ASSERT_FALSE(m.resource_hints.empty());
  EXPECT_EQ(m.checks.size(), c.checks.size());
  for (const auto& ck : m.checks) {
    EXPECT_EQ(ck.verdict, Verdict::skipped);
    EXPECT_NE(ck.detail.find("resource limit"), std::string::npos);
  }
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
}

TEST(Run, SeedOverrideChangesHash) {
  auto c = parse_config(kSmallRate);
  const auto out = scratch("seed");
  RunOptions o;
  o.out_dir = out.string();
  o.seed = 77;
  auto m = run(c, o);
  auto c2 = c;
  c2.seeds = {77};
  EXPECT_EQ(m.config_hash, config_hash(c2));
}
