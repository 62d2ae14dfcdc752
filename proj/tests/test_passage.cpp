#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "rwre/passage.hpp"

using namespace rwre;

namespace {

DiscreteEnvSpec spec(EnvModel m, JumpRange r, double kappa, std::uint64_t seed = 1) {
  DiscreteEnvSpec s;
  s.model = m;
  s.range = std::move(r);
  s.kappa = kappa;
  s.seed = seed;
  if (m == EnvModel::spin_flip) {
    s.occupied.assign(s.range.size(), 1.0 / static_cast<double>(s.range.size()));
    s.vacant = s.occupied;
    s.occupied[0] += 0.2;
    s.occupied[1] -= 0.2;
    s.density = 0.5;
    s.flip = 0.3;
  }
  return s;
}

std::vector<DiscreteEnvSpec> small_fields() {
  return {
      spec(EnvModel::homogeneous, JumpRange::nearest_neighbor(1), 0.5),
      spec(EnvModel::iid, JumpRange::nearest_neighbor(1), 0.1, 3),
      spec(EnvModel::iid, JumpRange::nearest_neighbor(2), 0.05, 4),
      spec(EnvModel::iid, JumpRange::cube(1, 1), 0.1, 5),
      spec(EnvModel::spin_flip, JumpRange::nearest_neighbor(1), 0.2, 6),
  };
}

}  // namespace

TEST(ForwardSolve, MatchesPathEnumeration) {
  for (const auto& s : small_fields()) {
    EnvironmentField f(s);
    SolveOptions o;
    o.keep_all = true;
    const std::int64_t n = s.range.dim() == 2 ? 5 : 7;
    auto t = forward_solve(f, n, o);
    for (std::int64_t m = 0; m <= n; ++m) {
      detail::for_each_in_cube(s.range.dim(), m * s.range.reach(), [&](const Point& y) {
        const double want = oracle::path_sum_prob(f, m, y);
        const double got = std::exp(t.log_prob(m, y));
        ASSERT_NEAR(got, want, 1e-14 + 1e-12 * want) << s.canonical() << " m=" << m << " y=" << to_string(y);
      });
    }
  }
}

TEST(ForwardSolve, SupportAndMass) {
  for (const auto& s : small_fields()) {
    EnvironmentField f(s);
    const std::int64_t n = 30;
    SolveOptions o;
    o.keep = {1, 10, 17};
    auto t = forward_solve(f, n, o);
    EXPECT_EQ(t.kept(), (std::vector<std::int64_t>{1, 10, 17, 30}));
    for (auto m : t.kept()) {
      EXPECT_NEAR(t.slab(m).log_mass(), 0.0, 1e-12);
      detail::for_each_in_cube(s.range.dim(), m * s.range.reach() + 1, [&](const Point& y) {
        const double a = passage(t, m, y);
        ASSERT_EQ(std::isfinite(a), s.range.reachable(y, m)) << to_string(y);
        if (std::isfinite(a)) {
          ASSERT_LE(a, -static_cast<double>(m) * std::log(s.kappa) + 1e-9);
        }
      });
    }
    EXPECT_THROW(t.slab(2), Error);
    EXPECT_THROW(t.log_prob(31, Point(s.range.dim())), Error);
  }
}

TEST(ForwardSolve, ThreadCountDoesNotChangeBits) {
  EnvironmentField f(spec(EnvModel::iid, JumpRange::nearest_neighbor(2), 0.05, 9));
  SolveOptions a, b;
  a.threads = 1;
  b.threads = 4;
  auto ta = forward_solve(f, 60, a), tb = forward_solve(f, 60, b);
  EXPECT_EQ(serialize_table(ta), serialize_table(tb));
}

TEST(ForwardSolve, FairWalkIsBinomial) {
  EnvironmentField f(spec(EnvModel::homogeneous, JumpRange::nearest_neighbor(1), 0.5));
  auto t = forward_solve(f, 400);
  for (std::int64_t y = -400; y <= 400; y += 2)
    ASSERT_NEAR(t.log_prob(400, Point{y}), oracle::log_binom_half(400, (400 + y) / 2), 1e-9 * (1 + std::abs(y)));
}

TEST(ForwardSolve, BudgetIsEnforced) {
  EnvironmentField f(spec(EnvModel::homogeneous, JumpRange::nearest_neighbor(2), 0.25));
  SolveOptions o;
  o.budget_bytes = 1 << 20;
  try {
    forward_solve(f, 2000, o);
    FAIL() << "expected a resource error";
  } catch (const ResourceError& e) {
    EXPECT_NE(e.hint().find("memory budget"), std::string::npos);
  }
}

namespace {
// A lazy walk on {-1, 0, 1} that stays put with probability 1/2.
struct LazyLaw {
  JumpRange r = JumpRange::cube(1, 1);
  const JumpRange& range() const { return r; }
  double kappa() const { return 0.25; }
  void log_probs(std::int64_t, const Point&, std::span<double> out) const {
    out[0] = std::log(0.25);
    out[1] = std::log(0.5);
    out[2] = std::log(0.25);
  }
};
static_assert(StepLaw<LazyLaw>);
}  // namespace

TEST(ForwardSolve, CustomStepLaw) {
  // a lazy step is two fair half-steps, so n lazy steps to y is Bin(2n, 1/2) at n + y
  auto t = forward_solve(LazyLaw{}, 50);
  for (std::int64_t y = -50; y <= 50; ++y)
    ASSERT_NEAR(t.log_prob(50, Point{y}), oracle::log_binom_half(100, 50 + y), 1e-10);
}

TEST(Admissibility, ProductBoundedByKappaPower) {
  EnvironmentField f(spec(EnvModel::iid, JumpRange::nearest_neighbor(2), 0.05, 2));
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    AdmissiblePath p;
    p.start_time = trial;
    p.start = Point{trial, -trial};
    for (int j = 0; j < 20; ++j) p.steps.push_back(f.range().steps()[rng() % 4]);
    auto r = is_admissible(p, f);
    EXPECT_TRUE(r.admissible);
    EXPECT_GE(r.log_product, r.log_bound - 1e-12);
  }
  AdmissiblePath bad;
  bad.start = Point{0, 0};
  bad.steps = {Point{1, 1}};
  EXPECT_FALSE(is_admissible(bad, f).admissible);
  EXPECT_EQ(bad.end(), (Point{1, 1}));
}

TEST(Subadditivity, NoViolations) {
  for (const auto& s : small_fields()) {
    EnvironmentField f(s);
    auto r = check_subadditivity(f, 10, 400, 17);
    EXPECT_EQ(r.trials, 400u);
    EXPECT_LE(r.max_violation, 1e-9) << s.canonical();
  }
}

TEST(Subadditivity, ShiftedSolveIsTheLaterSegment) {
  // a(p, m, z, y) from a shifted solve equals path enumeration started at (p, z)
  EnvironmentField f(spec(EnvModel::iid, JumpRange::nearest_neighbor(1), 0.1, 8));
  auto g = f.shift(3, Point{1});
  auto t = forward_solve(g, 5);
  for (std::int64_t y = -5; y <= 5; ++y)
    EXPECT_NEAR(std::exp(t.log_prob(5, Point{y})), oracle::path_sum_prob(g, 5, Point{y}), 1e-15);
}

TEST(Region, ContainmentAndCorners) {
  auto c = Region::interval(0.4, 0.6, false), o = Region::interval(0.4, 0.6, true);
  EXPECT_TRUE(c.contains(Vec{0.4}));
  EXPECT_FALSE(o.contains(Vec{0.4}));
  EXPECT_TRUE(o.contains(Vec{0.5}));
  EXPECT_EQ(c.extreme_points().size(), 2u);
  Region h(2);
  h.add_half_space({Vec{1.0, 1.0}, 0.5, true});
  EXPECT_TRUE(h.contains(Vec{0.1, 0.1}));
  EXPECT_FALSE(h.contains(Vec{0.25, 0.25}));
  EXPECT_TRUE(h.extreme_points().empty());
  EXPECT_FALSE(Region(1).contains(Vec{0.0}));
}

TEST(EventProb, FairWalkBinomialTail) {
  EnvironmentField f(spec(EnvModel::homogeneous, JumpRange::nearest_neighbor(1), 0.5));
  auto t = forward_solve(f, 200);
  EXPECT_NEAR(event_prob(t, 200, Region::everything(1)), 1.0, 1e-12);
  double want = 0.0;
  for (std::int64_t k = 0; k <= 200; ++k) {
    const std::int64_t y = 2 * k - 200;
    if (y >= 80 && y <= 120) want += std::exp(oracle::log_binom_half(200, k));
  }
  EXPECT_NEAR(event_prob(t, 200, Region::interval(0.4, 0.6, false)), want, 1e-12 * want);
  EXPECT_EQ(event_log_prob(t, 200, Region::interval(1.5, 2.0, false)), kNegInf);
}

TEST(TableIo, RoundTripAndChecksum) {
  EnvironmentField f(spec(EnvModel::iid, JumpRange::nearest_neighbor(2), 0.05, 2));
  SolveOptions o;
  o.keep = {3, 7};
  auto t = forward_solve(f, 12, o);
  auto bytes = serialize_table(t);
  auto back = deserialize_table(bytes);
  EXPECT_EQ(back.kept(), t.kept());
  EXPECT_EQ(back.range(), t.range());
  EXPECT_EQ(back.kappa(), t.kappa());
  EXPECT_EQ(serialize_table(back), bytes);
  bytes[bytes.size() / 2] ^= 0x1;
  EXPECT_THROW(deserialize_table(bytes), Error);
  EXPECT_THROW(deserialize_table("garbage"), Error);
}

TEST(SlabCsv, Format) {
  EnvironmentField f(spec(EnvModel::homogeneous, JumpRange::nearest_neighbor(1), 0.5));
  auto t = forward_solve(f, 1);
  std::ostringstream os;
  write_slab_csv(os, t, "h");
  EXPECT_EQ(os.str(), "m,y_1,log_pi,config_hash\n1,-1,-0.69314718055994529,h\n1,1,-0.69314718055994529,h\n");
}
