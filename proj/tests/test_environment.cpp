#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "rwre/environment.hpp"

using namespace rwre;

namespace {

DiscreteEnvSpec iid_spec(int d, double kappa, std::uint64_t seed) {
  DiscreteEnvSpec s;
  s.model = EnvModel::iid;
  s.range = JumpRange::nearest_neighbor(d);
  s.kappa = kappa;
  s.seed = seed;
  return s;
}

DiscreteEnvSpec spin_spec(std::uint64_t seed, double flip = 0.1) {
  DiscreteEnvSpec s;
  s.model = EnvModel::spin_flip;
  s.range = JumpRange::nearest_neighbor(1);
  s.kappa = 0.2;
  s.density = 0.3;
  s.flip = flip;
  s.occupied = {0.7, 0.3};
  s.vacant = {0.3, 0.7};
  s.seed = seed;
  return s;
}

}  // namespace

TEST(EnvSpec, ModelNames) {
  for (auto m : {EnvModel::homogeneous, EnvModel::iid, EnvModel::spin_flip}) EXPECT_EQ(parse_env_model(to_string(m)), m);
  EXPECT_THROW(parse_env_model("ising"), Error);
}

TEST(EnvSpec, Validation) {
  auto s = iid_spec(2, 0.3, 1);
  EXPECT_THROW(s.validate(), Error);  // 4 * 0.3 > 1
  s.kappa = 0.25;
  EXPECT_NO_THROW(s.validate());
  DiscreteEnvSpec h;
  h.range = JumpRange::nearest_neighbor(1);
  h.kappa = 0.2;
  h.weights = {0.9, 0.1};
  EXPECT_THROW(h.validate(), Error);  // entry below kappa
  h.weights = {0.6, 0.3};
  EXPECT_THROW(h.validate(), Error);  // sum
  h.weights = {0.6, 0.4};
  EXPECT_NO_THROW(h.validate());
  auto sp = spin_spec(1);
  sp.occupied = {0.9, 0.1};
  EXPECT_THROW(sp.validate(), Error);
}

TEST(Environment, IidLawsAreEllipticAndNormalized) {
  EnvironmentField f(iid_spec(2, 0.1, 5));
  std::vector<double> v(4);
  for (std::int64_t n = 0; n < 20; ++n)
    for (std::int64_t x = -5; x <= 5; ++x)
      for (std::int64_t y = -5; y <= 5; ++y) {
        f.probs(n, Point{x, y}, v);
        EXPECT_NEAR(std::accumulate(v.begin(), v.end(), 0.0), 1.0, 1e-12);
        for (double p : v) EXPECT_GE(p, 0.1 - 1e-15);
      }
}

TEST(Environment, IidIsDeterministicAndSeedDependent) {
  EnvironmentField a(iid_spec(1, 0.2, 5)), b(iid_spec(1, 0.2, 5)), c(iid_spec(1, 0.2, 6));
  EXPECT_EQ(a.env_at(3, Point{2}), b.env_at(3, Point{2}));
  EXPECT_NE(a.env_at(3, Point{2}), c.env_at(3, Point{2}));
  EXPECT_NE(a.env_at(3, Point{2}), a.env_at(4, Point{2}));
}

TEST(Environment, IidMeanIsUniform) {
  // Dirichlet(1,...,1) lifted by kappa has mean 1/|R| per coordinate
  EnvironmentField f(iid_spec(1, 0.1, 9));
  double s = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) s += f.env_at(i, Point{0})[0];
  EXPECT_NEAR(s / n, 0.5, 0.01);
}

TEST(Environment, ShiftMatchesOriginal) {
  for (auto spec : {iid_spec(2, 0.1, 3), spin_spec(4)}) {
    if (spec.model == EnvModel::spin_flip) spec.range = JumpRange::nearest_neighbor(1);
    EnvironmentField f(spec);
    const int d = spec.range.dim();
    Point z(d);
    z[0] = 3;
    auto g = f.shift(5, z);
    for (std::int64_t n = 0; n < 6; ++n) {
      Point y(d);
      y[0] = -2;
      EXPECT_EQ(g.env_at(n, y), f.env_at(n + 5, y + z));
    }
    auto gg = g.shift(2, -z);
    Point o(d);
    EXPECT_EQ(gg.env_at(1, o), f.env_at(8, o));
  }
}

TEST(Environment, LogProbsMatchProbs) {
  for (auto spec : {iid_spec(1, 0.2, 1), spin_spec(2)}) {
    EnvironmentField f(spec);
    std::vector<double> p(2), lp(2);
    for (std::int64_t n = 0; n < 10; ++n) {
      f.probs(n, Point{n}, p);
      f.log_probs(n, Point{n}, lp);
      for (int j = 0; j < 2; ++j) EXPECT_NEAR(lp[j], std::log(p[j]), 1e-15);
    }
  }
}

TEST(Environment, HomogeneousDefaultsToUniform) {
  DiscreteEnvSpec s;
  s.range = JumpRange::cube(2, 1);
  s.kappa = 1.0 / 9.0;
  EnvironmentField f(s);
  for (double p : f.env_at(7, Point{1, 1})) EXPECT_DOUBLE_EQ(p, 1.0 / 9.0);
  EXPECT_TRUE(f.homogeneous());
}

TEST(SpinFlip, StationaryDensity) {
  EnvironmentField f(spin_spec(11));
  double occ = 0;
  int cnt = 0;
  for (std::int64_t n : {0, 10, 50}) {
    for (std::int64_t x = -2000; x <= 2000; ++x) {
      occ += f.occupancy_at(n, Point{x});
      ++cnt;
    }
  }
  EXPECT_NEAR(occ / cnt, 0.3, 0.015);
}

TEST(SpinFlip, RefreshRateControlsCorrelation) {
  // P(value unchanged from n to n+1) = 1 - flip * 2 p (1 - p)
  const double p = 0.3, flip = 0.1;
  EnvironmentField f(spin_spec(12, flip));
  int same = 0, cnt = 0;
  for (std::int64_t x = -3000; x <= 3000; ++x)
    for (std::int64_t n = 0; n < 5; ++n) {
      same += f.occupancy_at(n, Point{x}) == f.occupancy_at(n + 1, Point{x});
      ++cnt;
    }
  EXPECT_NEAR(static_cast<double>(same) / cnt, 1.0 - flip * 2 * p * (1 - p), 0.01);
}

TEST(SpinFlip, FrozenWithoutFlips) {
  EnvironmentField f(spin_spec(13, 0.0));
  for (std::int64_t x = -20; x <= 20; ++x) EXPECT_EQ(f.occupancy_at(0, Point{x}), f.occupancy_at(40, Point{x}));
  EXPECT_EQ(f.env_at(0, Point{1}), f.occupancy_at(0, Point{1}) ? std::vector<double>({0.7, 0.3}) : std::vector<double>({0.3, 0.7}));
}

TEST(RateField, AffineMapIntoBounds) {
  ContinuousEnvSpec c;
  c.base = iid_spec(2, 0.05, 3);
  c.kappa1 = 0.2;
  c.kappa2 = 0.7;
  c.piece = 0.5;
  RateField f(c);
  for (double t : {0.0, 0.3, 0.5, 2.25})
    for (std::int64_t x = -3; x <= 3; ++x) {
      auto r = f.rates_at(t, Point{x, -x});
      for (double v : r) {
        EXPECT_GE(v, 0.2 - 1e-15);
        EXPECT_LE(v, 0.7 + 1e-15);
      }
      std::vector<double> p(4);
      f.discrete().probs(f.piece_index(t), Point{x, -x}, p);
      for (int j = 0; j < 4; ++j) EXPECT_NEAR(r[j], 0.2 + 0.5 * (p[j] - 0.05) / 0.8, 1e-14);
    }
}

TEST(RateField, PiecewiseConstantInTime) {
  ContinuousEnvSpec c;
  c.base = iid_spec(1, 0.1, 4);
  c.kappa1 = 0.1;
  c.kappa2 = 1.0;
  c.piece = 0.25;
  RateField f(c);
  EXPECT_EQ(f.rates_at(0.0, Point{0}), f.rates_at(0.2499, Point{0}));
  EXPECT_NE(f.rates_at(0.0, Point{0}), f.rates_at(0.25, Point{0}));
  EXPECT_DOUBLE_EQ(f.piece_end(0.0), 0.25);
  EXPECT_DOUBLE_EQ(f.piece_end(0.25), 0.5);
  EXPECT_DOUBLE_EQ(f.piece_end(0.3), 0.5);
  auto g = f.shift(0.1, Point{2});
  EXPECT_EQ(g.rates_at(0.2, Point{1}), f.rates_at(0.3, Point{3}));
  EXPECT_NEAR(g.piece_end(0.0), 0.15, 1e-15);
}

TEST(RateField, RequiresNearestNeighbor) {
  ContinuousEnvSpec c;
  c.base.range = JumpRange::cube(1, 1);
  c.base.kappa = 0.2;
  EXPECT_THROW(RateField{c}, Error);
  c.base.range = JumpRange::nearest_neighbor(1);
  c.kappa1 = 0.6;
  c.kappa2 = 0.5;
  EXPECT_THROW(RateField{c}, Error);
}

TEST(EnvCsv, Rows) {
  DiscreteEnvSpec s;
  s.range = JumpRange::nearest_neighbor(1);
  s.kappa = 0.5;
  std::ostringstream os;
  write_env_csv(os, EnvironmentField(s), 0, 0, 0, "h");
  EXPECT_EQ(os.str(), "n,x_1,e_index,prob,config_hash\n0,0,0,0.5,h\n0,0,1,0.5,h\n");
}
