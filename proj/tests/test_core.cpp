#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <vector>

#include "rwre/core.hpp"

using namespace rwre;

TEST(Box, IndexRoundTrip) {
  for (int d = 1; d <= 3; ++d) {
    Box b(d, 3);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const Point p = b.point(i);
      ASSERT_TRUE(b.contains(p));
      ASSERT_EQ(*b.index(p), i);
    }
  }
}

TEST(Box, LexicographicOrder) {
  Box b(2, 2);
  for (std::size_t i = 1; i < b.size(); ++i) EXPECT_LT(b.point(i - 1), b.point(i));
}

TEST(Box, RowsFixLeadingCoordinates) {
  Box b(3, 2);
  EXPECT_EQ(b.rows(), 25u);
  for (std::size_t r = 0; r < b.rows(); ++r) {
    Point p = b.row_point(r);
    EXPECT_EQ(p[2], 0);
    p[2] = 2;
    EXPECT_EQ(*b.row_index(p), r);
  }
  EXPECT_FALSE(b.row_index(Point{3, 0, 0}).has_value());
}

TEST(Box, RejectsBadShape) {
  EXPECT_THROW(Box(0, 1), Error);
  EXPECT_THROW(Box(5, 1), Error);
  EXPECT_THROW(Box(2, -1), Error);
  EXPECT_FALSE(Box(2, 1).index(Point{2, 0}).has_value());
}

TEST(Point, Arithmetic) {
  Point a{1, -2}, b{3, 4};
  EXPECT_EQ(a + b, (Point{4, 2}));
  EXPECT_EQ(b - a, (Point{2, 6}));
  EXPECT_EQ(-a, (Point{-1, 2}));
  EXPECT_EQ(3 * a, (Point{3, -6}));
  EXPECT_EQ(l1_norm(a), 3);
  EXPECT_EQ(linf_norm(b), 4);
  EXPECT_DOUBLE_EQ(l2_norm(b), 5.0);
  EXPECT_EQ(to_string(a), "(1,-2)");
  EXPECT_THROW(a + Point{1}, Error);
}

TEST(LogSpace, AddAndSum) {
  EXPECT_NEAR(log_add(std::log(0.25), std::log(0.5)), std::log(0.75), 1e-15);
  EXPECT_EQ(log_add(kNegInf, kNegInf), kNegInf);
  EXPECT_DOUBLE_EQ(log_add(kNegInf, -3.0), -3.0);
  std::vector<double> xs{std::log(0.1), std::log(0.2), kNegInf, std::log(0.3)};
  EXPECT_NEAR(log_sum_exp(xs), std::log(0.6), 1e-15);
  std::vector<double> tiny{-1000.0, -1000.0};
  EXPECT_NEAR(log_sum_exp(tiny), -1000.0 + std::log(2.0), 1e-12);
  std::vector<double> none{kNegInf};
  EXPECT_EQ(log_sum_exp(none), kNegInf);
}

TEST(Hashing, FnvKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(CellRng, DeterministicAndInRange) {
  CellRng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    EXPECT_GT(u, 0.0);
    EXPECT_LE(u, 1.0);
    EXPECT_EQ(u, b.uniform());
    differs = differs || (u != c.uniform());
  }
  EXPECT_TRUE(differs);
}

TEST(CellRng, UniformMoments) {
  CellRng r(7);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n, 1.0 / 3.0, 0.005);
}

TEST(CellRng, KeysSeparateCells) {
  std::set<std::uint64_t> keys;
  for (std::int64_t n = 0; n < 20; ++n)
    for (std::int64_t x = -20; x <= 20; ++x) keys.insert(cell_key(1, 2, n, Point{x}));
  EXPECT_EQ(keys.size(), 20u * 41u);
  EXPECT_NE(cell_key(1, 2, 0, Point{0}), cell_key(2, 2, 0, Point{0}));
  EXPECT_NE(cell_key(1, 2, 0, Point{0}), cell_key(1, 3, 0, Point{0}));
}

TEST(ParallelFor, CoversRangeOnce) {
  for (int threads : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) hits[i]++;
    });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
  int calls = 0;
  parallel_for(0, 4, [&](std::size_t b, std::size_t e) {
    EXPECT_EQ(b, e);
    ++calls;
  });
  EXPECT_EQ(calls, 1);
}

TEST(Errors, ResourceErrorCarriesHint) {
  ResourceError e("too big", "raise the budget");
  EXPECT_EQ(std::string(e.what()), "too big (raise the budget)");
  EXPECT_EQ(e.hint(), "raise the budget");
}
