#pragma once

// Deterministic geometry of jump ranges: reach sets, the convex hull U and
// its Minkowski gauge, minimal step counts, bridge times, toward-zero
// rounding and the even-lattice isomorphism.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/rational.hpp>

#include "rwre/core.hpp"

namespace rwre {

using Rational = boost::rational<std::int64_t>;

enum class RangeKind { convex_symmetric, nearest_neighbor };

/// Half-space <normal, x> <= offset, with offset > 0 and gcd-reduced entries.
struct Facet {
  Point normal;
  std::int64_t offset = 1;
  friend auto operator<=>(const Facet&, const Facet&) = default;
};

namespace detail {

inline std::int64_t dot(const Point& a, const Point& b) {
  std::int64_t s = 0;
  for (int i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

inline std::int64_t det(std::vector<std::vector<std::int64_t>> m) {
  const std::size_t n = m.size();
  if (n == 0) return 1;
  if (n == 1) return m[0][0];
  if (n == 2) return m[0][0] * m[1][1] - m[0][1] * m[1][0];
  std::int64_t s = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<std::vector<std::int64_t>> minor;
    for (std::size_t r = 1; r < n; ++r) {
      std::vector<std::int64_t> row;
      for (std::size_t k = 0; k < n; ++k)
        if (k != c) row.push_back(m[r][k]);
      minor.push_back(std::move(row));
    }
    std::int64_t sub = m[0][c] * det(std::move(minor));
    s += (c % 2 == 0) ? sub : -sub;
  }
  return s;
}

// Vector orthogonal to the d-1 given difference vectors (generalized cross
// product); zero when they are linearly dependent.
inline Point normal_of(const std::vector<Point>& diffs, int dim) {
  Point n(dim);
  for (int i = 0; i < dim; ++i) {
    std::vector<std::vector<std::int64_t>> m;
    for (const auto& v : diffs) {
      std::vector<std::int64_t> row;
      for (int k = 0; k < dim; ++k)
        if (k != i) row.push_back(v[k]);
      m.push_back(std::move(row));
    }
    std::int64_t c = det(std::move(m));
    n[i] = (i % 2 == 0) ? c : -c;
  }
  return n;
}

inline int rank(std::vector<std::vector<Rational>> m) {
  int r = 0;
  const int rows = static_cast<int>(m.size());
  const int cols = rows ? static_cast<int>(m[0].size()) : 0;
  for (int c = 0; c < cols && r < rows; ++c) {
    int piv = -1;
    for (int i = r; i < rows; ++i)
      if (m[i][c] != Rational(0)) {
        piv = i;
        break;
      }
    if (piv < 0) continue;
    std::swap(m[r], m[piv]);
    for (int i = 0; i < rows; ++i) {
      if (i == r || m[i][c] == Rational(0)) continue;
      Rational f = m[i][c] / m[r][c];
      for (int k = c; k < cols; ++k) m[i][k] -= f * m[r][k];
    }
    ++r;
  }
  return r;
}

template <class F>
void for_each_combination(std::size_t n, std::size_t k, F&& f) {
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  if (k > n) return;
  while (true) {
    f(idx);
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

template <class F>
void for_each_in_cube(int dim, std::int64_t radius, F&& f) {
  Box box(dim, radius);
  for (std::size_t i = 0; i < box.size(); ++i) f(box.point(i));
}

inline std::vector<Facet> facets_of(std::span<const Point> pts, int dim) {
  std::set<Facet> out;
  bool flat = true;
  for_each_combination(pts.size(), static_cast<std::size_t>(dim), [&](const auto& idx) {
    std::vector<Point> diffs;
    for (std::size_t j = 1; j < idx.size(); ++j) diffs.push_back(pts[idx[j]] - pts[idx[0]]);
    Point n = normal_of(diffs, dim);
    if (n.is_zero()) return;
    std::int64_t b = dot(n, pts[idx[0]]);
    bool le = true, ge = true, strict = false;
    for (const auto& q : pts) {
      std::int64_t v = dot(n, q);
      if (v > b) le = false;
      if (v < b) ge = false;
      if (v != b) strict = true;
    }
    if (!strict) return;
    flat = false;
    if (!le && !ge) return;
    if (!le) {
      n = -n;
      b = -b;
    }
    if (b <= 0) throw Error("origin is not in the interior of the hull of the steps");
    std::int64_t g = b;
    for (auto v : n) g = std::gcd(g, v < 0 ? -v : v);
    for (int i = 0; i < dim; ++i) n[i] /= g;
    out.insert(Facet{n, b / g});
  });
  if (flat || out.empty()) throw Error("degenerate hull: steps do not span the space");
  return {out.begin(), out.end()};
}

}  // namespace detail

/// Convex polytope with integer vertices, symmetric about the origin, given
/// by both its vertex and its facet description.
class Polytope {
 public:
  Polytope() = default;

  /// Hull of a finite point set. Throws on a degenerate hull or when the
  /// origin is not an interior point.
  static Polytope hull_of(std::span<const Point> pts) {
    if (pts.empty()) throw Error("empty point set");
    const int dim = pts.front().dim();
    for (const auto& p : pts)
      if (p.dim() != dim) throw Error("dimension mismatch");
    Polytope u;
    u.dim_ = dim;
    u.facets_ = detail::facets_of(pts, dim);
    for (const auto& p : pts) {
      std::vector<std::vector<Rational>> active;
      for (const auto& f : u.facets_)
        if (detail::dot(f.normal, p) == f.offset)
          active.emplace_back(f.normal.begin(), f.normal.end());
      if (!active.empty() && detail::rank(active) == dim) u.vertices_.push_back(p);
    }
    std::sort(u.vertices_.begin(), u.vertices_.end());
    u.vertices_.erase(std::unique(u.vertices_.begin(), u.vertices_.end()), u.vertices_.end());
    if (detail::facets_of(u.vertices_, dim) != u.facets_)
      throw Error("vertex and facet descriptions disagree");
    for (const auto& v : u.vertices_)
      if (std::find(u.vertices_.begin(), u.vertices_.end(), -v) == u.vertices_.end())
        throw Error("hull is not symmetric about the origin");
    return u;
  }

  int dim() const noexcept { return dim_; }
  const std::vector<Point>& vertices() const noexcept { return vertices_; }
  const std::vector<Facet>& facets() const noexcept { return facets_; }

  /// Minkowski gauge inf{a >= 0 : x in aU}.
  double gauge(const Vec& x) const {
    double g = 0.0;
    for (const auto& f : facets_) {
      double s = 0;
      for (int i = 0; i < dim_; ++i) s += static_cast<double>(f.normal[i]) * x[i];
      g = std::max(g, s / static_cast<double>(f.offset));
    }
    return g;
  }

  Rational gauge(const Point& x) const {
    Rational g(0);
    for (const auto& f : facets_) g = std::max(g, Rational(detail::dot(f.normal, x), f.offset));
    return g;
  }

  bool contains(const Point& x, std::int64_t scale = 1) const {
    return std::all_of(facets_.begin(), facets_.end(),
                       [&](const Facet& f) { return detail::dot(f.normal, x) <= scale * f.offset; });
  }

 private:
  int dim_ = 1;
  std::vector<Point> vertices_;
  std::vector<Facet> facets_;
};

/// Finite symmetric step set R, either the lattice points of a convex body
/// with the origin inside, or the 2d unit vectors.
class JumpRange {
 public:
  JumpRange() : JumpRange(nearest_neighbor(1)) {}

  static JumpRange nearest_neighbor(int dim) {
    std::vector<Point> steps;
    for (int i = 0; i < dim; ++i)
      for (int s : {-1, 1}) {
        Point e(dim);
        e[i] = s;
        steps.push_back(e);
      }
    return JumpRange(RangeKind::nearest_neighbor, std::move(steps));
  }

  /// Convex-symmetric range. `steps` must equal hull(steps) ∩ Z^d.
  static JumpRange convex(std::vector<Point> steps) {
    return JumpRange(RangeKind::convex_symmetric, std::move(steps));
  }

  /// All lattice points of the cube [-r, r]^d.
  static JumpRange cube(int dim, std::int64_t r = 1) {
    std::vector<Point> steps;
    detail::for_each_in_cube(dim, r, [&](const Point& p) { steps.push_back(p); });
    return convex(std::move(steps));
  }

  /// `nn:d=2`, `cube:d=2,r=1` or `hull:d=2;steps=(0,0),(1,0),(-1,0),...`
  static JumpRange parse(const std::string& text) {
    static const std::regex nn_re(R"(\s*nn\s*:\s*d\s*=\s*(\d+)\s*)");
    static const std::regex cube_re(R"(\s*cube\s*:\s*d\s*=\s*(\d+)\s*,\s*r\s*=\s*(\d+)\s*)");
    static const std::regex hull_re(R"(\s*hull\s*:\s*d\s*=\s*(\d+)\s*;\s*steps\s*=\s*(.*))");
    static const std::regex tuple_re(R"(\(([^()]*)\))");
    std::smatch m;
    if (std::regex_match(text, m, nn_re)) return nearest_neighbor(std::stoi(m[1]));
    if (std::regex_match(text, m, cube_re)) return cube(std::stoi(m[1]), std::stoll(m[2]));
    if (!std::regex_match(text, m, hull_re)) throw Error("unrecognized jump range: " + text);
    const int dim = std::stoi(m[1]);
    std::string body = m[2];
    std::vector<Point> steps;
    for (std::sregex_iterator it(body.begin(), body.end(), tuple_re), end; it != end; ++it) {
      std::vector<std::int64_t> coords;
      std::stringstream ss((*it)[1].str());
      std::string tok;
      while (std::getline(ss, tok, ',')) coords.push_back(std::stoll(tok));
      if (static_cast<int>(coords.size()) != dim)
        throw Error("step " + (*it)[0].str() + " has wrong dimension");
      steps.push_back(Point::from(coords));
    }
    return convex(std::move(steps));
  }

  std::string to_string() const {
    if (kind_ == RangeKind::nearest_neighbor) return "nn:d=" + std::to_string(dim_);
    std::string s = "hull:d=" + std::to_string(dim_) + ";steps=";
    for (std::size_t i = 0; i < steps_.size(); ++i) s += (i ? "," : "") + rwre::to_string(steps_[i]);
    return s;
  }

  RangeKind kind() const noexcept { return kind_; }
  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return steps_.size(); }
  const std::vector<Point>& steps() const noexcept { return steps_; }
  const Polytope& hull() const noexcept { return hull_; }
  /// Largest |step|_inf.
  std::int64_t reach() const noexcept { return reach_; }

  std::optional<std::size_t> index_of(const Point& e) const {
    auto it = std::lower_bound(steps_.begin(), steps_.end(), e);
    if (it == steps_.end() || *it != e) return std::nullopt;
    return static_cast<std::size_t>(it - steps_.begin());
  }

  /// x ∈ R_n.
  bool reachable(const Point& x, std::int64_t n) const {
    if (x.dim() != dim_) throw Error("dimension mismatch");
    if (n < 0) return false;
    if (n == 0) return x.is_zero();
    if (kind_ == RangeKind::nearest_neighbor) {
      auto s = l1_norm(x);
      return s <= n && (s - n) % 2 == 0;
    }
    return hull_.contains(x, n);
  }

  friend bool operator==(const JumpRange& a, const JumpRange& b) {
    return a.kind_ == b.kind_ && a.steps_ == b.steps_;
  }

 private:
  JumpRange(RangeKind kind, std::vector<Point> steps) : kind_(kind), steps_(std::move(steps)) {
    if (steps_.empty()) throw Error("empty jump range");
    dim_ = steps_.front().dim();
    for (const auto& s : steps_)
      if (s.dim() != dim_) throw Error("dimension mismatch in jump range");
    std::sort(steps_.begin(), steps_.end());
    if (std::adjacent_find(steps_.begin(), steps_.end()) != steps_.end())
      throw Error("duplicate step in jump range");
    for (const auto& s : steps_)
      if (!std::binary_search(steps_.begin(), steps_.end(), -s)) throw Error("jump range is not symmetric");
    reach_ = 0;
    for (const auto& s : steps_) reach_ = std::max(reach_, linf_norm(s));
    hull_ = Polytope::hull_of(steps_);
    if (kind_ == RangeKind::convex_symmetric) {
      detail::for_each_in_cube(dim_, reach_, [&](const Point& p) {
        if (hull_.contains(p) && !std::binary_search(steps_.begin(), steps_.end(), p))
          throw Error("jump range is not convex: missing lattice point " + rwre::to_string(p));
      });
    }
  }

  RangeKind kind_ = RangeKind::nearest_neighbor;
  int dim_ = 1;
  std::vector<Point> steps_;
  Polytope hull_;
  std::int64_t reach_ = 1;
};

// ---------------------------------------------------------------------------
// reach sets

/// R_n as a dense bitmask over the cube [-n*reach, n*reach]^d.
class ReachSet {
 public:
  ReachSet(std::int64_t n, Box box) : n_(n), box_(box), bits_(box.size(), false) {}

  std::int64_t steps() const noexcept { return n_; }
  const Box& box() const noexcept { return box_; }
  bool contains(const Point& p) const {
    auto i = box_.index(p);
    return i && bits_[*i];
  }
  void insert(const Point& p) { bits_[*box_.index(p)] = true; }
  std::size_t size() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true)); }

  std::vector<Point> points() const {
    std::vector<Point> out;
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) out.push_back(box_.point(i));
    return out;
  }

 private:
  std::int64_t n_;
  Box box_;
  std::vector<bool> bits_;
};

/// R_0 = {0}, R_{n+1} = R_n + R.
inline ReachSet reach_set(const JumpRange& range, std::int64_t n) {
  if (n < 0) throw Error("negative step count");
  const int d = range.dim();
  ReachSet cur(0, Box(d, 0));
  cur.insert(Point(d));
  for (std::int64_t k = 1; k <= n; ++k) {
    ReachSet next(k, Box(d, k * range.reach()));
    for (const auto& x : cur.points())
      for (const auto& e : range.steps()) next.insert(x + e);
    cur = std::move(next);
  }
  return cur;
}

inline const Polytope& hull_u(const JumpRange& range) { return range.hull(); }

inline double gauge_norm(const Polytope& u, const Vec& x) {
  if (x.dim() != u.dim()) throw Error("dimension mismatch");
  return u.gauge(x);
}

/// s(x) = min{n : x ∈ R_n}. Convex ranges use s(x) = ceil(||x||), which
/// holds whenever R_n = nU ∩ Z^d.
inline std::optional<std::int64_t> min_steps(const JumpRange& range, const Point& x) {
  if (x.dim() != range.dim()) throw Error("dimension mismatch");
  if (range.kind() == RangeKind::nearest_neighbor) return l1_norm(x);
  Rational g = range.hull().gauge(x);
  auto num = g.numerator(), den = g.denominator();
  return (num + den - 1) / den;
}

/// Minimal step count no larger than `horizon`; nullopt when x ∉ R_horizon.
inline std::optional<std::int64_t> min_steps_within(const JumpRange& range, const Point& x,
                                                    std::int64_t horizon) {
  auto s = min_steps(range, x);
  if (!s || *s > horizon) return std::nullopt;
  if (range.kind() == RangeKind::nearest_neighbor && !range.reachable(x, horizon)) return std::nullopt;
  return s;
}

/// [x]: componentwise truncation toward zero.
inline Point truncate(const Vec& x) {
  Point p(x.dim());
  for (int i = 0; i < x.dim(); ++i) p[i] = static_cast<std::int64_t>(std::trunc(x[i]));
  return p;
}

inline Vec scaled(const Vec& x, double s) {
  Vec v = x;
  for (int i = 0; i < v.dim(); ++i) v[i] *= s;
  return v;
}

/// Upper bound on the bridge time: n + 9/(1-||x||) + n||x-z||/(1-||x||).
inline double bridge_bound(std::int64_t n, const Vec& z, const Vec& x, const Polytope& u) {
  double gx = u.gauge(x);
  return static_cast<double>(n) + 9.0 / (1.0 - gx) + static_cast<double>(n) * u.gauge(x - z) / (1.0 - gx);
}

namespace detail {
inline void check_bridge_args(const JumpRange& range, std::int64_t n, const Vec& z, const Vec& x) {
  if (range.kind() != RangeKind::convex_symmetric) throw Error("bridge times need a convex range");
  if (n < 1) throw Error("bridge time needs n >= 1");
  if (range.hull().gauge(x) >= 1.0) throw Error("x is not in the interior of U");
  if (range.hull().gauge(z) > 1.0 + 1e-12) throw Error("z is not in U");
}
}  // namespace detail

/// Smallest n2 >= n with s([n2 x] - [n z]) <= n2 - n, i.e. the first time an
/// admissible path from (n, [nz]) reaches the ray through x.
inline std::int64_t bridge_time_up(const JumpRange& range, std::int64_t n, const Vec& z, const Vec& x) {
  detail::check_bridge_args(range, n, z, x);
  const Point from = truncate(scaled(z, static_cast<double>(n)));
  const auto limit = static_cast<std::int64_t>(std::ceil(bridge_bound(n, z, x, range.hull()))) + 1;
  for (std::int64_t n2 = n; n2 <= limit; ++n2) {
    Point to = truncate(scaled(x, static_cast<double>(n2)));
    if (*min_steps(range, to - from) <= n2 - n) return n2;
  }
  throw Error("no admissible bridge within the guaranteed bound");
}

/// Largest n1 <= n with s([n z] - [n1 x]) <= n - n1.
inline std::int64_t bridge_time_down(const JumpRange& range, std::int64_t n, const Vec& z, const Vec& x) {
  detail::check_bridge_args(range, n, z, x);
  const Point to = truncate(scaled(z, static_cast<double>(n)));
  for (std::int64_t n1 = n; n1 >= 0; --n1) {
    Point from = truncate(scaled(x, static_cast<double>(n1)));
    if (*min_steps(range, to - from) <= n - n1) return n1;
  }
  throw Error("no admissible bridge from the ray through x");
}

/// Lower bound on bridge_time_down: n - 9/(1-||x||) - n||z-x||/(1-||x||).
inline double bridge_bound_down(std::int64_t n, const Vec& z, const Vec& x, const Polytope& u) {
  double gx = u.gauge(x);
  return static_cast<double>(n) - 9.0 / (1.0 - gx) - static_cast<double>(n) * u.gauge(z - x) / (1.0 - gx);
}

// ---------------------------------------------------------------------------
// even lattice

using IntMatrix = std::array<std::array<std::int64_t, kMaxDim>, kMaxDim>;

inline bool is_even(const Point& x) {
  std::int64_t s = 0;
  for (auto v : x) s += v;
  return s % 2 == 0;
}

/// Basis f_1..f_d of Z^d_even = {x : sum x_i even} and the isomorphism h
/// with h(f_i) = e_i. The basis is e1+e2, e1-e2, e1+e3, ..., e1+ed (d >= 2)
/// and {2} for d = 1. h is stored as h_num / 2.
struct EvenLatticeIso {
  int dim = 1;
  IntMatrix basis{};  // column i is f_i
  IntMatrix h_num{};  // 2 * basis^{-1}

  Point column(int i) const {
    Point f(dim);
    for (int r = 0; r < dim; ++r) f[r] = basis[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)];
    return f;
  }

  std::int64_t determinant() const {
    std::vector<std::vector<std::int64_t>> m(static_cast<std::size_t>(dim));
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c) m[r].push_back(basis[r][c]);
    return detail::det(m);
  }

  /// h on Z^d_even.
  Point forward(const Point& x) const {
    if (!is_even(x)) throw Error("point " + to_string(x) + " is not in the even lattice");
    Point y(dim);
    for (int r = 0; r < dim; ++r) {
      std::int64_t s = 0;
      for (int c = 0; c < dim; ++c) s += h_num[r][c] * x[c];
      y[r] = s / 2;
    }
    return y;
  }

  /// h extended linearly to R^d.
  Vec forward(const Vec& x) const {
    Vec y(dim);
    for (int r = 0; r < dim; ++r) {
      double s = 0;
      for (int c = 0; c < dim; ++c) s += static_cast<double>(h_num[r][c]) * x[c];
      y[r] = s / 2.0;
    }
    return y;
  }

  Point inverse(const Point& y) const {
    Point x(dim);
    for (int r = 0; r < dim; ++r) {
      std::int64_t s = 0;
      for (int c = 0; c < dim; ++c) s += basis[r][c] * y[c];
      x[r] = s;
    }
    return x;
  }
};

inline EvenLatticeIso even_lattice_iso(int dim) {
  if (dim < 1 || dim > kMaxDim) throw Error("dimension must be in [1, 4]");
  EvenLatticeIso iso;
  iso.dim = dim;
  if (dim == 1) {
    iso.basis[0][0] = 2;
    iso.h_num[0][0] = 1;
    return iso;
  }
  iso.basis[0][0] = 1;
  iso.basis[1][0] = 1;
  iso.basis[0][1] = 1;
  iso.basis[1][1] = -1;
  for (int i = 2; i < dim; ++i) {
    iso.basis[0][i] = 1;
    iso.basis[i][i] = 1;
  }
  // Gauss-Jordan over the rationals for basis^{-1}.
  std::vector<std::vector<Rational>> a(static_cast<std::size_t>(dim), std::vector<Rational>(2 * dim));
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) a[r][c] = iso.basis[r][c];
    a[r][dim + r] = 1;
  }
  for (int c = 0; c < dim; ++c) {
    int piv = c;
    while (a[piv][c] == Rational(0)) ++piv;
    std::swap(a[c], a[piv]);
    Rational p = a[c][c];
    for (auto& v : a[c]) v /= p;
    for (int r = 0; r < dim; ++r) {
      if (r == c || a[r][c] == Rational(0)) continue;
      Rational f = a[r][c];
      for (int k = 0; k < 2 * dim; ++k) a[r][k] -= f * a[c][k];
    }
  }
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) {
      Rational v = a[r][dim + c] * 2;
      if (v.denominator() != 1) throw Error("even-lattice inverse is not half-integral");
      iso.h_num[r][c] = v.numerator();
    }
  return iso;
}

/// Jump range of Y_n = h(X_{2n}) for a nearest-neighbor walk X: h(R_2).
/// (Increments of Y are two-step increments of X, so the range is h(R_2)
/// rather than h(R).)
inline JumpRange transformed_range(const JumpRange& nn, const EvenLatticeIso& iso) {
  if (nn.kind() != RangeKind::nearest_neighbor) throw Error("even-lattice reduction needs a nearest-neighbor range");
  std::set<Point> q;
  for (const auto& a : nn.steps())
    for (const auto& b : nn.steps()) q.insert(iso.forward(a + b));
  return JumpRange::convex({q.begin(), q.end()});
}

/// Reach-set CSV rows `n,x_1,...,x_d` for n = 0..max_n.
inline void write_reach_csv(std::ostream& os, const JumpRange& range, std::int64_t max_n,
                            const std::string& suffix = {}) {
  os << "n";
  for (int i = 1; i <= range.dim(); ++i) os << ",x_" << i;
  os << (suffix.empty() ? "" : ",config_hash") << "\n";
  for (std::int64_t n = 0; n <= max_n; ++n)
    for (const auto& p : reach_set(range, n).points()) {
      os << n;
      for (auto v : p) os << "," << v;
      if (!suffix.empty()) os << "," << suffix;
      os << "\n";
    }
}

}  // namespace rwre
