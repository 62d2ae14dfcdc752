#pragma once

// Rate-function estimation from passage tables and continuous-time kernels,
// and the finite-scale verification battery built on it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rwre/core.hpp"
#include "rwre/ctime.hpp"
#include "rwre/environment.hpp"
#include "rwre/lattice.hpp"
#include "rwre/passage.hpp"

namespace rwre {

// ---------------------------------------------------------------------------
// evaluation points and rate samples

/// Lattice point standing for velocity x at step n. Convex ranges use [nx].
/// Nearest-neighbor ranges use the point of R_n nearest to [nx] in l∞
/// among [nx] + {-1,0,1}^d, ties broken by the lexicographic order of the
/// offset. nullopt when no candidate is reachable.
inline std::optional<Point> evaluation_point(const JumpRange& range, const Vec& x, std::int64_t n) {
  if (x.dim() != range.dim()) throw Error("dimension mismatch");
  const Point base = truncate(scaled(x, static_cast<double>(n)));
  if (range.kind() == RangeKind::convex_symmetric) {
    if (!range.reachable(base, n)) return std::nullopt;
    return base;
  }
  if (range.reachable(base, n)) return base;
  std::optional<Point> best;
  detail::for_each_in_cube(range.dim(), 1, [&](const Point& c) {
    if (!best && !c.is_zero() && range.reachable(base + c, n)) best = base + c;
  });
  return best;
}

/// I_n(x) = a_d(0, n, 0, y*) / n; +inf when y* does not exist.
inline double rate_point(const PassageTable& table, const Vec& x, std::int64_t n) {
  if (n < 1) throw Error("rate samples need n >= 1");
  auto y = evaluation_point(table.range(), x, n);
  if (!y) return kInf;
  return passage(table, n, *y) / static_cast<double>(n);
}

/// Rate function of the fair nearest-neighbor walk in d = 1:
/// ((1+x)/2) log(1+x) + ((1-x)/2) log(1-x) on [-1, 1], +inf outside.
inline double fair_walk_rate(double x) {
  const double a = std::abs(x);
  if (a > 1.0) return kInf;
  auto term = [](double p) { return p > 0.0 ? p * std::log(2.0 * p) : 0.0; };
  return term((1.0 + a) / 2.0) + term((1.0 - a) / 2.0);
}

// ---------------------------------------------------------------------------
// extrapolation

struct InverseNFit {
  double limit = 0.0;
  double slope = 0.0;
  double residual = 0.0;
};

/// Least-squares fit v_i ≈ limit + slope / n_i over the largest half of the
/// samples (at least three when there are that many). Infinite samples give
/// an infinite limit.
inline InverseNFit fit_inverse_n(std::span<const std::int64_t> ns, std::span<const double> vs) {
  if (ns.size() != vs.size() || ns.empty()) throw Error("fit needs matching, nonempty samples");
  const std::size_t m = ns.size();
  const std::size_t first = m - std::min(m, std::max<std::size_t>(3, (m + 1) / 2));
  InverseNFit f;
  for (std::size_t i = first; i < m; ++i)
    if (!std::isfinite(vs[i])) {
      f.limit = kInf;
      return f;
    }
  const std::size_t cnt = m - first;
  if (cnt == 1) {
    f.limit = vs[m - 1];
    return f;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = first; i < m; ++i) {
    const double u = 1.0 / static_cast<double>(ns[i]);
    sx += u;
    sy += vs[i];
    sxx += u * u;
    sxy += u * vs[i];
  }
  const double c = static_cast<double>(cnt);
  const double den = c * sxx - sx * sx;
  f.slope = den != 0.0 ? (c * sxy - sx * sy) / den : 0.0;
  f.limit = (sy - f.slope * sx) / c;
  for (std::size_t i = first; i < m; ++i)
    f.residual = std::max(f.residual, std::abs(vs[i] - f.limit - f.slope / static_cast<double>(ns[i])));
  return f;
}

/// Per-direction sequences n -> I_n(x) with their extrapolated limits.
struct RateCurve {
  std::vector<Vec> directions;
  std::vector<double> gauges;
  std::vector<std::int64_t> horizons;
  std::vector<std::vector<double>> a;      // a_d(0, n, 0, y*) per direction, horizon
  std::vector<std::vector<double>> rates;  // I_n
  std::vector<double> i_hat, slope, residual;
  std::vector<bool> flagged;
  double kappa = 0.5;
  double residual_bound = 0.01;

  std::size_t size() const noexcept { return directions.size(); }
  std::optional<std::size_t> find(const Vec& x, double tol = 1e-12) const {
    for (std::size_t i = 0; i < directions.size(); ++i) {
      double dmax = 0;
      for (int c = 0; c < x.dim(); ++c) dmax = std::max(dmax, std::abs(directions[i][c] - x[c]));
      if (dmax <= tol) return i;
    }
    return std::nullopt;
  }
};

/// Fits I_n ≈ Î + c/n for every direction. Î is clipped to [0, |log κ|]
/// inside U; a residual above the bound flags the direction.
inline void extrapolate(RateCurve& curve) {
  const std::size_t k = curve.size();
  curve.i_hat.assign(k, 0.0);
  curve.slope.assign(k, 0.0);
  curve.residual.assign(k, 0.0);
  curve.flagged.assign(k, false);
  if (curve.horizons.size() < 4) throw Error("extrapolation needs at least four horizons");
  const double cap = std::abs(std::log(curve.kappa));
  for (std::size_t i = 0; i < k; ++i) {
    auto fit = fit_inverse_n(curve.horizons, curve.rates[i]);
    double v = fit.limit;
    if (curve.gauges[i] <= 1.0 + 1e-12 && std::isfinite(v)) v = std::clamp(v, 0.0, cap);
    curve.i_hat[i] = v;
    curve.slope[i] = fit.slope;
    curve.residual[i] = fit.residual;
    curve.flagged[i] = fit.residual > curve.residual_bound;
  }
}

inline RateCurve build_rate_curve(const PassageTable& table, std::span<const Vec> directions,
                                  std::span<const std::int64_t> horizons, double residual_bound = 0.01) {
  for (std::size_t i = 1; i < horizons.size(); ++i)
    if (horizons[i] <= horizons[i - 1]) throw Error("horizons must be strictly increasing");
  RateCurve c;
  c.directions.assign(directions.begin(), directions.end());
  c.horizons.assign(horizons.begin(), horizons.end());
  c.kappa = table.kappa();
  c.residual_bound = residual_bound;
  for (const auto& x : directions) {
    c.gauges.push_back(gauge_norm(table.range().hull(), x));
    std::vector<double> as, is;
    for (auto n : horizons) {
      double r = rate_point(table, x, n);
      as.push_back(r * static_cast<double>(n));
      is.push_back(r);
    }
    c.a.push_back(std::move(as));
    c.rates.push_back(std::move(is));
  }
  if (horizons.size() >= 4) extrapolate(c);
  return c;
}

/// Solves once up to the largest horizon, retaining every listed slab.
inline PassageTable solve_for_horizons(const EnvironmentField& field, std::span<const std::int64_t> horizons,
                                       SolveOptions opt = {}) {
  if (horizons.empty()) throw Error("empty horizon list");
  opt.keep.insert(opt.keep.end(), horizons.begin(), horizons.end());
  return forward_solve(field, *std::max_element(horizons.begin(), horizons.end()), opt);
}

/// CSV `direction_index,x_1..x_d,n,a_d,I_n,I_hat,residual`.
inline void write_rate_curve_csv(std::ostream& os, const RateCurve& c, const std::string& config_hash = {}) {
  const int d = c.directions.empty() ? 1 : c.directions.front().dim();
  os << "direction_index";
  for (int i = 1; i <= d; ++i) os << ",x_" << i;
  os << ",n,a_d,I_n,I_hat,residual" << (config_hash.empty() ? "" : ",config_hash") << "\n";
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t h = 0; h < c.horizons.size(); ++h) {
      os << i;
      for (double v : c.directions[i]) os << "," << num(v);
      os << "," << c.horizons[h] << "," << num(c.a[i][h]) << "," << num(c.rates[i][h]);
      os << "," << num(c.i_hat.empty() ? kInf : c.i_hat[i]) << "," << num(c.residual.empty() ? 0.0 : c.residual[i]);
      if (!config_hash.empty()) os << "," << config_hash;
      os << "\n";
    }
}

// ---------------------------------------------------------------------------
// boundary values

struct BoundaryValue {
  Vec x;
  double value = kInf;
  std::vector<Vec> approach;
  std::vector<double> sequence;
  std::string rule;
};

/// Value on ∂U as the minimum of Î over the last two approach points
/// x_k = (1 - 2^-k) x, k = 1..k_max. Outside U the value is +inf.
inline BoundaryValue boundary_extend(const PassageTable& table, std::span<const std::int64_t> horizons, const Vec& x,
                                     int k_max = 8) {
  BoundaryValue b;
  b.x = x;
  b.rule = "x_k = (1 - 2^-k) x, k = 1.." + std::to_string(k_max) + "; min over the last two";
  const double g = gauge_norm(table.range().hull(), x);
  if (g > 1.0 + 1e-9) return b;
  if (g < 1.0 - 1e-9) throw Error("boundary extension needs a point on the boundary of U");
  if (k_max < 2) throw Error("need at least two approach points");
  for (int k = 1; k <= k_max; ++k) b.approach.push_back(scaled(x, 1.0 - std::ldexp(1.0, -k)));
  auto curve = build_rate_curve(table, b.approach, horizons);
  b.sequence = curve.i_hat;
  b.value = std::min(b.sequence[b.sequence.size() - 1], b.sequence[b.sequence.size() - 2]);
  return b;
}

// ---------------------------------------------------------------------------
// convexity and Lipschitz bounds

struct ConvexityReport {
  double max_violation = -kInf;
  std::size_t triples = 0;
};

/// Largest Î((x+y)/2) - (Î(x) + Î(y))/2 over every triple of directions in
/// which one is the midpoint of the other two.
inline ConvexityReport convexity_check(const RateCurve& c) {
  ConvexityReport r;
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      Vec mid = scaled(c.directions[i] + c.directions[j], 0.5);
      auto m = c.find(mid, 1e-9);
      if (!m || !std::isfinite(c.i_hat[i]) || !std::isfinite(c.i_hat[j])) continue;
      r.max_violation = std::max(r.max_violation, c.i_hat[*m] - 0.5 * (c.i_hat[i] + c.i_hat[j]));
      ++r.triples;
    }
  return r;
}

struct LipschitzReport {
  /// max of |Î(x) - Î(z)| - C(z) b ||x - z||; the bound holds when <= slack.
  double max_excess = -kInf;
  std::size_t pairs = 0;
};

inline double lipschitz_constant(double gauge_z) { return 2.0 / (1.0 - gauge_z); }

/// Checks |Î(x) - Î(z)| <= C(z) b ||x - z|| with b = -log κ for every
/// direction x within `radius` of z (gauge distance) that satisfies
/// 1/(1 - ||x||) <= 2/(1 - ||z||).
inline LipschitzReport lipschitz_check(const RateCurve& c, const Polytope& u, std::span<const std::size_t> zs,
                                       double radius) {
  LipschitzReport r;
  const double b = -std::log(c.kappa);
  for (auto zi : zs) {
    const double gz = c.gauges[zi];
    if (gz >= 1.0) throw Error("Lipschitz reference point must be interior");
    for (std::size_t xi = 0; xi < c.size(); ++xi) {
      const double gx = c.gauges[xi];
      if (xi == zi || gx >= 1.0 || 1.0 / (1.0 - gx) > 2.0 / (1.0 - gz)) continue;
      const double dist = u.gauge(c.directions[xi] - c.directions[zi]);
      if (dist > radius) continue;
      r.max_excess = std::max(r.max_excess, std::abs(c.i_hat[xi] - c.i_hat[zi]) - lipschitz_constant(gz) * b * dist);
      ++r.pairs;
    }
  }
  return r;
}

/// m -> a_d(0, mk, 0, my) is subadditive on homogeneous fields; returns the
/// largest a(m1 + m2) - a(m1) - a(m2) over m1 + m2 <= max_m.
inline double rational_direction_defect(const PassageTable& t, const Point& y, std::int64_t k, std::int64_t max_m) {
  double worst = -kInf;
  auto a = [&](std::int64_t m) { return passage(t, m * k, m * y); };
  for (std::int64_t m1 = 1; m1 < max_m; ++m1)
    for (std::int64_t m2 = 1; m1 + m2 <= max_m; ++m2) worst = std::max(worst, a(m1 + m2) - a(m1) - a(m2));
  return worst;
}

// ---------------------------------------------------------------------------
// continuous-time profiles

/// a_c(0, t, 0, y) = -log e(0, t, 0, y).
inline double ct_passage(const CtKernelSlab& s, const Point& y) { return -s.log_value(y); }

/// Lattice points of tK for an axis-aligned box K.
inline std::vector<Point> scaled_box_points(std::span<const Interval> k, double t) {
  const int d = static_cast<int>(k.size());
  std::vector<std::int64_t> lo(k.size()), hi(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) {
    lo[i] = static_cast<std::int64_t>(std::ceil(k[i].lo * t - 1e-9));
    hi[i] = static_cast<std::int64_t>(std::floor(k[i].hi * t + 1e-9));
  }
  std::vector<Point> out;
  Point p(d);
  std::function<void(int)> rec = [&](int i) {
    if (i == d) {
      out.push_back(p);
      return;
    }
    for (auto v = lo[static_cast<std::size_t>(i)]; v <= hi[static_cast<std::size_t>(i)]; ++v) {
      p[i] = v;
      rec(i + 1);
    }
  };
  rec(0);
  return out;
}

/// Î_c on a one-dimensional velocity grid, linearly interpolated.
struct CtRateProfile {
  std::vector<double> u;
  std::vector<double> value;
  std::vector<double> residual;

  double operator()(double x) const {
    if (u.empty()) throw Error("empty rate profile");
    if (x <= u.front()) return value.front();
    if (x >= u.back()) return value.back();
    auto it = std::upper_bound(u.begin(), u.end(), x);
    const auto i = static_cast<std::size_t>(it - u.begin());
    const double w = (x - u[i - 1]) / (u[i] - u[i - 1]);
    return (1.0 - w) * value[i - 1] + w * value[i];
  }
};

/// Î_c(u) = extrapolated a_c(0, T, 0, [uT]) / T over the reference times,
/// on the grid lo, lo + h, ..., hi (d = 1).
inline CtRateProfile ct_rate_profile(const RateField& field, double lo, double hi, double h,
                                     std::span<const double> ref_times, const UniformizeOptions& opt = {}) {
  if (field.dim() != 1) throw Error("rate profiles are one-dimensional");
  auto slabs = uniformize_times(field, 0.0, ref_times, Point(1), opt);
  std::vector<std::int64_t> ns;
  for (double t : ref_times) ns.push_back(static_cast<std::int64_t>(std::llround(t)));
  CtRateProfile p;
  const auto steps = static_cast<std::int64_t>(std::llround((hi - lo) / h));
  for (std::int64_t i = 0; i <= steps; ++i) {
    const double u = lo + static_cast<double>(i) * h;
    std::vector<double> vs;
    for (const auto& s : slabs) vs.push_back(ct_passage(s, Point{static_cast<std::int64_t>(std::trunc(u * s.t))}) / s.t);
    auto fit = fit_inverse_n(ns, vs);
    p.u.push_back(u);
    p.value.push_back(fit.limit);
    p.residual.push_back(fit.residual);
  }
  return p;
}

struct ShapeReport {
  std::vector<double> times;
  std::vector<double> deviation;  // s(t)
  /// Largest increase s(t_{i+1}) - s(t_i); <= 0 for a decreasing sequence.
  double max_increase = -kInf;
};

/// s(t) = sup over y ∈ tK ∩ Z^d of |a_c(0,t,0,y)/t - Î_c(y/t)|.
inline ShapeReport shape_check(std::span<const CtKernelSlab> slabs, std::span<const Interval> k,
                               const std::function<double(const Vec&)>& i_hat) {
  ShapeReport r;
  for (const auto& s : slabs) {
    double dev = 0.0;
    for (const auto& y : scaled_box_points(k, s.t)) {
      Vec v = scaled(to_vec(y), 1.0 / s.t);
      dev = std::max(dev, std::abs(ct_passage(s, y) / s.t - i_hat(v)));
    }
    r.times.push_back(s.t);
    r.deviation.push_back(dev);
  }
  for (std::size_t i = 1; i < r.deviation.size(); ++i)
    r.max_increase = std::max(r.max_increase, r.deviation[i] - r.deviation[i - 1]);
  return r;
}

struct EquicontinuityReport {
  std::vector<double> times;
  std::vector<double> modulus;  // sup t^-1 |a_c(x) - a_c(y)|
  std::vector<double> c_hat;    // modulus * sqrt|log ε|
  /// Largest |c_hat(t_{i+1}) / c_hat(t_i) - 1| over consecutive times whose
  /// window eps*t spans at least `min_window` lattice units.
  double max_relative_change = 0.0;
  std::size_t compared = 0;
};

inline EquicontinuityReport equicontinuity_check(std::span<const CtKernelSlab> slabs, std::span<const Interval> k,
                                                 double eps, double min_window = 2.0) {
  if (!(eps > 0.0 && eps < 1.0)) throw Error("epsilon must lie in (0, 1)");
  EquicontinuityReport r;
  for (const auto& s : slabs) {
    const auto pts = scaled_box_points(k, s.t);
    std::vector<double> a(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) a[i] = ct_passage(s, pts[i]);
    double m = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j)
        if (l2_norm(pts[i] - pts[j]) <= eps * s.t) m = std::max(m, std::abs(a[i] - a[j]) / s.t);
    r.times.push_back(s.t);
    r.modulus.push_back(m);
    r.c_hat.push_back(m * std::sqrt(std::abs(std::log(eps))));
  }
  for (std::size_t i = 1; i < r.c_hat.size(); ++i) {
    if (eps * r.times[i - 1] < min_window || !(r.c_hat[i - 1] > 0.0)) continue;
    r.max_relative_change = std::max(r.max_relative_change, std::abs(r.c_hat[i] / r.c_hat[i - 1] - 1.0));
    ++r.compared;
  }
  return r;
}

// ---------------------------------------------------------------------------
// confinement

struct ConfinementReport {
  double radius = kInf;
  double tail_rate = 0.0;  // -(1/t) log P(|X_t|/t > radius)
  double t = 0.0;
};

namespace detail {
template <class Tail>
ConfinementReport smallest_radius(double t, double m, double step, double max_r, Tail&& tail_log) {
  ConfinementReport rep;
  rep.t = t;
  for (int i = 0;; ++i) {
    const double r = step * i;
    if (r > max_r + 1e-12) break;
    const double lp = tail_log(r);
    const double rate = lp == kNegInf ? kInf : -lp / t;
    if (rate >= m) {
      rep.radius = r;
      rep.tail_rate = rate;
      return rep;
    }
  }
  throw ResourceError("no radius up to " + std::to_string(max_r) + " has tail rate " + std::to_string(m),
                      "enlarge the box or lower M");
}
}  // namespace detail

/// Smallest grid radius r with -(1/t) log P(|X_t|_2 / t > r) >= M. Mass
/// killed at the box boundary counts as outside.
inline ConfinementReport confinement_check(const CtKernelSlab& s, double m, double step = 0.01) {
  const double dt = s.t - s.t0;
  const double max_r = static_cast<double>(s.box.radius()) / dt;
  return detail::smallest_radius(dt, m, step, max_r, [&](double r) {
    double p = s.deficit;
    for (std::size_t i = 0; i < s.values.size(); ++i)
      if (l2_norm(s.box.point(i)) > r * dt) p += s.values[i];
    return p > 0.0 ? std::log(p) : kNegInf;
  });
}

/// Discrete analogue on slab n of a table; radii run up to one step past the
/// support.
inline ConfinementReport confinement_check(const PassageTable& table, std::int64_t n, double m, double step = 0.01) {
  const double nn = static_cast<double>(n);
  double reach = 0.0;
  for (const auto& e : table.range().steps()) reach = std::max(reach, l2_norm(e));
  return detail::smallest_radius(nn, m, step, reach + step, [&](double r) {
    std::vector<double> terms;
    table.slab(n).for_each_finite([&](const Point& y, double lp) {
      if (l2_norm(y) > r * nn) terms.push_back(lp);
    });
    return log_sum_exp(terms);
  });
}

// ---------------------------------------------------------------------------
// large deviation bounds

enum class SetKind { open, closed };

struct LdpReport {
  SetKind kind = SetKind::closed;
  std::string statement;  // which inequality is checked
  std::vector<std::int64_t> horizons;
  std::vector<double> sequence;  // -(1/n) log P(X_n/n ∈ A)
  double reference_inf = kInf;   // inf of Î over the set
  double measured = kInf;        // last element of the sequence
  double slack = 0.05;
  bool holds = false;
};

/// Open sets: -(1/n) log P(X_n/n ∈ G) <= inf_G Î + slack at the largest n.
/// Closed sets: -(1/n) log P(X_n/n ∈ C) >= inf_C Î - slack. The infimum runs
/// over the curve directions in the set or at its corners.
inline LdpReport ldp_check(const PassageTable& table, const Region& set, SetKind kind, const RateCurve& curve,
                           double slack = 0.05) {
  LdpReport r;
  r.kind = kind;
  r.slack = slack;
  r.statement = kind == SetKind::open ? "lower bound on open sets: rate <= inf I + slack"
                                      : "upper bound on closed sets: rate >= inf I - slack";
  for (auto n : table.kept()) {
    if (n < 1) continue;
    r.horizons.push_back(n);
    r.sequence.push_back(-event_log_prob(table, n, set) / static_cast<double>(n));
  }
  if (r.sequence.empty()) throw Error("table holds no slab with n >= 1");
  r.measured = r.sequence.back();
  const auto corners = set.extreme_points();
  for (std::size_t i = 0; i < curve.size(); ++i) {
    bool in = set.contains(curve.directions[i]);
    for (const auto& c : corners) {
      double dmax = 0;
      for (int j = 0; j < c.dim(); ++j) dmax = std::max(dmax, std::abs(c[j] - curve.directions[i][j]));
      in = in || dmax <= 1e-12;
    }
    if (in) r.reference_inf = std::min(r.reference_inf, curve.i_hat[i]);
  }
  if (kind == SetKind::open)
    r.holds = r.measured <= r.reference_inf + slack || r.reference_inf == kInf;
  else
    r.holds = r.measured >= r.reference_inf - slack;
  return r;
}

// ---------------------------------------------------------------------------
// quenched concentration

struct ConcentrationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> rates;  // [seed][grid point]
  double max_deviation = 0.0;
};

inline ConcentrationReport quenched_concentration(const DiscreteEnvSpec& spec, std::span<const std::uint64_t> seeds,
                                                  std::span<const Vec> grid, std::int64_t n,
                                                  const SolveOptions& opt = {}) {
  if (seeds.size() < 2) throw Error("quenched concentration needs at least two seeds");
  ConcentrationReport r;
  for (auto seed : seeds) {
    DiscreteEnvSpec s = spec;
    s.seed = seed;
    const PassageTable t = forward_solve(EnvironmentField(s), n, opt);
    std::vector<double> row;
    for (const auto& x : grid) row.push_back(rate_point(t, x, n));
    r.seeds.push_back(seed);
    r.rates.push_back(std::move(row));
  }
  for (std::size_t a = 0; a < r.rates.size(); ++a)
    for (std::size_t b = a + 1; b < r.rates.size(); ++b)
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const double x = r.rates[a][i], y = r.rates[b][i];
        if (x == y) continue;
        r.max_deviation = std::max(r.max_deviation, std::abs(x - y));
      }
  return r;
}

// ---------------------------------------------------------------------------
// even-time reduction

/// Law of Y_n = h(X_{2n}) for a nearest-neighbor walk X in a discrete field:
/// a one-step law on h(R_2) with floor κ².
class TwoStepLaw {
 public:
  explicit TwoStepLaw(const EnvironmentField& field)
      : field_(field), iso_(even_lattice_iso(field.range().dim())), range_(transformed_range(field.range(), iso_)) {
    const auto& steps = field.range().steps();
    for (std::size_t a = 0; a < steps.size(); ++a)
      for (std::size_t b = 0; b < steps.size(); ++b)
        pairs_.push_back({a, b, *range_.index_of(iso_.forward(steps[a] + steps[b]))});
    if (field.homogeneous()) {
      constant_.resize(range_.size());
      compute(0, Point(range_.dim()), constant_);
    }
  }

  const JumpRange& range() const noexcept { return range_; }
  double kappa() const noexcept { return field_.kappa() * field_.kappa(); }
  const EvenLatticeIso& iso() const noexcept { return iso_; }

  void log_probs(std::int64_t n, const Point& y, std::span<double> out) const {
    if (!constant_.empty()) {
      std::copy(constant_.begin(), constant_.end(), out.begin());
      return;
    }
    compute(n, y, out);
  }

 private:
  struct Pair {
    std::size_t a, b, q;
  };

  void compute(std::int64_t n, const Point& y, std::span<double> out) const {
    const Point x = iso_.inverse(y);
    const auto& steps = field_.range().steps();
    const std::size_t k = steps.size();
    std::vector<double> first(k), second(k * k);
    field_.log_probs(2 * n, x, first);
    for (std::size_t a = 0; a < k; ++a) field_.log_probs(2 * n + 1, x + steps[a], std::span<double>(second.data() + a * k, k));
    std::vector<std::vector<double>> terms(range_.size());
    for (const auto& p : pairs_) terms[p.q].push_back(first[p.a] + second[p.a * k + p.b]);
    for (std::size_t q = 0; q < terms.size(); ++q) out[q] = log_sum_exp(terms[q]);
  }

  EnvironmentField field_;
  EvenLatticeIso iso_;
  JumpRange range_;
  std::vector<Pair> pairs_;
  std::vector<double> constant_;
};

struct EvenTimeReport {
  Vec x;
  std::int64_t n = 0;  // Y horizon; X runs 2n steps
  Point target;        // [2n h(x)] in Y coordinates
  double i_even = kInf;
  double i_direct = kInf;
  double direct_difference = kInf;
  /// max over g ∈ H of (1/2n) |log π^Y(n, target + h(g)) - log π^Y(n, target)|
  double max_offset_difference = 0.0;
  std::vector<Point> offsets;
  std::vector<double> offset_differences;
};

/// I_even(x) = -(1/2n) log π^Y_{0,n}(0, [2n h(x)]) compared with the direct
/// rate I_{2n}(x), and the offsets h(g) for g ∈ H = R_2 (even two-step
/// increments, so h(H) is the range of Y).
inline EvenTimeReport even_time_rate(const EnvironmentField& field, const Vec& x, std::int64_t n,
                                     const PassageTable* direct = nullptr, const PassageTable* transformed = nullptr,
                                     const SolveOptions& opt = {}) {
  if (field.range().kind() != RangeKind::nearest_neighbor) throw Error("even-time reduction needs a nearest-neighbor range");
  if (n < 1) throw Error("even-time horizon must be positive");
  const TwoStepLaw law(field);
  PassageTable own_y, own_x;
  if (!transformed) {
    own_y = forward_solve(law, n, opt);
    transformed = &own_y;
  }
  if (!direct) {
    own_x = forward_solve(field, 2 * n, opt);
    direct = &own_x;
  }
  EvenTimeReport r;
  r.x = x;
  r.n = n;
  const double two_n = 2.0 * static_cast<double>(n);
  r.target = truncate(scaled(law.iso().forward(x), two_n));
  const double base = transformed->log_prob(n, r.target);
  r.i_even = -base / two_n;
  r.i_direct = rate_point(*direct, x, 2 * n);
  r.direct_difference = std::abs(r.i_even - r.i_direct);
  for (const auto& c : law.range().steps()) {
    const double lp = transformed->log_prob(n, r.target + c);
    const double diff = std::abs(lp - base) / two_n;
    r.offsets.push_back(c);
    r.offset_differences.push_back(diff);
    r.max_offset_difference = std::max(r.max_offset_difference, diff);
  }
  return r;
}

}  // namespace rwre
