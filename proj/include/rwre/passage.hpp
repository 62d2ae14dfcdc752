#pragma once

// Exact quenched transition probabilities π_{0,m}(0, ·) by forward dynamic
// programming in log space, passage functions a_d = -log π, and the
// finite-scale checks built on them (subadditivity, admissibility, event
// probabilities).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rwre/core.hpp"
#include "rwre/environment.hpp"
#include "rwre/lattice.hpp"

namespace rwre {

/// A time-inhomogeneous one-step law on a fixed jump range.
template <class L>
concept StepLaw = requires(const L& law, std::int64_t n, const Point& x, std::span<double> out) {
  { law.range() } -> std::convertible_to<const JumpRange&>;
  { law.kappa() } -> std::convertible_to<double>;
  law.log_probs(n, x, out);
};

/// log π_{0,m}(0, ·) on the cube of radius m * reach. Each row stores the
/// column interval [lo, hi] outside of which every value is -inf; values
/// inside the interval are always written.
struct Slab {
  std::int64_t step = 0;
  Box box;
  std::vector<double> log_pi;
  std::vector<std::int64_t> lo, hi;

  double log_prob(const Point& y) const {
    if (!box.contains(y)) return kNegInf;
    auto row = *box.row_index(y);
    auto col = y[y.dim() - 1] + box.radius();
    if (col < lo[row] || col > hi[row]) return kNegInf;
    return log_pi[row * static_cast<std::size_t>(box.side()) + static_cast<std::size_t>(col)];
  }

  /// f(point, log_pi) for every finite cell, in storage order.
  template <class F>
  void for_each_finite(F&& f) const {
    const auto side = static_cast<std::size_t>(box.side());
    for (std::size_t r = 0; r < box.rows(); ++r) {
      if (lo[r] > hi[r]) continue;
      Point p = box.row_point(r);
      const int last = box.dim() - 1;
      for (auto c = lo[r]; c <= hi[r]; ++c) {
        double v = log_pi[r * side + static_cast<std::size_t>(c)];
        if (v == kNegInf) continue;
        p[last] = c - box.radius();
        f(p, v);
      }
    }
  }

  double log_mass() const {
    std::vector<double> v;
    for_each_finite([&](const Point&, double lp) { v.push_back(lp); });
    return log_sum_exp(v);
  }

  /// Compact copy holding only the cells inside the row intervals.
  Slab compacted() const {
    Slab s = *this;
    s.log_pi.assign(box.size(), kNegInf);
    const auto side = static_cast<std::size_t>(box.side());
    for (std::size_t r = 0; r < box.rows(); ++r)
      for (auto c = lo[r]; c <= hi[r]; ++c) s.log_pi[r * side + static_cast<std::size_t>(c)] = log_pi[r * side + static_cast<std::size_t>(c)];
    return s;
  }
};

class PassageTable {
 public:
  PassageTable() = default;
  PassageTable(JumpRange range, double kappa, std::int64_t horizon)
      : range_(std::move(range)), kappa_(kappa), horizon_(horizon) {}

  const JumpRange& range() const noexcept { return range_; }
  double kappa() const noexcept { return kappa_; }
  std::int64_t horizon() const noexcept { return horizon_; }

  bool has_slab(std::int64_t m) const { return slabs_.count(m) > 0; }
  const Slab& slab(std::int64_t m) const {
    auto it = slabs_.find(m);
    if (it == slabs_.end()) throw Error("slab " + std::to_string(m) + " was not retained");
    return it->second;
  }
  std::vector<std::int64_t> kept() const {
    std::vector<std::int64_t> out;
    for (const auto& [m, s] : slabs_) out.push_back(m);
    return out;
  }
  void insert(Slab s) { slabs_[s.step] = std::move(s); }

  double log_prob(std::int64_t m, const Point& y) const {
    if (m > horizon_ || m < 0) throw Error("step beyond the table horizon");
    return slab(m).log_prob(y);
  }

 private:
  JumpRange range_;
  double kappa_ = 0.5;
  std::int64_t horizon_ = 0;
  std::map<std::int64_t, Slab> slabs_;
};

/// a_d(0, m, 0, y) = -log π_{0,m}(0, y); +inf when y ∉ R_m.
inline double passage(const PassageTable& t, std::int64_t m, const Point& y) { return -t.log_prob(m, y); }

struct SolveOptions {
  /// Steps whose slabs are retained; the final slab is always retained.
  std::vector<std::int64_t> keep;
  bool keep_all = false;
  std::size_t budget_bytes = std::size_t{2} << 30;
  int threads = 1;
};

inline std::size_t solve_footprint(const JumpRange& range, std::int64_t horizon, const SolveOptions& opt) {
  auto cells = [&](std::int64_t m) { return Box(range.dim(), m * range.reach()).size(); };
  std::size_t bytes = cells(horizon) * sizeof(double) * (2 + range.size());
  if (opt.keep_all) {
    for (std::int64_t m = 0; m <= horizon; ++m) bytes += cells(m) * sizeof(double);
  } else {
    for (auto m : opt.keep)
      if (m <= horizon) bytes += cells(m) * sizeof(double);
  }
  return bytes;
}

/// Forward equation log π_{0,m+1}(0,y) = logsumexp_e [log π_{0,m}(0,y-e) +
/// log ω_m(y-e, e)]. Every destination cell is computed independently with
/// a fixed summation order, so results do not depend on `threads`.
template <StepLaw Law>
PassageTable forward_solve(const Law& law, std::int64_t horizon, const SolveOptions& opt = {}) {
  if (horizon < 0) throw Error("negative horizon");
  const JumpRange& range = law.range();
  const int d = range.dim();
  const int last = d - 1;
  const std::size_t k = range.size();
  const std::int64_t r = range.reach();

  if (auto need = solve_footprint(range, horizon, opt); need > opt.budget_bytes)
    throw ResourceError("passage table for horizon " + std::to_string(horizon) + " needs " +
                            std::to_string(need >> 20) + " MiB",
                        "raise the memory budget to at least " + std::to_string((need >> 20) + 1) +
                            " MiB or lower the horizon");

  std::set<std::int64_t> keep(opt.keep.begin(), opt.keep.end());
  keep.insert(horizon);
  PassageTable table(range, law.kappa(), horizon);

  Slab cur;
  cur.step = 0;
  cur.box = Box(d, 0);
  cur.log_pi = {0.0};
  cur.lo = {0};
  cur.hi = {0};
  Slab next;
  std::vector<double> weighted;

  for (std::int64_t m = 0;; ++m) {
    if (opt.keep_all || keep.count(m)) table.insert(cur.compacted());
    if (m == horizon) break;

    // Phase 1: log π_{0,m}(0,x) + log ω_m(x, e) for every cell in a row interval.
    const auto side = static_cast<std::size_t>(cur.box.side());
    if (weighted.size() < cur.box.size() * k) weighted.resize(cur.box.size() * k);
    parallel_for(cur.box.rows(), opt.threads, [&](std::size_t b, std::size_t e) {
      std::vector<double> lw(k);
      for (std::size_t row = b; row < e; ++row) {
        if (cur.lo[row] > cur.hi[row]) continue;
        Point x = cur.box.row_point(row);
        for (auto c = cur.lo[row]; c <= cur.hi[row]; ++c) {
          const std::size_t idx = row * side + static_cast<std::size_t>(c);
          double* w = &weighted[idx * k];
          const double lp = cur.log_pi[idx];
          if (lp == kNegInf) {
            std::fill(w, w + k, kNegInf);
            continue;
          }
          x[last] = c - cur.box.radius();
          law.log_probs(m, x, lw);
          for (std::size_t j = 0; j < k; ++j) w[j] = lp + lw[j];
        }
      }
    });

    // Phase 2: pull from y - e for every step e.
    next.step = m + 1;
    next.box = Box(d, (m + 1) * r);
    const auto nside = static_cast<std::size_t>(next.box.side());
    if (next.log_pi.size() < next.box.size()) next.log_pi.resize(next.box.size());
    next.lo.assign(next.box.rows(), 1);
    next.hi.assign(next.box.rows(), 0);
    const std::int64_t shift_cols = next.box.radius() - cur.box.radius();
    parallel_for(next.box.rows(), opt.threads, [&](std::size_t b, std::size_t e) {
      std::vector<std::int64_t> src_row(k), col_off(k);
      std::vector<char> valid(k);
      std::vector<double> vals(k);
      for (std::size_t row = b; row < e; ++row) {
        Point y = next.box.row_point(row);
        std::int64_t cmin = std::numeric_limits<std::int64_t>::max(), cmax = std::numeric_limits<std::int64_t>::min();
        for (std::size_t j = 0; j < k; ++j) {
          const Point& step = range.steps()[j];
          auto sr = cur.box.row_index(y - step);
          valid[j] = sr.has_value() && cur.lo[*sr] <= cur.hi[*sr];
          if (!valid[j]) continue;
          src_row[j] = static_cast<std::int64_t>(*sr);
          // source column = destination column - shift_cols - step_last
          col_off[j] = shift_cols + step[last];
          cmin = std::min(cmin, cur.lo[*sr] + col_off[j]);
          cmax = std::max(cmax, cur.hi[*sr] + col_off[j]);
        }
        if (cmin > cmax) continue;
        std::int64_t flo = 1, fhi = 0;
        for (auto c = cmin; c <= cmax; ++c) {
          double hi = kNegInf;
          for (std::size_t j = 0; j < k; ++j) {
            vals[j] = kNegInf;
            if (!valid[j]) continue;
            const auto sr = static_cast<std::size_t>(src_row[j]);
            const auto sc = c - col_off[j];
            if (sc < cur.lo[sr] || sc > cur.hi[sr]) continue;
            vals[j] = weighted[(sr * side + static_cast<std::size_t>(sc)) * k + j];
            hi = std::max(hi, vals[j]);
          }
          double out = kNegInf;
          if (hi != kNegInf) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += std::exp(vals[j] - hi);
            out = hi + std::log(s);
            if (flo > fhi) flo = c;
            fhi = c;
          }
          next.log_pi[row * nside + static_cast<std::size_t>(c)] = out;
        }
        next.lo[row] = flo;
        next.hi[row] = fhi;
      }
    });
    std::swap(cur, next);
  }
  return table;
}

/// forward_solve with an explicit range, checked against the field's own.
inline PassageTable forward_solve(const EnvironmentField& field, const JumpRange& range, std::int64_t horizon,
                                  const SolveOptions& opt = {}) {
  if (!(field.range() == range)) throw Error("jump range does not match the environment");
  return forward_solve(field, horizon, opt);
}

// ---------------------------------------------------------------------------
// admissible paths

struct AdmissiblePath {
  std::int64_t start_time = 0;
  Point start;
  std::vector<Point> steps;

  Point end() const {
    Point p = start;
    for (const auto& s : steps) p += s;
    return p;
  }
};

struct AdmissibilityReport {
  bool admissible = true;
  double log_product = 0.0;  // log of the product of step probabilities
  double log_bound = 0.0;    // k log κ
};

inline AdmissibilityReport is_admissible(const AdmissiblePath& path, const EnvironmentField& field) {
  AdmissibilityReport rep;
  rep.log_bound = static_cast<double>(path.steps.size()) * std::log(field.kappa());
  Point x = path.start;
  std::vector<double> v(field.range().size());
  for (std::size_t j = 0; j < path.steps.size(); ++j) {
    auto idx = field.range().index_of(path.steps[j]);
    if (!idx) {
      rep.admissible = false;
      rep.log_product = kNegInf;
      return rep;
    }
    field.probs(path.start_time + static_cast<std::int64_t>(j), x, v);
    rep.log_product += std::log(v[*idx]);
    x += path.steps[j];
  }
  return rep;
}

// ---------------------------------------------------------------------------
// subadditivity

struct SubadditivityReport {
  double max_violation = kNegInf;
  std::size_t trials = 0;
  std::int64_t worst_p = 0, worst_m = 0;
  Point worst_z, worst_y;
};

/// Samples triples 0 <= p <= m <= max_horizon, z ∈ R_p, y ∈ z + R_{m-p}, and
/// returns the largest a_d(0,m,0,y) - a_d(0,p,0,z) - a_d(p,m,z,y). The last
/// term comes from a solve on the field shifted by (p, z).
inline SubadditivityReport check_subadditivity(const EnvironmentField& field, std::int64_t max_horizon,
                                               std::size_t trials, std::uint64_t seed, int threads = 1) {
  SolveOptions all;
  all.keep_all = true;
  all.threads = threads;
  const PassageTable base = forward_solve(field, max_horizon, all);
  std::map<std::pair<std::int64_t, Point>, PassageTable> shifted;
  std::mt19937_64 rng(seed);
  const auto& steps = field.range().steps();
  std::uniform_int_distribution<std::size_t> pick(0, steps.size() - 1);
  auto walk = [&](Point x, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) x += steps[pick(rng)];
    return x;
  };

  SubadditivityReport rep;
  const Point origin(field.range().dim());
  for (std::size_t t = 0; t < trials; ++t) {
    const auto m = std::uniform_int_distribution<std::int64_t>(0, max_horizon)(rng);
    const auto p = std::uniform_int_distribution<std::int64_t>(0, m)(rng);
    const Point z = walk(origin, p);
    const Point y = walk(z, m - p);
    auto key = std::make_pair(p, z);
    auto it = shifted.find(key);
    if (it == shifted.end())
      it = shifted.emplace(key, forward_solve(field.shift(p, z), max_horizon - p, all)).first;
    const double lhs = passage(base, m, y);
    const double rhs = passage(base, p, z) + passage(it->second, m - p, y - z);
    const double v = lhs - rhs;
    ++rep.trials;
    if (v > rep.max_violation) {
      rep.max_violation = v;
      rep.worst_p = p;
      rep.worst_m = m;
      rep.worst_z = z;
      rep.worst_y = y;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// regions and event probabilities

struct Interval {
  double lo = -kInf, hi = kInf;
  bool lo_open = false, hi_open = false;
  bool contains(double v) const {
    return (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
  }
};

/// Finite union of boxes and half-spaces <normal, x> <= offset (strict when
/// `strict`). An empty union is the empty set.
class Region {
 public:
  struct HalfSpace {
    Vec normal;
    double offset = 0.0;
    bool strict = false;
  };

  explicit Region(int dim = 1) : dim_(dim) {}

  static Region everything(int dim) {
    Region r(dim);
    r.add_box(std::vector<Interval>(static_cast<std::size_t>(dim), Interval{-kInf, kInf, true, true}));
    return r;
  }
  static Region interval(double lo, double hi, bool open) {
    Region r(1);
    r.add_box({Interval{lo, hi, open, open}});
    return r;
  }

  Region& add_box(std::vector<Interval> axes) {
    if (static_cast<int>(axes.size()) != dim_) throw Error("box has the wrong dimension");
    boxes_.push_back(std::move(axes));
    return *this;
  }
  Region& add_half_space(HalfSpace h) {
    if (h.normal.dim() != dim_) throw Error("half-space has the wrong dimension");
    halves_.push_back(h);
    return *this;
  }

  int dim() const noexcept { return dim_; }
  const std::vector<std::vector<Interval>>& boxes() const noexcept { return boxes_; }
  const std::vector<HalfSpace>& half_spaces() const noexcept { return halves_; }

  bool contains(const Vec& x) const {
    for (const auto& b : boxes_) {
      bool in = true;
      for (int i = 0; i < dim_ && in; ++i) in = b[static_cast<std::size_t>(i)].contains(x[i]);
      if (in) return true;
    }
    for (const auto& h : halves_) {
      double s = 0;
      for (int i = 0; i < dim_; ++i) s += h.normal[i] * x[i];
      if (h.strict ? s < h.offset : s <= h.offset) return true;
    }
    return false;
  }

  /// Corners of the boxes whose coordinates are all finite.
  std::vector<Vec> extreme_points() const {
    std::vector<Vec> out;
    for (const auto& b : boxes_) {
      for (std::size_t mask = 0; mask < (std::size_t{1} << dim_); ++mask) {
        Vec v(dim_);
        bool finite = true;
        for (int i = 0; i < dim_; ++i) {
          const auto& iv = b[static_cast<std::size_t>(i)];
          v[i] = (mask >> i) & 1 ? iv.hi : iv.lo;
          finite = finite && std::isfinite(v[i]);
        }
        if (finite) out.push_back(v);
      }
    }
    return out;
  }

 private:
  int dim_;
  std::vector<std::vector<Interval>> boxes_;
  std::vector<HalfSpace> halves_;
};

/// log P(X_n / n ∈ A) from slab n of the table.
inline double event_log_prob(const PassageTable& table, std::int64_t n, const Region& a) {
  if (n < 1) throw Error("event probabilities need n >= 1");
  std::vector<double> terms;
  const double inv = 1.0 / static_cast<double>(n);
  table.slab(n).for_each_finite([&](const Point& y, double lp) {
    Vec v = to_vec(y);
    for (int i = 0; i < v.dim(); ++i) v[i] *= inv;
    if (a.contains(v)) terms.push_back(lp);
  });
  return log_sum_exp(terms);
}

inline double event_prob(const PassageTable& table, std::int64_t n, const Region& a) {
  return std::exp(event_log_prob(table, n, a));
}

// ---------------------------------------------------------------------------
// export and binary cache format

/// CSV rows `m,y_1..y_d,log_pi` for every retained slab.
inline void write_slab_csv(std::ostream& os, const PassageTable& table, const std::string& config_hash = {}) {
  const int d = table.range().dim();
  os << "m";
  for (int i = 1; i <= d; ++i) os << ",y_" << i;
  os << ",log_pi" << (config_hash.empty() ? "" : ",config_hash") << "\n";
  char buf[40];
  for (auto m : table.kept())
    table.slab(m).for_each_finite([&](const Point& y, double lp) {
      os << m;
      for (auto c : y) os << "," << c;
      std::snprintf(buf, sizeof buf, "%.17g", lp);
      os << "," << buf;
      if (!config_hash.empty()) os << "," << config_hash;
      os << "\n";
    });
}

namespace detail {
template <class T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error("truncated passage table");
  T v;
  std::copy_n(in.data() + pos, sizeof(T), reinterpret_cast<char*>(&v));
  pos += sizeof(T);
  return v;
}
}  // namespace detail

/// Binary form: magic, range text, kappa, horizon, slabs (row intervals and
/// in-interval values), then an FNV-1a checksum of everything before it.
inline std::string serialize_table(const PassageTable& t) {
  std::string out = "RWRETBL1";
  const std::string range = t.range().to_string();
  detail::put(out, static_cast<std::uint64_t>(range.size()));
  out += range;
  detail::put(out, t.kappa());
  detail::put(out, t.horizon());
  const auto kept = t.kept();
  detail::put(out, static_cast<std::uint64_t>(kept.size()));
  for (auto m : kept) {
    const Slab& s = t.slab(m);
    detail::put(out, s.step);
    detail::put(out, s.box.radius());
    const auto side = static_cast<std::size_t>(s.box.side());
    for (std::size_t r = 0; r < s.box.rows(); ++r) {
      detail::put(out, s.lo[r]);
      detail::put(out, s.hi[r]);
      for (auto c = s.lo[r]; c <= s.hi[r]; ++c) detail::put(out, s.log_pi[r * side + static_cast<std::size_t>(c)]);
    }
  }
  detail::put(out, fnv1a64(out));
  return out;
}

inline PassageTable deserialize_table(const std::string& in) {
  if (in.size() < 16 || in.compare(0, 8, "RWRETBL1") != 0) throw Error("not a passage table");
  std::size_t sum_pos = in.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::copy_n(in.data() + sum_pos, sizeof stored, reinterpret_cast<char*>(&stored));
  if (fnv1a64(std::string_view(in).substr(0, sum_pos)) != stored) throw Error("passage table checksum mismatch");
  std::size_t pos = 8;
  auto len = detail::take<std::uint64_t>(in, pos);
  JumpRange range = JumpRange::parse(in.substr(pos, len));
  pos += len;
  auto kappa = detail::take<double>(in, pos);
  auto horizon = detail::take<std::int64_t>(in, pos);
  PassageTable t(range, kappa, horizon);
  auto count = detail::take<std::uint64_t>(in, pos);
  for (std::uint64_t i = 0; i < count; ++i) {
    Slab s;
    s.step = detail::take<std::int64_t>(in, pos);
    s.box = Box(range.dim(), detail::take<std::int64_t>(in, pos));
    s.log_pi.assign(s.box.size(), kNegInf);
    s.lo.resize(s.box.rows());
    s.hi.resize(s.box.rows());
    const auto side = static_cast<std::size_t>(s.box.side());
    for (std::size_t r = 0; r < s.box.rows(); ++r) {
      s.lo[r] = detail::take<std::int64_t>(in, pos);
      s.hi[r] = detail::take<std::int64_t>(in, pos);
      for (auto c = s.lo[r]; c <= s.hi[r]; ++c) s.log_pi[r * side + static_cast<std::size_t>(c)] = detail::take<double>(in, pos);
    }
    t.insert(std::move(s));
  }
  return t;
}

}  // namespace rwre
