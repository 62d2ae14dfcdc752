#pragma once

// Continuous-time kernels e(s,t,x,y): a uniformization solver over
// piecewise-constant rate fields, a Feynman-Kac estimator against a rate-1
// reference walk, closed-form simple-random-walk kernels and the kernel
// comparison diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rwre/core.hpp"
#include "rwre/environment.hpp"
#include "rwre/lattice.hpp"

namespace rwre {

// ---------------------------------------------------------------------------
// modified Bessel functions

/// log(e^{-s} I_n(s)) for n = 0..nmax by Miller's downward recurrence
/// I_{k-1} = I_{k+1} + (2k/s) I_k, normalized with I_0 + 2 sum_k I_k = e^s.
inline std::vector<double> log_scaled_bessel_i_table(double s, int nmax) {
  if (s < 0.0) throw Error("Bessel argument must be nonnegative");
  if (nmax < 0) throw Error("negative Bessel order");
  std::vector<double> out(static_cast<std::size_t>(nmax) + 1, kNegInf);
  if (s == 0.0) {
    out[0] = 0.0;
    return out;
  }
  const double top = std::max(static_cast<double>(nmax), s);
  const int start = static_cast<int>(top + 30.0 + std::ceil(std::sqrt(80.0 * top))) + 1;
  constexpr double kBig = 1e200;
  const double log_big = std::log(kBig);
  double above = 0.0, cur = 1e-300, offset = 0.0, sum = 0.0;
  for (int k = start; k >= 1; --k) {
    // cur = I_k, above = I_{k+1}, both relative to e^{offset}
    if (k <= nmax) out[static_cast<std::size_t>(k)] = std::log(cur) + offset;
    sum += 2.0 * cur;
    double below = above + (2.0 * k / s) * cur;
    above = cur;
    cur = below;
    if (cur > kBig) {
      cur /= kBig;
      above /= kBig;
      sum /= kBig;
      offset += log_big;
    }
  }
  out[0] = std::log(cur) + offset;
  sum += cur;
  const double log_norm = std::log(sum) + offset;
  for (double& v : out)
    if (v != kNegInf) v -= log_norm;
  return out;
}

/// log(e^{-s} I_n(s)).
inline double log_scaled_bessel_i(std::int64_t n, double s) {
  n = n < 0 ? -n : n;
  return log_scaled_bessel_i_table(s, static_cast<int>(n)).back();
}

// ---------------------------------------------------------------------------
// simple symmetric random walk

/// Continuous-time simple symmetric walk with total jump rate `rate`, each
/// axis jumping at rate rate/d.
struct SrwOracle {
  int dim = 1;
  double rate = 1.0;
};

inline double srw_log_kernel(const SrwOracle& o, double t, const Point& x) {
  if (!(t > 0.0)) throw Error("kernel time must be positive");
  if (x.dim() != o.dim) throw Error("dimension mismatch");
  const double s = o.rate * t / o.dim;
  double lp = 0.0;
  for (auto v : x) lp += log_scaled_bessel_i(v, s);
  return lp;
}

inline double srw_kernel(const SrwOracle& o, double t, const Point& x) { return std::exp(srw_log_kernel(o, t, x)); }

/// j(y) = y asinh(y) - sqrt(y^2 + 1) + 1.
inline double srw_j(double y) { return y * std::asinh(y) - std::sqrt(y * y + 1.0) + 1.0; }

/// J(x) = sum_i (rate/d) j(d x_i / rate).
inline double srw_rate_J(const SrwOracle& o, const Vec& x) {
  if (x.dim() != o.dim) throw Error("dimension mismatch");
  const double a = o.rate / o.dim;
  double s = 0.0;
  for (double v : x) s += a * srw_j(v / a);
  return s;
}

// ---------------------------------------------------------------------------
// uniformization

/// e(t0, t, start, y) on the cube of the given radius around `start`.
/// `deficit` is the mass killed at the box boundary, `truncation` the mass
/// dropped by cutting the Poisson series.
struct CtKernelSlab {
  double t0 = 0.0;
  double t = 0.0;
  Point start;
  Box box;
  std::vector<double> values;
  double deficit = 0.0;
  double truncation = 0.0;

  double value(const Point& y) const {
    auto i = box.index(y - start);
    return i ? values[*i] : 0.0;
  }
  double log_value(const Point& y) const {
    double v = value(y);
    return v > 0.0 ? std::log(v) : kNegInf;
  }
  double mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
};

struct UniformizeOptions {
  std::optional<std::int64_t> radius;
  double max_deficit = 1e-12;
  bool auto_grow = true;
  double tail = 1e-14;
  /// Longest sub-interval, in units of 1/Λ.
  double max_lambda_tau = 32.0;
  int threads = 1;
};

inline std::int64_t default_ct_radius(const RateField& f, double duration) {
  return static_cast<std::int64_t>(std::ceil(4.0 * f.dim() * f.max_rate() * duration)) + 10;
}

namespace detail {

// Propagates `u` (a distribution on `box` around `start`, field already
// shifted so that local time 0 is t0) through each target time in order.
inline std::vector<CtKernelSlab> propagate(const RateField& f, double t0, const Point& start, const Box& box,
                                           std::vector<double> u, double deficit, double truncation,
                                           std::span<const double> durations, const UniformizeOptions& opt) {
  const int d = f.dim();
  const std::size_t k = f.range().size();
  const auto& steps = f.range().steps();
  const double lambda = 2.0 * d * f.max_rate();
  const std::size_t n = box.size();
  std::vector<double> rates(n * k), v(n), w(n), acc(n);
  std::vector<std::optional<std::size_t>> dest(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    Point x = box.point(i);
    for (std::size_t j = 0; j < k; ++j) dest[i * k + j] = box.index(x + steps[j]);
  }
  std::vector<CtKernelSlab> out;
  double tau = 0.0;
  for (double target : durations) {
    if (target < tau) throw Error("uniformization times must be nondecreasing");
    while (tau < target) {
      double b = std::min({f.piece_end(tau), target, tau + opt.max_lambda_tau / lambda});
      const double mid = 0.5 * (tau + b);
      parallel_for(n, opt.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
          f.rates(mid, box.point(i), std::span<double>(rates.data() + i * k, k));
      });
      const double lh = lambda * (b - tau);
      double m0 = 0.0;
      for (double x : u) m0 += x;
      double wk = std::exp(-lh), cum = wk, dropped = 0.0, lost = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc[i] = wk * u[i];
      v = u;
      for (int step = 1; 1.0 - cum > opt.tail; ++step) {
        // w = v P; mass pushed outside the box is killed.
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          if (v[i] == 0.0) continue;
          double stay = 1.0;
          for (std::size_t j = 0; j < k; ++j) {
            const double p = rates[i * k + j] / lambda;
            stay -= p;
            if (auto to = dest[i * k + j]) w[*to] += v[i] * p;
            else dropped += v[i] * p;
          }
          w[i] += v[i] * stay;
        }
        std::swap(v, w);
        wk *= lh / step;
        cum += wk;
        lost += wk * dropped;
        for (std::size_t i = 0; i < n; ++i) acc[i] += wk * v[i];
      }
      deficit += lost;
      truncation += std::max(0.0, 1.0 - cum) * m0;
      std::swap(u, acc);
      tau = b;
    }
    CtKernelSlab s;
    s.t0 = t0;
    s.t = t0 + target;
    s.start = start;
    s.box = box;
    s.values = u;
    s.deficit = deficit;
    s.truncation = truncation;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

/// Kernels e(s, t_i, start, ·) for each t_i in `times` (nondecreasing,
/// all >= s). The box grows by doubling until the boundary deficit is
/// below opt.max_deficit.
inline std::vector<CtKernelSlab> uniformize_times(const RateField& field, double s, std::span<const double> times,
                                                  const Point& start, const UniformizeOptions& opt = {}) {
  if (times.empty()) return {};
  if (s < 0.0) throw Error("start time must be nonnegative");
  std::vector<double> durations;
  for (double t : times) {
    if (!(t >= s)) throw Error("kernel times must not precede the start time");
    durations.push_back(t - s);
  }
  const RateField f = field.shift(s, start);
  auto radius = opt.radius.value_or(default_ct_radius(field, durations.back()));
  for (;;) {
    Box box(field.dim(), radius);
    std::vector<double> u(box.size(), 0.0);
    u[*box.index(Point(field.dim()))] = 1.0;
    auto slabs = detail::propagate(f, s, start, box, std::move(u), 0.0, 0.0, durations, opt);
    if (slabs.back().deficit <= opt.max_deficit) return slabs;
    if (!opt.auto_grow)
      throw ResourceError("boundary deficit " + std::to_string(slabs.back().deficit) + " exceeds the bound",
                          "use a box radius of at least " + std::to_string(2 * radius));
    radius *= 2;
  }
}

inline CtKernelSlab uniformize(const RateField& field, double s, double t, const Point& start,
                               const UniformizeOptions& opt = {}) {
  const double times[] = {t};
  return uniformize_times(field, s, times, start, opt).front();
}

/// e(0, t, 0, ·).
inline CtKernelSlab uniformize(const RateField& field, double t, const UniformizeOptions& opt = {}) {
  if (!(t > 0.0)) throw Error("kernel time must be positive");
  return uniformize(field, 0.0, t, Point(field.dim()), opt);
}

/// Continues a slab from its time to t (Chapman-Kolmogorov), on the same box.
inline CtKernelSlab continue_to(const RateField& field, const CtKernelSlab& from, double t,
                                const UniformizeOptions& opt = {}) {
  if (t < from.t) throw Error("cannot continue backwards in time");
  const double dur[] = {t - from.t};
  const RateField f = field.shift(from.t, from.start);
  auto out = detail::propagate(f, from.t, from.start, from.box, from.values, from.deficit, from.truncation, dur, opt);
  out.front().t0 = from.t0;
  return out.front();
}

/// CSV rows `t,y_1..y_d,e` for the nonzero cells.
inline void write_ct_slab_csv(std::ostream& os, std::span<const CtKernelSlab> slabs, bool header = true,
                              const std::string& config_hash = {}) {
  if (slabs.empty()) return;
  const int d = slabs.front().box.dim();
  if (header) {
    os << "t";
    for (int i = 1; i <= d; ++i) os << ",y_" << i;
    os << ",e" << (config_hash.empty() ? "" : ",config_hash") << "\n";
  }
  char buf[40];
  for (const auto& s : slabs)
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (s.values[i] == 0.0) continue;
      std::snprintf(buf, sizeof buf, "%.17g", s.t);
      os << buf;
      for (auto c : s.box.point(i) + s.start) os << "," << c;
      std::snprintf(buf, sizeof buf, "%.17g", s.values[i]);
      os << "," << buf;
      if (!config_hash.empty()) os << "," << config_hash;
      os << "\n";
    }
}

// ---------------------------------------------------------------------------
// Feynman-Kac estimator

struct FkEstimate {
  double t = 0.0;
  Point y;
  std::uint64_t samples = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::uint64_t seed = 0;
  double mean_jumps = 0.0;
  std::uint64_t hits = 0;
};

struct FkOptions {
  std::uint64_t block = 4096;
  int threads = 1;
};

/// Unbiased estimate of e(0, t, 0, y): a rate-1 simple symmetric walk Y
/// weighted by prod_jumps 2d ω(Y_-, ΔY) * exp(-∫(ω(Y, G) - 1) ds).
/// Samples are split into fixed blocks with their own streams and pooled in
/// block order.
inline FkEstimate fk_estimate(const RateField& field, double t, const Point& y, std::uint64_t samples,
                              std::uint64_t seed, const FkOptions& opt = {}) {
  if (!(t > 0.0)) throw Error("kernel time must be positive");
  if (samples < 1) throw Error("need at least one sample");
  const int d = field.dim();
  const std::size_t k = field.range().size();
  const auto& steps = field.range().steps();
  const double log2d = std::log(2.0 * d);
  const std::uint64_t blocks = (samples + opt.block - 1) / opt.block;
  struct Acc {
    double sw = 0, sw2 = 0, jumps = 0;
    std::uint64_t hits = 0;
  };
  std::vector<Acc> acc(blocks);
  parallel_for(blocks, opt.threads, [&](std::size_t b0, std::size_t b1) {
    std::vector<double> r(k);
    for (std::size_t b = b0; b < b1; ++b) {
      CellRng rng(hash_combine(mix64(seed ^ 0xf4c0ULL), b));
      const std::uint64_t first = b * opt.block, last = std::min<std::uint64_t>(samples, first + opt.block);
      Acc a;
      for (std::uint64_t s = first; s < last; ++s) {
        Point x(d);
        double tau = 0.0, logw = 0.0;
        std::uint64_t jumps = 0;
        for (;;) {
          const double hold = -std::log(rng.uniform());
          const double stop = std::min(t, tau + hold);
          // -∫(ω(x, G) - 1) over [tau, stop], piece by piece
          while (tau < stop) {
            const double e = std::min(stop, field.piece_end(tau));
            field.rates(tau, x, r);
            double total = 0.0;
            for (double v : r) total += v;
            logw -= (total - 1.0) * (e - tau);
            tau = e;
          }
          if (tau >= t) break;
          const auto j = static_cast<std::size_t>(rng.next() % k);
          field.rates(tau, x, r);
          logw += log2d + std::log(r[j]);
          x += steps[j];
          ++jumps;
        }
        a.jumps += static_cast<double>(jumps);
        if (x == y) {
          const double w = std::exp(logw);
          a.sw += w;
          a.sw2 += w * w;
          ++a.hits;
        }
      }
      acc[b] = a;
    }
  });
  Acc tot;
  for (const auto& a : acc) {
    tot.sw += a.sw;
    tot.sw2 += a.sw2;
    tot.jumps += a.jumps;
    tot.hits += a.hits;
  }
  FkEstimate est;
  est.t = t;
  est.y = y;
  est.samples = samples;
  est.seed = seed;
  const double n = static_cast<double>(samples);
  est.mean = tot.sw / n;
  est.mean_jumps = tot.jumps / n;
  est.hits = tot.hits;
  if (samples > 1) {
    const double var = std::max(0.0, (tot.sw2 - n * est.mean * est.mean) / (n - 1.0));
    est.stderr_ = std::sqrt(var / n);
  }
  return est;
}

// ---------------------------------------------------------------------------
// positivity and kernel comparison

/// C' = max(2dκ2 - 1 + log 2d, |log 2dκ1|).
inline double positivity_constant(const RateField& f) {
  const double d2 = 2.0 * f.dim();
  return std::max(d2 * f.max_rate() - 1.0 + std::log(d2), std::abs(std::log(d2 * f.min_rate())));
}

/// log of e^{-C'(t-s) - C'k} (2d)^{-k} P(N_{t-s} = k), k = |x - y|_1, a
/// lower bound on log e(s, t, x, y).
inline double log_positivity_floor(const RateField& f, double s, double t, const Point& x, const Point& y) {
  if (!(t > s)) throw Error("positivity floor needs t > s");
  const double c = positivity_constant(f);
  const double dt = t - s;
  const double kk = static_cast<double>(l1_norm(y - x));
  const double log_poisson = -dt + kk * std::log(dt) - std::lgamma(kk + 1.0);
  return -c * dt - c * kk - kk * std::log(2.0 * f.dim()) + log_poisson;
}

inline double positivity_floor(const RateField& f, double s, double t, const Point& x, const Point& y) {
  return std::exp(log_positivity_floor(f, s, t, x, y));
}

struct KernelComparison {
  double t = 0.0;
  double eps = 0.0;
  /// max |log(e/p)| * sqrt|log ε| / t over the window.
  double c_hat = 0.0;
  double min_log_ratio = kInf;
  double max_log_ratio = -kInf;
  std::size_t pairs = 0;
  bool finite = true;
};

/// Compares e(t(1-ε), t, z, y) with the rate-1 kernel p(εt, z, y) over the
/// window |y - z|_2 <= εt, for each start z.
inline KernelComparison kernel_comparison_check(const RateField& field, double t, double eps,
                                                std::span<const Point> starts, const UniformizeOptions& opt = {}) {
  if (!(eps > 0.0 && eps < 1.0)) throw Error("epsilon must lie in (0, 1)");
  if (!(t > 0.0)) throw Error("kernel time must be positive");
  KernelComparison rep;
  rep.t = t;
  rep.eps = eps;
  const double dt = eps * t;
  const SrwOracle ref{field.dim(), 1.0};
  const double scale = std::sqrt(std::abs(std::log(eps))) / t;
  for (const auto& z : starts) {
    const CtKernelSlab e = uniformize(field, t - dt, t, z, opt);
    const auto r = static_cast<std::int64_t>(std::floor(dt));
    Box win(field.dim(), r);
    for (std::size_t i = 0; i < win.size(); ++i) {
      const Point off = win.point(i);
      if (l2_norm(off) > dt) continue;
      const double le = e.log_value(z + off);
      const double lp = srw_log_kernel(ref, dt, off);
      if (!std::isfinite(le) || !std::isfinite(lp)) {
        rep.finite = false;
        continue;
      }
      const double lr = le - lp;
      rep.min_log_ratio = std::min(rep.min_log_ratio, lr);
      rep.max_log_ratio = std::max(rep.max_log_ratio, lr);
      rep.c_hat = std::max(rep.c_hat, std::abs(lr) * scale);
      ++rep.pairs;
    }
  }
  return rep;
}

}  // namespace rwre
