#pragma once

// Seeded, randomly accessible environments. Every cell (n, x) derives its
// own splitmix stream from hash(seed, tag, n, x), so a field is a pure
// function of its spec and never needs to be materialized.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "rwre/core.hpp"
#include "rwre/lattice.hpp"

namespace rwre {

enum class EnvModel { homogeneous, iid, spin_flip };

inline std::string to_string(EnvModel m) {
  switch (m) {
    case EnvModel::homogeneous: return "homogeneous";
    case EnvModel::iid: return "iid-time-space";
    case EnvModel::spin_flip: return "spin-flip";
  }
  return "?";
}

inline EnvModel parse_env_model(const std::string& s) {
  if (s == "homogeneous") return EnvModel::homogeneous;
  if (s == "iid-time-space" || s == "iid") return EnvModel::iid;
  if (s == "spin-flip") return EnvModel::spin_flip;
  throw Error("unknown environment model: " + s);
}

struct DiscreteEnvSpec {
  EnvModel model = EnvModel::homogeneous;
  JumpRange range;
  double kappa = 0.5;
  /// Homogeneous law over the steps; empty means uniform.
  std::vector<double> weights;
  /// spin-flip: stationary occupancy density and per-step refresh probability.
  double density = 0.5;
  double flip = 0.1;
  std::vector<double> occupied;
  std::vector<double> vacant;
  std::uint64_t seed = 0;

  void validate() const {
    const auto k = range.size();
    if (!(kappa > 0.0) || kappa * static_cast<double>(k) > 1.0 + 1e-12)
      throw Error("kappa must lie in (0, 1/|R|]");
    auto check_law = [&](const std::vector<double>& v, const char* name) {
      if (v.size() != k) throw Error(std::string(name) + " must have one entry per step");
      double s = std::accumulate(v.begin(), v.end(), 0.0);
      if (std::abs(s - 1.0) > 1e-12) throw Error(std::string(name) + " must sum to 1");
      for (double p : v)
        if (p < kappa - 1e-15) throw Error(std::string(name) + " has an entry below kappa");
    };
    if (model == EnvModel::homogeneous && !weights.empty()) check_law(weights, "weights");
    if (model == EnvModel::spin_flip) {
      if (!(density >= 0.0 && density <= 1.0)) throw Error("density must lie in [0, 1]");
      if (!(flip >= 0.0 && flip <= 1.0)) throw Error("flip probability must lie in [0, 1]");
      check_law(occupied, "occupied law");
      check_law(vacant, "vacant law");
    }
  }

  /// Stable textual form, used for hashing and cache keys.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << to_string(model) << "|" << range.to_string() << "|kappa=" << kappa << "|seed=" << seed;
    auto list = [&](const char* name, const std::vector<double>& v) {
      os << "|" << name << "=";
      for (double x : v) os << x << ";";
    };
    if (model == EnvModel::homogeneous) list("weights", weights);
    if (model == EnvModel::spin_flip) {
      os << "|density=" << density << "|flip=" << flip;
      list("occupied", occupied);
      list("vacant", vacant);
    }
    return os.str();
  }
};

/// Discrete-time environment ω_n(x, ·), optionally viewed through a
/// time-space shift: env_at(n, y) = original(n + m, y + z).
class EnvironmentField {
 public:
  EnvironmentField() : EnvironmentField(DiscreteEnvSpec{}) {}
  explicit EnvironmentField(DiscreteEnvSpec spec) : spec_(std::move(spec)), offset_(spec_.range.dim()) {
    spec_.validate();
    const auto k = spec_.range.size();
    if (spec_.model == EnvModel::homogeneous) {
      fixed_ = spec_.weights.empty() ? std::vector<double>(k, 1.0 / static_cast<double>(k)) : spec_.weights;
      for (double p : fixed_) fixed_log_.push_back(std::log(p));
    }
    if (spec_.model == EnvModel::spin_flip) {
      for (double p : spec_.occupied) occupied_log_.push_back(std::log(p));
      for (double p : spec_.vacant) vacant_log_.push_back(std::log(p));
    }
  }

  const DiscreteEnvSpec& spec() const noexcept { return spec_; }
  const JumpRange& range() const noexcept { return spec_.range; }
  double kappa() const noexcept { return spec_.kappa; }
  bool homogeneous() const noexcept { return spec_.model == EnvModel::homogeneous; }
  std::int64_t time_offset() const noexcept { return time_offset_; }
  const Point& space_offset() const noexcept { return offset_; }

  /// ω_n(x, ·) written into `out` (size |R|).
  void probs(std::int64_t n, const Point& x, std::span<double> out) const {
    const auto t = n + time_offset_;
    if (t < 0) throw Error("negative time index");
    switch (spec_.model) {
      case EnvModel::homogeneous:
        std::copy(fixed_.begin(), fixed_.end(), out.begin());
        return;
      case EnvModel::iid:
        iid_draw(t, x + offset_, out);
        return;
      case EnvModel::spin_flip: {
        const auto& v = occupied_raw(t, x + offset_) ? spec_.occupied : spec_.vacant;
        std::copy(v.begin(), v.end(), out.begin());
        return;
      }
    }
  }

  void log_probs(std::int64_t n, const Point& x, std::span<double> out) const {
    const auto t = n + time_offset_;
    switch (spec_.model) {
      case EnvModel::homogeneous:
        std::copy(fixed_log_.begin(), fixed_log_.end(), out.begin());
        return;
      case EnvModel::spin_flip: {
        if (t < 0) throw Error("negative time index");
        const auto& v = occupied_raw(t, x + offset_) ? occupied_log_ : vacant_log_;
        std::copy(v.begin(), v.end(), out.begin());
        return;
      }
      case EnvModel::iid:
        probs(n, x, out);
        for (double& p : out) p = std::log(p);
        return;
    }
  }

  std::vector<double> env_at(std::int64_t n, const Point& x) const {
    std::vector<double> v(spec_.range.size());
    probs(n, x, v);
    return v;
  }

  /// Occupation variable of the spin-flip field.
  int occupancy_at(std::int64_t n, const Point& x) const {
    if (spec_.model != EnvModel::spin_flip) throw Error("occupancy is defined for spin-flip fields only");
    const auto t = n + time_offset_;
    if (t < 0) throw Error("negative time index");
    return occupied_raw(t, x + offset_) ? 1 : 0;
  }

  EnvironmentField shift(std::int64_t m, const Point& z) const {
    if (m < 0) throw Error("time shift must be nonnegative");
    EnvironmentField f = *this;
    f.time_offset_ += m;
    f.offset_ += z;
    return f;
  }

 private:
  static constexpr std::uint64_t kTagIid = 0x11d;
  static constexpr std::uint64_t kTagInit = 0x5f0;
  static constexpr std::uint64_t kTagRefresh = 0x5f1;
  static constexpr std::uint64_t kTagValue = 0x5f2;

  // v = kappa + (1 - |R| kappa) w with w ~ symmetric Dirichlet(1) from
  // normalized exponential spacings.
  void iid_draw(std::int64_t t, const Point& x, std::span<double> out) const {
    CellRng rng(cell_key(spec_.seed, kTagIid, t, x));
    double total = 0.0;
    for (double& w : out) {
      w = -std::log(rng.uniform());
      total += w;
    }
    const double free_mass = 1.0 - static_cast<double>(out.size()) * spec_.kappa;
    const double k = static_cast<double>(out.size());
    for (double& w : out) w = spec_.kappa + free_mass * (total > 0.0 ? w / total : 1.0 / k);
  }

  // Each site is refreshed with probability `flip` per unit time to a fresh
  // Bernoulli(density) value, so Bernoulli(density) is stationary. The
  // current value is the one drawn at the last refresh at or before t.
  bool occupied_raw(std::int64_t t, const Point& x) const {
    if (spec_.flip > 0.0) {
      for (std::int64_t k = t; k >= 1; --k) {
        if (CellRng(cell_key(spec_.seed, kTagRefresh, k, x)).uniform() <= spec_.flip)
          return CellRng(cell_key(spec_.seed, kTagValue, k, x)).uniform() <= spec_.density;
      }
    }
    return CellRng(cell_key(spec_.seed, kTagInit, 0, x)).uniform() <= spec_.density;
  }

  DiscreteEnvSpec spec_;
  std::int64_t time_offset_ = 0;
  Point offset_;
  std::vector<double> fixed_, fixed_log_, occupied_log_, vacant_log_;
};

// ---------------------------------------------------------------------------
// continuous time

/// Rate environment on the unit vectors G, piecewise constant in time on
/// [kΔ, (k+1)Δ). Piece k reuses the discrete law ω_k(x, ·) of `base`
/// through the affine map rate(e) = κ1 + (κ2 - κ1)(v(e) - κ)/(1 - |G|κ).
struct ContinuousEnvSpec {
  DiscreteEnvSpec base;
  double kappa1 = 0.5;
  double kappa2 = 0.5;
  double piece = 1.0;

  void validate() const {
    base.validate();
    if (base.range.kind() != RangeKind::nearest_neighbor)
      throw Error("continuous-time environments jump along unit vectors");
    if (!(kappa1 > 0.0 && kappa1 <= kappa2)) throw Error("rate bounds need 0 < kappa1 <= kappa2");
    if (!(piece > 0.0)) throw Error("piece length must be positive");
  }

  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << base.canonical() << "|kappa1=" << kappa1 << "|kappa2=" << kappa2 << "|piece=" << piece;
    return os.str();
  }
};

class RateField {
 public:
  RateField() : RateField(ContinuousEnvSpec{}) {}
  explicit RateField(ContinuousEnvSpec spec) : spec_(std::move(spec)), discrete_((spec_.validate(), spec_.base)) {}

  const ContinuousEnvSpec& spec() const noexcept { return spec_; }
  const JumpRange& range() const noexcept { return discrete_.range(); }
  int dim() const noexcept { return discrete_.range().dim(); }
  double max_rate() const noexcept { return spec_.kappa2; }
  double min_rate() const noexcept { return spec_.kappa1; }
  double time_offset() const noexcept { return time_offset_; }
  const EnvironmentField& discrete() const noexcept { return discrete_; }

  std::int64_t piece_index(double t) const {
    return static_cast<std::int64_t>(std::floor((t + time_offset_) / spec_.piece));
  }

  /// First piece boundary strictly after local time t.
  double piece_end(double t) const {
    double end = static_cast<double>(piece_index(t) + 1) * spec_.piece - time_offset_;
    return end > t ? end : end + spec_.piece;
  }

  /// Rates of absolute piece k at local site x.
  void piece_rates(std::int64_t k, const Point& x, std::span<double> out) const {
    discrete_.probs(k, x, out);
    const double kappa = spec_.base.kappa;
    const double span = 1.0 - static_cast<double>(out.size()) * kappa;
    for (double& r : out) {
      double a = span > 1e-15 ? (r - kappa) / span : 0.0;
      r = spec_.kappa1 + (spec_.kappa2 - spec_.kappa1) * std::clamp(a, 0.0, 1.0);
    }
  }

  void rates(double t, const Point& x, std::span<double> out) const {
    if (t + time_offset_ < 0.0) throw Error("negative time");
    piece_rates(piece_index(t), x, out);
  }

  std::vector<double> rates_at(double t, const Point& x) const {
    std::vector<double> v(range().size());
    rates(t, x, v);
    return v;
  }

  /// rates_at(shift(s, z), t, y) = rates_at(t + s, y + z).
  RateField shift(double s, const Point& z) const {
    if (s < 0.0) throw Error("time shift must be nonnegative");
    RateField f = *this;
    f.time_offset_ += s;
    f.discrete_ = discrete_.shift(0, z);
    return f;
  }

 private:
  ContinuousEnvSpec spec_;
  EnvironmentField discrete_;
  double time_offset_ = 0.0;
};

/// CSV rows `n,x_1..x_d,e_index,prob` over times [t0, t1] and the cube of
/// the given radius.
inline void write_env_csv(std::ostream& os, const EnvironmentField& f, std::int64_t t0, std::int64_t t1,
                          std::int64_t radius, const std::string& config_hash = {}) {
  const int d = f.range().dim();
  os << "n";
  for (int i = 1; i <= d; ++i) os << ",x_" << i;
  os << ",e_index,prob" << (config_hash.empty() ? "" : ",config_hash") << "\n";
  Box box(d, radius);
  std::vector<double> v(f.range().size());
  char buf[40];
  for (std::int64_t n = t0; n <= t1; ++n)
    for (std::size_t i = 0; i < box.size(); ++i) {
      Point x = box.point(i);
      f.probs(n, x, v);
      for (std::size_t e = 0; e < v.size(); ++e) {
        os << n;
        for (auto c : x) os << "," << c;
        std::snprintf(buf, sizeof buf, "%.17g", v[e]);
        os << "," << e << "," << buf;
        if (!config_hash.empty()) os << "," << config_hash;
        os << "\n";
      }
    }
}

}  // namespace rwre
