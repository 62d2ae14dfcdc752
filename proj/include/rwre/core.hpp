#pragma once

// Shared primitives: lattice points, boxes, log-space arithmetic, stable
// hashing, counter-based per-cell random streams and a deterministic
// parallel loop.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace rwre {

inline constexpr int kMaxDim = 4;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a computation does not fit the configured box or memory
/// budget. `hint()` carries the remediation (a larger radius, a budget).
class ResourceError : public Error {
 public:
  ResourceError(const std::string& what, std::string hint)
      : Error(what + " (" + hint + ")"), hint_(std::move(hint)) {}
  const std::string& hint() const noexcept { return hint_; }

 private:
  std::string hint_;
};

template <class T>
class BasicPoint {
 public:
  BasicPoint() = default;
  explicit BasicPoint(int dim) : dim_(dim) {
    if (dim < 1 || dim > kMaxDim) throw Error("dimension must be in [1, 4]");
  }
  BasicPoint(std::initializer_list<T> xs) : BasicPoint(static_cast<int>(xs.size())) {
    std::copy(xs.begin(), xs.end(), c_.begin());
  }
  static BasicPoint from(std::span<const T> xs) {
    BasicPoint p(static_cast<int>(xs.size()));
    std::copy(xs.begin(), xs.end(), p.c_.begin());
    return p;
  }

  int dim() const noexcept { return dim_; }
  T operator[](int i) const noexcept { return c_[static_cast<std::size_t>(i)]; }
  T& operator[](int i) noexcept { return c_[static_cast<std::size_t>(i)]; }
  const T* begin() const noexcept { return c_.data(); }
  const T* end() const noexcept { return c_.data() + dim_; }

  BasicPoint& operator+=(const BasicPoint& o) {
    check_same(o);
    for (int i = 0; i < dim_; ++i) c_[i] += o.c_[i];
    return *this;
  }
  BasicPoint& operator-=(const BasicPoint& o) {
    check_same(o);
    for (int i = 0; i < dim_; ++i) c_[i] -= o.c_[i];
    return *this;
  }
  friend BasicPoint operator+(BasicPoint a, const BasicPoint& b) { return a += b; }
  friend BasicPoint operator-(BasicPoint a, const BasicPoint& b) { return a -= b; }
  friend BasicPoint operator-(BasicPoint a) {
    for (int i = 0; i < a.dim_; ++i) a.c_[i] = -a.c_[i];
    return a;
  }
  friend BasicPoint operator*(T s, BasicPoint a) {
    for (int i = 0; i < a.dim_; ++i) a.c_[i] *= s;
    return a;
  }

  friend bool operator==(const BasicPoint&, const BasicPoint&) = default;
  friend auto operator<=>(const BasicPoint&, const BasicPoint&) = default;

  bool is_zero() const noexcept {
    return std::all_of(begin(), end(), [](T v) { return v == T{0}; });
  }

 private:
  void check_same(const BasicPoint& o) const {
    if (o.dim_ != dim_) throw Error("dimension mismatch");
  }

  int dim_ = 0;
  std::array<T, kMaxDim> c_{};
};

using Point = BasicPoint<std::int64_t>;
using Vec = BasicPoint<double>;

inline Vec to_vec(const Point& p) {
  Vec v(p.dim());
  for (int i = 0; i < p.dim(); ++i) v[i] = static_cast<double>(p[i]);
  return v;
}

inline std::int64_t l1_norm(const Point& p) {
  std::int64_t s = 0;
  for (auto v : p) s += v < 0 ? -v : v;
  return s;
}

inline std::int64_t linf_norm(const Point& p) {
  std::int64_t s = 0;
  for (auto v : p) s = std::max(s, v < 0 ? -v : v);
  return s;
}

inline double l2_norm(const Vec& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double l2_norm(const Point& p) { return l2_norm(to_vec(p)); }

inline std::string to_string(const Point& p) {
  std::string s = "(";
  for (int i = 0; i < p.dim(); ++i) {
    if (i) s += ",";
    s += std::to_string(p[i]);
  }
  return s + ")";
}

/// Axis-aligned cube [-radius, radius]^dim, stored row-major with the last
/// axis contiguous. A "row" fixes every coordinate except the last one.
class Box {
 public:
  Box() = default;
  Box(int dim, std::int64_t radius) : dim_(dim), radius_(radius), side_(2 * radius + 1) {
    if (dim < 1 || dim > kMaxDim) throw Error("dimension must be in [1, 4]");
    if (radius < 0) throw Error("negative box radius");
    std::size_t s = 1;
    for (int i = dim - 1; i >= 0; --i) {
      stride_[static_cast<std::size_t>(i)] = s;
      s *= static_cast<std::size_t>(side_);
    }
    size_ = s;
  }

  int dim() const noexcept { return dim_; }
  std::int64_t radius() const noexcept { return radius_; }
  std::int64_t side() const noexcept { return side_; }
  std::size_t size() const noexcept { return size_; }
  std::size_t rows() const noexcept { return size_ / static_cast<std::size_t>(side_); }

  bool contains(const Point& p) const noexcept {
    if (p.dim() != dim_) return false;
    for (auto v : p)
      if (v < -radius_ || v > radius_) return false;
    return true;
  }

  std::optional<std::size_t> index(const Point& p) const noexcept {
    if (!contains(p)) return std::nullopt;
    std::size_t idx = 0;
    for (int i = 0; i < dim_; ++i)
      idx += static_cast<std::size_t>(p[i] + radius_) * stride_[static_cast<std::size_t>(i)];
    return idx;
  }

  Point point(std::size_t idx) const {
    Point p(dim_);
    for (int i = 0; i < dim_; ++i) {
      auto s = stride_[static_cast<std::size_t>(i)];
      p[i] = static_cast<std::int64_t>(idx / s) - radius_;
      idx %= s;
    }
    return p;
  }

  /// Row holding the leading coordinates of p (its last coordinate is
  /// ignored); nullopt when outside the box.
  std::optional<std::size_t> row_index(const Point& p) const noexcept {
    std::size_t r = 0;
    const auto side = static_cast<std::size_t>(side_);
    for (int i = 0; i + 1 < dim_; ++i) {
      if (p[i] < -radius_ || p[i] > radius_) return std::nullopt;
      r = r * side + static_cast<std::size_t>(p[i] + radius_);
    }
    return r;
  }

  /// Leading coordinates of a row; the last coordinate is left at zero.
  Point row_point(std::size_t row) const {
    Point p = point(row * static_cast<std::size_t>(side_));
    p[dim_ - 1] = 0;
    return p;
  }

 private:
  int dim_ = 1;
  std::int64_t radius_ = 0;
  std::int64_t side_ = 1;
  std::size_t size_ = 1;
  std::array<std::size_t, kMaxDim> stride_{};
};

// ---------------------------------------------------------------------------
// log-space arithmetic

inline double log_add(double a, double b) noexcept {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

/// Max-shifted log-sum-exp, summed in index order.
inline double log_sum_exp(std::span<const double> xs) noexcept {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  if (hi == kInf) return kInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

// ---------------------------------------------------------------------------
// hashing and counter-based randomness

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) noexcept {
  return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

/// splitmix64 stream seeded by a cell key. Uniforms lie in (0, 1].
class CellRng {
 public:
  explicit CellRng(std::uint64_t key) noexcept : state_(key) {}
  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }
  double uniform() noexcept { return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

inline std::uint64_t cell_key(std::uint64_t seed, std::uint64_t tag, std::int64_t n,
                              const Point& x) noexcept {
  std::uint64_t h = hash_combine(mix64(seed), tag);
  h = hash_combine(h, static_cast<std::uint64_t>(n));
  for (auto v : x) h = hash_combine(h, static_cast<std::uint64_t>(v));
  return h;
}

// ---------------------------------------------------------------------------

/// Runs fn(begin, end) over [0, count) split into contiguous chunks, one per
/// worker. Work items must write disjoint outputs; results then do not
/// depend on the thread count.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  std::size_t workers = threads < 1 ? 1 : static_cast<std::size_t>(threads);
  workers = std::min(workers, count);
  if (workers <= 1 || count < 64) {
    fn(std::size_t{0}, count);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t b = w * chunk, e = std::min(count, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(count, chunk));
}

}  // namespace rwre
