#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace packetscope {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  double n = norm(a);
  if (n == 0.0) throw std::invalid_argument("normalized: zero vector");
  return (1.0 / n) * a;
}

// Rodrigues rotation of v about unit axis by angle.
Vec3 rotate_about(const Vec3& axis, double angle, const Vec3& v);

// Angle between lines (projective): in [0, pi/2].
inline double angle_projective(const Vec3& a, const Vec3& b) {
  double c = std::abs(dot(a, b)) / (norm(a) * norm(b));
  return std::acos(std::min(1.0, c));
}

// Chord distance between lines: min(|a-b|, |a+b|) for unit a, b.
inline double chord_projective(const Vec3& a, const Vec3& b) {
  double d2m = dot(a - b, a - b);
  double d2p = dot(a + b, a + b);
  return std::sqrt(std::min(d2m, d2p));
}

inline double wrap_angle(double t) {
  // into (-pi, pi]
  t = std::fmod(t, kTwoPi);
  if (t <= -kPi) t += kTwoPi;
  if (t > kPi) t -= kTwoPi;
  return t;
}

// Distance on the circle, in [0, pi].
inline double circle_dist(double a, double b) { return std::abs(wrap_angle(a - b)); }

// Symmetric 3x3, components xx, yy, zz, xy, xz, yz.
struct Sym3 {
  std::array<double, 6> v{};
  double& operator[](int i) { return v[i]; }
  double operator[](int i) const { return v[i]; }
  static int idx(int i, int j);
  double at(int i, int j) const { return v[idx(i, j)]; }
  Vec3 apply(const Vec3& x) const;
  double trace() const { return v[0] + v[1] + v[2]; }
  double frob2() const {  // sum of squares of all 9 entries
    return v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + 2.0 * (v[3] * v[3] + v[4] * v[4] + v[5] * v[5]);
  }
};

inline Sym3 operator+(const Sym3& a, const Sym3& b) {
  Sym3 r;
  for (int i = 0; i < 6; ++i) r.v[i] = a.v[i] + b.v[i];
  return r;
}
inline Sym3 operator-(const Sym3& a, const Sym3& b) {
  Sym3 r;
  for (int i = 0; i < 6; ++i) r.v[i] = a.v[i] - b.v[i];
  return r;
}
inline Sym3 operator*(double s, const Sym3& a) {
  Sym3 r;
  for (int i = 0; i < 6; ++i) r.v[i] = s * a.v[i];
  return r;
}
inline double frob_inner(const Sym3& a, const Sym3& b) {
  return a.v[0] * b.v[0] + a.v[1] * b.v[1] + a.v[2] * b.v[2] +
         2.0 * (a.v[3] * b.v[3] + a.v[4] * b.v[4] + a.v[5] * b.v[5]);
}

// d_i d_j as a symmetric matrix.
inline Sym3 outer_sym(const Vec3& d) {
  Sym3 r;
  r.v = {d[0] * d[0], d[1] * d[1], d[2] * d[2], d[0] * d[1], d[0] * d[2], d[1] * d[2]};
  return r;
}

struct EigSym3 {
  std::array<double, 3> val;   // ascending
  std::array<Vec3, 3> vec;     // unit, matching order
};

// Cyclic Jacobi; exact enough for 3x3 at double precision.
EigSym3 eig_sym3(const Sym3& a);

// --- deterministic reductions -------------------------------------------
//
// Partial sums are accumulated in fixed blocks and combined in block order,
// so the result is bit-identical regardless of the number of OpenMP threads.

inline constexpr std::size_t kSumBlock = 4096;

double block_sum(const double* data, std::size_t count);
double block_sum2(const double* a, const double* b, std::size_t count);  // sum a[i]*b[i]

template <class F>
double block_sum_fn(std::size_t count, F&& term) {
  const std::size_t nb = (count + kSumBlock - 1) / kSumBlock;
  std::vector<double> partial(nb, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(nb); ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kSumBlock;
    const std::size_t hi = std::min(lo + kSumBlock, count);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    partial[static_cast<std::size_t>(b)] = s;
  }
  double s = 0.0;
  for (std::size_t b = 0; b < nb; ++b) s += partial[b];
  return s;
}

// argmax with a strict total order: larger value wins, ties broken by lower index.
struct ArgMax {
  double value = -1.0 / 0.0;
  std::size_t index = 0;
  bool valid = false;
  void consider(double v, std::size_t i) {
    if (!valid || v > value || (v == value && i < index)) {
      value = v;
      index = i;
      valid = true;
    }
  }
  void merge(const ArgMax& o) {
    if (o.valid) consider(o.value, o.index);
  }
};

// --- errors ---------------------------------------------------------------

struct CflError : std::runtime_error {
  double admissible_dt;
  CflError(const std::string& msg, double dt_ok) : std::runtime_error(msg), admissible_dt(dt_ok) {}
};

struct FieldError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvariantViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Gauss-Legendre nodes/weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

// Fibonacci point set on the unit sphere; deterministic, roughly uniform.
std::vector<Vec3> fibonacci_sphere(int n);

// Max number of OpenMP threads honoring PACKETSCOPE_THREADS.
int effective_threads();
void apply_thread_env();

}  // namespace packetscope
