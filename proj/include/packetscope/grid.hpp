#pragma once

#include <cstddef>
#include <stdexcept>

#include "packetscope/util.hpp"

namespace packetscope {

// Periodic cube [0, L)^3 sampled on n^3 points, x fastest.
// Spectral layout is FFTW r2c: kx is the halved axis, index kx + (n/2+1)*(ky + n*kz).
struct Grid {
  int n = 0;
  double box_length = kTwoPi;
  double viscosity = 1.0;

  Grid() = default;
  Grid(int n_, double L, double nu) : n(n_), box_length(L), viscosity(nu) {
    if (n < 8 || (n & (n - 1)) != 0) throw ConfigError("grid: n must be a power of two, n >= 8");
    if (L <= 0.0) throw ConfigError("grid: box length must be positive");
    if (nu <= 0.0) throw ConfigError("grid: viscosity must be positive");
  }

  double dx() const { return box_length / n; }
  std::size_t real_size() const { return static_cast<std::size_t>(n) * n * n; }
  std::size_t spec_size() const { return static_cast<std::size_t>(n) * n * (n / 2 + 1); }

  // signed integer mode for a full (non-halved) axis index
  int mode_of(int i) const { return i <= n / 2 ? i : i - n; }
  // physical wavenumber of integer mode m
  double k_of(int m) const { return kTwoPi / box_length * m; }

  // 2/3-rule band: modes with every |m_axis| <= n/3 are retained
  int dealias_mode() const { return n / 3; }
  double k_min() const { return kTwoPi / box_length; }
  double k_max_resolved() const { return k_of(dealias_mode()); }

  std::size_t real_index(int ix, int iy, int iz) const {
    return static_cast<std::size_t>(ix) + static_cast<std::size_t>(n) * (static_cast<std::size_t>(iy) + static_cast<std::size_t>(n) * iz);
  }
  std::size_t spec_index(int kx, int ky, int kz) const {
    return static_cast<std::size_t>(kx) + static_cast<std::size_t>(n / 2 + 1) * (static_cast<std::size_t>(ky) + static_cast<std::size_t>(n) * kz);
  }

  Vec3 point(int ix, int iy, int iz) const {
    return {ix * dx(), iy * dx(), iz * dx()};
  }

  // wrap a coordinate into [0, L)
  double wrap(double x) const {
    double r = std::fmod(x, box_length);
    if (r < 0.0) r += box_length;
    return r;
  }
  // minimal periodic displacement a-b, each component in [-L/2, L/2)
  Vec3 min_image(const Vec3& a, const Vec3& b) const {
    Vec3 d = a - b;
    for (int c = 0; c < 3; ++c) {
      d[c] = std::fmod(d[c], box_length);
      if (d[c] < -0.5 * box_length) d[c] += box_length;
      if (d[c] >= 0.5 * box_length) d[c] -= box_length;
    }
    return d;
  }

  bool operator==(const Grid& o) const {
    return n == o.n && box_length == o.box_length && viscosity == o.viscosity;
  }
};

// Visit every r2c spectral slot. fn(index, mx, my, mz, multiplicity) where
// multiplicity is 2 for slots whose conjugate lives in the dropped half, 1 otherwise.
template <class F>
void spec_for_each(const Grid& g, F&& fn) {
  const int n = g.n;
  const int nx = n / 2 + 1;
  std::size_t idx = 0;
  for (int kz = 0; kz < n; ++kz) {
    const int mz = g.mode_of(kz);
    for (int ky = 0; ky < n; ++ky) {
      const int my = g.mode_of(ky);
      for (int kx = 0; kx < nx; ++kx, ++idx) {
        const int mx = kx;
        const int mult = (kx == 0 || kx == n / 2) ? 1 : 2;
        fn(idx, mx, my, mz, mult);
      }
    }
  }
}

}  // namespace packetscope
