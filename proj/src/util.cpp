#include "packetscope/util.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>

namespace packetscope {

Vec3 rotate_about(const Vec3& axis, double angle, const Vec3& v) {
  const Vec3 k = normalized(axis);
  const double c = std::cos(angle), s = std::sin(angle);
  const Vec3 kxv = cross(k, v);
  const double kd = dot(k, v);
  return {v[0] * c + kxv[0] * s + k[0] * kd * (1.0 - c),
          v[1] * c + kxv[1] * s + k[1] * kd * (1.0 - c),
          v[2] * c + kxv[2] * s + k[2] * kd * (1.0 - c)};
}

int Sym3::idx(int i, int j) {
  if (i == j) return i;
  int a = std::min(i, j), b = std::max(i, j);
  if (a == 0 && b == 1) return 3;
  if (a == 0 && b == 2) return 4;
  return 5;
}

Vec3 Sym3::apply(const Vec3& x) const {
  return {v[0] * x[0] + v[3] * x[1] + v[4] * x[2],
          v[3] * x[0] + v[1] * x[1] + v[5] * x[2],
          v[4] * x[0] + v[5] * x[1] + v[2] * x[2]};
}

EigSym3 eig_sym3(const Sym3& s) {
  // Cyclic Jacobi on a 3x3 symmetric matrix.
  double a[3][3] = {{s.v[0], s.v[3], s.v[4]}, {s.v[3], s.v[1], s.v[5]}, {s.v[4], s.v[5], s.v[2]}};
  double q[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int sweep = 0; sweep < 32; ++sweep) {
    double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if (off < 1e-30) break;
    for (int p = 0; p < 2; ++p) {
      for (int r = p + 1; r < 3; ++r) {
        if (a[p][r] == 0.0) continue;
        const double theta = (a[r][r] - a[p][p]) / (2.0 * a[p][r]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akr = a[k][r];
          a[k][p] = c * akp - sn * akr;
          a[k][r] = sn * akp + c * akr;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], ark = a[r][k];
          a[p][k] = c * apk - sn * ark;
          a[r][k] = sn * apk + c * ark;
        }
        for (int k = 0; k < 3; ++k) {
          const double qkp = q[k][p], qkr = q[k][r];
          q[k][p] = c * qkp - sn * qkr;
          q[k][r] = sn * qkp + c * qkr;
        }
      }
    }
  }
  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int i, int j) { return a[i][i] < a[j][j]; });
  EigSym3 out;
  for (int i = 0; i < 3; ++i) {
    out.val[i] = a[order[i]][order[i]];
    out.vec[i] = {q[0][order[i]], q[1][order[i]], q[2][order[i]]};
    out.vec[i] = normalized(out.vec[i]);
  }
  return out;
}

double block_sum(const double* data, std::size_t count) {
  return block_sum_fn(count, [&](std::size_t i) { return data[i]; });
}

double block_sum2(const double* a, const double* b, std::size_t count) {
  return block_sum_fn(count, [&](std::size_t i) { return a[i] * b[i]; });
}

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = 2.0 / ((1.0 - x * x) * pp * pp);
    weights[n - 1 - i] = weights[i];
  }
}

std::vector<Vec3> fibonacci_sphere(int n) {
  std::vector<Vec3> pts(n);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    pts[i] = {r * std::cos(phi), r * std::sin(phi), z};
  }
  return pts;
}

int effective_threads() {
  int nt = omp_get_max_threads();
  if (const char* env = std::getenv("PACKETSCOPE_THREADS")) {
    const int req = std::atoi(env);
    if (req > 0) nt = std::min(nt, req);
  }
  return nt;
}

void apply_thread_env() { omp_set_num_threads(effective_threads()); }

}  // namespace packetscope
