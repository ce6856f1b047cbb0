#include "packetscope/ref.hpp"

#include <cmath>

#include "packetscope/spectral_ops.hpp"

namespace packetscope::ref {

namespace {

// serial box walk over the cells within `reach` of the center
template <typename F>
void for_box(const Grid& g, const Vec3& center, double reach, F&& body) {
  const double h = g.dx();
  const int span = static_cast<int>(std::ceil(reach / h)) + 1;
  const int cx = static_cast<int>(std::llround(center[0] / h));
  const int cy = static_cast<int>(std::llround(center[1] / h));
  const int cz = static_cast<int>(std::llround(center[2] / h));
  auto wrap = [&](int i) { return ((i % g.n) + g.n) % g.n; };
  for (int dz = -span; dz <= span; ++dz)
    for (int dy = -span; dy <= span; ++dy)
      for (int dx = -span; dx <= span; ++dx) {
        const int ix = wrap(cx + dx), iy = wrap(cy + dy), iz = wrap(cz + dz);
        const Vec3 d = g.min_image(g.point(ix, iy, iz), center);
        const double r = norm(d);
        if (r <= reach) body(g.real_index(ix, iy, iz), r);
      }
}

std::vector<std::size_t> score_slices(const FieldHistory& h, const Packet& q) {
  std::vector<std::size_t> idx = h.window_indices(q.t_begin(), q.t_end);
  if (idx.empty()) {
    // lone-snapshot fallback: nearest stored time at or before the endpoint
    std::size_t best = 0;
    for (std::size_t i = 0; i < h.size(); ++i)
      if (h.at(i).time <= q.t_end + 1e-12) best = i;
    idx.push_back(best);
  }
  return idx;
}

}  // namespace

double ball_enstrophy(const FieldSnapshot& snap, const Vec3& center, double rho) {
  const VecField w = snap.vorticity();
  const double cell = std::pow(snap.grid.dx(), 3);
  double acc = 0.0;
  for_box(snap.grid, center, rho, [&](std::size_t id, double) {
    acc += w[0][id] * w[0][id] + w[1][id] * w[1][id] + w[2][id] * w[2][id];
  });
  return acc * cell;
}

double packet_score(const FieldHistory& h, const Packet& q, int alpha) {
  double sup = 0.0;
  for (std::size_t i : score_slices(h, q))
    sup = std::max(sup, ball_enstrophy(h.at(i), q.center, q.rho));
  return std::pow(q.rho, alpha) * sup;
}

double visibility(const FieldHistory& h, const Packet& q) {
  std::vector<std::size_t> idx = h.window_indices(q.visibility_t_begin(), q.t_end);
  if (idx.empty()) idx = score_slices(h, q);
  std::vector<double> times;
  for (std::size_t i : idx) times.push_back(h.at(i).time);
  const std::vector<double> wts = trapezoid_weights(times, 4.0 * q.rho * q.rho);

  const Cutoff chi{q.rho};
  const double cell = std::pow(h.grid.dx(), 3);
  double acc = 0.0;
  for (std::size_t s = 0; s < idx.size(); ++s) {
    const SpecVec what = h.at(idx[s]).vorticity_hat();
    const VecField w = to_real(h.grid, what);
    const std::array<RealField, 9> gw = gradient_tensor(h.grid, what);
    double grad_term = 0.0, cut_term = 0.0;
    for_box(h.grid, q.center, 2.0 * q.rho, [&](std::size_t id, double r) {
      const double c = chi.chi(r);
      const double dc = chi.dchi(r);
      double g2 = 0.0;
      for (int k = 0; k < 9; ++k) g2 += gw[k][id] * gw[k][id];
      const double w2 = w[0][id] * w[0][id] + w[1][id] * w[1][id] + w[2][id] * w[2][id];
      grad_term += c * c * g2;
      cut_term += dc * dc * w2;
    });
    acc += wts[s] * (grad_term + cut_term) * cell;
  }
  return acc;
}

double cubic_form_slice(const Grid& g, const Vec3& center, const Cutoff& chi, const VecField& w1,
                        const VecField& w2, const VecField& w3) {
  const SpecVec w2h = to_spectral(g, w2);
  // T[3*i+j] = d_i (-Delta)^{-1} w2_j
  std::array<RealField, 9> T;
  for (int j = 0; j < 3; ++j) {
    const SpecField pot = inv_laplacian_hat(g, w2h[j]);
    const SpecVec gp = gradient_hat(g, pot);
    for (int i = 0; i < 3; ++i) T[3 * i + j] = to_real_scalar(g, gp[i]);
  }
  const double cell = std::pow(g.dx(), 3);
  double acc = 0.0;
  for_box(g, center, 2.0 * chi.rho, [&](std::size_t id, double r) {
    const double c = chi.chi(r);
    if (c <= 0.0) return;
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s += w1[i][id] * T[3 * i + j][id] * w3[j][id];
    acc += c * c * s;
  });
  return acc * cell;
}

}  // namespace packetscope::ref
