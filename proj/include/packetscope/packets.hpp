#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "packetscope/windows.hpp"

namespace packetscope {

// A parabolic packet: ball of radius rho around center, time window of length
// rho^2 ending at t_end.
struct Packet {
  Vec3 center{0.0, 0.0, 0.0};
  double t_end = 0.0;
  double rho = 0.0;
  int component_count = 1;
  int channel_index = 0;  // residual channel that produced it; 0 for threshold scans
  std::uint64_t id = 0;
  std::uint64_t parent_id = 0;
  std::vector<std::string> lineage;  // one human-readable hop per ancestor

  double t_begin() const { return t_end - rho * rho; }
  double visibility_t_begin() const { return t_end - 4.0 * rho * rho; }
};

// Lexicographic selection order: earlier endpoint, then smaller scale, then
// fewer components, then the more localized residual channel (higher index),
// then center coordinates.
struct SelectionKey {
  double t_end = 0.0;
  double rho = 0.0;
  int component_count = 1;
  int channel_index = 0;
  Vec3 center{0.0, 0.0, 0.0};
};

int compare(const SelectionKey& a, const SelectionKey& b);  // -1 / 0 / +1
inline bool operator<(const SelectionKey& a, const SelectionKey& b) { return compare(a, b) < 0; }
SelectionKey selection_key(const Packet& p);

struct ThresholdConfig {
  double m_star = 1.0;       // envelope threshold
  double c_star = 0.5;       // score fraction kept at selection
  int score_exponent = -1;   // alpha in rho^alpha; -1 literal, +1 scale invariant
  double baseline_energy = 1.0;
};

// Amortizes the padded quadratic spectra that every windowed integral needs.
class QuadCache {
 public:
  explicit QuadCache(const FieldHistory& h, std::size_t capacity = 6);
  const WindowEngine& engine() const { return eng_; }
  const FieldHistory& history() const { return *h_; }
  const SpecField& enstrophy(std::size_t snap);   // |omega|^2
  const SpecField& grad_enstrophy(std::size_t snap);  // |grad omega|^2
  const SpecField& speed_sq(std::size_t snap);    // |u|^2

 private:
  const SpecField& get(int kind, std::size_t snap);
  const FieldHistory* h_;
  WindowEngine eng_;
  std::size_t cap_;
  std::map<std::pair<int, std::size_t>, std::pair<SpecField, std::uint64_t>> cache_;
  std::uint64_t tick_ = 0;
};

// rho^alpha * sup over window snapshots of the |omega|^2 mass in B_rho
double packet_score(QuadCache& cache, const Packet& p, int alpha);
double slice_score(QuadCache& cache, std::size_t snap, const Vec3& center, double rho, int alpha);

struct VisibilityResult {
  double grad_term = 0.0;    // chi^2 |grad omega|^2
  double cutoff_term = 0.0;  // |grad chi|^2 |omega|^2
  double total() const { return grad_term + cutoff_term; }
};
VisibilityResult visibility(QuadCache& cache, const Packet& p);

struct ScanConfig {
  int j_min = 2;                    // largest scale rho = L / 2^j
  int j_max = 0;                    // 0: deepest scale with rho >= 4 dx
  double center_stride_frac = 0.5;  // center lattice spacing as a fraction of rho
};

struct EnvelopeRecord {
  std::vector<double> times;
  std::vector<double> m_crit;  // running envelope (3d + tagged axisymmetric)
  std::vector<double> m3d;     // per-time slice maximum
  std::vector<double> m_ax;    // running tagged-axisymmetric contribution
  std::vector<Packet> argmax;  // packet realizing m3d at each time
  bool lattice_empty = false;  // no admissible scale at any recorded time
};

// Scans every admissible (time, scale, center) cell. The envelope at time t
// equals the running max of time-slice maxima: a packet's interior sup is
// always realized by some slice that is itself admissible at its own time.
EnvelopeRecord envelope_scan(QuadCache& cache, const ScanConfig& scan, const ThresholdConfig& thr,
                             const std::vector<std::pair<double, double>>& ax_terms = {});

struct FirstThreshold {
  Packet packet;
  SelectionKey key;
  double score = 0.0;
  double t_star = 0.0;
  double m_star = 0.0;
};

// First time the envelope reaches thr.m_star, then the selection-minimal
// packet among scan cells ending by then with score >= c_star * m_star.
std::optional<FirstThreshold> first_threshold_select(QuadCache& cache, const ScanConfig& scan,
                                                     const ThresholdConfig& thr,
                                                     const std::vector<std::pair<double, double>>& ax_terms = {});

// connected pieces of the superlevel set {|omega| >= level_frac * max} in B_rho
struct Component {
  Vec3 centroid{0.0, 0.0, 0.0};
  double mass = 0.0;  // sum of |omega|^2 over member cells * dx^3
  std::vector<std::size_t> cells;
};
struct ComponentAnalysis {
  int count = 0;
  double level = 0.0;
  std::vector<Component> parts;
};
ComponentAnalysis count_components(const FieldSnapshot& snap, const Vec3& center, double rho,
                                   double level_frac = 0.2, double min_sep_frac = 1.0);

struct AuditConfig {
  double score_bound = 0.0;       // required child/parent score ratio
  double energy_ceiling = 1.0 + 1e-9;
  double pressure_tol = 1e-3;
  double commutator_tol = 1e-2;
  std::optional<double> commutator;  // measured by the caller when available
};

struct InheritanceAudit {
  double score_ratio = 0.0;
  bool score_ok = false;
  bool time_ok = false;
  bool scale_ok = false;
  double energy_ratio = 0.0;
  bool energy_ok = false;
  double pressure_residual = 0.0;
  bool pressure_ok = false;
  double commutator = 0.0;
  bool commutator_checked = false;
  bool commutator_ok = true;
  bool passed() const {
    return score_ok && time_ok && scale_ok && energy_ok && pressure_ok && commutator_ok;
  }
};

InheritanceAudit inheritance_audit(QuadCache& cache, const Packet& parent, const Packet& child,
                                   int alpha, const AuditConfig& cfg);

}  // namespace packetscope
