#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "packetscope/defects.hpp"

namespace packetscope {

enum class Provenance { Configured, Measured, OracleStub };
const char* provenance_name(Provenance p);

struct LedgerEntry {
  double value = 0.0;
  Provenance prov = Provenance::Configured;
  std::string run_id;  // measurement run for measured and stubbed entries
};

// Every constant the selection arithmetic consumes, with provenance. The
// covering entries describe one fixed two-layer covering of the unit collar
// (1, 2] by balls of radius 1/2: golden-angle layers at radius 1.25 (64
// points) and 1.75 (144 points). Worst covering distance 0.482, sampled
// overlap 7, shipped with one unit of safety. Dyadic annuli are covered by
// scaled copies, so the shell entry counts j_shell copies and the annular
// entry one copy at the selected scale.
struct ConstantsLedger {
  LedgerEntry n_col;   // balls covering the collar annulus
  LedgerEntry n_sh;    // balls covering the finite shell annuli combined
  LedgerEntry c_ov;    // covering overlap ceiling
  LedgerEntry c_ann;   // balls covering one dyadic annulus at its own scale
  LedgerEntry c_sc;    // score normalization gauge
  LedgerEntry c_vis;   // visibility normalization gauge
  LedgerEntry c_pass;  // passive-channel descent constant
  LedgerEntry c_frag;  // guaranteed mass fraction of a fragment child
  LedgerEntry c;       // universal descent prefactor
  LedgerEntry q_star;  // threshold score
  LedgerEntry m_star;  // envelope threshold
  LedgerEntry c_star;  // score fraction kept at selection
  LedgerEntry c_ph;    // phase-rigidity classification tolerance
  LedgerEntry c_fr;    // frame gap: dist^2 <= c_fr * defect
  LedgerEntry c0;      // endpoint gate as a fraction of visibility
  LedgerEntry eta;     // strict per-step loss in the descent bookkeeping
  LedgerEntry eta_ax;  // axisymmetric contraction rate (external input)
  LedgerEntry c_ax;    // axisymmetric contraction offset (external input)
  std::vector<std::pair<double, double>> c_eps_table;    // (eps, C_eps)
  std::vector<std::pair<double, double>> c_delta_table;  // (delta, C_delta)
};

ConstantsLedger default_ledger();
ConstantsLedger all_ones_ledger();  // unit covering data for arithmetic checks
void validate(const ConstantsLedger& led);  // positivity, run ids, table order

// c * min( delta / (n_col c_ov), delta / (n_sh c_ov),
//          min(delta, delta^2) / (c_ann c_ov), c_pass delta^2, c_frag ).
// Throws unless 0 < delta < 1.
double c_desc(double delta, const ConstantsLedger& led = default_ledger());

enum class Channel {
  Collar = 1,
  Shell = 2,
  Tail = 3,
  Passive = 4,
  Phase = 5,
  Low = 6,
  Fragment = 7,
};
const char* channel_name(Channel ch);

struct DescendantCertificate {
  Channel channel = Channel::Collar;
  Packet parent;
  Packet child;
  double score_ratio = 0.0;    // score(child) / score(parent)
  double bound = 0.0;          // ledger bound the ratio was tested against
  bool perturbative = false;   // no candidate realized both bound and descent
  bool truncated = false;      // search annulus clipped by the torus
  double channel_value = 0.0;  // measured channel mass that triggered extraction
  double threshold = 0.0;      // delta * visibility it was compared against
};

struct ExtractConfig {
  DefectConfig defect;
  LpConfig lp;
  RigidityConfig rig;
  double frag_level = 0.2;    // component superlevel, fraction of the ball max
  double frag_sep = 1.0;      // minimal component separation in units of rho
  double frag_cutoff = 0.05;  // interaction fraction rerouted to the tail channel
  double cap_cos = 0.85;      // cone half-width of the phase-patch filter
};

// Collar or finite-shell descent: picks the larger qualifying channel, covers
// the selected annulus with the scaled ledger covering, and returns the ball
// of maximal windowed vorticity mass (earliest slice on ties) as the child at
// half the annulus scale. Empty when neither channel reaches delta times the
// visibility.
std::optional<DescendantCertificate> extract_collar_or_shell(
    const FieldHistory& h, const Packet& q, double delta,
    const ConstantsLedger& led = default_ledger(), const ExtractConfig& cfg = {});

// Dyadic tail descent: pigeonholes the weighted annular masses, covers the
// winning annulus at its own scale, and demands a strictly earlier endpoint
// since the child scale grows; when no earlier slice exists the certificate
// comes back flagged perturbative.
std::optional<DescendantCertificate> extract_tail(
    const FieldHistory& h, const Packet& q, double delta,
    const ConstantsLedger& led = default_ledger(), const ExtractConfig& cfg = {});

// Passive / phase / low descent, dispatched to the dominant of the three
// groups. Passive and low children sit at the sample where the weighted
// residual density peaks; the phase child localizes the worst label patch
// (cap with maximal internal incoherence of the frame measure) through a
// cone filter. All three descend to half scale.
std::optional<DescendantCertificate> extract_passive_phase_low(
    const FieldHistory& h, const Packet& q, double delta, const DefectReport& report,
    const FrameMeasure& nu, const ConstantsLedger& led = default_ledger(),
    const ExtractConfig& cfg = {});

// Fragment descent: requires at least two separated superlevel components.
// When the cross kinetic energy of the component-induced velocities exceeds
// frag_cutoff of the local energy the mass is counted by the tail channel
// instead (extract_tail at tail_delta); otherwise the child is the strongest
// component with component_count measured inside its own ball.
std::optional<DescendantCertificate> extract_fragment(
    const FieldHistory& h, const Packet& q, const ConstantsLedger& led = default_ledger(),
    const ExtractConfig& cfg = {}, double tail_delta = 0.25);

struct DichotomyResult {
  bool perturbative = false;
  double c_delta = 0.0;  // e_fin / visibility on the perturbative branch
  std::optional<DescendantCertificate> cert;
  std::vector<std::pair<std::string, double>> channels;  // measured masses
  DefectReport report;
  FrameMeasure nu;
  int components = 1;  // superlevel components at the endpoint slice
};

// Measures every channel against delta times the visibility and dispatches
// extractors for the qualifying groups in decreasing order of mass, fragments
// last; returns the first certified descendant, or the perturbative verdict
// with the measured c_delta when every attempt is exhausted.
DichotomyResult dichotomy_check(const FieldHistory& h, const Packet& q, double delta,
                                const ConstantsLedger& led = default_ledger(),
                                const ExtractConfig& cfg = {});

// Reported contraction of the axisymmetric-compatible score at a swirl
// endpoint. The rate and offset are external inputs carried by the ledger;
// the bound is (1 - eta_ax) * q_ax + c_ax * e_fin.
struct AxContraction {
  double q_ax = 0.0;
  double eta_ax = 0.0;
  double c_ax = 0.0;
  double contracted = 0.0;
};

struct DescentStep {
  DescendantCertificate cert;
  double delta = 0.0;
  std::vector<std::pair<std::string, double>> channels;
};

struct DescentConfig {
  ScanConfig scan;
  ThresholdConfig thr;
  ExtractConfig extract;
  ConstantsLedger ledger = default_ledger();
  double delta = 0.25;
  int max_steps = 0;  // 0: snapshots * (scale depth + channels + components)
};

struct DescentTranscript {
  std::optional<FirstThreshold> start;  // empty: threshold never reached
  std::vector<DescentStep> steps;
  Packet final;
  bool perturbative_stop = false;
  double c_delta = 0.0;
  DefectReport final_report;  // channels at the stopping packet
  std::optional<Classification> endpoint;
  std::optional<AxContraction> ax;
  bool invariant_violation = false;
  std::string violation;
};

// First-threshold selection followed by repeated dichotomy until the
// perturbative verdict (which is then classified) or an invariant violation;
// every recorded step strictly decreases the selection key.
DescentTranscript descent_run(const FieldHistory& h, const DescentConfig& cfg = {});

}  // namespace packetscope
