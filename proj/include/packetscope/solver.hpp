#pragma once

#include "packetscope/field.hpp"

namespace packetscope {

struct StepControl {
  double cfl_limit = 0.5;
  bool check_finite = true;
};

// Advective CFL bound for the given state.
double admissible_dt(const FieldSnapshot& snap, double cfl_limit = 0.5);

// One step of the dealiased pseudo-spectral scheme: integrating-factor RK4 in
// the velocity, viscous dissipation co-integrated through the same stages so
// the discrete energy budget closes to integrator order. Throws CflError when
// dt exceeds the advective limit; dissipation_acc accumulates
// 2 nu * integral |grad u|^2 dt across calls.
FieldSnapshot step(const FieldSnapshot& snap, double dt, const StepControl& ctl, double& dissipation_acc);

struct RunParams {
  double dt = 0.0;
  int steps = 0;
  int snap_every = 1;
  StepControl control;
};

// Integrate and record snapshots every snap_every steps (plus the initial state).
FieldHistory run_history(const FieldSnapshot& initial, const RunParams& params);

}  // namespace packetscope
