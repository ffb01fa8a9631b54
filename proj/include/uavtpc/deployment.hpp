#pragma once

// Hover deployment: choose one hover position and transmit power per UAV
// that maximize the static sum rate, subject to altitude limits, pairwise
// separation, power budget, and reachability from the launch state within
// half the mission (the other half is reserved for the return leg). This is
// the single-slot instance of the SCA machinery.

#include <optional>

#include "uavtpc/scenario.hpp"
#include "uavtpc/sca_tpc.hpp"

namespace uavtpc {

struct DeploymentSolution {
  Matrix3Xd positions;   // 3 x K hover points
  VectorXd powers_w;     // K
  VectorXd rates_bps;    // K, at the hover point
  double sum_rate_bps = 0;
  int iterations = 0;
};

// Round-trip deployment: hover must be reachable from the launch state in
// T/2 using level speed for the horizontal leg and min(v_ascend, v_descend)
// for the vertical leg (so the mirrored return leg is feasible too). UAVs
// whose optimized power collapses to ~0 are re-centered above their own
// ground terminal when that spot is clear of the others.
DeploymentSolution solve_deployment(const Scenario& scen,
                                    const ScaConfig& cfg = {});

// One-way deployment: no return leg. The full horizon T is available and
// ascent/descent caps apply separately through a shared time-split variable,
// i.e. horizontal and vertical travel must fit into T jointly:
//   |xy - xy0| / v_level + max(dz+/v_ascend, dz-/v_descend) <= T.
DeploymentSolution solve_oneway_deployment(const Scenario& scen,
                                           const ScaConfig& cfg = {});

// Travel-time bound on the outbound slot count: the largest over UAVs of the
// slots needed to cover the horizontal leg at v_level and the vertical leg at
// min(v_ascend, v_descend), plus `slack_slots`, never less than 1. Throws
// Infeasible when the result exceeds half the horizon.
int estimate_reduced_horizon(const Scenario& scen, const Matrix3Xd& hover,
                             int slack_slots = 2);

}  // namespace uavtpc
