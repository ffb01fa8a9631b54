#pragma once

// Feasible starting trajectories for the SCA solvers, and the WMMSE power
// control used to seed transmit powers along a fixed path.

#include "uavtpc/deployment.hpp"
#include "uavtpc/scenario.hpp"

namespace uavtpc {

// Weighted-MMSE power control for fixed positions: alternating closed-form
// updates of receive scalar, MSE weight, and sqrt-power, run per slot.
// Monotone in sum rate; stops on relative sum-rate change < 1e-6 or 200
// sweeps. Returned powers are nudged into the open interval (0, p_max).
MatrixXd wmmse_power_control(const std::vector<Matrix3Xd>& positions,
                             const Scenario& scen);

struct UavLegPlan {
  int delay_slots = 0;    // held near the launch point to let others clear
  int climb_slots = 0;    // slots until the cruise altitude is reached
  int cruise_slots = 0;   // remaining level flight toward the hover point
  int settle_slots = 0;   // final vertical leg down/up to the hover altitude
  double cruise_altitude_m = 0;
};

struct InitPlan {
  std::vector<UavLegPlan> per_uav;
  int total_slots = 0;
};

// Deterministic four-step path builder toward the hover deployment:
//   1. each UAV gets its own cruise altitude h_min + k * d_min (stacked
//      layers, error if the stack tops out above h_max);
//   2. fly: climb to the layer while cruising toward the hover point, then
//      level flight, then settle vertically onto the hover altitude;
//   3. later UAVs are delayed near their launch point (check-and-delay, in
//      index order) until the whole path clears every earlier UAV by d_min;
//      if no delay schedule clears the simultaneous-climb profile (crossing
//      departure lanes), all departures fall back to climbing in place to
//      the cruise layer before flying out, and delays are searched again;
//   4. transmit powers along the path come from wmmse_power_control.
//
// Steps use a ~1% speed margin and delayed holds are vertically staggered a
// few centimetres, so the result is strictly inside every constraint; the
// final slot is placed bit-exactly at the hover anchors. Terminal hover
// holds pad the path to at least `min_slots`. Throws Infeasible when the
// path does not fit into half the horizon.
TrajectorySolution build_initial_trajectory(const Scenario& scen,
                                            const DeploymentSolution& hover,
                                            int min_slots = 0,
                                            InitPlan* plan = nullptr);

}  // namespace uavtpc
