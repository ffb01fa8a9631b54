#pragma once

// Segment-by-segment driver: instead of optimizing the whole outbound half
// at once, chains fixed-length windows of the joint trajectory/power
// subproblem. Each window is stitched to the previous one by fixing its
// slot-0 position to the previous endpoint (power stays free), is
// initialized by the four-step planner truncated toward the hover
// deployment (the attraction that keeps a rate-greedy window from
// loitering), and maximizes the plain sum of slot rates with no terminal
// anchor. The loop ends once the end-of-window sum rate reaches the hover
// rate; the remaining outbound slots hold that final state and the return
// leg is the mirror image. Memory and per-window cost depend on the window
// length, not the horizon, at the price of a few percent of aggregate rate.

#include <vector>

#include "uavtpc/deployment.hpp"
#include "uavtpc/scenario.hpp"

namespace uavtpc {

// Which solver handles each window: the centralized joint program or the
// per-UAV consensus scheme (threads split the work inside a window; windows
// themselves are inherently sequential).
enum class SegmentInner { centralized, parallel };

struct SegmentConfig {
  int n_seg = 40;  // slots per segment, >= 1 (1 = the slot-by-slot scheme)
  SegmentInner inner_solver = SegmentInner::centralized;
  double rel_tol = 1e-4;   // inner solver's relative objective tolerance
  int max_iter = 100;      // inner solver's iteration cap per segment
  double reach_tol = 1e-3;  // end rate >= hover rate * (1 - reach_tol) stops
  int stall_limit = 3;      // consecutive no-progress segments tolerated
};

struct SegmentTrace {
  std::vector<int> segment_slots;          // window length per segment
  std::vector<double> endpoint_rate_bps;   // sum rate at each window's end
  double target_rate_bps = 0;              // hover rate after the tolerance
};

// Builds the full round trip segment by segment; see the header comment for
// the scheme. `hover` must be a solved deployment for `scen` (its sum rate
// is the target). Throws Infeasible when no path toward the hover points
// fits the horizon, and SolverError when `stall_limit` consecutive segments
// fail to make progress or the outbound half of the horizon is exhausted
// before the target rate is reached; both diagnostics report the best
// end-slot rate seen.
TrajectorySolution run_segmented(const Scenario& scen,
                                 const DeploymentSolution& hover,
                                 const SegmentConfig& cfg = {},
                                 SegmentTrace* trace = nullptr);

}  // namespace uavtpc
