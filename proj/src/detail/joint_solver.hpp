#pragma once

// Shared centralized subproblem: one concave surrogate maximization over all
// UAVs' sqrt-powers and positions on slots 1..M, plus the outer SCA loop.
// Used by the reduced-horizon solver, hover deployment (M = 1 with
// reachability limits), the segment scheme, and the consensus polish step.

#include <vector>

#include "detail/scaling.hpp"
#include "uavtpc/ipm.hpp"
#include "uavtpc/sca_tpc.hpp"

namespace uavtpc::detail {

struct JointOptions {
  VectorXd slot_weights;  // size M; empty = all ones
  Matrix3Xd q0;           // fixed slot-0 states; empty = Scaled::start

  // Limits on the move from slot 0 to slot 1 (scaled lengths): level radius
  // and signed vertical caps. Deployment passes its reachability radii here.
  double first_level = 0, first_up = 0, first_down = 0;

  bool chain = true;  // per-slot speed limits between slots 1..M
  double chain_level = 0, chain_up = 0, chain_down = 0;

  bool anchored = false;  // pin slot M to the anchors below (equality rows)
  VectorXd anchor_a;      // K, scaled sqrt-powers
  Matrix3Xd anchor_q;     // 3 x K, scaled

  bool separation = true;
  double trust_frac = 0.01;
};

// Variable layout: slot-major blocks of 4K, [a_k qx_k qy_k qz_k] per UAV.
inline int var_a(int K, int n, int k) { return n * 4 * K + 4 * k; }
inline int var_q(int K, int n, int k, int c) {
  return n * 4 * K + 4 * k + 1 + c;
}

VectorXd pack_state(const HalfState& st);
HalfState unpack_state(const VectorXd& x, int K, int M);

// Builds the concave subproblem around `exp` (scaled units, gamma = 1).
ipm::ConvexProgram build_joint_program(const Scaled& sc,
                                       const SurrogateExpansion& exp,
                                       const JointOptions& opt);

// True (non-surrogate) weighted objective in nats.
double joint_objective(const Scaled& sc, const HalfState& st,
                       const VectorXd& weights);

struct JointResult {
  HalfState state;
  int iterations = 0;
  std::vector<double> trace;  // weighted true objective, init first
  std::vector<int> newton_iters;
};

JointResult run_joint_sca(const Scaled& sc, const HalfState& init,
                          const JointOptions& opt, const ScaConfig& cfg);

}  // namespace uavtpc::detail
