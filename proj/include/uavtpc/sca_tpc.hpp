#pragma once

// Centralized successive-convex-approximation solver for the joint
// trajectory + power problem on the reduced (outbound) horizon. Each
// iteration expands the nonconvex sum rate around the current iterate into a
// concave lower bound that is tight at the expansion point:
//
//   - the full SINR log is linearized in (sqrt-power, squared distance),
//     giving a concave term that touches the true rate at the iterate;
//   - accumulated interference is upper-bounded by linearizing each
//     interferer's squared distance, with an affine trust region keeping the
//     linearization positive;
//   - pairwise separation is kept by linearizing |q_k - q_j|^2 at the
//     iterate, which implies the true clearance whenever it holds.
//
// The concave subproblem (with hover anchors at the last slot) goes to the
// interior-point kernel; ascent of the true rate is monotone and the loop
// stops on relative improvement.

#include <Eigen/Dense>
#include <vector>

#include "uavtpc/scenario.hpp"

namespace uavtpc {

struct ScaConfig {
  double rel_tol = 1e-4;  // stop when (R - R_prev) / R_prev drops below this
  int max_iter = 100;
  bool record_trace = true;
};

// Frozen expansion-point data shared by every surrogate at iteration r.
struct SurrogateExpansion {
  double gamma = 0;
  int num_links = 0;
  int num_slots = 0;
  MatrixXd sqrt_powers;                // K x M
  std::vector<Matrix3Xd> positions;    // per UAV, 3 x M
  std::vector<MatrixXd> sq_distances;  // per slot, K x K: (j,k) = |q_j - s_k|^2
  MatrixXd interference;               // K x M: sum_{j != k} gamma p_j / d_jk
};

SurrogateExpansion make_expansion(const std::vector<Matrix3Xd>& positions,
                                  const MatrixXd& powers_w,
                                  const Matrix3Xd& gt_positions, double gamma);

// Concave lower bound on link k's rate (nats, unit bandwidth) at slot n,
// as a function of all sqrt-powers `a` (size K) and positions `q` (3 x K).
// Equals compute_rate_nats at the expansion point. Throws InvalidArgument
// when the interference linearization leaves its trust region
// (denominator < trust_frac * d^r).
double surrogate_rate(const VectorXd& a, const Matrix3Xd& q,
                      const SurrogateExpansion& exp, const Matrix3Xd& gt, int k,
                      int n, double trust_frac = 0.01);

// Affine separation residual for pair (k, j) at slot n:
//   2 (q_k^r - q_j^r) . (q_k - q_j) - |q_k^r - q_j^r|^2 - d_min^2
// Nonnegative residual implies |q_k - q_j| >= d_min.
double linearized_separation(const Vector3d& q_k, const Vector3d& q_j,
                             const SurrogateExpansion& exp, int k, int j, int n,
                             double d_min);

struct ScaTrace {
  std::vector<double> objective_bps;  // true (non-surrogate) rate after each iter
  std::vector<int> newton_iterations;
};

// Solves the anchored reduced problem over slots 1..M: slot M is pinned to
// the hover positions/powers (bit-exact in the output), earlier slots obey
// altitude/speed/power/separation limits. init must be strictly feasible
// with slot M already at the anchors. Vertical steps are limited to
// min(v_ascend, v_descend) * Ts so the output stays feasible when mirrored
// onto the return leg.
TrajectorySolution solve_sca_tpc(const Scenario& scen,
                                 const Matrix3Xd& anchor_positions,
                                 const VectorXd& anchor_powers_w,
                                 const TrajectorySolution& init,
                                 const ScaConfig& cfg = {},
                                 ScaTrace* trace = nullptr);

}  // namespace uavtpc
