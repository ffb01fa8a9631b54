#pragma once

// Orthogonal-access baselines: joint trajectory + resource-share
// optimization for FDMA and TDMA, where links never interfere and the
// contended resource is the per-slot share alpha_k[n] (bandwidth fraction
// for FDMA, time fraction for TDMA) with sum_k alpha_k[n] = 1.
//
// FDMA optimizes the perspective rate alpha log2(1 + SNR / alpha) directly
// (jointly concave in the share and the linearized channel). TDMA is first
// relaxed through beta = sqrt(alpha) — the per-slot sum rate aggregates into
// a single log whose quadratic-over-linear pieces admit a concave bound —
// and the final allocation is rounded to the provably optimal one-hot rule
// (all of the slot to the link nearest its own terminal) and re-evaluated.
// Both reuse the SCA + interior-point machinery of the non-orthogonal
// solver; transmitters always use full peak power since there is no
// interference to manage.

#include <Eigen/Dense>
#include <utility>

#include "uavtpc/sca_tpc.hpp"
#include "uavtpc/scenario.hpp"

namespace uavtpc {

enum class OrthogonalScheme { fdma, tdma };

struct OrthogonalAllocation {
  OrthogonalScheme scheme = OrthogonalScheme::fdma;
  MatrixXd alpha;  // K x M resource fractions; every column sums to 1
};

// Exact FDMA rate of link k in bit/s at share alpha:
//   alpha * B * log2(1 + gamma * P_max / (alpha * |q - s_k|^2)),
// continuously extended to 0 at alpha = 0 (noise scales with the allocated
// band, so the SNR grows as the share shrinks).
double fdma_rate(const Scenario& scen, int k, double alpha, const Vector3d& q);

// Concave-in-(alpha, q) lower bound of fdma_rate: the inverse-square channel
// is replaced by its tangent minorant 3/|qr-s|^2 - 2|q-s|/|qr-s|^3 at the
// reference point. Equals fdma_rate at q == q_ref; -inf when the minorant
// drives the SNR argument to -1 or below.
double fdma_rate_surrogate(const Scenario& scen, int k, double alpha,
                           const Vector3d& q, const Vector3d& q_ref);

// Exact TDMA rate of link k in bit/s at time share alpha:
//   alpha * B * log2(1 + gamma * P_max / |q - s_k|^2)
// (full band and full power while active). Never exceeds fdma_rate at the
// same share and position.
double tdma_rate(const Scenario& scen, int k, double alpha, const Vector3d& q);

// Optimal TDMA allocation for fixed slot positions: the whole slot goes to
// the link nearest its own terminal, ties broken toward the lowest index.
VectorXd tdma_allocate(const Matrix3Xd& uav_pos, const Matrix3Xd& gt_pos);

// Joint trajectory / resource optimization over the outbound slots 1..M
// (reduced_slots = M, 2*M <= N so the half can be mirrored). init must be a
// strictly feasible M-slot trajectory; shares start uniform. The solve is
// unanchored: the last slot carries the weight of the whole hover hold
// (N/2 - M + 1 half-mission slots), so the endpoint settles at the scheme's
// own best static configuration. Returned rates_bps are the true scheme
// rates (surviving mirror_extend untouched); powers_w is P_max everywhere
// for FDMA and P_max on the active link only for TDMA.
std::pair<TrajectorySolution, OrthogonalAllocation> solve_orthogonal(
    const Scenario& scen, OrthogonalScheme scheme, int reduced_slots,
    const TrajectorySolution& init, const ScaConfig& cfg = {},
    ScaTrace* trace = nullptr);

}  // namespace uavtpc
