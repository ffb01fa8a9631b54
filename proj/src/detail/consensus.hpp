#pragma once

// Internals of the consensus (per-UAV parallel) solver: the pair graph, the
// Jacobi mixing weights, the separation projection, and the per-UAV concave
// subproblem builder. Split out so the pieces are testable in isolation.

#include <utility>
#include <vector>

#include "detail/joint_solver.hpp"
#include "uavtpc/parallel_tpc.hpp"

namespace uavtpc::detail {

// Unordered pairs (i < j) of the complete interference graph together with
// the largest eigenvalue of the stacked difference operator q -> (q_i - q_j):
// A^T A = K I - 11^T on K nodes, so lambda_max = K for K >= 2. The proximal
// weight c = margin * b * lambda_max majorizes the consensus penalty, which
// is what lets the K subproblems move simultaneously.
struct PairGraph {
  std::vector<std::pair<int, int>> pairs;
  double lambda_max = 0;

  static PairGraph complete(int K) {
    PairGraph g;
    for (int i = 0; i < K; ++i)
      for (int j = i + 1; j < K; ++j) g.pairs.emplace_back(i, j);
    g.lambda_max = K;
    return g;
  }
  int num_pairs() const { return static_cast<int>(pairs.size()); }
};

// Per-slot Jacobi mixing weights: mu[n](j, k) is UAV j's share of receiver
// k's rate at slot n, proportional to the power it lands there at the
// expansion point. Each subproblem evaluates receiver terms at deviations
// inflated by 1/mu, which makes the sum of per-UAV surrogates a valid joint
// lower bound. Columns sum to at most one; small shares are floored at
// 0.01 / K (then renormalized) because the inflated curvature grows like
// 1/mu and unfloored silent links would make the subproblems needlessly
// stiff. The floor only throttles movement on links that barely register at
// that receiver.
std::vector<MatrixXd> mixing_weights(const SurrogateExpansion& exp);

// Projects a pair difference onto {|z| >= d_min}: short vectors are scaled
// up, everything else passes through; a zero vector maps to d_min * e_x.
Vector3d project_separation(const Vector3d& v, double d_min);

// Convexified z-update: nearest point of the supporting half-space of
// {|z| >= d_min} at the reference displacement dr,
//   { z :  dr/|dr| . z  >=  (|dr|^2 + d_min^2) / (2 |dr|) },
// the same linearization the centralized solver uses for separation; every
// point of it satisfies |z| >= d_min, and at a fixed point z = dr the
// constraint reduces to |dr| >= d_min exactly. Projecting onto the exact
// nonconvex set instead makes two UAVs meeting head-on trade passing sides
// every Jacobi round (the dual flips z across the origin before it can
// accumulate); the half-space correction always points outward along dr, so
// the duals ratchet. Deeper overlap raises the offset, which strengthens
// the outward push exactly when it is needed. A degenerate dr falls back to
// the plain projection.
Vector3d project_separation_halfspace(const Vector3d& v, double d_min,
                                      const Vector3d& dr);

// The per-UAV concave subproblem: variables are UAV k's own sqrt-powers and
// positions on slots 1..M, laid out [a qx qy qz] per slot (M blocks of 4).
// The objective is k's mu-weighted share of every receiver's surrogate plus
// the proximal term -(c/2) |q - q_hat|^2 per slot. Constraints mirror the
// centralized builder restricted to one UAV (power, altitude, first step,
// speed chain, anchors); separation is absent by design, the consensus
// penalty handles it. `opt` carries the full-width anchors/q0; column k is
// used.
ipm::ConvexProgram build_peruav_program(const Scaled& sc,
                                        const SurrogateExpansion& exp,
                                        const std::vector<MatrixXd>& mu, int k,
                                        const Matrix3Xd& q_hat, double prox_c,
                                        const JointOptions& opt);

// Packs/unpacks UAV k's slice of a HalfState for the per-UAV layout.
VectorXd pack_uav(const HalfState& st, int k);
void unpack_uav(const VectorXd& x, int k, HalfState& st);

// Outcome of the consensus loop on one scaled horizon. Traces are in scaled
// units (nats / scaled metres); the caller converts.
struct ConsensusResult {
  HalfState state;
  int iterations = 0;         // main-loop Jacobi rounds
  int repair_iterations = 0;  // extra rounds spent repairing overlap
  bool slack_repair = false;  // slack + polish fallback engaged
  bool converged = true;      // false: iteration cap hit; state is the best
                              // separated iterate seen
  std::vector<double> obj_trace;
  std::vector<double> resid_trace;
};

// The consensus main loop plus the overlap repair chain, on a problem that is
// already scaled. Honors `opt` like the centralized builder (q0, first step,
// chain, anchors); `opt.separation` is ignored because the consensus
// variables own that constraint. The returned state is separated to working
// precision. Callers handle K == 1 (no pairs) and the fully anchored M == 1
// corner themselves.
ConsensusResult run_consensus(const Scaled& sc, const HalfState& init,
                              const JointOptions& opt,
                              const ParallelConfig& cfg);

}  // namespace uavtpc::detail
