#pragma once

// Problem data for K simultaneous UAV-to-ground links sharing one band, plus
// the trajectory containers and exact (non-surrogate) rate/feasibility
// evaluators that every solver in this library is measured against.
//
// Conventions used throughout:
//   - positions are ENU metres, z up; ground terminals sit at z = 0
//   - slot n of a trajectory holds the sampled state at time n*Ts; slot 0 is
//     the (fixed) launch state stored in the scenario, so a solution with M
//     columns covers slots 1..M
//   - powers are linear watts; rates are bit/s unless a name says otherwise

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <vector>

#include "uavtpc/errors.hpp"

namespace uavtpc {

using Eigen::Matrix3Xd;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

// Free-space channel: received SNR of a link at squared distance d2 with
// transmit power p is gamma * p / d2, with gamma = beta0 / (B * N0).
struct ChannelParams {
  double beta0 = 1e-5;        // reference gain at 1 m (linear)
  double bandwidth_hz = 1e7;  // B
  double noise_psd = 1e-19;   // N0, W/Hz
  double gamma = 1e7;         // beta0 / (B * N0), cached

  static ChannelParams make(double beta0, double bandwidth_hz,
                            double noise_psd);
  void validate() const;
};

struct KinematicLimits {
  double v_level = 20.0;   // max horizontal speed, m/s
  double v_ascend = 5.0;   // max climb rate, m/s
  double v_descend = 3.0;  // max sink rate, m/s
  double h_min = 100.0;    // altitude floor, m
  double h_max = 500.0;    // altitude ceiling, m
  double d_min = 20.0;     // pairwise separation, m

  void validate() const;
};

// Discretization of the mission window. num_slots is forced even so a
// half trajectory can be mirrored onto the return leg.
struct Horizon {
  double total_time_s = 600.0;
  double slot_s = 0.0;                // Ts; 0 means "derive from limits"
  int num_slots = 0;                  // N; 0 means "derive from T and Ts"
  std::optional<int> reduced_slots;   // M, set once a fly-hover-fly split is known

  // Fills slot_s/num_slots from the limits and normalizes total_time_s to
  // num_slots * slot_s.
  void finalize(const KinematicLimits& limits);
  void validate() const;
};

struct Scenario {
  int num_links = 0;        // K
  Matrix3Xd gt_positions;   // 3 x K, ground terminals
  Matrix3Xd uav_initial;    // 3 x K, launch/landing states (slot 0 and N+1)
  double p_max_w = 1.0;     // per-UAV peak transmit power
  uint64_t seed = 0;        // generator seed, 0 when hand-written
  ChannelParams channel;
  KinematicLimits limits;
  Horizon horizon;

  void validate() const;
};

// Sampled solution over slots 1..M (or 1..N when mirror-extended).
struct TrajectorySolution {
  std::vector<Matrix3Xd> positions;  // per UAV, 3 x M
  MatrixXd powers_w;                 // K x M
  MatrixXd rates_bps;                // K x M, filled by fill_rates
  double solve_seconds = 0.0;
  int iterations = 0;

  int num_links() const { return static_cast<int>(positions.size()); }
  int num_slots() const {
    return positions.empty() ? 0 : static_cast<int>(positions[0].cols());
  }
  // Sum of rates_bps over all links and slots (a per-slot-sum aggregate;
  // multiply by Ts for bits airborne).
  double sum_rate_bps() const { return rates_bps.sum(); }
};

// Worst-case constraint violations of a sampled trajectory, in native units
// (metres / watts). Values <= 0 mean "satisfied with margin"; a field keeps
// -inf when it had nothing to measure (e.g. separation with one link).
struct FeasibilityReport {
  static constexpr double kNone = -std::numeric_limits<double>::infinity();
  double altitude_m = kNone;       // outside [h_min, h_max]
  double level_step_m = kNone;     // horizontal displacement beyond v_level*Ts
  double vertical_step_m = kNone;  // climb/sink beyond the vertical caps * Ts
  double separation_m = kNone;     // pairwise distance shortfall below d_min
  double power_w = kNone;          // outside [0, p_max]

  // Largest violation with lengths divided by h_min and powers by p_max.
  double max_scaled(const Scenario& scen) const;
  bool feasible(const Scenario& scen, double tol_scaled) const {
    return max_scaled(scen) <= tol_scaled;
  }
};

// Exact instantaneous rate of link k in bit/s: the SINR treats every other
// active link as noise. powers_w has one entry per UAV, uav_pos/gt_pos are
// 3 x K column sets.
double compute_rate(const VectorXd& powers_w, const Matrix3Xd& uav_pos, int k,
                    const Matrix3Xd& gt_pos, const ChannelParams& channel);

// Same quantity in nats at unit bandwidth: ln(1 + SINR). All internal
// solvers optimize this and convert via bandwidth_hz / ln 2 at the end.
double compute_rate_nats(const VectorXd& powers_w, const Matrix3Xd& uav_pos,
                         int k, const Matrix3Xd& gt_pos, double gamma);

// Populates sol.rates_bps from positions and powers.
void fill_rates(TrajectorySolution& sol, const Scenario& scen);

// Largest slot length such that no two UAVs can close more than d_min within
// one slot: d_min / sqrt(4 v_level^2 + (v_descend + v_ascend)^2).
double max_sampling_interval(const KinematicLimits& limits);

// Checks every sampled constraint, including the transition from slot 0 and,
// when the solution spans the full horizon, the final return to the launch
// state. Never throws; inspect the report.
FeasibilityReport check_feasibility(const TrajectorySolution& sol,
                                    const Scenario& scen);

// Builds the full round trip from a half solution over slots 1..M: slots
// M+1 .. M+hover_hold repeat slot M, and the tail is the time reversal of
// slots 1..M. Requires 2*M + hover_hold == N. Rates are mirrored alongside.
TrajectorySolution mirror_extend(const TrajectorySolution& half,
                                 int hover_hold, const Scenario& scen);

}  // namespace uavtpc
