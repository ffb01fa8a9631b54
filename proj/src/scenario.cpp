#include "uavtpc/scenario.hpp"

#include <cmath>
#include <sstream>

namespace uavtpc {

namespace {

// Squared distances below this (in m^2, or scaled units inside solvers) are
// clamped before dividing, so degenerate geometry yields huge-but-finite
// rates instead of NaN. Solver constraints keep real geometry far away from
// this floor; it only matters for hand-built inputs.
constexpr double kSqDistFloor = 1e-6;

double sq_dist(const Vector3d& a, const Vector3d& b) {
  double d2 = (a - b).squaredNorm();
  return d2 < kSqDistFloor ? kSqDistFloor : d2;
}

}  // namespace

ChannelParams ChannelParams::make(double beta0, double bandwidth_hz,
                                  double noise_psd) {
  ChannelParams ch;
  ch.beta0 = beta0;
  ch.bandwidth_hz = bandwidth_hz;
  ch.noise_psd = noise_psd;
  ch.gamma = beta0 / (bandwidth_hz * noise_psd);
  return ch;
}

void ChannelParams::validate() const {
  if (!(beta0 > 0) || !(bandwidth_hz > 0) || !(noise_psd > 0))
    throw InvalidArgumentError("channel parameters must be positive");
  double expect = beta0 / (bandwidth_hz * noise_psd);
  if (!(std::abs(gamma - expect) <= 1e-9 * expect))
    throw InvalidArgumentError("channel gamma is stale; use ChannelParams::make");
}

void KinematicLimits::validate() const {
  if (!(v_level > 0) || !(v_ascend > 0) || !(v_descend > 0))
    throw InvalidArgumentError("speed limits must be positive");
  if (!(h_min > 0) || !(h_max >= h_min))
    throw InvalidArgumentError("need 0 < h_min <= h_max");
  if (!(d_min > 0)) throw InvalidArgumentError("d_min must be positive");
}

double max_sampling_interval(const KinematicLimits& limits) {
  double closing = std::sqrt(4.0 * limits.v_level * limits.v_level +
                             (limits.v_descend + limits.v_ascend) *
                                 (limits.v_descend + limits.v_ascend));
  return limits.d_min / closing;
}

void Horizon::finalize(const KinematicLimits& limits) {
  if (slot_s <= 0) slot_s = max_sampling_interval(limits);
  if (num_slots <= 0) {
    if (!(total_time_s > 0))
      throw InvalidArgumentError("horizon needs total_time_s or num_slots");
    num_slots = 2 * static_cast<int>(std::floor(total_time_s / (2 * slot_s)));
  }
  if (num_slots % 2) num_slots -= 1;
  if (num_slots < 2)
    throw InvalidArgumentError("horizon too short for a single slot pair");
  total_time_s = num_slots * slot_s;
}

void Horizon::validate() const {
  if (!(slot_s > 0) || num_slots < 2 || num_slots % 2)
    throw InvalidArgumentError("horizon not finalized (need even N, Ts > 0)");
  if (std::abs(total_time_s - num_slots * slot_s) > 1e-6 * total_time_s)
    throw InvalidArgumentError("horizon total_time_s != N * Ts");
  if (reduced_slots &&
      (*reduced_slots < 1 || *reduced_slots > num_slots / 2))
    throw InvalidArgumentError("reduced horizon M must lie in [1, N/2]");
}

void Scenario::validate() const {
  if (num_links < 1) throw InvalidArgumentError("need at least one link");
  if (gt_positions.cols() != num_links || uav_initial.cols() != num_links)
    throw InvalidArgumentError("position arrays must have K columns");
  if (!(p_max_w > 0)) throw InvalidArgumentError("p_max must be positive");
  channel.validate();
  limits.validate();
  horizon.validate();
  for (int k = 0; k < num_links; ++k) {
    double z = uav_initial(2, k);
    if (z < limits.h_min - 1e-9 || z > limits.h_max + 1e-9)
      throw InvalidArgumentError("initial UAV altitude outside [h_min, h_max]");
  }
  for (int k = 0; k < num_links; ++k)
    for (int j = k + 1; j < num_links; ++j) {
      double d = (uav_initial.col(k) - uav_initial.col(j)).norm();
      if (d < limits.d_min - 1e-9) {
        std::ostringstream os;
        os << "initial UAV positions " << k << "," << j
           << " closer than d_min (" << d << " < " << limits.d_min << ")";
        throw InvalidArgumentError(os.str());
      }
    }
}

double compute_rate_nats(const VectorXd& powers_w, const Matrix3Xd& uav_pos,
                         int k, const Matrix3Xd& gt_pos, double gamma) {
  const int K = static_cast<int>(powers_w.size());
  double interference = 0;
  for (int j = 0; j < K; ++j) {
    if (j == k) continue;
    interference += gamma * powers_w(j) / sq_dist(uav_pos.col(j), gt_pos.col(k));
  }
  double signal = gamma * powers_w(k) / sq_dist(uav_pos.col(k), gt_pos.col(k));
  return std::log1p(signal / (1.0 + interference));
}

double compute_rate(const VectorXd& powers_w, const Matrix3Xd& uav_pos, int k,
                    const Matrix3Xd& gt_pos, const ChannelParams& channel) {
  return channel.bandwidth_hz / std::log(2.0) *
         compute_rate_nats(powers_w, uav_pos, k, gt_pos, channel.gamma);
}

void fill_rates(TrajectorySolution& sol, const Scenario& scen) {
  const int K = sol.num_links();
  const int M = sol.num_slots();
  sol.rates_bps.resize(K, M);
  Matrix3Xd slot_pos(3, K);
  VectorXd p(K);
  for (int n = 0; n < M; ++n) {
    for (int k = 0; k < K; ++k) {
      slot_pos.col(k) = sol.positions[k].col(n);
      p(k) = sol.powers_w(k, n);
    }
    for (int k = 0; k < K; ++k)
      sol.rates_bps(k, n) =
          compute_rate(p, slot_pos, k, scen.gt_positions, scen.channel);
  }
}

FeasibilityReport check_feasibility(const TrajectorySolution& sol,
                                    const Scenario& scen) {
  FeasibilityReport rep;
  const int K = sol.num_links();
  const int M = sol.num_slots();
  const auto& lim = scen.limits;
  const double ts = scen.horizon.slot_s;
  const bool full = (M == scen.horizon.num_slots);

  auto step_check = [&](const Vector3d& a, const Vector3d& b) {
    double level = (b.head<2>() - a.head<2>()).norm() - lim.v_level * ts;
    rep.level_step_m = std::max(rep.level_step_m, level);
    double dz = b.z() - a.z();
    double vert = std::max(dz - lim.v_ascend * ts, -dz - lim.v_descend * ts);
    rep.vertical_step_m = std::max(rep.vertical_step_m, vert);
  };

  for (int k = 0; k < K; ++k) {
    step_check(scen.uav_initial.col(k), sol.positions[k].col(0));
    for (int n = 1; n < M; ++n)
      step_check(sol.positions[k].col(n - 1), sol.positions[k].col(n));
    if (full) step_check(sol.positions[k].col(M - 1), scen.uav_initial.col(k));
    for (int n = 0; n < M; ++n) {
      double z = sol.positions[k](2, n);
      rep.altitude_m =
          std::max({rep.altitude_m, lim.h_min - z, z - lim.h_max});
      rep.power_w = std::max({rep.power_w, -sol.powers_w(k, n),
                              sol.powers_w(k, n) - scen.p_max_w});
    }
  }
  for (int n = 0; n < M; ++n)
    for (int k = 0; k < K; ++k)
      for (int j = k + 1; j < K; ++j) {
        double d =
            (sol.positions[k].col(n) - sol.positions[j].col(n)).norm();
        rep.separation_m = std::max(rep.separation_m, lim.d_min - d);
      }
  return rep;
}

double FeasibilityReport::max_scaled(const Scenario& scen) const {
  double len = scen.limits.h_min;
  return std::max({altitude_m / len, level_step_m / len, vertical_step_m / len,
                   separation_m / len, power_w / scen.p_max_w});
}

TrajectorySolution mirror_extend(const TrajectorySolution& half,
                                 int hover_hold, const Scenario& scen) {
  const int K = half.num_links();
  const int M = half.num_slots();
  const int N = scen.horizon.num_slots;
  if (hover_hold < 0 || 2 * M + hover_hold != N)
    throw InvalidArgumentError(
        "mirror_extend: need 2*M + hover_hold == N (got M=" +
        std::to_string(M) + ", hold=" + std::to_string(hover_hold) +
        ", N=" + std::to_string(N) + ")");

  TrajectorySolution full;
  full.solve_seconds = half.solve_seconds;
  full.iterations = half.iterations;
  full.positions.assign(K, Matrix3Xd(3, N));
  full.powers_w.resize(K, N);
  const bool have_rates = half.rates_bps.size() > 0;
  if (have_rates) full.rates_bps.resize(K, N);

  auto src_slot = [&](int n) {  // n in 0..N-1 -> source column in the half
    if (n < M) return n;
    if (n < M + hover_hold) return M - 1;
    return N - 1 - n;  // time reversal of the outbound leg
  };
  for (int n = 0; n < N; ++n) {
    int s = src_slot(n);
    for (int k = 0; k < K; ++k) full.positions[k].col(n) = half.positions[k].col(s);
    full.powers_w.col(n) = half.powers_w.col(s);
    if (have_rates) full.rates_bps.col(n) = half.rates_bps.col(s);
  }
  return full;
}

}  // namespace uavtpc
