#include "uavtpc/trajectory_init.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "uavtpc/errors.hpp"

namespace uavtpc {

namespace {

using Eigen::Vector2d;

constexpr double kSqFloor = 1e-6;  // m^2, matches the rate computation

double fixed_gain_rate(const MatrixXd& h, const VectorXd& v) {
  const int K = static_cast<int>(v.size());
  double total = 0;
  for (int k = 0; k < K; ++k) {
    double intf = 0;
    for (int j = 0; j < K; ++j)
      if (j != k) intf += h(j, k) * h(j, k) * v[j] * v[j];
    const double sig = h(k, k) * v[k];
    total += std::log1p(sig * sig / (1 + intf));
  }
  return total;
}

}  // namespace

MatrixXd wmmse_power_control(const std::vector<Matrix3Xd>& positions,
                             const Scenario& scen) {
  scen.validate();
  const int K = scen.num_links;
  if (static_cast<int>(positions.size()) != K || K == 0)
    throw InvalidArgumentError("wmmse: link count mismatch");
  const int M = static_cast<int>(positions[0].cols());
  for (const auto& qk : positions)
    if (qk.cols() != M)
      throw InvalidArgumentError("wmmse: horizon mismatch");

  const double p_max = scen.p_max_w;
  const double v_max = std::sqrt(p_max);
  MatrixXd p(K, M);
  MatrixXd h(K, K);  // amplitude gain, transmitter row -> receiver column
  VectorXd v(K), u(K), w(K);
  for (int n = 0; n < M; ++n) {
    for (int j = 0; j < K; ++j)
      for (int k = 0; k < K; ++k) {
        const double d2 = std::max(
            (positions[j].col(n) - scen.gt_positions.col(k)).squaredNorm(),
            kSqFloor);
        h(j, k) = std::sqrt(scen.channel.gamma / d2);
      }
    v.setConstant(v_max);
    double prev = fixed_gain_rate(h, v);
    for (int sweep = 0; sweep < 200; ++sweep) {
      for (int k = 0; k < K; ++k) {
        double den = 1;
        for (int j = 0; j < K; ++j) den += h(j, k) * h(j, k) * v[j] * v[j];
        u[k] = h(k, k) * v[k] / den;
      }
      for (int k = 0; k < K; ++k) w[k] = 1.0 / (1.0 - u[k] * h(k, k) * v[k]);
      for (int k = 0; k < K; ++k) {
        double den = 0;
        for (int j = 0; j < K; ++j)
          den += w[j] * u[j] * u[j] * h(k, j) * h(k, j);
        v[k] = std::clamp(w[k] * u[k] * h(k, k) / den, 0.0, v_max);
      }
      const double obj = fixed_gain_rate(h, v);
      const bool done = std::abs(obj - prev) <= 1e-6 * std::max(prev, 1e-12);
      prev = obj;
      if (done) break;
    }
    p.col(n) = v.array().square();
  }
  // Strict interior so downstream barriers can start here.
  return p.cwiseMax(1e-6 * p_max).cwiseMin((1 - 1e-6) * p_max);
}

namespace {

struct RawPath {
  std::vector<Vector3d> points;  // slots 1.., ends exactly at the hover point
  UavLegPlan legs;
};

// Climb to the cruise altitude while moving toward the hover point, cruise
// level, settle vertically. Steps keep a 1% speed margin so later staggers
// and snaps stay within the true limits. With climb_first the ascent happens
// in place before any horizontal motion: slower, but the layered vertical
// separation then covers the whole departure phase.
RawPath plan_raw_path(const Vector3d& start, const Vector3d& hover,
                      double cruise_z, double step_level, double step_vert,
                      bool climb_first) {
  constexpr double kTol = 1e-9;  // metres
  RawPath out;
  out.legs.cruise_altitude_m = cruise_z;
  Vector3d cur = start;
  const Vector2d goal_xy = hover.head<2>();
  // No horizontal leg: the cruise layer serves no purpose, settle in place.
  if ((goal_xy - cur.head<2>()).norm() <= kTol) {
    while (std::abs(hover[2] - cur[2]) > kTol) {
      cur[2] += std::clamp(hover[2] - cur[2], -step_vert, step_vert);
      out.points.push_back(cur);
      ++out.legs.settle_slots;
    }
    if (!out.points.empty()) out.points.back() = hover;
    out.legs.cruise_altitude_m = start[2];
    return out;
  }
  if (climb_first) {
    while (std::abs(cruise_z - cur[2]) > kTol) {
      cur[2] += std::clamp(cruise_z - cur[2], -step_vert, step_vert);
      out.points.push_back(cur);
      ++out.legs.climb_slots;
    }
  }
  auto step_toward_goal = [&](bool move_z, double z_target) {
    Vector2d rem = goal_xy - cur.head<2>();
    const double r = rem.norm();
    if (r > kTol) cur.head<2>() += rem * (std::min(step_level, r) / r);
    if (move_z) {
      const double dz = z_target - cur[2];
      cur[2] += std::clamp(dz, -step_vert, step_vert);
    }
    out.points.push_back(cur);
  };
  while (std::abs(cruise_z - cur[2]) > kTol) {
    step_toward_goal(true, cruise_z);
    ++out.legs.climb_slots;
  }
  while ((goal_xy - cur.head<2>()).norm() > kTol) {
    step_toward_goal(false, 0);
    ++out.legs.cruise_slots;
  }
  while (std::abs(hover[2] - cur[2]) > kTol) {
    cur[2] += std::clamp(hover[2] - cur[2], -step_vert, step_vert);
    out.points.push_back(cur);
    ++out.legs.settle_slots;
  }
  if (!out.points.empty()) out.points.back() = hover;  // snap within kTol
  return out;
}

}  // namespace

TrajectorySolution build_initial_trajectory(const Scenario& scen,
                                            const DeploymentSolution& hover,
                                            int min_slots, InitPlan* plan) {
  scen.validate();
  const int K = scen.num_links;
  if (hover.positions.cols() != K || hover.powers_w.size() != K)
    throw InvalidArgumentError("trajectory init: deployment size mismatch");
  const auto& lim = scen.limits;
  const double ts = scen.horizon.slot_s;
  const double step_level = lim.v_level * ts * 0.99;
  const double step_vert = std::min(lim.v_ascend, lim.v_descend) * ts * 0.99;
  const double eps_h = 1e-6 * lim.h_min;
  const bool fixed_alt = lim.h_max - lim.h_min < 2 * eps_h;

  // Stacked cruise layers, one per UAV. Spacing stays a hair above d_min
  // even after the interior nudge, so two layered UAVs clear each other
  // strictly wherever their ground tracks cross.
  std::vector<double> layer(K);
  for (int k = 0; k < K; ++k) {
    const double raw = lim.h_min + k * lim.d_min * (1 + 1e-6);
    if (raw + (fixed_alt ? 0.0 : 2 * eps_h) > lim.h_max + 1e-9)
      throw InfeasibleError(
          "trajectory init: cruise layers do not fit under h_max");
    layer[k] = fixed_alt ? lim.h_min : raw + eps_h;
  }

  const auto plan_all = [&](bool climb_first) {
    std::vector<RawPath> raw(K);
    for (int k = 0; k < K; ++k)
      raw[k] = plan_raw_path(scen.uav_initial.col(k), hover.positions.col(k),
                             layer[k], step_level, step_vert, climb_first);
    return raw;
  };
  std::vector<RawPath> raw = plan_all(false);

  // Delayed UAVs park a hair away from their launch point (staggered per
  // UAV) so that exactly-d_min launch grids still give strict clearance.
  Matrix3Xd park = scen.uav_initial;
  for (int k = 0; k < K; ++k) {
    const double amount = 0.02 * (k + 1) / K;  // metres, inside step margin
    if (!fixed_alt && park(2, k) + amount <= lim.h_max - eps_h) {
      park(2, k) += amount;
    } else {
      // Degenerate band: nudge outward from the launch centroid instead.
      const Vector2d centroid =
          scen.uav_initial.topRows<2>().rowwise().mean();
      Vector2d dir = park.col(k).head<2>() - centroid;
      if (dir.norm() < 1e-12) dir = Vector2d(1, 0);
      park.col(k).head<2>() += dir.normalized() * amount;
    }
  }

  const int half = scen.horizon.num_slots / 2;
  const double clearance = lim.d_min * (1 + 1e-9);
  std::vector<int> delay(K, 0);
  const auto pos_at = [&](int k, int t) -> Vector3d {
    // Timeline for slots t >= 1: parked, then the raw path, then hover.
    if (t <= delay[k]) return park.col(k);
    const int i = t - delay[k] - 1;
    if (i < static_cast<int>(raw[k].points.size())) return raw[k].points[i];
    return hover.positions.col(k);
  };
  // Greedy placement in the given departure order: each UAV takes the
  // smallest delay that keeps its whole timeline clear of the already
  // placed ones. On failure reports the stuck UAV and its earliest-placed
  // blocker.
  const auto try_schedule = [&](const std::vector<int>& order, int& stuck,
                                int& blocker) {
    std::fill(delay.begin(), delay.end(), 0);
    for (int idx = 1; idx < K; ++idx) {
      const int k = order[idx];
      bool placed = false;
      for (int d = 0; d <= half && !placed; ++d) {
        delay[k] = d;
        const int end_k = d + static_cast<int>(raw[k].points.size());
        bool ok = true;
        for (int pi = 0; pi < idx && ok; ++pi) {
          const int i = order[pi];
          const int end = std::max(
              end_k, delay[i] + static_cast<int>(raw[i].points.size()));
          for (int t = 1; t <= end && ok; ++t)
            ok = (pos_at(k, t) - pos_at(i, t)).norm() > clearance;
        }
        placed = ok;
      }
      if (!placed) {
        stuck = k;
        blocker = -1;
        delay[k] = half;
        const int end_k = half + static_cast<int>(raw[k].points.size());
        for (int pi = 0; pi < idx && blocker < 0; ++pi) {
          const int i = order[pi];
          const int end = std::max(
              end_k, delay[i] + static_cast<int>(raw[i].points.size()));
          for (int t = 1; t <= end && blocker < 0; ++t)
            if ((pos_at(k, t) - pos_at(i, t)).norm() <= clearance) blocker = i;
        }
        return false;
      }
    }
    return true;
  };
  // A straight departure lane can pass within d_min of another launch point,
  // in which case no delay of the *later* UAV helps -- the early one has to
  // wait instead. When a UAV cannot clear at any delay, hoist it in front of
  // its blocker and re-place (bounded retries); if no order works, fall back
  // to in-place climbs (the altitude layers then separate the whole
  // departure phase) and search the orders again.
  bool scheduled = false;
  for (int phase = 0; phase < 2 && !scheduled; ++phase) {
    if (phase == 1) raw = plan_all(true);
    std::vector<int> order(K);
    for (int i = 0; i < K; ++i) order[i] = i;
    for (int attempt = 0; attempt < K * K && !scheduled; ++attempt) {
      int stuck = -1, blocker = -1;
      scheduled = try_schedule(order, stuck, blocker);
      if (scheduled || blocker < 0) break;
      order.erase(std::find(order.begin(), order.end(), stuck));
      order.insert(std::find(order.begin(), order.end(), blocker), stuck);
    }
  }
  if (!scheduled)
    throw InfeasibleError(
        "trajectory init: no launch delay clears earlier UAVs");

  int slots = 1;
  for (int k = 0; k < K; ++k)
    slots = std::max(slots, delay[k] + static_cast<int>(raw[k].points.size()));
  slots = std::max(slots, min_slots);
  if (slots > half)
    throw InfeasibleError("trajectory init: path does not fit into half the "
                          "horizon");

  TrajectorySolution sol;
  sol.positions.assign(K, Matrix3Xd(3, slots));
  for (int k = 0; k < K; ++k) {
    for (int t = 1; t <= slots; ++t) sol.positions[k].col(t - 1) = pos_at(k, t);
    sol.positions[k].col(slots - 1) = hover.positions.col(k);
  }
  sol.powers_w = wmmse_power_control(sol.positions, scen);
  for (int k = 0; k < K; ++k) sol.powers_w(k, slots - 1) = hover.powers_w[k];
  fill_rates(sol, scen);

  if (plan) {
    plan->per_uav.resize(K);
    for (int k = 0; k < K; ++k) {
      plan->per_uav[k] = raw[k].legs;
      plan->per_uav[k].delay_slots = delay[k];
    }
    plan->total_slots = slots;
  }
  return sol;
}

}  // namespace uavtpc
