#pragma once

// Internal preconditioning: solvers work in h_min-normalized coordinates
// with powers folded together with the channel constant, so the received
// term is simply p~ / d~^2 (unit channel gain) and every quantity sits within
// a few orders of magnitude of 1. Lengths divide by L = h_min; powers map
// p~ = gamma p / L^2. Rates in these units are nats per unit bandwidth;
// multiply by B / ln 2 for bit/s.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "uavtpc/scenario.hpp"

namespace uavtpc::detail {

struct Scaled {
  double length_unit = 1;   // h_min in metres
  double power_unit = 1;    // watts per scaled-power unit: L^2 / gamma
  double rate_unit = 1;     // bit/s per nat: bandwidth / ln 2

  int K = 0;
  Matrix3Xd gt;             // 3 x K
  Matrix3Xd start;          // 3 x K launch states (slot 0)
  double h_min = 1, h_max = 1, d_min = 0;
  double step_level = 0;    // v_level * Ts, scaled
  double step_up = 0, step_down = 0;
  double step_vert = 0;     // min(up, down): round-trip-safe vertical step
  double p_max = 0;         // scaled power budget
  double a_max = 0;         // sqrt(p_max)
  int half_slots = 0;       // N / 2
  double slot_s = 0;

  static Scaled from(const Scenario& s) {
    Scaled out;
    const double L = s.limits.h_min;
    out.length_unit = L;
    out.power_unit = L * L / s.channel.gamma;
    out.rate_unit = s.channel.bandwidth_hz / std::log(2.0);
    out.K = s.num_links;
    out.gt = s.gt_positions / L;
    out.start = s.uav_initial / L;
    out.h_min = 1.0;
    out.h_max = s.limits.h_max / L;
    out.d_min = s.limits.d_min / L;
    const double ts = s.horizon.slot_s;
    out.step_level = s.limits.v_level * ts / L;
    out.step_up = s.limits.v_ascend * ts / L;
    out.step_down = s.limits.v_descend * ts / L;
    out.step_vert = std::min(out.step_up, out.step_down);
    out.p_max = s.p_max_w / out.power_unit;
    out.a_max = std::sqrt(out.p_max);
    out.half_slots = s.horizon.num_slots / 2;
    out.slot_s = ts;
    return out;
  }

  double len_to_si(double v) const { return v * length_unit; }
  double len_from_si(double v) const { return v / length_unit; }
  double pow_to_si(double v) const { return v * power_unit; }
  double pow_from_si(double v) const { return v / power_unit; }
};

// Working state of a reduced-horizon solve in scaled units: sqrt-powers and
// positions over slots 1..M.
struct HalfState {
  MatrixXd a;                 // K x M
  std::vector<Matrix3Xd> q;   // per UAV, 3 x M

  int num_links() const { return static_cast<int>(a.rows()); }
  int num_slots() const { return static_cast<int>(a.cols()); }
};

inline HalfState to_scaled(const TrajectorySolution& sol, const Scaled& sc) {
  HalfState st;
  st.a = (sol.powers_w / sc.power_unit).cwiseMax(0.0).cwiseSqrt();
  st.q.reserve(sol.positions.size());
  for (const auto& qk : sol.positions) st.q.push_back(qk / sc.length_unit);
  return st;
}

inline TrajectorySolution from_scaled(const HalfState& st, const Scaled& sc) {
  TrajectorySolution sol;
  sol.powers_w = st.a.array().square() * sc.power_unit;
  sol.positions.reserve(st.q.size());
  for (const auto& qk : st.q) sol.positions.push_back(qk * sc.length_unit);
  return sol;
}

// Sum over links of the scaled-unit rate (nats, unit bandwidth) at one slot.
// `a` holds sqrt-powers, `q` positions, both scaled.
inline double slot_rate_nats(const VectorXd& a, const Matrix3Xd& q,
                             const Matrix3Xd& gt) {
  const int K = static_cast<int>(a.size());
  double total = 0;
  for (int k = 0; k < K; ++k) {
    double sig = 0, intf = 0;
    for (int j = 0; j < K; ++j) {
      const double d2 =
          std::max((q.col(j) - gt.col(k)).squaredNorm(), 1e-14);
      const double term = a[j] * a[j] / d2;
      (j == k ? sig : intf) += term;
    }
    total += std::log1p(sig / (1.0 + intf));
  }
  return total;
}

}  // namespace uavtpc::detail
