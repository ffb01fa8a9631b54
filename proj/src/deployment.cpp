#include "uavtpc/deployment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "detail/joint_solver.hpp"
#include "detail/terms.hpp"
#include "uavtpc/errors.hpp"

namespace uavtpc {

namespace {

using detail::HalfState;
using detail::JointOptions;
using detail::Scaled;
using Eigen::Matrix2d;
using Eigen::Vector2d;

struct ReachBox {
  double level = 0;  // horizontal radius, scaled
  double up = 0, down = 0;
};

bool fixed_altitude(const Scaled& sc) { return sc.h_max - sc.h_min < 1e-9; }

// Strict-interior test for a candidate hover layout (scaled units).
bool strictly_placed(const Scaled& sc, const Matrix3Xd& q,
                     const ReachBox& reach) {
  const double band = 1e-9 * sc.h_min;
  for (int k = 0; k < sc.K; ++k) {
    if (fixed_altitude(sc)) {
      if (std::abs(q(2, k) - sc.h_min) > 1e-12) return false;
    } else if (q(2, k) < sc.h_min + band || q(2, k) > sc.h_max - band) {
      return false;
    }
    const Vector3d d = q.col(k) - sc.start.col(k);
    if (d.head<2>().norm() > reach.level * (1 - 1e-9)) return false;
    if (d[2] > reach.up * (1 - 1e-9) || -d[2] > reach.down * (1 - 1e-9))
      return false;
  }
  for (int k = 0; k < sc.K; ++k)
    for (int j = k + 1; j < sc.K; ++j)
      if ((q.col(k) - q.col(j)).norm() <= sc.d_min * (1 + 1e-10))
        return false;
  return true;
}

// Builds a strictly feasible hover init near the launch states: lift the
// altitudes into the open box, then if some pairs still touch at exactly
// d_min, dilate the horizontal layout about its centroid (which scales all
// horizontal gaps up) and stagger the altitudes, lowest first, by distinct
// hair-widths.
Matrix3Xd strict_hover_init(const Scaled& sc, const ReachBox& reach) {
  const double lift =
      fixed_altitude(sc)
          ? 0.0
          : std::min({1e-6 * sc.h_min, 0.5 * reach.up * (1 - 1e-6),
                      0.25 * (sc.h_max - sc.h_min)});
  Matrix3Xd q = sc.start;
  for (int k = 0; k < sc.K; ++k)
    q(2, k) = std::clamp(q(2, k), sc.h_min + lift, sc.h_max - lift);
  if (strictly_placed(sc, q, reach)) return q;

  Matrix3Xd alt = q;
  const Vector2d centroid = alt.topRows<2>().rowwise().mean();
  double max_r = 0;
  for (int k = 0; k < sc.K; ++k)
    max_r =
        std::max(max_r, (Vector2d(alt(0, k), alt(1, k)) - centroid).norm());
  if (max_r > 0) {
    const double tau =
        std::min(1e-4 * sc.d_min, 0.1 * reach.level * (1 - 1e-6)) / max_r;
    for (int k = 0; k < sc.K; ++k) {
      const Vector2d r = Vector2d(alt(0, k), alt(1, k)) - centroid;
      alt(0, k) = centroid[0] + (1 + tau) * r[0];
      alt(1, k) = centroid[1] + (1 + tau) * r[1];
    }
  }
  if (lift > 0 && sc.h_max - sc.h_min > 4 * lift && reach.up > 0) {
    std::vector<int> order(sc.K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return alt(2, i) < alt(2, j); });
    for (int rank = 0; rank < sc.K; ++rank) {
      const int k = order[rank];
      const double eps = lift * (rank + 1) / sc.K;
      alt(2, k) = std::min(alt(2, k) + eps, sc.h_max - lift / 2);
    }
  }
  if (strictly_placed(sc, alt, reach)) return alt;
  throw InfeasibleError(
      "deployment: could not construct a strictly separated hover start");
}

// A silent UAV's spot is rate-neutral; park it above its own terminal when
// that keeps clearance and reachability (helps the later trajectory phase).
void reset_silent_uavs(
    const Scaled& sc, HalfState& st,
    const std::function<bool(int, const Vector3d&)>& reachable) {
  if (sc.K < 2) return;
  const double p_floor = 1e-6 * sc.p_max;
  for (int k = 0; k < sc.K; ++k) {
    if (st.a(k, 0) * st.a(k, 0) > p_floor) continue;
    const double z =
        fixed_altitude(sc) ? sc.h_min : sc.h_min * (1 + 1e-6);
    const Vector3d cand(sc.gt(0, k), sc.gt(1, k), z);
    if (cand[2] > sc.h_max || !reachable(k, cand)) continue;
    bool clear = true;
    for (int j = 0; j < sc.K && clear; ++j)
      if (j != k && (st.q[j].col(0) - cand).norm() < sc.d_min * (1 + 1e-6))
        clear = false;
    if (clear) st.q[k].col(0) = cand;
  }
}

DeploymentSolution finish(const Scenario& scen, const Scaled& sc,
                          const HalfState& st, int iterations) {
  DeploymentSolution out;
  out.positions.resize(3, sc.K);
  for (int k = 0; k < sc.K; ++k)
    out.positions.col(k) = st.q[k].col(0) * sc.length_unit;
  out.powers_w = st.a.col(0).array().square() * sc.power_unit;
  out.rates_bps.resize(sc.K);
  for (int k = 0; k < sc.K; ++k)
    out.rates_bps[k] = compute_rate(out.powers_w, out.positions, k,
                                    scen.gt_positions, scen.channel);
  out.sum_rate_bps = out.rates_bps.sum();
  out.iterations = iterations;
  return out;
}

HalfState single_slot_state(const Scaled& sc, const Matrix3Xd& q) {
  HalfState st;
  st.a = MatrixXd::Constant(sc.K, 1, sc.a_max * std::sqrt(1 - 1e-6));
  st.q.assign(sc.K, Matrix3Xd(3, 1));
  for (int k = 0; k < sc.K; ++k) st.q[k].col(0) = q.col(k);
  return st;
}

}  // namespace

DeploymentSolution solve_deployment(const Scenario& scen,
                                    const ScaConfig& cfg) {
  scen.validate();
  const Scaled sc = Scaled::from(scen);
  const double half_t = 0.5 * scen.horizon.total_time_s;
  ReachBox reach;
  reach.level = scen.limits.v_level * half_t / sc.length_unit;
  reach.up = std::min(scen.limits.v_ascend, scen.limits.v_descend) * half_t /
             sc.length_unit;
  reach.down = reach.up;

  HalfState st = single_slot_state(sc, strict_hover_init(sc, reach));
  JointOptions opt;
  opt.chain = false;
  opt.first_level = reach.level;
  opt.first_up = reach.up;
  opt.first_down = reach.down;
  const detail::JointResult r = detail::run_joint_sca(sc, st, opt, cfg);
  HalfState best = r.state;
  reset_silent_uavs(sc, best, [&](int k, const Vector3d& cand) {
    const Vector3d d = cand - sc.start.col(k);
    return d.head<2>().norm() <= reach.level * (1 - 1e-9) &&
           d[2] <= reach.up * (1 - 1e-9) && -d[2] <= reach.down * (1 - 1e-9);
  });
  return finish(scen, sc, best, r.iterations);
}

DeploymentSolution solve_oneway_deployment(const Scenario& scen,
                                           const ScaConfig& cfg) {
  scen.validate();
  const Scaled sc = Scaled::from(scen);
  const int K = sc.K;
  const double T = scen.horizon.total_time_s;
  const double v_level = scen.limits.v_level / sc.length_unit;
  const double v_up = scen.limits.v_ascend / sc.length_unit;
  const double v_down = scen.limits.v_descend / sc.length_unit;
  constexpr double kEps = 1e-6;  // norm smoothing, scaled length

  ReachBox reach{v_level * T, v_up * T, v_down * T};
  HalfState st = single_slot_state(sc, strict_hover_init(sc, reach));
  VectorXd tau = VectorXd::Constant(K, 0.5 * T);

  const auto cone_terms = [&](ipm::ConvexProgram& prog) {
    prog.dimension = 5 * K;
    prog.block_sizes = {5 * K};
    for (int k = 0; k < K; ++k) {
      const int vt = 4 * K + k;
      prog.inequalities.push_back(detail::bound_lower(vt, 0.0));
      prog.inequalities.push_back(detail::bound_upper(vt, T));
      // Horizontal leg: smoothed |xy - xy0| <= v_level * tau.
      {
        ipm::SmoothTerm t;
        t.vars = {detail::var_q(K, 0, k, 0), detail::var_q(K, 0, k, 1), vt};
        const Vector2d xy0 = sc.start.col(k).head<2>();
        t.eval = [xy0, v_level](const VectorXd& x, VectorXd* grad,
                                MatrixXd* hess) {
          const Vector2d d(x[0] - xy0[0], x[1] - xy0[1]);
          const double s = std::sqrt(d.squaredNorm() + kEps * kEps);
          if (grad) {
            grad->head<2>() = d / s;
            (*grad)[2] = -v_level;
          }
          if (hess) {
            hess->setZero();
            hess->topLeftCorner<2, 2>() =
                (Matrix2d::Identity() - d * d.transpose() / (s * s)) / s;
          }
          return s - v_level * x[2];
        };
        prog.inequalities.push_back(std::move(t));
      }
      // Vertical leg: ascent at v_ascend plus descent at v_descend must fit
      // into T - tau, with |dz| smoothed.
      {
        ipm::SmoothTerm t;
        t.vars = {detail::var_q(K, 0, k, 2), vt};
        const double z0 = sc.start(2, k);
        const double ca = 0.5 / v_up + 0.5 / v_down;
        const double cb = 0.5 / v_up - 0.5 / v_down;
        t.eval = [z0, ca, cb, T](const VectorXd& x, VectorXd* grad,
                                 MatrixXd* hess) {
          const double dz = x[0] - z0;
          const double s = std::sqrt(dz * dz + kEps * kEps);
          if (grad) {
            (*grad)[0] = ca * dz / s + cb;
            (*grad)[1] = 1;
          }
          if (hess) {
            hess->setZero();
            (*hess)(0, 0) = ca * kEps * kEps / (s * s * s);
          }
          return ca * s + cb * dz + x[1] - T;
        };
        prog.inequalities.push_back(std::move(t));
      }
    }
  };

  double obj = detail::joint_objective(sc, st, VectorXd());
  int iterations = 0;
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    const MatrixXd powers = st.a.array().square();
    const SurrogateExpansion exp = make_expansion(st.q, powers, sc.gt, 1.0);
    JointOptions opt;
    opt.chain = false;
    opt.first_level = 0;  // motion handled by the cone terms below
    ipm::ConvexProgram prog = detail::build_joint_program(sc, exp, opt);
    cone_terms(prog);
    prog.start.resize(5 * K);
    prog.start.head(4 * K) = detail::pack_state(st);
    prog.start.tail(K) = tau;
    const ipm::IpmResult sol = ipm::maximize(prog);
    st = detail::unpack_state(sol.x.head(4 * K), K, 1);
    tau = sol.x.tail(K);
    const double next = detail::joint_objective(sc, st, VectorXd());
    iterations = iter;
    const bool done =
        next - obj <= cfg.rel_tol * std::max(std::abs(obj), 1e-12);
    obj = next;
    if (done) break;
  }

  reset_silent_uavs(sc, st, [&](int k, const Vector3d& cand) {
    const Vector3d d = cand - sc.start.col(k);
    const double need = d.head<2>().norm() / v_level +
                        std::max(d[2], 0.0) / v_up +
                        std::max(-d[2], 0.0) / v_down;
    return need <= T * (1 - 1e-9);
  });
  return finish(scen, sc, st, iterations);
}

int estimate_reduced_horizon(const Scenario& scen, const Matrix3Xd& hover,
                             int slack_slots) {
  scen.validate();
  if (hover.cols() != scen.num_links)
    throw InvalidArgumentError("estimate_reduced_horizon: size mismatch");
  const double ts = scen.horizon.slot_s;
  const double v_vert = std::min(scen.limits.v_ascend, scen.limits.v_descend);
  int slots = 1;
  for (int k = 0; k < scen.num_links; ++k) {
    const Vector3d d = hover.col(k) - scen.uav_initial.col(k);
    const double horiz =
        std::ceil(d.head<2>().norm() / (scen.limits.v_level * ts) - 1e-12);
    const double vert = std::ceil(std::abs(d[2]) / (v_vert * ts) - 1e-12);
    slots = std::max({slots, static_cast<int>(horiz) + slack_slots,
                      static_cast<int>(vert) + slack_slots});
  }
  if (slots > scen.horizon.num_slots / 2)
    throw InfeasibleError("estimate_reduced_horizon: horizon too short");
  return slots;
}

}  // namespace uavtpc
