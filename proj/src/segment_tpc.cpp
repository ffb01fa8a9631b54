#include "uavtpc/segment_tpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "detail/consensus.hpp"
#include "detail/joint_solver.hpp"
#include "uavtpc/errors.hpp"
#include "uavtpc/sca_tpc.hpp"
#include "uavtpc/trajectory_init.hpp"

namespace uavtpc {

namespace {

// Exact sum rate of one sampled slot, bit/s.
double slot_sum_rate(const VectorXd& powers_w, const Matrix3Xd& uav_pos,
                     const Scenario& scen) {
  double total = 0;
  for (int k = 0; k < scen.num_links; ++k)
    total += compute_rate(powers_w, uav_pos, k, scen.gt_positions,
                          scen.channel);
  return total;
}

std::string rate_diag(const char* what, int segments, double best_bps,
                      double target_bps) {
  char buf[192];
  std::snprintf(buf, sizeof(buf),
                "run_segmented: %s after %d segments; best end-slot rate "
                "%.6g bit/s of target %.6g bit/s",
                what, segments, best_bps, target_bps);
  return buf;
}

// Fallback window initializer: every slot repeats the boundary state
// (scen.uav_initial), nudged strictly inside the altitude band and the
// pairwise separation so the barrier solver can restart from it; powers come
// from WMMSE on the held path. Used when the four-step planner cannot
// re-plan from a mid-flight boundary (its only conflict tool is a launch
// delay, which cannot resolve e.g. a boundary sitting mid-crossing); the
// window solve itself then has to make the progress.
TrajectorySolution hold_init(const Scenario& scen, int seg_len) {
  const int K = scen.num_links;
  const KinematicLimits& lim = scen.limits;
  Matrix3Xd pos = scen.uav_initial;

  const double eps_z = 1e-6 * lim.h_min;
  const bool fixed_alt = lim.h_max - lim.h_min <= 2 * eps_z;
  for (int k = 0; k < K; ++k)
    pos(2, k) = fixed_alt ? lim.h_min
                          : std::min(std::max(pos(2, k), lim.h_min + eps_z),
                                     lim.h_max - eps_z);

  // A few symmetric Jacobi pushes: boundary pairs sit at >= d_min but may
  // hug it to solver precision; the nudges are micrometres.
  const double d_strict = lim.d_min * (1 + 1e-6);
  for (int round = 0; round < 5; ++round) {
    bool tight = false;
    for (int i = 0; i < K; ++i)
      for (int j = i + 1; j < K; ++j) {
        Vector3d diff = pos.col(i) - pos.col(j);
        const double norm = diff.norm();
        if (norm >= d_strict) continue;
        tight = true;
        if (norm <= 1e-12 * lim.d_min) diff = Vector3d::UnitX();
        const Vector3d push = 0.5 * (d_strict - norm) * diff.normalized();
        pos.col(i) += push;
        pos.col(j) -= push;
      }
    if (!tight) break;
  }

  TrajectorySolution init;
  init.positions.reserve(K);
  for (int k = 0; k < K; ++k)
    init.positions.push_back(pos.col(k).replicate(1, seg_len));
  init.powers_w = wmmse_power_control(init.positions, scen);
  return init;
}

}  // namespace

TrajectorySolution run_segmented(const Scenario& scen,
                                 const DeploymentSolution& hover,
                                 const SegmentConfig& cfg,
                                 SegmentTrace* trace) {
  const auto t0 = std::chrono::steady_clock::now();
  scen.validate();
  const int K = scen.num_links;
  if (cfg.n_seg < 1)
    throw InvalidArgumentError("run_segmented: n_seg must be >= 1");
  if (cfg.stall_limit < 1)
    throw InvalidArgumentError("run_segmented: stall_limit must be >= 1");
  if (hover.positions.cols() != K || hover.powers_w.size() != K)
    throw InvalidArgumentError("run_segmented: hover size mismatch");

  const int half = scen.horizon.num_slots / 2;
  const double target = hover.sum_rate_bps * (1 - cfg.reach_tol);
  if (trace) trace->target_rate_bps = target;

  const detail::Scaled sc = detail::Scaled::from(scen);
  detail::JointOptions opt;
  opt.first_level = sc.step_level;
  opt.first_up = sc.step_vert;    // min(up, down): the mirrored return leg
  opt.first_down = sc.step_vert;  // must fit the vertical caps too
  opt.chain_level = sc.step_level;
  opt.chain_up = sc.step_vert;
  opt.chain_down = sc.step_vert;
  opt.anchored = false;  // no terminal anchor; the rate target stops the loop
  opt.separation = K > 1;

  ScaConfig inner_cfg;
  inner_cfg.rel_tol = cfg.rel_tol;
  inner_cfg.max_iter = cfg.max_iter;
  ParallelConfig par_cfg;
  par_cfg.rel_tol = cfg.rel_tol;
  par_cfg.max_iter = cfg.max_iter;

  Scenario sub = scen;  // the boundary state travels in uav_initial
  std::vector<TrajectorySolution> segments;
  int used = 0, iterations = 0, stalled = 0;
  double best_rate = -std::numeric_limits<double>::infinity();
  double best_dist = std::numeric_limits<double>::infinity();
  // Progress thresholds; anything smaller is noise from the inner solver
  // tolerances. Shrinking the remaining distance counts as progress even
  // when the end rate dips (e.g. while a UAV passes behind another), since
  // the planner initialization keeps pulling toward the hover points.
  const double rate_eps = 1e-9 * std::max(std::abs(hover.sum_rate_bps), 1.0);
  const double dist_eps = 1e-9 * scen.limits.h_min;
  bool reached = false;

  while (!reached) {
    if (used >= half)
      throw SolverError(rate_diag("outbound horizon exhausted",
                                  static_cast<int>(segments.size()),
                                  best_rate, target));
    const int seg_len = std::min(cfg.n_seg, half - used);

    // Planner path from the boundary toward the hover points, truncated to
    // this window; powers along it come from the planner's WMMSE pass. A
    // first-window failure is a genuine infeasibility and propagates; later
    // boundaries fall back to holding in place.
    TrajectorySolution init;
    try {
      const TrajectorySolution plan =
          build_initial_trajectory(sub, hover, seg_len);
      init.positions.reserve(K);
      for (int k = 0; k < K; ++k)
        init.positions.push_back(plan.positions[k].leftCols(seg_len));
      init.powers_w = plan.powers_w.leftCols(seg_len);
    } catch (const Error&) {
      if (segments.empty()) throw;
      init = hold_init(sub, seg_len);
    }

    opt.q0 = sub.uav_initial / sc.length_unit;
    opt.chain = seg_len > 1;
    const detail::HalfState st0 = detail::to_scaled(init, sc);

    TrajectorySolution seg;
    if (cfg.inner_solver == SegmentInner::parallel && K > 1) {
      const detail::ConsensusResult r =
          detail::run_consensus(sc, st0, opt, par_cfg);
      seg = detail::from_scaled(r.state, sc);
      iterations += r.iterations + r.repair_iterations;
    } else {
      const detail::JointResult r =
          detail::run_joint_sca(sc, st0, opt, inner_cfg);
      seg = detail::from_scaled(r.state, sc);
      iterations += r.iterations;
    }
    used += seg_len;

    Matrix3Xd end_pos(3, K);
    for (int k = 0; k < K; ++k)
      end_pos.col(k) = seg.positions[k].col(seg_len - 1);
    const VectorXd end_pow = seg.powers_w.col(seg_len - 1);
    const double end_rate = slot_sum_rate(end_pow, end_pos, scen);
    segments.push_back(std::move(seg));
    sub.uav_initial = end_pos;

    if (trace) {
      trace->segment_slots.push_back(seg_len);
      trace->endpoint_rate_bps.push_back(end_rate);
    }

    double dist = 0;  // aggregate distance still to cover
    for (int k = 0; k < K; ++k)
      dist += (end_pos.col(k) - hover.positions.col(k)).norm();
    const bool progressed =
        end_rate > best_rate + rate_eps || dist < best_dist - dist_eps;
    best_rate = std::max(best_rate, end_rate);
    best_dist = std::min(best_dist, dist);
    if (end_rate >= target) {
      reached = true;
    } else if (progressed) {
      stalled = 0;
    } else if (++stalled >= cfg.stall_limit) {
      throw SolverError(rate_diag("no progress toward the hover rate",
                                  static_cast<int>(segments.size()),
                                  best_rate, target));
    }
  }

  // Concatenate the windows into the outbound half; the remaining outbound
  // slots hold the final state through mirror_extend's hover hold, and the
  // return leg is the time reversal.
  TrajectorySolution halfsol;
  halfsol.positions.assign(K, Matrix3Xd(3, used));
  halfsol.powers_w.resize(K, used);
  int off = 0;
  for (const TrajectorySolution& s : segments) {
    const int m = s.num_slots();
    for (int k = 0; k < K; ++k)
      halfsol.positions[k].middleCols(off, m) = s.positions[k];
    halfsol.powers_w.middleCols(off, m) = s.powers_w;
    off += m;
  }
  fill_rates(halfsol, scen);

  TrajectorySolution out =
      mirror_extend(halfsol, scen.horizon.num_slots - 2 * used, scen);
  out.iterations = iterations;
  out.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

}  // namespace uavtpc
