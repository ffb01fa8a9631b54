#pragma once

// Self-contained log-barrier interior-point kernel for smooth convex
// programs, written for the trajectory subproblems in this library but
// generic over any problem shaped as
//
//     maximize   sum_t f_t(x)          (each f_t concave)
//     subject to g_i(x) <= 0           (each g_i convex, smooth)
//                A x = b               (affine; handled by elimination)
//
// Terms declare the variable indices they touch, so gradients and Hessians
// stay small and the assembled Newton system inherits whatever block
// structure the caller announces. Trajectory problems order variables
// slot-major, making the Hessian block-tridiagonal: the factorization below
// is a block LDL^T sweep that never fills outside the band.
//
// Callers must hand in a strictly feasible start; there is no phase-I.
// Equality rows are eliminated up front (each row pivots one variable),
// which is exact for the anchor constraints that dominate usage here.

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "uavtpc/errors.hpp"

namespace uavtpc::ipm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Smooth scalar function of a few variables. `vars` lists the global
// variable indices in strictly increasing order; eval receives the packed
// local vector and, when the pointers are non-null, must fill the local
// gradient and (symmetric) Hessian. Returning a non-finite value marks the
// point as outside the term's domain, which the line search treats as an
// implicit constraint.
struct SmoothTerm {
  std::vector<int> vars;
  std::function<double(const VectorXd& x_local, VectorXd* grad, MatrixXd* hess)>
      eval;
};

// One affine equality row: sum_i coeffs[i] * x[vars[i]] == rhs.
struct EqualityRow {
  std::vector<int> vars;
  VectorXd coeffs;
  double rhs = 0;
};

struct ConvexProgram {
  int dimension = 0;
  std::vector<SmoothTerm> objective;     // concave terms, summed
  std::vector<SmoothTerm> inequalities;  // g(x) <= 0
  std::vector<EqualityRow> equalities;
  VectorXd start;               // strictly feasible, satisfies equalities
  std::vector<int> block_sizes; // optional; empty means one dense block
};

struct IpmConfig {
  double barrier_init = 1.0;    // s: first barrier weight
  double barrier_growth = 30.0; // mu: weight multiplier per outer stage
  double outer_tol = 1e-8;      // stop once m / t <= outer_tol
  double newton_tol = 1e-8;     // stop centering once decrement^2 / 2 <= this
  int newton_max_iter = 30;
  double ls_alpha = 0.01;       // sufficient-increase fraction
  double ls_beta = 0.5;         // backtracking shrink factor
  bool record_steps = false;    // keep per-Newton-step records in diagnostics
};

struct NewtonStepRecord {
  double phi_before = 0;
  double phi_after = 0;
  double step = 0;         // accepted backtracking step length
  double decrement_sq = 0; // grad . dx at this iterate
};

struct IpmDiagnostics {
  int outer_iterations = 0;
  int newton_iterations = 0;
  int line_search_stalls = 0;
  double final_barrier_weight = 0;
  double gap_bound = 0;       // m / t at exit (0 when no inequalities)
  double max_damping = 0;     // largest tau added to -H during factorization
  bool blocks_merged = false; // term support forced a dense fallback
  std::vector<NewtonStepRecord> steps;
};

struct IpmResult {
  VectorXd x;
  double objective = 0;
  IpmDiagnostics diag;
};

// Runs the full barrier method. Throws InvalidArgumentError for malformed
// programs, InfeasibleError when the start is not strictly feasible (or the
// equality system is inconsistent), SolverError on numerical breakdown.
IpmResult maximize(const ConvexProgram& prog, const IpmConfig& cfg = {});

// One centering run at fixed barrier weight t from `start`; returns the
// centered point in full coordinates. Same preconditions as maximize().
VectorXd newton_centering(const ConvexProgram& prog, double barrier_weight,
                          const VectorXd& start, const IpmConfig& cfg = {},
                          IpmDiagnostics* diag = nullptr);

}  // namespace uavtpc::ipm
