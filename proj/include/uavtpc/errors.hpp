#pragma once

#include <stdexcept>
#include <string>

namespace uavtpc {

// Coarse failure classes. The numeric values double as the C API status
// codes and the CLI exit codes, so keep them stable.
enum class Status : int {
  ok = 0,
  invalid_argument = 1,
  infeasible = 2,
  solver_failure = 3,
  io_failure = 4,
};

class Error : public std::runtime_error {
 public:
  Error(Status status, const std::string& what)
      : std::runtime_error(what), status_(status) {}
  Status status() const noexcept { return status_; }

 private:
  Status status_;
};

class InvalidArgumentError : public Error {
 public:
  explicit InvalidArgumentError(const std::string& what)
      : Error(Status::invalid_argument, what) {}
};

// A scenario (or subproblem) admits no feasible point, or an initializer
// could not construct one.
class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& what)
      : Error(Status::infeasible, what) {}
};

// Numerical failure inside an optimization loop (stall, divergence,
// factorization breakdown past the damping ladder).
class SolverError : public Error {
 public:
  explicit SolverError(const std::string& what)
      : Error(Status::solver_failure, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Status::io_failure, what) {}
};

}  // namespace uavtpc
