#pragma once

#include <stdexcept>
#include <string>

namespace kamflow {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argument or state outside the admissible set (ball, chart, grid range).
struct DomainError : Error {
  using Error::Error;
};

// Collocation grid too coarse for the requested truncation order.
struct AliasingError : Error {
  using Error::Error;
};

// Tail model, parameter set or norm data that makes a quantity undefined.
struct InvalidDataError : Error {
  using Error::Error;
};

struct DivergentIntegralError : Error {
  using Error::Error;
};

struct StiffnessError : Error {
  using Error::Error;
};

// Chord iteration failure. `condition` names the violated smallness condition.
struct ConvergenceError : Error {
  ConvergenceError(const std::string& what, std::string cond)
      : Error(what), condition(std::move(cond)) {}
  std::string condition;
};

struct NotCoveredError : Error {
  NotCoveredError(const std::string& what, double m) : Error(what), margin(m) {}
  double margin;
};

struct GlueError : Error {
  GlueError(const std::string& what, int b) : Error(what), branch(b) {}
  int branch;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace kamflow
