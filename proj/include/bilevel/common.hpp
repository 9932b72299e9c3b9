#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace bilevel {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Base class for all toolkit errors; subclasses distinguish what went wrong
// so callers (and the CLI) can report structured failures.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed expression text; carries the offset of the offending character.
struct ParseError : Error {
  ParseError(const std::string& msg, std::size_t position)
      : Error(msg + " (at position " + std::to_string(position) + ")"),
        pos(position) {}
  std::size_t pos;
};

// Evaluation hit a point outside an operation's domain (log of a
// non-positive number, division by zero, ...).
struct DomainError : Error {
  using Error::Error;
};

// A problem file or an argument violated a structural requirement.
struct ValidationError : Error {
  using Error::Error;
};

using Rng = std::mt19937_64;

// Every tolerance used anywhere in the toolkit, with its default.
// Reports echo the instance actually used so results are reproducible.
struct Tolerances {
  double feas = 1e-8;       // constraint feasibility: g <= feas, |h| <= feas
  double active = 1e-6;     // active-set detection: g_i >= -active
  double pos = 1e-8;        // strict-positivity threshold for multipliers
  double rank = 1e-10;      // rank decisions (null spaces, independence)
  double kkt = 1e-8;        // stationarity residual for multiplier sets
  double cone = 1e-8;       // cone membership slack
  double soc = 1e-8;        // curvature threshold: quad >= -soc
  double drop = 1e-10;      // strict objective decrease for violation witnesses
  double value = 1e-9;      // value filter when collecting global minimizers
  double cluster = 1e-4;    // minimizer clustering radius
  double sigma = 1e-6;      // stationary-set membership tolerance on grids
  double memo_quantum = 1e-12;  // quantization step for value-function memo keys
};

inline double sq(double v) { return v * v; }

}  // namespace bilevel
