#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace moe {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Iso3 = Eigen::Isometry3d;

// Thrown when a caller breaks a documented precondition (dimension
// mismatch, invalid parameter range, inconsistent inputs).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Equilibrium solve failed to reach the residual tolerance.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& msg, double residual, int iterations)
      : std::runtime_error(msg), residual(residual), iterations(iterations) {}
  double residual;
  int iterations;
};

// Training diverged (NaN loss).
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& msg, int epoch)
      : std::runtime_error(msg), epoch(epoch) {}
  int epoch;
};

// File-level failures with distinct causes so callers can map them to
// distinct exit codes.
class IoError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, BadVersion, BadChecksum, Malformed, Filesystem };
  IoError(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind(kind) {}
  Kind kind;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

inline bool is_finite(double v) { return std::isfinite(v); }

template <typename Derived>
bool is_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace moe
