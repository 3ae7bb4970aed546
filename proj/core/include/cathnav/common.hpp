#pragma once

#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace cathnav {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Base of every error thrown by the library. The CLI maps subclasses onto
/// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidPoseError : public Error {
 public:
  using Error::Error;
};

/// An argument outside the mathematical domain of an operation (negative
/// insertion, empty sample set, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SimulationDiverged : public Error {
 public:
  SimulationDiverged(std::string msg, std::size_t particle)
      : Error(std::move(msg)), particle_(particle) {}
  std::size_t particle() const { return particle_; }

 private:
  std::size_t particle_;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::string msg, std::uint64_t byte_offset)
      : Error(std::move(msg)), byte_offset_(byte_offset) {}
  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t byte_offset_;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class HashMismatch : public Error {
 public:
  using Error::Error;
};

/// 64-bit FNV-1a. Used for configuration fingerprints, never for security.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hash_to_hex(std::uint64_t h);

bool all_finite(const Vec3& v);

}  // namespace cathnav
