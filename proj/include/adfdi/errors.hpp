#pragma once

#include <stdexcept>
#include <string>

namespace adfdi {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A speed used as a divisor is at or below the degeneracy floor.
struct DegenerateSpeed : Error {
  using Error::Error;
};

/// True-airspeed radicand went negative (crosswind exceeds ground speed).
struct ComplexAirspeed : Error {
  using Error::Error;
};

/// Altitude outside the supported troposphere band [0, 11 km].
struct AltitudeOutOfRange : Error {
  using Error::Error;
};

/// Invalid or inconsistent configuration input.
struct ConfigError : Error {
  using Error::Error;
};

/// Fault specification violates per-sensor rules.
struct FaultSpecError : Error {
  using Error::Error;
};

/// Measurement fusion requested with an empty healthy set.
struct NoHealthySensors : Error {
  using Error::Error;
};

/// Vector/matrix dimensions inconsistent with the window layout.
struct DimensionMismatch : Error {
  using Error::Error;
};

/// Constraint gradients are linearly dependent at the solution.
struct LicqViolation : Error {
  using Error::Error;
};

/// A KKT system factorization failed.
struct SingularKkt : Error {
  using Error::Error;
};

/// Threshold calibration invoked with an empty scenario bank.
struct EmptyBank : Error {
  using Error::Error;
};

/// Every sensor of one type has been isolated; diagnosis is terminal.
struct AllSensorsFaulty : Error {
  using Error::Error;
};

}  // namespace adfdi
