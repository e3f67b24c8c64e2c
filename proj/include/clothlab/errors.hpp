#pragma once

#include <stdexcept>
#include <string>

namespace clothlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition (bad argument, bad config).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Two spring-connected particles coincide; the spring direction is undefined.
class SingularityError : public Error {
 public:
  SingularityError(int i, int j, const std::string& what)
      : Error(what), first(i), second(j) {}
  int first;
  int second;
};

/// The explicit integrator produced a non-finite force.
class IntegrationError : public Error {
 public:
  IntegrationError(int particle, const std::string& what) : Error(what), particle(particle) {}
  int particle;
};

/// No particle lies within the gripper radius of the requested grasp point.
class GraspMissError : public Error {
 public:
  using Error::Error;
};

/// Geometry pipeline failures: empty rasters, degenerate polygons, too few points.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// MMDVS was asked for more endpoints than the contour holds.
class InsufficientPointsError : public GeometryError {
 public:
  using GeometryError::GeometryError;
};

/// Action outside the offset bounds or the workspace box.
class RejectedActionError : public Error {
 public:
  using Error::Error;
};

/// Malformed persisted file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace clothlab
