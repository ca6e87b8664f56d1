#pragma once

#include <stdexcept>
#include <string>

namespace mvtrack {

// Base type for everything this library throws.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatchError : Error {
  explicit ShapeMismatchError(const std::string& msg) : Error("ShapeMismatch: " + msg) {}
};

struct NaNDetectedError : Error {
  explicit NaNDetectedError(const std::string& msg) : Error("NaNDetected: " + msg) {}
};

// Point is behind or on the camera plane; invisible to this camera.
struct DepthNonPositiveError : Error {
  explicit DepthNonPositiveError(const std::string& msg) : Error("DepthNonPositive: " + msg) {}
};

struct PositionOutOfGridError : Error {
  explicit PositionOutOfGridError(const std::string& msg) : Error("PositionOutOfGrid: " + msg) {}
};

struct ConfigInvalidError : Error {
  explicit ConfigInvalidError(const std::string& msg) : Error("ConfigInvalid: " + msg) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error("FormatError: " + msg) {}
};

struct MissingFrameError : Error {
  explicit MissingFrameError(const std::string& msg) : Error("MissingFrame: " + msg) {}
};

struct ChecksumMismatchError : Error {
  explicit ChecksumMismatchError(const std::string& msg) : Error("ChecksumMismatch: " + msg) {}
};

// Backward was requested on a computation graph whose closures were released.
struct GraphConsumedError : Error {
  explicit GraphConsumedError(const std::string& msg) : Error("GraphConsumed: " + msg) {}
};

}  // namespace mvtrack
