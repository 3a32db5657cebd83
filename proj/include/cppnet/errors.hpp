#pragma once

#include <stdexcept>
#include <string>

namespace cppnet {

enum class Errc {
  invalid_argument,
  invalid_density,
  connectivity_failure,
  io_failure,
  format_version_mismatch,
  parse_error,
  capacity_exceeded,
  out_of_range,
  too_large,
  shape_mismatch,
  non_finite_activation,
  degenerate_batch,
  empty_eval_set,
  empty_records,
  checkpoint_write_failure,
};

inline const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::invalid_density: return "InvalidDensity";
    case Errc::connectivity_failure: return "ConnectivityFailure";
    case Errc::io_failure: return "IoFailure";
    case Errc::format_version_mismatch: return "FormatVersionMismatch";
    case Errc::parse_error: return "ParseError";
    case Errc::capacity_exceeded: return "CapacityExceeded";
    case Errc::out_of_range: return "OutOfRange";
    case Errc::too_large: return "TooLarge";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::non_finite_activation: return "NonFiniteActivation";
    case Errc::degenerate_batch: return "DegenerateBatch";
    case Errc::empty_eval_set: return "EmptyEvalSet";
    case Errc::empty_records: return "EmptyRecords";
    case Errc::checkpoint_write_failure: return "CheckpointWriteFailure";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI) can react without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cppnet
