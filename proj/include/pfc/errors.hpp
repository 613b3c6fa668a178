#pragma once

#include <stdexcept>
#include <string>

namespace pfc {

/// Error taxonomy. The CLI maps these onto exit codes:
/// UsageError -> 2, FormatError/DataError -> 3, everything numeric -> 4.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pfc
