#pragma once

#include <stdexcept>
#include <string>

namespace midibert {

// Error categories map one-to-one onto CLI exit codes (see cli.h).

/// Bad flags or invalid configuration.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data: unparsable MIDI, label mismatches, bad schema.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite losses or gradients, shape mismatches inside the math kernels.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace midibert
