#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cwb {

enum class ErrorKind {
  kDimension,
  kDomain,
  kConfig,
  kInput,
  kIo,
  kEmptyCorpus,
  kSampling,
  kFormat,
  kNumeric,
  kEmptyDataset,
  kUndefinedCorrelation,
  kGrid,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library. Callers switch on kind() when they
// need to distinguish, e.g. the CLI maps all of them to exit code 1.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  // The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace cwb
