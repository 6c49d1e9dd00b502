#include "cwb/error.hpp"

namespace cwb {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kIo: return "I/O error";
    case ErrorKind::kEmptyCorpus: return "empty-corpus error";
    case ErrorKind::kSampling: return "sampling error";
    case ErrorKind::kFormat: return "checkpoint format error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kEmptyDataset: return "empty-dataset error";
    case ErrorKind::kUndefinedCorrelation: return "undefined-correlation error";
    case ErrorKind::kGrid: return "grid error";
  }
  return "error";
}

}  // namespace cwb
