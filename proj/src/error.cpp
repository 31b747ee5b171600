#include "mla/error.hpp"

namespace mla {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::Contract: return "contract error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Schema: return "schema error";
    case ErrorKind::Structure: return "structure error";
    case ErrorKind::NoPath: return "no-path error";
    case ErrorKind::Range: return "range error";
    case ErrorKind::Alignment: return "alignment error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Training: return "training error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

}  // namespace mla
