#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mla {

// Coarse failure classes; the CLI maps them onto exit codes.
enum class ErrorKind {
  Dimension,
  Numeric,
  Validation,
  Contract,
  Config,
  Schema,
  Structure,
  NoPath,
  Range,
  Alignment,
  Data,
  Format,
  Io,
  Training,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define MLA_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(Kind, message) {} \
  };

MLA_DEFINE_ERROR(DimensionError, ErrorKind::Dimension)
MLA_DEFINE_ERROR(NumericError, ErrorKind::Numeric)
MLA_DEFINE_ERROR(ValidationError, ErrorKind::Validation)
MLA_DEFINE_ERROR(ContractError, ErrorKind::Contract)
MLA_DEFINE_ERROR(ConfigError, ErrorKind::Config)
MLA_DEFINE_ERROR(SchemaError, ErrorKind::Schema)
MLA_DEFINE_ERROR(StructureError, ErrorKind::Structure)
MLA_DEFINE_ERROR(NoPathError, ErrorKind::NoPath)
MLA_DEFINE_ERROR(RangeError, ErrorKind::Range)
MLA_DEFINE_ERROR(AlignmentError, ErrorKind::Alignment)
MLA_DEFINE_ERROR(DataError, ErrorKind::Data)
MLA_DEFINE_ERROR(FormatError, ErrorKind::Format)
MLA_DEFINE_ERROR(IoError, ErrorKind::Io)
MLA_DEFINE_ERROR(TrainingError, ErrorKind::Training)

#undef MLA_DEFINE_ERROR

}  // namespace mla
