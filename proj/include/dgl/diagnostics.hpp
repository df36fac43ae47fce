#pragma once

#include <stdexcept>
#include <string>

namespace dgl {

enum class ErrorKind {
  Syntax,            // malformed source text
  ArityConflict,     // one predicate name used at two arities
  Duplicate,         // same ground atom declared twice
  StratificationCycle,
  UnknownModel,
  UnboundVariable,
  Validation,        // other semantic checks (probability range, gamma arity, ...)
  CapExceeded,       // relevant-fact count above the enumeration cap
  UndefinedConditional,
  Io,
  Data,              // malformed training data / metric inputs
  Numeric,           // non-finite values where finite ones are required
};

/// Error carrying a source position when one is known (line/col are 1-based,
/// 0 meaning "no position").
class DglError : public std::runtime_error {
public:
  DglError(ErrorKind kind, std::string message, int line = 0, int col = 0)
      : std::runtime_error(std::move(message)), kind(kind), line(line), col(col) {}

  ErrorKind kind;
  int line;
  int col;

  /// Formats `file:line:col: severity: message` as emitted on stderr.
  std::string diagnostic(const std::string& file) const {
    std::string out = file.empty() ? std::string("<input>") : file;
    out += ":" + std::to_string(line) + ":" + std::to_string(col);
    out += ": error: ";
    out += what();
    return out;
  }
};

}  // namespace dgl
