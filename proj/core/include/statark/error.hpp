#pragma once

#include <stdexcept>
#include <string>

namespace statark {

// Base for every error raised on bad user input (malformed IR, shape
// violations, bad requests). Anything else escaping the library is a bug.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IrError : public Error {
 public:
  IrError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_ = 0;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class KernelError : public Error {
 public:
  using Error::Error;
};

class CompileError : public Error {
 public:
  using Error::Error;
};

class InferError : public Error {
 public:
  using Error::Error;
};

class BuildError : public Error {
 public:
  using Error::Error;
};

class PipelineError : public Error {
 public:
  using Error::Error;
};

// Raised by a generation step once every cache row is in use.
class ContextExhausted : public PipelineError {
 public:
  using PipelineError::PipelineError;
};

}  // namespace statark
