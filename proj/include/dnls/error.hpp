// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dnls {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape contract violated by an array operation. The message names the
// operation and the offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Log map requested at (or numerically at) a rotation of pi.
class BranchCutError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class FactorizationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace dnls
