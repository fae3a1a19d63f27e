// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ctxda {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf input or result, or a non-deterministic loss during checking.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed model, cache or data file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Corpus content problems: missing columns, unknown IDs, empty files.
class CorpusError : public Error {
 public:
  using Error::Error;
};

/// A vector cache exists but was produced from different inputs.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctxda
