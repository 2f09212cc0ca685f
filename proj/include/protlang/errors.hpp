#pragma once

#include <stdexcept>
#include <string>

namespace protlang {

// Base for everything thrown on purpose; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension disagreement between tensors or between a tensor and an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf showed up where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Text input (FASTA, PDB, JSONL, config) failed to parse; message carries the location.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Binary file violated its container layout (magic, version, sizes).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A requested entity (chain id, checkpoint tensor, vocab token) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Command-line misuse.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Filesystem trouble outside parse/format concerns.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace protlang
