#pragma once

#include <stdexcept>
#include <string>

namespace physground {

// Base of every error raised by the library. The CLI maps InvalidInput to
// exit code 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input, violated precondition, or a schema problem in a file.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

// Out-of-order submission in an annotation session.
class SequencingError : public Error {
 public:
  using Error::Error;
};

// Network failure, timeout, or a reply that breaks the wire protocol.
class TransportError : public Error {
 public:
  using Error::Error;
};

// The remote model answered but declined to give a distribution.
class ModelRefusal : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace physground
