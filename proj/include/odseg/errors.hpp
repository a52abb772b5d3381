#pragma once

#include <stdexcept>
#include <string>

namespace odseg {

// Every failure raised by the toolkit derives from Error so the C API can map
// it onto a status code without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised by the Jaccard term when the labels contain no disc pixel and the
// caller asked for strict handling.
class DegenerateLabelError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace odseg
