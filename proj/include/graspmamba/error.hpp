#pragma once

#include <stdexcept>
#include <string>

namespace graspmamba {

// Incompatible tensor shapes or dimensions.
class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Argument outside the accepted domain (non-positive stride, empty prompt, ...).
class ArgumentError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite parameters or values.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Malformed file contents (dataset index, embedding file, checkpoint header).
class ParseError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Missing files, bad magic, truncated payloads, failed lookups.
class LoadError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace graspmamba
