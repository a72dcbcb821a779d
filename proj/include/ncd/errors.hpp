#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ncd {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Argument outside an operation's documented domain.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed binary input; carries the byte offset where decoding stopped.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

// Checkpoint or artifact produced under a different configuration.
class IncompatibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operation invoked on a model that lacks the required state (head, stage marker).
class StateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A command needs an artifact that an earlier command should have produced.
class DependencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ncd
