#pragma once

#include <stdexcept>
#include <string>

namespace equiseq {

/// Dimension mismatch between operands; the message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Input is degenerate for the requested operation (e.g. zero reflection vector).
class DegenerateInputError : public std::invalid_argument {
public:
    explicit DegenerateInputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Non-finite values where finite ones are required.
class InvalidInputError : public std::invalid_argument {
public:
    explicit InvalidInputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Matrix is rank deficient or too ill-conditioned for the requested solve.
class IllConditionedError : public std::runtime_error {
public:
    explicit IllConditionedError(const std::string& what) : std::runtime_error(what) {}
};

/// A parameterization would require sequence-length-dependent weights.
class FiniteInformationError : public std::invalid_argument {
public:
    explicit FiniteInformationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A reverse pass was requested on a consumed or non-differentiable tape.
class TapeError : public std::logic_error {
public:
    explicit TapeError(const std::string& what) : std::logic_error(what) {}
};

} // namespace equiseq
