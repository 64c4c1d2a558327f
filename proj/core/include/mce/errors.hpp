#pragma once

#include <stdexcept>
#include <string>

namespace mce {

/// Shape or dimension disagreement between operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Invalid or inconsistent configuration value; the message names the field.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A call that violates an operation's contract (e.g. an empty subset).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Out-of-range class label or row index.
struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// A computation produced NaN or Inf.
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mce
