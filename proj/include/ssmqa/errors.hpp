#pragma once

#include <stdexcept>
#include <string>

namespace ssmqa {

// Tensor shape or dimension contract violated.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input data failed validation (bad record, bad encoding, bad config value).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Character span could not be mapped onto tokens.
class AlignmentError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Malformed UTF-8.
class EncodingError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ssmqa
