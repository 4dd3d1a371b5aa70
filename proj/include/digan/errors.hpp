#pragma once

#include <stdexcept>
#include <string>

namespace digan {

// Base class for all library errors. CLI maps the subclasses to exit codes:
// user/config problems -> 2, data/checkpoint integrity problems -> 3.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Incompatible tensor/matrix extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

// API contract violated by the caller (empty batch, non-scalar loss root, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed input file (CSV/JSONL schema, duplicate rows, ...).
class SchemaError : public Error {
public:
    using Error::Error;
};

// Invalid configuration or generator spec.
class SpecError : public Error {
public:
    using Error::Error;
};

// Corrupted or mismatched checkpoint data.
class IntegrityError : public Error {
public:
    using Error::Error;
};

} // namespace digan
