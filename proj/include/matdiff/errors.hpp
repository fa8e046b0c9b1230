// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace matdiff {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes.

class InvalidArgument : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Serialized data violates its documented layout (e.g. packed RM channel 2 != 0).
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A NaN/Inf reached a loss; `component()` names the offending term.
class NumericError : public std::runtime_error {
  public:
    NumericError(std::string component, const std::string& what)
        : std::runtime_error(what), component_(std::move(component)) {}
    const std::string& component() const { return component_; }

  private:
    std::string component_;
};

/// The camera sees no part of the scene.
class DegenerateViewError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Training stages requested out of order, or a frozen module was configured as trainable.
class StageOrderError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint or config content does not match its recorded hash.
class IntegrityError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A caller asked for something the operation cannot define (e.g. variance of a deterministic run).
class ContractError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

} // namespace matdiff
