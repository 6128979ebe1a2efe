#pragma once

#include <stdexcept>
#include <string>

namespace foodsec {

/// Base error for all library failures.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Input data violates a documented contract (bad file, bad column, bad key).
class DataError : public Error {
  public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

/// Numerical routine could not complete (no convergence, rank deficiency, separation).
class NumericError : public Error {
  public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// Pipeline-stage failure; carries the stage name for attribution.
class StageError : public Error {
  public:
    StageError(std::string stage, const std::string& msg)
        : Error("[" + stage + "] " + msg), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

  private:
    std::string stage_;
};

} // namespace foodsec
