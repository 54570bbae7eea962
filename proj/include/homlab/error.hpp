#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace homlab {

/// Base error for all homlab failures. `stage()` names the pipeline stage
/// ("geometry", "mesh", "fem", "solver", "corrector", "config", ...).
class Error : public std::runtime_error {
public:
    Error(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Iterative solver failure; carries the residual (or increment) history.
class SolverError : public Error {
public:
    SolverError(const std::string& what, std::vector<double> history)
        : Error("solver", what), history_(std::move(history)) {}

    const std::vector<double>& history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

}  // namespace homlab
