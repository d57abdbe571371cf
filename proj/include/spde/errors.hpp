#pragma once

#include <stdexcept>
#include <string>

namespace spde {

/// Raised when a computation produces non-finite values. Carries the time-step
/// index at which the value went bad (-1 when not applicable).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what, int step_index = -1)
        : std::runtime_error(what), step_index_(step_index) {}

    int step_index() const noexcept { return step_index_; }

private:
    int step_index_;
};

/// Raised when an optimization loop diverges. Carries step index, epoch and
/// iteration of the failing update.
class TrainingError : public NumericError {
public:
    TrainingError(const std::string& what, int step_index, int epoch, int iteration)
        : NumericError(what, step_index), epoch_(epoch), iteration_(iteration) {}

    int epoch() const noexcept { return epoch_; }
    int iteration() const noexcept { return iteration_; }

private:
    int epoch_;
    int iteration_;
};

}  // namespace spde
