#pragma once

#include <stdexcept>
#include <string>

namespace gridnse {

/// Malformed input text (case files, CSV, configs). Carries a line number
/// when one is known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line = -1)
        : std::runtime_error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// Structurally well-formed input that violates a model invariant
/// (duplicate ids, dangling references, non-positive variance, ...).
class ValidationError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad or out-of-range run-configuration value; message names the key.
class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Iterative solver failed to reach its tolerance within the iteration cap.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, double final_norm)
        : std::runtime_error(what), final_norm_(final_norm) {}
    double final_norm() const { return final_norm_; }

private:
    double final_norm_ = 0.0;
};

/// Normal-equations matrix could not be factorized even with damping:
/// the measurement set does not determine the state.
class UnobservableError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Scenario transform preconditions not met (no eligible bus pair, ...).
class ScenarioError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Sample generation exhausted its retry budget.
class GenerationError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace gridnse
