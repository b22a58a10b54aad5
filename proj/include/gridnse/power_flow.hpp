#pragma once

#include "gridnse/grid_model.hpp"

#include <Eigen/Dense>

namespace gridnse {

/// Net scheduled injections and voltage setpoints. Entries are per bus:
/// p_injection is used at every non-reference bus, q_injection only at load
/// buses, v_setpoint only at reference/generation buses. Reference angle is 0.
struct PowerFlowSpec {
    Eigen::VectorXd p_injection;
    Eigen::VectorXd q_injection;
    Eigen::VectorXd v_setpoint;
};

/// Builds the nominal spec from the case file's loads and generators.
PowerFlowSpec nominal_power_flow_spec(const CaseData& data);

/// Active/reactive power balance residuals at the current state: P residuals
/// for every non-reference bus (ascending id), then Q residuals for every
/// load bus (ascending id).
Eigen::VectorXd mismatch(const PowerSystem& sys, const PowerFlowSpec& spec, const StateVector& x);

/// Full Newton-Raphson in polar coordinates from a flat start. Returns a
/// state with mismatch infinity-norm <= tol and reference angle exactly 0.
/// Throws DivergenceError after max_iter, or ValidationError for a singular
/// iteration matrix.
StateVector solve_power_flow(const PowerSystem& sys, const PowerFlowSpec& spec, double tol = 1e-8,
                             int max_iter = 20);

} // namespace gridnse
