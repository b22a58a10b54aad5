#pragma once

#include "gridnse/measurement.hpp"

#include <Eigen/Sparse>
#include <optional>
#include <string>

namespace gridnse {

struct GnSettings {
    double tol_increment = 1e-8; // stop when ||dx||_inf <= tol
    // With the reference noise classes the WLS problem has large residuals,
    // where the damped iteration contracts linearly rather than
    // quadratically; 30 iterations demonstrably fall short of tol.
    int max_iter = 100;
    std::optional<StateVector> warm_start; // flat start when absent
    bool estimate_condition = true;
};

struct GnReport {
    bool converged = false;
    int iterations = 0;
    double final_residual_norm = 0.0; // weighted residual rms at exit
    double condition_estimate = 0.0;  // gain matrix, 0 when not computed
    std::string failure; // empty on success, otherwise "unobservable"/"divergence"
};

/// G = J^T W J (symmetric) and rhs = J^T W r.
void build_normal_system(const Eigen::SparseMatrix<double>& jacobian,
                         const Eigen::VectorXd& weights, const Eigen::VectorXd& residual,
                         Eigen::SparseMatrix<double>& gain, Eigen::VectorXd& rhs);

/// Largest/smallest eigenvalue ratio via power and inverse-power iteration
/// (a few percent accuracy; returns +inf when the smallest estimate is not
/// positive or the factorization fails).
double condition_estimate(const Eigen::SparseMatrix<double>& gain);

/// Gauss-Newton WLS iteration. When the set carries no absolute angle
/// reference (no pmu angle measurement of either kind) the reference-bus
/// angle is pinned to 0 by eliminating its column. Non-throwing variant:
/// inspect the report (and the empty optional) for failures.
std::optional<StateVector> try_gn_solve(const PowerSystem& sys, const MeasurementSet& ms,
                                        const GnSettings& settings, GnReport& report);

/// Throwing variant: UnobservableError when the (possibly damped) normal
/// matrix cannot be factorized, DivergenceError when the iteration cap is
/// hit or the step turns non-finite.
std::pair<StateVector, GnReport> gn_solve(const PowerSystem& sys, const MeasurementSet& ms,
                                          const GnSettings& settings = {});

/// Solution dump: CSV (bus,V,theta) plus a small JSON-like report block.
std::string serialize_solution(const StateVector& x, const GnReport& report);

} // namespace gridnse
