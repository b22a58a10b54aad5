#pragma once

#include "gridnse/grid_model.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <string>
#include <vector>

namespace gridnse {

/// Legacy (SCADA) and phasor (WAMS) measurement kinds. Flow, current and
/// current-angle kinds live on a branch end; the rest live on a bus.
enum class MeasurementKind {
    active_flow,        // P_ij
    reactive_flow,      // Q_ij
    active_injection,   // P_i
    reactive_injection, // Q_i
    current_magnitude,  // |I_ij|, legacy
    voltage_magnitude,  // V_i, legacy
    pmu_voltage_magnitude,
    pmu_voltage_angle,
    pmu_current_magnitude,
    pmu_current_angle,
};

constexpr int kMeasurementKindCount = 10;

bool is_branch_kind(MeasurementKind kind);
bool is_angle_kind(MeasurementKind kind); // pmu_voltage_angle or pmu_current_angle
bool is_phasor_kind(MeasurementKind kind);
const char* measurement_kind_name(MeasurementKind kind);
MeasurementKind measurement_kind_from_name(const std::string& name);

enum class Provenance { clean, noisy, attacked };

struct Measurement {
    MeasurementKind kind = MeasurementKind::voltage_magnitude;
    int bus = -1;    // bus-located kinds
    int branch = -1; // branch-located kinds
    BranchSide side = BranchSide::from_side;
    double value = 0.0;    // z_i, p.u. or radians
    double variance = 1.0; // v_i > 0
    Provenance provenance = Provenance::clean;

    bool on_branch() const { return is_branch_kind(kind); }
};

/// Ordered measurement list; the order defines the rows of z, h and J.
struct MeasurementSet {
    std::vector<Measurement> items;

    int size() const { return static_cast<int>(items.size()); }
    void validate(const PowerSystem& sys) const;
};

/// h_i(x) for a single measurement. Injection functions include the bus
/// shunt. When a measured branch current magnitude is below 1e-8 p.u. the
/// current-angle function returns 0 (the angle is undefined at the origin).
double eval_h(const PowerSystem& sys, const StateVector& x, const Measurement& m);

/// One sparse Jacobian row over the state ordering (V_0..V_{n-1},
/// th_0..th_{n-1}); entries sorted by column. Current-magnitude derivatives
/// clamp |I| at 1e-8 in the denominator so a flat start stays differentiable;
/// current-angle rows are zeroed below the same threshold.
struct JacobianRow {
    std::vector<std::pair<int, double>> entries;
};
JacobianRow eval_jacobian_row(const PowerSystem& sys, const StateVector& x, const Measurement& m);

/// Rows ordered as `ms`; weights are inverse variances.
struct StackedMeasurements {
    Eigen::VectorXd h;
    Eigen::SparseMatrix<double> jacobian; // m x 2n
    Eigen::VectorXd weights;              // m
};
StackedMeasurements stack(const PowerSystem& sys, const StateVector& x, const MeasurementSet& ms);

/// m / (2n).
double redundancy(const MeasurementSet& ms, const PowerSystem& sys);

/// CSV round trip: columns kind,location,direction,value,variance,provenance.
/// Bus locations serialize as the bus id, branch locations as from-to (with a
/// #k suffix to pick among parallel branches).
std::string serialize_measurements(const MeasurementSet& ms, const PowerSystem& sys);
MeasurementSet parse_measurements(const std::string& csv, const PowerSystem& sys);

} // namespace gridnse
