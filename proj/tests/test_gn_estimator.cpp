#include "gridnse/errors.hpp"
#include "gridnse/gn_estimator.hpp"
#include "gridnse/matpower.hpp"
#include "gridnse/power_flow.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace gridnse;
namespace gt = gridnse::testing;

namespace {

Measurement meas(MeasurementKind kind, int bus_or_branch, BranchSide side, double value,
                 double variance) {
    Measurement m;
    m.kind = kind;
    if (m.on_branch()) {
        m.branch = bus_or_branch;
        m.side = side;
    } else {
        m.bus = bus_or_branch;
    }
    m.value = value;
    m.variance = variance;
    return m;
}

// Weighted least squares objective.
double wls_objective(const PowerSystem& sys, const MeasurementSet& ms, const StateVector& x) {
    double total = 0.0;
    for (const Measurement& m : ms.items) {
        const double r = m.value - eval_h(sys, x, m);
        total += r * r / m.variance;
    }
    return total;
}

// Brute-force oracle: coarse 4-D grid around a center followed by
// coordinate descent with a shrinking step. Independent of the GN path.
StateVector brute_force_wls(const PowerSystem& sys, const MeasurementSet& ms,
                            const StateVector& center) {
    StateVector best = center;
    double best_obj = wls_objective(sys, ms, best);
    // Coarse grid over (V0, V1, th0, th1).
    for (int a = -4; a <= 4; ++a)
        for (int b = -4; b <= 4; ++b)
            for (int c = -4; c <= 4; ++c)
                for (int d = -4; d <= 4; ++d) {
                    StateVector probe = center;
                    probe.vm[0] += 0.02 * a;
                    probe.vm[1] += 0.02 * b;
                    probe.va[0] += 0.02 * c;
                    probe.va[1] += 0.02 * d;
                    const double obj = wls_objective(sys, ms, probe);
                    if (obj < best_obj) {
                        best_obj = obj;
                        best = probe;
                    }
                }
    // Coordinate descent.
    double step = 0.02;
    while (step > 1e-9) {
        bool improved = false;
        for (int coord = 0; coord < 4; ++coord) {
            for (double sign : {-1.0, 1.0}) {
                StateVector probe = best;
                double& field = coord < 2 ? probe.vm[coord] : probe.va[coord - 2];
                field += sign * step;
                const double obj = wls_objective(sys, ms, probe);
                if (obj < best_obj) {
                    best_obj = obj;
                    best = probe;
                    improved = true;
                }
            }
        }
        if (!improved) step *= 0.5;
    }
    return best;
}

} // namespace

TEST_CASE("zero-noise measurements reproduce the generating state") {
    CaseData data = gt::two_bus_case();
    const StateVector truth = solve_power_flow(data.system, nominal_power_flow_spec(data));
    MeasurementSet ms;
    ms.items = {
        meas(MeasurementKind::pmu_voltage_magnitude, 0, {}, 0.0, 1e-5),
        meas(MeasurementKind::pmu_voltage_angle, 0, {}, 0.0, 1e-5),
        meas(MeasurementKind::active_flow, 0, BranchSide::from_side, 0.0, 1e-3),
        meas(MeasurementKind::reactive_flow, 0, BranchSide::from_side, 0.0, 1e-3),
        meas(MeasurementKind::voltage_magnitude, 1, {}, 0.0, 1e-3),
        meas(MeasurementKind::reactive_injection, 1, {}, 0.0, 1e-1),
    };
    for (Measurement& m : ms.items) m.value = eval_h(data.system, truth, m);
    const auto [solution, report] = gn_solve(data.system, ms);
    CHECK(report.converged);
    CHECK((solution.vm - truth.vm).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK((solution.va - truth.va).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("noisy two-bus WLS matches the brute-force oracle") {
    CaseData data = gt::two_bus_case();
    const StateVector truth = solve_power_flow(data.system, nominal_power_flow_spec(data));
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        MeasurementSet ms;
        ms.items = {
            meas(MeasurementKind::pmu_voltage_magnitude, 0, {}, 0.0, 1e-5),
            meas(MeasurementKind::pmu_voltage_angle, 0, {}, 0.0, 1e-5),
            meas(MeasurementKind::active_flow, 0, BranchSide::from_side, 0.0, 1e-3),
            meas(MeasurementKind::reactive_flow, 0, BranchSide::from_side, 0.0, 1e-3),
            meas(MeasurementKind::voltage_magnitude, 1, {}, 0.0, 1e-3),
        };
        for (Measurement& m : ms.items)
            m.value = eval_h(data.system, truth, m) + rng.normal(0.0, std::sqrt(m.variance));
        const auto [solution, report] = gn_solve(data.system, ms);
        CHECK(report.converged);
        const StateVector oracle = brute_force_wls(data.system, ms, truth);
        CHECK(std::abs(solution.vm[0] - oracle.vm[0]) <= 1e-6);
        CHECK(std::abs(solution.vm[1] - oracle.vm[1]) <= 1e-6);
        CHECK(std::abs(solution.va[0] - oracle.va[0]) <= 1e-6);
        CHECK(std::abs(solution.va[1] - oracle.va[1]) <= 1e-6);
    }
}

TEST_CASE("angle pinning only when no pmu angle is present") {
    CaseData data = gt::two_bus_case();
    const StateVector truth = solve_power_flow(data.system, nominal_power_flow_spec(data));

    SUBCASE("no absolute reference: reference angle pinned to zero") {
        MeasurementSet ms;
        ms.items = {
            meas(MeasurementKind::voltage_magnitude, 0, {}, 0.0, 1e-3),
            meas(MeasurementKind::voltage_magnitude, 1, {}, 0.0, 1e-3),
            meas(MeasurementKind::active_flow, 0, BranchSide::from_side, 0.0, 1e-3),
            meas(MeasurementKind::reactive_flow, 0, BranchSide::from_side, 0.0, 1e-3),
        };
        for (Measurement& m : ms.items) m.value = eval_h(data.system, truth, m);
        const auto [solution, report] = gn_solve(data.system, ms);
        CHECK(report.converged);
        CHECK(solution.va[0] == 0.0);
        // Relative angle reproduced.
        CHECK(solution.va[1] - solution.va[0] ==
              doctest::Approx(truth.va[1] - truth.va[0]).epsilon(1e-8));
    }

    SUBCASE("pmu angle present: absolute angles match without offset") {
        MeasurementSet ms;
        ms.items = {
            meas(MeasurementKind::pmu_voltage_angle, 1, {}, 0.0, 1e-5),
            meas(MeasurementKind::voltage_magnitude, 0, {}, 0.0, 1e-3),
            meas(MeasurementKind::voltage_magnitude, 1, {}, 0.0, 1e-3),
            meas(MeasurementKind::active_flow, 0, BranchSide::from_side, 0.0, 1e-3),
            meas(MeasurementKind::reactive_flow, 0, BranchSide::from_side, 0.0, 1e-3),
        };
        for (Measurement& m : ms.items) m.value = eval_h(data.system, truth, m);
        const auto [solution, report] = gn_solve(data.system, ms);
        CHECK(report.converged);
        CHECK((solution.va - truth.va).lpNorm<Eigen::Infinity>() <= 1e-8);
    }
}

TEST_CASE("normal system: single voltage measurement") {
    CaseData data = gt::two_bus_case();
    MeasurementSet ms;
    ms.items = {meas(MeasurementKind::voltage_magnitude, 1, {}, 1.0, 0.5)};
    const StackedMeasurements stacked = stack(data.system, StateVector::flat(2), ms);
    Eigen::SparseMatrix<double> gain;
    Eigen::VectorXd rhs;
    const Eigen::VectorXd residual = Eigen::VectorXd::Zero(1);
    build_normal_system(stacked.jacobian, stacked.weights, residual, gain, rhs);
    CHECK(gain.rows() == 4);
    CHECK(gain.coeff(1, 1) == doctest::Approx(2.0)); // 1/v
    CHECK(Eigen::MatrixXd(gain).cwiseAbs().sum() == doctest::Approx(2.0));
}

TEST_CASE("normal system equals the dense oracle and stays symmetric") {
    const CaseData data = load_matpower_file(gt::source_path("data/case30.m"));
    const PowerSystem& sys = data.system;
    Rng rng(3);
    const StateVector x = gt::random_state(sys.bus_count(), rng);
    MeasurementSet ms;
    for (int i = 0; i < 40; ++i) {
        const int branch = static_cast<int>(rng.uniform_index(sys.branch_count()));
        const int bus = static_cast<int>(rng.uniform_index(sys.bus_count()));
        const auto probes = gt::all_kind_probes(sys, bus, branch, BranchSide::from_side);
        ms.items.push_back(probes[rng.uniform_index(probes.size())]);
        ms.items.back().value = rng.uniform(-1.0, 1.0);
        ms.items.back().variance = rng.uniform(1e-5, 1e-1);
    }
    const StackedMeasurements stacked = stack(sys, x, ms);
    Eigen::VectorXd z(ms.size());
    for (int i = 0; i < ms.size(); ++i) z[i] = ms.items[i].value;
    const Eigen::VectorXd residual = z - stacked.h;
    Eigen::SparseMatrix<double> gain;
    Eigen::VectorXd rhs;
    build_normal_system(stacked.jacobian, stacked.weights, residual, gain, rhs);

    const Eigen::MatrixXd dense_j(stacked.jacobian);
    const Eigen::MatrixXd dense_gain =
        dense_j.transpose() * stacked.weights.asDiagonal() * dense_j;
    const double gain_scale = dense_gain.cwiseAbs().maxCoeff();
    CHECK((Eigen::MatrixXd(gain) - dense_gain).cwiseAbs().maxCoeff() <= 1e-12 * gain_scale);
    const Eigen::VectorXd dense_rhs =
        dense_j.transpose() * (stacked.weights.asDiagonal() * residual);
    CHECK((rhs - dense_rhs).cwiseAbs().maxCoeff() <=
          1e-12 * std::max(1.0, dense_rhs.cwiseAbs().maxCoeff()));
    CHECK((Eigen::MatrixXd(gain) - Eigen::MatrixXd(gain).transpose()).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("condition estimates") {
    Eigen::SparseMatrix<double> identity(4, 4);
    identity.setIdentity();
    CHECK(condition_estimate(identity) == doctest::Approx(1.0).epsilon(1e-6));

    Eigen::SparseMatrix<double> skewed(2, 2);
    skewed.insert(0, 0) = 1.0;
    skewed.insert(1, 1) = 1e-6;
    CHECK(condition_estimate(skewed) == doctest::Approx(1e6).epsilon(0.1));
}

TEST_CASE("IEEE 30 mixed-variance condition number is reported, not asserted") {
    const CaseData data = load_matpower_file(gt::source_path("data/case30.m"));
    const PowerSystem& sys = data.system;
    const StateVector truth = solve_power_flow(sys, nominal_power_flow_spec(data));
    MeasurementSet ms;
    // Phasor pair at every bus plus flows: variances 1e-5 vs 1e-1.
    for (int bus = 0; bus < sys.bus_count(); ++bus) {
        ms.items.push_back(meas(MeasurementKind::pmu_voltage_magnitude, bus, {}, 0.0, 1e-5));
        ms.items.push_back(meas(MeasurementKind::pmu_voltage_angle, bus, {}, 0.0, 1e-5));
        ms.items.push_back(meas(MeasurementKind::active_injection, bus, {}, 0.0, 1e-1));
        ms.items.push_back(meas(MeasurementKind::reactive_injection, bus, {}, 0.0, 1e-1));
    }
    for (Measurement& m : ms.items) m.value = eval_h(sys, truth, m);
    const auto [solution, report] = gn_solve(sys, ms);
    CHECK(report.converged);
    CHECK(report.condition_estimate > 1.0);
    MESSAGE("IEEE 30 gain condition estimate: ", report.condition_estimate);
}

TEST_CASE("unobservable set raises UnobservableError") {
    CaseData data = gt::two_bus_case();
    MeasurementSet ms;
    // One voltage magnitude cannot determine four state variables.
    ms.items = {meas(MeasurementKind::voltage_magnitude, 0, {}, 1.0, 1e-3)};
    CHECK_THROWS_AS(gn_solve(data.system, ms), UnobservableError);
}

TEST_CASE("empty measurement set is rejected") {
    CaseData data = gt::two_bus_case();
    CHECK_THROWS_AS(gn_solve(data.system, MeasurementSet{}), ValidationError);
}

TEST_CASE("solution dump carries per-bus rows and the report block") {
    StateVector x = StateVector::flat(2);
    x.vm << 1.01, 0.97;
    GnReport report;
    report.converged = true;
    report.iterations = 4;
    const std::string text = serialize_solution(x, report);
    CHECK(text.find("bus,V,theta") != std::string::npos);
    CHECK(text.find("\"converged\": true") != std::string::npos);
    CHECK(text.find("\"iterations\": 4") != std::string::npos);
}
