#include "gridnse/power_flow.hpp"

#include "gridnse/errors.hpp"
#include "gridnse/measurement.hpp"

#include <Eigen/LU>
#include <cmath>
#include <vector>

namespace gridnse {

PowerFlowSpec nominal_power_flow_spec(const CaseData& data) {
    const int n = data.system.bus_count();
    PowerFlowSpec spec;
    spec.p_injection = Eigen::VectorXd::Zero(n);
    spec.q_injection = Eigen::VectorXd::Zero(n);
    spec.v_setpoint = Eigen::VectorXd::Ones(n);
    for (const LoadEntry& load : data.loads) {
        spec.p_injection[load.bus] -= load.p;
        spec.q_injection[load.bus] -= load.q;
    }
    for (const GeneratorEntry& gen : data.generators) {
        spec.p_injection[gen.bus] += gen.p;
        spec.v_setpoint[gen.bus] = gen.v_setpoint;
    }
    return spec;
}

namespace {

Measurement injection_probe(MeasurementKind kind, int bus) {
    Measurement m;
    m.kind = kind;
    m.bus = bus;
    return m;
}

} // namespace

Eigen::VectorXd mismatch(const PowerSystem& sys, const PowerFlowSpec& spec, const StateVector& x) {
    const int n = sys.bus_count();
    const int ref = sys.reference_bus();
    std::vector<double> residuals;
    residuals.reserve(static_cast<std::size_t>(2 * n));
    for (int bus = 0; bus < n; ++bus) {
        if (bus == ref) continue;
        residuals.push_back(eval_h(sys, x, injection_probe(MeasurementKind::active_injection, bus)) -
                            spec.p_injection[bus]);
    }
    for (int bus = 0; bus < n; ++bus) {
        if (sys.buses[static_cast<std::size_t>(bus)].kind != BusKind::load) continue;
        residuals.push_back(
            eval_h(sys, x, injection_probe(MeasurementKind::reactive_injection, bus)) -
            spec.q_injection[bus]);
    }
    return Eigen::Map<Eigen::VectorXd>(residuals.data(), static_cast<Eigen::Index>(residuals.size()));
}

StateVector solve_power_flow(const PowerSystem& sys, const PowerFlowSpec& spec, double tol,
                             int max_iter) {
    if (!(tol > 0.0)) throw ValidationError("power flow tolerance must be positive");
    if (max_iter < 1) throw ValidationError("power flow needs max_iter >= 1");
    const int n = sys.bus_count();
    const int ref = sys.reference_bus();

    // Unknown layout: th for every non-reference bus, then V for load buses.
    std::vector<int> angle_unknowns, magnitude_unknowns;
    for (int bus = 0; bus < n; ++bus) {
        if (bus != ref) angle_unknowns.push_back(bus);
        if (sys.buses[static_cast<std::size_t>(bus)].kind == BusKind::load)
            magnitude_unknowns.push_back(bus);
    }
    const int unknowns = static_cast<int>(angle_unknowns.size() + magnitude_unknowns.size());

    StateVector x = StateVector::flat(n);
    for (int bus = 0; bus < n; ++bus)
        if (sys.buses[static_cast<std::size_t>(bus)].kind != BusKind::load)
            x.vm[bus] = spec.v_setpoint[bus];

    // Column index in the reduced Jacobian for each state coordinate.
    std::vector<int> column_of(static_cast<std::size_t>(2 * n), -1);
    for (std::size_t i = 0; i < angle_unknowns.size(); ++i)
        column_of[static_cast<std::size_t>(n + angle_unknowns[i])] = static_cast<int>(i);
    for (std::size_t i = 0; i < magnitude_unknowns.size(); ++i)
        column_of[static_cast<std::size_t>(magnitude_unknowns[i])] =
            static_cast<int>(angle_unknowns.size() + i);

    double norm = 0.0;
    for (int iter = 0; iter < max_iter; ++iter) {
        const Eigen::VectorXd f = mismatch(sys, spec, x);
        norm = f.size() > 0 ? f.lpNorm<Eigen::Infinity>() : 0.0;
        if (norm <= tol) return x;

        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(f.size(), unknowns);
        int row = 0;
        auto fill_row = [&](MeasurementKind kind, int bus) {
            for (const auto& [col, value] :
                 eval_jacobian_row(sys, x, injection_probe(kind, bus)).entries) {
                const int reduced = column_of[static_cast<std::size_t>(col)];
                if (reduced >= 0) jac(row, reduced) = value;
            }
            ++row;
        };
        for (int bus : angle_unknowns) fill_row(MeasurementKind::active_injection, bus);
        for (int bus : magnitude_unknowns) fill_row(MeasurementKind::reactive_injection, bus);

        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
        if (!lu.isInvertible())
            throw ValidationError("singular power flow Jacobian at iteration " +
                                  std::to_string(iter));
        const Eigen::VectorXd step = lu.solve(-f);
        for (std::size_t i = 0; i < angle_unknowns.size(); ++i)
            x.va[angle_unknowns[i]] += step[static_cast<Eigen::Index>(i)];
        for (std::size_t i = 0; i < magnitude_unknowns.size(); ++i)
            x.vm[magnitude_unknowns[i]] += step[static_cast<Eigen::Index>(angle_unknowns.size() + i)];
        if (!step.allFinite()) throw DivergenceError("power flow produced non-finite step", norm);
    }
    const double final_norm = mismatch(sys, spec, x).lpNorm<Eigen::Infinity>();
    if (final_norm <= tol) return x;
    throw DivergenceError("power flow did not converge: mismatch " + std::to_string(final_norm),
                          final_norm);
}

} // namespace gridnse
