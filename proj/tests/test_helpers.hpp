#pragma once

#include "gridnse/grid_model.hpp"
#include "gridnse/measurement.hpp"
#include "gridnse/rng.hpp"

#include <complex>
#include <string>

namespace gridnse::testing {

inline std::string source_path(const std::string& relative) {
    return std::string(GRIDNSE_SOURCE_DIR) + "/" + relative;
}

inline CaseData two_bus_case() {
    // One line: g=1, b=-10, bsi=0.01, tau=1, phi=0.
    const char* text =
        "[system]\n"
        "base_mva 100\n"
        "[buses]\n"
        "0 reference 0 0\n"
        "1 load 0 0\n"
        "[branches]\n"
        "0 1 1.0 -10.0 0.01 1.0 0.0\n"
        "[loads]\n"
        "1 0.5 0.2\n"
        "[generators]\n"
        "0 0 1.0\n";
    return parse_case_data(text);
}

// Independent complex-arithmetic oracle for measurement functions. Written
// against the branch block definition directly; deliberately shares no code
// with eval_h (different structure: explicit admittance recomputation here).
struct BranchOracle {
    std::complex<double> i_from, i_to, s_from, s_to;
};

inline BranchOracle oracle_branch(const Branch& br, const StateVector& x) {
    using C = std::complex<double>;
    const C y(br.g, br.b);
    const C ys(0.0, br.b_shunt_half);
    const C alpha = std::polar(1.0 / br.tap, -br.shift);
    const C vf = std::polar(x.vm[br.from_bus], x.va[br.from_bus]);
    const C vt = std::polar(x.vm[br.to_bus], x.va[br.to_bus]);
    BranchOracle o;
    o.i_from = (y + ys) / (br.tap * br.tap) * vf - std::conj(alpha) * y * vt;
    o.i_to = -alpha * y * vf + (y + ys) * vt;
    o.s_from = vf * std::conj(o.i_from);
    o.s_to = vt * std::conj(o.i_to);
    return o;
}

inline double oracle_eval(const PowerSystem& sys, const StateVector& x, const Measurement& m) {
    using C = std::complex<double>;
    switch (m.kind) {
        case MeasurementKind::voltage_magnitude:
        case MeasurementKind::pmu_voltage_magnitude: return x.vm[m.bus];
        case MeasurementKind::pmu_voltage_angle: return x.va[m.bus];
        case MeasurementKind::active_flow:
        case MeasurementKind::reactive_flow: {
            const BranchOracle o = oracle_branch(sys.branches[m.branch], x);
            const C s = m.side == BranchSide::from_side ? o.s_from : o.s_to;
            return m.kind == MeasurementKind::active_flow ? s.real() : s.imag();
        }
        case MeasurementKind::current_magnitude:
        case MeasurementKind::pmu_current_magnitude: {
            const BranchOracle o = oracle_branch(sys.branches[m.branch], x);
            return std::abs(m.side == BranchSide::from_side ? o.i_from : o.i_to);
        }
        case MeasurementKind::pmu_current_angle: {
            const BranchOracle o = oracle_branch(sys.branches[m.branch], x);
            const C i = m.side == BranchSide::from_side ? o.i_from : o.i_to;
            if (std::abs(i) < 1e-8) return 0.0;
            return std::arg(i);
        }
        case MeasurementKind::active_injection:
        case MeasurementKind::reactive_injection: {
            C total(0.0, 0.0);
            for (std::size_t bi = 0; bi < sys.branches.size(); ++bi) {
                const Branch& br = sys.branches[bi];
                if (br.from_bus != m.bus && br.to_bus != m.bus) continue;
                const BranchOracle o = oracle_branch(br, x);
                total += br.from_bus == m.bus ? o.i_from : C(0.0, 0.0);
                total += br.to_bus == m.bus ? o.i_to : C(0.0, 0.0);
            }
            const Bus& bus = sys.buses[m.bus];
            const C v = std::polar(x.vm[m.bus], x.va[m.bus]);
            total += C(bus.shunt_conductance, bus.shunt_susceptance) * v;
            const C s = v * std::conj(total);
            return m.kind == MeasurementKind::active_injection ? s.real() : s.imag();
        }
    }
    return 0.0;
}

inline StateVector random_state(int n, Rng& rng, double vm_spread = 0.1, double va_spread = 0.3) {
    StateVector x = StateVector::flat(n);
    for (int bus = 0; bus < n; ++bus) {
        x.vm[bus] = 1.0 + rng.uniform(-vm_spread, vm_spread);
        x.va[bus] = rng.uniform(-va_spread, va_spread);
    }
    return x;
}

// All measurement kinds instantiated over a system (one per location class).
inline std::vector<Measurement> all_kind_probes(const PowerSystem&, int bus, int branch,
                                                BranchSide side) {
    std::vector<Measurement> probes;
    for (int k = 0; k < kMeasurementKindCount; ++k) {
        Measurement m;
        m.kind = static_cast<MeasurementKind>(k);
        m.variance = 1e-3;
        if (m.on_branch()) {
            m.branch = branch;
            m.side = side;
        } else {
            m.bus = bus;
        }
        probes.push_back(m);
    }
    return probes;
}

} // namespace gridnse::testing
