#include "gridnse/errors.hpp"
#include "gridnse/matpower.hpp"
#include "gridnse/power_flow.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace gridnse;
namespace gt = gridnse::testing;

TEST_CASE("zero injections and unit setpoints give the flat solution") {
    CaseData data = gt::two_bus_case();
    data.loads.clear();
    data.system.branches[0].b_shunt_half = 0.0;
    data.system.finalize();
    const PowerFlowSpec spec = nominal_power_flow_spec(data);
    const StateVector x = solve_power_flow(data.system, spec);
    CHECK(x.vm[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(x.vm[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(x.va[0] == 0.0);
    CHECK(x.va[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(mismatch(data.system, spec, StateVector::flat(2)).lpNorm<Eigen::Infinity>() ==
          doctest::Approx(0.0));
}

TEST_CASE("two-bus load case matches the frozen independent solution") {
    CaseData data = gt::two_bus_case();
    data.system.branches[0].b_shunt_half = 0.0;
    data.system.finalize();
    // Load P=0.5, Q=0.2 at bus 1 (injection -0.5, -0.2), slack at 1.0 pu.
    const PowerFlowSpec spec = nominal_power_flow_spec(data);
    const StateVector x = solve_power_flow(data.system, spec);
    // Frozen from the independent 2-variable Newton oracle script.
    CHECK(x.vm[1] == doctest::Approx(0.9733779091082494).epsilon(1e-10));
    CHECK(x.va[1] == doctest::Approx(-0.048843983616402915).epsilon(1e-10));

    // Brute-force grid + shrinking-neighbourhood refinement on the mismatch
    // norm, independent of the Newton path.
    double best_v = 0.0, best_a = 0.0, best_norm = 1e9;
    for (int iv = 0; iv <= 40; ++iv) {
        for (int ia = 0; ia <= 40; ++ia) {
            StateVector probe = StateVector::flat(2);
            probe.vm[1] = 0.9 + 0.005 * iv;
            probe.va[1] = -0.1 + 0.005 * ia;
            const double norm = mismatch(data.system, spec, probe).lpNorm<Eigen::Infinity>();
            if (norm < best_norm) {
                best_norm = norm;
                best_v = probe.vm[1];
                best_a = probe.va[1];
            }
        }
    }
    double span = 0.005;
    for (int refine = 0; refine < 40; ++refine) {
        span *= 0.6;
        for (int dv = -1; dv <= 1; ++dv) {
            for (int da = -1; da <= 1; ++da) {
                StateVector probe = StateVector::flat(2);
                probe.vm[1] = best_v + span * dv;
                probe.va[1] = best_a + span * da;
                const double norm = mismatch(data.system, spec, probe).lpNorm<Eigen::Infinity>();
                if (norm < best_norm) {
                    best_norm = norm;
                    best_v = probe.vm[1];
                    best_a = probe.va[1];
                }
            }
        }
    }
    CHECK(x.vm[1] == doctest::Approx(best_v).epsilon(1e-7));
    CHECK(x.va[1] == doctest::Approx(best_a).epsilon(1e-6));
}

TEST_CASE("IEEE 30 nominal loading converges quickly and consistently") {
    const CaseData data = load_matpower_file(gt::source_path("data/case30.m"));
    const PowerFlowSpec spec = nominal_power_flow_spec(data);
    const StateVector x = solve_power_flow(data.system, spec, 1e-8, 10);
    CHECK(x.va[data.system.reference_bus()] == 0.0);
    CHECK(mismatch(data.system, spec, x).lpNorm<Eigen::Infinity>() <= 1e-8);
    // Physically plausible transmission solution.
    CHECK(x.vm.minCoeff() > 0.9);
    CHECK(x.vm.maxCoeff() < 1.12);
    CHECK(x.va.cwiseAbs().maxCoeff() < 0.6);

    // Cross-check against injection measurement functions: the solved state
    // reproduces the scheduled injections at load buses.
    for (int bus = 0; bus < data.system.bus_count(); ++bus) {
        if (data.system.buses[bus].kind != BusKind::load) continue;
        Measurement p;
        p.kind = MeasurementKind::active_injection;
        p.bus = bus;
        CHECK(eval_h(data.system, x, p) == doctest::Approx(spec.p_injection[bus]).epsilon(1e-7));
    }
}

TEST_CASE("IEEE 118 nominal loading converges") {
    const CaseData data = load_matpower_file(gt::source_path("data/case118.m"));
    const PowerFlowSpec spec = nominal_power_flow_spec(data);
    const StateVector x = solve_power_flow(data.system, spec, 1e-8, 15);
    CHECK(mismatch(data.system, spec, x).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK(x.vm.minCoeff() > 0.85);
    CHECK(x.vm.maxCoeff() < 1.12);
}

TEST_CASE("determinism: identical inputs give bit-identical states") {
    const CaseData data = load_matpower_file(gt::source_path("data/case30.m"));
    const PowerFlowSpec spec = nominal_power_flow_spec(data);
    const StateVector a = solve_power_flow(data.system, spec);
    const StateVector b = solve_power_flow(data.system, spec);
    CHECK((a.vm - b.vm).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((a.va - b.va).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("impossible loading reports divergence") {
    CaseData data = gt::two_bus_case();
    data.loads[0].p = 50.0; // far beyond the line's transfer capability
    data.loads[0].q = 20.0;
    CHECK_THROWS_AS(solve_power_flow(data.system, nominal_power_flow_spec(data), 1e-8, 12),
                    DivergenceError);
}
