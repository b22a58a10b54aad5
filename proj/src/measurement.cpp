#include "gridnse/measurement.hpp"

#include "gridnse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <map>
#include <sstream>

// Measurement functions, expanded from the two-port branch block.
//
// With complex bus voltages Vbar_k = V_k e^{j th_k} and the branch block
// [a11 a12; a21 a22], the side currents are
//     Ibar_from = a11 Vbar_i + a12 Vbar_j
//     Ibar_to   = a21 Vbar_i + a22 Vbar_j
// and the complex flow metered at side a is S = Vbar_a conj(Ibar_a), giving
//     P = Re S, Q = Im S, |I| = |Ibar|, th_I = atan2(Im Ibar, Re Ibar).
// A bus injection sums the incident side currents plus the bus shunt
// current (Gs + jBs) Vbar_i before the same S = Vbar conj(I) step.
//
// Partial derivatives follow from
//     d Vbar_k / d V_k  = Vbar_k / V_k
//     d Vbar_k / d th_k = j Vbar_k
// so that for I = sum_k C_k Vbar_k (C_k constant per branch block):
//     dS/dV_k  = [a==k] (Vbar_a/V_a) conj(I) + Vbar_a conj(C_k Vbar_k / V_k)
//     dS/dth_k = [a==k] j Vbar_a conj(I)     - j Vbar_a conj(C_k Vbar_k)
//     d|I|/dx  = Re(conj(I) dI/dx) / |I|
//     d th_I/dx = Im(conj(I) dI/dx) / |I|^2
// P rows take the real part, Q rows the imaginary part.

namespace gridnse {

namespace {

using Complex = std::complex<double>;

constexpr double kCurrentEps = 1e-8;

Complex bus_voltage(const StateVector& x, int bus) {
    return std::polar(x.vm[bus], x.va[bus]);
}

struct BranchCurrent {
    Complex current;  // Ibar at the metered side
    Complex coeff_from, coeff_to; // dIbar/dVbar contributions
};

BranchCurrent side_current(const PowerSystem& sys, const StateVector& x, int branch,
                           BranchSide side) {
    const Branch& br = sys.branches[static_cast<std::size_t>(branch)];
    const TwoPort block = branch_two_port(br);
    const Complex vf = bus_voltage(x, br.from_bus);
    const Complex vt = bus_voltage(x, br.to_bus);
    BranchCurrent out;
    if (side == BranchSide::from_side) {
        out.coeff_from = block.a11;
        out.coeff_to = block.a12;
    } else {
        out.coeff_from = block.a21;
        out.coeff_to = block.a22;
    }
    out.current = out.coeff_from * vf + out.coeff_to * vt;
    return out;
}

int metered_bus(const Branch& br, BranchSide side) {
    return side == BranchSide::from_side ? br.from_bus : br.to_bus;
}

// Injection current leaving bus `bus` into branches and the bus shunt,
// with per-adjacent-bus voltage coefficients (bus itself included).
struct InjectionCurrent {
    Complex current;
    std::map<int, Complex> coeff; // dIbar/dVbar_k by bus k
};

InjectionCurrent injection_current(const PowerSystem& sys, const StateVector& x, int bus) {
    InjectionCurrent out;
    out.current = Complex(0.0, 0.0);
    const Bus& b = sys.buses[static_cast<std::size_t>(bus)];
    const Complex shunt(b.shunt_conductance, b.shunt_susceptance);
    out.coeff[bus] = shunt;
    for (const IncidentBranch& inc : sys.incident(bus)) {
        const Branch& br = sys.branches[static_cast<std::size_t>(inc.branch)];
        const BranchCurrent side = side_current(sys, x, inc.branch, inc.side);
        out.current += side.current;
        out.coeff[br.from_bus] += side.coeff_from;
        out.coeff[br.to_bus] += side.coeff_to;
    }
    out.current += shunt * bus_voltage(x, bus);
    return out;
}

void check_location(const PowerSystem& sys, const Measurement& m) {
    if (m.on_branch()) {
        if (m.branch < 0 || m.branch >= sys.branch_count())
            throw ValidationError("measurement references unknown branch " +
                                  std::to_string(m.branch));
    } else {
        if (m.bus < 0 || m.bus >= sys.bus_count())
            throw ValidationError("measurement references unknown bus " + std::to_string(m.bus));
    }
}

} // namespace

bool is_branch_kind(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::active_flow:
        case MeasurementKind::reactive_flow:
        case MeasurementKind::current_magnitude:
        case MeasurementKind::pmu_current_magnitude:
        case MeasurementKind::pmu_current_angle: return true;
        default: return false;
    }
}

bool is_angle_kind(MeasurementKind kind) {
    return kind == MeasurementKind::pmu_voltage_angle || kind == MeasurementKind::pmu_current_angle;
}

bool is_phasor_kind(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::pmu_voltage_magnitude:
        case MeasurementKind::pmu_voltage_angle:
        case MeasurementKind::pmu_current_magnitude:
        case MeasurementKind::pmu_current_angle: return true;
        default: return false;
    }
}

const char* measurement_kind_name(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::active_flow: return "active_flow";
        case MeasurementKind::reactive_flow: return "reactive_flow";
        case MeasurementKind::active_injection: return "active_injection";
        case MeasurementKind::reactive_injection: return "reactive_injection";
        case MeasurementKind::current_magnitude: return "current_magnitude";
        case MeasurementKind::voltage_magnitude: return "voltage_magnitude";
        case MeasurementKind::pmu_voltage_magnitude: return "pmu_voltage_magnitude";
        case MeasurementKind::pmu_voltage_angle: return "pmu_voltage_angle";
        case MeasurementKind::pmu_current_magnitude: return "pmu_current_magnitude";
        case MeasurementKind::pmu_current_angle: return "pmu_current_angle";
    }
    return "voltage_magnitude";
}

MeasurementKind measurement_kind_from_name(const std::string& name) {
    for (int k = 0; k < kMeasurementKindCount; ++k) {
        const auto kind = static_cast<MeasurementKind>(k);
        if (name == measurement_kind_name(kind)) return kind;
    }
    throw ParseError("unknown measurement kind '" + name + "'");
}

void MeasurementSet::validate(const PowerSystem& sys) const {
    for (const Measurement& m : items) {
        check_location(sys, m);
        if (!(m.variance > 0.0)) throw ValidationError("measurement variance must be positive");
    }
}

double eval_h(const PowerSystem& sys, const StateVector& x, const Measurement& m) {
    check_location(sys, m);
    switch (m.kind) {
        case MeasurementKind::voltage_magnitude:
        case MeasurementKind::pmu_voltage_magnitude: return x.vm[m.bus];
        case MeasurementKind::pmu_voltage_angle: return x.va[m.bus];
        case MeasurementKind::active_flow:
        case MeasurementKind::reactive_flow: {
            const Branch& br = sys.branches[static_cast<std::size_t>(m.branch)];
            const BranchCurrent bc = side_current(sys, x, m.branch, m.side);
            const Complex s = bus_voltage(x, metered_bus(br, m.side)) * std::conj(bc.current);
            return m.kind == MeasurementKind::active_flow ? s.real() : s.imag();
        }
        case MeasurementKind::current_magnitude:
        case MeasurementKind::pmu_current_magnitude:
            return std::abs(side_current(sys, x, m.branch, m.side).current);
        case MeasurementKind::pmu_current_angle: {
            const Complex i = side_current(sys, x, m.branch, m.side).current;
            if (std::abs(i) < kCurrentEps) return 0.0;
            return std::atan2(i.imag(), i.real());
        }
        case MeasurementKind::active_injection:
        case MeasurementKind::reactive_injection: {
            const InjectionCurrent inj = injection_current(sys, x, m.bus);
            const Complex s = bus_voltage(x, m.bus) * std::conj(inj.current);
            return m.kind == MeasurementKind::active_injection ? s.real() : s.imag();
        }
    }
    throw ValidationError("unhandled measurement kind");
}

namespace {

struct RowBuilder {
    int n;
    std::vector<std::pair<int, double>> entries;
    void add_vm(int bus, double value) {
        if (value != 0.0) entries.emplace_back(bus, value);
    }
    void add_va(int bus, double value) {
        if (value != 0.0) entries.emplace_back(n + bus, value);
    }
    JacobianRow finish() {
        std::sort(entries.begin(), entries.end());
        return JacobianRow{std::move(entries)};
    }
};

// Shared scaffolding for d/dV_k and d/dth_k of a complex current with
// constant coefficients: dI/dV_k = C_k Vbar_k / V_k, dI/dth_k = j C_k Vbar_k.
template <typename Fn>
void for_each_partial(const StateVector& x, const std::map<int, Complex>& coeff, Fn&& fn) {
    for (const auto& [bus, c] : coeff) {
        const Complex vbar = bus_voltage(x, bus);
        fn(bus, c * vbar / x.vm[bus], Complex(0.0, 1.0) * c * vbar);
    }
}

} // namespace

JacobianRow eval_jacobian_row(const PowerSystem& sys, const StateVector& x, const Measurement& m) {
    check_location(sys, m);
    RowBuilder row{sys.bus_count(), {}};
    switch (m.kind) {
        case MeasurementKind::voltage_magnitude:
        case MeasurementKind::pmu_voltage_magnitude: row.add_vm(m.bus, 1.0); break;
        case MeasurementKind::pmu_voltage_angle: row.add_va(m.bus, 1.0); break;
        case MeasurementKind::active_flow:
        case MeasurementKind::reactive_flow:
        case MeasurementKind::current_magnitude:
        case MeasurementKind::pmu_current_magnitude:
        case MeasurementKind::pmu_current_angle: {
            const Branch& br = sys.branches[static_cast<std::size_t>(m.branch)];
            const BranchCurrent bc = side_current(sys, x, m.branch, m.side);
            const int a = metered_bus(br, m.side);
            const Complex vbar_a = bus_voltage(x, a);
            std::map<int, Complex> coeff;
            coeff[br.from_bus] += bc.coeff_from;
            coeff[br.to_bus] += bc.coeff_to;
            if (m.kind == MeasurementKind::active_flow || m.kind == MeasurementKind::reactive_flow) {
                const bool active = m.kind == MeasurementKind::active_flow;
                for_each_partial(x, coeff, [&](int bus, Complex di_dvm, Complex di_dva) {
                    Complex ds_dvm = vbar_a * std::conj(di_dvm);
                    Complex ds_dva = vbar_a * std::conj(di_dva);
                    if (bus == a) {
                        ds_dvm += vbar_a / x.vm[a] * std::conj(bc.current);
                        ds_dva += Complex(0.0, 1.0) * vbar_a * std::conj(bc.current);
                    }
                    row.add_vm(bus, active ? ds_dvm.real() : ds_dvm.imag());
                    row.add_va(bus, active ? ds_dva.real() : ds_dva.imag());
                });
            } else {
                const double mag = std::abs(bc.current);
                if (m.kind == MeasurementKind::pmu_current_angle && mag < kCurrentEps)
                    break; // zeroed row, matching the zeroed h
                const double denom_mag = std::max(mag, kCurrentEps);
                const bool magnitude = m.kind != MeasurementKind::pmu_current_angle;
                const Complex conj_i = std::conj(bc.current);
                for_each_partial(x, coeff, [&](int bus, Complex di_dvm, Complex di_dva) {
                    if (magnitude) {
                        row.add_vm(bus, (conj_i * di_dvm).real() / denom_mag);
                        row.add_va(bus, (conj_i * di_dva).real() / denom_mag);
                    } else {
                        row.add_vm(bus, (conj_i * di_dvm).imag() / (denom_mag * denom_mag));
                        row.add_va(bus, (conj_i * di_dva).imag() / (denom_mag * denom_mag));
                    }
                });
            }
            break;
        }
        case MeasurementKind::active_injection:
        case MeasurementKind::reactive_injection: {
            const InjectionCurrent inj = injection_current(sys, x, m.bus);
            const Complex vbar_i = bus_voltage(x, m.bus);
            const bool active = m.kind == MeasurementKind::active_injection;
            for_each_partial(x, inj.coeff, [&](int bus, Complex di_dvm, Complex di_dva) {
                Complex ds_dvm = vbar_i * std::conj(di_dvm);
                Complex ds_dva = vbar_i * std::conj(di_dva);
                if (bus == m.bus) {
                    ds_dvm += vbar_i / x.vm[m.bus] * std::conj(inj.current);
                    ds_dva += Complex(0.0, 1.0) * vbar_i * std::conj(inj.current);
                }
                row.add_vm(bus, active ? ds_dvm.real() : ds_dvm.imag());
                row.add_va(bus, active ? ds_dva.real() : ds_dva.imag());
            });
            break;
        }
    }
    return row.finish();
}

StackedMeasurements stack(const PowerSystem& sys, const StateVector& x, const MeasurementSet& ms) {
    if (ms.items.empty()) throw ValidationError("cannot stack an empty measurement set");
    const int m = ms.size();
    const int n2 = 2 * sys.bus_count();
    StackedMeasurements out;
    out.h.resize(m);
    out.weights.resize(m);
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(m) * 8);
    for (int i = 0; i < m; ++i) {
        const Measurement& meas = ms.items[static_cast<std::size_t>(i)];
        out.h[i] = eval_h(sys, x, meas);
        out.weights[i] = 1.0 / meas.variance;
        for (const auto& [col, value] : eval_jacobian_row(sys, x, meas).entries)
            triplets.emplace_back(i, col, value);
    }
    out.jacobian.resize(m, n2);
    out.jacobian.setFromTriplets(triplets.begin(), triplets.end());
    return out;
}

double redundancy(const MeasurementSet& ms, const PowerSystem& sys) {
    if (ms.items.empty()) return 0.0;
    return static_cast<double>(ms.size()) / (2.0 * sys.bus_count());
}

namespace {

const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::clean: return "clean";
        case Provenance::noisy: return "noisy";
        case Provenance::attacked: return "attacked";
    }
    return "clean";
}

Provenance provenance_from_name(const std::string& name) {
    if (name == "clean") return Provenance::clean;
    if (name == "noisy") return Provenance::noisy;
    if (name == "attacked") return Provenance::attacked;
    throw ParseError("unknown provenance '" + name + "'");
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Branch locations serialize as "from-to" with an optional "#k" choosing the
// k-th parallel branch between the pair.
std::string branch_location(const PowerSystem& sys, int branch) {
    const Branch& br = sys.branches[static_cast<std::size_t>(branch)];
    int ordinal = 0;
    for (int i = 0; i < branch; ++i) {
        const Branch& other = sys.branches[static_cast<std::size_t>(i)];
        if (other.from_bus == br.from_bus && other.to_bus == br.to_bus) ++ordinal;
    }
    std::string text = std::to_string(br.from_bus) + "-" + std::to_string(br.to_bus);
    if (ordinal > 0) text += "#" + std::to_string(ordinal);
    return text;
}

int resolve_branch(const PowerSystem& sys, const std::string& loc, int line_no) {
    const std::size_t dash = loc.find('-');
    if (dash == std::string::npos) throw ParseError("expected from-to branch location", line_no);
    int ordinal = 0;
    std::string rest = loc.substr(dash + 1);
    const std::size_t hash = rest.find('#');
    if (hash != std::string::npos) {
        ordinal = std::stoi(rest.substr(hash + 1));
        rest = rest.substr(0, hash);
    }
    const int from = std::stoi(loc.substr(0, dash));
    const int to = std::stoi(rest);
    int seen = 0;
    for (int i = 0; i < sys.branch_count(); ++i) {
        const Branch& br = sys.branches[static_cast<std::size_t>(i)];
        if (br.from_bus == from && br.to_bus == to) {
            if (seen == ordinal) return i;
            ++seen;
        }
    }
    throw ParseError("no branch matches location '" + loc + "'", line_no);
}

} // namespace

std::string serialize_measurements(const MeasurementSet& ms, const PowerSystem& sys) {
    std::ostringstream out;
    out << "kind,location,direction,value,variance,provenance\n";
    for (const Measurement& m : ms.items) {
        out << measurement_kind_name(m.kind) << ",";
        if (m.on_branch())
            out << branch_location(sys, m.branch) << ","
                << (m.side == BranchSide::from_side ? "from" : "to");
        else
            out << m.bus << ",";
        out << "," << format_real(m.value) << "," << format_real(m.variance) << ","
            << provenance_name(m.provenance) << "\n";
    }
    return out.str();
}

MeasurementSet parse_measurements(const std::string& csv, const PowerSystem& sys) {
    MeasurementSet ms;
    std::istringstream in(csv);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line_no == 1) continue; // header
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() < 5) throw ParseError("measurement row needs 6 fields", line_no);
        if (fields.size() == 5) fields.push_back("clean");
        Measurement m;
        m.kind = measurement_kind_from_name(fields[0]);
        if (m.on_branch()) {
            m.branch = resolve_branch(sys, fields[1], line_no);
            if (fields[2] == "from")
                m.side = BranchSide::from_side;
            else if (fields[2] == "to")
                m.side = BranchSide::to_side;
            else
                throw ParseError("branch measurement needs direction from|to", line_no);
        } else {
            m.bus = std::stoi(fields[1]);
        }
        m.value = std::stod(fields[3]);
        m.variance = std::stod(fields[4]);
        m.provenance = provenance_from_name(fields[5]);
        ms.items.push_back(m);
    }
    ms.validate(sys);
    return ms;
}

} // namespace gridnse
