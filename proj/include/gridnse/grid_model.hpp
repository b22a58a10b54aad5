#pragma once

#include <Eigen/Dense>
#include <complex>
#include <string>
#include <vector>

namespace gridnse {

enum class BusKind { reference, generation, load };

struct Bus {
    int id = 0;
    BusKind kind = BusKind::load;
    double shunt_conductance = 0.0; // p.u.
    double shunt_susceptance = 0.0; // p.u.
};

/// Two-port pi-model branch. Series admittance y = g + jb, half of the total
/// shunt admittance j*b_shunt_half on each side, off-nominal tap magnitude
/// `tap` at the from side and phase shift `shift` in radians.
struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double g = 0.0;            // series conductance, p.u.
    double b = 0.0;            // series susceptance, p.u.
    double b_shunt_half = 0.0; // half total charging susceptance, p.u.
    double tap = 1.0;          // > 0
    double shift = 0.0;        // radians
};

enum class BranchSide { from_side, to_side };

struct IncidentBranch {
    int branch = 0;
    BranchSide side = BranchSide::from_side;
};

struct PowerSystem {
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    double base_mva = 100.0;

    int bus_count() const { return static_cast<int>(buses.size()); }
    int branch_count() const { return static_cast<int>(branches.size()); }
    int reference_bus() const;

    /// Branches touching `bus` with orientation, ascending by branch id.
    const std::vector<IncidentBranch>& incident(int bus) const;

    /// Electrical bus adjacency (unique neighbor ids, ascending).
    const std::vector<std::vector<int>>& bus_adjacency() const;

    /// Validates invariants and builds the incidence index. Throws
    /// ValidationError; emits a warning line to stderr when disconnected.
    void finalize();

private:
    std::vector<std::vector<IncidentBranch>> incidence_;
    std::vector<std::vector<int>> adjacency_;
};

/// Polar state: voltage magnitudes (p.u.) and angles (radians), one per bus.
struct StateVector {
    Eigen::VectorXd vm;
    Eigen::VectorXd va;

    int size() const { return static_cast<int>(vm.size()); }
    static StateVector flat(int n) {
        StateVector x;
        x.vm = Eigen::VectorXd::Ones(n);
        x.va = Eigen::VectorXd::Zero(n);
        return x;
    }
};

/// 2x2 complex admittance block of Branch. Row/col 1 is the from side:
///   [I_from; I_to] = [a11 a12; a21 a22] [V_from; V_to]
struct TwoPort {
    std::complex<double> a11, a12, a21, a22;
};

TwoPort branch_two_port(const Branch& br);

inline const std::vector<IncidentBranch>& incident_branches(const PowerSystem& sys, int bus) {
    return sys.incident(bus);
}

/// Nominal operating data carried by a case file next to the network model.
struct LoadEntry {
    int bus = 0;
    double p = 0.0; // consumed active power, p.u.
    double q = 0.0;
};

struct GeneratorEntry {
    int bus = 0;
    double p = 0.0;          // scheduled active injection, p.u.
    double v_setpoint = 1.0; // p.u.
};

struct CaseData {
    PowerSystem system;
    std::vector<LoadEntry> loads;
    std::vector<GeneratorEntry> generators;
};

/// Parses the line-oriented case format (sections [system], [buses],
/// [branches], [loads], [generators]; `#` comments). Throws ParseError with
/// the offending line number, or ValidationError for broken invariants.
CaseData parse_case_data(const std::string& text);

inline PowerSystem parse_case(const std::string& text) { return parse_case_data(text).system; }

/// Round-trips through parse_case_data bit-exactly.
std::string serialize_case(const CaseData& data);

CaseData load_case_file(const std::string& path);
void save_case_file(const CaseData& data, const std::string& path);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

} // namespace gridnse
