#include "gridnse/grid_model.hpp"

#include "gridnse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace gridnse {

double wrap_angle(double a) {
    const double two_pi = 6.283185307179586476925286766559;
    a = std::fmod(a, two_pi);
    if (a <= -3.14159265358979323846)
        a += two_pi;
    else if (a > 3.14159265358979323846)
        a -= two_pi;
    return a;
}

int PowerSystem::reference_bus() const {
    for (const Bus& bus : buses)
        if (bus.kind == BusKind::reference) return bus.id;
    throw ValidationError("power system has no reference bus");
}

const std::vector<IncidentBranch>& PowerSystem::incident(int bus) const {
    if (bus < 0 || bus >= bus_count())
        throw ValidationError("unknown bus id " + std::to_string(bus));
    return incidence_[static_cast<std::size_t>(bus)];
}

const std::vector<std::vector<int>>& PowerSystem::bus_adjacency() const { return adjacency_; }

void PowerSystem::finalize() {
    const int n = bus_count();
    if (n == 0) throw ValidationError("power system has no buses");
    for (int i = 0; i < n; ++i) {
        if (buses[static_cast<std::size_t>(i)].id != i)
            throw ValidationError("bus ids must be contiguous 0..n-1; slot " + std::to_string(i) +
                                  " holds id " + std::to_string(buses[static_cast<std::size_t>(i)].id));
    }
    int reference_count = 0;
    for (const Bus& bus : buses) reference_count += bus.kind == BusKind::reference ? 1 : 0;
    if (reference_count == 0) {
        // Promote the lowest-id generation bus when the file marks none.
        for (Bus& bus : buses) {
            if (bus.kind == BusKind::generation) {
                bus.kind = BusKind::reference;
                reference_count = 1;
                break;
            }
        }
    }
    if (reference_count != 1)
        throw ValidationError("expected exactly one reference bus, found " +
                              std::to_string(reference_count));

    incidence_.assign(static_cast<std::size_t>(n), {});
    adjacency_.assign(static_cast<std::size_t>(n), {});
    for (int bi = 0; bi < branch_count(); ++bi) {
        const Branch& br = branches[static_cast<std::size_t>(bi)];
        if (br.from_bus < 0 || br.from_bus >= n || br.to_bus < 0 || br.to_bus >= n)
            throw ValidationError("branch " + std::to_string(bi) + " references unknown bus");
        if (br.from_bus == br.to_bus)
            throw ValidationError("branch " + std::to_string(bi) + " is a self loop");
        if (!(br.tap > 0.0))
            throw ValidationError("branch " + std::to_string(bi) + " has non-positive tap");
        if (br.g == 0.0 && br.b == 0.0)
            throw ValidationError("branch " + std::to_string(bi) + " has zero series admittance");
        incidence_[static_cast<std::size_t>(br.from_bus)].push_back({bi, BranchSide::from_side});
        incidence_[static_cast<std::size_t>(br.to_bus)].push_back({bi, BranchSide::to_side});
        adjacency_[static_cast<std::size_t>(br.from_bus)].push_back(br.to_bus);
        adjacency_[static_cast<std::size_t>(br.to_bus)].push_back(br.from_bus);
    }
    for (auto& list : incidence_)
        std::sort(list.begin(), list.end(),
                  [](const IncidentBranch& a, const IncidentBranch& b) { return a.branch < b.branch; });
    for (auto& neighbors : adjacency_) {
        std::sort(neighbors.begin(), neighbors.end());
        neighbors.erase(std::unique(neighbors.begin(), neighbors.end()), neighbors.end());
    }

    // Connectivity is a warning, not an error: islanded test fixtures are useful.
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int visited = 0;
    while (!stack.empty()) {
        const int bus = stack.back();
        stack.pop_back();
        ++visited;
        for (int next : adjacency_[static_cast<std::size_t>(bus)]) {
            if (!seen[static_cast<std::size_t>(next)]) {
                seen[static_cast<std::size_t>(next)] = 1;
                stack.push_back(next);
            }
        }
    }
    if (visited != n)
        std::cerr << "warning: power system graph is disconnected (" << visited << "/" << n
                  << " buses reachable from bus 0)\n";
}

TwoPort branch_two_port(const Branch& br) {
    const std::complex<double> y(br.g, br.b);
    const std::complex<double> y_shunt(0.0, br.b_shunt_half);
    const std::complex<double> alpha = std::polar(1.0 / br.tap, -br.shift);
    TwoPort block;
    block.a11 = (y + y_shunt) / (br.tap * br.tap);
    block.a12 = -std::conj(alpha) * y;
    block.a21 = -alpha * y;
    block.a22 = y + y_shunt;
    return block;
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> tokens;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) {
        if (tok[0] == '#') break;
        tokens.push_back(tok);
    }
    return tokens;
}

double parse_real(const std::string& tok, int line_no) {
    try {
        std::size_t used = 0;
        const double value = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return value;
    } catch (const std::exception&) {
        throw ParseError("expected a number, got '" + tok + "'", line_no);
    }
}

int parse_int(const std::string& tok, int line_no) {
    try {
        std::size_t used = 0;
        const int value = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return value;
    } catch (const std::exception&) {
        throw ParseError("expected an integer, got '" + tok + "'", line_no);
    }
}

BusKind parse_kind(const std::string& tok, int line_no) {
    if (tok == "reference") return BusKind::reference;
    if (tok == "generation") return BusKind::generation;
    if (tok == "load") return BusKind::load;
    throw ParseError("unknown bus kind '" + tok + "'", line_no);
}

const char* kind_name(BusKind kind) {
    switch (kind) {
        case BusKind::reference: return "reference";
        case BusKind::generation: return "generation";
        case BusKind::load: return "load";
    }
    return "load";
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

CaseData parse_case_data(const std::string& text) {
    CaseData data;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    std::vector<int> seen_bus_ids;
    while (std::getline(in, line)) {
        ++line_no;
        const auto tokens = tokenize(line);
        if (tokens.empty()) continue;
        if (tokens[0].front() == '[') {
            if (tokens[0].back() != ']')
                throw ParseError("malformed section header '" + tokens[0] + "'", line_no);
            section = tokens[0].substr(1, tokens[0].size() - 2);
            if (section != "system" && section != "buses" && section != "branches" &&
                section != "loads" && section != "generators")
                throw ParseError("unknown section '" + section + "'", line_no);
            continue;
        }
        if (section == "system") {
            if (tokens.size() != 2 || tokens[0] != "base_mva")
                throw ParseError("expected 'base_mva <value>'", line_no);
            data.system.base_mva = parse_real(tokens[1], line_no);
        } else if (section == "buses") {
            if (tokens.size() != 4)
                throw ParseError("bus row needs 4 fields: id kind Gs Bs", line_no);
            Bus bus;
            bus.id = parse_int(tokens[0], line_no);
            bus.kind = parse_kind(tokens[1], line_no);
            bus.shunt_conductance = parse_real(tokens[2], line_no);
            bus.shunt_susceptance = parse_real(tokens[3], line_no);
            if (std::find(seen_bus_ids.begin(), seen_bus_ids.end(), bus.id) != seen_bus_ids.end())
                throw ValidationError("duplicate bus id " + std::to_string(bus.id));
            seen_bus_ids.push_back(bus.id);
            data.system.buses.push_back(bus);
        } else if (section == "branches") {
            if (tokens.size() != 7)
                throw ParseError("branch row needs 7 fields: from to g b bsi tau phi", line_no);
            Branch br;
            br.from_bus = parse_int(tokens[0], line_no);
            br.to_bus = parse_int(tokens[1], line_no);
            br.g = parse_real(tokens[2], line_no);
            br.b = parse_real(tokens[3], line_no);
            br.b_shunt_half = parse_real(tokens[4], line_no);
            br.tap = parse_real(tokens[5], line_no);
            br.shift = parse_real(tokens[6], line_no);
            data.system.branches.push_back(br);
        } else if (section == "loads") {
            if (tokens.size() != 3) throw ParseError("load row needs 3 fields: bus P Q", line_no);
            LoadEntry load;
            load.bus = parse_int(tokens[0], line_no);
            load.p = parse_real(tokens[1], line_no);
            load.q = parse_real(tokens[2], line_no);
            data.loads.push_back(load);
        } else if (section == "generators") {
            if (tokens.size() != 3)
                throw ParseError("generator row needs 3 fields: bus P Vset", line_no);
            GeneratorEntry gen;
            gen.bus = parse_int(tokens[0], line_no);
            gen.p = parse_real(tokens[1], line_no);
            gen.v_setpoint = parse_real(tokens[2], line_no);
            data.generators.push_back(gen);
        } else {
            throw ParseError("data before any section header", line_no);
        }
    }
    // Buses may arrive in any order as long as ids form 0..n-1.
    std::sort(data.system.buses.begin(), data.system.buses.end(),
              [](const Bus& a, const Bus& b) { return a.id < b.id; });
    data.system.finalize();
    const int n = data.system.bus_count();
    for (const LoadEntry& load : data.loads)
        if (load.bus < 0 || load.bus >= n)
            throw ValidationError("load references unknown bus " + std::to_string(load.bus));
    for (const GeneratorEntry& gen : data.generators)
        if (gen.bus < 0 || gen.bus >= n)
            throw ValidationError("generator references unknown bus " + std::to_string(gen.bus));
    return data;
}

std::string serialize_case(const CaseData& data) {
    std::ostringstream out;
    out << "[system]\n";
    out << "base_mva " << format_real(data.system.base_mva) << "\n";
    out << "[buses]\n";
    out << "# id kind Gs Bs\n";
    for (const Bus& bus : data.system.buses)
        out << bus.id << " " << kind_name(bus.kind) << " " << format_real(bus.shunt_conductance)
            << " " << format_real(bus.shunt_susceptance) << "\n";
    out << "[branches]\n";
    out << "# from to g b bsi tau phi\n";
    for (const Branch& br : data.system.branches)
        out << br.from_bus << " " << br.to_bus << " " << format_real(br.g) << " "
            << format_real(br.b) << " " << format_real(br.b_shunt_half) << " "
            << format_real(br.tap) << " " << format_real(br.shift) << "\n";
    if (!data.loads.empty()) {
        out << "[loads]\n";
        out << "# bus P Q\n";
        for (const LoadEntry& load : data.loads)
            out << load.bus << " " << format_real(load.p) << " " << format_real(load.q) << "\n";
    }
    if (!data.generators.empty()) {
        out << "[generators]\n";
        out << "# bus P Vset\n";
        for (const GeneratorEntry& gen : data.generators)
            out << gen.bus << " " << format_real(gen.p) << " " << format_real(gen.v_setpoint)
                << "\n";
    }
    return out.str();
}

CaseData load_case_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open case file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_case_data(buffer.str());
}

void save_case_file(const CaseData& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write case file: " + path);
    out << serialize_case(data);
}

} // namespace gridnse
