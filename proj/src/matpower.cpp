#include "gridnse/matpower.hpp"

#include "gridnse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace gridnse {

namespace {

// Extracts the numeric rows of `mpc.<name> = [ ... ];`.
std::vector<std::vector<double>> read_matrix(const std::string& text, const std::string& name) {
    const std::string key = "mpc." + name;
    std::size_t pos = text.find(key);
    if (pos == std::string::npos) throw ParseError("matpower case lacks " + key);
    pos = text.find('[', pos);
    const std::size_t end = text.find(']', pos);
    if (pos == std::string::npos || end == std::string::npos)
        throw ParseError("unterminated matrix for " + key);
    std::string body = text.substr(pos + 1, end - pos - 1);
    // Strip % comments per line, then split rows on ';' or newline.
    std::vector<std::vector<double>> rows;
    std::istringstream lines(body);
    std::string line;
    while (std::getline(lines, line)) {
        const std::size_t comment = line.find('%');
        if (comment != std::string::npos) line = line.substr(0, comment);
        std::replace(line.begin(), line.end(), ';', ' ');
        std::istringstream in(line);
        std::vector<double> row;
        double value = 0.0;
        while (in >> value) row.push_back(value);
        if (!row.empty()) rows.push_back(std::move(row));
    }
    return rows;
}

double read_scalar(const std::string& text, const std::string& name, double fallback) {
    const std::string key = "mpc." + name;
    std::size_t pos = text.find(key);
    if (pos == std::string::npos) return fallback;
    pos = text.find('=', pos);
    if (pos == std::string::npos) return fallback;
    return std::stod(text.substr(pos + 1));
}

} // namespace

CaseData convert_matpower_case(const std::string& text) {
    const double base_mva = read_scalar(text, "baseMVA", 100.0);
    const auto bus_rows = read_matrix(text, "bus");
    const auto gen_rows = read_matrix(text, "gen");
    const auto branch_rows = read_matrix(text, "branch");

    CaseData data;
    data.system.base_mva = base_mva;

    std::map<int, int> id_map; // matpower id -> contiguous id
    for (const auto& row : bus_rows) {
        if (row.size() < 13) throw ParseError("bus row too short in matpower case");
        const int mp_id = static_cast<int>(row[0]);
        const int type = static_cast<int>(row[1]);
        if (id_map.count(mp_id)) throw ValidationError("duplicate matpower bus id");
        const int id = static_cast<int>(id_map.size());
        id_map[mp_id] = id;
        Bus bus;
        bus.id = id;
        bus.kind = type == 3 ? BusKind::reference : (type == 2 ? BusKind::generation : BusKind::load);
        bus.shunt_conductance = row[4] / base_mva;
        bus.shunt_susceptance = row[5] / base_mva;
        data.system.buses.push_back(bus);
        const double pd = row[2], qd = row[3];
        if (pd != 0.0 || qd != 0.0) data.loads.push_back({id, pd / base_mva, qd / base_mva});
    }

    for (const auto& row : gen_rows) {
        if (row.size() < 8) throw ParseError("gen row too short in matpower case");
        if (row[7] <= 0.0) continue; // out of service
        const auto it = id_map.find(static_cast<int>(row[0]));
        if (it == id_map.end()) throw ValidationError("generator references unknown bus");
        data.generators.push_back({it->second, row[1] / base_mva, row[5]});
    }

    const double deg = 3.14159265358979323846 / 180.0;
    for (const auto& row : branch_rows) {
        if (row.size() < 11) throw ParseError("branch row too short in matpower case");
        if (row[10] <= 0.0) continue; // out of service
        const auto from = id_map.find(static_cast<int>(row[0]));
        const auto to = id_map.find(static_cast<int>(row[1]));
        if (from == id_map.end() || to == id_map.end())
            throw ValidationError("branch references unknown bus");
        const double r = row[2], x = row[3], charge = row[4];
        const double mag2 = r * r + x * x;
        if (mag2 == 0.0) throw ValidationError("branch with zero series impedance");
        Branch br;
        br.from_bus = from->second;
        br.to_bus = to->second;
        br.g = r / mag2;
        br.b = -x / mag2;
        br.b_shunt_half = charge / 2.0;
        br.tap = row[8] == 0.0 ? 1.0 : row[8];
        br.shift = row[9] * deg;
        data.system.branches.push_back(br);
    }

    data.system.finalize();
    return data;
}

CaseData load_matpower_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open matpower case: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return convert_matpower_case(buffer.str());
}

} // namespace gridnse
