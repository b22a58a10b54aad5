#include "gridnse/run_config.hpp"

#include "gridnse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gridnse {

namespace {

std::string trim(const std::string& text) {
    std::size_t begin = text.find_first_not_of(" \t\r");
    std::size_t end = text.find_last_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    return text.substr(begin, end - begin + 1);
}

struct RawValue {
    std::string key; // section.name
    std::string text;
};

double as_real(const RawValue& v) {
    try {
        std::size_t used = 0;
        const double value = std::stod(v.text, &used);
        if (used != v.text.size()) throw std::invalid_argument(v.text);
        return value;
    } catch (const std::exception&) {
        throw ConfigError("key '" + v.key + "': expected a number, got '" + v.text + "'");
    }
}

std::int64_t as_int(const RawValue& v) {
    try {
        std::size_t used = 0;
        const long long value = std::stoll(v.text, &used);
        if (used != v.text.size()) throw std::invalid_argument(v.text);
        return value;
    } catch (const std::exception&) {
        throw ConfigError("key '" + v.key + "': expected an integer, got '" + v.text + "'");
    }
}

bool as_bool(const RawValue& v) {
    if (v.text == "true") return true;
    if (v.text == "false") return false;
    throw ConfigError("key '" + v.key + "': expected true or false, got '" + v.text + "'");
}

std::string as_string(const RawValue& v) {
    if (v.text.size() >= 2 && v.text.front() == '"' && v.text.back() == '"')
        return v.text.substr(1, v.text.size() - 2);
    return v.text;
}

std::vector<int> as_int_list(const RawValue& v) {
    if (v.text.empty() || v.text.front() != '[' || v.text.back() != ']')
        throw ConfigError("key '" + v.key + "': expected [a, b, ...]");
    std::vector<int> out;
    std::string body = v.text.substr(1, v.text.size() - 2);
    std::replace(body.begin(), body.end(), ',', ' ');
    std::istringstream in(body);
    long long value = 0;
    while (in >> value) out.push_back(static_cast<int>(value));
    return out;
}

void check(bool ok, const std::string& key, const std::string& why) {
    if (!ok) throw ConfigError("key '" + key + "': " + why);
}

} // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        // Comments start at '#' outside quotes.
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line = line.substr(0, i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("malformed section header at line " + std::to_string(line_no));
            section = line.substr(1, line.size() - 2);
            if (section != "paths" && section != "recipe" && section != "gnn" && section != "run")
                throw ConfigError("unknown section '" + section + "'");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key = value at line " + std::to_string(line_no));
        RawValue v{section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1))};

        if (v.key == "paths.case_file") cfg.case_file = as_string(v);
        else if (v.key == "paths.dataset_dir") cfg.dataset_dir = as_string(v);
        else if (v.key == "paths.checkpoint") cfg.checkpoint = as_string(v);
        else if (v.key == "paths.report_dir") cfg.report_dir = as_string(v);
        else if (v.key == "recipe.system_id") cfg.recipe.system_id = as_string(v);
        else if (v.key == "recipe.legacy_count") cfg.recipe.legacy_count = static_cast<int>(as_int(v));
        else if (v.key == "recipe.pmu_count") cfg.recipe.pmu_count = static_cast<int>(as_int(v));
        else if (v.key == "recipe.pmu_branch_target")
            cfg.recipe.pmu_branch_target = static_cast<int>(as_int(v));
        else if (v.key == "recipe.pmu_buses") {
            cfg.recipe.pmu_buses = as_int_list(v);
            cfg.recipe.pmu_count = static_cast<int>(cfg.recipe.pmu_buses.size());
        } else if (v.key == "recipe.noise_phasor") cfg.recipe.noise.phasor = as_real(v);
        else if (v.key == "recipe.noise_legacy")
            cfg.recipe.noise.legacy_flow_voltage = as_real(v);
        else if (v.key == "recipe.noise_injection") cfg.recipe.noise.injection = as_real(v);
        else if (v.key == "recipe.noise_scale") cfg.recipe.noise_scale = as_real(v);
        else if (v.key == "recipe.load_scale_low") cfg.recipe.load_scale_low = as_real(v);
        else if (v.key == "recipe.load_scale_high") cfg.recipe.load_scale_high = as_real(v);
        else if (v.key == "recipe.placement_seed")
            cfg.recipe.placement_seed = static_cast<std::uint64_t>(as_int(v));
        else if (v.key == "recipe.train_size") cfg.train_size = static_cast<int>(as_int(v));
        else if (v.key == "recipe.val_size") cfg.val_size = static_cast<int>(as_int(v));
        else if (v.key == "recipe.test_size") cfg.test_size = static_cast<int>(as_int(v));
        else if (v.key == "gnn.embedding_size") cfg.gnn.embedding_size = static_cast<int>(as_int(v));
        else if (v.key == "gnn.message_size") cfg.gnn.message_size = static_cast<int>(as_int(v));
        else if (v.key == "gnn.layers") cfg.gnn.layers = static_cast<int>(as_int(v));
        else if (v.key == "gnn.message_hidden")
            cfg.gnn.message_hidden = static_cast<int>(as_int(v));
        else if (v.key == "gnn.prediction_hidden")
            cfg.gnn.prediction_hidden = static_cast<int>(as_int(v));
        else if (v.key == "gnn.max_buses") cfg.gnn.max_buses = static_cast<int>(as_int(v));
        else if (v.key == "gnn.learning_rate") cfg.gnn.learning_rate = as_real(v);
        else if (v.key == "gnn.batch_size") cfg.gnn.batch_size = static_cast<int>(as_int(v));
        else if (v.key == "gnn.epochs") cfg.gnn.epochs = static_cast<int>(as_int(v));
        else if (v.key == "run.seed") cfg.seed = static_cast<std::uint64_t>(as_int(v));
        else if (v.key == "run.threads") cfg.threads = static_cast<int>(as_int(v));
        else if (v.key == "run.deterministic") cfg.deterministic = as_bool(v);
        else if (v.key == "run.attack_scale") cfg.attack_scale = as_real(v);
        else if (v.key == "run.infer_bus") cfg.infer_bus = static_cast<int>(as_int(v));
        else if (v.key == "run.scaling_sizes") cfg.scaling_sizes = as_int_list(v);
        else if (v.key == "run.eval_split") cfg.eval_split = as_string(v);
        else if (v.key == "run.locality_samples")
            cfg.locality_samples = static_cast<int>(as_int(v));
        else throw ConfigError("unknown key '" + v.key + "'");
    }

    check(cfg.recipe.legacy_count >= 0, "recipe.legacy_count", "must be >= 0");
    check(cfg.recipe.pmu_count >= 0, "recipe.pmu_count", "must be >= 0");
    check(cfg.recipe.noise.phasor > 0.0, "recipe.noise_phasor", "must be > 0");
    check(cfg.recipe.noise.legacy_flow_voltage > 0.0, "recipe.noise_legacy", "must be > 0");
    check(cfg.recipe.noise.injection > 0.0, "recipe.noise_injection", "must be > 0");
    check(cfg.recipe.noise_scale >= 0.0, "recipe.noise_scale", "must be >= 0");
    check(cfg.recipe.load_scale_low > 0.0 &&
              cfg.recipe.load_scale_high >= cfg.recipe.load_scale_low,
          "recipe.load_scale_low", "needs 0 < low <= high");
    check(cfg.train_size >= 0 && cfg.val_size >= 0 && cfg.test_size >= 0, "recipe.train_size",
          "split sizes must be >= 0");
    check(cfg.gnn.learning_rate > 0.0, "gnn.learning_rate", "must be > 0");
    check(cfg.gnn.embedding_size >= 1, "gnn.embedding_size", "must be >= 1");
    check(cfg.gnn.message_size >= 1, "gnn.message_size", "must be >= 1");
    check(cfg.gnn.layers >= 1, "gnn.layers", "must be >= 1");
    check(cfg.gnn.batch_size >= 1, "gnn.batch_size", "must be >= 1");
    check(cfg.gnn.epochs >= 1, "gnn.epochs", "must be >= 1");
    check(cfg.threads >= 1, "run.threads", "must be >= 1");
    check(cfg.eval_split == "train" || cfg.eval_split == "val" || cfg.eval_split == "test",
          "run.eval_split", "must be train, val or test");
    check(cfg.locality_samples >= 1, "run.locality_samples", "must be >= 1");
    for (int size : cfg.scaling_sizes)
        check(size >= 2, "run.scaling_sizes", "chain sizes must be >= 2");
    return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    char buf[64];
    auto real = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    out << "[paths]\n";
    out << "case_file = \"" << cfg.case_file << "\"\n";
    out << "dataset_dir = \"" << cfg.dataset_dir << "\"\n";
    out << "checkpoint = \"" << cfg.checkpoint << "\"\n";
    out << "report_dir = \"" << cfg.report_dir << "\"\n";
    out << "\n[recipe]\n";
    out << "system_id = \"" << cfg.recipe.system_id << "\"\n";
    out << "legacy_count = " << cfg.recipe.legacy_count << "\n";
    out << "pmu_count = " << cfg.recipe.pmu_count << "\n";
    out << "pmu_branch_target = " << cfg.recipe.pmu_branch_target << "\n";
    if (!cfg.recipe.pmu_buses.empty()) {
        out << "pmu_buses = [";
        for (std::size_t i = 0; i < cfg.recipe.pmu_buses.size(); ++i)
            out << (i ? ", " : "") << cfg.recipe.pmu_buses[i];
        out << "]\n";
    }
    out << "noise_phasor = " << real(cfg.recipe.noise.phasor) << "\n";
    out << "noise_legacy = " << real(cfg.recipe.noise.legacy_flow_voltage) << "\n";
    out << "noise_injection = " << real(cfg.recipe.noise.injection) << "\n";
    out << "noise_scale = " << real(cfg.recipe.noise_scale) << "\n";
    out << "load_scale_low = " << real(cfg.recipe.load_scale_low) << "\n";
    out << "load_scale_high = " << real(cfg.recipe.load_scale_high) << "\n";
    out << "placement_seed = " << cfg.recipe.placement_seed << "\n";
    out << "train_size = " << cfg.train_size << "\n";
    out << "val_size = " << cfg.val_size << "\n";
    out << "test_size = " << cfg.test_size << "\n";
    out << "\n[gnn]\n";
    out << "embedding_size = " << cfg.gnn.embedding_size << "\n";
    out << "message_size = " << cfg.gnn.message_size << "\n";
    out << "layers = " << cfg.gnn.layers << "\n";
    out << "message_hidden = " << cfg.gnn.message_hidden << "\n";
    out << "prediction_hidden = " << cfg.gnn.prediction_hidden << "\n";
    out << "max_buses = " << cfg.gnn.max_buses << "\n";
    out << "learning_rate = " << real(cfg.gnn.learning_rate) << "\n";
    out << "batch_size = " << cfg.gnn.batch_size << "\n";
    out << "epochs = " << cfg.gnn.epochs << "\n";
    out << "\n[run]\n";
    out << "seed = " << cfg.seed << "\n";
    out << "threads = " << cfg.threads << "\n";
    out << "deterministic = " << (cfg.deterministic ? "true" : "false") << "\n";
    out << "attack_scale = " << real(cfg.attack_scale) << "\n";
    out << "infer_bus = " << cfg.infer_bus << "\n";
    out << "scaling_sizes = [";
    for (std::size_t i = 0; i < cfg.scaling_sizes.size(); ++i)
        out << (i ? ", " : "") << cfg.scaling_sizes[i];
    out << "]\n";
    out << "eval_split = \"" << cfg.eval_split << "\"\n";
    out << "locality_samples = " << cfg.locality_samples << "\n";
    return out.str();
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

} // namespace gridnse
