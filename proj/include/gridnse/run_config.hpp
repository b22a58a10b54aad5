#pragma once

#include "gridnse/dataset.hpp"
#include "gridnse/gnn.hpp"

#include <string>
#include <vector>

namespace gridnse {

/// One config file per run; subcommand and log level are the only CLI-side
/// inputs. Defaults mirror the reference training setup.
struct RunConfig {
    std::string command; // filled by the CLI dispatcher

    // [paths]
    std::string case_file;
    std::string dataset_dir;
    std::string checkpoint;
    std::string report_dir = "reports";

    // [recipe]
    SampleRecipe recipe;
    int train_size = 10000;
    int val_size = 100;
    int test_size = 100;

    // [gnn]
    GnnConfig gnn;

    // [run]
    std::uint64_t seed = 7;
    int threads = 1;
    bool deterministic = true;
    double attack_scale = 1.0;
    int infer_bus = -1; // -1 = every bus
    std::vector<int> scaling_sizes = {100, 400, 1600};
    std::string eval_split = "test";
    int locality_samples = 100;
};

/// Parses the TOML-like `key = value` format (sections, quoted strings,
/// numbers, booleans, [int, lists]). Unknown keys, malformed values and
/// out-of-range fields raise ConfigError naming the key.
RunConfig parse_config(const std::string& text);

/// Round-trips through parse_config.
std::string serialize_config(const RunConfig& cfg);

RunConfig load_config_file(const std::string& path);

/// Runs cfg.command; returns the process exit status.
int dispatch(const RunConfig& cfg);

/// Log filtering for the dispatcher ("debug" < "info" < "warn" < "error").
void set_log_level(const std::string& level);
void log_line(const std::string& level, const std::string& message);

} // namespace gridnse
