#include "gridnse/errors.hpp"
#include "gridnse/matpower.hpp"
#include "gridnse/run_config.hpp"
#include "gridnse/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace gridnse {

namespace {

int log_threshold = 1; // info

int level_rank(const std::string& level) {
    if (level == "debug") return 0;
    if (level == "info") return 1;
    if (level == "warn") return 2;
    if (level == "error") return 3;
    throw ConfigError("unknown log level '" + level + "'");
}

} // namespace

void set_log_level(const std::string& level) { log_threshold = level_rank(level); }

void log_line(const std::string& level, const std::string& message) {
    if (level_rank(level) < log_threshold) return;
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    std::fprintf(stderr, "[%lld] %s %s\n", static_cast<long long>(ms), level.c_str(),
                 message.c_str());
}

namespace {

namespace fs = std::filesystem;

void require(const std::string& value, const std::string& key) {
    if (value.empty())
        throw ConfigError("missing required field '" + key + "' for this command");
}

CaseData load_any_case(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open case file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (text.find("mpc.bus") != std::string::npos) return convert_matpower_case(text);
    return parse_case_data(text);
}

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
}

std::string report_name(const RunConfig& cfg, const std::string& scenario,
                        const std::string& checkpoint) {
    std::string hash = "nockpt";
    if (!checkpoint.empty()) hash = file_hash_hex(checkpoint).substr(0, 8);
    return scenario + "_seed" + std::to_string(cfg.seed) + "_" + hash + ".csv";
}

Dataset load_dataset_checked(const RunConfig& cfg) {
    require(cfg.dataset_dir, "paths.dataset_dir");
    log_line("info", "loading dataset from " + cfg.dataset_dir);
    return load_dataset(cfg.dataset_dir);
}

GnnModel load_model_checked(const RunConfig& cfg) {
    require(cfg.checkpoint, "paths.checkpoint");
    log_line("info", "loading checkpoint " + cfg.checkpoint);
    return load_checkpoint(cfg.checkpoint);
}

const std::vector<Sample>& pick_split(const Dataset& dataset, const std::string& name) {
    if (name == "train") return dataset.train;
    if (name == "val") return dataset.val;
    return dataset.test;
}

int run_generate(const RunConfig& cfg) {
    require(cfg.case_file, "paths.case_file");
    require(cfg.dataset_dir, "paths.dataset_dir");
    const CaseData data = load_any_case(cfg.case_file);
    log_line("info", "generating dataset: " + std::to_string(cfg.train_size) + "/" +
                         std::to_string(cfg.val_size) + "/" + std::to_string(cfg.test_size) +
                         " samples");
    const Dataset dataset = generate_dataset(
        data, cfg.recipe, DatasetSizes{cfg.train_size, cfg.val_size, cfg.test_size}, cfg.seed,
        cfg.threads);
    save_dataset(dataset, cfg.dataset_dir);
    log_line("info", "dataset written to " + cfg.dataset_dir);
    return 0;
}

int run_train(const RunConfig& cfg) {
    const Dataset dataset = load_dataset_checked(cfg);
    require(cfg.report_dir, "paths.report_dir");
    GnnConfig gnn = cfg.gnn;
    if (gnn.max_buses < dataset.case_data.system.bus_count())
        gnn.max_buses = dataset.case_data.system.bus_count();
    GnnModel model = init_model(gnn, cfg.seed);
    log_line("info", "training " + std::to_string(parameter_count(model)) + " parameters for " +
                         std::to_string(gnn.epochs) + " epochs");
    const TrainReport report = train(model, dataset, cfg.seed, cfg.report_dir);

    std::ostringstream csv;
    csv << "epoch,train_loss,val_mse,seconds\n";
    char buf[96];
    for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.3f\n", e, report.train_loss[e],
                      report.val_mse[e], report.epoch_seconds[e]);
        csv << buf;
    }
    std::snprintf(buf, sizeof buf, "best,%d,%.17g,\n", report.best_epoch, report.best_val_mse);
    csv << buf;
    write_file(fs::path(cfg.report_dir) / "train_report.csv", csv.str());
    write_file(fs::path(cfg.report_dir) / "run_config.toml", serialize_config(cfg));
    log_line("info", "best validation mse " + std::to_string(report.best_val_mse) + " at epoch " +
                         std::to_string(report.best_epoch));
    if (!cfg.checkpoint.empty() && cfg.checkpoint != report.checkpoint_path)
        fs::copy_file(report.checkpoint_path, cfg.checkpoint, fs::copy_options::overwrite_existing);
    return 0;
}

int run_eval(const RunConfig& cfg) {
    const Dataset dataset = load_dataset_checked(cfg);
    const GnnModel model = load_model_checked(cfg);
    const EvalReport report =
        evaluate(model, dataset, pick_split(dataset, cfg.eval_split), std::nullopt);
    const std::string name = report_name(cfg, "eval_" + cfg.eval_split, cfg.checkpoint);
    write_file(fs::path(cfg.report_dir) / name, serialize_eval_report(report));
    log_line("info", "overall mse " + std::to_string(report.overall_mse));
    std::cout << "overall_mse " << report.overall_mse << "\nmagnitude_mse "
              << report.magnitude_mse << "\nangle_mse " << report.angle_mse << "\n";
    return 0;
}

int run_sweep(const RunConfig& cfg) {
    const Dataset dataset = load_dataset_checked(cfg);
    const GnnModel model = load_model_checked(cfg);
    const auto sweep = exclusion_sweep(model, dataset, pick_split(dataset, cfg.eval_split),
                                       cfg.seed);
    const std::string name = report_name(cfg, "sweep_exclusion", cfg.checkpoint);
    write_file(fs::path(cfg.report_dir) / name, serialize_sweep(sweep));
    std::cout << serialize_sweep(sweep);
    return 0;
}

int run_locality(const RunConfig& cfg) {
    const Dataset dataset = load_dataset_checked(cfg);
    const GnnModel model = load_model_checked(cfg);
    std::vector<Sample> split = pick_split(dataset, cfg.eval_split);
    if (static_cast<int>(split.size()) > cfg.locality_samples)
        split.resize(static_cast<std::size_t>(cfg.locality_samples));
    const LocalityReport report = locality_report(model, dataset, split, cfg.seed);
    const std::string name = report_name(cfg, "locality", cfg.checkpoint);
    write_file(fs::path(cfg.report_dir) / name, serialize_locality(report));
    std::cout << serialize_locality(report);
    return 0;
}

int run_attack(const RunConfig& cfg) {
    const Dataset dataset = load_dataset_checked(cfg);
    const GnnModel model = load_model_checked(cfg);
    const AttackReport report = attack_eval(model, dataset, pick_split(dataset, cfg.eval_split),
                                            cfg.seed, cfg.attack_scale);
    std::ostringstream out;
    char buf[128];
    std::snprintf(buf, sizeof buf, "gnn_mse,%.17g\ngn_mse,%.17g\ngn_converged,%d\ngn_failed,%d\n",
                  report.gnn_mse, report.gn_mse, report.gn_converged, report.gn_failed);
    out << buf;
    const std::string name = report_name(cfg, "attack", cfg.checkpoint);
    write_file(fs::path(cfg.report_dir) / name, out.str());
    std::cout << out.str();
    return 0;
}

int run_infer_local(const RunConfig& cfg) {
    const Dataset dataset = load_dataset_checked(cfg);
    const GnnModel model = load_model_checked(cfg);
    const std::vector<Sample>& split = pick_split(dataset, cfg.eval_split);
    if (split.empty()) throw ValidationError("split is empty");
    AugmentedFactorGraph base = dataset_base_graph(dataset, model.config.max_buses);
    refresh_factor_values(base, split.front().measurements);
    const Eigen::VectorXd full = forward(model, base);

    std::ostringstream out;
    out << "bus,V_local,theta_local,V_full,theta_full,gap\n";
    double max_gap = 0.0;
    const int n = dataset.case_data.system.bus_count();
    char buf[160];
    for (int bus = 0; bus < n; ++bus) {
        if (cfg.infer_bus >= 0 && bus != cfg.infer_bus) continue;
        const auto [v, theta] = distributed_infer(model, base, bus);
        const double gap = std::max(std::abs(v - full[2 * bus]),
                                    std::abs(theta - full[2 * bus + 1]));
        max_gap = std::max(max_gap, gap);
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.3g\n", bus, v, theta,
                      full[2 * bus], full[2 * bus + 1], gap);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "max_gap,%.3g,,,,\n", max_gap);
    out << buf;
    const std::string name = report_name(cfg, "infer_local", cfg.checkpoint);
    write_file(fs::path(cfg.report_dir) / name, out.str());
    std::cout << out.str();
    return 0;
}

int run_probe_scaling(const RunConfig& cfg) {
    GnnModel model = cfg.checkpoint.empty() ? init_model(cfg.gnn, cfg.seed)
                                            : load_checkpoint(cfg.checkpoint);
    const int largest = *std::max_element(cfg.scaling_sizes.begin(), cfg.scaling_sizes.end());
    if (model.config.max_buses < largest)
        throw ConfigError("gnn.max_buses must cover the largest chain size " +
                          std::to_string(largest));
    const ScalingReport report = scaling_probe(model, cfg.scaling_sizes);
    const std::string name = report_name(cfg, "scaling", cfg.checkpoint);
    write_file(fs::path(cfg.report_dir) / name, serialize_scaling(report));
    std::cout << serialize_scaling(report);
    return 0;
}

} // namespace

int dispatch(const RunConfig& cfg) {
    if (cfg.command == "generate") return run_generate(cfg);
    if (cfg.command == "train") return run_train(cfg);
    if (cfg.command == "eval") return run_eval(cfg);
    if (cfg.command == "sweep-exclusion") return run_sweep(cfg);
    if (cfg.command == "eval-locality") return run_locality(cfg);
    if (cfg.command == "eval-attack") return run_attack(cfg);
    if (cfg.command == "infer-local") return run_infer_local(cfg);
    if (cfg.command == "probe-scaling") return run_probe_scaling(cfg);
    throw ConfigError("unknown command '" + cfg.command + "'");
}

} // namespace gridnse
