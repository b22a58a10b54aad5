#pragma once

#include "gridnse/dataset.hpp"
#include "gridnse/gnn.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gridnse {

struct TrainReport {
    std::vector<double> train_loss;    // per epoch, mean over steps
    std::vector<double> val_mse;       // per epoch
    std::vector<double> epoch_seconds; // wall clock
    int best_epoch = -1;               // 0-based, by validation MSE
    double best_val_mse = 0.0;
    std::string checkpoint_path;
};

/// Adam on the batched MSE over shuffled mini-batches; keeps the best
/// validation checkpoint under `checkpoint_dir` (in-memory best is restored
/// into `model` at exit). Throws on non-finite loss.
TrainReport train(GnnModel& model, const Dataset& dataset, std::uint64_t seed,
                  const std::string& checkpoint_dir);

struct EvalReport {
    double overall_mse = 0.0;
    double magnitude_mse = 0.0;
    double angle_mse = 0.0;
    Eigen::VectorXd per_bus_magnitude; // mean squared error per bus
    Eigen::VectorXd per_bus_angle;
    int sample_count = 0;
    std::string scenario = "clean";
};

using ScenarioFn = std::function<ScenarioSample(const Sample&, int sample_index)>;

/// MSE of GNN predictions against stored labels; scenario edits are applied
/// to the inputs only. Pure: identical calls give identical reports.
EvalReport evaluate(const GnnModel& model, const Dataset& dataset,
                    const std::vector<Sample>& split, const std::optional<ScenarioFn>& scenario,
                    const std::string& scenario_name = "clean");

std::string serialize_eval_report(const EvalReport& report);

struct SweepPoint {
    double fraction = 0.0;
    double gnn_mse = 0.0;
    bool gnn_finite = true;
    int gn_converged = 0;
    int gn_failed = 0;
    double gn_mse = 0.0; // over converged solves only
};

/// 20-point random-exclusion sweep (0..0.95 step 0.05): GNN on degraded
/// graphs plus a Gauss-Newton attempt per sample with failures tallied.
std::vector<SweepPoint> exclusion_sweep(const GnnModel& model, const Dataset& dataset,
                                        const std::vector<Sample>& split, std::uint64_t seed);

std::string serialize_sweep(const std::vector<SweepPoint>& sweep);

struct LocalityReport {
    // Index = bus-hop distance from the excluded pair (last bucket collects
    // everything at >= size-1 hops when clamp is set).
    std::vector<double> mse_by_hop;
    std::vector<long> count_by_hop;
    double mean_mse = 0.0;

    double bucket_mean(int hop_min, int hop_max) const;
};

/// Neighbourhood-exclusion locality study: per-bus squared errors bucketed
/// by hop distance from the excluded pair, aggregated over samples.
LocalityReport locality_report(const GnnModel& model, const Dataset& dataset,
                               const std::vector<Sample>& split, std::uint64_t seed,
                               bool with_exclusion = true);

std::string serialize_locality(const LocalityReport& report);

struct AttackReport {
    double gnn_mse = 0.0;
    double gn_mse = 0.0; // over converged solves, flat start
    int gn_converged = 0;
    int gn_failed = 0;
    int sample_count = 0;
};

/// Both estimators on corrupted inputs, scored against the clean labels.
AttackReport attack_eval(const GnnModel& model, const Dataset& dataset,
                         const std::vector<Sample>& split, std::uint64_t seed,
                         double scale = 1.0);

/// K-layer-exact local inference for one bus via khop_subgraph with
/// hops = ceil(K/2): returns (V, theta) predictions.
std::pair<double, double> distributed_infer(const GnnModel& model, const AugmentedFactorGraph& g,
                                            int bus);

struct ProbeRow {
    int buses = 0;
    long variable_nodes = 0;
    long edges = 0;
    double seconds = 0.0;
};

/// Inference wall time over synthetic chains, plus the fitted log-log slope.
struct ScalingReport {
    std::vector<ProbeRow> rows;
    double slope = 0.0;
};
ScalingReport scaling_probe(const GnnModel& model, const std::vector<int>& sizes,
                            int repetitions = 5);

std::string serialize_scaling(const ScalingReport& report);

/// Shared helper: graph of the dataset placement with encoded features.
AugmentedFactorGraph dataset_base_graph(const Dataset& dataset, int max_buses);

} // namespace gridnse
