#include "gridnse/trainer.hpp"

#include "gridnse/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>

namespace gridnse {

namespace {

Eigen::VectorXd labels_for(const StateVector& x) {
    Eigen::VectorXd labels(2 * x.size());
    for (int bus = 0; bus < x.size(); ++bus) {
        labels[2 * bus] = x.vm[bus];
        labels[2 * bus + 1] = x.va[bus];
    }
    return labels;
}

// Overwrites the measurement-value column of a compiled batch template whose
// slots all share the dataset's base graph.
void refresh_batch_values(CompiledBatch& batch, const std::vector<const Sample*>& samples) {
    for (int gi = 0; gi < batch.graph_count; ++gi) {
        const int fo = batch.fac_offset[static_cast<std::size_t>(gi)];
        const MeasurementSet& ms = samples[static_cast<std::size_t>(gi)]->measurements;
        for (int i = 0; i < ms.size(); ++i)
            batch.fac_features(fo + i, 0) = ms.items[static_cast<std::size_t>(i)].value;
    }
}

Eigen::VectorXd batch_labels(const std::vector<const Sample*>& samples) {
    if (samples.empty()) return {};
    const int per = 2 * samples[0]->label.size();
    Eigen::VectorXd labels(static_cast<Eigen::Index>(samples.size()) * per);
    for (std::size_t i = 0; i < samples.size(); ++i)
        labels.segment(static_cast<Eigen::Index>(i) * per, per) = labels_for(samples[i]->label);
    return labels;
}

} // namespace

AugmentedFactorGraph dataset_base_graph(const Dataset& dataset, int max_buses) {
    AugmentedFactorGraph g = build_factor_graph(dataset.case_data.system, dataset.placement);
    encode_features(g, max_buses);
    refresh_factor_values(g, dataset.placement);
    return g;
}

TrainReport train(GnnModel& model, const Dataset& dataset, std::uint64_t seed,
                  const std::string& checkpoint_dir) {
    if (dataset.train.empty()) throw ValidationError("training split is empty");
    const GnnConfig& cfg = model.config;
    AugmentedFactorGraph base = dataset_base_graph(dataset, cfg.max_buses);

    // One compiled template per batch size; only measurement values change
    // between steps.
    std::map<int, CompiledBatch> templates;
    auto batch_of = [&](int size) -> CompiledBatch& {
        auto it = templates.find(size);
        if (it == templates.end()) {
            std::vector<const AugmentedFactorGraph*> graphs(static_cast<std::size_t>(size), &base);
            it = templates.emplace(size, compile_batch(graphs)).first;
        }
        return it->second;
    };

    TrainReport report;
    namespace fs = std::filesystem;
    fs::create_directories(checkpoint_dir);
    report.checkpoint_path = (fs::path(checkpoint_dir) / "best.ckpt").string();
    report.best_val_mse = std::numeric_limits<double>::infinity();

    GnnModel grads = zeros_like(model);
    AdamState adam = init_adam(model);
    Rng shuffle_rng(seed, 0x5f);
    std::vector<int> order(dataset.train.size());
    std::iota(order.begin(), order.end(), 0);

    auto validation_mse = [&]() {
        if (dataset.val.empty()) return 0.0;
        double sum = 0.0;
        long count = 0;
        std::size_t cursor = 0;
        while (cursor < dataset.val.size()) {
            const int size =
                static_cast<int>(std::min<std::size_t>(dataset.val.size() - cursor,
                                                       static_cast<std::size_t>(cfg.batch_size)));
            std::vector<const Sample*> chunk;
            for (int i = 0; i < size; ++i) chunk.push_back(&dataset.val[cursor + static_cast<std::size_t>(i)]);
            CompiledBatch& batch = batch_of(size);
            refresh_batch_values(batch, chunk);
            const Eigen::VectorXd labels = batch_labels(chunk);
            const ForwardTrace trace = forward_batch(model, batch);
            sum += (trace.predictions - labels).squaredNorm();
            count += labels.size();
            cursor += static_cast<std::size_t>(size);
        }
        return sum / static_cast<double>(count);
    };

    GnnModel best = model;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int steps = 0;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const int size = static_cast<int>(std::min<std::size_t>(
                order.size() - cursor, static_cast<std::size_t>(cfg.batch_size)));
            std::vector<const Sample*> chunk;
            for (int i = 0; i < size; ++i)
                chunk.push_back(&dataset.train[static_cast<std::size_t>(
                    order[cursor + static_cast<std::size_t>(i)])]);
            CompiledBatch& batch = batch_of(size);
            refresh_batch_values(batch, chunk);
            const Eigen::VectorXd labels = batch_labels(chunk);
            const ForwardTrace trace = forward_batch(model, batch);
            const double loss = backward_batch(model, batch, trace, labels, grads);
            if (!std::isfinite(loss))
                throw DivergenceError("non-finite training loss at epoch " +
                                          std::to_string(epoch) + ", step " + std::to_string(steps),
                                      loss);
            adam_step(model, adam, grads, cfg.learning_rate);
            loss_sum += loss;
            ++steps;
            cursor += static_cast<std::size_t>(size);
        }
        report.train_loss.push_back(loss_sum / std::max(steps, 1));
        const double val = validation_mse();
        report.val_mse.push_back(val);
        if (val < report.best_val_mse || report.best_epoch < 0) {
            report.best_val_mse = val;
            report.best_epoch = epoch;
            best = model;
            save_checkpoint(best, report.checkpoint_path);
        }
        report.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    model = best;
    return report;
}

EvalReport evaluate(const GnnModel& model, const Dataset& dataset,
                    const std::vector<Sample>& split, const std::optional<ScenarioFn>& scenario,
                    const std::string& scenario_name) {
    const PowerSystem& sys = dataset.case_data.system;
    const int n = sys.bus_count();
    EvalReport report;
    report.scenario = scenario_name;
    report.sample_count = static_cast<int>(split.size());
    report.per_bus_magnitude = Eigen::VectorXd::Zero(n);
    report.per_bus_angle = Eigen::VectorXd::Zero(n);
    if (split.empty()) return report;

    AugmentedFactorGraph base = dataset_base_graph(dataset, model.config.max_buses);
    double mag_sum = 0.0, ang_sum = 0.0;
    for (std::size_t si = 0; si < split.size(); ++si) {
        const Sample& sample = split[si];
        Eigen::VectorXd preds;
        if (scenario) {
            const ScenarioSample edited = (*scenario)(sample, static_cast<int>(si));
            refresh_factor_values(base, edited.measurements);
            if (edited.removed.empty()) {
                preds = forward(model, base);
            } else {
                std::vector<int> victims;
                for (int index : edited.removed)
                    victims.push_back(base.factors[static_cast<std::size_t>(index)].measurement);
                preds = forward(model, remove_factors(base, victims));
            }
        } else {
            refresh_factor_values(base, sample.measurements);
            preds = forward(model, base);
        }
        for (int bus = 0; bus < n; ++bus) {
            const double dm = preds[2 * bus] - sample.label.vm[bus];
            const double da = preds[2 * bus + 1] - sample.label.va[bus];
            report.per_bus_magnitude[bus] += dm * dm;
            report.per_bus_angle[bus] += da * da;
            mag_sum += dm * dm;
            ang_sum += da * da;
        }
    }
    const double samples = static_cast<double>(split.size());
    report.per_bus_magnitude /= samples;
    report.per_bus_angle /= samples;
    report.magnitude_mse = mag_sum / (samples * n);
    report.angle_mse = ang_sum / (samples * n);
    report.overall_mse = (mag_sum + ang_sum) / (samples * 2 * n);
    return report;
}

std::string serialize_eval_report(const EvalReport& report) {
    std::ostringstream out;
    out << "scenario," << report.scenario << "\n";
    out << "samples," << report.sample_count << "\n";
    char buf[96];
    std::snprintf(buf, sizeof buf, "overall_mse,%.17g\n", report.overall_mse);
    out << buf;
    std::snprintf(buf, sizeof buf, "magnitude_mse,%.17g\n", report.magnitude_mse);
    out << buf;
    std::snprintf(buf, sizeof buf, "angle_mse,%.17g\n", report.angle_mse);
    out << buf;
    out << "bus,V_mse,theta_mse\n";
    for (Eigen::Index bus = 0; bus < report.per_bus_magnitude.size(); ++bus) {
        std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g\n", static_cast<long>(bus),
                      report.per_bus_magnitude[bus], report.per_bus_angle[bus]);
        out << buf;
    }
    return out.str();
}

namespace {

double state_mse_vs_label(const StateVector& estimate, const StateVector& label) {
    double sum = 0.0;
    for (int bus = 0; bus < label.size(); ++bus) {
        const double dm = estimate.vm[bus] - label.vm[bus];
        const double da = estimate.va[bus] - label.va[bus];
        sum += dm * dm + da * da;
    }
    return sum / (2.0 * label.size());
}

} // namespace

std::vector<SweepPoint> exclusion_sweep(const GnnModel& model, const Dataset& dataset,
                                        const std::vector<Sample>& split, std::uint64_t seed) {
    std::vector<SweepPoint> sweep;
    const PowerSystem& sys = dataset.case_data.system;
    for (int step = 0; step < 20; ++step) {
        const double fraction = 0.05 * step;
        SweepPoint point;
        point.fraction = fraction;

        // GNN side (scenario seeded per fraction/sample for reproducibility).
        ScenarioFn scenario = [&](const Sample& sample, int index) {
            Rng rng(seed, (static_cast<std::uint64_t>(step) << 32) ^
                              static_cast<std::uint64_t>(index));
            return apply_exclusion(sample, fraction, rng);
        };
        char name[48];
        std::snprintf(name, sizeof name, "exclusion_%02d", static_cast<int>(fraction * 100));
        const EvalReport gnn = evaluate(model, dataset, split, scenario, name);
        point.gnn_mse = gnn.overall_mse;
        point.gnn_finite = std::isfinite(gnn.overall_mse);

        // Gauss-Newton side on the same reduced sets.
        double gn_sum = 0.0;
        for (std::size_t si = 0; si < split.size(); ++si) {
            Rng rng(seed, (static_cast<std::uint64_t>(step) << 32) ^ static_cast<std::uint64_t>(si));
            const ScenarioSample edited = apply_exclusion(split[si], fraction, rng);
            const MeasurementSet reduced = scenario_measurements(edited);
            if (reduced.items.empty()) {
                ++point.gn_failed;
                continue;
            }
            GnReport gn_report;
            GnSettings settings;
            settings.estimate_condition = false;
            auto solution = try_gn_solve(sys, reduced, settings, gn_report);
            if (solution) {
                ++point.gn_converged;
                gn_sum += state_mse_vs_label(*solution, split[si].label);
            } else {
                ++point.gn_failed;
            }
        }
        point.gn_mse = point.gn_converged > 0 ? gn_sum / point.gn_converged
                                              : std::numeric_limits<double>::quiet_NaN();
        sweep.push_back(point);
    }
    return sweep;
}

std::string serialize_sweep(const std::vector<SweepPoint>& sweep) {
    std::ostringstream out;
    out << "fraction,gnn_mse,gn_converged,gn_failed,gn_mse\n";
    char buf[128];
    for (const SweepPoint& p : sweep) {
        std::snprintf(buf, sizeof buf, "%.2f,%.17g,%d,%d,%.17g\n", p.fraction, p.gnn_mse,
                      p.gn_converged, p.gn_failed, p.gn_mse);
        out << buf;
    }
    return out.str();
}

double LocalityReport::bucket_mean(int hop_min, int hop_max) const {
    double sum = 0.0;
    long count = 0;
    for (std::size_t hop = 0; hop < mse_by_hop.size(); ++hop) {
        if (static_cast<int>(hop) < hop_min) continue;
        if (hop_max >= 0 && static_cast<int>(hop) > hop_max) continue;
        sum += mse_by_hop[hop] * static_cast<double>(count_by_hop[hop]);
        count += count_by_hop[hop];
    }
    return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

LocalityReport locality_report(const GnnModel& model, const Dataset& dataset,
                               const std::vector<Sample>& split, std::uint64_t seed,
                               bool with_exclusion) {
    const PowerSystem& sys = dataset.case_data.system;
    const int n = sys.bus_count();
    AugmentedFactorGraph base = dataset_base_graph(dataset, model.config.max_buses);

    std::vector<double> sum_by_hop;
    std::vector<long> count_by_hop;
    double total = 0.0;
    long entries = 0;
    for (std::size_t si = 0; si < split.size(); ++si) {
        Rng rng(seed, static_cast<std::uint64_t>(si));
        const Sample& sample = split[si];
        ScenarioSample edited;
        if (with_exclusion) {
            edited = apply_neighborhood_exclusion(sample, sys, rng);
        } else {
            edited.measurements = sample.measurements;
            // Control buckets still need an anchor pair; draw one the same way.
            ScenarioSample anchor = apply_neighborhood_exclusion(sample, sys, rng);
            edited.bus_a = anchor.bus_a;
            edited.bus_b = anchor.bus_b;
        }
        refresh_factor_values(base, edited.measurements);
        Eigen::VectorXd preds;
        if (edited.removed.empty()) {
            preds = forward(model, base);
        } else {
            std::vector<int> victims;
            for (int index : edited.removed)
                victims.push_back(base.factors[static_cast<std::size_t>(index)].measurement);
            preds = forward(model, remove_factors(base, victims));
        }

        // Hop distance from the excluded pair over electrical adjacency.
        std::vector<int> dist(static_cast<std::size_t>(n), -1);
        std::deque<int> queue;
        for (int anchor : {edited.bus_a, edited.bus_b}) {
            dist[static_cast<std::size_t>(anchor)] = 0;
            queue.push_back(anchor);
        }
        while (!queue.empty()) {
            const int bus = queue.front();
            queue.pop_front();
            for (int next : sys.bus_adjacency()[static_cast<std::size_t>(bus)])
                if (dist[static_cast<std::size_t>(next)] < 0) {
                    dist[static_cast<std::size_t>(next)] = dist[static_cast<std::size_t>(bus)] + 1;
                    queue.push_back(next);
                }
        }
        for (int bus = 0; bus < n; ++bus) {
            const int hop = std::max(dist[static_cast<std::size_t>(bus)], 0);
            if (static_cast<std::size_t>(hop) >= sum_by_hop.size()) {
                sum_by_hop.resize(static_cast<std::size_t>(hop) + 1, 0.0);
                count_by_hop.resize(static_cast<std::size_t>(hop) + 1, 0);
            }
            const double dm = preds[2 * bus] - sample.label.vm[bus];
            const double da = preds[2 * bus + 1] - sample.label.va[bus];
            const double bus_mse = (dm * dm + da * da) / 2.0;
            sum_by_hop[static_cast<std::size_t>(hop)] += bus_mse;
            ++count_by_hop[static_cast<std::size_t>(hop)];
            total += bus_mse;
            ++entries;
        }
    }
    LocalityReport report;
    report.count_by_hop = count_by_hop;
    report.mse_by_hop.resize(sum_by_hop.size());
    for (std::size_t hop = 0; hop < sum_by_hop.size(); ++hop)
        report.mse_by_hop[hop] =
            count_by_hop[hop] > 0 ? sum_by_hop[hop] / static_cast<double>(count_by_hop[hop]) : 0.0;
    report.mean_mse = entries > 0 ? total / static_cast<double>(entries) : 0.0;
    return report;
}

std::string serialize_locality(const LocalityReport& report) {
    std::ostringstream out;
    out << "hop,mse,buses\n";
    char buf[80];
    for (std::size_t hop = 0; hop < report.mse_by_hop.size(); ++hop) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%ld\n", hop, report.mse_by_hop[hop],
                      report.count_by_hop[hop]);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "mean,%.17g,\n", report.mean_mse);
    out << buf;
    return out.str();
}

AttackReport attack_eval(const GnnModel& model, const Dataset& dataset,
                         const std::vector<Sample>& split, std::uint64_t seed, double scale) {
    const PowerSystem& sys = dataset.case_data.system;
    AttackReport report;
    report.sample_count = static_cast<int>(split.size());

    ScenarioFn scenario = [&](const Sample& sample, int index) {
        Rng rng(seed, static_cast<std::uint64_t>(index));
        return apply_attack(sample, sys, rng, scale);
    };
    report.gnn_mse = evaluate(model, dataset, split, scenario, "attack").overall_mse;

    double gn_sum = 0.0;
    for (std::size_t si = 0; si < split.size(); ++si) {
        Rng rng(seed, static_cast<std::uint64_t>(si));
        const ScenarioSample edited = apply_attack(split[si], sys, rng, scale);
        GnReport gn_report;
        GnSettings settings;
        settings.estimate_condition = false;
        auto solution = try_gn_solve(sys, edited.measurements, settings, gn_report);
        if (solution) {
            ++report.gn_converged;
            gn_sum += state_mse_vs_label(*solution, split[si].label);
        } else {
            ++report.gn_failed;
        }
    }
    report.gn_mse = report.gn_converged > 0 ? gn_sum / report.gn_converged
                                            : std::numeric_limits<double>::quiet_NaN();
    return report;
}

std::pair<double, double> distributed_infer(const GnnModel& model, const AugmentedFactorGraph& g,
                                            int bus) {
    const int hops = (model.config.layers + 1) / 2;
    const Subgraph sub = khop_subgraph(g, bus, hops);
    const Eigen::VectorXd preds = forward(model, sub.graph);
    double v = 0.0, theta = 0.0;
    for (std::size_t i = 0; i < sub.variable_map.size(); ++i) {
        if (sub.variable_map[i] == AugmentedFactorGraph::variable_id(bus, VarQuantity::magnitude))
            v = preds[static_cast<Eigen::Index>(i)];
        if (sub.variable_map[i] == AugmentedFactorGraph::variable_id(bus, VarQuantity::angle))
            theta = preds[static_cast<Eigen::Index>(i)];
    }
    return {v, theta};
}

ScalingReport scaling_probe(const GnnModel& model, const std::vector<int>& sizes,
                            int repetitions) {
    ScalingReport report;
    for (int n : sizes) {
        const CaseData chain = make_chain_case(n);
        const MeasurementSet placement = chain_placement(chain.system);
        MeasurementSet valued = placement;
        const StateVector flat = StateVector::flat(n);
        for (Measurement& m : valued.items) m.value = eval_h(chain.system, flat, m);
        AugmentedFactorGraph g = build_factor_graph(chain.system, valued);
        encode_features(g, model.config.max_buses);
        refresh_factor_values(g, valued);
        const CompiledBatch batch = compile_batch({&g});

        // Warm up once, then time the repetitions and keep the best.
        (void)forward_batch(model, batch);
        double best = std::numeric_limits<double>::infinity();
        for (int rep = 0; rep < repetitions; ++rep) {
            const auto start = std::chrono::steady_clock::now();
            const ForwardTrace trace = forward_batch(model, batch);
            const double seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (!trace.predictions.allFinite())
                throw DivergenceError("non-finite predictions in scaling probe", 0.0);
            best = std::min(best, seconds);
        }
        ProbeRow row;
        row.buses = n;
        row.variable_nodes = g.variable_count();
        row.edges = static_cast<long>(g.factor_edges.size() + g.variable_edges.size());
        row.seconds = best;
        report.rows.push_back(row);
    }
    // Least-squares slope of log t over log n.
    const auto count = static_cast<double>(report.rows.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (const ProbeRow& row : report.rows) {
        const double x = std::log(static_cast<double>(row.buses));
        const double y = std::log(row.seconds);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    report.slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
    return report;
}

std::string serialize_scaling(const ScalingReport& report) {
    std::ostringstream out;
    out << "buses,variable_nodes,edges,seconds\n";
    char buf[96];
    for (const ProbeRow& row : report.rows) {
        std::snprintf(buf, sizeof buf, "%d,%ld,%ld,%.9f\n", row.buses, row.variable_nodes,
                      row.edges, row.seconds);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "slope,%.4f,,\n", report.slope);
    out << buf;
    return out.str();
}

} // namespace gridnse
