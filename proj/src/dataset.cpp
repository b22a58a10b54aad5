#include "gridnse/dataset.hpp"

#include "gridnse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <atomic>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

namespace gridnse {

namespace {

double class_variance(MeasurementKind kind, const NoiseClasses& noise) {
    if (is_phasor_kind(kind)) return noise.phasor;
    if (kind == MeasurementKind::active_injection || kind == MeasurementKind::reactive_injection)
        return noise.injection;
    return noise.legacy_flow_voltage;
}

Measurement make_bus_measurement(MeasurementKind kind, int bus, double variance) {
    Measurement m;
    m.kind = kind;
    m.bus = bus;
    m.variance = variance;
    return m;
}

Measurement make_branch_measurement(MeasurementKind kind, int branch, BranchSide side,
                                    double variance) {
    Measurement m;
    m.kind = kind;
    m.branch = branch;
    m.side = side;
    m.variance = variance;
    return m;
}

std::vector<int> draw_pmu_buses(const PowerSystem& sys, const SampleRecipe& recipe, Rng& rng) {
    if (!recipe.pmu_buses.empty()) {
        if (static_cast<int>(recipe.pmu_buses.size()) != recipe.pmu_count)
            throw GenerationError("pmu_buses list disagrees with pmu_count");
        return recipe.pmu_buses;
    }
    const int n = sys.bus_count();
    if (recipe.pmu_count > n) throw GenerationError("more PMUs than buses");
    for (int attempt = 0; attempt < 200000; ++attempt) {
        std::set<int> picked;
        while (static_cast<int>(picked.size()) < recipe.pmu_count)
            picked.insert(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n))));
        if (recipe.pmu_branch_target >= 0) {
            int incident = 0;
            for (int bus : picked) incident += static_cast<int>(sys.incident(bus).size());
            if (incident != recipe.pmu_branch_target) continue;
        }
        return {picked.begin(), picked.end()};
    }
    throw GenerationError("could not draw PMU buses matching the incident-branch target");
}

} // namespace

MeasurementSet draw_placement(const PowerSystem& sys, const SampleRecipe& recipe) {
    Rng rng(recipe.placement_seed, 0x9a7ce);
    MeasurementSet ms;

    // Legacy pool. Active/reactive channels come as pairs, the way SCADA
    // RTUs report them; voltage and current magnitudes are single channels.
    std::vector<std::vector<Measurement>> pool;
    for (int br = 0; br < sys.branch_count(); ++br) {
        for (BranchSide side : {BranchSide::from_side, BranchSide::to_side}) {
            pool.push_back({make_branch_measurement(MeasurementKind::active_flow, br, side,
                                                    class_variance(MeasurementKind::active_flow,
                                                                   recipe.noise)),
                            make_branch_measurement(MeasurementKind::reactive_flow, br, side,
                                                    class_variance(MeasurementKind::reactive_flow,
                                                                   recipe.noise))});
            pool.push_back({make_branch_measurement(
                MeasurementKind::current_magnitude, br, side,
                class_variance(MeasurementKind::current_magnitude, recipe.noise))});
        }
    }
    for (int bus = 0; bus < sys.bus_count(); ++bus) {
        pool.push_back(
            {make_bus_measurement(MeasurementKind::active_injection, bus,
                                  class_variance(MeasurementKind::active_injection, recipe.noise)),
             make_bus_measurement(MeasurementKind::reactive_injection, bus,
                                  class_variance(MeasurementKind::reactive_injection,
                                                 recipe.noise))});
        pool.push_back({make_bus_measurement(
            MeasurementKind::voltage_magnitude, bus,
            class_variance(MeasurementKind::voltage_magnitude, recipe.noise))});
    }
    std::size_t channels = 0;
    for (const auto& unit : pool) channels += unit.size();
    if (recipe.legacy_count > static_cast<int>(channels))
        throw GenerationError("legacy_count exceeds the candidate pool");
    rng.shuffle(pool);
    for (const auto& unit : pool) {
        if (static_cast<int>(ms.items.size()) + static_cast<int>(unit.size()) >
            recipe.legacy_count)
            continue;
        ms.items.insert(ms.items.end(), unit.begin(), unit.end());
        if (static_cast<int>(ms.items.size()) == recipe.legacy_count) break;
    }
    if (static_cast<int>(ms.items.size()) != recipe.legacy_count)
        throw GenerationError("could not assemble the requested legacy channel count");

    // PMUs: bus voltage phasor plus current phasors on all incident branches.
    for (int bus : draw_pmu_buses(sys, recipe, rng)) {
        const double v = recipe.noise.phasor;
        ms.items.push_back(make_bus_measurement(MeasurementKind::pmu_voltage_magnitude, bus, v));
        ms.items.push_back(make_bus_measurement(MeasurementKind::pmu_voltage_angle, bus, v));
        for (const IncidentBranch& inc : sys.incident(bus)) {
            ms.items.push_back(
                make_branch_measurement(MeasurementKind::pmu_current_magnitude, inc.branch,
                                        inc.side, v));
            ms.items.push_back(make_branch_measurement(MeasurementKind::pmu_current_angle,
                                                       inc.branch, inc.side, v));
        }
    }
    ms.validate(sys);
    return ms;
}

Sample generate_sample(const CaseData& data, const MeasurementSet& placement,
                       const SampleRecipe& recipe, Rng& rng) {
    const PowerSystem& sys = data.system;
    for (int attempt = 0; attempt < recipe.max_sample_retries; ++attempt) {
        CaseData scaled = data;
        for (LoadEntry& load : scaled.loads) {
            load.p *= rng.uniform(recipe.load_scale_low, recipe.load_scale_high);
            load.q *= rng.uniform(recipe.load_scale_low, recipe.load_scale_high);
        }
        Sample sample;
        try {
            sample.truth = solve_power_flow(sys, nominal_power_flow_spec(scaled));
        } catch (const std::exception&) {
            continue;
        }
        sample.measurements = placement;
        for (Measurement& m : sample.measurements.items) {
            double value = eval_h(sys, sample.truth, m);
            value += recipe.noise_scale * rng.normal(0.0, std::sqrt(m.variance));
            if (is_angle_kind(m.kind)) value = wrap_angle(value);
            m.value = value;
            m.provenance = recipe.noise_scale == 0.0 ? Provenance::clean : Provenance::noisy;
        }
        GnReport report;
        GnSettings settings;
        settings.estimate_condition = false;
        auto label = try_gn_solve(sys, sample.measurements, settings, report);
        if (!label) continue;
        // Statistical gate: a correct fit has weighted residual rms near 1
        // (near 0 for noiseless values); a wrong local basin shows up orders
        // of magnitude above it and is rejected like a divergence.
        if (report.final_residual_norm > 5.0) continue;
        sample.label = std::move(*label);
        return sample;
    }
    throw GenerationError("sample generation exhausted " +
                          std::to_string(recipe.max_sample_retries) + " retries");
}

namespace {

void run_parallel(int count, int threads, const std::function<void(int)>& work) {
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) work(i);
        return;
    }
    std::vector<std::thread> workers;
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        workers.emplace_back([&, t] {
            try {
                for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) work(i);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (std::thread& w : workers) w.join();
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace

namespace {

// Buses a measurement touches.
std::vector<int> measurement_buses(const Measurement& m, const PowerSystem& sys) {
    if (m.on_branch()) {
        const Branch& br = sys.branches[static_cast<std::size_t>(m.branch)];
        return {br.from_bus, br.to_bus};
    }
    return {m.bus};
}

bool touches_any(const Measurement& m, const PowerSystem& sys, const std::set<int>& buses) {
    for (int bus : measurement_buses(m, sys))
        if (buses.count(bus)) return true;
    return false;
}

std::vector<int> pick_k(std::vector<int> candidates, int k, Rng& rng) {
    rng.shuffle(candidates);
    candidates.resize(static_cast<std::size_t>(k));
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

} // namespace

MeasurementSet draw_validated_placement(const CaseData& data, SampleRecipe& recipe,
                                        std::uint64_t master_seed) {
    // Redraw with stepped seeds until a placement labels cleanly: a zero-
    // noise nominal probe plus a handful of scaled noisy probes must all
    // produce converged Gauss-Newton solutions. This rejects both
    // unobservable draws and placements whose current-phasor channels sit on
    // branches too lightly loaded to estimate reliably.
    const SampleRecipe requested = recipe;
    for (int attempt = 0; attempt < 200; ++attempt) {
        SampleRecipe effective = requested;
        effective.placement_seed = requested.placement_seed + static_cast<std::uint64_t>(attempt);
        MeasurementSet candidate;
        try {
            candidate = draw_placement(data.system, effective);
        } catch (const GenerationError&) {
            throw;
        }
        // Cheap structural pre-check: every bus must be touched.
        std::vector<char> touched(static_cast<std::size_t>(data.system.bus_count()), 0);
        for (const Measurement& m : candidate.items)
            for (int bus : measurement_buses(m, data.system))
                touched[static_cast<std::size_t>(bus)] = 1;
        if (std::find(touched.begin(), touched.end(), 0) != touched.end()) continue;

        bool healthy = true;
        {
            SampleRecipe probe = effective;
            probe.noise_scale = 0.0;
            probe.load_scale_low = probe.load_scale_high = 1.0;
            probe.max_sample_retries = 1;
            Rng probe_rng(master_seed, 0xdead);
            try {
                (void)generate_sample(data, candidate, probe, probe_rng);
            } catch (const std::exception&) {
                healthy = false;
            }
        }
        for (int probe_index = 0; probe_index < 5 && healthy; ++probe_index) {
            SampleRecipe probe = effective;
            probe.max_sample_retries = 1;
            Rng probe_rng(master_seed, 0xbeef + static_cast<std::uint64_t>(probe_index));
            try {
                (void)generate_sample(data, candidate, probe, probe_rng);
            } catch (const std::exception&) {
                healthy = false;
            }
        }
        if (healthy) {
            recipe = effective;
            return candidate;
        }
    }
    throw GenerationError("no placement produced reliable labels within 200 draws");
}

Dataset generate_dataset(const CaseData& data, const SampleRecipe& recipe, DatasetSizes sizes,
                         std::uint64_t master_seed, int threads) {
    Dataset dataset;
    dataset.case_data = data;
    dataset.recipe = recipe;
    dataset.master_seed = master_seed;

    SampleRecipe effective = recipe;
    dataset.placement = draw_validated_placement(data, effective, master_seed);
    dataset.recipe = effective;

    auto fill_split = [&](std::vector<Sample>& split, int count, std::uint64_t stream_base) {
        split.resize(static_cast<std::size_t>(count));
        run_parallel(count, threads, [&](int i) {
            Rng rng(master_seed, stream_base + static_cast<std::uint64_t>(i));
            split[static_cast<std::size_t>(i)] =
                generate_sample(data, dataset.placement, dataset.recipe, rng);
        });
    };
    fill_split(dataset.train, sizes.train, 0);
    fill_split(dataset.val, sizes.val, 1u << 24);
    fill_split(dataset.test, sizes.test, 1u << 25);
    return dataset;
}

namespace {

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_state_csv(std::ostream& out, const std::vector<Sample>& split, bool truth) {
    out << "sample,bus,V,theta\n";
    for (std::size_t si = 0; si < split.size(); ++si) {
        const StateVector& x = truth ? split[si].truth : split[si].label;
        for (int bus = 0; bus < x.size(); ++bus)
            out << si << "," << bus << "," << format_real(x.vm[bus]) << ","
                << format_real(x.va[bus]) << "\n";
    }
}

void write_split(const std::filesystem::path& dir, const std::string& name,
                 const std::vector<Sample>& split, const PowerSystem& sys) {
    std::ofstream meas(dir / (name + "_measurements.csv"));
    meas << "sample,kind,location,direction,value,variance,provenance\n";
    for (std::size_t si = 0; si < split.size(); ++si) {
        std::istringstream rows(serialize_measurements(split[si].measurements, sys));
        std::string row;
        std::getline(rows, row); // drop header
        while (std::getline(rows, row)) meas << si << "," << row << "\n";
    }
    std::ofstream labels(dir / (name + "_labels.csv"));
    write_state_csv(labels, split, false);
    std::ofstream truth(dir / (name + "_truth.csv"));
    write_state_csv(truth, split, true);
}

std::vector<Sample> read_split(const std::filesystem::path& dir, const std::string& name,
                               const PowerSystem& sys) {
    std::ifstream meas(dir / (name + "_measurements.csv"));
    if (!meas) throw IoError("missing split file " + name + "_measurements.csv");
    std::vector<Sample> split;
    std::string line;
    std::getline(meas, line); // header
    // Rebuild each sample's CSV block and reuse the measurement parser.
    std::vector<std::string> blocks;
    while (std::getline(meas, line)) {
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        const std::size_t sample_index = std::stoul(line.substr(0, comma));
        if (sample_index >= blocks.size()) blocks.resize(sample_index + 1);
        blocks[sample_index] += line.substr(comma + 1) + "\n";
    }
    split.resize(blocks.size());
    for (std::size_t si = 0; si < blocks.size(); ++si)
        split[si].measurements =
            parse_measurements("kind,location,direction,value,variance,provenance\n" + blocks[si],
                               sys);
    auto read_states = [&](const std::string& suffix, bool truth) {
        std::ifstream in(dir / (name + suffix));
        if (!in) throw IoError("missing split file " + name + suffix);
        std::string row;
        std::getline(in, row);
        while (std::getline(in, row)) {
            if (row.empty()) continue;
            std::istringstream fields(row);
            std::string tok;
            std::getline(fields, tok, ',');
            const std::size_t si = std::stoul(tok);
            std::getline(fields, tok, ',');
            const int bus = std::stoi(tok);
            StateVector& x = truth ? split.at(si).truth : split.at(si).label;
            if (x.size() == 0) x = StateVector::flat(sys.bus_count());
            std::getline(fields, tok, ',');
            x.vm[bus] = std::stod(tok);
            std::getline(fields, tok, ',');
            x.va[bus] = std::stod(tok);
        }
    };
    read_states("_labels.csv", false);
    read_states("_truth.csv", true);
    return split;
}

} // namespace

void save_dataset(const Dataset& dataset, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path root(dir);
    save_case_file(dataset.case_data, (root / "system.case").string());
    {
        std::ofstream placement(root / "placement.csv");
        placement << serialize_measurements(dataset.placement, dataset.case_data.system);
    }
    std::ofstream manifest(root / "manifest.txt");
    if (!manifest) throw IoError("cannot write dataset manifest in " + dir);
    manifest << "format_version 1\n";
    manifest << "system " << dataset.recipe.system_id << "\n";
    manifest << "master_seed " << dataset.master_seed << "\n";
    manifest << "placement_seed " << dataset.recipe.placement_seed << "\n";
    manifest << "legacy_count " << dataset.recipe.legacy_count << "\n";
    manifest << "pmu_count " << dataset.recipe.pmu_count << "\n";
    manifest << "pmu_branch_target " << dataset.recipe.pmu_branch_target << "\n";
    manifest << "noise_phasor " << format_real(dataset.recipe.noise.phasor) << "\n";
    manifest << "noise_legacy " << format_real(dataset.recipe.noise.legacy_flow_voltage) << "\n";
    manifest << "noise_injection " << format_real(dataset.recipe.noise.injection) << "\n";
    manifest << "noise_scale " << format_real(dataset.recipe.noise_scale) << "\n";
    manifest << "load_scale " << format_real(dataset.recipe.load_scale_low) << " "
             << format_real(dataset.recipe.load_scale_high) << "\n";
    manifest << "sizes " << dataset.train.size() << " " << dataset.val.size() << " "
             << dataset.test.size() << "\n";
    write_split(root, "train", dataset.train, dataset.case_data.system);
    write_split(root, "val", dataset.val, dataset.case_data.system);
    write_split(root, "test", dataset.test, dataset.case_data.system);
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    Dataset dataset;
    dataset.case_data = load_case_file((root / "system.case").string());
    {
        std::ifstream placement(root / "placement.csv");
        if (!placement) throw IoError("missing placement.csv in " + dir);
        std::ostringstream buf;
        buf << placement.rdbuf();
        dataset.placement = parse_measurements(buf.str(), dataset.case_data.system);
    }
    std::ifstream manifest(root / "manifest.txt");
    if (!manifest) throw IoError("missing manifest.txt in " + dir);
    std::string key;
    while (manifest >> key) {
        if (key == "system")
            manifest >> dataset.recipe.system_id;
        else if (key == "master_seed")
            manifest >> dataset.master_seed;
        else if (key == "placement_seed")
            manifest >> dataset.recipe.placement_seed;
        else if (key == "legacy_count")
            manifest >> dataset.recipe.legacy_count;
        else if (key == "pmu_count")
            manifest >> dataset.recipe.pmu_count;
        else if (key == "pmu_branch_target")
            manifest >> dataset.recipe.pmu_branch_target;
        else if (key == "noise_phasor")
            manifest >> dataset.recipe.noise.phasor;
        else if (key == "noise_legacy")
            manifest >> dataset.recipe.noise.legacy_flow_voltage;
        else if (key == "noise_injection")
            manifest >> dataset.recipe.noise.injection;
        else if (key == "noise_scale")
            manifest >> dataset.recipe.noise_scale;
        else if (key == "load_scale")
            manifest >> dataset.recipe.load_scale_low >> dataset.recipe.load_scale_high;
        else {
            std::string rest;
            std::getline(manifest, rest);
        }
    }
    dataset.train = read_split(root, "train", dataset.case_data.system);
    dataset.val = read_split(root, "val", dataset.case_data.system);
    dataset.test = read_split(root, "test", dataset.case_data.system);
    return dataset;
}

ScenarioSample apply_exclusion(const Sample& sample, double fraction, Rng& rng) {
    if (fraction < 0.0 || fraction > 0.95)
        throw ScenarioError("exclusion fraction must lie in [0, 0.95]");
    ScenarioSample scenario;
    scenario.measurements = sample.measurements;
    const int m = sample.measurements.size();
    const int k = static_cast<int>(std::floor(fraction * m));
    if (k > 0) {
        std::vector<int> all(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) all[static_cast<std::size_t>(i)] = i;
        scenario.removed = pick_k(std::move(all), k, rng);
    }
    return scenario;
}

ScenarioSample apply_neighborhood_exclusion(const Sample& sample, const PowerSystem& sys,
                                            Rng& rng) {
    // Eligible pairs are directly connected buses with at least five
    // incident measurements.
    std::vector<std::pair<int, int>> eligible;
    std::vector<std::vector<int>> incident_lists;
    std::set<std::pair<int, int>> seen;
    for (const Branch& br : sys.branches) {
        const auto pair = std::minmax(br.from_bus, br.to_bus);
        if (!seen.insert({pair.first, pair.second}).second) continue;
        std::set<int> buses{br.from_bus, br.to_bus};
        std::vector<int> incident;
        for (int i = 0; i < sample.measurements.size(); ++i)
            if (touches_any(sample.measurements.items[static_cast<std::size_t>(i)], sys, buses))
                incident.push_back(i);
        if (static_cast<int>(incident.size()) >= 5) {
            eligible.emplace_back(pair.first, pair.second);
            incident_lists.push_back(std::move(incident));
        }
    }
    if (eligible.empty())
        throw ScenarioError("no adjacent bus pair with >= 5 incident measurements");
    const std::size_t pick = static_cast<std::size_t>(rng.uniform_index(eligible.size()));
    ScenarioSample scenario;
    scenario.measurements = sample.measurements;
    scenario.bus_a = eligible[pick].first;
    scenario.bus_b = eligible[pick].second;
    scenario.removed = pick_k(incident_lists[pick], 5, rng);
    return scenario;
}

ScenarioSample apply_attack(const Sample& sample, const PowerSystem& sys, Rng& rng, double scale) {
    std::vector<int> eligible_buses;
    std::vector<std::vector<int>> neighborhoods;
    for (int bus = 0; bus < sys.bus_count(); ++bus) {
        std::set<int> hood{bus};
        for (int neighbor : sys.bus_adjacency()[static_cast<std::size_t>(bus)])
            hood.insert(neighbor);
        std::vector<int> incident;
        for (int i = 0; i < sample.measurements.size(); ++i)
            if (touches_any(sample.measurements.items[static_cast<std::size_t>(i)], sys, hood))
                incident.push_back(i);
        if (static_cast<int>(incident.size()) >= 5) {
            eligible_buses.push_back(bus);
            neighborhoods.push_back(std::move(incident));
        }
    }
    if (eligible_buses.empty())
        throw ScenarioError("no bus with >= 5 measurements in its 1-hop neighbourhood");
    const std::size_t pick = static_cast<std::size_t>(rng.uniform_index(eligible_buses.size()));
    ScenarioSample scenario;
    scenario.measurements = sample.measurements;
    scenario.bus_a = eligible_buses[pick];
    for (int index : pick_k(neighborhoods[pick], 5, rng)) {
        Measurement& m = scenario.measurements.items[static_cast<std::size_t>(index)];
        const double bump = scale * rng.uniform(-1.0, 1.0) * std::max(0.5, 5.0 * std::abs(m.value));
        m.value += bump;
        if (is_angle_kind(m.kind)) m.value = wrap_angle(m.value);
        if (scale != 0.0) m.provenance = Provenance::attacked;
    }
    return scenario;
}

MeasurementSet scenario_measurements(const ScenarioSample& scenario) {
    MeasurementSet reduced;
    std::size_t cursor = 0;
    for (int i = 0; i < scenario.measurements.size(); ++i) {
        if (cursor < scenario.removed.size() && scenario.removed[cursor] == i) {
            ++cursor;
            continue;
        }
        reduced.items.push_back(scenario.measurements.items[static_cast<std::size_t>(i)]);
    }
    return reduced;
}

CaseData make_chain_case(int n_buses) {
    if (n_buses < 2) throw ValidationError("chain needs at least 2 buses");
    CaseData data;
    data.system.base_mva = 100.0;
    for (int i = 0; i < n_buses; ++i) {
        Bus bus;
        bus.id = i;
        bus.kind = i == 0 ? BusKind::reference : BusKind::load;
        data.system.buses.push_back(bus);
    }
    for (int i = 0; i + 1 < n_buses; ++i) {
        Branch br;
        br.from_bus = i;
        br.to_bus = i + 1;
        // r = 0.01, x = 0.05 line with light charging.
        br.g = 0.01 / (0.01 * 0.01 + 0.05 * 0.05);
        br.b = -0.05 / (0.01 * 0.01 + 0.05 * 0.05);
        br.b_shunt_half = 0.005;
        data.system.branches.push_back(br);
    }
    data.system.finalize();
    for (int i = 1; i < n_buses; ++i) data.loads.push_back({i, 0.01, 0.003});
    data.generators.push_back({0, 0.0, 1.0});
    return data;
}

MeasurementSet chain_placement(const PowerSystem& sys) {
    MeasurementSet ms;
    NoiseClasses noise;
    for (int bus = 0; bus < sys.bus_count(); ++bus) {
        ms.items.push_back(make_bus_measurement(MeasurementKind::voltage_magnitude, bus,
                                                noise.legacy_flow_voltage));
        ms.items.push_back(
            make_bus_measurement(MeasurementKind::active_injection, bus, noise.injection));
        ms.items.push_back(
            make_bus_measurement(MeasurementKind::reactive_injection, bus, noise.injection));
    }
    for (int br = 0; br < sys.branch_count(); ++br) {
        ms.items.push_back(make_branch_measurement(MeasurementKind::active_flow, br,
                                                   BranchSide::from_side,
                                                   noise.legacy_flow_voltage));
        ms.items.push_back(make_branch_measurement(MeasurementKind::reactive_flow, br,
                                                   BranchSide::from_side,
                                                   noise.legacy_flow_voltage));
    }
    ms.validate(sys);
    return ms;
}

} // namespace gridnse
