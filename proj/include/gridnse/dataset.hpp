#pragma once

#include "gridnse/gn_estimator.hpp"
#include "gridnse/power_flow.hpp"
#include "gridnse/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gridnse {

/// Gaussian noise variances per measurement class.
struct NoiseClasses {
    double phasor = 1e-5;
    double legacy_flow_voltage = 1e-3; // flows, voltage and current magnitudes
    double injection = 1e-1;
};

struct SampleRecipe {
    std::string system_id = "case";
    int legacy_count = 100;
    int pmu_count = 3;
    /// Expected total of PMU incident branches (each PMU reports its bus
    /// voltage phasor plus current phasors on every incident branch); -1
    /// accepts any draw. Pinning it reproduces published channel counts.
    int pmu_branch_target = -1;
    std::vector<int> pmu_buses; // explicit placement; drawn from seed when empty
    NoiseClasses noise;
    double noise_scale = 1.0; // 0 gives noiseless values while keeping variances
    double load_scale_low = 0.7;
    double load_scale_high = 1.3;
    std::uint64_t placement_seed = 1;
    int max_sample_retries = 10;
};

struct Sample {
    MeasurementSet measurements;
    StateVector label; // converged Gauss-Newton solution
    StateVector truth; // power-flow solution the values were synthesized from
    std::string scenario = "clean";
};

/// Measurement placement (kinds, locations, variances; values zero), fixed
/// per dataset. Deterministic in recipe.placement_seed. Throws
/// GenerationError when the draw cannot satisfy the recipe.
MeasurementSet draw_placement(const PowerSystem& sys, const SampleRecipe& recipe);

/// One labeled sample: scaled loads -> power flow truth -> noisy values ->
/// Gauss-Newton label. Diverging draws are rejected and redrawn up to
/// recipe.max_sample_retries times.
Sample generate_sample(const CaseData& data, const MeasurementSet& placement,
                       const SampleRecipe& recipe, Rng& rng);

struct DatasetSizes {
    int train = 10000;
    int val = 100;
    int test = 100;
};

struct Dataset {
    CaseData case_data;
    SampleRecipe recipe;
    MeasurementSet placement;
    std::uint64_t master_seed = 0;
    std::vector<Sample> train, val, test;
};

/// Steps recipe.placement_seed until the drawn placement labels cleanly
/// (observable and Gauss-Newton-friendly under load scaling); the accepted
/// seed is written back into `recipe`.
MeasurementSet draw_validated_placement(const CaseData& data, SampleRecipe& recipe,
                                        std::uint64_t master_seed);

/// Draws a validated placement, then generates the splits from disjoint
/// per-sample seed streams (parallel across samples).
Dataset generate_dataset(const CaseData& data, const SampleRecipe& recipe, DatasetSizes sizes,
                         std::uint64_t master_seed, int threads = 1);

void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Scenario edit of one sample: same measurement order with possibly altered
/// values, plus the indices to drop. Labels and truth stay untouched.
struct ScenarioSample {
    MeasurementSet measurements;
    std::vector<int> removed; // ascending indices into the original set
    int bus_a = -1, bus_b = -1; // exclusion pair / attacked bus
};

/// Uniformly removes floor(fraction * m) measurements.
ScenarioSample apply_exclusion(const Sample& sample, double fraction, Rng& rng);

/// Removes exactly five measurements incident to a random adjacent bus pair.
ScenarioSample apply_neighborhood_exclusion(const Sample& sample, const PowerSystem& sys,
                                            Rng& rng);

/// Corrupts five measurements in a random bus's 1-hop neighbourhood:
/// value += scale * U(-1,1) * max(0.5, 5|value|).
ScenarioSample apply_attack(const Sample& sample, const PowerSystem& sys, Rng& rng,
                            double scale = 1.0);

/// Reduced measurement set for estimators that consume the scenario.
MeasurementSet scenario_measurements(const ScenarioSample& scenario);

/// Synthetic radial chain for complexity probes: bus i - bus i+1 lines with
/// identical parameters, light loads, bus 0 as reference.
CaseData make_chain_case(int n_buses);

/// Chain placement: voltage + P/Q injection per bus, P/Q flow per branch.
MeasurementSet chain_placement(const PowerSystem& sys);

} // namespace gridnse
