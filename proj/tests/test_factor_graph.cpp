#include "gridnse/errors.hpp"
#include "gridnse/factor_graph.hpp"
#include "gridnse/matpower.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace gridnse;
namespace gt = gridnse::testing;

namespace {

// The two-bus system of the worked example: one voltage phasor on bus 0,
// one legacy voltage magnitude on bus 1, one current phasor and one legacy
// active flow on the branch.
MeasurementSet figure_set() {
    MeasurementSet ms;
    auto bus_m = [](MeasurementKind kind, int bus, double variance) {
        Measurement m;
        m.kind = kind;
        m.bus = bus;
        m.variance = variance;
        return m;
    };
    auto branch_m = [](MeasurementKind kind) {
        Measurement m;
        m.kind = kind;
        m.branch = 0;
        m.side = BranchSide::from_side;
        m.variance = 1e-5;
        return m;
    };
    ms.items.push_back(bus_m(MeasurementKind::pmu_voltage_magnitude, 0, 1e-5));
    ms.items.push_back(bus_m(MeasurementKind::pmu_voltage_angle, 0, 1e-5));
    ms.items.push_back(branch_m(MeasurementKind::pmu_current_magnitude));
    ms.items.push_back(branch_m(MeasurementKind::pmu_current_angle));
    ms.items.push_back(bus_m(MeasurementKind::voltage_magnitude, 1, 1e-3));
    Measurement flow;
    flow.kind = MeasurementKind::active_flow;
    flow.branch = 0;
    flow.side = BranchSide::from_side;
    flow.variance = 1e-3;
    ms.items.push_back(flow);
    return ms;
}

std::set<std::pair<int, int>> edge_set(const AugmentedFactorGraph& g) {
    return {g.variable_edges.begin(), g.variable_edges.end()};
}

} // namespace

TEST_CASE("worked two-bus example: 4 variable nodes, 6 factor nodes") {
    const CaseData data = gt::two_bus_case();
    const AugmentedFactorGraph g = build_factor_graph(data.system, figure_set());
    CHECK(g.variable_count() == 4);
    CHECK(g.factor_count() == 6);
    // Bus measurements connect to the bus pair, branch measurements to all
    // four terminal variable nodes.
    std::vector<int> degree(6, 0);
    for (const auto& [fid, vid] : g.factor_edges) {
        ++degree[fid];
        CHECK(vid >= 0);
        CHECK(vid < 4);
    }
    CHECK(degree == std::vector<int>{2, 2, 4, 4, 2, 4});

    // All 6 variable pairs are one factor apart, so augmentation is complete.
    CHECK(g.variable_edges.size() == 6);
    const auto edges = edge_set(g);
    for (int a = 0; a < 4; ++a)
        for (int b = a + 1; b < 4; ++b) CHECK(edges.count({a, b}) == 1);
}

TEST_CASE("empty measurement set: variable nodes only, no edges") {
    const CaseData data = gt::two_bus_case();
    const AugmentedFactorGraph g = build_factor_graph(data.system, MeasurementSet{});
    CHECK(g.variable_count() == 4);
    CHECK(g.factor_count() == 0);
    CHECK(g.factor_edges.empty());
    CHECK(g.variable_edges.empty());
}

TEST_CASE("counts invariant on the IEEE 30 recipe-scale set") {
    const CaseData data = load_matpower_file(gt::source_path("data/case30.m"));
    MeasurementSet ms;
    int legacy = 0, phasor_channels = 0;
    // Mixed set across the system.
    for (int bus = 0; bus < data.system.bus_count(); ++bus) {
        Measurement m;
        m.kind = bus % 3 == 0 ? MeasurementKind::pmu_voltage_magnitude
                              : MeasurementKind::active_injection;
        m.bus = bus;
        m.variance = 1e-3;
        ms.items.push_back(m);
        bus % 3 == 0 ? ++phasor_channels : ++legacy;
    }
    const AugmentedFactorGraph g = build_factor_graph(data.system, ms);
    CHECK(g.variable_count() == 60);
    CHECK(g.factor_count() == legacy + phasor_channels);
    // Bipartiteness of the factor-variable subset holds by construction
    // (edges always pair a factor id with a variable id).
    for (const auto& [fid, vid] : g.factor_edges) {
        CHECK(fid < g.factor_count());
        CHECK(vid < g.variable_count());
    }
}

TEST_CASE("feature encoding: binary ids, variance scaling, one-hot kinds") {
    const CaseData data = gt::two_bus_case();
    AugmentedFactorGraph g = build_factor_graph(data.system, figure_set());
    encode_features(g, 30); // width max(ceil(log2(60)) = 6, 12) = 12
    CHECK(g.feature_width == 12);
    CHECK(g.variable_features.rows() == 4);
    CHECK(g.variable_features.cols() == 12);

    // id 5 with 6 encoding bits reads 000101, MSB first.
    AugmentedFactorGraph wide = build_factor_graph(data.system, figure_set());
    encode_features(wide, 30);
    // Only ids 0..3 exist here; check id 3 = 000011.
    for (int bit = 0; bit < 6; ++bit)
        CHECK(wide.variable_features(3, bit) == (bit >= 4 ? 1.0 : 0.0));

    refresh_factor_values(g, figure_set());
    // Variance 1e-3 -> scaled 0; 1e-5 -> -1.
    CHECK(g.factor_features(0, 1) == doctest::Approx(-1.0)); // phasor
    CHECK(g.factor_features(4, 1) == doctest::Approx(0.0));  // legacy voltage
    // One-hot of the legacy active flow sits at offset 2 + kind index 0.
    CHECK(g.factor_features(5, 2 + 0) == 1.0);
    CHECK(g.factor_features(5, 2 + 5) == 0.0);

    SUBCASE("node id exceeding the encoding width is a config error") {
        const CaseData big = load_matpower_file(gt::source_path("data/case30.m"));
        AugmentedFactorGraph gg = build_factor_graph(big.system, MeasurementSet{});
        CHECK_THROWS_AS(encode_features(gg, 2), ConfigError);
    }

    SUBCASE("all feature vectors share one width") {
        const CaseData c30 = load_matpower_file(gt::source_path("data/case30.m"));
        MeasurementSet one;
        Measurement m;
        m.kind = MeasurementKind::voltage_magnitude;
        m.bus = 0;
        m.variance = 1e-3;
        one.items.push_back(m);
        AugmentedFactorGraph gg = build_factor_graph(c30.system, one);
        encode_features(gg, c30.system.bus_count());
        CHECK(gg.variable_features.cols() == gg.factor_features.cols());
    }
}

TEST_CASE("binary encoding of id 5 at width 6") {
    // Direct check of the documented example via a 3-bus system (ids 0..5).
    const char* text =
        "[buses]\n"
        "0 reference 0 0\n"
        "1 load 0 0\n"
        "2 load 0 0\n"
        "[branches]\n"
        "0 1 1.0 -10.0 0 1.0 0\n"
        "1 2 1.0 -10.0 0 1.0 0\n";
    const PowerSystem sys = parse_case(text);
    AugmentedFactorGraph g = build_factor_graph(sys, MeasurementSet{});
    encode_features(g, 32); // 2*32 = 64 ids -> 6 bits
    const Eigen::VectorXd id5 = g.variable_features.row(5);
    CHECK(id5[0] == 0.0);
    CHECK(id5[1] == 0.0);
    CHECK(id5[2] == 0.0);
    CHECK(id5[3] == 1.0);
    CHECK(id5[4] == 0.0);
    CHECK(id5[5] == 1.0);
}

TEST_CASE("remove_factors keeps variable nodes and augmentation edges") {
    const CaseData data = gt::two_bus_case();
    AugmentedFactorGraph g = build_factor_graph(data.system, figure_set());
    encode_features(g, 30);
    refresh_factor_values(g, figure_set());

    SUBCASE("removing both branch measurements keeps the dashed bridge") {
        const AugmentedFactorGraph cut = remove_factors(g, {2, 3, 5});
        CHECK(cut.factor_count() == 3);
        CHECK(cut.variable_count() == 4);
        CHECK(cut.variable_edges.size() == 6); // retained in full
        // Factor side now only touches per-bus nodes, yet the cross-bus
        // variable edges still bridge the two buses.
        const auto edges = edge_set(cut);
        CHECK(edges.count({0, 2}) == 1);
        CHECK(edges.count({1, 3}) == 1);
    }

    SUBCASE("removing nothing is the identity") {
        const AugmentedFactorGraph same = remove_factors(g, {});
        CHECK(same.factor_count() == g.factor_count());
        CHECK(same.factor_edges == g.factor_edges);
        CHECK(same.variable_edges == g.variable_edges);
    }

    SUBCASE("removing everything leaves the variable side intact") {
        const AugmentedFactorGraph empty = remove_factors(g, {0, 1, 2, 3, 4, 5});
        CHECK(empty.factor_count() == 0);
        CHECK(empty.factor_edges.empty());
        CHECK(empty.variable_count() == 4);
        CHECK(empty.variable_edges.size() == 6);
    }

    SUBCASE("unknown reference throws") {
        CHECK_THROWS_AS(remove_factors(g, {42}), ValidationError);
    }
}

TEST_CASE("same-bus variable pair stays connected when any measurement touched it") {
    const CaseData data = gt::two_bus_case();
    AugmentedFactorGraph g = build_factor_graph(data.system, figure_set());
    // Remove all factors; the (V, theta) pair of each bus shares an edge
    // because bus and branch factors induced it at build time.
    const AugmentedFactorGraph cut = remove_factors(g, {0, 1, 2, 3, 4, 5});
    const auto edges = edge_set(cut);
    CHECK(edges.count({0, 1}) == 1);
    CHECK(edges.count({2, 3}) == 1);
}

TEST_CASE("building twice yields identical edge sets") {
    const CaseData data = load_matpower_file(gt::source_path("data/case30.m"));
    MeasurementSet ms;
    for (int br = 0; br < data.system.branch_count(); br += 2) {
        Measurement m;
        m.kind = MeasurementKind::active_flow;
        m.branch = br;
        m.side = BranchSide::from_side;
        m.variance = 1e-3;
        ms.items.push_back(m);
    }
    const AugmentedFactorGraph a = build_factor_graph(data.system, ms);
    const AugmentedFactorGraph b = build_factor_graph(data.system, ms);
    CHECK(a.factor_edges == b.factor_edges);
    CHECK(a.variable_edges == b.variable_edges);
}

TEST_CASE("khop subgraph: hops=0 keeps the bus pair and its bus factors") {
    const CaseData data = gt::two_bus_case();
    AugmentedFactorGraph g = build_factor_graph(data.system, figure_set());
    encode_features(g, 30);
    refresh_factor_values(g, figure_set());
    const Subgraph sub = khop_subgraph(g, 0, 0);
    CHECK(sub.graph.variable_count() == 2); // V0, th0
    REQUIRE(sub.factor_map.size() == 2);    // the two bus-located phasor channels
    CHECK(g.factors[sub.factor_map[0]].bus_b == -1);
    CHECK(g.factors[sub.factor_map[1]].bus_b == -1);
}

TEST_CASE("khop subgraph: hops=1 covers the whole two-bus graph") {
    const CaseData data = gt::two_bus_case();
    AugmentedFactorGraph g = build_factor_graph(data.system, figure_set());
    encode_features(g, 30);
    refresh_factor_values(g, figure_set());
    const Subgraph sub = khop_subgraph(g, 1, 1);
    CHECK(sub.graph.variable_count() == 4);
    CHECK(sub.graph.factor_count() == 6);
    CHECK(sub.graph.factor_edges.size() == g.factor_edges.size());
    CHECK(sub.graph.variable_edges.size() == g.variable_edges.size());

    SUBCASE("unknown bus throws") { CHECK_THROWS_AS(khop_subgraph(g, 9, 1), ValidationError); }
}

TEST_CASE("khop subgraph on a chain touches a bounded, n-independent bus set") {
    const char* header =
        "[buses]\n"
        "0 reference 0 0\n";
    std::string text = header;
    const int n = 40;
    for (int i = 1; i < n; ++i) text += std::to_string(i) + " load 0 0\n";
    text += "[branches]\n";
    for (int i = 0; i + 1 < n; ++i)
        text += std::to_string(i) + " " + std::to_string(i + 1) + " 1.0 -10.0 0 1.0 0\n";
    const PowerSystem sys = parse_case(text);
    MeasurementSet ms;
    for (int i = 0; i + 1 < n; ++i) {
        Measurement m;
        m.kind = MeasurementKind::active_flow;
        m.branch = i;
        m.side = BranchSide::from_side;
        m.variance = 1e-3;
        ms.items.push_back(m);
    }
    AugmentedFactorGraph g = build_factor_graph(sys, ms);
    encode_features(g, n);
    refresh_factor_values(g, ms);
    const int hops = 2;
    const Subgraph sub = khop_subgraph(g, 20, hops);
    std::set<int> buses;
    for (int vid : sub.variable_map) buses.insert(g.variables[vid].bus);
    // The dependency closure spans up to 2*hops buses each way once
    // variable-variable shortcuts exist; it never grows with n.
    CHECK(buses.size() <= static_cast<std::size_t>(2 * (2 * hops) + 1));
    for (int bus : buses) CHECK(std::abs(bus - 20) <= 2 * hops);
}

TEST_CASE("graph dump lists nodes and typed edges") {
    const CaseData data = gt::two_bus_case();
    const AugmentedFactorGraph g = build_factor_graph(data.system, figure_set());
    const std::string dump = dump_factor_graph(g);
    CHECK(dump.find("var 0 bus 0 V") != std::string::npos);
    CHECK(dump.find("var 3 bus 1 theta") != std::string::npos);
    CHECK(dump.find("edge factor 0 var 0") != std::string::npos);
    CHECK(dump.find("edge var 0 var 1") != std::string::npos);
}
