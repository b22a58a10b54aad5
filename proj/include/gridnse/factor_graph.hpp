#pragma once

#include "gridnse/measurement.hpp"

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace gridnse {

enum class VarQuantity { magnitude, angle };

/// Variable node ids are 2*bus + (0 magnitude, 1 angle).
struct VariableNode {
    int bus = 0;
    VarQuantity quantity = VarQuantity::magnitude;
};

struct FactorNode {
    int measurement = 0;  // index into the source MeasurementSet
    int bus_a = -1;       // terminal buses (bus_b = -1 for bus measurements)
    int bus_b = -1;
};

/// Heterogeneous graph the GNN consumes: factor-variable edges from the
/// measurement functions' support plus variable-variable augmentation edges
/// between every pair of variable nodes separated by exactly one factor node.
/// Augmentation edges are derived from the full measurement placement at
/// build time and survive factor removal.
struct AugmentedFactorGraph {
    int n_buses = 0;
    std::vector<VariableNode> variables; // size 2n, fixed order
    std::vector<FactorNode> factors;     // measurement-set order
    std::vector<std::pair<int, int>> factor_edges;   // (factor idx, variable idx)
    std::vector<std::pair<int, int>> variable_edges; // (a, b) with a < b, sorted

    // Filled by encode_features.
    Eigen::MatrixXd variable_features; // 2n x width
    Eigen::MatrixXd factor_features;   // f x width
    int feature_width = 0;

    std::vector<std::vector<int>> bus_adjacency; // electrical, copied from the system

    int variable_count() const { return static_cast<int>(variables.size()); }
    int factor_count() const { return static_cast<int>(factors.size()); }
    static int variable_id(int bus, VarQuantity q) {
        return 2 * bus + (q == VarQuantity::angle ? 1 : 0);
    }
};

AugmentedFactorGraph build_factor_graph(const PowerSystem& sys, const MeasurementSet& ms);

/// Fixed-width features. Variable nodes carry the binary encoding of their
/// node id (MSB first, width ceil(log2(2*max_buses))); factor nodes carry
/// [z, (log10 v + 3)/2, one-hot kind]; both are zero-padded to one width.
/// Throws ConfigError when a node id does not fit the encoding width.
void encode_features(AugmentedFactorGraph& g, int max_buses);

/// Refreshes only the measurement-value column of the factor features (used
/// when many samples share one placement).
void refresh_factor_values(AugmentedFactorGraph& g, const MeasurementSet& ms);

/// Deletes the given factor nodes (by measurement index) and their edges.
/// Variable nodes and augmentation edges are retained.
AugmentedFactorGraph remove_factors(const AugmentedFactorGraph& g,
                                    const std::vector<int>& victim_measurements);

struct Subgraph {
    AugmentedFactorGraph graph;
    std::vector<int> variable_map; // subgraph variable idx -> original idx
    std::vector<int> factor_map;
};

/// Local neighbourhood able to reproduce the 2*hops-layer message-passing
/// result for the bus's two variable nodes exactly. Includes the bus-hop
/// ball (variable nodes of buses within `hops`, factor nodes fully inside
/// it) unioned with everything within 2*hops edges of the target pair in the
/// augmented graph; the second part is what makes local inference exact once
/// variable-variable shortcuts exist (they forward measurement information a
/// full bus hop per layer, twice the bipartite rate).
Subgraph khop_subgraph(const AugmentedFactorGraph& g, int bus, int hops);

/// Debug dump: edge list with node-type annotations.
std::string dump_factor_graph(const AugmentedFactorGraph& g);

} // namespace gridnse
