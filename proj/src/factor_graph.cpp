#include "gridnse/factor_graph.hpp"

#include "gridnse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

namespace gridnse {

namespace {

std::vector<int> factor_variable_ids(const PowerSystem& sys, const Measurement& m) {
    std::vector<int> ids;
    if (m.on_branch()) {
        const Branch& br = sys.branches[static_cast<std::size_t>(m.branch)];
        ids = {AugmentedFactorGraph::variable_id(br.from_bus, VarQuantity::magnitude),
               AugmentedFactorGraph::variable_id(br.from_bus, VarQuantity::angle),
               AugmentedFactorGraph::variable_id(br.to_bus, VarQuantity::magnitude),
               AugmentedFactorGraph::variable_id(br.to_bus, VarQuantity::angle)};
    } else {
        ids = {AugmentedFactorGraph::variable_id(m.bus, VarQuantity::magnitude),
               AugmentedFactorGraph::variable_id(m.bus, VarQuantity::angle)};
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

} // namespace

AugmentedFactorGraph build_factor_graph(const PowerSystem& sys, const MeasurementSet& ms) {
    ms.validate(sys);
    AugmentedFactorGraph g;
    g.n_buses = sys.bus_count();
    g.variables.reserve(static_cast<std::size_t>(2 * g.n_buses));
    for (int bus = 0; bus < g.n_buses; ++bus) {
        g.variables.push_back({bus, VarQuantity::magnitude});
        g.variables.push_back({bus, VarQuantity::angle});
    }

    std::set<std::pair<int, int>> augmentation;
    for (int mi = 0; mi < ms.size(); ++mi) {
        const Measurement& m = ms.items[static_cast<std::size_t>(mi)];
        FactorNode node;
        node.measurement = mi;
        if (m.on_branch()) {
            const Branch& br = sys.branches[static_cast<std::size_t>(m.branch)];
            node.bus_a = br.from_bus;
            node.bus_b = br.to_bus;
        } else {
            node.bus_a = m.bus;
        }
        const int fid = static_cast<int>(g.factors.size());
        g.factors.push_back(node);
        const auto vids = factor_variable_ids(sys, m);
        for (int vid : vids) g.factor_edges.emplace_back(fid, vid);
        for (std::size_t i = 0; i < vids.size(); ++i)
            for (std::size_t j = i + 1; j < vids.size(); ++j)
                augmentation.emplace(vids[i], vids[j]);
    }
    g.variable_edges.assign(augmentation.begin(), augmentation.end());
    g.bus_adjacency = sys.bus_adjacency();
    return g;
}

void encode_features(AugmentedFactorGraph& g, int max_buses) {
    if (max_buses < g.n_buses)
        throw ConfigError("max_buses " + std::to_string(max_buses) + " below system size " +
                          std::to_string(g.n_buses));
    int width_bits = 1;
    while ((1 << width_bits) < 2 * max_buses) ++width_bits;
    const int width = std::max(width_bits, 2 + kMeasurementKindCount);
    g.feature_width = width;

    g.variable_features = Eigen::MatrixXd::Zero(g.variable_count(), width);
    for (int vid = 0; vid < g.variable_count(); ++vid) {
        if (vid >= (1 << width_bits))
            throw ConfigError("variable node id " + std::to_string(vid) +
                              " exceeds binary encoding width");
        for (int bit = 0; bit < width_bits; ++bit)
            g.variable_features(vid, bit) = (vid >> (width_bits - 1 - bit)) & 1 ? 1.0 : 0.0;
    }

    g.factor_features = Eigen::MatrixXd::Zero(g.factor_count(), width);
    // Filled via refresh_factor_values + static columns below; callers keep
    // the measurement set at hand, so values land there.
}

void refresh_factor_values(AugmentedFactorGraph& g, const MeasurementSet& ms) {
    if (g.feature_width == 0) throw ValidationError("encode_features must run first");
    for (int fi = 0; fi < g.factor_count(); ++fi) {
        const Measurement& m =
            ms.items[static_cast<std::size_t>(g.factors[static_cast<std::size_t>(fi)].measurement)];
        g.factor_features(fi, 0) = m.value;
        g.factor_features(fi, 1) = (std::log10(m.variance) + 3.0) / 2.0;
        for (int k = 0; k < kMeasurementKindCount; ++k)
            g.factor_features(fi, 2 + k) = static_cast<int>(m.kind) == k ? 1.0 : 0.0;
    }
}

AugmentedFactorGraph remove_factors(const AugmentedFactorGraph& g,
                                    const std::vector<int>& victim_measurements) {
    std::set<int> victims(victim_measurements.begin(), victim_measurements.end());
    for (int v : victims) {
        const bool known = std::any_of(g.factors.begin(), g.factors.end(),
                                       [&](const FactorNode& f) { return f.measurement == v; });
        if (!known)
            throw ValidationError("remove_factors: no factor for measurement " + std::to_string(v));
    }
    AugmentedFactorGraph out;
    out.n_buses = g.n_buses;
    out.variables = g.variables;
    out.variable_edges = g.variable_edges;
    out.variable_features = g.variable_features;
    out.feature_width = g.feature_width;
    out.bus_adjacency = g.bus_adjacency;

    std::vector<int> remap(g.factors.size(), -1);
    for (std::size_t fi = 0; fi < g.factors.size(); ++fi) {
        if (victims.count(g.factors[fi].measurement)) continue;
        remap[fi] = static_cast<int>(out.factors.size());
        out.factors.push_back(g.factors[fi]);
    }
    if (g.feature_width > 0 && g.factor_features.rows() == static_cast<Eigen::Index>(g.factors.size())) {
        out.factor_features = Eigen::MatrixXd::Zero(out.factor_count(), g.feature_width);
        for (std::size_t fi = 0; fi < g.factors.size(); ++fi)
            if (remap[fi] >= 0) out.factor_features.row(remap[fi]) = g.factor_features.row(static_cast<Eigen::Index>(fi));
    }
    for (const auto& [fid, vid] : g.factor_edges)
        if (remap[static_cast<std::size_t>(fid)] >= 0)
            out.factor_edges.emplace_back(remap[static_cast<std::size_t>(fid)], vid);
    return out;
}

Subgraph khop_subgraph(const AugmentedFactorGraph& g, int bus, int hops) {
    if (bus < 0 || bus >= g.n_buses) throw ValidationError("khop_subgraph: unknown bus");
    if (hops < 0) throw ValidationError("khop_subgraph: hops must be >= 0");

    // Bus-hop distances over the electrical adjacency.
    std::vector<int> bus_dist(static_cast<std::size_t>(g.n_buses), -1);
    std::deque<int> queue{bus};
    bus_dist[static_cast<std::size_t>(bus)] = 0;
    while (!queue.empty()) {
        const int cur = queue.front();
        queue.pop_front();
        for (int next : g.bus_adjacency[static_cast<std::size_t>(cur)]) {
            if (bus_dist[static_cast<std::size_t>(next)] < 0) {
                bus_dist[static_cast<std::size_t>(next)] = bus_dist[static_cast<std::size_t>(cur)] + 1;
                queue.push_back(next);
            }
        }
    }

    const int nv = g.variable_count();
    const int nf = g.factor_count();
    std::vector<char> keep_var(static_cast<std::size_t>(nv), 0);
    std::vector<char> keep_fac(static_cast<std::size_t>(nf), 0);

    auto within = [&](int b) { return bus_dist[static_cast<std::size_t>(b)] >= 0 &&
                                      bus_dist[static_cast<std::size_t>(b)] <= hops; };
    for (int vid = 0; vid < nv; ++vid)
        if (within(g.variables[static_cast<std::size_t>(vid)].bus)) keep_var[static_cast<std::size_t>(vid)] = 1;
    for (int fi = 0; fi < nf; ++fi) {
        const FactorNode& f = g.factors[static_cast<std::size_t>(fi)];
        const bool inside = within(f.bus_a) && (f.bus_b < 0 || within(f.bus_b));
        if (inside) keep_fac[static_cast<std::size_t>(fi)] = 1;
    }

    // Dependency closure: BFS over the augmented graph out to 2*hops edges
    // from the target pair. Node index space: variables then factors.
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(nv + nf));
    for (const auto& [fid, vid] : g.factor_edges) {
        adj[static_cast<std::size_t>(vid)].push_back(nv + fid);
        adj[static_cast<std::size_t>(nv + fid)].push_back(vid);
    }
    for (const auto& [a, b] : g.variable_edges) {
        adj[static_cast<std::size_t>(a)].push_back(b);
        adj[static_cast<std::size_t>(b)].push_back(a);
    }
    std::vector<int> aug_dist(static_cast<std::size_t>(nv + nf), -1);
    std::deque<int> frontier;
    for (VarQuantity q : {VarQuantity::magnitude, VarQuantity::angle}) {
        const int vid = AugmentedFactorGraph::variable_id(bus, q);
        aug_dist[static_cast<std::size_t>(vid)] = 0;
        frontier.push_back(vid);
    }
    const int radius = 2 * hops;
    while (!frontier.empty()) {
        const int cur = frontier.front();
        frontier.pop_front();
        if (aug_dist[static_cast<std::size_t>(cur)] >= radius) continue;
        for (int next : adj[static_cast<std::size_t>(cur)]) {
            if (aug_dist[static_cast<std::size_t>(next)] < 0) {
                aug_dist[static_cast<std::size_t>(next)] = aug_dist[static_cast<std::size_t>(cur)] + 1;
                frontier.push_back(next);
            }
        }
    }
    for (int vid = 0; vid < nv; ++vid)
        if (aug_dist[static_cast<std::size_t>(vid)] >= 0) keep_var[static_cast<std::size_t>(vid)] = 1;
    for (int fi = 0; fi < nf; ++fi)
        if (aug_dist[static_cast<std::size_t>(nv + fi)] >= 0) keep_fac[static_cast<std::size_t>(fi)] = 1;

    Subgraph sub;
    sub.graph.n_buses = g.n_buses;
    sub.graph.feature_width = g.feature_width;
    sub.graph.bus_adjacency = g.bus_adjacency;
    std::vector<int> var_remap(static_cast<std::size_t>(nv), -1);
    std::vector<int> fac_remap(static_cast<std::size_t>(nf), -1);
    for (int vid = 0; vid < nv; ++vid) {
        if (!keep_var[static_cast<std::size_t>(vid)]) continue;
        var_remap[static_cast<std::size_t>(vid)] = static_cast<int>(sub.graph.variables.size());
        sub.graph.variables.push_back(g.variables[static_cast<std::size_t>(vid)]);
        sub.variable_map.push_back(vid);
    }
    for (int fi = 0; fi < nf; ++fi) {
        if (!keep_fac[static_cast<std::size_t>(fi)]) continue;
        fac_remap[static_cast<std::size_t>(fi)] = static_cast<int>(sub.graph.factors.size());
        sub.graph.factors.push_back(g.factors[static_cast<std::size_t>(fi)]);
        sub.factor_map.push_back(fi);
    }
    for (const auto& [fid, vid] : g.factor_edges)
        if (fac_remap[static_cast<std::size_t>(fid)] >= 0 && var_remap[static_cast<std::size_t>(vid)] >= 0)
            sub.graph.factor_edges.emplace_back(fac_remap[static_cast<std::size_t>(fid)],
                                                var_remap[static_cast<std::size_t>(vid)]);
    for (const auto& [a, b] : g.variable_edges)
        if (var_remap[static_cast<std::size_t>(a)] >= 0 && var_remap[static_cast<std::size_t>(b)] >= 0)
            sub.graph.variable_edges.emplace_back(var_remap[static_cast<std::size_t>(a)],
                                                  var_remap[static_cast<std::size_t>(b)]);
    if (g.variable_features.rows() == nv && g.feature_width > 0) {
        sub.graph.variable_features =
            Eigen::MatrixXd::Zero(sub.graph.variable_count(), g.feature_width);
        for (std::size_t i = 0; i < sub.variable_map.size(); ++i)
            sub.graph.variable_features.row(static_cast<Eigen::Index>(i)) =
                g.variable_features.row(sub.variable_map[i]);
    }
    if (g.factor_features.rows() == nf && g.feature_width > 0) {
        sub.graph.factor_features =
            Eigen::MatrixXd::Zero(sub.graph.factor_count(), g.feature_width);
        for (std::size_t i = 0; i < sub.factor_map.size(); ++i)
            sub.graph.factor_features.row(static_cast<Eigen::Index>(i)) =
                g.factor_features.row(sub.factor_map[i]);
    }
    return sub;
}

std::string dump_factor_graph(const AugmentedFactorGraph& g) {
    std::ostringstream out;
    out << "# variable nodes: " << g.variable_count() << ", factor nodes: " << g.factor_count()
        << "\n";
    for (int vid = 0; vid < g.variable_count(); ++vid) {
        const VariableNode& v = g.variables[static_cast<std::size_t>(vid)];
        out << "var " << vid << " bus " << v.bus
            << (v.quantity == VarQuantity::magnitude ? " V" : " theta") << "\n";
    }
    for (int fi = 0; fi < g.factor_count(); ++fi)
        out << "factor " << fi << " measurement " << g.factors[static_cast<std::size_t>(fi)].measurement << "\n";
    for (const auto& [fid, vid] : g.factor_edges) out << "edge factor " << fid << " var " << vid << "\n";
    for (const auto& [a, b] : g.variable_edges) out << "edge var " << a << " var " << b << "\n";
    return out.str();
}

} // namespace gridnse
