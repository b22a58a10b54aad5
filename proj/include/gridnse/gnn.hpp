#pragma once

#include "gridnse/factor_graph.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace gridnse {

struct GnnConfig {
    int embedding_size = 64;    // s
    int message_size = 64;      // u
    int layers = 4;             // K
    int message_hidden = 64;    // hidden width of the two-layer message nets
    int prediction_hidden = 64; // hidden width of the two-layer prediction head
    int max_buses = 30;         // drives the input feature width
    double learning_rate = 4e-4;
    int batch_size = 32;
    int epochs = 100;

    /// Width shared by variable and factor features after padding.
    int input_width() const;
    void validate() const;
};

struct Linear {
    Eigen::MatrixXd w; // out x in
    Eigen::VectorXd b; // out
};

/// Two-layer feed-forward map R^{2s} -> R^u; the first layer's weight is
/// split into source/destination halves so the concatenation is implicit.
struct MessageNet {
    Eigen::MatrixXd w1_src, w1_dst; // hidden x s
    Eigen::VectorXd b1;             // hidden
    Eigen::MatrixXd w2;             // u x hidden
    Eigen::VectorXd b2;             // u
};

/// One message-passing iteration's parameters (untied across layers).
struct GnnLayerParams {
    MessageNet factor_to_variable;
    MessageNet variable_to_factor;
    MessageNet variable_to_variable;
    Eigen::VectorXd attention_variable; // 2s, edges arriving at variable nodes
    Eigen::VectorXd attention_factor;   // 2s, edges arriving at factor nodes
    Linear update_variable; // s x u, ReLU
    Linear update_factor;   // s x u, ReLU
};

struct GnnModel {
    GnnConfig config;
    Linear variable_encoder; // s x input_width, affine
    Linear factor_encoder;   // s x input_width, affine
    std::vector<GnnLayerParams> layers;
    Linear prediction_hidden_layer; // hidden x s, ReLU
    Linear prediction_output;       // 1 x hidden, affine
};

/// Flat view over every trainable tensor in checkpoint order.
struct TensorRef {
    std::string name;
    double* data;
    Eigen::Index size;
};
std::vector<TensorRef> model_tensors(GnnModel& model);
std::int64_t parameter_count(const GnnModel& model);

/// Deterministic fan-in-scaled uniform init: weights U(+-sqrt(6/fan_in)) with
/// the concatenated 2s input counted for message nets and attention vectors;
/// biases zero.
GnnModel init_model(const GnnConfig& cfg, std::uint64_t seed);
GnnModel zeros_like(const GnnModel& model);

/// Disjoint union of graphs compiled to gather/GEMM-friendly edge arrays.
/// Edges arriving at a variable node (factor->variable and
/// variable->variable) share one per-destination softmax segment.
struct CompiledBatch {
    int graph_count = 0;
    int n_var = 0, n_fac = 0;
    std::vector<int> var_offset, fac_offset; // per graph, size graph_count+1

    // Variable-destination edges in canonical (dst, type, src) order.
    std::vector<int> v_src; // factor index for fv edges, variable index for vv
    std::vector<int> v_dst;
    std::vector<std::uint8_t> v_is_vv;
    std::vector<int> v_seg;             // CSR per variable node, size n_var+1
    std::vector<int> fv_rows, vv_rows;  // merged positions per type subset

    // Factor-destination edges in (dst, src) order.
    std::vector<int> f_src, f_dst;
    std::vector<int> f_seg; // CSR per factor node, size n_fac+1

    Eigen::MatrixXd var_features, fac_features;
};

CompiledBatch compile_batch(const std::vector<const AugmentedFactorGraph*>& graphs);

struct ForwardTrace {
    std::vector<Eigen::MatrixXd> h_var, h_fac; // per layer 0..K, nodes x s
    Eigen::MatrixXd prediction_hidden;         // n_var x hidden (post ReLU)
    Eigen::VectorXd predictions;               // n_var
};

ForwardTrace forward_batch(const GnnModel& model, const CompiledBatch& batch);

/// Single-graph convenience: predictions per variable node id.
Eigen::VectorXd forward(const GnnModel& model, const AugmentedFactorGraph& g);

/// Softmax-weighted convex combination; messages are rows.
Eigen::VectorXd attention_aggregate(const Eigen::MatrixXd& messages,
                                    const Eigen::VectorXd& logits);

/// Mean squared error over all entries (Eq.-style 1/(2nB) scaling comes from
/// the vector covering every variable node of every graph in the batch).
double loss_mse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& labels);

/// Reverse-mode gradients of loss_mse through the whole model; returns the
/// loss. Gradients accumulate into `grads` (zeroed here).
double backward_batch(const GnnModel& model, const CompiledBatch& batch,
                      const ForwardTrace& trace, const Eigen::VectorXd& labels, GnnModel& grads);

struct AdamState {
    Eigen::VectorXd first_moment, second_moment;
    std::int64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
};
AdamState init_adam(GnnModel& model);
void adam_step(GnnModel& model, AdamState& state, GnnModel& grads, double learning_rate);

/// Versioned binary checkpoint; parameters as little-endian 32-bit floats in
/// model_tensors order.
void save_checkpoint(const GnnModel& model, const std::string& path);
GnnModel load_checkpoint(const std::string& path);
std::string file_hash_hex(const std::string& path);

} // namespace gridnse
