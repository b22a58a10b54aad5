#include "gridnse/gnn.hpp"

#include "gridnse/errors.hpp"
#include "gridnse/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <limits>

namespace gridnse {

namespace {

constexpr double kLeakySlope = 0.2;

inline double leaky_relu(double x) { return x > 0.0 ? x : kLeakySlope * x; }

int ceil_log2(int v) {
    int bits = 1;
    while ((1 << bits) < v) ++bits;
    return bits;
}

} // namespace

int GnnConfig::input_width() const {
    return std::max(ceil_log2(2 * max_buses), 2 + kMeasurementKindCount);
}

void GnnConfig::validate() const {
    if (embedding_size < 1 || message_size < 1 || layers < 1)
        throw ConfigError("embedding_size, message_size and layers must be >= 1");
    if (message_hidden < 1 || prediction_hidden < 1)
        throw ConfigError("hidden widths must be >= 1");
    if (max_buses < 1) throw ConfigError("max_buses must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1 || epochs < 1) throw ConfigError("batch_size and epochs must be >= 1");
}

std::vector<TensorRef> model_tensors(GnnModel& model) {
    std::vector<TensorRef> refs;
    auto add_mat = [&](const std::string& name, Eigen::MatrixXd& m) {
        refs.push_back({name, m.data(), m.size()});
    };
    auto add_vec = [&](const std::string& name, Eigen::VectorXd& v) {
        refs.push_back({name, v.data(), v.size()});
    };
    auto add_linear = [&](const std::string& name, Linear& l) {
        add_mat(name + ".w", l.w);
        add_vec(name + ".b", l.b);
    };
    auto add_message = [&](const std::string& name, MessageNet& net) {
        add_mat(name + ".w1_src", net.w1_src);
        add_mat(name + ".w1_dst", net.w1_dst);
        add_vec(name + ".b1", net.b1);
        add_mat(name + ".w2", net.w2);
        add_vec(name + ".b2", net.b2);
    };
    add_linear("variable_encoder", model.variable_encoder);
    add_linear("factor_encoder", model.factor_encoder);
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        const std::string prefix = "layer" + std::to_string(k);
        GnnLayerParams& layer = model.layers[k];
        add_message(prefix + ".factor_to_variable", layer.factor_to_variable);
        add_message(prefix + ".variable_to_factor", layer.variable_to_factor);
        add_message(prefix + ".variable_to_variable", layer.variable_to_variable);
        add_vec(prefix + ".attention_variable", layer.attention_variable);
        add_vec(prefix + ".attention_factor", layer.attention_factor);
        add_linear(prefix + ".update_variable", layer.update_variable);
        add_linear(prefix + ".update_factor", layer.update_factor);
    }
    add_linear("prediction_hidden", model.prediction_hidden_layer);
    add_linear("prediction_output", model.prediction_output);
    return refs;
}

std::int64_t parameter_count(const GnnModel& model) {
    std::int64_t total = 0;
    for (const TensorRef& ref : model_tensors(const_cast<GnnModel&>(model))) total += ref.size;
    return total;
}

namespace {

GnnModel allocate_model(const GnnConfig& cfg) {
    cfg.validate();
    const int s = cfg.embedding_size;
    const int u = cfg.message_size;
    const int mh = cfg.message_hidden;
    const int ph = cfg.prediction_hidden;
    const int in = cfg.input_width();
    GnnModel model;
    model.config = cfg;
    auto linear = [](int out, int in_dim) {
        return Linear{Eigen::MatrixXd::Zero(out, in_dim), Eigen::VectorXd::Zero(out)};
    };
    auto message = [&]() {
        MessageNet net;
        net.w1_src = Eigen::MatrixXd::Zero(mh, s);
        net.w1_dst = Eigen::MatrixXd::Zero(mh, s);
        net.b1 = Eigen::VectorXd::Zero(mh);
        net.w2 = Eigen::MatrixXd::Zero(u, mh);
        net.b2 = Eigen::VectorXd::Zero(u);
        return net;
    };
    model.variable_encoder = linear(s, in);
    model.factor_encoder = linear(s, in);
    model.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (GnnLayerParams& layer : model.layers) {
        layer.factor_to_variable = message();
        layer.variable_to_factor = message();
        layer.variable_to_variable = message();
        layer.attention_variable = Eigen::VectorXd::Zero(2 * s);
        layer.attention_factor = Eigen::VectorXd::Zero(2 * s);
        layer.update_variable = linear(s, u);
        layer.update_factor = linear(s, u);
    }
    model.prediction_hidden_layer = linear(ph, s);
    model.prediction_output = linear(1, ph);
    return model;
}

} // namespace

GnnModel init_model(const GnnConfig& cfg, std::uint64_t seed) {
    GnnModel model = allocate_model(cfg);
    Rng rng(seed);
    // The structure walk below is the documented parameter order, so a fixed
    // seed pins every weight. Weights draw from U(+-sqrt(6/fan_in)), biases
    // from U(+-1/sqrt(fan_in)); message-net first layers and attention
    // vectors count the concatenated 2s input as fan-in. Nonzero biases keep
    // ReLU pre-activations away from exact zeros even for the all-zero
    // binary feature of variable node id 0.
    auto fill_matrix = [&](Eigen::MatrixXd& m, Eigen::Index fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-bound, bound);
    };
    auto fill_vector = [&](Eigen::VectorXd& v, Eigen::Index fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-bound, bound);
    };
    auto fill_bias = [&](Eigen::VectorXd& v, Eigen::Index fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-bound, bound);
    };
    const int s = cfg.embedding_size;
    auto fill_linear = [&](Linear& l) {
        fill_matrix(l.w, l.w.cols());
        fill_bias(l.b, l.w.cols());
    };
    auto fill_message = [&](MessageNet& net) {
        fill_matrix(net.w1_src, 2 * s);
        fill_matrix(net.w1_dst, 2 * s);
        fill_bias(net.b1, 2 * s);
        fill_matrix(net.w2, net.w2.cols());
        fill_bias(net.b2, net.w2.cols());
    };
    fill_linear(model.variable_encoder);
    fill_linear(model.factor_encoder);
    for (GnnLayerParams& layer : model.layers) {
        fill_message(layer.factor_to_variable);
        fill_message(layer.variable_to_factor);
        fill_message(layer.variable_to_variable);
        fill_vector(layer.attention_variable, 2 * s);
        fill_vector(layer.attention_factor, 2 * s);
        fill_linear(layer.update_variable);
        fill_linear(layer.update_factor);
    }
    fill_linear(model.prediction_hidden_layer);
    fill_linear(model.prediction_output);
    return model;
}

GnnModel zeros_like(const GnnModel& model) { return allocate_model(model.config); }

CompiledBatch compile_batch(const std::vector<const AugmentedFactorGraph*>& graphs) {
    if (graphs.empty()) throw ValidationError("compile_batch needs at least one graph");
    CompiledBatch batch;
    batch.graph_count = static_cast<int>(graphs.size());
    batch.var_offset.push_back(0);
    batch.fac_offset.push_back(0);
    const int width = graphs[0]->feature_width;
    if (width == 0) throw ValidationError("graphs must be feature-encoded before compiling");
    for (const AugmentedFactorGraph* g : graphs) {
        if (g->feature_width != width)
            throw ValidationError("all graphs in a batch must share one feature width");
        batch.n_var += g->variable_count();
        batch.n_fac += g->factor_count();
        batch.var_offset.push_back(batch.n_var);
        batch.fac_offset.push_back(batch.n_fac);
    }
    batch.var_features.resize(batch.n_var, width);
    batch.fac_features.resize(std::max(batch.n_fac, 1), width);

    struct VEdge {
        int dst, type, src;
    };
    std::vector<VEdge> v_edges;
    std::vector<std::pair<int, int>> f_edges; // (dst factor, src var)
    for (int gi = 0; gi < batch.graph_count; ++gi) {
        const AugmentedFactorGraph& g = *graphs[static_cast<std::size_t>(gi)];
        const int vo = batch.var_offset[static_cast<std::size_t>(gi)];
        const int fo = batch.fac_offset[static_cast<std::size_t>(gi)];
        batch.var_features.middleRows(vo, g.variable_count()) = g.variable_features;
        if (g.factor_count() > 0)
            batch.fac_features.middleRows(fo, g.factor_count()) = g.factor_features;
        for (const auto& [fid, vid] : g.factor_edges) {
            v_edges.push_back({vo + vid, 0, fo + fid});
            f_edges.emplace_back(fo + fid, vo + vid);
        }
        for (const auto& [a, b] : g.variable_edges) {
            v_edges.push_back({vo + b, 1, vo + a});
            v_edges.push_back({vo + a, 1, vo + b});
        }
    }
    std::sort(v_edges.begin(), v_edges.end(), [](const VEdge& a, const VEdge& b) {
        return std::tie(a.dst, a.type, a.src) < std::tie(b.dst, b.type, b.src);
    });
    std::sort(f_edges.begin(), f_edges.end());

    batch.v_seg.assign(static_cast<std::size_t>(batch.n_var) + 1, 0);
    for (std::size_t e = 0; e < v_edges.size(); ++e) {
        batch.v_src.push_back(v_edges[e].src);
        batch.v_dst.push_back(v_edges[e].dst);
        batch.v_is_vv.push_back(static_cast<std::uint8_t>(v_edges[e].type));
        ++batch.v_seg[static_cast<std::size_t>(v_edges[e].dst) + 1];
        if (v_edges[e].type == 0)
            batch.fv_rows.push_back(static_cast<int>(e));
        else
            batch.vv_rows.push_back(static_cast<int>(e));
    }
    for (std::size_t i = 1; i < batch.v_seg.size(); ++i) batch.v_seg[i] += batch.v_seg[i - 1];

    batch.f_seg.assign(static_cast<std::size_t>(batch.n_fac) + 1, 0);
    for (const auto& [dst, src] : f_edges) {
        batch.f_dst.push_back(dst);
        batch.f_src.push_back(src);
        ++batch.f_seg[static_cast<std::size_t>(dst) + 1];
    }
    for (std::size_t i = 1; i < batch.f_seg.size(); ++i) batch.f_seg[i] += batch.f_seg[i - 1];
    return batch;
}

namespace {

struct MessagePieces {
    Eigen::MatrixXd src, dst;  // gathered embeddings, E_t x s
    Eigen::MatrixXd hidden;    // post-ReLU, E_t x mh
    Eigen::MatrixXd out;       // messages, E_t x u
    Eigen::VectorXd logit_pre; // pre leaky-ReLU, E_t
};

// Runs one message net + attention logits over a type subset of edges.
MessagePieces run_message_net(const MessageNet& net, const Eigen::VectorXd& attention,
                              const Eigen::MatrixXd& h_src_all, const Eigen::MatrixXd& h_dst_all,
                              const std::vector<int>& subset_rows, const std::vector<int>& src,
                              const std::vector<int>& dst) {
    MessagePieces p;
    const int s = static_cast<int>(h_src_all.cols());
    const auto count = static_cast<Eigen::Index>(subset_rows.size());
    p.src.resize(count, s);
    p.dst.resize(count, s);
    for (Eigen::Index i = 0; i < count; ++i) {
        const int e = subset_rows[static_cast<std::size_t>(i)];
        p.src.row(i) = h_src_all.row(src[static_cast<std::size_t>(e)]);
        p.dst.row(i) = h_dst_all.row(dst[static_cast<std::size_t>(e)]);
    }
    p.hidden = ((p.src * net.w1_src.transpose() + p.dst * net.w1_dst.transpose()).rowwise() +
                net.b1.transpose())
                   .cwiseMax(0.0);
    p.out = (p.hidden * net.w2.transpose()).rowwise() + net.b2.transpose();
    p.logit_pre = p.src * attention.head(s) + p.dst * attention.tail(s);
    return p;
}

// Per-destination softmax + convex combination over CSR segments.
void aggregate_segments(const std::vector<int>& seg, const Eigen::MatrixXd& messages,
                        const Eigen::VectorXd& logits, Eigen::MatrixXd& aggregated,
                        Eigen::VectorXd& alpha) {
    const int nodes = static_cast<int>(seg.size()) - 1;
    alpha.resize(messages.rows());
    aggregated.setZero(nodes, messages.cols());
    for (int node = 0; node < nodes; ++node) {
        const int begin = seg[static_cast<std::size_t>(node)];
        const int end = seg[static_cast<std::size_t>(node) + 1];
        if (begin == end) continue;
        double max_logit = -std::numeric_limits<double>::infinity();
        for (int e = begin; e < end; ++e) max_logit = std::max(max_logit, logits[e]);
        double denom = 0.0;
        for (int e = begin; e < end; ++e) {
            alpha[e] = std::exp(logits[e] - max_logit);
            denom += alpha[e];
        }
        for (int e = begin; e < end; ++e) {
            alpha[e] /= denom;
            aggregated.row(node) += alpha[e] * messages.row(e);
        }
    }
}

struct LayerForward {
    // Variable-destination side, merged edge order.
    Eigen::MatrixXd v_messages;  // E_v x u
    Eigen::VectorXd v_logit_pre; // E_v
    Eigen::VectorXd v_logits;    // post leaky-ReLU
    Eigen::VectorXd v_alpha;
    Eigen::MatrixXd v_aggregated; // n_var x u
    MessagePieces fv, vv;
    // Factor-destination side.
    MessagePieces vf;
    Eigen::VectorXd f_logits, f_alpha, f_logit_pre;
    Eigen::MatrixXd f_aggregated; // n_fac x u
};

LayerForward run_layer(const GnnLayerParams& layer, const CompiledBatch& batch,
                       const Eigen::MatrixXd& h_var, const Eigen::MatrixXd& h_fac) {
    LayerForward f;
    const Eigen::Index u = layer.factor_to_variable.w2.rows();
    f.v_messages.resize(static_cast<Eigen::Index>(batch.v_src.size()), u);
    f.v_logit_pre.resize(static_cast<Eigen::Index>(batch.v_src.size()));

    f.fv = run_message_net(layer.factor_to_variable, layer.attention_variable, h_fac, h_var,
                           batch.fv_rows, batch.v_src, batch.v_dst);
    for (std::size_t i = 0; i < batch.fv_rows.size(); ++i) {
        f.v_messages.row(batch.fv_rows[i]) = f.fv.out.row(static_cast<Eigen::Index>(i));
        f.v_logit_pre[batch.fv_rows[i]] = f.fv.logit_pre[static_cast<Eigen::Index>(i)];
    }
    f.vv = run_message_net(layer.variable_to_variable, layer.attention_variable, h_var, h_var,
                           batch.vv_rows, batch.v_src, batch.v_dst);
    for (std::size_t i = 0; i < batch.vv_rows.size(); ++i) {
        f.v_messages.row(batch.vv_rows[i]) = f.vv.out.row(static_cast<Eigen::Index>(i));
        f.v_logit_pre[batch.vv_rows[i]] = f.vv.logit_pre[static_cast<Eigen::Index>(i)];
    }
    f.v_logits = f.v_logit_pre.unaryExpr([](double x) { return leaky_relu(x); });
    aggregate_segments(batch.v_seg, f.v_messages, f.v_logits, f.v_aggregated, f.v_alpha);

    std::vector<int> all_f_rows(batch.f_src.size());
    for (std::size_t i = 0; i < all_f_rows.size(); ++i) all_f_rows[i] = static_cast<int>(i);
    f.vf = run_message_net(layer.variable_to_factor, layer.attention_factor, h_var, h_fac,
                           all_f_rows, batch.f_src, batch.f_dst);

    f.f_logit_pre = f.vf.logit_pre;
    f.f_logits = f.f_logit_pre.unaryExpr([](double x) { return leaky_relu(x); });
    aggregate_segments(batch.f_seg, f.vf.out, f.f_logits, f.f_aggregated, f.f_alpha);
    return f;
}

} // namespace

ForwardTrace forward_batch(const GnnModel& model, const CompiledBatch& batch) {
    const int K = model.config.layers;
    ForwardTrace trace;
    trace.h_var.reserve(static_cast<std::size_t>(K) + 1);
    trace.h_fac.reserve(static_cast<std::size_t>(K) + 1);
    trace.h_var.push_back(((batch.var_features * model.variable_encoder.w.transpose()).rowwise() +
                           model.variable_encoder.b.transpose()));
    Eigen::MatrixXd h_fac0;
    if (batch.n_fac > 0)
        h_fac0 = (batch.fac_features.topRows(batch.n_fac) * model.factor_encoder.w.transpose())
                     .rowwise() +
                 model.factor_encoder.b.transpose();
    else
        h_fac0.resize(0, model.config.embedding_size);
    trace.h_fac.push_back(std::move(h_fac0));

    for (int k = 0; k < K; ++k) {
        const GnnLayerParams& layer = model.layers[static_cast<std::size_t>(k)];
        const Eigen::MatrixXd& h_var = trace.h_var.back();
        const Eigen::MatrixXd& h_fac = trace.h_fac.back();
        LayerForward f = run_layer(layer, batch, h_var, h_fac);

        Eigen::MatrixXd next_var = h_var; // isolated nodes carry through
        Eigen::MatrixXd pre_var = (f.v_aggregated * layer.update_variable.w.transpose()).rowwise() +
                                  layer.update_variable.b.transpose();
        for (int node = 0; node < batch.n_var; ++node)
            if (batch.v_seg[static_cast<std::size_t>(node)] !=
                batch.v_seg[static_cast<std::size_t>(node) + 1])
                next_var.row(node) = pre_var.row(node).cwiseMax(0.0);

        Eigen::MatrixXd next_fac = h_fac;
        if (batch.n_fac > 0) {
            Eigen::MatrixXd pre_fac = (f.f_aggregated * layer.update_factor.w.transpose()).rowwise() +
                                      layer.update_factor.b.transpose();

            for (int node = 0; node < batch.n_fac; ++node)
                if (batch.f_seg[static_cast<std::size_t>(node)] !=
                    batch.f_seg[static_cast<std::size_t>(node) + 1])
                    next_fac.row(node) = pre_fac.row(node).cwiseMax(0.0);
        }
        trace.h_var.push_back(std::move(next_var));
        trace.h_fac.push_back(std::move(next_fac));
    }

    trace.prediction_hidden =
        ((trace.h_var.back() * model.prediction_hidden_layer.w.transpose()).rowwise() +
         model.prediction_hidden_layer.b.transpose())
            .cwiseMax(0.0);
    trace.predictions = trace.prediction_hidden * model.prediction_output.w.transpose().col(0);
    trace.predictions.array() += model.prediction_output.b[0];
    return trace;
}

Eigen::VectorXd forward(const GnnModel& model, const AugmentedFactorGraph& g) {
    const CompiledBatch batch = compile_batch({&g});
    return forward_batch(model, batch).predictions;
}

Eigen::VectorXd attention_aggregate(const Eigen::MatrixXd& messages,
                                    const Eigen::VectorXd& logits) {
    if (messages.rows() == 0) throw ValidationError("attention_aggregate needs >= 1 message");
    if (messages.rows() != logits.size())
        throw ValidationError("attention_aggregate: message/logit count mismatch");
    std::vector<int> seg{0, static_cast<int>(messages.rows())};
    Eigen::MatrixXd aggregated;
    Eigen::VectorXd alpha;
    aggregate_segments(seg, messages, logits, aggregated, alpha);
    return aggregated.row(0);
}

double loss_mse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& labels) {
    if (predictions.size() != labels.size())
        throw ValidationError("loss: prediction/label length mismatch");
    return (predictions - labels).squaredNorm() / static_cast<double>(predictions.size());
}

namespace {

// Backward through one message net subset; accumulates parameter gradients
// and scatters embedding gradients to the previous layer.
void backward_message_net(const MessageNet& net, const Eigen::VectorXd& attention,
                          MessageNet& net_grad, Eigen::VectorXd& attention_grad,
                          const MessagePieces& p, const std::vector<int>& subset_rows,
                          const std::vector<int>& src, const std::vector<int>& dst,
                          const Eigen::MatrixXd& d_messages_merged,
                          const Eigen::VectorXd& d_logit_pre_merged,
                          Eigen::MatrixXd& d_h_src_all, Eigen::MatrixXd& d_h_dst_all) {
    const auto count = static_cast<Eigen::Index>(subset_rows.size());
    if (count == 0) return;
    const int s = static_cast<int>(p.src.cols());

    Eigen::MatrixXd d_out(count, d_messages_merged.cols());
    Eigen::VectorXd d_logit(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        d_out.row(i) = d_messages_merged.row(subset_rows[static_cast<std::size_t>(i)]);
        d_logit[i] = d_logit_pre_merged[subset_rows[static_cast<std::size_t>(i)]];
    }

    // Attention path: logit_pre = src.a_head + dst.a_tail.
    attention_grad.head(s) += p.src.transpose() * d_logit;
    attention_grad.tail(s) += p.dst.transpose() * d_logit;
    Eigen::MatrixXd d_src = d_logit * attention.head(s).transpose();
    Eigen::MatrixXd d_dst = d_logit * attention.tail(s).transpose();

    // Message path.
    net_grad.w2 += d_out.transpose() * p.hidden;
    net_grad.b2 += d_out.colwise().sum();
    Eigen::MatrixXd d_hidden =
        (d_out * net.w2).cwiseProduct((p.hidden.array() > 0.0).cast<double>().matrix());
    net_grad.w1_src += d_hidden.transpose() * p.src;
    net_grad.w1_dst += d_hidden.transpose() * p.dst;
    net_grad.b1 += d_hidden.colwise().sum();
    d_src += d_hidden * net.w1_src;
    d_dst += d_hidden * net.w1_dst;

    for (Eigen::Index i = 0; i < count; ++i) {
        const int e = subset_rows[static_cast<std::size_t>(i)];
        d_h_src_all.row(src[static_cast<std::size_t>(e)]) += d_src.row(i);
        d_h_dst_all.row(dst[static_cast<std::size_t>(e)]) += d_dst.row(i);
    }
}

// Softmax/convex-combination backward over CSR segments. Produces gradients
// w.r.t. merged messages and pre-leaky-ReLU logits.
void backward_segments(const std::vector<int>& seg, const Eigen::MatrixXd& messages,
                       const Eigen::VectorXd& alpha, const Eigen::VectorXd& logit_pre,
                       const Eigen::MatrixXd& d_aggregated, Eigen::MatrixXd& d_messages,
                       Eigen::VectorXd& d_logit_pre) {
    d_messages.setZero(messages.rows(), messages.cols());
    d_logit_pre.setZero(logit_pre.size());
    const int nodes = static_cast<int>(seg.size()) - 1;
    for (int node = 0; node < nodes; ++node) {
        const int begin = seg[static_cast<std::size_t>(node)];
        const int end = seg[static_cast<std::size_t>(node) + 1];
        if (begin == end) continue;
        double inner = 0.0; // sum_e alpha_e dalpha_e
        for (int e = begin; e < end; ++e) {
            d_messages.row(e) = alpha[e] * d_aggregated.row(node);
            const double d_alpha = messages.row(e).dot(d_aggregated.row(node));
            d_logit_pre[e] = d_alpha; // reuse as scratch for dalpha
            inner += alpha[e] * d_alpha;
        }
        for (int e = begin; e < end; ++e) {
            const double d_logit = alpha[e] * (d_logit_pre[e] - inner);
            d_logit_pre[e] = d_logit * (logit_pre[e] > 0.0 ? 1.0 : kLeakySlope);
        }
    }
}

} // namespace

double backward_batch(const GnnModel& model, const CompiledBatch& batch,
                      const ForwardTrace& trace, const Eigen::VectorXd& labels, GnnModel& grads) {
    grads = zeros_like(model);
    const int K = model.config.layers;
    const double loss = loss_mse(trace.predictions, labels);

    Eigen::VectorXd d_pred =
        2.0 * (trace.predictions - labels) / static_cast<double>(trace.predictions.size());

    // Prediction head.
    grads.prediction_output.w.row(0) = d_pred.transpose() * trace.prediction_hidden;
    grads.prediction_output.b[0] = d_pred.sum();
    Eigen::MatrixXd d_pred_hidden =
        (d_pred * model.prediction_output.w.row(0))
            .cwiseProduct((trace.prediction_hidden.array() > 0.0).cast<double>().matrix());
    grads.prediction_hidden_layer.w += d_pred_hidden.transpose() * trace.h_var.back();
    grads.prediction_hidden_layer.b += d_pred_hidden.colwise().sum();

    Eigen::MatrixXd d_h_var = d_pred_hidden * model.prediction_hidden_layer.w;
    Eigen::MatrixXd d_h_fac = Eigen::MatrixXd::Zero(batch.n_fac, model.config.embedding_size);

    for (int k = K - 1; k >= 0; --k) {
        const GnnLayerParams& layer = model.layers[static_cast<std::size_t>(k)];
        GnnLayerParams& layer_grad = grads.layers[static_cast<std::size_t>(k)];
        const Eigen::MatrixXd& h_var = trace.h_var[static_cast<std::size_t>(k)];
        const Eigen::MatrixXd& h_fac = trace.h_fac[static_cast<std::size_t>(k)];
        // Recompute the layer's edge intermediates (memory for compute).
        LayerForward f = run_layer(layer, batch, h_var, h_fac);

        Eigen::MatrixXd d_h_var_prev = Eigen::MatrixXd::Zero(h_var.rows(), h_var.cols());
        Eigen::MatrixXd d_h_fac_prev = Eigen::MatrixXd::Zero(h_fac.rows(), h_fac.cols());

        // Update functions (isolated nodes carry the gradient straight through).
        Eigen::MatrixXd d_agg_var = Eigen::MatrixXd::Zero(batch.n_var, model.config.message_size);
        {
            const Eigen::MatrixXd& h_next = trace.h_var[static_cast<std::size_t>(k) + 1];
            Eigen::MatrixXd d_pre = Eigen::MatrixXd::Zero(batch.n_var, h_var.cols());
            for (int node = 0; node < batch.n_var; ++node) {
                if (batch.v_seg[static_cast<std::size_t>(node)] ==
                    batch.v_seg[static_cast<std::size_t>(node) + 1]) {
                    d_h_var_prev.row(node) += d_h_var.row(node);
                } else {
                    d_pre.row(node) = d_h_var.row(node).cwiseProduct(
                        (h_next.row(node).array() > 0.0).cast<double>().matrix());
                }
            }
            layer_grad.update_variable.w += d_pre.transpose() * f.v_aggregated;
            layer_grad.update_variable.b += d_pre.colwise().sum();
            d_agg_var = d_pre * layer.update_variable.w;
        }
        Eigen::MatrixXd d_agg_fac = Eigen::MatrixXd::Zero(batch.n_fac, model.config.message_size);
        if (batch.n_fac > 0) {
            const Eigen::MatrixXd& h_next = trace.h_fac[static_cast<std::size_t>(k) + 1];
            Eigen::MatrixXd d_pre = Eigen::MatrixXd::Zero(batch.n_fac, h_fac.cols());
            for (int node = 0; node < batch.n_fac; ++node) {
                if (batch.f_seg[static_cast<std::size_t>(node)] ==
                    batch.f_seg[static_cast<std::size_t>(node) + 1]) {
                    d_h_fac_prev.row(node) += d_h_fac.row(node);
                } else {
                    d_pre.row(node) = d_h_fac.row(node).cwiseProduct(
                        (h_next.row(node).array() > 0.0).cast<double>().matrix());
                }
            }
            layer_grad.update_factor.w += d_pre.transpose() * f.f_aggregated;
            layer_grad.update_factor.b += d_pre.colwise().sum();
            d_agg_fac = d_pre * layer.update_factor.w;

        }

        // Attention aggregation backward, both destination kinds.
        Eigen::MatrixXd d_v_messages;
        Eigen::VectorXd d_v_logit_pre;
        backward_segments(batch.v_seg, f.v_messages, f.v_alpha, f.v_logit_pre, d_agg_var,
                          d_v_messages, d_v_logit_pre);
        Eigen::MatrixXd d_f_messages;
        Eigen::VectorXd d_f_logit_pre;
        if (batch.n_fac > 0)
            backward_segments(batch.f_seg, f.vf.out, f.f_alpha, f.f_logit_pre, d_agg_fac,
                              d_f_messages, d_f_logit_pre);

        // Message nets: factor->variable and variable->variable share the
        // variable-destination merged arrays.
        backward_message_net(layer.factor_to_variable, layer.attention_variable,
                             layer_grad.factor_to_variable, layer_grad.attention_variable, f.fv,
                             batch.fv_rows, batch.v_src, batch.v_dst, d_v_messages, d_v_logit_pre,
                             d_h_fac_prev, d_h_var_prev);
        backward_message_net(layer.variable_to_variable, layer.attention_variable,
                             layer_grad.variable_to_variable, layer_grad.attention_variable, f.vv,
                             batch.vv_rows, batch.v_src, batch.v_dst, d_v_messages, d_v_logit_pre,
                             d_h_var_prev, d_h_var_prev);
        if (batch.n_fac > 0) {
            std::vector<int> all_rows(batch.f_src.size());
            for (std::size_t i = 0; i < all_rows.size(); ++i) all_rows[i] = static_cast<int>(i);
            backward_message_net(layer.variable_to_factor, layer.attention_factor,
                                 layer_grad.variable_to_factor, layer_grad.attention_factor, f.vf,
                                 all_rows, batch.f_src, batch.f_dst, d_f_messages, d_f_logit_pre,
                                 d_h_var_prev, d_h_fac_prev);
        }


        d_h_var = std::move(d_h_var_prev);
        d_h_fac = std::move(d_h_fac_prev);
    }

    // Encoders (affine).
    grads.variable_encoder.w += d_h_var.transpose() * batch.var_features;
    grads.variable_encoder.b += d_h_var.colwise().sum();
    if (batch.n_fac > 0) {
        grads.factor_encoder.w += d_h_fac.transpose() * batch.fac_features.topRows(batch.n_fac);
        grads.factor_encoder.b += d_h_fac.colwise().sum();
    }
    return loss;
}

AdamState init_adam(GnnModel& model) {
    AdamState state;
    const std::int64_t total = parameter_count(model);
    state.first_moment = Eigen::VectorXd::Zero(total);
    state.second_moment = Eigen::VectorXd::Zero(total);
    return state;
}

void adam_step(GnnModel& model, AdamState& state, GnnModel& grads, double learning_rate) {
    ++state.step;
    const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    std::vector<TensorRef> params = model_tensors(model);
    std::vector<TensorRef> gradient = model_tensors(grads);
    Eigen::Index offset = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        double* p = params[t].data;
        const double* g = gradient[t].data;
        for (Eigen::Index i = 0; i < params[t].size; ++i) {
            double& m = state.first_moment[offset + i];
            double& v = state.second_moment[offset + i];
            m = state.beta1 * m + (1.0 - state.beta1) * g[i];
            v = state.beta2 * v + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m / bias1;
            const double v_hat = v / bias2;
            p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
        offset += params[t].size;
    }
}

namespace {

constexpr char kMagic[8] = {'G', 'N', 'S', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof value);
    return value;
}

} // namespace

void save_checkpoint(const GnnModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof kMagic);
    write_pod(out, kVersion);
    const GnnConfig& c = model.config;
    for (int v : {c.embedding_size, c.message_size, c.layers, c.message_hidden,
                  c.prediction_hidden, c.max_buses, c.batch_size, c.epochs})
        write_pod(out, static_cast<std::int32_t>(v));
    write_pod(out, c.learning_rate);
    auto refs = model_tensors(const_cast<GnnModel&>(model));
    write_pod(out, static_cast<std::uint32_t>(refs.size()));
    for (const TensorRef& ref : refs) {
        write_pod(out, static_cast<std::uint32_t>(ref.size));
        for (Eigen::Index i = 0; i < ref.size; ++i)
            write_pod(out, static_cast<float>(ref.data[i]));
    }
    if (!out) throw IoError("short write on checkpoint: " + path);
}

GnnModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw ParseError("not a checkpoint file: " + path);
    if (read_pod<std::uint32_t>(in) != kVersion)
        throw ParseError("unsupported checkpoint version in " + path);
    GnnConfig cfg;
    cfg.embedding_size = read_pod<std::int32_t>(in);
    cfg.message_size = read_pod<std::int32_t>(in);
    cfg.layers = read_pod<std::int32_t>(in);
    cfg.message_hidden = read_pod<std::int32_t>(in);
    cfg.prediction_hidden = read_pod<std::int32_t>(in);
    cfg.max_buses = read_pod<std::int32_t>(in);
    cfg.batch_size = read_pod<std::int32_t>(in);
    cfg.epochs = read_pod<std::int32_t>(in);
    cfg.learning_rate = read_pod<double>(in);
    GnnModel model = allocate_model(cfg);
    auto refs = model_tensors(model);
    if (read_pod<std::uint32_t>(in) != refs.size())
        throw ParseError("checkpoint tensor count mismatch in " + path);
    for (TensorRef& ref : refs) {
        if (read_pod<std::uint32_t>(in) != static_cast<std::uint32_t>(ref.size))
            throw ParseError("checkpoint tensor size mismatch for " + ref.name);
        for (Eigen::Index i = 0; i < ref.size; ++i)
            ref.data[i] = static_cast<double>(read_pod<float>(in));
    }
    if (!in) throw ParseError("truncated checkpoint: " + path);
    return model;
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for hashing: " + path);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    char chunk[4096];
    while (in.read(chunk, sizeof chunk) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            hash ^= static_cast<unsigned char>(chunk[i]);
            hash *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

} // namespace gridnse
