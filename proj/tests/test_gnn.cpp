#include "gridnse/errors.hpp"
#include "gridnse/factor_graph.hpp"
#include "gridnse/gnn.hpp"
#include "gridnse/rng.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace gridnse;
namespace gt = gridnse::testing;

namespace {

MeasurementSet figure_set() {
    MeasurementSet ms;
    auto bus_m = [](MeasurementKind kind, int bus, double variance) {
        Measurement m;
        m.kind = kind;
        m.bus = bus;
        m.variance = variance;
        return m;
    };
    auto branch_m = [](MeasurementKind kind, double variance) {
        Measurement m;
        m.kind = kind;
        m.branch = 0;
        m.side = BranchSide::from_side;
        m.variance = variance;
        return m;
    };
    ms.items.push_back(bus_m(MeasurementKind::pmu_voltage_magnitude, 0, 1e-5));
    ms.items.push_back(bus_m(MeasurementKind::pmu_voltage_angle, 0, 1e-5));
    ms.items.push_back(branch_m(MeasurementKind::pmu_current_magnitude, 1e-5));
    ms.items.push_back(branch_m(MeasurementKind::pmu_current_angle, 1e-5));
    ms.items.push_back(bus_m(MeasurementKind::voltage_magnitude, 1, 1e-3));
    ms.items.push_back(branch_m(MeasurementKind::active_flow, 1e-3));
    return ms;
}

AugmentedFactorGraph figure_graph(Rng& rng) {
    const CaseData data = gt::two_bus_case();
    MeasurementSet ms = figure_set();
    for (Measurement& m : ms.items) m.value = rng.uniform(-1.0, 1.0);
    AugmentedFactorGraph g = build_factor_graph(data.system, ms);
    encode_features(g, 30);
    refresh_factor_values(g, ms);
    return g;
}

GnnConfig tiny_config() {
    GnnConfig cfg;
    cfg.embedding_size = 3;
    cfg.message_size = 3;
    cfg.message_hidden = 3;
    cfg.prediction_hidden = 3;
    cfg.layers = 2;
    cfg.max_buses = 30;
    return cfg;
}

} // namespace

TEST_CASE("init is deterministic and counts parameters in closed form") {
    GnnConfig cfg; // reference-scale: s=u=64, K=4
    const GnnModel a = init_model(cfg, 42);
    const GnnModel b = init_model(cfg, 42);
    auto ra = model_tensors(const_cast<GnnModel&>(a));
    auto rb = model_tensors(const_cast<GnnModel&>(b));
    REQUIRE(ra.size() == rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i)
        for (Eigen::Index j = 0; j < ra[i].size; ++j) CHECK(ra[i].data[j] == rb[i].data[j]);

    // Hand count of layer shapes (s = u = hidden = 64, input width 12).
    const std::int64_t s = 64, u = 64, mh = 64, ph = 64, in = 12, K = 4;
    const std::int64_t message_net = mh * s + mh * s + mh + u * mh + u;
    const std::int64_t per_layer = 3 * message_net + 2 * (2 * s) + 2 * (s * u + s);
    const std::int64_t expected =
        2 * (s * in + s) + K * per_layer + (ph * s + ph) + (ph + 1);
    CHECK(parameter_count(a) == expected);

    const GnnModel c = init_model(cfg, 43);
    auto rc = model_tensors(const_cast<GnnModel&>(c));
    bool any_different = false;
    for (Eigen::Index j = 0; j < ra[0].size; ++j)
        any_different = any_different || ra[0].data[j] != rc[0].data[j];
    CHECK(any_different);
}

TEST_CASE("minimal model builds and rejects bad configs") {
    GnnConfig cfg = tiny_config();
    cfg.embedding_size = 1;
    cfg.message_size = 1;
    cfg.message_hidden = 1;
    cfg.prediction_hidden = 1;
    cfg.layers = 1;
    const GnnModel model = init_model(cfg, 1);
    CHECK(parameter_count(model) > 0);

    GnnConfig bad = tiny_config();
    bad.layers = 0;
    CHECK_THROWS_AS(init_model(bad, 1), ConfigError);
}

TEST_CASE("forward shape and isolated-node semantics") {
    Rng rng(7);
    const AugmentedFactorGraph g = figure_graph(rng);
    const GnnModel model = init_model(tiny_config(), 5);
    const Eigen::VectorXd preds = forward(model, g);
    CHECK(preds.size() == 4); // V0, th0, V1, th1
    CHECK(preds.allFinite());

    // Graph with no measurements: every variable node is isolated, so the
    // prediction is Pred(encoder(feature)) regardless of layer count.
    const CaseData data = gt::two_bus_case();
    AugmentedFactorGraph empty = build_factor_graph(data.system, MeasurementSet{});
    encode_features(empty, 30);
    const Eigen::VectorXd k2 = forward(model, empty);
    GnnModel deep = model;
    deep.config.layers = 2;
    GnnConfig cfg_k1 = tiny_config();
    cfg_k1.layers = 1;
    GnnModel shallow = init_model(cfg_k1, 5);
    // Same encoder/pred parameters as the K=2 model by construction order.
    shallow.variable_encoder = model.variable_encoder;
    shallow.factor_encoder = model.factor_encoder;
    shallow.prediction_hidden_layer = model.prediction_hidden_layer;
    shallow.prediction_output = model.prediction_output;
    shallow.layers[0] = model.layers[0];
    const Eigen::VectorXd k1 = forward(shallow, empty);
    CHECK((k2 - k1).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("attention aggregation: singleton, ties and convexity") {
    Eigen::MatrixXd one(1, 3);
    one << 0.3, -0.2, 0.9;
    Eigen::VectorXd logit(1);
    logit << 4.2;
    CHECK((attention_aggregate(one, logit).transpose() - one.row(0)).cwiseAbs().maxCoeff() ==
          0.0);

    // Two identical messages -> that message no matter the logits.
    Eigen::MatrixXd twin(2, 3);
    twin << 0.5, 0.1, -1.0, 0.5, 0.1, -1.0;
    Eigen::VectorXd skew(2);
    skew << 3.0, -2.0;
    CHECK((attention_aggregate(twin, skew).transpose() - twin.row(0)).cwiseAbs().maxCoeff() <=
          1e-15);

    // Equal logits -> arithmetic mean.
    Eigen::MatrixXd pair(2, 3);
    pair << 1.0, 0.0, 2.0, 3.0, 4.0, -2.0;
    Eigen::VectorXd zeros = Eigen::VectorXd::Zero(2);
    const Eigen::VectorXd mean = attention_aggregate(pair, zeros);
    CHECK(mean[0] == doctest::Approx(2.0));
    CHECK(mean[1] == doctest::Approx(2.0));
    CHECK(mean[2] == doctest::Approx(0.0));

    // Convex hull bound, componentwise.
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::MatrixXd messages(5, 4);
        Eigen::VectorXd logits(5);
        for (int i = 0; i < 5; ++i) {
            logits[i] = rng.uniform(-3.0, 3.0);
            for (int j = 0; j < 4; ++j) messages(i, j) = rng.uniform(-2.0, 2.0);
        }
        const Eigen::VectorXd agg = attention_aggregate(messages, logits);
        for (int j = 0; j < 4; ++j) {
            CHECK(agg[j] >= messages.col(j).minCoeff() - 1e-12);
            CHECK(agg[j] <= messages.col(j).maxCoeff() + 1e-12);
        }
    }

    CHECK_THROWS_AS(attention_aggregate(Eigen::MatrixXd(0, 3), Eigen::VectorXd(0)),
                    ValidationError);
}

TEST_CASE("loss examples") {
    Eigen::VectorXd preds(2), labels(2);
    preds << 1.0, 2.0;
    labels << 0.0, 0.0;
    CHECK(loss_mse(preds, labels) == doctest::Approx(2.5));
    CHECK(loss_mse(labels, labels) == 0.0);
    // Duplicating the batch leaves the mean unchanged.
    Eigen::VectorXd preds2(4), labels2(4);
    preds2 << 1.0, 2.0, 1.0, 2.0;
    labels2 << 0.0, 0.0, 0.0, 0.0;
    CHECK(loss_mse(preds2, labels2) == doctest::Approx(2.5));
    Eigen::VectorXd three(3);
    CHECK_THROWS_AS(loss_mse(preds, three), ValidationError);
}

TEST_CASE("gradients match central finite differences (property, 20 models)") {
    for (int model_index = 0; model_index < 20; ++model_index) {
        Rng rng(100 + static_cast<std::uint64_t>(model_index));
        const AugmentedFactorGraph g = figure_graph(rng);
        const CompiledBatch batch = compile_batch({&g});
        GnnModel model = init_model(tiny_config(), 1000 + model_index);
        Eigen::VectorXd labels(4);
        for (int i = 0; i < 4; ++i) labels[i] = rng.uniform(-1.0, 1.0);

        const ForwardTrace trace = forward_batch(model, batch);
        GnnModel grads = zeros_like(model);
        backward_batch(model, batch, trace, labels, grads);

        auto params = model_tensors(model);
        auto grad_refs = model_tensors(grads);
        const double step = 1e-5;
        for (std::size_t t = 0; t < params.size(); ++t) {
            for (Eigen::Index i = 0; i < params[t].size; ++i) {
                const double keep = params[t].data[i];
                params[t].data[i] = keep + step;
                const double up = loss_mse(forward_batch(model, batch).predictions, labels);
                params[t].data[i] = keep - step;
                const double down = loss_mse(forward_batch(model, batch).predictions, labels);
                params[t].data[i] = keep;
                const double numeric = (up - down) / (2.0 * step);
                const double analytic = grad_refs[t].data[i];
                const double err = std::abs(analytic - numeric);
                const bool ok = err <= 1e-7 || err <= 1e-4 * std::abs(numeric);
                if (!ok)
                    MESSAGE("tensor ", params[t].name, " entry ", i, ": analytic ", analytic,
                            " numeric ", numeric);
                CHECK(ok);
            }
        }
    }
}

TEST_CASE("unused parameter sets get exactly zero gradient") {
    const CaseData data = gt::two_bus_case();
    AugmentedFactorGraph empty = build_factor_graph(data.system, MeasurementSet{});
    encode_features(empty, 30);
    GnnModel model = init_model(tiny_config(), 3);
    const CompiledBatch batch = compile_batch({&empty});
    const ForwardTrace trace = forward_batch(model, batch);
    Eigen::VectorXd labels = Eigen::VectorXd::Zero(4);
    GnnModel grads = zeros_like(model);
    backward_batch(model, batch, trace, labels, grads);
    for (const GnnLayerParams& layer : grads.layers) {
        CHECK(layer.variable_to_variable.w1_src.cwiseAbs().maxCoeff() == 0.0);
        CHECK(layer.factor_to_variable.w2.cwiseAbs().maxCoeff() == 0.0);
        CHECK(layer.attention_variable.cwiseAbs().maxCoeff() == 0.0);
        CHECK(layer.update_factor.w.cwiseAbs().maxCoeff() == 0.0);
    }
    // Encoders and head are used and generally nonzero.
    CHECK(grads.variable_encoder.w.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("neighbor-order invariance: shuffled edge input, identical output") {
    Rng rng(17);
    AugmentedFactorGraph g = figure_graph(rng);
    const GnnModel model = init_model(tiny_config(), 21);
    const Eigen::VectorXd base = forward(model, g);
    AugmentedFactorGraph shuffled = g;
    rng.shuffle(shuffled.factor_edges);
    rng.shuffle(shuffled.variable_edges);
    for (auto& [a, b] : shuffled.variable_edges)
        if (a > b) std::swap(a, b);
    const Eigen::VectorXd moved = forward(model, shuffled);
    CHECK((base - moved).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("adam: zero grads, closed-form first step, step counter") {
    GnnModel model = init_model(tiny_config(), 4);
    AdamState adam = init_adam(model);
    GnnModel grads = zeros_like(model);

    GnnModel before = model;
    adam_step(model, adam, grads, 1e-3);
    auto pa = model_tensors(before);
    auto pb = model_tensors(model);
    for (std::size_t t = 0; t < pa.size(); ++t)
        for (Eigen::Index i = 0; i < pa[t].size; ++i) CHECK(pa[t].data[i] == pb[t].data[i]);
    CHECK(adam.step == 1);

    // Single nonzero gradient on a fresh state: the bias-corrected first
    // step reduces to lr * sign(g).
    AdamState fresh = init_adam(model);
    auto grad_refs = model_tensors(grads);
    grad_refs[0].data[0] = 3.0;
    const double keep = model_tensors(model)[0].data[0];
    adam_step(model, fresh, grads, 1e-3);
    CHECK(fresh.step == 1);
    CHECK(adam.step == 1);
    const double moved = model_tensors(model)[0].data[0];
    CHECK(moved == doctest::Approx(keep - 1e-3).epsilon(1e-6));
}

TEST_CASE("training trajectory is deterministic for a fixed seed") {
    Rng rng(31);
    const AugmentedFactorGraph g = figure_graph(rng);
    const CompiledBatch batch = compile_batch({&g});
    Eigen::VectorXd labels(4);
    labels << 1.0, 0.0, 0.98, -0.02;

    auto run = [&]() {
        GnnModel model = init_model(tiny_config(), 77);
        AdamState adam = init_adam(model);
        GnnModel grads = zeros_like(model);
        double last = 0.0;
        for (int step = 0; step < 25; ++step) {
            const ForwardTrace trace = forward_batch(model, batch);
            last = backward_batch(model, batch, trace, labels, grads);
            adam_step(model, adam, grads, 1e-2);
        }
        return std::pair<double, double>(last, model_tensors(model)[0].data[0]);
    };
    const auto [loss_a, param_a] = run();
    const auto [loss_b, param_b] = run();
    CHECK(loss_a == loss_b);
    CHECK(param_a == param_b);
}

TEST_CASE("tiny model memorizes one graph (optimization sanity)") {
    Rng rng(41);
    const AugmentedFactorGraph g = figure_graph(rng);
    const CompiledBatch batch = compile_batch({&g});
    Eigen::VectorXd labels(4);
    labels << 1.0, 0.0, 0.97, -0.05;
    // Width-3 nets can suffer a full dead-ReLU collapse on unlucky seeds;
    // this is an optimizer sanity canary, so a healthy seed is pinned.
    GnnModel model = init_model(tiny_config(), 9);
    AdamState adam = init_adam(model);
    GnnModel grads = zeros_like(model);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 800; ++step) {
        const ForwardTrace trace = forward_batch(model, batch);
        last = backward_batch(model, batch, trace, labels, grads);
        if (step == 0) first = last;
        adam_step(model, adam, grads, 3e-3);
    }
    CHECK(last < first * 1e-6);
    CHECK(last < 1e-8);
}

TEST_CASE("checkpoint round trip preserves config and f32-rounded weights") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "gridnse_test.ckpt").string();
    GnnConfig cfg = tiny_config();
    const GnnModel model = init_model(cfg, 11);
    save_checkpoint(model, path);
    const GnnModel loaded = load_checkpoint(path);
    CHECK(loaded.config.embedding_size == cfg.embedding_size);
    CHECK(loaded.config.layers == cfg.layers);
    CHECK(loaded.config.max_buses == cfg.max_buses);
    auto ra = model_tensors(const_cast<GnnModel&>(model));
    auto rb = model_tensors(const_cast<GnnModel&>(loaded));
    for (std::size_t t = 0; t < ra.size(); ++t)
        for (Eigen::Index i = 0; i < ra[t].size; ++i)
            CHECK(rb[t].data[i] == static_cast<double>(static_cast<float>(ra[t].data[i])));
    CHECK(file_hash_hex(path).size() == 16);
    fs::remove(path);
}
