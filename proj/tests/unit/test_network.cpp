#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellxai/errors.hpp"
#include "cellxai/network.hpp"

using namespace cellxai;
using namespace cellxai::tensornet;

namespace {

NetworkConfig make_config(std::size_t input_dim, std::vector<LayerSpec> layers) {
    NetworkConfig config;
    config.input_dim = input_dim;
    config.layers = std::move(layers);
    return config;
}

LayerSpec head(std::size_t width) { return {LayerKind::time_distributed_dense, width, Activation::linear}; }

template <typename S>
Tensor<S> random_tensor(std::vector<std::size_t> shape, CounterRng& rng, double scale = 1.0) {
    Tensor<S> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<S>(scale * rng.normal());
    return t;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Reference per-increment evaluation using the single-sample cell steps.
Tensor<double> step_reference(const NetworkConfig& config, const ModelParams<double>& params,
                              const Tensor<double>& x) {
    const std::size_t batch = x.dim(0), steps = x.dim(1);
    Tensor<double> out({batch, steps, config.output_dim()});
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<Vector<double>> h(config.layers.size()), c(config.layers.size());
        for (std::size_t l = 0; l < config.layers.size(); ++l) {
            h[l] = Vector<double>::Zero(config.layers[l].width);
            c[l] = Vector<double>::Zero(config.layers[l].width);
        }
        for (std::size_t t = 0; t < steps; ++t) {
            Vector<double> v(config.input_dim);
            for (std::size_t k = 0; k < config.input_dim; ++k) v[k] = x.at(b, t, k);
            for (std::size_t l = 0; l < config.layers.size(); ++l) {
                const auto& spec = config.layers[l];
                switch (spec.kind) {
                    case LayerKind::dense:
                    case LayerKind::time_distributed_dense:
                        v = dense_forward(v, dense_weights(config, params, l), spec.activation);
                        break;
                    case LayerKind::simple_rnn: {
                        auto s = simple_rnn_step(v, h[l], simple_rnn_weights(config, params, l), spec.activation);
                        h[l] = s.hidden;
                        v = s.hidden;
                        break;
                    }
                    case LayerKind::lstm: {
                        auto s = lstm_step(v, h[l], c[l], lstm_weights(config, params, l));
                        h[l] = s.hidden;
                        c[l] = s.cell;
                        v = s.hidden;
                        break;
                    }
                    case LayerKind::gru: {
                        auto s = gru_step(v, h[l], gru_weights(config, params, l));
                        h[l] = s.hidden;
                        v = s.hidden;
                        break;
                    }
                }
            }
            for (std::size_t k = 0; k < v.size(); ++k) out.at(b, t, k) = v[k];
        }
    }
    return out;
}

}  // namespace

TEST(Activations, HandValues) {
    EXPECT_DOUBLE_EQ(activate(Activation::rect, -2.0), 0.0);
    EXPECT_DOUBLE_EQ(activate(Activation::rect, 1.5), 1.5);
    EXPECT_NEAR(activate(Activation::sig, 0.0), 0.5, 1e-15);
    EXPECT_NEAR(activate(Activation::tanh, 0.5), 0.46211715726000974, 1e-15);
    EXPECT_NEAR(activate(Activation::elu, -1.0), std::exp(-1.0) - 1.0, 1e-15);
    EXPECT_NEAR(activate(Activation::splus, 0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(activate(Activation::splus, 50.0), 50.0, 1e-12);
    EXPECT_DOUBLE_EQ(activate(Activation::linear, -3.25), -3.25);
}

TEST(Config, ValidationRejectsBadHeads) {
    EXPECT_THROW(validate(make_config(1, {})), UsageError);
    EXPECT_THROW(validate(make_config(1, {{LayerKind::lstm, 4, Activation::tanh}})), UsageError);
    EXPECT_THROW(validate(make_config(1, {{LayerKind::time_distributed_dense, 1, Activation::tanh}})), UsageError);
    EXPECT_THROW(validate(make_config(0, {head(1)})), UsageError);
    EXPECT_THROW(validate(make_config(1, {{LayerKind::gru, 0, Activation::tanh}, head(1)})), UsageError);
    EXPECT_NO_THROW(validate(make_config(1, {{LayerKind::lstm, 4, Activation::tanh}, head(2)})));
}

TEST(Config, NamesRoundTrip) {
    for (auto a : {Activation::rect, Activation::sig, Activation::tanh, Activation::elu, Activation::splus,
                   Activation::linear})
        EXPECT_EQ(parse_activation(to_string(a)), a);
    for (auto k : {LayerKind::dense, LayerKind::simple_rnn, LayerKind::lstm, LayerKind::gru,
                   LayerKind::time_distributed_dense})
        EXPECT_EQ(parse_layer_kind(to_string(k)), k);
    EXPECT_THROW(parse_activation("relu6"), UsageError);
}

TEST(Layout, ShapesAndCounts) {
    const auto config = make_config(2, {{LayerKind::lstm, 3, Activation::tanh},
                                        {LayerKind::simple_rnn, 4, Activation::tanh},
                                        {LayerKind::gru, 5, Activation::tanh},
                                        head(2)});
    const auto layout = parameter_layout(config);
    // lstm: 4 * (3*(2+3) + 3), simple_rnn: 4*(3+4)+4 + 4*4+4, gru: 3*(5*(4+5)+5), head: 2*5+2
    const std::size_t expected = 4 * (15 + 3) + (28 + 4 + 16 + 4) + 3 * (45 + 5) + 12;
    std::size_t total = 0;
    for (const auto& slot : layout) total += Tensor<double>::element_count(slot.shape);
    EXPECT_EQ(total, expected);
    EXPECT_EQ(layout.size(), 8u + 4u + 6u + 2u);
    EXPECT_EQ(layout[0].name, "layer0.input_gate.kernel");
    EXPECT_EQ(layout[0].shape, (std::vector<std::size_t>{3, 5}));
    EXPECT_EQ(layer_offsets(config), (std::vector<std::size_t>{0, 8, 12, 18}));
    CounterRng rng(1);
    EXPECT_EQ(init_params<double>(config, rng).parameter_count(), expected);
}

TEST(Init, DeterministicAndForgetBias) {
    const auto config = make_config(1, {{LayerKind::lstm, 6, Activation::tanh}, head(1)});
    CounterRng a(5), b(5), c(6);
    const auto pa = init_params<double>(config, a);
    EXPECT_EQ(pa, init_params<double>(config, b));
    EXPECT_NE(pa, init_params<double>(config, c));
    const auto& forget_bias = pa.tensors[3];
    EXPECT_EQ(pa.names[3], "layer0.forget_gate.bias");
    for (double v : forget_bias.values()) EXPECT_EQ(v, 1.0);
}

TEST(Init, RecurrentBlockIsOrthogonal) {
    const auto config = make_config(2, {{LayerKind::gru, 5, Activation::tanh}, head(1)});
    CounterRng rng(11);
    const auto p = init_params<double>(config, rng);
    const auto& kernel = p.tensors[0];
    Matrix<double> u(5, 5);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) u(i, j) = kernel.at(i, 2 + j);
    EXPECT_LT((u.transpose() * u - Matrix<double>::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, DenseHandComputation) {
    auto config = make_config(2, {{LayerKind::dense, 2, Activation::rect}, head(1)});
    auto p = zero_params<double>(config);
    // W1 = [[1, -1], [2, 0.5]], b1 = [0, -1], W2 = [1, 3], b2 = 0.25
    p.tensors[0] = Tensor<double>({2, 2}, {1, -1, 2, 0.5});
    p.tensors[1] = Tensor<double>({2}, {0, -1});
    p.tensors[2] = Tensor<double>({1, 2}, {1, 3});
    p.tensors[3] = Tensor<double>({1}, {0.25});
    Tensor<double> x({1, 2, 2}, {1, 2, 3, 1});
    const auto y = forward_sequence(config, p, x).outputs;
    // t0: h = rect([-1, 2]) = [0, 2] -> 6.25; t1: h = rect([2, 5.5]) -> 18.75
    EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 6.25);
    EXPECT_DOUBLE_EQ(y.at(0, 1, 0), 18.75);
}

TEST(Forward, ScalarLstmHandComputation) {
    auto config = make_config(1, {{LayerKind::lstm, 1, Activation::tanh}, head(1)});
    auto p = zero_params<double>(config);
    const double wi[2] = {0.5, -0.3}, wf[2] = {0.2, 0.4}, wo[2] = {-0.6, 0.1}, wc[2] = {0.9, 0.7};
    const double bi = 0.1, bf = 1.0, bo = -0.2, bc = 0.05;
    p.tensors[0] = Tensor<double>({1, 2}, {wi[0], wi[1]});
    p.tensors[1] = Tensor<double>({1}, {bi});
    p.tensors[2] = Tensor<double>({1, 2}, {wf[0], wf[1]});
    p.tensors[3] = Tensor<double>({1}, {bf});
    p.tensors[4] = Tensor<double>({1, 2}, {wo[0], wo[1]});
    p.tensors[5] = Tensor<double>({1}, {bo});
    p.tensors[6] = Tensor<double>({1, 2}, {wc[0], wc[1]});
    p.tensors[7] = Tensor<double>({1}, {bc});
    p.tensors[8] = Tensor<double>({1, 1}, {2.0});
    p.tensors[9] = Tensor<double>({1}, {-0.5});

    const std::vector<double> xs{0.3, -1.2, 0.8};
    Tensor<double> x({1, 3, 1}, xs);
    const auto result = forward_sequence(config, p, x, true);
    double a = 0.0, c = 0.0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        const double i = sigmoid(wi[0] * xs[t] + wi[1] * a + bi);
        const double f = sigmoid(wf[0] * xs[t] + wf[1] * a + bf);
        const double o = sigmoid(wo[0] * xs[t] + wo[1] * a + bo);
        const double cand = std::tanh(wc[0] * xs[t] + wc[1] * a + bc);
        c = f * c + i * cand;
        a = o * std::tanh(c);
        EXPECT_NEAR(result.outputs.at(0, t, 0), 2.0 * a - 0.5, 1e-14);
        EXPECT_NEAR(result.trace->layers[0].cell.at(0, t, 0), c, 1e-14);
        EXPECT_NEAR(result.trace->layers[0].hidden.at(0, t, 0), a, 1e-14);
    }
}

TEST(Forward, ScalarGruHandComputation) {
    auto config = make_config(1, {{LayerKind::gru, 1, Activation::tanh}, head(1)});
    auto p = zero_params<double>(config);
    const double wz[2] = {0.4, -0.2}, wr[2] = {-0.7, 0.3}, wn[2] = {1.1, 0.6};
    const double bz = 0.1, br = 0.2, bn = -0.1;
    p.tensors[0] = Tensor<double>({1, 2}, {wz[0], wz[1]});
    p.tensors[1] = Tensor<double>({1}, {bz});
    p.tensors[2] = Tensor<double>({1, 2}, {wr[0], wr[1]});
    p.tensors[3] = Tensor<double>({1}, {br});
    p.tensors[4] = Tensor<double>({1, 2}, {wn[0], wn[1]});
    p.tensors[5] = Tensor<double>({1}, {bn});
    p.tensors[6] = Tensor<double>({1, 1}, {1.0});
    const std::vector<double> xs{1.0, 0.5, -0.5, 2.0};
    const auto y = forward_sequence(config, p, Tensor<double>({1, 4, 1}, xs)).outputs;
    double h = 0.0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        const double z = sigmoid(wz[0] * xs[t] + wz[1] * h + bz);
        const double r = sigmoid(wr[0] * xs[t] + wr[1] * h + br);
        const double n = std::tanh(wn[0] * xs[t] + wn[1] * r * h + bn);
        h = (1 - z) * n + z * h;
        EXPECT_NEAR(y.at(0, t, 0), h, 1e-14);
    }
}

TEST(Forward, ScalarSimpleRnnHandComputation) {
    auto config = make_config(1, {{LayerKind::simple_rnn, 1, Activation::tanh}, head(1)});
    auto p = zero_params<double>(config);
    p.tensors[0] = Tensor<double>({1, 2}, {0.8, -0.4});
    p.tensors[1] = Tensor<double>({1}, {0.1});
    p.tensors[2] = Tensor<double>({1, 1}, {1.5});
    p.tensors[3] = Tensor<double>({1}, {-0.2});
    p.tensors[4] = Tensor<double>({1, 1}, {1.0});
    const std::vector<double> xs{0.5, 1.0, -1.0};
    const auto r = forward_sequence(config, p, Tensor<double>({1, 3, 1}, xs), true);
    double a = 0.0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        const double c = std::tanh(0.8 * xs[t] - 0.4 * a + 0.1);
        a = 1.5 * c - 0.2;
        EXPECT_NEAR(r.outputs.at(0, t, 0), a, 1e-14);
        EXPECT_NEAR(r.trace->layers[0].cell.at(0, t, 0), c, 1e-14);
    }
}

TEST(Forward, ZeroParametersGiveZeroOutputs) {
    for (auto kind : {LayerKind::dense, LayerKind::simple_rnn, LayerKind::lstm, LayerKind::gru}) {
        auto config = make_config(3, {{kind, 4, Activation::tanh}, head(2)});
        const auto p = zero_params<double>(config);
        CounterRng rng(3);
        const auto y = forward_sequence(config, p, random_tensor<double>({2, 5, 3}, rng)).outputs;
        for (double v : y.values()) EXPECT_EQ(v, 0.0) << to_string(kind);
    }
}

TEST(Forward, MatchesSingleStepCells) {
    CounterRng rng(21);
    const auto config = make_config(2, {{LayerKind::lstm, 5, Activation::tanh},
                                        {LayerKind::gru, 4, Activation::tanh},
                                        {LayerKind::simple_rnn, 3, Activation::elu},
                                        {LayerKind::dense, 3, Activation::splus},
                                        head(2)});
    const auto p = init_params<double>(config, rng);
    const auto x = random_tensor<double>({3, 12, 2}, rng);
    const auto batched = forward_sequence(config, p, x).outputs;
    const auto reference = step_reference(config, p, x);
    for (std::size_t i = 0; i < batched.size(); ++i) EXPECT_NEAR(batched[i], reference[i], 1e-12);
}

TEST(Forward, BatchPermutationEquivariance) {
    CounterRng rng(22);
    const auto config = make_config(1, {{LayerKind::lstm, 6, Activation::tanh}, head(1)});
    const auto p = init_params<double>(config, rng);
    const auto x = random_tensor<double>({5, 7, 1}, rng);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor<double> xp({5, 7, 1});
    for (std::size_t b = 0; b < 5; ++b)
        for (std::size_t t = 0; t < 7; ++t) xp.at(b, t, 0) = x.at(perm[b], t, 0);
    const auto y = forward_sequence(config, p, x).outputs;
    const auto yp = forward_sequence(config, p, xp).outputs;
    for (std::size_t b = 0; b < 5; ++b)
        for (std::size_t t = 0; t < 7; ++t) EXPECT_DOUBLE_EQ(yp.at(b, t, 0), y.at(perm[b], t, 0));
}

TEST(Forward, FloatTracksDouble) {
    CounterRng rng(23);
    const auto config = make_config(1, {{LayerKind::gru, 8, Activation::tanh}, head(1)});
    const auto p = init_params<double>(config, rng);
    const auto x = random_tensor<double>({2, 20, 1}, rng);
    const auto yd = forward_sequence(config, p, x).outputs;
    const auto yf = forward_sequence(config, p.cast<float>(), x.cast<float>()).outputs;
    for (std::size_t i = 0; i < yd.size(); ++i) EXPECT_NEAR(yf[i], yd[i], 1e-5);
}

TEST(Forward, ShapeMismatchIsUsageError) {
    const auto config = make_config(2, {{LayerKind::lstm, 2, Activation::tanh}, head(1)});
    const auto p = zero_params<double>(config);
    EXPECT_THROW(forward_sequence(config, p, Tensor<double>({1, 3, 1})), UsageError);
}

TEST(Forward, NonFiniteInputRaisesNumericError) {
    const auto config = make_config(1, {{LayerKind::dense, 2, Activation::rect}, head(1)});
    CounterRng rng(2);
    const auto p = init_params<double>(config, rng);
    Tensor<double> x({1, 4, 1}, 0.5);
    x.at(0, 2, 0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(forward_sequence(config, p, x), NumericError);
}

TEST(Loss, MeanSquaredError) {
    Tensor<double> a({1, 2, 2}, {1, 2, 3, 4});
    Tensor<double> b({1, 2, 2}, {1, 0, 3, 7});
    EXPECT_DOUBLE_EQ(mse_loss(a, b), (4.0 + 9.0) / 4.0);
}

namespace {

// Central differences on every parameter against backward().
double gradient_check(const NetworkConfig& config, std::uint64_t seed, std::size_t truncation = 0) {
    CounterRng rng(seed);
    auto p = init_params<double>(config, rng);
    // Perturb biases too so zero-initialized entries are exercised.
    for (auto& t : p.tensors)
        for (auto& v : t.values()) v += 0.1 * rng.normal();
    const auto x = random_tensor<double>({2, 6, config.input_dim}, rng);
    const auto y = random_tensor<double>({2, 6, config.output_dim()}, rng);
    const auto grads = backward(config, p, x, y, truncation).gradients;
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t n = 0; n < p.size(); ++n) {
        for (std::size_t i = 0; i < p.tensors[n].size(); ++i) {
            auto plus = p, minus = p;
            plus.tensors[n][i] += h;
            minus.tensors[n][i] -= h;
            const double fd = (mse_loss(forward_sequence(config, plus, x).outputs, y) -
                               mse_loss(forward_sequence(config, minus, x).outputs, y)) /
                              (2 * h);
            const double an = grads.tensors[n][i];
            const double rel = std::abs(fd - an) / std::max(1e-3, std::abs(fd) + std::abs(an));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace

TEST(Backward, LossMatchesForward) {
    CounterRng rng(31);
    const auto config = make_config(1, {{LayerKind::lstm, 3, Activation::tanh}, head(1)});
    const auto p = init_params<double>(config, rng);
    const auto x = random_tensor<double>({4, 5, 1}, rng);
    const auto y = random_tensor<double>({4, 5, 1}, rng);
    EXPECT_NEAR(backward(config, p, x, y).loss, mse_loss(forward_sequence(config, p, x).outputs, y), 1e-14);
}

TEST(Backward, FiniteDifferenceAcrossRandomConfigs) {
    CounterRng rng(4321);
    const LayerKind kinds[] = {LayerKind::dense, LayerKind::simple_rnn, LayerKind::lstm, LayerKind::gru};
    const Activation acts[] = {Activation::rect, Activation::sig, Activation::tanh, Activation::elu,
                               Activation::splus, Activation::linear};
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t depth = 1 + rng.below(2);
        NetworkConfig config;
        config.input_dim = 1 + rng.below(2);
        for (std::size_t l = 0; l < depth; ++l) {
            // Keep at least one recurrent layer in most draws.
            const LayerKind kind = (l == 0 && trial % 4 != 0) ? kinds[1 + rng.below(3)] : kinds[rng.below(4)];
            config.layers.push_back({kind, 2 + rng.below(2), acts[rng.below(6)]});
        }
        config.layers.push_back(head(1 + rng.below(2)));
        const double worst = gradient_check(config, 100 + trial);
        EXPECT_LT(worst, 1e-5) << "trial " << trial;
    }
}

TEST(Backward, TruncationZeroEqualsLongWindow) {
    const auto config = make_config(1, {{LayerKind::gru, 3, Activation::tanh}, head(1)});
    CounterRng rng(8);
    const auto p = init_params<double>(config, rng);
    const auto x = random_tensor<double>({2, 6, 1}, rng);
    const auto y = random_tensor<double>({2, 6, 1}, rng);
    const auto full = backward(config, p, x, y, 0).gradients;
    const auto wide = backward(config, p, x, y, 6).gradients;
    const auto cut = backward(config, p, x, y, 2).gradients;
    EXPECT_EQ(full, wide);
    EXPECT_NE(full, cut);
}

TEST(Backward, DenseOnlyHasNoTimeCoupling) {
    const auto config = make_config(1, {{LayerKind::dense, 3, Activation::tanh}, head(1)});
    CounterRng rng(9);
    const auto p = init_params<double>(config, rng);
    const auto x = random_tensor<double>({2, 6, 1}, rng);
    const auto y = random_tensor<double>({2, 6, 1}, rng);
    const auto full = backward(config, p, x, y, 0).gradients;
    const auto cut = backward(config, p, x, y, 1).gradients;
    for (std::size_t n = 0; n < full.size(); ++n)
        for (std::size_t i = 0; i < full.tensors[n].size(); ++i)
            EXPECT_NEAR(full.tensors[n][i], cut.tensors[n][i], 1e-15);
}
