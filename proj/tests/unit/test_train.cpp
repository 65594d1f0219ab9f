#include <gtest/gtest.h>

#include <cmath>

#include "cellxai/train.hpp"

using namespace cellxai;
using namespace cellxai::tensornet;

namespace {

NetworkConfig linear_config() {
    NetworkConfig config;
    config.input_dim = 1;
    config.layers = {{LayerKind::time_distributed_dense, 1, Activation::linear}};
    return config;
}

// y = 2x on random inputs, shaped (samples, 4, 1).
TrainingData<double> doubling_problem(std::size_t samples, std::uint64_t seed) {
    CounterRng rng(seed);
    auto make = [&](std::size_t n) {
        SequenceData<double> d{Tensor<double>({n, 4, 1}), Tensor<double>({n, 4, 1})};
        for (std::size_t i = 0; i < d.inputs.size(); ++i) {
            d.inputs[i] = rng.normal();
            d.targets[i] = 2.0 * d.inputs[i];
        }
        return d;
    };
    TrainingData<double> data;
    data.train = make(samples);
    data.valid = make(samples / 4 + 1);
    return data;
}

ModelParams<double> single_tensor(std::vector<double> values) {
    ModelParams<double> p;
    p.names = {"w"};
    const std::size_t n = values.size();
    p.tensors = {Tensor<double>({n}, std::move(values))};
    return p;
}

}  // namespace

TEST(Adam, ZeroGradientKeepsParameters) {
    auto p = single_tensor({1.0, -2.0});
    auto state = AdamState<double>::for_params(p, 0.1);
    state.first_moment.tensors[0] = Tensor<double>({2}, {0.5, 0.5});
    const auto before = p;
    adam_update(p, single_tensor({0.0, 0.0}), state);
    EXPECT_EQ(state.step, 1u);
    EXPECT_DOUBLE_EQ(state.first_moment.tensors[0][0], 0.45);
    // The decayed first moment still moves the parameter; with zero moments nothing moves.
    auto q = before;
    auto fresh = AdamState<double>::for_params(q, 0.1);
    adam_update(q, single_tensor({0.0, 0.0}), fresh);
    EXPECT_EQ(q, before);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
    auto p = single_tensor({0.0, 0.0, 0.0});
    auto state = AdamState<double>::for_params(p, 0.01);
    adam_update(p, single_tensor({3.0, -1e-3, 250.0}), state);
    // At t = 1 the bias-corrected step is alpha * g / (|g| + eps).
    EXPECT_NEAR(p.tensors[0][0], -0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
    EXPECT_NEAR(p.tensors[0][1], 0.01 * 1e-3 / (1e-3 + 1e-8), 1e-15);
    for (double v : p.tensors[0].values()) EXPECT_LE(std::abs(v), 0.01 * (1 + 1e-12));
}

TEST(Adam, SecondStepMatchesFormula) {
    auto p = single_tensor({1.0});
    auto state = AdamState<double>::for_params(p, 0.1);
    adam_update(p, single_tensor({2.0}), state);
    adam_update(p, single_tensor({-1.0}), state);
    const double m = 0.9 * (0.1 * 2.0) + 0.1 * -1.0;
    const double v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0;
    const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
    const double expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    EXPECT_NEAR(p.tensors[0][0], expected, 1e-12);
}

TEST(Adam, Deterministic) {
    auto a = single_tensor({0.3, 0.7}), b = a;
    auto sa = AdamState<double>::for_params(a, 1e-3), sb = AdamState<double>::for_params(b, 1e-3);
    const auto g = single_tensor({0.25, -4.0});
    for (int i = 0; i < 5; ++i) {
        adam_update(a, g, sa);
        adam_update(b, g, sb);
    }
    EXPECT_EQ(a, b);
}

TEST(Trainer, ZeroEpochsIsNoOp) {
    const auto data = doubling_problem(20, 1);
    CounterRng rng(1);
    const auto p = init_params<double>(linear_config(), rng);
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto result = train(linear_config(), p, data, cfg);
    EXPECT_EQ(result.params, p);
    EXPECT_TRUE(result.history.train_mse.empty());
    EXPECT_EQ(result.status, TrainStatus::completed);
}

TEST(Trainer, ConvexSanityProblemConverges) {
    const auto data = doubling_problem(64, 2);
    auto config = linear_config();
    CounterRng rng(3);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.05;
    cfg.seed = 4;
    const auto result = train(config, init_params<double>(config, rng), data, cfg);
    ASSERT_EQ(result.history.train_mse.size(), 200u);
    EXPECT_LT(result.history.train_mse.back(), 1e-8);
    EXPECT_LT(result.history.valid_mse.back(), result.history.valid_mse.front());
    EXPECT_NEAR(result.params.tensors[0][0], 2.0, 1e-3);
}

TEST(Trainer, FixedSeedReproducesHistory) {
    const auto data = doubling_problem(30, 5);
    NetworkConfig config;
    config.input_dim = 1;
    config.layers = {{LayerKind::gru, 4, Activation::tanh},
                     {LayerKind::time_distributed_dense, 1, Activation::linear}};
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 7;
    cfg.seed = 9;
    CounterRng r1(6), r2(6);
    const auto a = train(config, init_params<double>(config, r1), data, cfg);
    const auto b = train(config, init_params<double>(config, r2), data, cfg);
    EXPECT_EQ(a.history, b.history);
    EXPECT_EQ(a.params, b.params);
    cfg.seed = 10;
    CounterRng r3(6);
    EXPECT_NE(train(config, init_params<double>(config, r3), data, cfg).history, a.history);
}

TEST(Trainer, ResumeMatchesStraightRun) {
    const auto data = doubling_problem(25, 7);
    NetworkConfig config;
    config.input_dim = 1;
    config.layers = {{LayerKind::lstm, 3, Activation::tanh},
                     {LayerKind::time_distributed_dense, 1, Activation::linear}};
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 11;
    CounterRng rng(12);
    const auto init = init_params<double>(config, rng);

    Trainer<double> straight(config, init, cfg);
    straight.run_until(data, 3);
    Trainer<double> resumed(config, init, cfg);
    EXPECT_EQ(resumed.run_until(data, 1), TrainStatus::running);
    EXPECT_EQ(resumed.run_until(data, 3), TrainStatus::completed);
    EXPECT_EQ(straight.history(), resumed.history());
    EXPECT_EQ(straight.params(), resumed.params());
}

TEST(Trainer, CallbackStopsTraining) {
    const auto data = doubling_problem(10, 8);
    CounterRng rng(1);
    TrainConfig cfg;
    cfg.epochs = 50;
    Trainer<double> trainer(linear_config(), init_params<double>(linear_config(), rng), cfg);
    const auto status = trainer.run_until(data, 50, [](std::size_t epoch, const History&) { return epoch == 3; });
    EXPECT_EQ(status, TrainStatus::stopped);
    EXPECT_EQ(trainer.epochs_completed(), 3u);
}

TEST(Trainer, DivergenceIsReportedNotThrown) {
    auto data = doubling_problem(16, 9);
    for (auto& v : data.train.targets.values()) v *= 1e200;
    CounterRng rng(1);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 10.0;
    const auto result = train(linear_config(), init_params<double>(linear_config(), rng), data, cfg);
    EXPECT_EQ(result.status, TrainStatus::diverged);
}

TEST(Trainer, ShortFinalBatchIsKept) {
    const auto data = doubling_problem(10, 10);
    CounterRng rng(1);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    Trainer<double> trainer(linear_config(), init_params<double>(linear_config(), rng), cfg);
    trainer.run_until(data, 1);
    EXPECT_EQ(trainer.optimizer().step, 3u);
}

TEST(Evaluate, ChunkingDoesNotChangeMse) {
    const auto data = doubling_problem(37, 11);
    CounterRng rng(2);
    const auto p = init_params<double>(linear_config(), rng);
    const double whole = evaluate_mse(linear_config(), p, data.train, 1000);
    EXPECT_NEAR(evaluate_mse(linear_config(), p, data.train, 5), whole, 1e-14);
    EXPECT_NEAR(whole, mse_loss(forward_sequence(linear_config(), p, data.train.inputs).outputs, data.train.targets),
                1e-14);
}
