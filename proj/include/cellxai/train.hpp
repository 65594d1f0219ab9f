#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "cellxai/network.hpp"

namespace cellxai::tensornet {

template <typename S>
struct AdamState {
    ModelParams<S> first_moment;
    ModelParams<S> second_moment;
    std::size_t step = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_params(const ModelParams<S>& params, double learning_rate);
};

/// One bias-corrected Adam step in place; increments state.step.
template <typename S>
void adam_update(ModelParams<S>& params, const ModelParams<S>& grads, AdamState<S>& state);

/// Sequences shaped (samples, increments, channels).
template <typename S>
struct SequenceData {
    Tensor<S> inputs;
    Tensor<S> targets;

    std::size_t samples() const { return inputs.empty() ? 0 : inputs.dim(0); }
};

template <typename S>
struct TrainingData {
    SequenceData<S> train;
    SequenceData<S> valid;
};

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 300;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    std::size_t bptt_truncation = 0;
};

struct History {
    std::vector<double> train_mse;
    std::vector<double> valid_mse;

    friend bool operator==(const History&, const History&) = default;
};

enum class TrainStatus { running, completed, stopped, diverged };

/// Called after every epoch with the 1-based epoch number; returning true stops training.
using EpochCallback = std::function<bool(std::size_t epoch, const History& history)>;

/// Resumable mini-batch Adam training. Shuffling for epoch e draws from
/// CounterRng(seed).split(e), so training k epochs then resuming for m more
/// reproduces k + m epochs trained in one go.
template <typename S>
class Trainer {
public:
    Trainer(NetworkConfig config, ModelParams<S> params, TrainConfig train_config);

    /// Trains until `target_epochs` epochs are complete in total, the callback
    /// asks to stop, or the loss becomes non-finite.
    TrainStatus run_until(const TrainingData<S>& data, std::size_t target_epochs, const EpochCallback& callback = {});

    const NetworkConfig& config() const noexcept { return config_; }
    const ModelParams<S>& params() const noexcept { return params_; }
    const History& history() const noexcept { return history_; }
    const AdamState<S>& optimizer() const noexcept { return adam_; }
    std::size_t epochs_completed() const noexcept { return history_.train_mse.size(); }
    TrainStatus status() const noexcept { return status_; }

private:
    NetworkConfig config_;
    ModelParams<S> params_;
    TrainConfig train_config_;
    AdamState<S> adam_;
    History history_;
    TrainStatus status_ = TrainStatus::running;
};

template <typename S>
struct TrainResult {
    ModelParams<S> params;
    History history;
    TrainStatus status = TrainStatus::completed;
};

template <typename S>
TrainResult<S> train(const NetworkConfig& config, const ModelParams<S>& params, const TrainingData<S>& data,
                     const TrainConfig& train_config, const EpochCallback& callback = {});

/// MSE over a whole split, evaluated in chunks of `chunk` samples.
template <typename S>
double evaluate_mse(const NetworkConfig& config, const ModelParams<S>& params, const SequenceData<S>& data,
                    std::size_t chunk = 256);

/// Rows `indices` of a (samples, increments, channels) tensor.
template <typename S>
Tensor<S> gather_samples(const Tensor<S>& source, const std::vector<std::size_t>& indices);

}  // namespace cellxai::tensornet
