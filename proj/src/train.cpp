#include "cellxai/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cellxai::tensornet {

template <typename S>
AdamState<S> AdamState<S>::for_params(const ModelParams<S>& params, double learning_rate) {
    AdamState state;
    state.first_moment = params.zeros_like();
    state.second_moment = params.zeros_like();
    state.learning_rate = learning_rate;
    return state;
}

template <typename S>
void adam_update(ModelParams<S>& params, const ModelParams<S>& grads, AdamState<S>& state) {
    if (grads.size() != params.size() || state.first_moment.size() != params.size())
        throw UsageError("Adam state, gradients and parameters are not aligned");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    const S b1 = static_cast<S>(state.beta1), b2 = static_cast<S>(state.beta2);
    const S step_size = static_cast<S>(state.learning_rate / correction1);
    const S sqrt_c2 = static_cast<S>(std::sqrt(correction2));
    const S eps = static_cast<S>(state.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.tensors[i];
        const auto& g = grads.tensors[i];
        auto& m = state.first_moment.tensors[i];
        auto& v = state.second_moment.tensors[i];
        if (g.size() != p.size() || m.size() != p.size()) throw UsageError("Adam tensor shapes differ");
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = b1 * m[k] + (S(1) - b1) * g[k];
            v[k] = b2 * v[k] + (S(1) - b2) * g[k] * g[k];
            p[k] -= step_size * m[k] / (std::sqrt(v[k]) / sqrt_c2 + eps);
        }
    }
}

template <typename S>
Tensor<S> gather_samples(const Tensor<S>& source, const std::vector<std::size_t>& indices) {
    const std::size_t steps = source.dim(1), channels = source.dim(2);
    const std::size_t row = steps * channels;
    Tensor<S> out({indices.size(), steps, channels});
    for (std::size_t n = 0; n < indices.size(); ++n) {
        if (indices[n] >= source.dim(0)) throw UsageError("sample index out of range");
        std::copy_n(source.data() + indices[n] * row, row, out.data() + n * row);
    }
    return out;
}

template <typename S>
double evaluate_mse(const NetworkConfig& config, const ModelParams<S>& params, const SequenceData<S>& data,
                    std::size_t chunk) {
    const std::size_t n = data.samples();
    if (n == 0) throw UsageError("cannot evaluate an empty split");
    chunk = std::max<std::size_t>(chunk, 1);
    double weighted = 0.0;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        std::vector<std::size_t> idx(std::min(chunk, n - begin));
        std::iota(idx.begin(), idx.end(), begin);
        const auto pred = forward_sequence(config, params, gather_samples(data.inputs, idx)).outputs;
        weighted += mse_loss(pred, gather_samples(data.targets, idx)) * static_cast<double>(idx.size());
    }
    return weighted / static_cast<double>(n);
}

template <typename S>
Trainer<S>::Trainer(NetworkConfig config, ModelParams<S> params, TrainConfig train_config)
    : config_(std::move(config)),
      params_(std::move(params)),
      train_config_(train_config),
      adam_(AdamState<S>::for_params(params_, train_config.learning_rate)) {
    validate(config_);
    if (train_config_.batch_size == 0) throw UsageError("batch size must be positive");
}

template <typename S>
TrainStatus Trainer<S>::run_until(const TrainingData<S>& data, std::size_t target_epochs,
                                  const EpochCallback& callback) {
    if (status_ == TrainStatus::diverged || status_ == TrainStatus::stopped) return status_;
    const std::size_t n = data.train.samples();
    if (n == 0) throw UsageError("training split is empty");
    const CounterRng base(train_config_.seed);
    while (epochs_completed() < target_epochs) {
        const std::size_t epoch = epochs_completed();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        CounterRng rng = base.split(epoch);
        rng.shuffle(std::span<std::size_t>(order));

        double weighted = 0.0;
        bool finite = true;
        for (std::size_t begin = 0; begin < n && finite; begin += train_config_.batch_size) {
            const std::vector<std::size_t> idx(
                order.begin() + static_cast<std::ptrdiff_t>(begin),
                order.begin() + static_cast<std::ptrdiff_t>(std::min(n, begin + train_config_.batch_size)));
            try {
                auto lg = backward(config_, params_, gather_samples(data.train.inputs, idx),
                                   gather_samples(data.train.targets, idx), train_config_.bptt_truncation);
                if (!std::isfinite(lg.loss)) {
                    finite = false;
                    break;
                }
                weighted += lg.loss * static_cast<double>(idx.size());
                adam_update(params_, lg.gradients, adam_);
            } catch (const NumericError&) {
                finite = false;
            }
        }
        double valid = std::numeric_limits<double>::quiet_NaN();
        if (finite) {
            try {
                valid = data.valid.samples() > 0 ? evaluate_mse(config_, params_, data.valid) : weighted / n;
            } catch (const NumericError&) {
                finite = false;
            }
        }
        if (!finite || !std::isfinite(valid)) {
            status_ = TrainStatus::diverged;
            return status_;
        }
        history_.train_mse.push_back(weighted / static_cast<double>(n));
        history_.valid_mse.push_back(valid);
        if (callback && callback(epochs_completed(), history_)) {
            status_ = TrainStatus::stopped;
            return status_;
        }
    }
    status_ = epochs_completed() >= train_config_.epochs ? TrainStatus::completed : TrainStatus::running;
    return status_;
}

template <typename S>
TrainResult<S> train(const NetworkConfig& config, const ModelParams<S>& params, const TrainingData<S>& data,
                     const TrainConfig& train_config, const EpochCallback& callback) {
    if (train_config.epochs == 0) return {params, {}, TrainStatus::completed};
    Trainer<S> trainer(config, params, train_config);
    const auto status = trainer.run_until(data, train_config.epochs, callback);
    return {trainer.params(), trainer.history(), status};
}

#define CELLXAI_INSTANTIATE(S)                                                                                 \
    template struct AdamState<S>;                                                                             \
    template void adam_update<S>(ModelParams<S>&, const ModelParams<S>&, AdamState<S>&);                      \
    template Tensor<S> gather_samples<S>(const Tensor<S>&, const std::vector<std::size_t>&);                  \
    template double evaluate_mse<S>(const NetworkConfig&, const ModelParams<S>&, const SequenceData<S>&,      \
                                    std::size_t);                                                             \
    template class Trainer<S>;                                                                                \
    template TrainResult<S> train<S>(const NetworkConfig&, const ModelParams<S>&, const TrainingData<S>&,     \
                                     const TrainConfig&, const EpochCallback&);

CELLXAI_INSTANTIATE(float)
CELLXAI_INSTANTIATE(double)

#undef CELLXAI_INSTANTIATE

}  // namespace cellxai::tensornet
