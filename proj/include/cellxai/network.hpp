#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cellxai/rng.hpp"
#include "cellxai/tensor.hpp"

/// Feedforward and recurrent layers with reverse-mode gradients through time.
namespace cellxai::tensornet {

enum class Activation { rect, sig, tanh, elu, splus, linear };
enum class LayerKind { dense, simple_rnn, lstm, gru, time_distributed_dense };

std::string_view to_string(Activation activation);
std::string_view to_string(LayerKind kind);
Activation parse_activation(std::string_view name);
LayerKind parse_layer_kind(std::string_view name);

bool is_recurrent(LayerKind kind) noexcept;

/// For simple_rnn the activation is the cell nonlinearity; LSTM and GRU ignore it
/// (sigmoid gates, tanh state).
struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t width = 1;
    Activation activation = Activation::linear;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer chain applied per increment; the last layer must be a linear
/// time-distributed dense head.
struct NetworkConfig {
    std::size_t input_dim = 1;
    std::vector<LayerSpec> layers;

    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().width; }
    bool has_recurrence() const;

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

void validate(const NetworkConfig& config);

/// Parameter tensors in a fixed per-layer order (see parameter_layout()).
template <typename S>
struct ModelParams {
    std::vector<std::string> names;
    std::vector<Tensor<S>> tensors;

    std::size_t size() const noexcept { return tensors.size(); }
    std::size_t parameter_count() const;
    ModelParams zeros_like() const;

    template <typename T>
    ModelParams<T> cast() const {
        ModelParams<T> out;
        out.names = names;
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<T>());
        return out;
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct ParameterSlot {
    std::string name;
    std::vector<std::size_t> shape;
};

/// Names and shapes of every parameter tensor, in storage order.
///
/// dense/time_distributed_dense: kernel (out x in), bias.
/// simple_rnn: kernel (w x (in + w)), bias, out_kernel (w x w), out_bias.
/// lstm: input_gate, forget_gate, output_gate, candidate, each kernel (w x (in + w)) and bias.
/// gru: update_gate, reset_gate, candidate, each kernel (w x (in + w)) and bias.
std::vector<ParameterSlot> parameter_layout(const NetworkConfig& config);

/// Index of the first parameter tensor of each layer.
std::vector<std::size_t> layer_offsets(const NetworkConfig& config);

/// Glorot-uniform input kernels, orthogonal recurrent blocks, zero biases
/// except the LSTM forget gate (bias 1).
template <typename S>
ModelParams<S> init_params(const NetworkConfig& config, CounterRng& rng);

template <typename S>
ModelParams<S> zero_params(const NetworkConfig& config);

// Single-sample cell steps, written directly against the cell equations.

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct AffineWeights {
    Matrix<S> kernel;
    Vector<S> bias;
};

template <typename S>
struct SimpleRnnWeights {
    AffineWeights<S> cell;
    AffineWeights<S> output;
};

template <typename S>
struct LstmWeights {
    AffineWeights<S> input_gate, forget_gate, output_gate, candidate;
};

template <typename S>
struct GruWeights {
    AffineWeights<S> update_gate, reset_gate, candidate;
};

template <typename S>
S activate(Activation f, S z);

template <typename S>
Vector<S> dense_forward(const Vector<S>& x, const AffineWeights<S>& weights, Activation f);

template <typename S>
struct SimpleRnnStep {
    Vector<S> cell;
    Vector<S> hidden;
};

template <typename S>
SimpleRnnStep<S> simple_rnn_step(const Vector<S>& x_next, const Vector<S>& a_prev, const SimpleRnnWeights<S>& w,
                                 Activation f);

template <typename S>
struct LstmStep {
    Vector<S> cell;
    Vector<S> hidden;
    Vector<S> input_gate, forget_gate, output_gate;
};

template <typename S>
LstmStep<S> lstm_step(const Vector<S>& x_next, const Vector<S>& a_prev, const Vector<S>& c_prev,
                      const LstmWeights<S>& w);

template <typename S>
struct GruStep {
    Vector<S> hidden;
    Vector<S> update_gate, reset_gate, candidate;
};

/// h' = (1 - z) * n + z * h with n = tanh(W_n [x; r * h] + b_n).
template <typename S>
GruStep<S> gru_step(const Vector<S>& x_next, const Vector<S>& a_prev, const GruWeights<S>& w);

template <typename S>
AffineWeights<S> dense_weights(const NetworkConfig& config, const ModelParams<S>& params, std::size_t layer);
template <typename S>
SimpleRnnWeights<S> simple_rnn_weights(const NetworkConfig& config, const ModelParams<S>& params, std::size_t layer);
template <typename S>
LstmWeights<S> lstm_weights(const NetworkConfig& config, const ModelParams<S>& params, std::size_t layer);
template <typename S>
GruWeights<S> gru_weights(const NetworkConfig& config, const ModelParams<S>& params, std::size_t layer);

// Whole-sequence evaluation.

/// Per-recurrent-layer activations, each shaped (batch, increments, width).
/// GRU layers store their hidden state as `cell`; simple RNN layers store the
/// pre-output state c and the emitted activation a.
template <typename S>
struct LayerTrace {
    std::size_t layer = 0;
    LayerKind kind = LayerKind::lstm;
    Tensor<S> hidden;
    Tensor<S> cell;
};

template <typename S>
struct CellTrace {
    std::vector<LayerTrace<S>> layers;
};

template <typename S>
struct ForwardResult {
    Tensor<S> outputs;  ///< (batch, increments, output_dim)
    std::optional<CellTrace<S>> trace;
};

/// X is (batch, increments, input_dim). Throws NumericError naming the layer
/// and increment on non-finite activations.
template <typename S>
ForwardResult<S> forward_sequence(const NetworkConfig& config, const ModelParams<S>& params, const Tensor<S>& inputs,
                                  bool trace = false);

/// Mean over batch, increments and channels of the squared error.
template <typename S>
double mse_loss(const Tensor<S>& predictions, const Tensor<S>& targets);

template <typename S>
struct LossGradients {
    double loss = 0.0;
    ModelParams<S> gradients;
};

/// Gradient of mse_loss with respect to every parameter tensor via
/// backpropagation through time. `bptt_truncation` > 0 cuts the recurrent
/// gradient every that many increments; 0 runs full BPTT.
template <typename S>
LossGradients<S> backward(const NetworkConfig& config, const ModelParams<S>& params, const Tensor<S>& inputs,
                          const Tensor<S>& targets, std::size_t bptt_truncation = 0);

}  // namespace cellxai::tensornet
