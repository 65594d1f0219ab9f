#include "cellxai/network.hpp"

#include <array>
#include <cmath>
#include <utility>

#include "cellxai/errors.hpp"

namespace cellxai::tensornet {

namespace {

constexpr std::array<std::pair<Activation, std::string_view>, 6> kActivationNames{{
    {Activation::rect, "rect"},
    {Activation::sig, "sig"},
    {Activation::tanh, "tanh"},
    {Activation::elu, "elu"},
    {Activation::splus, "splus"},
    {Activation::linear, "linear"},
}};

constexpr std::array<std::pair<LayerKind, std::string_view>, 5> kLayerNames{{
    {LayerKind::dense, "dense"},
    {LayerKind::simple_rnn, "simple_rnn"},
    {LayerKind::lstm, "lstm"},
    {LayerKind::gru, "gru"},
    {LayerKind::time_distributed_dense, "time_distributed_dense"},
}};

std::size_t gate_count(LayerKind kind) {
    switch (kind) {
        case LayerKind::lstm: return 4;
        case LayerKind::gru: return 3;
        default: return 1;
    }
}

std::vector<const char*> gate_names(LayerKind kind) {
    if (kind == LayerKind::lstm) return {"input_gate", "forget_gate", "output_gate", "candidate"};
    if (kind == LayerKind::gru) return {"update_gate", "reset_gate", "candidate"};
    return {};
}

template <typename S>
using Mat = Matrix<S>;
template <typename S>
using RowMajorMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using VecMap = Eigen::Map<const Vector<S>>;

template <typename S>
RowMajorMap<S> as_matrix(const Tensor<S>& t) {
    return RowMajorMap<S>(t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

template <typename S>
VecMap<S> as_vector(const Tensor<S>& t) {
    return VecMap<S>(t.data(), static_cast<Eigen::Index>(t.size()));
}

template <typename S>
void store_matrix(const Mat<S>& m, Tensor<S>& t) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = m(i, j);
}

template <typename S>
void store_vector(const Vector<S>& v, Tensor<S>& t) {
    for (Eigen::Index i = 0; i < v.size(); ++i) t[static_cast<std::size_t>(i)] = v(i);
}

template <typename S>
S sigmoid(S z) {
    return S(1) / (S(1) + std::exp(-z));
}

template <typename S, typename Derived>
auto sigmoid_array(const Eigen::ArrayBase<Derived>& z) {
    return (S(1) / (S(1) + (-z).exp()));
}

/// a = f(z), elementwise.
template <typename S>
void apply_activation(Activation f, const Mat<S>& z, Mat<S>& a) {
    switch (f) {
        case Activation::rect: a = z.cwiseMax(S(0)); break;
        case Activation::sig: a = sigmoid_array<S>(z.array()).matrix(); break;
        case Activation::tanh: a = z.array().tanh().matrix(); break;
        case Activation::elu: a = (z.array() > S(0)).select(z.array(), z.array().exp() - S(1)).matrix(); break;
        case Activation::splus: a = (z.array().max(S(0)) + (-z.array().abs()).exp().log1p()).matrix(); break;
        case Activation::linear: a = z; break;
    }
}

/// Overwrites grad with grad * f'(z) given z and a = f(z).
template <typename S>
void activation_backward(Activation f, const Mat<S>& z, const Mat<S>& a, Mat<S>& grad) {
    switch (f) {
        case Activation::rect: grad.array() *= (z.array() > S(0)).template cast<S>(); break;
        case Activation::sig: grad.array() *= a.array() * (S(1) - a.array()); break;
        case Activation::tanh: grad.array() *= S(1) - a.array().square(); break;
        case Activation::elu: grad.array() *= (z.array() > S(0)).select(Mat<S>::Ones(z.rows(), z.cols()).array(), a.array() + S(1)); break;
        case Activation::splus: grad.array() *= sigmoid_array<S>(z.array()); break;
        case Activation::linear: break;
    }
}

/// Sequence activations are held as (channels x increments*batch) with column t*B + b.
template <typename S>
Mat<S> to_columns(const Tensor<S>& t) {
    const std::size_t batch = t.dim(0), steps = t.dim(1), channels = t.dim(2);
    Mat<S> out(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(steps * batch));
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < steps; ++s)
            for (std::size_t c = 0; c < channels; ++c)
                out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s * batch + b)) = t.at(b, s, c);
    return out;
}

template <typename S>
Tensor<S> from_columns(const Mat<S>& m, std::size_t batch, std::size_t steps) {
    const auto channels = static_cast<std::size_t>(m.rows());
    Tensor<S> out({batch, steps, channels});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < steps; ++s)
            for (std::size_t c = 0; c < channels; ++c)
                out.at(b, s, c) = m(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s * batch + b));
    return out;
}

template <typename S>
struct LayerCache {
    Mat<S> input;
    Mat<S> pre;    // dense: z; simple_rnn: cell pre-activation
    Mat<S> out;    // emitted activation
    Mat<S> cell;   // simple_rnn: c; lstm: c; gru: h
    Mat<S> gates;  // lstm: [i; f; o; g]; gru: [z; r; n]
    Mat<S> aux;    // lstm: tanh(c); gru: r * h_prev
};

/// Gate kernels of one recurrent layer split into input and recurrent blocks and
/// stacked along rows in gate order.
template <typename S>
struct Stacked {
    Mat<S> input_kernel;      // (G w) x in
    Mat<S> recurrent_kernel;  // (G w) x w
    Vector<S> bias;           // G w
};

template <typename S>
Stacked<S> stack_gates(const ModelParams<S>& params, std::size_t first, std::size_t gates, std::size_t in,
                       std::size_t width) {
    const auto w = static_cast<Eigen::Index>(width);
    const auto n_in = static_cast<Eigen::Index>(in);
    Stacked<S> s;
    s.input_kernel.resize(static_cast<Eigen::Index>(gates) * w, n_in);
    s.recurrent_kernel.resize(static_cast<Eigen::Index>(gates) * w, w);
    s.bias.resize(static_cast<Eigen::Index>(gates) * w);
    for (std::size_t g = 0; g < gates; ++g) {
        const auto kernel = as_matrix(params.tensors[first + 2 * g]);
        const auto row = static_cast<Eigen::Index>(g) * w;
        s.input_kernel.middleRows(row, w) = kernel.leftCols(n_in);
        s.recurrent_kernel.middleRows(row, w) = kernel.rightCols(w);
        s.bias.segment(row, w) = as_vector(params.tensors[first + 2 * g + 1]);
    }
    return s;
}

template <typename S>
void scatter_gates(const Mat<S>& d_input, const Mat<S>& d_recurrent, const Vector<S>& d_bias, std::size_t first,
                   std::size_t gates, std::size_t in, std::size_t width, ModelParams<S>& grads) {
    const auto w = static_cast<Eigen::Index>(width);
    const auto n_in = static_cast<Eigen::Index>(in);
    for (std::size_t g = 0; g < gates; ++g) {
        const auto row = static_cast<Eigen::Index>(g) * w;
        Mat<S> kernel(w, n_in + w);
        kernel.leftCols(n_in) = d_input.middleRows(row, w);
        kernel.rightCols(w) = d_recurrent.middleRows(row, w);
        store_matrix<S>(kernel, grads.tensors[first + 2 * g]);
        store_vector<S>(d_bias.segment(row, w), grads.tensors[first + 2 * g + 1]);
    }
}

template <typename S>
void check_finite(const Mat<S>& m, std::size_t layer, std::size_t batch) {
    if (m.allFinite()) return;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (!m.col(j).allFinite())
            throw NumericError("non-finite activation in layer " + std::to_string(layer) + " at increment " +
                               std::to_string(static_cast<std::size_t>(j) / batch));
    }
}

/// Batched forward/backward over one network.
template <typename S>
class Engine {
public:
    Engine(const NetworkConfig& config, const ModelParams<S>& params)
        : config_(config), params_(params), offsets_(layer_offsets(config)) {
        validate(config);
        const auto layout = parameter_layout(config);
        if (layout.size() != params.size()) throw UsageError("parameter count does not match network configuration");
        for (std::size_t i = 0; i < layout.size(); ++i)
            if (layout[i].shape != params.tensors[i].shape())
                throw UsageError("parameter '" + layout[i].name + "' has an unexpected shape");
    }

    /// Runs all layers on X (in x T*B); fills caches_ and returns the output block.
    const Mat<S>& forward(Mat<S> x, std::size_t batch, std::size_t steps) {
        batch_ = batch;
        steps_ = steps;
        caches_.assign(config_.layers.size(), {});
        for (std::size_t l = 0; l < config_.layers.size(); ++l) {
            caches_[l].input = std::move(x);
            forward_layer(l);
            check_finite(caches_[l].out, l, batch_);
            x = caches_[l].out;
        }
        return caches_.back().out;
    }

    /// Consumes d loss / d output (out x T*B) and accumulates parameter gradients.
    ModelParams<S> backward(Mat<S> grad, std::size_t truncation) {
        ModelParams<S> grads = params_.zeros_like();
        for (std::size_t l = config_.layers.size(); l-- > 0;) grad = backward_layer(l, grad, truncation, grads);
        return grads;
    }

    const std::vector<LayerCache<S>>& caches() const { return caches_; }

private:
    std::size_t input_width(std::size_t l) const { return l == 0 ? config_.input_dim : config_.layers[l - 1].width; }

    Eigen::Index cols(std::size_t t) const { return static_cast<Eigen::Index>(t * batch_); }
    Eigen::Index bsz() const { return static_cast<Eigen::Index>(batch_); }

    void forward_layer(std::size_t l) {
        auto& c = caches_[l];
        const auto& spec = config_.layers[l];
        const std::size_t first = offsets_[l];
        const auto w = static_cast<Eigen::Index>(spec.width);
        const auto total = static_cast<Eigen::Index>(steps_ * batch_);
        switch (spec.kind) {
            case LayerKind::dense:
            case LayerKind::time_distributed_dense: {
                c.pre = as_matrix(params_.tensors[first]) * c.input;
                c.pre.colwise() += as_vector(params_.tensors[first + 1]);
                apply_activation<S>(spec.activation, c.pre, c.out);
                break;
            }
            case LayerKind::simple_rnn: {
                const auto st = stack_gates(params_, first, 1, input_width(l), spec.width);
                const auto out_kernel = as_matrix(params_.tensors[first + 2]);
                const auto out_bias = as_vector(params_.tensors[first + 3]);
                c.pre = st.input_kernel * c.input;
                c.pre.colwise() += st.bias;
                c.cell.resize(w, total);
                c.out.resize(w, total);
                for (std::size_t t = 0; t < steps_; ++t) {
                    auto pre = c.pre.middleCols(cols(t), bsz());
                    if (t > 0) pre.noalias() += st.recurrent_kernel * c.out.middleCols(cols(t - 1), bsz());
                    Mat<S> pre_t = pre;
                    Mat<S> cell_t;
                    apply_activation<S>(spec.activation, pre_t, cell_t);
                    c.cell.middleCols(cols(t), bsz()) = cell_t;
                    Mat<S> out_t = out_kernel * cell_t;
                    out_t.colwise() += out_bias;
                    c.out.middleCols(cols(t), bsz()) = out_t;
                }
                break;
            }
            case LayerKind::lstm: {
                const auto st = stack_gates(params_, first, 4, input_width(l), spec.width);
                c.gates = st.input_kernel * c.input;
                c.gates.colwise() += st.bias;
                c.cell.resize(w, total);
                c.aux.resize(w, total);
                c.out.resize(w, total);
                for (std::size_t t = 0; t < steps_; ++t) {
                    auto g = c.gates.middleCols(cols(t), bsz());
                    if (t > 0) g.noalias() += st.recurrent_kernel * c.out.middleCols(cols(t - 1), bsz());
                    g.topRows(3 * w) = sigmoid_array<S>(g.topRows(3 * w).array()).matrix();
                    g.bottomRows(w) = g.bottomRows(w).array().tanh().matrix();
                    auto cell = c.cell.middleCols(cols(t), bsz());
                    cell = g.topRows(w).cwiseProduct(g.bottomRows(w));
                    if (t > 0) cell += g.middleRows(w, w).cwiseProduct(c.cell.middleCols(cols(t - 1), bsz()));
                    c.aux.middleCols(cols(t), bsz()) = cell.array().tanh().matrix();
                    c.out.middleCols(cols(t), bsz()) =
                        g.middleRows(2 * w, w).cwiseProduct(c.aux.middleCols(cols(t), bsz()));
                }
                break;
            }
            case LayerKind::gru: {
                const auto st = stack_gates(params_, first, 3, input_width(l), spec.width);
                c.gates = st.input_kernel * c.input;
                c.gates.colwise() += st.bias;
                c.cell.resize(w, total);
                c.aux.setZero(w, total);
                for (std::size_t t = 0; t < steps_; ++t) {
                    auto g = c.gates.middleCols(cols(t), bsz());
                    if (t > 0) {
                        const auto prev = c.cell.middleCols(cols(t - 1), bsz());
                        g.topRows(2 * w).noalias() += st.recurrent_kernel.topRows(2 * w) * prev;
                        g.topRows(2 * w) = sigmoid_array<S>(g.topRows(2 * w).array()).matrix();
                        c.aux.middleCols(cols(t), bsz()) = g.middleRows(w, w).cwiseProduct(prev);
                        g.bottomRows(w).noalias() +=
                            st.recurrent_kernel.bottomRows(w) * c.aux.middleCols(cols(t), bsz());
                        g.bottomRows(w) = g.bottomRows(w).array().tanh().matrix();
                        c.cell.middleCols(cols(t), bsz()) =
                            (S(1) - g.topRows(w).array()) * g.bottomRows(w).array() + g.topRows(w).array() * prev.array();
                    } else {
                        g.topRows(2 * w) = sigmoid_array<S>(g.topRows(2 * w).array()).matrix();
                        g.bottomRows(w) = g.bottomRows(w).array().tanh().matrix();
                        c.cell.middleCols(0, bsz()) = (S(1) - g.topRows(w).array()) * g.bottomRows(w).array();
                    }
                }
                c.out = c.cell;
                break;
            }
        }
    }

    Mat<S> backward_layer(std::size_t l, const Mat<S>& d_out, std::size_t truncation, ModelParams<S>& grads) {
        const auto& c = caches_[l];
        const auto& spec = config_.layers[l];
        const std::size_t first = offsets_[l];
        const std::size_t in = input_width(l);
        const auto w = static_cast<Eigen::Index>(spec.width);
        const auto total = static_cast<Eigen::Index>(steps_ * batch_);
        const auto tail = static_cast<Eigen::Index>((steps_ - 1) * batch_);
        auto cut = [&](std::size_t t) { return truncation > 0 && t % truncation == 0; };

        switch (spec.kind) {
            case LayerKind::dense:
            case LayerKind::time_distributed_dense: {
                Mat<S> dz = d_out;
                activation_backward<S>(spec.activation, c.pre, c.out, dz);
                store_matrix<S>(dz * c.input.transpose(), grads.tensors[first]);
                store_vector<S>(dz.rowwise().sum(), grads.tensors[first + 1]);
                return as_matrix(params_.tensors[first]).transpose() * dz;
            }
            case LayerKind::simple_rnn: {
                const auto st = stack_gates(params_, first, 1, in, spec.width);
                const auto out_kernel = as_matrix(params_.tensors[first + 2]);
                Mat<S> d_emit(w, total);
                Mat<S> d_pre(w, total);
                Mat<S> carry = Mat<S>::Zero(w, bsz());
                for (std::size_t t = steps_; t-- > 0;) {
                    Mat<S> da = d_out.middleCols(cols(t), bsz()) + carry;
                    d_emit.middleCols(cols(t), bsz()) = da;
                    Mat<S> dc = out_kernel.transpose() * da;
                    Mat<S> pre_t = c.pre.middleCols(cols(t), bsz());
                    Mat<S> cell_t = c.cell.middleCols(cols(t), bsz());
                    activation_backward<S>(spec.activation, pre_t, cell_t, dc);
                    d_pre.middleCols(cols(t), bsz()) = dc;
                    if (t > 0 && !cut(t))
                        carry.noalias() = st.recurrent_kernel.transpose() * dc;
                    else
                        carry.setZero();
                }
                store_matrix<S>(d_emit * c.cell.transpose(), grads.tensors[first + 2]);
                store_vector<S>(d_emit.rowwise().sum(), grads.tensors[first + 3]);
                Mat<S> d_rec = Mat<S>::Zero(w, w);
                if (tail > 0) d_rec.noalias() = d_pre.rightCols(tail) * c.out.leftCols(tail).transpose();
                scatter_gates<S>(d_pre * c.input.transpose(), d_rec, d_pre.rowwise().sum(), first, 1, in, spec.width,
                                 grads);
                return st.input_kernel.transpose() * d_pre;
            }
            case LayerKind::lstm: {
                const auto st = stack_gates(params_, first, 4, in, spec.width);
                Mat<S> d_gates(4 * w, total);
                Mat<S> dh_carry = Mat<S>::Zero(w, bsz());
                Mat<S> dc_carry = Mat<S>::Zero(w, bsz());
                for (std::size_t t = steps_; t-- > 0;) {
                    const auto g = c.gates.middleCols(cols(t), bsz());
                    const auto ig = g.topRows(w).array();
                    const auto fg = g.middleRows(w, w).array();
                    const auto og = g.middleRows(2 * w, w).array();
                    const auto cand = g.bottomRows(w).array();
                    const auto tc = c.aux.middleCols(cols(t), bsz()).array();
                    Mat<S> dh = d_out.middleCols(cols(t), bsz()) + dh_carry;
                    Mat<S> dc = (dh.array() * og * (S(1) - tc.square())).matrix() + dc_carry;
                    auto dg = d_gates.middleCols(cols(t), bsz());
                    dg.topRows(w) = (dc.array() * cand * ig * (S(1) - ig)).matrix();
                    if (t > 0)
                        dg.middleRows(w, w) =
                            (dc.array() * c.cell.middleCols(cols(t - 1), bsz()).array() * fg * (S(1) - fg)).matrix();
                    else
                        dg.middleRows(w, w).setZero();
                    dg.middleRows(2 * w, w) = (dh.array() * tc * og * (S(1) - og)).matrix();
                    dg.bottomRows(w) = (dc.array() * ig * (S(1) - cand.square())).matrix();
                    if (t > 0 && !cut(t)) {
                        dc_carry = (dc.array() * fg).matrix();
                        dh_carry.noalias() = st.recurrent_kernel.transpose() * dg;
                    } else {
                        dc_carry.setZero();
                        dh_carry.setZero();
                    }
                }
                Mat<S> d_rec = Mat<S>::Zero(4 * w, w);
                if (tail > 0) d_rec.noalias() = d_gates.rightCols(tail) * c.out.leftCols(tail).transpose();
                scatter_gates<S>(d_gates * c.input.transpose(), d_rec, d_gates.rowwise().sum(), first, 4, in,
                                 spec.width, grads);
                return st.input_kernel.transpose() * d_gates;
            }
            case LayerKind::gru: {
                const auto st = stack_gates(params_, first, 3, in, spec.width);
                Mat<S> d_gates(3 * w, total);
                Mat<S> carry = Mat<S>::Zero(w, bsz());
                for (std::size_t t = steps_; t-- > 0;) {
                    const auto g = c.gates.middleCols(cols(t), bsz());
                    const auto z = g.topRows(w).array();
                    const auto r = g.middleRows(w, w).array();
                    const auto n = g.bottomRows(w).array();
                    Mat<S> prev = t > 0 ? Mat<S>(c.cell.middleCols(cols(t - 1), bsz())) : Mat<S>::Zero(w, bsz());
                    Mat<S> dh = d_out.middleCols(cols(t), bsz()) + carry;
                    auto dg = d_gates.middleCols(cols(t), bsz());
                    dg.topRows(w) = (dh.array() * (prev.array() - n) * z * (S(1) - z)).matrix();
                    dg.bottomRows(w) = (dh.array() * (S(1) - z) * (S(1) - n.square())).matrix();
                    Mat<S> d_rh = st.recurrent_kernel.bottomRows(w).transpose() * dg.bottomRows(w);
                    dg.middleRows(w, w) = (d_rh.array() * prev.array() * r * (S(1) - r)).matrix();
                    if (t > 0 && !cut(t)) {
                        carry = (dh.array() * z + d_rh.array() * r).matrix();
                        carry.noalias() += st.recurrent_kernel.topRows(2 * w).transpose() * dg.topRows(2 * w);
                    } else {
                        carry.setZero();
                    }
                }
                Mat<S> d_rec = Mat<S>::Zero(3 * w, w);
                if (tail > 0)
                    d_rec.topRows(2 * w).noalias() =
                        d_gates.topRows(2 * w).rightCols(tail) * c.cell.leftCols(tail).transpose();
                d_rec.bottomRows(w).noalias() = d_gates.bottomRows(w) * c.aux.transpose();
                scatter_gates<S>(d_gates * c.input.transpose(), d_rec, d_gates.rowwise().sum(), first, 3, in,
                                 spec.width, grads);
                return st.input_kernel.transpose() * d_gates;
            }
        }
        return {};
    }

    const NetworkConfig& config_;
    const ModelParams<S>& params_;
    std::vector<std::size_t> offsets_;
    std::vector<LayerCache<S>> caches_;
    std::size_t batch_ = 0;
    std::size_t steps_ = 0;
};

void check_inputs(const NetworkConfig& config, const std::vector<std::size_t>& shape) {
    if (shape.size() != 3) throw UsageError("sequence input must be shaped (batch, increments, channels)");
    if (shape[2] != config.input_dim)
        throw UsageError("input has " + std::to_string(shape[2]) + " channels, network expects " +
                         std::to_string(config.input_dim));
    if (shape[0] == 0 || shape[1] == 0) throw UsageError("empty sequence batch");
}

}  // namespace

std::string_view to_string(Activation activation) {
    for (const auto& [a, name] : kActivationNames)
        if (a == activation) return name;
    return "unknown";
}

std::string_view to_string(LayerKind kind) {
    for (const auto& [k, name] : kLayerNames)
        if (k == kind) return name;
    return "unknown";
}

Activation parse_activation(std::string_view name) {
    for (const auto& [a, n] : kActivationNames)
        if (n == name) return a;
    throw UsageError("unknown activation '" + std::string(name) + "'");
}

LayerKind parse_layer_kind(std::string_view name) {
    for (const auto& [k, n] : kLayerNames)
        if (n == name) return k;
    throw UsageError("unknown layer kind '" + std::string(name) + "'");
}

bool is_recurrent(LayerKind kind) noexcept {
    return kind == LayerKind::simple_rnn || kind == LayerKind::lstm || kind == LayerKind::gru;
}

bool NetworkConfig::has_recurrence() const {
    for (const auto& l : layers)
        if (is_recurrent(l.kind)) return true;
    return false;
}

void validate(const NetworkConfig& config) {
    if (config.input_dim == 0) throw UsageError("network input dimension must be positive");
    if (config.layers.empty()) throw UsageError("network has no layers");
    for (const auto& l : config.layers)
        if (l.width == 0) throw UsageError("layer width must be positive");
    const auto& head = config.layers.back();
    if (head.kind != LayerKind::time_distributed_dense || head.activation != Activation::linear)
        throw UsageError("the last layer must be a linear time_distributed_dense head");
}

std::vector<ParameterSlot> parameter_layout(const NetworkConfig& config) {
    std::vector<ParameterSlot> slots;
    std::size_t in = config.input_dim;
    for (std::size_t l = 0; l < config.layers.size(); ++l) {
        const auto& spec = config.layers[l];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        const std::size_t w = spec.width;
        switch (spec.kind) {
            case LayerKind::dense:
            case LayerKind::time_distributed_dense:
                slots.push_back({prefix + "kernel", {w, in}});
                slots.push_back({prefix + "bias", {w}});
                break;
            case LayerKind::simple_rnn:
                slots.push_back({prefix + "kernel", {w, in + w}});
                slots.push_back({prefix + "bias", {w}});
                slots.push_back({prefix + "out_kernel", {w, w}});
                slots.push_back({prefix + "out_bias", {w}});
                break;
            case LayerKind::lstm:
            case LayerKind::gru:
                for (const char* gate : gate_names(spec.kind)) {
                    slots.push_back({prefix + gate + ".kernel", {w, in + w}});
                    slots.push_back({prefix + gate + ".bias", {w}});
                }
                break;
        }
        in = w;
    }
    return slots;
}

std::vector<std::size_t> layer_offsets(const NetworkConfig& config) {
    std::vector<std::size_t> offsets;
    std::size_t next = 0;
    for (const auto& spec : config.layers) {
        offsets.push_back(next);
        switch (spec.kind) {
            case LayerKind::dense:
            case LayerKind::time_distributed_dense: next += 2; break;
            case LayerKind::simple_rnn: next += 4; break;
            case LayerKind::lstm:
            case LayerKind::gru: next += 2 * gate_count(spec.kind); break;
        }
    }
    return offsets;
}

template <typename S>
std::size_t ModelParams<S>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

template <typename S>
ModelParams<S> ModelParams<S>::zeros_like() const {
    ModelParams out;
    out.names = names;
    for (const auto& t : tensors) out.tensors.emplace_back(t.shape(), S{0});
    return out;
}

template <typename S>
ModelParams<S> zero_params(const NetworkConfig& config) {
    ModelParams<S> params;
    for (auto& slot : parameter_layout(config)) {
        params.names.push_back(slot.name);
        params.tensors.emplace_back(slot.shape, S{0});
    }
    return params;
}

namespace {

template <typename S>
void glorot_fill(Tensor<S>& kernel, std::size_t col_begin, std::size_t col_end, std::size_t fan_in,
                 std::size_t fan_out, CounterRng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < kernel.dim(0); ++i)
        for (std::size_t j = col_begin; j < col_end; ++j) kernel.at(i, j) = static_cast<S>(rng.uniform(-limit, limit));
}

template <typename S>
void orthogonal_fill(Tensor<S>& kernel, std::size_t col_begin, std::size_t width, CounterRng& rng) {
    const auto n = static_cast<Eigen::Index>(width);
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) a(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().template triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j)
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            kernel.at(static_cast<std::size_t>(i), col_begin + static_cast<std::size_t>(j)) = static_cast<S>(q(i, j));
}

}  // namespace

template <typename S>
ModelParams<S> init_params(const NetworkConfig& config, CounterRng& rng) {
    validate(config);
    ModelParams<S> params = zero_params<S>(config);
    const auto offsets = layer_offsets(config);
    std::size_t in = config.input_dim;
    for (std::size_t l = 0; l < config.layers.size(); ++l) {
        const auto& spec = config.layers[l];
        const std::size_t w = spec.width;
        const std::size_t first = offsets[l];
        switch (spec.kind) {
            case LayerKind::dense:
            case LayerKind::time_distributed_dense:
                glorot_fill(params.tensors[first], 0, in, in, w, rng);
                break;
            case LayerKind::simple_rnn:
                glorot_fill(params.tensors[first], 0, in, in, w, rng);
                orthogonal_fill(params.tensors[first], in, w, rng);
                glorot_fill(params.tensors[first + 2], 0, w, w, w, rng);
                break;
            case LayerKind::lstm:
            case LayerKind::gru: {
                const std::size_t gates = gate_count(spec.kind);
                for (std::size_t g = 0; g < gates; ++g) {
                    auto& kernel = params.tensors[first + 2 * g];
                    glorot_fill(kernel, 0, in, in, gates * w, rng);
                    orthogonal_fill(kernel, in, w, rng);
                }
                if (spec.kind == LayerKind::lstm) params.tensors[first + 3].fill(S(1));
                break;
            }
        }
        in = w;
    }
    return params;
}

template <typename S>
S activate(Activation f, S z) {
    switch (f) {
        case Activation::rect: return z > S(0) ? z : S(0);
        case Activation::sig: return sigmoid(z);
        case Activation::tanh: return std::tanh(z);
        case Activation::elu: return z > S(0) ? z : std::expm1(z);
        case Activation::splus: return std::max(z, S(0)) + std::log1p(std::exp(-std::abs(z)));
        case Activation::linear: return z;
    }
    return z;
}

namespace {

template <typename S>
Vector<S> affine(const AffineWeights<S>& w, const Vector<S>& x) {
    if (w.kernel.cols() != x.size() || w.kernel.rows() != w.bias.size())
        throw UsageError("affine weights do not match the input width");
    return w.kernel * x + w.bias;
}

template <typename S>
Vector<S> concat(const Vector<S>& a, const Vector<S>& b) {
    Vector<S> out(a.size() + b.size());
    out << a, b;
    return out;
}

template <typename S>
Vector<S> map(const Vector<S>& v, Activation f) {
    return v.unaryExpr([f](S z) { return activate(f, z); });
}

template <typename S>
AffineWeights<S> affine_from(const ModelParams<S>& params, std::size_t index) {
    return {Mat<S>(as_matrix(params.tensors[index])), Vector<S>(as_vector(params.tensors[index + 1]))};
}

void require_kind(const NetworkConfig& config, std::size_t layer, std::initializer_list<LayerKind> kinds) {
    if (layer >= config.layers.size()) throw UsageError("layer index out of range");
    for (auto k : kinds)
        if (config.layers[layer].kind == k) return;
    throw UsageError("layer " + std::to_string(layer) + " has kind " +
                     std::string(to_string(config.layers[layer].kind)));
}

}  // namespace

template <typename S>
Vector<S> dense_forward(const Vector<S>& x, const AffineWeights<S>& weights, Activation f) {
    return map<S>(affine(weights, x), f);
}

template <typename S>
SimpleRnnStep<S> simple_rnn_step(const Vector<S>& x_next, const Vector<S>& a_prev, const SimpleRnnWeights<S>& w,
                                 Activation f) {
    SimpleRnnStep<S> out;
    out.cell = map<S>(affine(w.cell, concat(x_next, a_prev)), f);
    out.hidden = affine(w.output, out.cell);
    return out;
}

template <typename S>
LstmStep<S> lstm_step(const Vector<S>& x_next, const Vector<S>& a_prev, const Vector<S>& c_prev,
                      const LstmWeights<S>& w) {
    if (c_prev.size() != a_prev.size()) throw UsageError("LSTM cell and hidden widths differ");
    const Vector<S> xbar = concat(x_next, a_prev);
    LstmStep<S> out;
    out.input_gate = map<S>(affine(w.input_gate, xbar), Activation::sig);
    out.forget_gate = map<S>(affine(w.forget_gate, xbar), Activation::sig);
    out.output_gate = map<S>(affine(w.output_gate, xbar), Activation::sig);
    const Vector<S> inflow = out.input_gate.cwiseProduct(map<S>(affine(w.candidate, xbar), Activation::tanh));
    out.cell = out.forget_gate.cwiseProduct(c_prev) + inflow;
    out.hidden = out.output_gate.cwiseProduct(map<S>(out.cell, Activation::tanh));
    return out;
}

template <typename S>
GruStep<S> gru_step(const Vector<S>& x_next, const Vector<S>& a_prev, const GruWeights<S>& w) {
    const Vector<S> xbar = concat(x_next, a_prev);
    GruStep<S> out;
    out.update_gate = map<S>(affine(w.update_gate, xbar), Activation::sig);
    out.reset_gate = map<S>(affine(w.reset_gate, xbar), Activation::sig);
    const Vector<S> gated = concat(x_next, Vector<S>(out.reset_gate.cwiseProduct(a_prev)));
    out.candidate = map<S>(affine(w.candidate, gated), Activation::tanh);
    out.hidden = (Vector<S>::Ones(a_prev.size()) - out.update_gate).cwiseProduct(out.candidate) +
                 out.update_gate.cwiseProduct(a_prev);
    return out;
}

template <typename S>
AffineWeights<S> dense_weights(const NetworkConfig& config, const ModelParams<S>& params, std::size_t layer) {
    require_kind(config, layer, {LayerKind::dense, LayerKind::time_distributed_dense});
    return affine_from(params, layer_offsets(config)[layer]);
}

template <typename S>
SimpleRnnWeights<S> simple_rnn_weights(const NetworkConfig& config, const ModelParams<S>& params, std::size_t layer) {
    require_kind(config, layer, {LayerKind::simple_rnn});
    const auto first = layer_offsets(config)[layer];
    return {affine_from(params, first), affine_from(params, first + 2)};
}

template <typename S>
LstmWeights<S> lstm_weights(const NetworkConfig& config, const ModelParams<S>& params, std::size_t layer) {
    require_kind(config, layer, {LayerKind::lstm});
    const auto first = layer_offsets(config)[layer];
    return {affine_from(params, first), affine_from(params, first + 2), affine_from(params, first + 4),
            affine_from(params, first + 6)};
}

template <typename S>
GruWeights<S> gru_weights(const NetworkConfig& config, const ModelParams<S>& params, std::size_t layer) {
    require_kind(config, layer, {LayerKind::gru});
    const auto first = layer_offsets(config)[layer];
    return {affine_from(params, first), affine_from(params, first + 2), affine_from(params, first + 4)};
}

template <typename S>
ForwardResult<S> forward_sequence(const NetworkConfig& config, const ModelParams<S>& params, const Tensor<S>& inputs,
                                  bool trace) {
    check_inputs(config, inputs.shape());
    const std::size_t batch = inputs.dim(0), steps = inputs.dim(1);
    Engine<S> engine(config, params);
    ForwardResult<S> result;
    result.outputs = from_columns<S>(engine.forward(to_columns(inputs), batch, steps), batch, steps);
    if (trace) {
        CellTrace<S> cells;
        for (std::size_t l = 0; l < config.layers.size(); ++l) {
            if (!is_recurrent(config.layers[l].kind)) continue;
            const auto& cache = engine.caches()[l];
            cells.layers.push_back({l, config.layers[l].kind, from_columns<S>(cache.out, batch, steps),
                                    from_columns<S>(cache.cell, batch, steps)});
        }
        result.trace = std::move(cells);
    }
    return result;
}

template <typename S>
double mse_loss(const Tensor<S>& predictions, const Tensor<S>& targets) {
    if (predictions.shape() != targets.shape()) throw UsageError("prediction and target shapes differ");
    if (predictions.empty()) throw UsageError("empty tensors have no mean squared error");
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = static_cast<double>(predictions[i]) - static_cast<double>(targets[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(predictions.size());
}

template <typename S>
LossGradients<S> backward(const NetworkConfig& config, const ModelParams<S>& params, const Tensor<S>& inputs,
                          const Tensor<S>& targets, std::size_t bptt_truncation) {
    check_inputs(config, inputs.shape());
    const std::size_t batch = inputs.dim(0), steps = inputs.dim(1);
    if (targets.shape() != std::vector<std::size_t>{batch, steps, config.output_dim()})
        throw UsageError("target shape does not match the network output");
    Engine<S> engine(config, params);
    const Mat<S>& predicted = engine.forward(to_columns(inputs), batch, steps);
    const Mat<S> residual = predicted - to_columns(targets);
    LossGradients<S> out;
    out.loss = static_cast<double>(residual.template cast<double>().squaredNorm()) /
               static_cast<double>(residual.size());
    const S scale = static_cast<S>(2.0 / static_cast<double>(residual.size()));
    out.gradients = engine.backward(residual * scale, bptt_truncation);
    return out;
}

#define CELLXAI_INSTANTIATE(S)                                                                                    \
    template struct ModelParams<S>;                                                                              \
    template ModelParams<S> init_params<S>(const NetworkConfig&, CounterRng&);                                   \
    template ModelParams<S> zero_params<S>(const NetworkConfig&);                                                \
    template S activate<S>(Activation, S);                                                                       \
    template Vector<S> dense_forward<S>(const Vector<S>&, const AffineWeights<S>&, Activation);                  \
    template SimpleRnnStep<S> simple_rnn_step<S>(const Vector<S>&, const Vector<S>&, const SimpleRnnWeights<S>&, \
                                                 Activation);                                                    \
    template LstmStep<S> lstm_step<S>(const Vector<S>&, const Vector<S>&, const Vector<S>&, const LstmWeights<S>&); \
    template GruStep<S> gru_step<S>(const Vector<S>&, const Vector<S>&, const GruWeights<S>&);                     \
    template AffineWeights<S> dense_weights<S>(const NetworkConfig&, const ModelParams<S>&, std::size_t);        \
    template SimpleRnnWeights<S> simple_rnn_weights<S>(const NetworkConfig&, const ModelParams<S>&, std::size_t); \
    template LstmWeights<S> lstm_weights<S>(const NetworkConfig&, const ModelParams<S>&, std::size_t);           \
    template GruWeights<S> gru_weights<S>(const NetworkConfig&, const ModelParams<S>&, std::size_t);             \
    template ForwardResult<S> forward_sequence<S>(const NetworkConfig&, const ModelParams<S>&, const Tensor<S>&,  \
                                                  bool);                                                         \
    template double mse_loss<S>(const Tensor<S>&, const Tensor<S>&);                                             \
    template LossGradients<S> backward<S>(const NetworkConfig&, const ModelParams<S>&, const Tensor<S>&,          \
                                          const Tensor<S>&, std::size_t);

CELLXAI_INSTANTIATE(float)
CELLXAI_INSTANTIATE(double)

#undef CELLXAI_INSTANTIATE

}  // namespace cellxai::tensornet
