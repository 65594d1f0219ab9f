#include "cellxai/loadgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <thread>

#include "cellxai/errors.hpp"

namespace cellxai::loadgen {

std::vector<RampKind> legal_ramps(ModelKind kind) {
    switch (kind) {
        case ModelKind::hyperelastic: return {RampKind::linear};
        case ModelKind::elastoplastic:
            return {RampKind::linear, RampKind::quadratic, RampKind::square_root,
                    RampKind::exponential, RampKind::sine, RampKind::half_sine};
        case ModelKind::viscoelastic: return {RampKind::linear, RampKind::constant};
    }
    return {};
}

std::vector<RampKind> resolved_palette(const SequenceSpec& spec) {
    const auto legal = legal_ramps(spec.model_kind);
    if (spec.ramp_palette.empty()) return legal;
    for (RampKind kind : spec.ramp_palette) {
        if (std::find(legal.begin(), legal.end(), kind) == legal.end())
            throw UsageError("ramp kind '" + std::string(to_string(kind)) + "' is not legal for " +
                             std::string(to_string(spec.model_kind)) + " sequences");
    }
    return spec.ramp_palette;
}

void validate(const SequenceSpec& spec) {
    if (spec.seq_len == 0) throw UsageError("sequence length must be positive");
    if (spec.phases == 0) throw UsageError("phase count must be positive");
    if (spec.phases > spec.seq_len) throw UsageError("more phases than increments");
    resolved_palette(spec);
}

std::vector<double> sample_controls(const SequenceSpec& spec, CounterRng& rng) {
    std::vector<double> controls(spec.phases + 1);
    for (double& c : controls) c = rng.normal();
    return controls;
}

double ramp_value(RampKind kind, double u) {
    if (!(u >= 0.0 && u <= 1.0)) throw DomainError("ramp coordinate must lie in [0, 1], got " + std::to_string(u));
    switch (kind) {
        case RampKind::linear: return u;
        case RampKind::quadratic: return u * u;
        case RampKind::square_root: return std::sqrt(u);
        case RampKind::exponential: return std::expm1(u) / std::expm1(1.0);
        case RampKind::sine: return 0.5 * (1.0 - std::cos(std::numbers::pi * u));
        case RampKind::half_sine: return std::sin(0.5 * std::numbers::pi * u);
        case RampKind::constant: return 0.0;
    }
    return u;
}

double map_control(ModelKind kind, double z) {
    if (kind == ModelKind::hyperelastic) return std::clamp(1.0 + z, kMinStretch, kMaxStretch);
    return z;
}

std::vector<std::size_t> phase_boundaries(std::size_t seq_len, std::size_t phases) {
    if (phases == 0 || phases > seq_len) throw UsageError("phase count must lie in [1, sequence length]");
    const std::size_t per_phase = seq_len / phases;
    std::vector<std::size_t> bounds(phases + 1);
    for (std::size_t w = 0; w < phases; ++w) bounds[w] = w * per_phase;
    bounds[phases] = seq_len;
    return bounds;
}

LoadingSequence assemble_sequence(std::span<const double> controls, std::span<const RampKind> ramp_kinds,
                                  const SequenceSpec& spec) {
    if (controls.size() != spec.phases + 1)
        throw UsageError("expected " + std::to_string(spec.phases + 1) + " control points, got " +
                         std::to_string(controls.size()));
    if (ramp_kinds.size() != spec.phases)
        throw UsageError("expected " + std::to_string(spec.phases) + " ramp kinds, got " +
                         std::to_string(ramp_kinds.size()));

    LoadingSequence seq;
    seq.quantity = driving_quantity(spec.model_kind);
    seq.dt = 1.0 / static_cast<double>(spec.seq_len);
    seq.phase_boundaries = phase_boundaries(spec.seq_len, spec.phases);
    seq.ramp_kinds.assign(ramp_kinds.begin(), ramp_kinds.end());
    seq.values.resize(spec.seq_len);

    double start = map_control(spec.model_kind, controls[0]);
    for (std::size_t w = 0; w < spec.phases; ++w) {
        const double target = map_control(spec.model_kind, controls[w + 1]);
        const std::size_t begin = seq.phase_boundaries[w];
        const std::size_t length = seq.phase_boundaries[w + 1] - begin;
        for (std::size_t k = 1; k <= length; ++k) {
            const double u = static_cast<double>(k) / static_cast<double>(length);
            seq.values[begin + k - 1] = std::lerp(start, target, ramp_value(ramp_kinds[w], u));
        }
        start = seq.values[begin + length - 1];
    }
    return seq;
}

LoadingSequence random_sequence(const SequenceSpec& spec, CounterRng& rng) {
    const auto palette = resolved_palette(spec);
    auto controls = sample_controls(spec, rng);
    // Every sequence starts from the unloaded state.
    controls[0] = 0.0;
    std::vector<RampKind> kinds(spec.phases);
    for (auto& kind : kinds) kind = palette[rng.below(palette.size())];
    return assemble_sequence(controls, kinds, spec);
}

ChannelStats channel_stats(std::span<const double> values) {
    ChannelStats stats;
    if (values.empty()) {
        stats.degenerate = true;
        return stats;
    }
    const double n = static_cast<double>(values.size());
    stats.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double sq = 0.0;
    for (double v : values) sq += (v - stats.mean) * (v - stats.mean);
    stats.stddev = std::sqrt(sq / n);
    stats.degenerate = stats.stddev <= 1e-12 * std::max(1.0, std::abs(stats.mean));
    return stats;
}

std::vector<double> standardize(std::span<const double> x, const ChannelStats& stats) {
    std::vector<double> out(x.size());
    const double divisor = stats.divisor();
    std::transform(x.begin(), x.end(), out.begin(), [&](double v) { return (v - stats.mean) / divisor; });
    return out;
}

std::vector<double> destandardize(std::span<const double> x, const ChannelStats& stats) {
    std::vector<double> out(x.size());
    const double divisor = stats.divisor();
    std::transform(x.begin(), x.end(), out.begin(), [&](double v) { return v * divisor + stats.mean; });
    return out;
}

SplitSizes split_sizes(std::size_t total) {
    const auto held_out = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(total)));
    return {total - 2 * held_out, held_out, held_out};
}

Normalization compute_normalization(const std::vector<MaterialRecord>& records,
                                    std::span<const std::size_t> train) {
    Normalization norm;
    if (records.empty()) return norm;
    auto gather = [&](auto&& channel_of) {
        std::vector<double> values;
        for (std::size_t i : train) {
            const auto& channel = channel_of(records[i]);
            values.insert(values.end(), channel.begin(), channel.end());
        }
        return channel_stats(values);
    };
    norm.inputs.push_back(gather([](const MaterialRecord& r) -> const std::vector<double>& { return r.input; }));
    for (std::size_t c = 0; c < records.front().targets.size(); ++c)
        norm.targets.push_back(
            gather([c](const MaterialRecord& r) -> const std::vector<double>& { return r.targets[c]; }));
    return norm;
}

Dataset generate_dataset(const SequenceSpec& spec, const constitutive::MaterialParams& material,
                         std::size_t total, std::size_t workers) {
    validate(spec);
    if (total < 10) throw UsageError("a dataset needs at least 10 samples");
    if (constitutive::model_kind(material) != spec.model_kind)
        throw UsageError("material parameters do not match the sequence model kind");

    Dataset data;
    data.spec = spec;
    data.material = material;
    data.sequences.resize(total);
    data.records.resize(total);

    const CounterRng base(spec.seed);
    auto produce = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t i = begin; i < total; i += stride) {
            CounterRng rng = base.split(i);
            data.sequences[i] = random_sequence(spec, rng);
            data.records[i] = constitutive::evaluate_sequence(material, data.sequences[i]);
        }
    };
    workers = std::clamp<std::size_t>(workers, 1, total);
    if (workers == 1) {
        produce(0, 1);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    produce(w, workers);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        pool.clear();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng split_rng = base.split(~std::uint64_t{0});
    split_rng.shuffle(std::span<std::size_t>(order));
    const auto sizes = split_sizes(total);
    auto take = [&](std::size_t from, std::size_t count) {
        std::vector<std::size_t> part(order.begin() + static_cast<std::ptrdiff_t>(from),
                                      order.begin() + static_cast<std::ptrdiff_t>(from + count));
        std::sort(part.begin(), part.end());
        return part;
    };
    data.split.train = take(0, sizes.train);
    data.split.valid = take(sizes.train, sizes.valid);
    data.split.test = take(sizes.train + sizes.valid, sizes.test);
    data.normalization = compute_normalization(data.records, data.split.train);
    return data;
}

namespace {

template <typename ChannelsOf>
std::vector<double> stack(const Dataset& data, std::span<const std::size_t> indices,
                          const std::vector<ChannelStats>* stats, ChannelsOf&& channels_of) {
    std::vector<double> out;
    if (indices.empty()) return out;
    const std::size_t steps = data.records[indices.front()].size();
    const std::size_t channels = channels_of(data.records[indices.front()]).size();
    out.resize(indices.size() * steps * channels);
    for (std::size_t n = 0; n < indices.size(); ++n) {
        if (indices[n] >= data.size()) throw UsageError("record index out of range");
        const auto& ch = channels_of(data.records[indices[n]]);
        for (std::size_t c = 0; c < channels; ++c) {
            const double mean = stats ? (*stats)[c].mean : 0.0;
            const double divisor = stats ? (*stats)[c].divisor() : 1.0;
            for (std::size_t t = 0; t < steps; ++t)
                out[(n * steps + t) * channels + c] = ((*ch[c])[t] - mean) / divisor;
        }
    }
    return out;
}

}  // namespace

std::vector<double> stack_inputs(const Dataset& data, std::span<const std::size_t> indices, bool standardized) {
    return stack(data, indices, standardized ? &data.normalization.inputs : nullptr,
                 [](const MaterialRecord& r) { return std::vector<const std::vector<double>*>{&r.input}; });
}

std::vector<double> stack_targets(const Dataset& data, std::span<const std::size_t> indices, bool standardized) {
    return stack(data, indices, standardized ? &data.normalization.targets : nullptr, [](const MaterialRecord& r) {
        std::vector<const std::vector<double>*> out;
        for (const auto& t : r.targets) out.push_back(&t);
        return out;
    });
}

}  // namespace cellxai::loadgen
