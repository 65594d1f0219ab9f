#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cellxai/constitutive.hpp"
#include "cellxai/rng.hpp"
#include "cellxai/sequence.hpp"

/// Random piecewise loading sequences and train/validation/test datasets.
namespace cellxai::loadgen {

struct SequenceSpec {
    std::size_t seq_len = 200;
    std::size_t phases = 5;
    ModelKind model_kind = ModelKind::elastoplastic;
    std::vector<RampKind> ramp_palette;  ///< empty selects legal_ramps(model_kind)
    std::uint64_t seed = 0;

    friend bool operator==(const SequenceSpec&, const SequenceSpec&) = default;
};

/// Ramp kinds a model's loading phases may use.
std::vector<RampKind> legal_ramps(ModelKind kind);

/// Palette after defaulting; throws UsageError for empty-after-default or illegal kinds.
std::vector<RampKind> resolved_palette(const SequenceSpec& spec);

void validate(const SequenceSpec& spec);

/// phases + 1 i.i.d. standard normal control points (the first is the initial point).
std::vector<double> sample_controls(const SequenceSpec& spec, CounterRng& rng);

/// Normalized ramp in [0, 1]. Every kind maps 0 to 0 and 1 to 1 except
/// `constant`, which is identically zero (the phase holds its start value).
double ramp_value(RampKind kind, double u);

/// Maps a raw normal draw to the model's driving quantity; stretches are
/// 1 + z clipped to [0.2, 3], strains and stresses are used as drawn.
double map_control(ModelKind kind, double z);

inline constexpr double kMinStretch = 0.2;
inline constexpr double kMaxStretch = 3.0;

/// Phase start indices plus the total length; the last phase absorbs any remainder.
std::vector<std::size_t> phase_boundaries(std::size_t seq_len, std::size_t phases);

/// Interpolates between raw controls phase by phase.
///
/// Within phase w the value is start + (target - start) * ramp(kind_w, k / n_w)
/// for in-phase increments k = 1..n_w, where start is the value reached at the
/// end of the previous phase (controls[0] for the first). Controls are mapped
/// through map_control() first.
LoadingSequence assemble_sequence(std::span<const double> controls, std::span<const RampKind> ramp_kinds,
                                  const SequenceSpec& spec);

/// Draws controls (initial point pinned to rest) and ramp kinds, then assembles.
LoadingSequence random_sequence(const SequenceSpec& spec, CounterRng& rng);

struct ChannelStats {
    double mean = 0.0;
    double stddev = 1.0;
    bool degenerate = false;  ///< zero spread; divisor replaced by 1

    double divisor() const noexcept { return degenerate ? 1.0 : stddev; }

    friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

/// Population mean and standard deviation.
ChannelStats channel_stats(std::span<const double> values);

std::vector<double> standardize(std::span<const double> x, const ChannelStats& stats);
std::vector<double> destandardize(std::span<const double> x, const ChannelStats& stats);

struct Normalization {
    std::vector<ChannelStats> inputs;
    std::vector<ChannelStats> targets;

    friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> valid;
    std::vector<std::size_t> test;
};

/// Sizes for a 70/15/15 partition; validation and test get round(0.15 M), training the rest.
struct SplitSizes {
    std::size_t train;
    std::size_t valid;
    std::size_t test;
};
SplitSizes split_sizes(std::size_t total);

struct Dataset {
    SequenceSpec spec;
    constitutive::MaterialParams material;
    std::vector<LoadingSequence> sequences;
    std::vector<MaterialRecord> records;
    Split split;
    Normalization normalization;

    std::size_t size() const noexcept { return records.size(); }
    std::size_t input_channels() const noexcept { return 1; }
    std::size_t target_channels() const noexcept { return records.empty() ? 0 : records.front().targets.size(); }
};

/// Generates `total` records; record i draws from CounterRng(spec.seed).split(i),
/// so the result is independent of `workers`.
Dataset generate_dataset(const SequenceSpec& spec, const constitutive::MaterialParams& material,
                         std::size_t total, std::size_t workers = 1);

/// Training-split statistics for every input and target channel.
Normalization compute_normalization(const std::vector<MaterialRecord>& records,
                                    std::span<const std::size_t> train);

/// Flattened (samples, increments, channels) arrays, optionally standardized.
std::vector<double> stack_inputs(const Dataset& data, std::span<const std::size_t> indices, bool standardized);
std::vector<double> stack_targets(const Dataset& data, std::span<const std::size_t> indices, bool standardized);

}  // namespace cellxai::loadgen
