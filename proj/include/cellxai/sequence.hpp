#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cellxai {

enum class ModelKind { hyperelastic, elastoplastic, viscoelastic };

/// Physical meaning of a driving signal.
enum class DrivingQuantity { stretch, strain, stress };

enum class RampKind { linear, quadratic, square_root, exponential, sine, half_sine, constant };

std::string_view to_string(ModelKind kind);
std::string_view to_string(DrivingQuantity quantity);
std::string_view to_string(RampKind kind);

ModelKind parse_model_kind(std::string_view name);
RampKind parse_ramp_kind(std::string_view name);

/// Stretch for hyperelasticity, strain for elastoplasticity, stress for viscoelasticity.
DrivingQuantity driving_quantity(ModelKind kind);

/// Response channels the networks learn to predict, in storage order.
std::vector<std::string> target_names(ModelKind kind);

/// Algorithmic history variables recorded alongside the targets.
std::vector<std::string> history_names(ModelKind kind);

struct LoadingSequence {
    std::vector<double> values;
    double dt = 1.0;
    /// Start index of every phase followed by the sequence length (phases + 1 entries).
    std::vector<std::size_t> phase_boundaries;
    std::vector<RampKind> ramp_kinds;
    DrivingQuantity quantity = DrivingQuantity::strain;

    std::size_t size() const noexcept { return values.size(); }
};

/// One sample: driving signal, per-channel targets and per-variable histories,
/// each channel holding one value per increment.
struct MaterialRecord {
    std::vector<double> input;
    std::vector<std::vector<double>> targets;
    std::vector<std::vector<double>> histories;

    std::size_t size() const noexcept { return input.size(); }
};

}  // namespace cellxai
