#include "cellxai/sequence.hpp"

#include <array>
#include <utility>

#include "cellxai/errors.hpp"

namespace cellxai {

namespace {

constexpr std::array<std::pair<ModelKind, std::string_view>, 3> kModelNames{{
    {ModelKind::hyperelastic, "hyperelastic"},
    {ModelKind::elastoplastic, "elastoplastic"},
    {ModelKind::viscoelastic, "viscoelastic"},
}};

constexpr std::array<std::pair<RampKind, std::string_view>, 7> kRampNames{{
    {RampKind::linear, "linear"},
    {RampKind::quadratic, "quadratic"},
    {RampKind::square_root, "square_root"},
    {RampKind::exponential, "exponential"},
    {RampKind::sine, "sine"},
    {RampKind::half_sine, "half_sine"},
    {RampKind::constant, "constant"},
}};

}  // namespace

std::string_view to_string(ModelKind kind) {
    for (const auto& [k, name] : kModelNames)
        if (k == kind) return name;
    return "unknown";
}

std::string_view to_string(DrivingQuantity quantity) {
    switch (quantity) {
        case DrivingQuantity::stretch: return "stretch";
        case DrivingQuantity::strain: return "strain";
        case DrivingQuantity::stress: return "stress";
    }
    return "unknown";
}

std::string_view to_string(RampKind kind) {
    for (const auto& [k, name] : kRampNames)
        if (k == kind) return name;
    return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
    for (const auto& [k, n] : kModelNames)
        if (n == name) return k;
    throw UsageError("unknown model kind '" + std::string(name) + "'");
}

RampKind parse_ramp_kind(std::string_view name) {
    for (const auto& [k, n] : kRampNames)
        if (n == name) return k;
    throw UsageError("unknown ramp kind '" + std::string(name) + "'");
}

DrivingQuantity driving_quantity(ModelKind kind) {
    switch (kind) {
        case ModelKind::hyperelastic: return DrivingQuantity::stretch;
        case ModelKind::elastoplastic: return DrivingQuantity::strain;
        case ModelKind::viscoelastic: return DrivingQuantity::stress;
    }
    return DrivingQuantity::strain;
}

std::vector<std::string> target_names(ModelKind kind) {
    switch (kind) {
        case ModelKind::hyperelastic: return {"cauchy_stress"};
        case ModelKind::elastoplastic: return {"stress", "plastic_strain"};
        case ModelKind::viscoelastic: return {"strain", "branch_stress"};
    }
    return {};
}

std::vector<std::string> history_names(ModelKind kind) {
    switch (kind) {
        case ModelKind::hyperelastic: return {};
        case ModelKind::elastoplastic: return {"plastic_strain", "iso_hardening"};
        case ModelKind::viscoelastic: return {"branch_stress"};
    }
    return {};
}

}  // namespace cellxai
