#include "cellxai/constitutive.hpp"

#include <cmath>
#include <string>

#include "cellxai/errors.hpp"

namespace cellxai::constitutive {

namespace {

void require_finite(double value, const char* what) {
    if (!std::isfinite(value)) throw DomainError(std::string(what) + " must be finite");
}

struct BackwardEulerCoefficients {
    double sigma0;
    double sigma1;
    double eps0;
    double eps1;
};

BackwardEulerCoefficients coefficients(double dt, const PoyntingThomsonParams& p) {
    if (!(dt > 0.0)) throw DomainError("time step must be positive, got " + std::to_string(dt));
    const double ratio = p.tau_branch / dt;
    return {ratio, 1.0 + ratio, ratio * (p.e_inf + p.e_branch), p.e_inf + ratio * (p.e_inf + p.e_branch)};
}

}  // namespace

void validate(const NeoHookeParams& params) {
    if (!(params.mu > 0.0)) throw DomainError("Neo-Hooke mu must be positive");
}

void validate(const PoyntingThomsonParams& params) {
    if (!(params.e_inf > 0.0) || !(params.e_branch > 0.0) || !(params.tau_branch > 0.0))
        throw DomainError("Poynting-Thomson moduli and relaxation time must be positive");
}

void validate(const PrandtlReussParams& params) {
    if (!(params.e_mod > 0.0) || !(params.sigma_y > 0.0))
        throw DomainError("Prandtl-Reuss E and sigma_Y must be positive");
    if (params.k_iso < 0.0 || params.h_kin < 0.0)
        throw DomainError("Prandtl-Reuss hardening moduli must be non-negative");
}

ModelKind model_kind(const MaterialParams& params) {
    switch (params.index()) {
        case 0: return ModelKind::hyperelastic;
        case 1: return ModelKind::elastoplastic;
        default: return ModelKind::viscoelastic;
    }
}

MaterialParams default_params(ModelKind kind) {
    switch (kind) {
        case ModelKind::hyperelastic: return NeoHookeParams{};
        case ModelKind::elastoplastic: return PrandtlReussParams{};
        case ModelKind::viscoelastic: return PoyntingThomsonParams{};
    }
    return NeoHookeParams{};
}

double neo_hooke_stress(double stretch, const NeoHookeParams& params) {
    if (!(stretch > 0.0) || !std::isfinite(stretch))
        throw DomainError("stretch must be positive and finite, got " + std::to_string(stretch));
    return params.mu * (stretch * stretch - 1.0 / stretch);
}

double relaxation_modulus(double t, const PoyntingThomsonParams& params) {
    if (!(t >= 0.0)) throw DomainError("relaxation time argument must be non-negative");
    return params.e_inf + params.e_branch * std::exp(-t / params.tau_branch);
}

double creep_compliance(double t, const PoyntingThomsonParams& params) {
    if (!(t >= 0.0)) throw DomainError("creep time argument must be non-negative");
    const double e = params.e_inf;
    const double e1 = params.e_branch;
    const double retardation = params.tau_branch * (e + e1) / e;
    return 1.0 / (e + e1) + e1 / (e * (e + e1)) * (1.0 - std::exp(-t / retardation));
}

StrainDrivenStep visco_step_strain_driven(const ViscoState& state, double strain_next, double dt,
                                          const PoyntingThomsonParams& params) {
    require_finite(strain_next, "strain");
    const auto c = coefficients(dt, params);
    const double stress = (c.eps1 * strain_next - c.eps0 * state.strain + c.sigma0 * state.stress) / c.sigma1;
    return {stress, ViscoState{stress, strain_next, stress - params.e_inf * strain_next}};
}

StressDrivenStep visco_step_stress_driven(const ViscoState& state, double stress_next, double dt,
                                          const PoyntingThomsonParams& params) {
    require_finite(stress_next, "stress");
    const auto c = coefficients(dt, params);
    const double strain = (c.sigma1 * stress_next - c.sigma0 * state.stress + c.eps0 * state.strain) / c.eps1;
    const double branch = stress_next - params.e_inf * strain;
    return {strain, branch, ViscoState{stress_next, strain, branch}};
}

double yield_function(double stress, const PlasticState& state, const PrandtlReussParams& params) {
    return std::abs(stress - state.back_stress) - (params.sigma_y + params.k_iso * state.iso_hardening);
}

PlasticStep plastic_step(const PlasticState& state, double strain_next, const PrandtlReussParams& params) {
    require_finite(strain_next, "strain");
    const double trial_stress = params.e_mod * (strain_next - state.plastic_strain);
    const double trial_yield = yield_function(trial_stress, state, params);
    if (trial_yield <= 0.0) return {trial_stress, state, false};

    const double direction = trial_stress - state.back_stress >= 0.0 ? 1.0 : -1.0;
    const double multiplier = trial_yield / (params.e_mod + params.k_iso + params.h_kin);
    PlasticState next = state;
    next.plastic_strain += multiplier * direction;
    next.iso_hardening += multiplier;
    next.back_stress += multiplier * params.h_kin * direction;
    const double stress = trial_stress - params.e_mod * multiplier * direction;
    return {stress, next, true};
}

MaterialRecord evaluate_sequence(const MaterialParams& params, const LoadingSequence& driving) {
    const ModelKind kind = model_kind(params);
    if (driving.quantity != driving_quantity(kind))
        throw UsageError(std::string("a ") + std::string(to_string(kind)) + " model is driven by " +
                         std::string(to_string(driving_quantity(kind))) + ", got " +
                         std::string(to_string(driving.quantity)));

    const std::size_t steps = driving.size();
    MaterialRecord record;
    record.input = driving.values;
    record.targets.assign(target_names(kind).size(), std::vector<double>(steps, 0.0));
    record.histories.assign(history_names(kind).size(), std::vector<double>(steps, 0.0));

    auto at_increment = [](std::size_t t, auto&& step) {
        try {
            return step();
        } catch (const DomainError& e) {
            throw DomainError(e.what(), t);
        }
    };

    switch (kind) {
        case ModelKind::hyperelastic: {
            const auto& p = std::get<NeoHookeParams>(params);
            validate(p);
            for (std::size_t t = 0; t < steps; ++t)
                record.targets[0][t] = at_increment(t, [&] { return neo_hooke_stress(driving.values[t], p); });
            break;
        }
        case ModelKind::elastoplastic: {
            const auto& p = std::get<PrandtlReussParams>(params);
            validate(p);
            PlasticState state;
            for (std::size_t t = 0; t < steps; ++t) {
                const auto step = at_increment(t, [&] { return plastic_step(state, driving.values[t], p); });
                state = step.state;
                record.targets[0][t] = step.stress;
                record.targets[1][t] = state.plastic_strain;
                record.histories[0][t] = state.plastic_strain;
                record.histories[1][t] = state.iso_hardening;
            }
            break;
        }
        case ModelKind::viscoelastic: {
            const auto& p = std::get<PoyntingThomsonParams>(params);
            validate(p);
            ViscoState state;
            for (std::size_t t = 0; t < steps; ++t) {
                const auto step = at_increment(
                    t, [&] { return visco_step_stress_driven(state, driving.values[t], driving.dt, p); });
                state = step.state;
                record.targets[0][t] = step.strain;
                record.targets[1][t] = step.branch_stress;
                record.histories[0][t] = step.branch_stress;
            }
            break;
        }
    }
    return record;
}

}  // namespace cellxai::constitutive
