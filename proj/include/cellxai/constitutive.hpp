#pragma once

#include <variant>

#include "cellxai/sequence.hpp"

/// One-dimensional reference material models: Neo-Hooke hyperelasticity,
/// the Poynting-Thomson (standard linear solid) viscoelastic model and
/// Prandtl-Reuss elastoplasticity with linear isotropic/kinematic hardening.
namespace cellxai::constitutive {

struct NeoHookeParams {
    double mu = 1.0;

    friend bool operator==(const NeoHookeParams&, const NeoHookeParams&) = default;
};

/// Equilibrium spring E in parallel with one Maxwell branch (E1, tau1).
struct PoyntingThomsonParams {
    double e_inf = 1.0;
    double e_branch = 0.5;
    double tau_branch = 0.1667;

    friend bool operator==(const PoyntingThomsonParams&, const PoyntingThomsonParams&) = default;
};

struct ViscoState {
    double stress = 0.0;
    double strain = 0.0;
    double branch_stress = 0.0;
};

struct PrandtlReussParams {
    double e_mod = 1.0;
    double sigma_y = 0.6;
    double k_iso = 0.0;
    double h_kin = 0.0;

    friend bool operator==(const PrandtlReussParams&, const PrandtlReussParams&) = default;
};

struct PlasticState {
    double plastic_strain = 0.0;
    double iso_hardening = 0.0;
    double back_stress = 0.0;
};

using MaterialParams = std::variant<NeoHookeParams, PrandtlReussParams, PoyntingThomsonParams>;

/// Throws DomainError if a parameter set violates its positivity constraints.
void validate(const NeoHookeParams& params);
void validate(const PoyntingThomsonParams& params);
void validate(const PrandtlReussParams& params);

ModelKind model_kind(const MaterialParams& params);
MaterialParams default_params(ModelKind kind);

/// Cauchy stress mu * (stretch^2 - 1/stretch).
double neo_hooke_stress(double stretch, const NeoHookeParams& params);

/// R(t) = E + E1 exp(-t / tau1).
double relaxation_modulus(double t, const PoyntingThomsonParams& params);

/// Standard-linear-solid creep compliance, from 1/(E+E1) at t = 0 to 1/E as t grows.
double creep_compliance(double t, const PoyntingThomsonParams& params);

struct StrainDrivenStep {
    double stress;
    ViscoState state;
};

struct StressDrivenStep {
    double strain;
    double branch_stress;
    ViscoState state;
};

/// Backward-Euler update of the Maxwell branch for a prescribed strain increment.
StrainDrivenStep visco_step_strain_driven(const ViscoState& state, double strain_next, double dt,
                                          const PoyntingThomsonParams& params);

/// Algebraic inverse of visco_step_strain_driven for a prescribed stress.
StressDrivenStep visco_step_stress_driven(const ViscoState& state, double stress_next, double dt,
                                          const PoyntingThomsonParams& params);

struct PlasticStep {
    double stress;
    PlasticState state;
    bool plastic;  ///< true when the radial-return correction was applied
};

/// Radial return for a prescribed total strain.
PlasticStep plastic_step(const PlasticState& state, double strain_next, const PrandtlReussParams& params);

/// Yield function |sigma - q_sigma| - (sigma_Y + K q_eps).
double yield_function(double stress, const PlasticState& state, const PrandtlReussParams& params);

/// Runs the reference model over a driving sequence from the rest state.
///
/// Targets: hyperelastic (tau); elastoplastic (sigma, eps^P);
/// viscoelastic (eps, sigma_1). Histories follow history_names().
MaterialRecord evaluate_sequence(const MaterialParams& params, const LoadingSequence& driving);

}  // namespace cellxai::constitutive
