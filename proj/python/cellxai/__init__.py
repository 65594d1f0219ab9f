"""Recurrent surrogates of inelastic constitutive models and their explanation."""

from ._core import (
    __version__,
    creep_compliance,
    generate_dataset,
    history_names,
    neo_hooke_stress,
    pca,
    plan_brackets,
    relaxation_modulus,
    return_mapping,
    run_cli,
    target_names,
)

__all__ = [
    "__version__",
    "creep_compliance",
    "generate_dataset",
    "history_names",
    "neo_hooke_stress",
    "pca",
    "plan_brackets",
    "relaxation_modulus",
    "return_mapping",
    "run_cli",
    "target_names",
]
