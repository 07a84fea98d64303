"""Safety-index synthesis for control-affine systems with box-bounded controls.

A parametric safety index is certified valid on a lifted polynomial model by
searching, per control sign pattern, for a refutation certificate whose
Gram matrix is positive definite.  The search is one nonlinear feasibility
program over the index gains and all certificate multipliers.
"""

from .polyalg import Poly
from .model import SubstitutedSystem, UnicycleParams, build_arm, build_unicycle, lift
from .index import IndexTemplate, IndexInstance, build_index, min_phi_dot, min_phi_dot_many
from .refute import ConeConfig, SignPattern, build_instance, build_p0, enumerate_sign_patterns
from .gram import GramMatrix, MonomialBasis, assemble, leading_minors, monomial_basis
from .nlp import NlpProblem, SolverConfig, SynthesisResult, assemble_problem, solve
from .verify import (VerificationReport, RolloutStats, adversarial_ref, sample_manifold,
                     simulate, ssa_control, verify_index)

__all__ = [
    "Poly", "SubstitutedSystem", "UnicycleParams", "build_arm", "build_unicycle", "lift",
    "IndexTemplate", "IndexInstance", "build_index", "min_phi_dot", "min_phi_dot_many",
    "ConeConfig", "SignPattern", "build_instance", "build_p0", "enumerate_sign_patterns",
    "GramMatrix", "MonomialBasis", "assemble", "leading_minors", "monomial_basis",
    "NlpProblem", "SolverConfig", "SynthesisResult", "assemble_problem", "solve",
    "VerificationReport", "RolloutStats", "adversarial_ref", "sample_manifold", "simulate",
    "ssa_control", "verify_index",
]
