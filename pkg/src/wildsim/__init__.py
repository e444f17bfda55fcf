"""Wild-sum solutions of kinetic equations, interaction trees and the N-agent random-matching model."""

__version__ = "0.1.0"

from .errors import NumericBudgetError
from .trees import OrderedTree, count_trees, enumerate_trees, sample_tree
from .branching import BranchingLaw, closed_law, p_closed, p_finite_N, p_kolmogorov
from .kernels import kernel_from_spec, validate_weight_spec, weights_from_spec
from .laws import SampleEnsemble, law_from_spec
from .wildsum import expect_mu_t, sample_mu_t, sample_mu_t_many

__all__ = [
    "NumericBudgetError",
    "OrderedTree",
    "count_trees",
    "enumerate_trees",
    "sample_tree",
    "BranchingLaw",
    "closed_law",
    "p_closed",
    "p_finite_N",
    "p_kolmogorov",
    "kernel_from_spec",
    "validate_weight_spec",
    "weights_from_spec",
    "SampleEnsemble",
    "law_from_spec",
    "expect_mu_t",
    "sample_mu_t",
    "sample_mu_t_many",
]
