"""Layer-wise influence scoring and the expert / sparsity allocations built on it."""

__version__ = "0.1.0"

from .experts import ExpertAllocation, ExpertPlanConfig, plan_experts, validate_allocation
from .gradient_store import GradientSet, read_gradient_set, write_gradient_set
from .influence import IfBackendConfig, LayerInfluenceMatrix, influence_matrix
from .scores import AggregationStrategy, LayerScoreVector, aggregate, normalize_abs_minmax, smooth
from .sparsity import SparsityPlan, SparsityPlanConfig, achieved_sparsity, plan_sparsity, reverse_plan

__all__ = [
    "AggregationStrategy",
    "ExpertAllocation",
    "ExpertPlanConfig",
    "GradientSet",
    "IfBackendConfig",
    "LayerInfluenceMatrix",
    "LayerScoreVector",
    "SparsityPlan",
    "SparsityPlanConfig",
    "achieved_sparsity",
    "aggregate",
    "influence_matrix",
    "normalize_abs_minmax",
    "plan_experts",
    "plan_sparsity",
    "read_gradient_set",
    "reverse_plan",
    "smooth",
    "validate_allocation",
    "write_gradient_set",
]
