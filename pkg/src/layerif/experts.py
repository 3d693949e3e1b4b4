"""Integer expert counts per layer from layer scores under a global budget."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

# Fractional allocations are compared at this many decimals so that
# rescaling the scores cannot flip a floor or a remainder tie through
# last-ulp rounding.
_FRACTION_DECIMALS = 9


class ExpertPlanError(ValueError):
    pass


@dataclass(frozen=True)
class ExpertPlanConfig:
    budget: int
    beta: float = 3.0
    min_experts: int = 1

    def __post_init__(self):
        if not self.beta > 0:
            raise ExpertPlanError(f"beta must be positive, got {self.beta}")
        if self.min_experts != 1:
            raise ExpertPlanError("the per-layer minimum is fixed at one expert")


@dataclass
class ExpertAllocation:
    counts: List[int]
    fractional: List[float]
    remainder: int
    inverted: List[float]
    powered: List[float]
    budget: int
    beta: float
    source_scores: str = ""
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "layers": self.counts,
            "budget": self.budget,
            "beta": self.beta,
            "fractional": self.fractional,
            "remainder": self.remainder,
            "inverted": self.inverted,
            "powered": self.powered,
            "source_scores": self.source_scores,
            **self.meta,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "ExpertAllocation":
        known = {"layers", "budget", "beta", "fractional", "remainder", "inverted", "powered", "source_scores"}
        return cls(
            counts=[int(c) for c in payload["layers"]],
            fractional=list(payload.get("fractional", [])),
            remainder=int(payload.get("remainder", 0)),
            inverted=list(payload.get("inverted", [])),
            powered=list(payload.get("powered", [])),
            budget=int(payload["budget"]),
            beta=float(payload.get("beta", float("nan"))),
            source_scores=payload.get("source_scores", ""),
            meta={k: v for k, v in payload.items() if k not in known},
        )

    @classmethod
    def from_counts(cls, counts: Sequence[int], budget: int, beta: float = float("nan")) -> "ExpertAllocation":
        counts = [int(c) for c in counts]
        return cls(counts, [], 0, [], [], budget, beta)


def power_transform(scores, beta: float) -> np.ndarray:
    return np.power(np.asarray(scores, dtype=np.float64), beta)


def plan_experts(scores, cfg: ExpertPlanConfig, source_scores: str = "") -> ExpertAllocation:
    """Allocate ``cfg.budget`` experts over layers with benefit scores ``scores``.

    ``scores`` must be strictly positive. Each layer gets one expert plus a
    share of the remaining ``budget - L`` proportional to ``score**beta``;
    units lost to flooring go to the largest fractional parts, lower layer
    index first on ties.
    """
    s = np.asarray(getattr(scores, "raw", scores), dtype=np.float64)
    L = s.size
    if L == 0:
        raise ExpertPlanError("no layers to allocate")
    if not np.all(np.isfinite(s)):
        raise ExpertPlanError("scores must be finite")
    if np.any(s <= 0):
        bad = np.flatnonzero(s <= 0).tolist()
        raise ExpertPlanError(f"scores must be strictly positive; layers {bad} are not")
    if cfg.budget < L:
        raise ExpertPlanError(f"budget {cfg.budget} is below the layer count {L}")
    # Scaling by the maximum keeps large betas finite and makes the shares scale-free.
    rel = np.power(s / s.max(), cfg.beta)
    with np.errstate(over="ignore"):
        powered = power_transform(s, cfg.beta)
    frac = rel / rel.sum() * (cfg.budget - L)
    key = np.round(frac, _FRACTION_DECIMALS)
    floors = np.floor(key)
    counts = floors.astype(np.int64) + 1
    remainder = int(cfg.budget - counts.sum())
    if remainder:
        parts = key - floors
        order = sorted(range(L), key=lambda i: (-parts[i], i))
        for i in order[:remainder]:
            counts[i] += 1
    alloc = ExpertAllocation(
        counts=[int(c) for c in counts],
        fractional=[float(f) for f in frac],
        remainder=remainder,
        inverted=[float(x) for x in s],
        powered=[float(x) for x in powered],
        budget=int(cfg.budget),
        beta=float(cfg.beta),
        source_scores=source_scores,
    )
    violations = validate_allocation(alloc, cfg)
    if violations:
        raise ExpertPlanError(f"internal allocation error: {violations}")
    return alloc


def validate_allocation(alloc, cfg: ExpertPlanConfig, num_layers: int = None) -> List[str]:
    """Return every violated constraint (empty list when valid)."""
    counts = alloc.counts if isinstance(alloc, ExpertAllocation) else list(alloc)
    violations = []
    if num_layers is not None and len(counts) != num_layers:
        violations.append(f"length: expected {num_layers} layers, got {len(counts)}")
    if not counts:
        violations.append("length: allocation is empty")
    if any(int(c) != c for c in counts):
        violations.append("integer: counts must be integers")
    if any(c < cfg.min_experts for c in counts):
        violations.append(f"min-experts: every layer needs at least {cfg.min_experts}")
    total = sum(counts)
    if total != cfg.budget:
        violations.append(f"budget: counts sum to {total}, expected {cfg.budget}")
    if isinstance(alloc, ExpertAllocation) and alloc.fractional:
        if not math.isclose(sum(alloc.fractional), cfg.budget - len(counts), rel_tol=1e-9, abs_tol=1e-9):
            violations.append("fractional: shares do not sum to budget minus layer count")
    return violations
