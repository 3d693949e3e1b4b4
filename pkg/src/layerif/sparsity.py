"""Per-layer pruning ratios from smoothed layer scores.

Scores are min-max mapped onto ``[e1, e2]`` and scaled by a single factor
``eta`` so that the parameter-weighted mean ratio equals the target. Layers
whose ratio would exceed ``cap`` are pinned there and ``eta`` is re-solved
over the rest until nothing else crosses the cap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np


class SparsityPlanError(ValueError):
    pass


@dataclass(frozen=True)
class SparsityPlanConfig:
    target: float
    layer_dims: Sequence[int]
    e1: Optional[float] = None  # defaults to target - 0.1
    e2: Optional[float] = None  # defaults to target + 0.1
    cap: float = 0.999

    def __post_init__(self):
        if not 0.0 < self.target < 1.0:
            raise SparsityPlanError(f"target sparsity must lie in (0, 1), got {self.target}")
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if not self.layer_dims or any(d <= 0 for d in self.layer_dims):
            raise SparsityPlanError("layer dims must be positive")
        if self.e1 is None:
            object.__setattr__(self, "e1", max(self.target - 0.1, 0.0))
        if self.e2 is None:
            object.__setattr__(self, "e2", self.target + 0.1)
        if self.e1 < 0:
            raise SparsityPlanError(f"e1 must be non-negative, got {self.e1}")
        if not self.e2 > self.e1:
            raise SparsityPlanError(f"need e2 > e1, got e1={self.e1}, e2={self.e2}")
        if not 0.0 < self.cap <= 1.0:
            raise SparsityPlanError(f"cap must lie in (0, 1], got {self.cap}")

    @classmethod
    def from_epsilon(cls, target: float, epsilon: float, layer_dims, cap: float = 0.999) -> "SparsityPlanConfig":
        """Band ``(e1, e2) = (target * (1 - epsilon), target * (1 + epsilon))``."""
        return cls(target, layer_dims, target * (1 - epsilon), target * (1 + epsilon), cap)


@dataclass
class SparsityPlan:
    ratios: np.ndarray
    eta: float
    clamped_layers: List[int]
    target: float
    achieved: float
    e1: float
    e2: float
    cap: float
    reversed: bool = False
    source_scores: str = ""
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "ratios": [float(r) for r in self.ratios],
            "eta": self.eta,
            "e1": self.e1,
            "e2": self.e2,
            "cap": self.cap,
            "target": self.target,
            "achieved": self.achieved,
            "clamped_layers": self.clamped_layers,
            "reversed": self.reversed,
            "source_scores": self.source_scores,
            **self.meta,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "SparsityPlan":
        known = {"ratios", "eta", "e1", "e2", "cap", "target", "achieved", "clamped_layers", "reversed", "source_scores"}
        return cls(
            ratios=np.asarray(payload["ratios"], dtype=np.float64),
            eta=float(payload["eta"]),
            clamped_layers=list(payload["clamped_layers"]),
            target=float(payload["target"]),
            achieved=float(payload["achieved"]),
            e1=float(payload["e1"]),
            e2=float(payload["e2"]),
            cap=float(payload.get("cap", 0.999)),
            reversed=bool(payload.get("reversed", False)),
            source_scores=payload.get("source_scores", ""),
            meta={k: v for k, v in payload.items() if k not in known},
        )


def _scores_of(smoothed) -> np.ndarray:
    if hasattr(smoothed, "planning_vector"):
        return smoothed.planning_vector()
    return np.asarray(smoothed, dtype=np.float64)


def base_ratios(scores, e1: float, e2: float) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full(s.shape, (e1 + e2) / 2.0)
    return (s - lo) / (hi - lo) * (e2 - e1) + e1


def achieved_sparsity(ratios, layer_dims) -> float:
    r = np.asarray(getattr(ratios, "ratios", ratios), dtype=np.float64)
    d = np.asarray(layer_dims, dtype=np.float64)
    if r.shape != d.shape:
        raise SparsityPlanError(f"{r.size} ratios for {d.size} layers")
    return float(r @ d / d.sum())


def plan_sparsity(smoothed, cfg: SparsityPlanConfig, source_scores: str = "", _reversed: bool = False) -> SparsityPlan:
    s = _scores_of(smoothed)
    d = np.asarray(cfg.layer_dims, dtype=np.float64)
    if s.shape != d.shape:
        raise SparsityPlanError(f"{s.size} scores for {d.size} layers")
    if not np.all(np.isfinite(s)):
        raise SparsityPlanError("scores must be finite")
    if cfg.target >= cfg.cap:
        raise SparsityPlanError(f"target {cfg.target} is infeasible under cap {cfg.cap}")
    base = base_ratios(s, cfg.e1, cfg.e2)
    need = cfg.target * d.sum()
    clamped = np.zeros(s.size, dtype=bool)
    while True:
        free = ~clamped
        mass = float(base[free] @ d[free])
        budget = need - cfg.cap * float(d[clamped].sum())
        with np.errstate(over="ignore"):
            eta = budget / mass if mass > 0.0 else np.inf
        if not np.isfinite(eta):
            raise SparsityPlanError("infeasible: unclamped layers have zero base ratio but budget remains")
        ratios = np.where(clamped, cfg.cap, eta * base)
        over = free & (ratios > cfg.cap)
        if not over.any():
            break
        clamped |= over
        if clamped.all():
            raise SparsityPlanError("infeasible: every layer clamps before the target is met")
    return SparsityPlan(
        ratios=ratios,
        eta=float(eta),
        clamped_layers=[int(i) for i in np.flatnonzero(clamped)],
        target=cfg.target,
        achieved=achieved_sparsity(ratios, d),
        e1=float(cfg.e1),
        e2=float(cfg.e2),
        cap=cfg.cap,
        reversed=_reversed,
        source_scores=source_scores,
    )


def reverse_plan(smoothed, cfg: SparsityPlanConfig, source_scores: str = "") -> SparsityPlan:
    """Plan from ``1 - scores``: layers the forward plan protects get pruned most."""
    return plan_sparsity(1.0 - _scores_of(smoothed), cfg, source_scores, _reversed=True)
