"""Layer-restricted influence of training samples on the summed validation loss.

For layer ``l`` with train gradients ``g_i`` (rows of ``G``) and summed
validation gradient ``v``, every backend returns ``I_i = -v^T H^{-1} g_i``
where ``H`` is

* ``exact``: the damped empirical Fisher ``G^T G / n + lam I``, solved by
  Cholesky in whichever of the parameter or sample space is smaller;
* ``closed-form``: that inverse replaced by the mean of the exact rank-one
  inverses ``(lam I + g_k g_k^T)^{-1}``;
* ``hessian-free``: the identity (a plain gradient dot product).

Negative influence means the sample lowers the validation loss.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .gradient_store import GradientSet
from .numerics import compensated_row_sum, sherman_morrison_mean, solve_spd

BACKENDS = ("exact", "closed-form", "hessian-free")
_ALIASES = {"rank-one-closed-form": "closed-form", "closed_form": "closed-form", "hessian_free": "hessian-free"}
DEFAULT_DAMPING_SCALE = 0.1
DEFAULT_MAX_EXACT_DIM = 2000


class InfluenceError(ValueError):
    pass


def canonical_backend(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in BACKENDS:
        raise InfluenceError(f"unknown backend {name!r}; choose from {BACKENDS}")
    return name


@dataclass(frozen=True)
class IfBackendConfig:
    backend: str = "closed-form"
    # None: per-layer default ``damping_scale * mean ||g||^2 / d``; a float or
    # one float per layer overrides it.
    damping: Union[None, float, Sequence[float]] = None
    damping_scale: float = DEFAULT_DAMPING_SCALE
    max_exact_dim: int = DEFAULT_MAX_EXACT_DIM
    threads: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "backend", canonical_backend(self.backend))
        if self.damping_scale <= 0:
            raise InfluenceError("damping_scale must be positive")
        if self.damping is not None:
            values = [self.damping] if np.isscalar(self.damping) else list(self.damping)
            if any(not float(x) > 0 for x in values):
                raise InfluenceError("damping must be strictly positive")


@dataclass
class LayerInfluenceMatrix:
    values: np.ndarray  # (n, L)
    backend: str
    damping: List[Optional[float]]
    source_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InfluenceError("influence values must be an (n, L) matrix")
        if not np.all(np.isfinite(self.values)):
            raise InfluenceError("influence matrix contains non-finite values")

    @property
    def num_layers(self) -> int:
        return self.values.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sample_index"] + [f"layer_{l}" for l in range(self.num_layers)])
        for i, row in enumerate(self.values):
            writer.writerow([i] + [repr(float(x)) for x in row])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "backend": self.backend,
            "damping": self.damping,
            "gradient_set_id": self.source_id,
            "num_train": int(self.values.shape[0]),
            "num_layers": self.num_layers,
            **self.meta,
        }

    def save(self, csv_path, json_path=None) -> None:
        csv_path = Path(csv_path)
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        json_path.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, csv_path, json_path=None) -> "LayerInfluenceMatrix":
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        with csv_path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        values = np.array([[float(x) for x in row[1:]] for row in rows[1:]], dtype=np.float64)
        if values.size == 0:
            values = values.reshape(0, len(rows[0]) - 1)
        side = json.loads(json_path.read_text(encoding="utf-8"))
        meta = {k: v for k, v in side.items() if k not in ("backend", "damping", "gradient_set_id", "num_train", "num_layers")}
        return cls(values, side["backend"], side["damping"], side.get("gradient_set_id", ""), meta)


def aggregate_val_gradient(gs: GradientSet, layer: int) -> np.ndarray:
    """Compensated, fixed-order sum of the validation gradients of one layer."""
    if gs.num_val == 0:
        raise InfluenceError("validation split is empty")
    return compensated_row_sum(gs.val64(layer))


def default_damping(G: np.ndarray, scale: float = DEFAULT_DAMPING_SCALE) -> float:
    lam = scale * float(np.mean(np.einsum("ij,ij->i", G, G))) / G.shape[1]
    if not lam > 0:
        raise InfluenceError("default damping is zero (all train gradients vanish); pass damping explicitly")
    return lam


def _check_lam(lam: float) -> float:
    lam = float(lam)
    if not lam > 0:
        raise InfluenceError(f"damping must be positive, got {lam}")
    return lam


def exact_column(G: np.ndarray, v: np.ndarray, lam: float, max_dim: int = DEFAULT_MAX_EXACT_DIM) -> np.ndarray:
    lam = _check_lam(lam)
    n, d = G.shape
    if n == 0:
        return np.zeros(0)
    if d <= max_dim:
        fisher = G.T @ G / n
        fisher = 0.5 * (fisher + fisher.T)
        x = solve_spd(fisher + lam * np.eye(d), v)
    elif n <= max_dim:
        # Woodbury: (lam I + G^T G / n)^{-1} v = (v - G^T (n lam I + G G^T)^{-1} G v) / lam
        gram = G @ G.T
        gram = 0.5 * (gram + gram.T)
        w = solve_spd(gram + n * lam * np.eye(n), G @ v)
        x = (v - G.T @ w) / lam
    else:
        raise InfluenceError(f"layer too large for the exact backend: n={n}, d={d}, limit {max_dim}")
    return -(G @ x)


def closed_form_column(G: np.ndarray, v: np.ndarray, lam: float) -> np.ndarray:
    lam = _check_lam(lam)
    if G.shape[0] == 0:
        return np.zeros(0)
    return -(G @ sherman_morrison_mean(v, G, lam))


def hessian_free_column(G: np.ndarray, v: np.ndarray) -> np.ndarray:
    return -(G @ v)


def influence_exact(gs: GradientSet, layer: int, lam: Optional[float] = None, max_dim: int = DEFAULT_MAX_EXACT_DIM) -> np.ndarray:
    G = gs.train64(layer)
    lam = default_damping(G) if lam is None else lam
    return exact_column(G, aggregate_val_gradient(gs, layer), lam, max_dim)


def influence_closed_form(gs: GradientSet, layer: int, lam: Optional[float] = None) -> np.ndarray:
    G = gs.train64(layer)
    lam = default_damping(G) if lam is None else lam
    return closed_form_column(G, aggregate_val_gradient(gs, layer), lam)


def influence_hessian_free(gs: GradientSet, layer: int) -> np.ndarray:
    return hessian_free_column(gs.train64(layer), aggregate_val_gradient(gs, layer))


def _thread_cap(requested: Optional[int]) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("LAYERIF_THREADS")
    return max(1, int(env)) if env else 1


def _layer_damping(cfg: IfBackendConfig, layer: int, G: np.ndarray) -> float:
    if cfg.damping is None:
        return default_damping(G, cfg.damping_scale)
    if np.isscalar(cfg.damping):
        return float(cfg.damping)
    return float(list(cfg.damping)[layer])


def influence_matrix(gs: GradientSet, cfg: IfBackendConfig = IfBackendConfig()) -> LayerInfluenceMatrix:
    """All layer columns; each is independent, so they may run on a thread pool."""
    if cfg.damping is not None and not np.isscalar(cfg.damping) and len(list(cfg.damping)) != gs.num_layers:
        raise InfluenceError("need one damping value per layer")

    def column(layer: int):
        G = gs.train64(layer)
        v = aggregate_val_gradient(gs, layer)
        if cfg.backend == "hessian-free":
            return hessian_free_column(G, v), None
        lam = _layer_damping(cfg, layer, G)
        if cfg.backend == "exact":
            return exact_column(G, v, lam, cfg.max_exact_dim), lam
        return closed_form_column(G, v, lam), lam

    layers = range(gs.num_layers)
    workers = min(_thread_cap(cfg.threads), max(gs.num_layers, 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(column, layers))
    else:
        results = [column(l) for l in layers]
    values = np.column_stack([r[0] for r in results]) if results else np.zeros((gs.num_train, 0))
    return LayerInfluenceMatrix(values, cfg.backend, [r[1] for r in results], gs.digest())
