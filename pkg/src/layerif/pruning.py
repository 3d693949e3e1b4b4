"""Unstructured pruning of the toy transformer's blocks at per-block ratios.

Two criteria:

* ``magnitude``: the ``floor(ratio * d_l)`` smallest ``|w|`` over the whole
  block (or per matrix with ``group="matrix"``);
* ``activation-weighted``: score ``|w_jk| * ||x_k||_2`` with ``x_k`` the k-th
  input feature over a calibration batch, pruned lowest first within each
  output row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .toy.model import ToyTransformer

CRITERIA = ("magnitude", "activation-weighted")
_ALIASES = {"wanda": "activation-weighted", "activation_weighted": "activation-weighted"}


class PruningError(ValueError):
    pass


def canonical_criterion(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in CRITERIA:
        raise PruningError(f"unknown criterion {name!r}; choose from {CRITERIA} (or 'wanda')")
    return name


@dataclass
class PruneMask:
    """``masks[name]`` is True where a weight is removed."""

    masks: Dict[str, np.ndarray]
    criterion: str
    requested: List[float] = field(default_factory=list)
    achieved: List[float] = field(default_factory=list)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = []
        blob = bytearray()
        for name in sorted(self.masks):
            bits = np.packbits(self.masks[name].ravel(), bitorder="little").tobytes()
            index.append({"name": name, "shape": list(self.masks[name].shape), "offset": len(blob), "nbytes": len(bits)})
            blob.extend(bits)
        (directory / "mask.bin").write_bytes(bytes(blob))
        meta = {
            "criterion": self.criterion,
            "bitorder": "little",
            "matrices": index,
            "requested": self.requested,
            "achieved": self.achieved,
        }
        (directory / "mask.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "PruneMask":
        directory = Path(directory)
        meta = json.loads((directory / "mask.json").read_text(encoding="utf-8"))
        blob = (directory / "mask.bin").read_bytes()
        masks = {}
        for entry in meta["matrices"]:
            count = int(np.prod(entry["shape"]))
            raw = np.frombuffer(blob[entry["offset"] : entry["offset"] + entry["nbytes"]], dtype=np.uint8)
            masks[entry["name"]] = np.unpackbits(raw, count=count, bitorder="little").astype(bool).reshape(entry["shape"])
        return cls(masks, meta["criterion"], meta.get("requested", []), meta.get("achieved", []))


def _ratios(plan) -> np.ndarray:
    return np.asarray(getattr(plan, "ratios", plan), dtype=np.float64)


def _check_plan(model: ToyTransformer, ratios: np.ndarray) -> None:
    if ratios.size != model.config.num_blocks:
        raise PruningError(f"plan has {ratios.size} ratios for {model.config.num_blocks} blocks")
    if np.any(ratios < 0) or np.any(ratios > 1):
        raise PruningError("ratios must lie in [0, 1]")


def _prune_count(ratio: float, size: int) -> int:
    # The small slack absorbs products like 0.999 * 1000 landing one ulp low.
    return min(size, int(math.floor(ratio * size + 1e-9)))


def _split(model: ToyTransformer, block: int, flat: np.ndarray) -> Dict[str, np.ndarray]:
    out, offset = {}, 0
    for name in model.block_matrix_names(block):
        shape = model.params[name].shape
        size = int(np.prod(shape))
        out[name] = flat[offset : offset + size].reshape(shape)
        offset += size
    return out


def _block_ratio(masks: Dict[str, np.ndarray], names: List[str]) -> float:
    total = sum(masks[n].size for n in names)
    return sum(int(masks[n].sum()) for n in names) / total


def smallest_magnitude(values, ratio: float) -> np.ndarray:
    """Boolean mask of the ``floor(ratio * size)`` smallest ``|values|``; ties to the lower index."""
    flat = np.abs(np.asarray(values, dtype=np.float64).ravel())
    pruned = np.zeros(flat.size, dtype=bool)
    pruned[np.argsort(flat, kind="stable")[: _prune_count(ratio, flat.size)]] = True
    return pruned.reshape(np.shape(values))


def magnitude_mask(model: ToyTransformer, plan, group: str = "block") -> PruneMask:
    ratios = _ratios(plan)
    _check_plan(model, ratios)
    if group not in ("block", "matrix"):
        raise PruningError(f"group must be 'block' or 'matrix', got {group!r}")
    masks: Dict[str, np.ndarray] = {}
    for b, ratio in enumerate(ratios):
        if group == "block":
            masks.update(_split(model, b, smallest_magnitude(model.block_vector(b), ratio)))
        else:
            for n in model.block_matrix_names(b):
                masks[n] = smallest_magnitude(model.params[n], ratio)
    achieved = [_block_ratio(masks, model.block_matrix_names(b)) for b in range(len(ratios))]
    return PruneMask(masks, "magnitude", [float(r) for r in ratios], achieved)


def input_feature_norms(model: ToyTransformer, calib_tokens) -> Dict[str, np.ndarray]:
    """L2 norm of each input feature of every prunable matrix over the batch."""
    calib_tokens = np.asarray(calib_tokens)
    if calib_tokens.size == 0:
        raise PruningError("calibration batch is empty")
    _, cache = model.forward(calib_tokens, record_inputs=True)
    return {name: np.sqrt(np.sum(x * x, axis=0)) for name, x in cache["inputs"].items()}


def _row_quotas(row_lengths: List[int], ratio: float) -> List[int]:
    """Per-row prune counts summing to ``floor(ratio * total)``.

    Each row gets the floor of its proportional share; leftover units go to
    the largest fractional shares, earlier rows first on ties.
    """
    total = _prune_count(ratio, sum(row_lengths))
    shares = [ratio * n for n in row_lengths]
    quotas = [min(n, int(math.floor(s + 1e-9))) for s, n in zip(shares, row_lengths)]
    left = total - sum(quotas)
    if left > 0:
        order = sorted(range(len(shares)), key=lambda i: (-(shares[i] - quotas[i]), i))
        for i in order:
            if left == 0:
                break
            if quotas[i] < row_lengths[i]:
                quotas[i] += 1
                left -= 1
    return quotas


def lowest_scored_per_row(weights: List[np.ndarray], norms: List[np.ndarray], ratio: float) -> List[np.ndarray]:
    """Masks for a group of matrices sharing one ratio, pruned row by row.

    Row ``j`` of matrix ``W`` scores ``|W[j, k]| * norms[k]``; per-row counts
    come from :func:`_row_quotas` so the group total is ``floor(ratio * size)``.
    """
    rows = [(i, j) for i, w in enumerate(weights) for j in range(w.shape[0])]
    quotas = _row_quotas([weights[i].shape[1] for i, _ in rows], ratio)
    masks = [np.zeros(w.shape, dtype=bool) for w in weights]
    for (i, j), k in zip(rows, quotas):
        if k:
            score = np.abs(weights[i][j]) * norms[i]
            masks[i][j, np.argsort(score, kind="stable")[:k]] = True
    return masks


def activation_weighted_mask(model: ToyTransformer, plan, calib_tokens=None, norms: Optional[Dict[str, np.ndarray]] = None) -> PruneMask:
    ratios = _ratios(plan)
    _check_plan(model, ratios)
    if norms is None:
        if calib_tokens is None:
            raise PruningError("need a calibration batch or precomputed feature norms")
        norms = input_feature_norms(model, calib_tokens)
    masks: Dict[str, np.ndarray] = {}
    for b, ratio in enumerate(ratios):
        names = model.block_matrix_names(b)
        block = lowest_scored_per_row([model.params[n] for n in names], [norms[n] for n in names], ratio)
        masks.update(zip(names, block))
    achieved = [_block_ratio(masks, model.block_matrix_names(b)) for b in range(len(ratios))]
    return PruneMask(masks, "activation-weighted", [float(r) for r in ratios], achieved)


def build_mask(model: ToyTransformer, plan, criterion: str, calib_tokens=None, group: str = "block") -> PruneMask:
    criterion = canonical_criterion(criterion)
    if criterion == "magnitude":
        return magnitude_mask(model, plan, group)
    return activation_weighted_mask(model, plan, calib_tokens)


def apply_mask(model: ToyTransformer, mask: PruneMask) -> ToyTransformer:
    """Zero the masked weights of a copy of ``model``."""
    pruned = model.copy()
    for name, m in mask.masks.items():
        if name not in pruned.params:
            raise PruningError(f"mask names unknown matrix {name!r}")
        if m.shape != pruned.params[name].shape:
            raise PruningError(f"mask for {name} has shape {m.shape}, weights are {pruned.params[name].shape}")
        w = pruned.params[name].copy()
        w[m] = 0.0
        pruned.params[name] = w
    return pruned


def global_sparsity(mask: PruneMask, model: ToyTransformer) -> float:
    names = model.prunable_names()
    total = sum(model.params[n].size for n in names)
    removed = sum(int(mask.masks[n].sum()) for n in names if n in mask.masks)
    return removed / total


def eval_report(criterion: str, plan_id: str, achieved_sparsity: float, accuracy: float, cross_entropy: float) -> dict:
    return {
        "criterion": criterion,
        "plan_id": plan_id,
        "achieved_sparsity": achieved_sparsity,
        "accuracy": accuracy,
        "cross_entropy": cross_entropy,
    }
