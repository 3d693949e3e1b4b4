"""Per-layer quality scores from an influence matrix.

The benefit of training sample ``i`` through layer ``l`` is the negated raw
influence, ``b_il = -I_il``; positive benefit means the sample lowers the
validation loss. Layer scores sum benefits over samples.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .influence import LayerInfluenceMatrix
from .numerics import savitzky_golay

STRATEGIES = ("positive_only", "all", "top_fraction")


class ScoreError(ValueError):
    pass


class SmoothingSkippedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AggregationStrategy:
    kind: str = "positive_only"
    fraction: float = 0.25  # used by top_fraction only

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ScoreError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")
        if self.kind == "top_fraction" and not 0.0 < self.fraction <= 1.0:
            raise ScoreError(f"top fraction must lie in (0, 1], got {self.fraction}")

    @property
    def tag(self) -> str:
        return f"top_fraction({self.fraction:g})" if self.kind == "top_fraction" else self.kind


@dataclass
class LayerScoreVector:
    raw: np.ndarray
    strategy: str
    normalized: Optional[np.ndarray] = None
    smoothed: Optional[np.ndarray] = None
    smoothing_skipped: bool = False
    source_id: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        if self.smoothed is not None and self.normalized is None:
            raise ScoreError("smoothed scores require normalized scores")

    def __len__(self) -> int:
        return self.raw.size

    def planning_vector(self) -> np.ndarray:
        """Most processed variant available: smoothed, else normalized."""
        if self.smoothed is not None:
            return self.smoothed
        if self.normalized is not None:
            return self.normalized
        raise ScoreError("scores have not been normalized")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer_index", "raw", "normalized", "smoothed"])
        fmt = lambda arr, i: "" if arr is None else repr(float(arr[i]))
        for i in range(len(self)):
            writer.writerow([i, repr(float(self.raw[i])), fmt(self.normalized, i), fmt(self.smoothed, i)])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "strategy": self.strategy,
            "smoothing_skipped": self.smoothing_skipped,
            "source_id": self.source_id,
            "params": self.params,
        }

    def save(self, csv_path, json_path=None) -> None:
        csv_path = Path(csv_path)
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        json_path.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, csv_path, json_path=None) -> "LayerScoreVector":
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        with csv_path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda key: None if any(r[key] == "" for r in rows) else np.array([float(r[key]) for r in rows])
        side = json.loads(json_path.read_text(encoding="utf-8")) if json_path.is_file() else {}
        return cls(
            raw=np.array([float(r["raw"]) for r in rows]),
            strategy=side.get("strategy", "unknown"),
            normalized=col("normalized"),
            smoothed=col("smoothed"),
            smoothing_skipped=bool(side.get("smoothing_skipped", False)),
            source_id=side.get("source_id", ""),
            params=side.get("params", {}),
        )


def aggregate(infl: LayerInfluenceMatrix, strategy: AggregationStrategy = AggregationStrategy()) -> LayerScoreVector:
    values = infl.values
    if values.size == 0:
        raise ScoreError("influence matrix is empty")
    benefit = -values
    if strategy.kind == "all":
        raw = benefit.sum(axis=0)
    elif strategy.kind == "positive_only":
        raw = np.maximum(benefit, 0.0).sum(axis=0)
    else:
        raw = np.empty(benefit.shape[1])
        for l in range(benefit.shape[1]):
            pos = np.sort(benefit[benefit[:, l] > 0, l])[::-1]
            keep = math.ceil(strategy.fraction * pos.size)
            raw[l] = pos[:keep].sum()
    return LayerScoreVector(
        raw=raw,
        strategy=strategy.tag,
        source_id=infl.source_id,
        params={"strategy": strategy.kind, "fraction": strategy.fraction, "backend": infl.backend},
    )


def normalize_values(values) -> np.ndarray:
    mags = np.abs(np.asarray(values, dtype=np.float64))
    lo, hi = mags.min(), mags.max()
    if hi == lo:
        return np.full(mags.shape, 0.5)
    return (mags - lo) / (hi - lo)


def normalize_abs_minmax(scores: LayerScoreVector) -> LayerScoreVector:
    if len(scores) < 1:
        raise ScoreError("need at least one layer")
    return replace(scores, normalized=normalize_values(scores.raw), smoothed=None, smoothing_skipped=False)


def smooth(scores: LayerScoreVector, window: int = 7, polyorder: int = 3) -> LayerScoreVector:
    """Savitzky-Golay smoothing of the normalized scores, clamped to [0, 1].

    With fewer layers than ``window`` the scores pass through unchanged and
    ``smoothing_skipped`` is set.
    """
    if scores.normalized is None:
        raise ScoreError("normalize scores before smoothing")
    params = dict(scores.params, window=window, polyorder=polyorder)
    if len(scores) < window:
        warnings.warn(
            f"{len(scores)} layers < window {window}: smoothing skipped", SmoothingSkippedWarning, stacklevel=2
        )
        return replace(scores, smoothed=scores.normalized.copy(), smoothing_skipped=True, params=params)
    out = np.clip(savitzky_golay(scores.normalized, window, polyorder), 0.0, 1.0)
    return replace(scores, smoothed=out, smoothing_skipped=False, params=params)
