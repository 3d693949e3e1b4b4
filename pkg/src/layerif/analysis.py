"""Rank agreement between plans/scores, heatmap exports and the reversed-allocation ablation."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .experts import ExpertAllocation
from .numerics import NumericsError, spearman
from .pruning import apply_mask, build_mask, canonical_criterion, global_sparsity
from .sparsity import SparsityPlanConfig, plan_sparsity, reverse_plan
from .toy.model import ToyTransformer
from .toy.task import SyntheticTask
from .toy.training import evaluate

ABLATION_COLUMNS = ("seed", "criterion", "allocation", "accuracy", "cross_entropy", "achieved_sparsity")


class AnalysisError(ValueError):
    pass


@dataclass
class ComparisonReport:
    """``spearman`` is None when either input is constant (rank correlation undefined)."""

    a_id: str
    b_id: str
    spearman: Optional[float]
    diff: List[float]
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _vector(x) -> np.ndarray:
    if isinstance(x, ExpertAllocation):
        return np.asarray(x.counts, dtype=np.float64)
    return np.asarray(getattr(x, "raw", x), dtype=np.float64)


def compare_vectors(a, b, a_id: str = "a", b_id: str = "b", **meta) -> ComparisonReport:
    va, vb = _vector(a), _vector(b)
    if va.shape != vb.shape:
        raise AnalysisError(f"length mismatch: {va.size} vs {vb.size}")
    meta = dict(meta)
    try:
        rho = spearman(va, vb)
    except NumericsError as exc:
        rho, meta["spearman_undefined"] = None, str(exc)
    return ComparisonReport(a_id, b_id, rho, (va - vb).tolist(), meta)


def compare_allocations(a: ExpertAllocation, b: ExpertAllocation, a_id: str = "a", b_id: str = "b") -> ComparisonReport:
    return compare_vectors(a, b, a_id, b_id, kind="expert-allocation")


def heatmap_export(allocs: Sequence[Tuple[str, ExpertAllocation]]) -> str:
    """CSV with one row per named allocation and one column per layer."""
    if not allocs:
        raise AnalysisError("nothing to export")
    width = len(_vector(allocs[0][1]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name"] + [f"layer_{l}" for l in range(width)])
    for name, alloc in allocs:
        row = _vector(alloc)
        if row.size != width:
            raise AnalysisError(f"ragged input: {name!r} has {row.size} layers, expected {width}")
        writer.writerow([name] + [int(c) if float(c).is_integer() else repr(float(c)) for c in row])
    return buf.getvalue()


@dataclass
class AblationResult:
    rows: List[dict]
    summary: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()


def _seed_rows(model, task, plans, criteria, seed, calib_size, eval_fraction):
    rng = np.random.default_rng(seed)
    Xv, _ = task.split("val")
    Xt, yt = task.split("test")
    calib = Xv[np.sort(rng.choice(len(Xv), size=min(calib_size, len(Xv)), replace=False))]
    n_eval = max(1, int(round(eval_fraction * len(yt))))
    pick = np.sort(rng.choice(len(yt), size=n_eval, replace=False))
    rows = []
    for criterion in criteria:
        for label, plan in plans:
            mask = build_mask(model, plan, criterion, calib)
            acc, ce = evaluate(apply_mask(model, mask), Xt[pick], yt[pick])
            rows.append(
                {
                    "seed": int(seed),
                    "criterion": criterion,
                    "allocation": label,
                    "accuracy": float(acc),
                    "cross_entropy": float(ce),
                    "achieved_sparsity": float(global_sparsity(mask, model)),
                }
            )
    return rows


def ablation_reversed(
    model: ToyTransformer,
    scores,
    cfg: SparsityPlanConfig,
    task: SyntheticTask,
    criteria: Sequence[str] = ("magnitude", "activation-weighted"),
    seeds: Sequence[int] = tuple(range(10)),
    calib_size: int = 32,
    eval_fraction: float = 0.5,
    threads: int = None,
) -> AblationResult:
    """Prune with the forward plan and with its reversal, per seed and criterion.

    A seed draws the calibration batch (from the validation split) and a
    subsample of the test split used for evaluation.
    """
    criteria = [canonical_criterion(c) for c in criteria]
    if not seeds:
        raise AnalysisError("need at least one seed")
    forward = plan_sparsity(scores, cfg)
    backward = reverse_plan(scores, cfg)
    plans = (("forward", forward), ("reversed", backward))
    workers = threads or int(os.environ.get("LAYERIF_THREADS", "1") or 1)
    run = lambda seed: _seed_rows(model, task, plans, criteria, seed, calib_size, eval_fraction)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(run, seeds))
    else:
        per_seed = [run(s) for s in seeds]
    rows = [r for chunk in per_seed for r in chunk]
    return AblationResult(rows, _summarize(rows, forward, backward, criteria, list(seeds)))


def _summarize(rows, forward, backward, criteria, seeds) -> dict:
    paired: Dict[Tuple[int, str], Dict[str, float]] = {}
    for r in rows:
        paired.setdefault((r["seed"], r["criterion"]), {})[r["allocation"]] = r["accuracy"]
    per_criterion = {}
    for c in criteria:
        pairs = [paired[(s, c)] for s in seeds]
        f = np.array([p["forward"] for p in pairs])
        b = np.array([p["reversed"] for p in pairs])
        per_criterion[c] = {
            "mean_accuracy_forward": float(f.mean()),
            "mean_accuracy_reversed": float(b.mean()),
            "wins": int(np.sum(f > b)),
            "ties": int(np.sum(f == b)),
            "losses": int(np.sum(f < b)),
        }
    differing = np.flatnonzero(forward.ratios != backward.ratios).tolist()
    return {
        "num_rows": len(rows),
        "seeds": seeds,
        "criteria": criteria,
        "forward_ratios": forward.ratios.tolist(),
        "reversed_ratios": backward.ratios.tolist(),
        "differing_layers": differing,
        "plans_identical": not differing,
        "wins": sum(v["wins"] for v in per_criterion.values()),
        "ties": sum(v["ties"] for v in per_criterion.values()),
        "losses": sum(v["losses"] for v in per_criterion.values()),
        "pairs": len(seeds) * len(criteria),
        "per_criterion": per_criterion,
    }
