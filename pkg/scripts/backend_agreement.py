"""Spearman agreement of layer scores and expert allocations across influence backends.

Reads the ``scores/`` and ``plans/`` trees written by run_pipeline.py.

    python scripts/backend_agreement.py runs/demo
"""

import argparse
import itertools
import json
from pathlib import Path

from layerif.analysis import compare_vectors
from layerif.experts import ExpertAllocation
from layerif.scores import LayerScoreVector

BACKENDS = ("exact", "closed-form", "hessian-free")
STRATEGIES = ("positive_only", "all", "top_fraction")


def fmt(rho):
    return "   n/a" if rho is None else f"{rho:+.3f}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", type=Path)
    root = ap.parse_args().root
    print(f"{'strategy':<14} {'pair':<28} {'rho(S)':>7} {'rho(experts)':>13}")
    for s in STRATEGIES:
        for a, b in itertools.combinations(BACKENDS, 2):
            sa = LayerScoreVector.load(root / f"scores/{a}_{s}/scores.csv")
            sb = LayerScoreVector.load(root / f"scores/{b}_{s}/scores.csv")
            ea = ExpertAllocation.from_dict(json.loads((root / f"plans/experts_{a}_{s}.json").read_text()))
            eb = ExpertAllocation.from_dict(json.loads((root / f"plans/experts_{b}_{s}.json").read_text()))
            rs = compare_vectors(sa, sb).spearman
            re = compare_vectors(ea, eb).spearman
            print(f"{s:<14} {a + ' vs ' + b:<28} {fmt(rs):>7} {fmt(re):>13}")


if __name__ == "__main__":
    main()
