"""Run the full toy pipeline through the CLI and print one line per pruned model.

    python scripts/run_pipeline.py --out runs/demo
"""

import argparse
import json
import os
from pathlib import Path

from layerif.cli import run
from layerif.scores import LayerScoreVector

BACKENDS = ("exact", "closed-form", "hessian-free")
STRATEGIES = ("positive_only", "all", "top_fraction")


def cli(*argv):
    code = run([str(a) for a in argv])
    if code:
        raise SystemExit(f"layerif {' '.join(map(str, argv))} failed with status {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/pipeline")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--target", type=float, default=0.5)
    ap.add_argument("--experts-per-layer", type=int, default=5)
    ap.add_argument("--criteria", default="magnitude,wanda")
    args = ap.parse_args()

    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    os.chdir(root)  # relative paths keep the provenance blocks location-free
    cli("gen-task", "--out", "task.json", "--seed", args.seed)
    cli("train-toy", "--task", "task.json", "--out", "model.ckpt", "--seed", args.seed, "--epochs", args.epochs)
    cli("eval", "--model", "model.ckpt", "--task", "task.json", "--out", "reports/dense.json")
    cli("dump-grads", "--task", "task.json", "--model", "model.ckpt", "--out", "grads")
    dense = json.loads(Path("reports/dense.json").read_text())
    print(f"dense model: test accuracy {dense['accuracy']:.4f}, cross-entropy {dense['cross_entropy']:.4f}")
    print(f"{'backend':<13} {'strategy':<14} {'criterion':<20} {'experts':<14} {'sparsity':>8} {'acc':>7} {'ce':>7}")
    for b in BACKENDS:
        for s in STRATEGIES:
            tag = f"{b}_{s}"
            cli("score", "--grads", "grads", "--out", f"scores/{tag}", "--backend", b, "--strategy", s)
            scores = f"scores/{tag}/scores.csv"
            budget = args.experts_per_layer * len(LayerScoreVector.load(scores))
            extra = ["--abs"] if (LayerScoreVector.load(scores).raw <= 0).any() else []
            cli("plan-experts", "--scores", scores, "--out", f"plans/experts_{tag}.json", "--budget", budget, *extra)
            cli("plan-sparsity", "--scores", scores, "--out", f"plans/sparsity_{tag}.json", "--target", args.target)
            experts = json.loads(Path(f"plans/experts_{tag}.json").read_text())["layers"]
            for c in args.criteria.split(","):
                ckpt = f"pruned/{tag}_{c}.ckpt"
                cli("prune", "--model", "model.ckpt", "--plan", f"plans/sparsity_{tag}.json", "--out", ckpt,
                    "--criterion", c, "--task", "task.json")
                cli("eval", "--model", ckpt, "--task", "task.json", "--out", f"reports/{tag}_{c}.json")
                rep = json.loads(Path(f"reports/{tag}_{c}.json").read_text())
                print(
                    f"{b:<13} {s:<14} {rep['criterion']:<20} {str(experts):<14} "
                    f"{rep['achieved_sparsity']:>8.4f} {rep['accuracy']:>7.4f} {rep['cross_entropy']:>7.4f}"
                )


if __name__ == "__main__":
    main()
