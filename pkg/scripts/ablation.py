"""Forward vs reversed sparsity allocation on a trained toy model.

Trains (or loads) the default toy model, scores layers with the chosen
backend and strategy, and prunes with both plans over several seeds.

    python scripts/ablation.py --seeds 10 --target 0.5
"""

import argparse
import json

from layerif.analysis import ablation_reversed
from layerif.influence import IfBackendConfig, influence_matrix
from layerif.scores import AggregationStrategy, aggregate, normalize_abs_minmax, smooth
from layerif.sparsity import SparsityPlanConfig
from layerif.toy import TaskConfig, ToyConfig, ToyTransformer, TrainConfig, generate_task, gradient_set, load_checkpoint, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", help="checkpoint to reuse instead of training")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--target", type=float, default=0.5)
    ap.add_argument("--backend", default="exact")
    ap.add_argument("--strategy", default="positive_only")
    ap.add_argument("--out", help="write the summary JSON here")
    args = ap.parse_args()

    task = generate_task(TaskConfig(rng_seed=args.seed))
    if args.model:
        model, _ = load_checkpoint(args.model)
    else:
        model, _ = train(ToyTransformer(ToyConfig(rng_seed=args.seed)), task, TrainConfig(seed=args.seed))
    gs = gradient_set(model, task)
    infl = influence_matrix(gs, IfBackendConfig(backend=args.backend))
    scores = smooth(normalize_abs_minmax(aggregate(infl, AggregationStrategy(args.strategy))))
    cfg = SparsityPlanConfig(args.target, gs.layer_dims)
    seeds = range(args.seed, args.seed + args.seeds)
    result = ablation_reversed(model, scores, cfg, task, seeds=seeds)

    s = result.summary
    print("layer scores (smoothed):", [round(float(x), 4) for x in scores.smoothed])
    print("forward ratios: ", [round(x, 4) for x in s["forward_ratios"]])
    print("reversed ratios:", [round(x, 4) for x in s["reversed_ratios"]])
    for c, v in s["per_criterion"].items():
        print(
            f"{c:<20} forward {v['mean_accuracy_forward']:.4f}  reversed {v['mean_accuracy_reversed']:.4f}  "
            f"wins/ties/losses {v['wins']}/{v['ties']}/{v['losses']}"
        )
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(s, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
