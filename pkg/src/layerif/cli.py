"""``layerif`` command line: one subcommand per pipeline stage.

Effective settings resolve as command-line flags, then ``--config`` file
(JSON or YAML, keys are the option names with dashes or underscores), then
built-in defaults. Every JSON artifact carries a ``provenance`` block with
the effective settings and SHA-256 hashes of its inputs. Failures print a
JSON object on stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import ablation_reversed, compare_vectors, heatmap_export
from .experts import ExpertAllocation, ExpertPlanConfig, plan_experts
from .gradient_store import read_gradient_set
from .influence import IfBackendConfig, influence_matrix
from .pruning import apply_mask, build_mask, canonical_criterion, eval_report, global_sparsity
from .scores import AggregationStrategy, LayerScoreVector, aggregate, normalize_abs_minmax, smooth
from .sparsity import SparsityPlan, SparsityPlanConfig, plan_sparsity, reverse_plan
from .toy.checkpoint import load_checkpoint, save_checkpoint
from .toy.model import ToyConfig, ToyTransformer
from .toy.task import SPLITS, SyntheticTask, TaskConfig, generate_task
from .toy.training import TrainConfig, dump_gradients, evaluate, train


class CliError(Exception):
    pass


def _floats(text) -> List[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _names(text) -> List[str]:
    if isinstance(text, (list, tuple)):
        return [str(x) for x in text]
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _flag(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).lower() in ("1", "true", "yes", "on")


# (name, type, default, required, help). Name doubles as --flag and config key.
Option = tuple
COMMANDS: Dict[str, List[Option]] = {
    "gen-task": [
        ("out", str, None, True, "output task JSON"),
        ("vocab", int, 16, False, "token vocabulary size"),
        ("seq-len", int, 16, False, "sequence length"),
        ("num-classes", int, 4, False, "number of classes"),
        ("num-terms", int, 2, False, "trailing tokens summed into the label"),
        ("train-size", int, 512, False, "train split size"),
        ("val-size", int, 64, False, "validation split size"),
        ("test-size", int, 256, False, "test split size"),
    ],
    "train-toy": [
        ("task", str, None, True, "task JSON from gen-task"),
        ("out", str, None, True, "output checkpoint"),
        ("epochs", int, 20, False, "training epochs"),
        ("lr", float, 3e-3, False, "Adam learning rate"),
        ("batch-size", int, 32, False, "minibatch size"),
        ("num-blocks", int, 4, False, "transformer blocks"),
        ("d-model", int, 32, False, "model width"),
        ("n-heads", int, 2, False, "attention heads"),
        ("d-ff", int, 64, False, "MLP hidden width"),
    ],
    "dump-grads": [
        ("task", str, None, True, "task JSON"),
        ("model", str, None, True, "model checkpoint"),
        ("out", str, None, True, "output gradient directory"),
        ("model-id", str, "toy", False, "model tag written to the manifest"),
    ],
    "score": [
        ("grads", str, None, True, "gradient directory"),
        ("out", str, None, True, "output directory"),
        ("backend", str, "closed-form", False, "exact | closed-form | hessian-free"),
        ("strategy", str, "positive_only", False, "positive_only | all | top_fraction"),
        ("top-fraction", float, 0.25, False, "fraction kept by top_fraction"),
        ("damping", float, None, False, "fixed damping for every layer"),
        ("damping-scale", float, 0.1, False, "default damping = scale * mean||g||^2 / d"),
        ("max-exact-dim", int, 2000, False, "largest dense system the exact backend solves"),
        ("window", int, 7, False, "smoothing window"),
        ("polyorder", int, 3, False, "smoothing polynomial order"),
    ],
    "plan-experts": [
        ("scores", str, None, True, "scores CSV from score"),
        ("out", str, None, True, "output plan JSON"),
        ("budget", int, None, True, "total experts T"),
        ("beta", float, 3.0, False, "power-transform exponent"),
        ("abs", _flag, False, False, "plan on |S| (for strategies whose sums can be negative)"),
        ("heatmap", str, None, False, "also write a one-row heatmap CSV here"),
        ("name", str, "layerif", False, "row name in the heatmap"),
    ],
    "plan-sparsity": [
        ("scores", str, None, True, "scores CSV from score"),
        ("out", str, None, True, "output plan JSON"),
        ("target", float, None, True, "global sparsity"),
        ("e1", float, None, False, "lower band (default target - 0.1)"),
        ("e2", float, None, False, "upper band (default target + 0.1)"),
        ("epsilon", float, None, False, "band (target*(1-eps), target*(1+eps)); excludes e1/e2"),
        ("cap", float, 0.999, False, "per-layer ratio cap"),
        ("layer-dims", _ints, None, False, "comma-separated prunable counts (default from scores)"),
        ("reverse", _flag, False, False, "plan from inverted scores"),
    ],
    "prune": [
        ("model", str, None, True, "model checkpoint"),
        ("plan", str, None, True, "sparsity plan JSON"),
        ("out", str, None, True, "output pruned checkpoint"),
        ("criterion", str, "magnitude", False, "magnitude | wanda | activation-weighted"),
        ("task", str, None, False, "task JSON (calibration data for wanda)"),
        ("calib-size", int, 32, False, "calibration sequences from the validation split"),
        ("group", str, "block", False, "magnitude comparison group: block | matrix"),
        ("mask-dir", str, None, False, "mask output directory (default <out>.mask)"),
    ],
    "eval": [
        ("model", str, None, True, "model checkpoint"),
        ("task", str, None, True, "task JSON"),
        ("out", str, None, True, "output report JSON"),
        ("split", str, "test", False, "train | val | test"),
    ],
    "compare": [
        ("inputs", _names, None, True, "comma-separated expert plans, sparsity plans or score CSVs"),
        ("out", str, None, True, "output comparison JSON"),
        ("names", _names, None, False, "comma-separated labels for the inputs"),
        ("heatmap", str, None, False, "also write all inputs as a heatmap CSV"),
    ],
    "ablate": [
        ("model", str, None, True, "model checkpoint"),
        ("task", str, None, True, "task JSON"),
        ("scores", str, None, True, "scores CSV"),
        ("out", str, None, True, "output directory"),
        ("target", float, 0.5, False, "global sparsity"),
        ("e1", float, None, False, "lower band"),
        ("e2", float, None, False, "upper band"),
        ("epsilon", float, None, False, "relative band"),
        ("cap", float, 0.999, False, "per-layer ratio cap"),
        ("criteria", _names, ["magnitude", "wanda"], False, "comma-separated criteria"),
        ("seeds", int, 10, False, "number of seeds, starting at --seed"),
        ("calib-size", int, 32, False, "calibration sequences"),
        ("layer-dims", _ints, None, False, "prunable counts (default from scores)"),
    ],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="layerif", description="Layer-wise influence scoring and allocation toolkit")
    parser.add_argument("--version", action="version", version=f"layerif {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="controls all randomness (default 0)")
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON or YAML file of option values")
        for opt, typ, _default, _required, help_text in options:
            extra = {"nargs": "?", "const": True} if typ is _flag else {}
            p.add_argument(
                f"--{opt}", dest=opt.replace("-", "_"), type=typ, default=argparse.SUPPRESS, help=help_text, **extra
            )
    return parser


def _load_config(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise CliError(f"config {path} must hold a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve(command: str, parsed: dict) -> dict:
    options = COMMANDS[command]
    types = {o[0].replace("-", "_"): o[1] for o in options}
    types["seed"] = int
    effective = {o[0].replace("-", "_"): o[2] for o in options}
    effective["seed"] = 0
    config_path = parsed.pop("config", None)
    if config_path:
        file_values = _load_config(config_path)
        unknown = sorted(set(file_values) - set(types))
        if unknown:
            raise CliError(f"unknown config keys for {command}: {unknown}")
        effective.update({k: (types[k](v) if v is not None else None) for k, v in file_values.items()})
    effective.update(parsed)
    missing = [o[0] for o in options if o[3] and effective.get(o[0].replace("-", "_")) is None]
    if missing:
        raise CliError(f"{command}: missing required option(s): " + ", ".join(f"--{m}" for m in missing))
    return effective


# --------------------------------------------------------------------- helpers


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _provenance(command: str, cfg: dict, inputs: Dict[str, str]) -> dict:
    return {"command": command, "config": cfg, "inputs": inputs, "version": __version__}


def _write_json(path, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _merge_json(path, extra: dict) -> None:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    payload.update(extra)
    _write_json(path, payload)


def _load_scores(path) -> LayerScoreVector:
    scores = LayerScoreVector.load(path)
    if scores.normalized is None:
        scores = normalize_abs_minmax(scores)
    return scores


def _layer_dims(cfg: dict, scores: LayerScoreVector) -> List[int]:
    dims = cfg.get("layer_dims") or scores.params.get("layer_dims")
    if not dims:
        raise CliError("layer dims unknown: pass --layer-dims or use scores produced by `score`")
    return [int(d) for d in dims]


def _sparsity_config(cfg: dict, dims: Sequence[int]) -> SparsityPlanConfig:
    if cfg.get("epsilon") is not None:
        if cfg.get("e1") is not None or cfg.get("e2") is not None:
            raise CliError("--epsilon cannot be combined with --e1/--e2")
        return SparsityPlanConfig.from_epsilon(cfg["target"], cfg["epsilon"], dims, cfg["cap"])
    return SparsityPlanConfig(cfg["target"], dims, cfg.get("e1"), cfg.get("e2"), cfg["cap"])


# -------------------------------------------------------------------- commands


def cmd_gen_task(cfg: dict) -> None:
    tcfg = TaskConfig(
        vocab=cfg["vocab"],
        seq_len=cfg["seq_len"],
        num_classes=cfg["num_classes"],
        num_terms=cfg["num_terms"],
        sizes=(cfg["train_size"], cfg["val_size"], cfg["test_size"]),
        rng_seed=cfg["seed"],
    )
    task = generate_task(tcfg)
    payload = json.loads(task.to_json())
    payload["provenance"] = _provenance("gen-task", cfg, {})
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg["out"]).write_text(json.dumps(payload, separators=(",", ":"), sort_keys=True) + "\n", encoding="utf-8")


def cmd_train_toy(cfg: dict) -> None:
    task = SyntheticTask.load(cfg["task"])
    tc = task.config
    mcfg = ToyConfig(
        num_blocks=cfg["num_blocks"],
        d_model=cfg["d_model"],
        n_heads=cfg["n_heads"],
        d_ff=cfg["d_ff"],
        vocab=tc.vocab,
        seq_len=tc.seq_len,
        num_classes=tc.num_classes,
        rng_seed=cfg["seed"],
    )
    trained, curve = train(
        ToyTransformer(mcfg),
        task,
        TrainConfig(epochs=cfg["epochs"], lr=cfg["lr"], batch_size=cfg["batch_size"], seed=cfg["seed"]),
    )
    val_acc, val_ce = evaluate(trained, *task.split("val"))
    report = {
        "loss_curve": curve,
        "val_accuracy": val_acc,
        "val_cross_entropy": val_ce,
        "provenance": _provenance("train-toy", cfg, {"task": sha256_file(cfg["task"])}),
    }
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    digest = save_checkpoint(trained, cfg["out"], report)
    _write_json(Path(cfg["out"]).with_suffix(".json"), dict(report, checkpoint_sha256=digest))


def cmd_dump_grads(cfg: dict) -> None:
    task = SyntheticTask.load(cfg["task"])
    model, _ = load_checkpoint(cfg["model"])
    gs = dump_gradients(model, task, cfg["out"], cfg["model_id"])
    inputs = {"task": sha256_file(cfg["task"]), "model": sha256_file(cfg["model"])}
    _write_json(
        Path(cfg["out"]) / "provenance.json",
        dict(_provenance("dump-grads", cfg, inputs), gradient_set_id=gs.digest(), flatten_order=["wq", "wk", "wv", "wo", "w_up", "w_down"]),
    )


def cmd_score(cfg: dict) -> None:
    gs = read_gradient_set(cfg["grads"])
    backend = IfBackendConfig(
        backend=cfg["backend"],
        damping=cfg.get("damping"),
        damping_scale=cfg["damping_scale"],
        max_exact_dim=cfg["max_exact_dim"],
    )
    infl = influence_matrix(gs, backend)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance("score", cfg, {"gradient_set": gs.digest()})
    infl.meta["provenance"] = prov
    infl.save(out / "influence.csv")
    strategy = AggregationStrategy(cfg["strategy"], cfg["top_fraction"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        scores = smooth(normalize_abs_minmax(aggregate(infl, strategy)), cfg["window"], cfg["polyorder"])
    scores.params.update(layer_dims=list(gs.layer_dims), damping=infl.damping)
    scores.save(out / "scores.csv")
    _merge_json(out / "scores.json", {"provenance": dict(prov, inputs={"influence": sha256_file(out / "influence.csv")})})


def cmd_plan_experts(cfg: dict) -> None:
    scores = LayerScoreVector.load(cfg["scores"])
    raw = np.abs(scores.raw) if cfg["abs"] else scores.raw
    alloc = plan_experts(raw, ExpertPlanConfig(cfg["budget"], cfg["beta"]), source_scores=sha256_file(cfg["scores"]))
    alloc.meta["provenance"] = _provenance("plan-experts", cfg, {"scores": alloc.source_scores})
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg["out"]).write_text(alloc.to_json(), encoding="utf-8")
    if cfg.get("heatmap"):
        Path(cfg["heatmap"]).write_text(heatmap_export([(cfg["name"], alloc)]), encoding="utf-8")


def cmd_plan_sparsity(cfg: dict) -> None:
    scores = _load_scores(cfg["scores"])
    scfg = _sparsity_config(cfg, _layer_dims(cfg, scores))
    planner = reverse_plan if cfg["reverse"] else plan_sparsity
    plan = planner(scores, scfg, source_scores=sha256_file(cfg["scores"]))
    plan.meta["layer_dims"] = list(scfg.layer_dims)
    plan.meta["provenance"] = _provenance("plan-sparsity", cfg, {"scores": plan.source_scores})
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg["out"]).write_text(plan.to_json(), encoding="utf-8")


def cmd_prune(cfg: dict) -> None:
    model, _ = load_checkpoint(cfg["model"])
    plan = SparsityPlan.from_dict(json.loads(Path(cfg["plan"]).read_text(encoding="utf-8")))
    criterion = canonical_criterion(cfg["criterion"])
    inputs = {"model": sha256_file(cfg["model"]), "plan": sha256_file(cfg["plan"])}
    calib = None
    if criterion == "activation-weighted":
        if not cfg.get("task"):
            raise CliError("--task is required for the activation-weighted criterion")
        calib = SyntheticTask.load(cfg["task"]).split("val")[0][: cfg["calib_size"]]
        inputs["task"] = sha256_file(cfg["task"])
    mask = build_mask(model, plan, criterion, calib, cfg["group"])
    pruned = apply_mask(model, mask)
    mask_dir = Path(cfg.get("mask_dir") or f"{cfg['out']}.mask")
    mask.save(mask_dir)
    meta = {
        "criterion": criterion,
        "plan_id": inputs["plan"],
        "achieved_sparsity": global_sparsity(mask, model),
        "per_layer_achieved": mask.achieved,
        "provenance": _provenance("prune", cfg, inputs),
    }
    _merge_json(mask_dir / "mask.json", {"provenance": meta["provenance"]})
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(pruned, cfg["out"], meta)


def cmd_eval(cfg: dict) -> None:
    if cfg["split"] not in SPLITS:
        raise CliError(f"--split must be one of {SPLITS}")
    model, meta = load_checkpoint(cfg["model"])
    task = SyntheticTask.load(cfg["task"])
    acc, ce = evaluate(model, *task.split(cfg["split"]))
    if "achieved_sparsity" in meta:
        sparsity = float(meta["achieved_sparsity"])
    else:
        names = model.prunable_names()
        sparsity = sum(int(np.sum(model.params[n] == 0)) for n in names) / sum(model.params[n].size for n in names)
    report = eval_report(meta.get("criterion", "none"), meta.get("plan_id", ""), sparsity, acc, ce)
    report["split"] = cfg["split"]
    report["provenance"] = _provenance("eval", cfg, {"model": sha256_file(cfg["model"]), "task": sha256_file(cfg["task"])})
    _write_json(cfg["out"], report)


def _load_comparable(path: str):
    if path.endswith(".csv"):
        return LayerScoreVector.load(path)
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if "layers" in payload:
        return ExpertAllocation.from_dict(payload)
    if "ratios" in payload:
        return np.asarray(payload["ratios"], dtype=np.float64)
    raise CliError(f"{path}: not an expert plan, sparsity plan or score CSV")


def cmd_compare(cfg: dict) -> None:
    paths = cfg["inputs"]
    names = cfg.get("names") or [Path(p).stem for p in paths]
    if len(names) != len(paths):
        raise CliError("--names must label every input")
    items = [_load_comparable(p) for p in paths]
    inputs = {n: sha256_file(p) for n, p in zip(names, paths)}
    payload: Dict[str, Any] = {"provenance": _provenance("compare", cfg, inputs)}
    if len(items) >= 2:
        payload["comparisons"] = [
            compare_vectors(items[i], items[j], names[i], names[j]).to_dict()
            for i in range(len(items))
            for j in range(i + 1, len(items))
        ]
    if cfg.get("heatmap"):
        Path(cfg["heatmap"]).write_text(heatmap_export(list(zip(names, items))), encoding="utf-8")
    _write_json(cfg["out"], payload)


def cmd_ablate(cfg: dict) -> None:
    model, _ = load_checkpoint(cfg["model"])
    task = SyntheticTask.load(cfg["task"])
    scores = _load_scores(cfg["scores"])
    scfg = _sparsity_config(cfg, _layer_dims(cfg, scores))
    seeds = list(range(cfg["seed"], cfg["seed"] + cfg["seeds"]))
    result = ablation_reversed(model, scores, scfg, task, cfg["criteria"], seeds, cfg["calib_size"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(result.to_csv(), encoding="utf-8")
    inputs = {k: sha256_file(cfg[k]) for k in ("model", "task", "scores")}
    _write_json(out / "ablation.json", dict(result.summary, provenance=_provenance("ablate", cfg, inputs)))


HANDLERS: Dict[str, Callable[[dict], None]] = {
    "gen-task": cmd_gen_task,
    "train-toy": cmd_train_toy,
    "dump-grads": cmd_dump_grads,
    "score": cmd_score,
    "plan-experts": cmd_plan_experts,
    "plan-sparsity": cmd_plan_sparsity,
    "prune": cmd_prune,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "ablate": cmd_ablate,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    command = None
    try:
        ns = build_parser().parse_args(argv)
        command = ns.command
        if command is None:
            raise CliError("a subcommand is required: " + ", ".join(COMMANDS))
        parsed = {k: v for k, v in vars(ns).items() if k != "command"}
        HANDLERS[command](resolve(command, parsed))
    except (CliError, ValueError, OSError, KeyError, RuntimeError) as exc:
        error = {"error": type(exc).__name__, "message": str(exc), "command": command}
        print(json.dumps(error, sort_keys=True), file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
