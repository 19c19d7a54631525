"""Experiment driver.

Every subcommand works inside ``<out>/<run_id>/`` with the layout::

    config.snapshot  datasets/  checkpoints/  logs/  reports/

and is a deterministic function of its config and root seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C
from .bilevel import MODES, SYNTH_MODES
from .data import DatasetSplit, load_dataset, read_dataset, save_dataset
from .diag import (
    BoundInputs,
    DiagError,
    knn_mean_distance,
    kl_proxy,
    pac_bound,
    pearson,
    per_trajectory_csv,
    task_shift_estimate,
    weight_change_report,
    weight_shift_matrix,
)
from .env import hitting_time, load_world, save_world
from .evaluation import ExtractedPolicy, eval_pool, evaluate, results_csv, run_matrix
from .model import init_from_pretrained, load_checkpoint, save_checkpoint
from .pipeline import Prepared, generate, make_split, make_synthetic, pretrain, run_training
from .reweight import EmbeddingCache
from .seeding import derive_seed


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


class Run:
    """Paths of one run directory."""

    def __init__(self, cfg: C.ExperimentConfig, out: str, run_id: str | None = None):
        self.cfg = cfg
        self.id = run_id or f"{cfg.preset or 'custom'}-s{cfg.seed}"
        self.root = Path(out) / self.id
        for sub in ("datasets", "checkpoints", "logs", "reports"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        (self.root / "config.snapshot").write_text(C.to_ini(cfg), encoding="utf-8")

    def __truediv__(self, name: str) -> Path:
        return self.root / name


def load_config(args) -> C.ExperimentConfig:
    base = C.preset(args.preset) if args.preset else None
    if args.config:
        cfg = C.from_ini(Path(args.config).read_text(encoding="utf-8"), base)
    else:
        cfg = base or C.ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=int(args.seed))
    return C.validate(cfg)


def _input_root(run: Run, args) -> Path:
    return Path(args.input) if getattr(args, "input", None) else run.root


def _load_split(root: Path) -> DatasetSplit:
    meta = json.loads((root / "datasets" / "split.json").read_text(encoding="utf-8"))
    parts = {k: tuple(load_dataset(root / "datasets" / f"{k}.jsonl")) for k in ("train", "val", "eval")}
    return DatasetSplit(parts["train"], parts["val"], parts["eval"], tuple(meta["train_categories"]),
                        tuple(meta["heldout_categories"]))


def _load_prepared(root: Path, regime: str) -> Prepared:
    world = load_world(root / "datasets" / "world.json")
    split = _load_split(root)
    pretrained = load_checkpoint(root / "checkpoints" / "prior.ckpt")
    _, synthetic = read_dataset(root / "datasets" / "synthetic.jsonl")
    cache = EmbeddingCache.load(root / "checkpoints" / "embeddings.cache")
    cache.check(pretrained)
    return Prepared(world, split, pretrained, synthetic, cache, regime)


# ---------------------------------------------------------------- commands

def cmd_gen(cfg, run: Run, args) -> dict:
    world, offline = generate(cfg)
    save_world(world, run / "datasets/world.json")
    save_dataset(run / "datasets/offline.jsonl", offline)
    return {"trajectories": len(offline), "categories": list(world.categories)}


def cmd_split(cfg, run: Run, args) -> dict:
    src = _input_root(run, args)
    offline = load_dataset(src / "datasets" / "offline.jsonl")
    if src != run.root:
        save_world(load_world(src / "datasets" / "world.json"), run / "datasets/world.json")
    split = make_split(cfg, offline)
    for name in ("train", "val", "eval"):
        save_dataset(run / f"datasets/{name}.jsonl", getattr(split, name))
    meta = {"regime": cfg.data.regime, "train_categories": list(split.train_categories),
            "heldout_categories": list(split.heldout_categories)}
    (run / "datasets/split.json").write_text(_dump(meta), encoding="utf-8")
    return {**meta, "train": len(split.train), "val": len(split.val), "eval": len(split.eval)}


def cmd_synth(cfg, run: Run, args) -> dict:
    src = _input_root(run, args)
    world = load_world(src / "datasets" / "world.json")
    split = _load_split(src)
    regime = cfg.data.regime
    prior = pretrain(cfg, world, split, regime)
    synthetic, cache = make_synthetic(cfg, world, split, prior, regime)
    synth_cfg = cfg.synth.build(derive_seed(cfg.seed, "synth", regime))
    save_checkpoint(prior, run / "checkpoints/prior.ckpt")
    save_dataset(run / "datasets/synthetic.jsonl", synthetic, header={"synth_cfg": synth_cfg.to_json()})
    cache.save(run / "checkpoints/embeddings.cache")
    return {"synthetic": len(synthetic), "cached": len(cache), "fingerprint": cache.fingerprint}


def _cell(args, cfg) -> tuple[str, str]:
    return args.method or cfg.bilevel.mode, args.algo or cfg.loss.algo


def cmd_train(cfg, run: Run, args) -> dict:
    method, algo = _cell(args, cfg)
    prep = _load_prepared(_input_root(run, args), cfg.data.regime)
    log = run_training(cfg, prep, method, algo)
    tag = f"{method}-{algo}"
    save_checkpoint(log.params, run / f"checkpoints/{tag}.ckpt")
    log.phi.save(run / f"checkpoints/{tag}.phi.json")
    (run / f"logs/{tag}.csv").write_text(log.csv_text(), encoding="utf-8")
    (run / f"logs/{tag}.weights.jsonl").write_text(log.weights_jsonl(), encoding="utf-8")
    return {"method": method, "algo": algo, "steps": {str(p): log.steps(p) for p in (1, 2, 3, 4)}}


def cmd_eval(cfg, run: Run, args) -> dict:
    method, algo = _cell(args, cfg)
    src = _input_root(run, args)
    ckpt = Path(args.checkpoint) if args.checkpoint else run / f"checkpoints/{method}-{algo}.ckpt"
    params = load_checkpoint(ckpt)
    world = load_world(src / "datasets" / "world.json")
    tasks = eval_pool(load_dataset(src / "datasets" / "eval.jsonl"))
    report = evaluate(ExtractedPolicy(params, params.algo, cfg.eval.beta), world, tasks, cfg.eval.n_runs,
                      derive_seed(cfg.seed, "eval"), cfg.eval.decode, method=method, regime=cfg.data.regime)
    report.seed = cfg.seed
    (run / f"reports/eval-{method}-{algo}.csv").write_text(results_csv([report]), encoding="utf-8")
    return report.row()


def cmd_matrix(cfg, run: Run, args) -> dict:
    reports = run_matrix(cfg)
    text = results_csv(reports)
    (run / "reports/results.csv").write_text(text, encoding="utf-8")
    return {"rows": len(reports)}


def _final_weights(path: Path) -> dict:
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    return json.loads(lines[-1])["weights"], json.loads(lines[0])["weights"]


def cmd_analyze(cfg, run: Run, args) -> dict:
    method, algo = _cell(args, cfg)
    tag = f"{method}-{algo}"
    roots = [Path(r) for r in args.runs] if args.runs else [run.root]
    src = roots[0]
    prep = _load_prepared(src, cfg.data.regime)
    mixed = list(prep.split.train) + (list(prep.synthetic) if method in SYNTH_MODES else [])
    final, first = _final_weights(src / "logs" / f"{tag}.weights.jsonl")
    ids = [t.traj_id for t in mixed]
    sources = [t.source for t in mixed]
    w = np.array([final[i] for i in ids])
    report = weight_change_report(w, sources)

    knn = {}
    corr = None
    syn_idx = [k for k, s in enumerate(sources) if s == "synthetic"]
    real_idx = [k for k, s in enumerate(sources) if s == "real"]
    if syn_idx:
        E = prep.cache.matrix(ids)
        k = min(cfg.diag.knn_k, len(real_idx))
        dist = knn_mean_distance(E[syn_idx], E[real_idx], k)
        knn = {ids[j]: d for j, d in zip(syn_idx, dist)}
        try:
            corr = pearson(report.changes[syn_idx], dist)
        except DiagError:
            corr = None

    params = load_checkpoint(src / "checkpoints" / f"{tag}.ckpt")
    prior = init_from_pretrained(prep.pretrained, params.algo)
    kl = kl_proxy(params, prior, cfg.diag.kl_sigma)
    h_max = prep.world.config.h_max
    times = [hitting_time(t, h_max) for t in mixed]
    policy = ExtractedPolicy(params, params.algo, cfg.eval.beta)
    shift = task_shift_estimate(policy, prep.world, eval_pool(prep.split.eval), [t.task for t in mixed], w,
                                cfg.diag.n_shift_rollouts, derive_seed(cfg.seed, "shift"))
    bound = pac_bound(BoundInputs(tuple(w / w.sum()), tuple(times), h_max, kl, cfg.diag.delta, cfg.diag.c,
                                  cfg.diag.C1, shift))
    if len(roots) > 1:
        other, _ = _final_weights(roots[1] / "logs" / f"{tag}.weights.jsonl")
        matrix = weight_shift_matrix(final, other, cfg.diag.shift_quantile)
    else:
        matrix = weight_shift_matrix(first, final, cfg.diag.shift_quantile)

    (run / "reports/bound.json").write_text(_dump(bound.to_json()), encoding="utf-8")
    (run / "reports/per_trajectory.csv").write_text(
        per_trajectory_csv(ids, sources, w, report.changes, knn), encoding="utf-8")
    analysis = {"weight_change": report.by_source, "knn_correlation": corr, "knn_k": cfg.diag.knn_k,
                "shift_matrix": matrix.to_json()}
    (run / "reports/analysis.json").write_text(_dump(analysis), encoding="utf-8")
    return {"knn_correlation": corr, "bound_exact": bound.bound_exact, "bound_simplified": bound.bound_simplified}


COMMANDS = {
    "gen": cmd_gen,
    "split": cmd_split,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "matrix": cmd_matrix,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boostlab", description="Trajectory-reweighting experiment driver.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
        p.add_argument("--preset", default=None, help=f"one of {', '.join(sorted(C.PRESETS))}")
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--out", default="out", help="output base directory")
        p.add_argument("--run-id", default=None, help="run directory name (default <preset>-s<seed>)")
        if name in ("split", "synth", "train", "eval"):
            p.add_argument("--in", dest="input", default=None, help="run directory to read inputs from")
        if name in ("train", "eval", "analyze"):
            p.add_argument("--method", choices=MODES, default=None)
            p.add_argument("--algo", choices=("mc", "ilql"), default=None)
        if name == "eval":
            p.add_argument("--checkpoint", default=None)
        if name == "analyze":
            p.add_argument("--runs", nargs="*", default=None, help="run directories (first is analysed)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        run = Run(cfg, args.out, args.run_id)
        result = COMMANDS[args.command](cfg, run, args)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        if isinstance(exc, C.ConfigError):
            err["key"] = exc.key
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2
    print(json.dumps({"command": args.command, "run": str(run.root), **result}, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
