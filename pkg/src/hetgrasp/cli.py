"""``hetgrasp`` command line: every pipeline stage as a subcommand over one run directory.

Run layout: ``<out>/<name>/{objects,shards,checkpoints,metrics}``. Exit
codes: 0 success, 1 user error (bad config, missing artifact, ...), 2
internal error.
"""

from __future__ import annotations

import os

# single-threaded BLAS keeps floating point results reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import csv
import hashlib
import json
import sys
import traceback
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import HetGraspError, MissingArtifactError


class Run:
    """Paths and shared helpers for one run directory."""

    def __init__(self, cfg: ExperimentConfig, out: str, deterministic: bool):
        self.cfg = cfg
        self.root = Path(out) / cfg.name
        self.deterministic = deterministic
        self.hash = cfg.hash()

    def dir(self, name: str) -> Path:
        d = self.root / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def stamp(self) -> dict:
        s = {"config_hash": self.hash, "version": __version__}
        if not self.deterministic:
            s["created"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return s

    def require(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(f"{path} is missing; run `hetgrasp {producer}` first")
        return path

    # artifacts -----------------------------------------------------------
    def objects(self):
        from .objgen import load_object, read_manifest
        manifest = self.require(self.root / "objects" / "manifest.csv", "gen-objects")
        rows = read_manifest(manifest)
        return [load_object(self.root / "objects" / r["file"]) for r in rows], rows

    def clamp_force(self) -> float:
        force = self.cfg.physics.clamp_force
        if force != "auto":
            return float(force)
        path = self.require(self.root / "metrics" / "calibration.json", "calibrate")
        return float(json.loads(path.read_text())["clamp_force"])

    def observations(self):
        from .collect import load_shards
        self.require(self.root / "shards" / "manifest.csv", "collect")
        return load_shards(self.root / "shards")

    def split_keys(self, split: str) -> list[str]:
        _, rows = self.objects()
        return [r["key"] for r in rows if r["split"] == split]

    def checkpoint(self, model: str):
        from .nncore.params import load_checkpoint
        return load_checkpoint(self.require(self.root / "checkpoints" / f"{model}.ckpt", f"train --model {model}"))


def _write_csv(path: Path, header: list[str], rows, stamp: dict) -> None:
    with path.open("w", newline="") as fh:
        fh.write("# " + json.dumps(stamp, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_gen_objects(run: Run, args) -> str:
    from .objgen import build_dataset, save_object, write_manifest
    d = run.cfg.dataset
    seed = d.seed if args.seed is None else args.seed
    objects, split = build_dataset(d.categories, d.instances, seed, d.cross_categories, d.holdout_fraction,
                                   d.flip_fraction, canonical=d.canonical)
    out = run.dir("objects")
    files = []
    for o in objects:
        name = f"{o.key}.txt"
        save_object(o, out / name, meta=run.stamp())
        files.append(name)
    write_manifest(out / "manifest.csv", objects, split, files, header=json.dumps(run.stamp(), sort_keys=True))
    counts = {s: sum(split.split_of(o) == s for o in objects) for s in ("train", "intra", "cross")}
    return f"gen-objects: {len(objects)} objects ({counts['train']} train, {counts['intra']} intra, {counts['cross']} cross)"


def _calibration_sample(run: Run, objects):
    n = min(run.cfg.calibrate.sample_objects, len(objects))
    rng = np.random.default_rng(run.cfg.dataset.seed)
    return [objects[i] for i in sorted(rng.choice(len(objects), size=n, replace=False))]


def cmd_calibrate(run: Run, args) -> str:
    from .evaluate import calibrate_clamp_force
    objects, _ = run.objects()
    c = run.cfg.calibrate
    seed = run.cfg.collect.seed if args.seed is None else args.seed
    res = calibrate_clamp_force(_calibration_sample(run, objects), c.target_rate, c.tolerance, run.cfg.rollout(),
                                seed, tuple(c.bounds))
    payload = {"clamp_force": res.clamp_force, "positive_rate": res.positive_rate, "steps": res.steps,
               "history": res.history, **run.stamp()}
    (run.dir("metrics") / "calibration.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    return f"calibrate: F_N = {res.clamp_force:.3f} N, sample positive rate {res.positive_rate:.4f} in {res.steps} steps"


def cmd_collect(run: Run, args) -> str:
    from .collect import collect_dataset, write_shards
    objects, _ = run.objects()
    force = run.clamp_force()
    seed = run.cfg.collect.seed if args.seed is None else args.seed
    obs = collect_dataset(objects, run.cfg.rollout(force), seed, args.jobs)
    meta = {**run.stamp(), "clamp_force": force, "seed": seed}
    paths = write_shards(run.dir("shards"), obs, run.cfg.collect.objects_per_shard, meta)
    return f"collect: {len(obs)} observations in {len(paths)} shards, positive rate {obs.positive_rate():.4f}"


def cmd_stats(run: Run, args) -> str:
    from .evaluate import category_positive_rates
    obs = run.observations()
    rates = category_positive_rates(obs)
    edges = np.linspace(0, 1, 11)
    rows = []
    for cat, r in rates.items():
        hist, _ = np.histogram(r, bins=edges)
        rows.append([cat, len(r), repr(float(r.mean())), *hist.tolist()])
    header = ["category", "objects", "mean_positive_rate"] + [f"bin_{edges[i]:.1f}_{edges[i + 1]:.1f}" for i in range(10)]
    _write_csv(run.dir("metrics") / "stats.csv", header, rows, run.stamp())
    return f"stats: {len(obs)} observations, global positive rate {obs.positive_rate():.4f}"


def _train_keys(run: Run) -> list[str]:
    return run.split_keys("train")


def _model_name(run: Run, args) -> str:
    fov = getattr(args, "fov", None)
    return args.model if fov in (None, run.cfg.render.patch_size) else f"{args.model}-fov{fov}"


def cmd_train(run: Run, args) -> str:
    from .condex import train_condex, train_dexnet, train_igml
    from .nncore.params import save_checkpoint
    obs = run.observations()
    cfg = run.cfg
    net = cfg.net_config(args.fov)
    seed = cfg.training.seed if args.seed is None else args.seed
    keys = _train_keys(run)
    if args.model == "condex":
        res = train_condex(obs, net, cfg.train_config(seed=seed), keys)
    elif args.model == "dexnet":
        res = train_dexnet(obs, net, cfg.train_config(cfg.training.dexnet_steps, seed), keys)
    else:
        res = train_igml(obs, net, cfg.train_config(cfg.training.igml_steps, seed), cfg.igml_config(), keys)
    res.params.meta.update(run.stamp())
    name = _model_name(run, args)
    digest = save_checkpoint(res.params, run.dir("checkpoints") / f"{name}.ckpt")
    _write_csv(run.dir("metrics") / f"{name}_loss.csv", ["step", "loss"],
               [[i + 1, repr(l)] for i, l in enumerate(res.losses)], run.stamp())
    tail = np.mean(res.losses[-100:]) if res.losses else float("nan")
    return f"train: {name} {len(res.losses)} steps, final loss {tail:.4f}, sha256 {digest[:16]}"


def _episodes(run: Run, obs, seed: int):
    from .evaluate import make_eval_episodes
    e = run.cfg.eval
    return make_eval_episodes(obs, run.split_keys(e.split), max(e.k_values), e.targets, seed)


def cmd_eval_error(run: Run, args) -> str:
    from .condex import load_model
    from .evaluate import error_vs_context_curve, write_records
    obs = run.observations()
    name = _model_name(run, args)
    model = load_model(run.checkpoint(name))
    seeds = run.cfg.eval.seeds if args.seed is None else (args.seed,)
    records = []
    for s in seeds:
        episodes, skipped = _episodes(run, obs, s)
        records += error_vs_context_curve(model, obs, episodes, run.cfg.eval.k_values, name,
                                          run.cfg.eval.split, s, skipped).records
    write_records(run.dir("metrics") / f"eval_error_{name}.csv", records, run.hash)
    k_max = max(run.cfg.eval.k_values)
    best = np.mean([r.error_rate for r in records if r.K == k_max])
    return f"eval-error: {name} mean error at K={k_max} is {best:.4f} over {len(seeds)} seeds"


def cmd_curve(run: Run, args) -> str:
    from .condex import load_model
    from .evaluate import error_vs_context_curve, plot_curves, random_floor_curve, write_records
    obs = run.observations()
    models = {name: load_model(run.checkpoint(name)) for name in ("condex", "dexnet")}
    seed = run.cfg.eval.seeds[0] if args.seed is None else args.seed
    episodes, skipped = _episodes(run, obs, seed)
    ks = run.cfg.eval.k_values
    records, series = [], {}
    for name, model in models.items():
        res = error_vs_context_curve(model, obs, episodes, ks, name, run.cfg.eval.split, seed, skipped)
        records += res.records
        series[name] = (ks, [r.error_rate for r in res.records])
    floor = random_floor_curve(obs, episodes, ks, run.cfg.eval.split, seed)
    records += floor.records
    series["random"] = (ks, [r.error_rate for r in floor.records])
    metrics = run.dir("metrics")
    write_records(metrics / "curve.csv", records, run.hash)
    plot_curves(series, metrics / "curve.svg")
    return (f"curve: {len(episodes)} episodes, condex K=0 {series['condex'][1][0]:.4f} -> "
            f"K={ks[-1]} {series['condex'][1][-1]:.4f}, dexnet {series['dexnet'][1][0]:.4f}")


def cmd_eval_grasp(run: Run, args) -> str:
    from .condex import load_model
    from .evaluate import benchmark_grasping, write_records
    objects, rows = run.objects()
    split_of = {r["key"]: r["split"] for r in rows}
    pool = [o for o in objects if split_of[o.key] in ("intra", "cross")]
    e = run.cfg.eval
    rng = np.random.default_rng(e.seeds[0])
    chosen = [pool[i] for i in sorted(rng.choice(len(pool), size=min(e.bench_objects, len(pool)), replace=False))]
    name = _model_name(run, args)
    model = load_model(run.checkpoint(name))
    bench = run.cfg.benchmark_config(args.strategy)
    config = run.cfg.rollout(run.clamp_force())
    seeds = e.seeds if args.seed is None else (args.seed,)
    records = []
    for s in seeds:
        res = benchmark_grasping(model, chosen, bench, config, s, name)
        records += res.records()
    write_records(run.dir("metrics") / f"grasp_{name}_{bench.strategy}.csv", records, run.hash)
    acc = np.mean([r.grasp_accuracy for r in records if r.model_id == name])
    return f"eval-grasp: {name} ({bench.strategy}) accuracy {acc:.4f} on {len(chosen)} objects x {len(seeds)} seeds"


def cmd_export(run: Run, args) -> str:
    """Write ``export.json`` listing every artifact with its sha256."""
    if not run.root.exists():
        raise MissingArtifactError(f"{run.root} does not exist; run `hetgrasp gen-objects` first")
    entries = {}
    for p in sorted(run.root.rglob("*")):
        if p.is_file() and p.name != "export.json":
            entries[str(p.relative_to(run.root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    payload = {**run.stamp(), "config": run.cfg.to_dict(), "artifacts": entries}
    (run.root / "export.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    return f"export: {len(entries)} artifacts listed in {run.root / 'export.json'}"


COMMANDS = {
    "gen-objects": cmd_gen_objects,
    "calibrate": cmd_calibrate,
    "collect": cmd_collect,
    "stats": cmd_stats,
    "train": cmd_train,
    "eval-error": cmd_eval_error,
    "curve": cmd_curve,
    "eval-grasp": cmd_eval_grasp,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML (defaults built in when omitted)")
    common.add_argument("--out", default="runs", help="root directory for run outputs")
    common.add_argument("--seed", type=int, default=None, help="override the stage's seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for collect")
    common.add_argument("--deterministic", action="store_true", help="omit timestamps from artifacts")
    parser = argparse.ArgumentParser(prog="hetgrasp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hetgrasp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("train", "eval-error", "eval-grasp"):
            p.add_argument("--model", choices=("condex", "dexnet", "igml"), default="condex")
        if name in ("train", "eval-error", "eval-grasp"):
            p.add_argument("--fov", type=int, choices=(64, 32), default=None, help="patch size for the model")
        if name == "eval-grasp":
            p.add_argument("--strategy", choices=("random", "accumulated"), default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = Run(load_config(args.config), args.out, args.deterministic)
        print(COMMANDS[args.command](run, args))
        return 0
    except HetGraspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
