"""Experiment drivers shared by ``scripts/`` and the acceptance suite.

Each driver takes an :class:`ExperimentConfig` plus already built data and
returns a plain dict of results, so callers decide what to print or assert.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .collect import ObservationSet, collect_dataset
from .condex import ConDex, DexNet, PreparedInputs, train_condex, train_dexnet
from .config import ExperimentConfig
from .evaluate import (
    benchmark_grasping, calibrate_clamp_force, error_vs_context_curve, make_eval_episodes, sample_contacts,
    sign_test,
)
from .objgen import DatasetSplit, HeterogeneousObject, build_dataset


@dataclass
class Dataset:
    objects: list[HeterogeneousObject]
    split: DatasetSplit
    obs: ObservationSet
    clamp_force: float
    positive_rate_sample: float
    seconds_generate: float
    seconds_collect: float

    def keys(self, split: str) -> list[str]:
        return [o.key for o in self.objects if self.split.split_of(o) == split]

    def split_objects(self, *splits: str) -> list[HeterogeneousObject]:
        return [o for o in self.objects if self.split.split_of(o) in splits]


def calibration_sample(cfg: ExperimentConfig, objects: Sequence[HeterogeneousObject]) -> list[HeterogeneousObject]:
    n = min(cfg.calibrate.sample_objects, len(objects))
    rng = np.random.default_rng(cfg.dataset.seed)
    return [objects[i] for i in sorted(rng.choice(len(objects), size=n, replace=False))]


def build(cfg: ExperimentConfig, jobs: int = 1) -> Dataset:
    """Objects, calibrated clamp force and observations, as the CLI stages make them."""
    d = cfg.dataset
    t0 = time.perf_counter()
    objects, split = build_dataset(d.categories, d.instances, d.seed, d.cross_categories, d.holdout_fraction,
                                   d.flip_fraction, canonical=d.canonical)
    t1 = time.perf_counter()
    if cfg.physics.clamp_force == "auto":
        c = cfg.calibrate
        contacts = sample_contacts(calibration_sample(cfg, objects), cfg.rollout(), cfg.collect.seed)
        res = calibrate_clamp_force(None, c.target_rate, c.tolerance, cfg.rollout(), cfg.collect.seed,
                                    tuple(c.bounds), contacts=contacts)
        force, rate = res.clamp_force, res.positive_rate
    else:
        force, rate = float(cfg.physics.clamp_force), float("nan")
    t2 = time.perf_counter()
    obs = collect_dataset(objects, cfg.rollout(force), cfg.collect.seed, jobs)
    t3 = time.perf_counter()
    return Dataset(list(objects), split, obs, force, rate, t1 - t0, t3 - t2)


def train_pair(cfg: ExperimentConfig, data: Dataset, fov: int | None = None, log_every: int = 0) -> dict:
    """ConDex and DexNet on the train split with shared prepared inputs."""
    net = cfg.net_config(fov)
    keys = data.keys("train")
    inputs = PreparedInputs(data.obs, net)
    tc = cfg.train_config()
    t0 = time.perf_counter()
    condex = train_condex(data.obs, net, _with_log(tc, log_every), keys, inputs)
    t1 = time.perf_counter()
    dexnet = train_dexnet(data.obs, net, _with_log(cfg.train_config(cfg.training.dexnet_steps), log_every), keys,
                          inputs)
    t2 = time.perf_counter()
    return {"condex": ConDex(condex.params, net), "dexnet": DexNet(dexnet.params, net),
            "condex_losses": condex.losses, "dexnet_losses": dexnet.losses,
            "seconds_condex": t1 - t0, "seconds_dexnet": t2 - t1}


def train_condex_only(cfg: ExperimentConfig, data: Dataset, fov: int | None = None, log_every: int = 0) -> ConDex:
    net = cfg.net_config(fov)
    res = train_condex(data.obs, net, _with_log(cfg.train_config(), log_every), data.keys("train"))
    return ConDex(res.params, net)


def _with_log(tc, log_every):
    return replace(tc, log_every=log_every)


def context_benefit(cfg: ExperimentConfig, data: Dataset, condex, dexnet, k_values=(0, 5, 15, 20)) -> dict:
    """Per-seed error curves on the evaluation split and paired sign tests pooled over seeds."""
    e = cfg.eval
    keys = data.keys(e.split)
    per_seed = []
    errs = {k: [] for k in k_values}
    dex = []
    n_episodes = 0
    for seed in e.seeds:
        episodes, _ = make_eval_episodes(data.obs, keys, max(k_values), e.targets, seed)
        n_episodes = len(episodes)
        c = error_vs_context_curve(condex, data.obs, episodes, k_values, "condex", e.split, seed)
        d = error_vs_context_curve(dexnet, data.obs, episodes, [0], "dexnet", e.split, seed)
        per_seed.append({"seed": seed, **{f"K{k}": r.error_rate for k, r in zip(k_values, c.records)},
                         "dexnet": d.records[0].error_rate})
        for k in k_values:
            errs[k].append(c.episode_errors[k])
        dex.append(d.episode_errors[0])
    pooled = {k: np.concatenate(v) for k, v in errs.items()}
    dex_all = np.concatenate(dex)
    return {
        "episodes_per_seed": n_episodes,
        "per_seed": per_seed,
        "mean": {k: float(v.mean()) for k, v in pooled.items()},
        "dexnet_mean": float(dex_all.mean()),
        "k15_vs_k0": sign_test(pooled[15], pooled[0]),
        "k15_vs_dexnet": sign_test(pooled[15], dex_all),
    }


def benchmark_objects(cfg: ExperimentConfig, data: Dataset) -> list[HeterogeneousObject]:
    """The held-out objects the grasping benchmark runs on (same rule as the CLI)."""
    pool = data.split_objects("intra", "cross")
    rng = np.random.default_rng(cfg.eval.seeds[0])
    n = min(cfg.eval.bench_objects, len(pool))
    return [pool[i] for i in sorted(rng.choice(len(pool), size=n, replace=False))]


def run_benchmark(cfg: ExperimentConfig, data: Dataset, model, strategy: str, seeds: Sequence[int]) -> dict:
    objects = benchmark_objects(cfg, data)
    bench = cfg.benchmark_config(strategy)
    config = cfg.rollout(data.clamp_force, model.cfg.patch_size)
    results = [benchmark_grasping(model, objects, bench, config, s, strategy) for s in seeds]
    return {
        "objects": len(objects),
        "accuracy": [r.accuracy for r in results],
        "robust_rate": [r.robust_rate for r in results],
        "chosen_score": [float(r.chosen_scores.mean()) for r in results],
        "context_positive": [float(np.nanmean(r.context_positive)) for r in results],
        "random_accuracy": [r.random_accuracy for r in results],
    }
