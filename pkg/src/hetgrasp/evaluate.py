"""Metrics, error-vs-context curves, the grasping benchmark and clamp-force calibration."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from . import __version__
from .collect import (
    ObservationSet, RolloutConfig, accumulated_context_collection, collect_observations, concat_observations,
    object_collection_seed, observe, place_object, render_placed, sample_grasp_candidates,
)
from .errors import CalibrationError, EmptyMetricError, InvalidArgumentError
from .objgen import HeterogeneousObject, derive_seed
from .physics import ContactBatch, PhysicsParams, contact_analysis_batch, outcome_from_contacts

THRESHOLD = 0.5


def error_rate(predictions, labels, threshold: float = THRESHOLD) -> float:
    """(FP + FN) / (P + N); a prediction >= threshold counts as positive."""
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if len(p) != len(y):
        raise InvalidArgumentError(f"{len(p)} predictions but {len(y)} labels")
    if len(p) == 0:
        raise EmptyMetricError("error_rate of an empty set")
    return float(np.count_nonzero((p >= threshold) != (y == 1)) / len(y))


def grasp_accuracy(outcomes) -> float:
    o = np.asarray(outcomes).ravel()
    if len(o) == 0:
        raise EmptyMetricError("grasp_accuracy of no trials")
    return float(np.count_nonzero(o == 1) / len(o))


def robust_grasping_rate(predictions) -> float:
    """Fraction of predictions strictly above 0.5."""
    p = np.asarray(predictions, dtype=float).ravel()
    if len(p) == 0:
        raise EmptyMetricError("robust_grasping_rate of no predictions")
    return float(np.count_nonzero(p > 0.5) / len(p))


@dataclass(frozen=True)
class MetricRecord:
    model_id: str
    split: str
    K: int
    error_rate: float
    grasp_accuracy: float
    robust_rate: float
    n_episodes: int
    seed: int

    def __post_init__(self):
        for name in ("error_rate", "grasp_accuracy", "robust_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {v}")
        if self.n_episodes < 1:
            raise InvalidArgumentError(f"n_episodes must be >= 1, got {self.n_episodes}")


RECORD_COLUMNS = tuple(f.name for f in fields(MetricRecord))


def records_to_csv(records: Sequence[MetricRecord], config_hash: str = "", extra: str = "") -> str:
    buf = io.StringIO()
    buf.write(f"# hetgrasp {__version__} config={config_hash}{' ' + extra if extra else ''}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])
    return buf.getvalue()


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def write_records(path: str | Path, records: Sequence[MetricRecord], config_hash: str = "", extra: str = "") -> Path:
    path = Path(path)
    path.write_text(records_to_csv(records, config_hash, extra))
    return path


def read_records(path: str | Path) -> list[MetricRecord]:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(l for l in fh if not l.startswith("#")))
    types = {f.name: f.type for f in fields(MetricRecord)}
    conv = {"str": str, "int": int, "float": float}
    return [MetricRecord(**{k: conv[types[k]](v) for k, v in r.items()}) for r in rows]


# statistics


def sign_test(a, b) -> tuple[float, int, int]:
    """One-sided paired sign test that ``a`` tends to be smaller than ``b``.

    Ties are dropped. Returns (p-value, wins, losses); with no untied pairs
    the p-value is 1.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    wins = int(np.count_nonzero(a < b))
    losses = int(np.count_nonzero(a > b))
    if wins + losses == 0:
        return 1.0, 0, 0
    return float(binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue), wins, losses


# error-vs-context curves


@dataclass(frozen=True, eq=False)
class EvalEpisode:
    """Fixed targets plus an ordered context pool; context K is its first K items."""

    object_key: str
    context_order: np.ndarray
    target_idx: np.ndarray


def make_eval_episodes(obs: ObservationSet, keys: Sequence[str], k_max: int = 20, m: int = 10,
                       seed: int = 0) -> tuple[list[EvalEpisode], list[str]]:
    """One episode per object; objects whose pool is too small are skipped with a warning."""
    groups = obs.by_object()
    episodes, skipped = [], []
    for key in keys:
        idx = groups.get(key)
        if idx is None or len(idx) < k_max + m:
            skipped.append(key)
            continue
        rng = np.random.default_rng(derive_seed(seed, *[ord(ch) for ch in key]))
        perm = idx[rng.permutation(len(idx))]
        episodes.append(EvalEpisode(key, perm[:k_max], perm[k_max:k_max + m]))
    if skipped:
        warnings.warn(f"skipped {len(skipped)} objects with fewer than {k_max + m} observations")
    return episodes, skipped


@dataclass
class CurveResult:
    records: list[MetricRecord]
    # per-episode error rate for each K, aligned with the episode list
    episode_errors: dict[int, np.ndarray] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)


def _record(model_id, split, k, preds, labels, seed) -> MetricRecord:
    p = np.concatenate(preds)
    y = np.concatenate(labels)
    top = [int(l[int(np.argmax(q))]) for q, l in zip(preds, labels)]
    return MetricRecord(model_id, split, int(k), error_rate(p, y), grasp_accuracy(top), robust_grasping_rate(p),
                        len(preds), int(seed))


def error_vs_context_curve(model, obs: ObservationSet, episodes: Sequence[EvalEpisode],
                           k_values: Sequence[int] = tuple(range(21)), model_id: str = "condex",
                           split: str = "cross", seed: int = 0, skipped: Sequence[str] = ()) -> CurveResult:
    """Error rate at each context size with the targets held fixed.

    ``grasp_accuracy`` in the records is the success rate of the top-scored
    target of each episode and ``robust_rate`` the share of targets scored
    above 0.5.
    """
    if not episodes:
        raise EmptyMetricError("no evaluation episodes")
    k_values = [int(k) for k in k_values]
    max_k = min(len(e.context_order) for e in episodes)
    if max(k_values) > max_k:
        raise InvalidArgumentError(f"episodes hold only {max_k} context observations, K up to {max(k_values)} asked")
    preds = {k: [] for k in k_values}
    labels = []
    fast = hasattr(model, "encode_context") and model.cfg.aggregator == "mean"
    for e in episodes:
        tgt = obs.subset(e.target_idx)
        labels.append(tgt.y)
        if fast:
            feats = model.target_features(tgt.patches)
            ctx = obs.subset(e.context_order)
            emb = model.encode_context(ctx.patches, ctx.z, ctx.y)
            for k in k_values:
                preds[k].append(model.head(feats, tgt.z, model.aggregate(emb[:k])))
        elif getattr(model, "kind", "") == "dexnet":
            p = model.predict(None, tgt)
            for k in k_values:
                preds[k].append(p)
        else:
            for k in k_values:
                preds[k].append(model.predict(obs.subset(e.context_order[:k]), tgt))
    records, per_ep = [], {}
    for k in k_values:
        records.append(_record(model_id, split, k, preds[k], labels, seed))
        per_ep[k] = np.array([error_rate(p, y) for p, y in zip(preds[k], labels)])
    return CurveResult(records, per_ep, list(skipped))


def random_floor_curve(obs: ObservationSet, episodes: Sequence[EvalEpisode], k_values: Sequence[int],
                       split: str = "cross", seed: int = 0) -> CurveResult:
    """Uniform random scores: the chance level every model should beat."""
    rng = np.random.default_rng(derive_seed(seed, 0xF1))
    labels = [obs.y[e.target_idx] for e in episodes]
    preds = [rng.random(len(y)) for y in labels]
    records = [_record("random", split, k, preds, labels, seed) for k in k_values]
    errs = np.array([error_rate(p, y) for p, y in zip(preds, labels)])
    return CurveResult(records, {int(k): errs for k in k_values})


# grasping benchmark


@dataclass(frozen=True)
class BenchmarkConfig:
    trials: int = 30
    candidate_pool: int = 20
    context_size: int = 15
    strategy: str = "random"

    def __post_init__(self):
        if self.strategy not in ("random", "accumulated"):
            raise InvalidArgumentError(f"strategy must be 'random' or 'accumulated', got {self.strategy!r}")
        if self.trials < 1 or self.candidate_pool < 1 or self.context_size < 0:
            raise InvalidArgumentError(f"invalid benchmark sizes in {self}")


@dataclass
class BenchmarkResult:
    model_id: str
    strategy: str
    seed: int
    outcomes: np.ndarray  # (objects, trials) oracle labels of the executed grasps
    chosen_scores: np.ndarray  # (objects, trials) model score of the executed grasp
    random_outcomes: np.ndarray  # (objects, trials) uniform pick from the same pools
    context_positive: np.ndarray  # (objects,) positive rate of the gathered contexts

    @property
    def accuracy(self) -> float:
        return grasp_accuracy(self.outcomes)

    @property
    def robust_rate(self) -> float:
        return robust_grasping_rate(self.chosen_scores)

    @property
    def random_accuracy(self) -> float:
        return grasp_accuracy(self.random_outcomes)

    def per_object_accuracy(self) -> np.ndarray:
        return self.outcomes.mean(axis=1)

    def records(self, split: str = "mixed") -> list[MetricRecord]:
        n = len(self.outcomes)
        return [
            MetricRecord(self.model_id, split, -1, 0.0, self.accuracy, self.robust_rate, n, self.seed),
            MetricRecord("random-grasp", split, -1, 0.0, self.random_accuracy, 0.0, n, self.seed),
        ]


def gather_context(model, obj: HeterogeneousObject, img, bench: BenchmarkConfig, rng: np.random.Generator,
                   config: RolloutConfig) -> ObservationSet:
    """Context grasps on a placed object by the configured strategy."""
    if bench.context_size == 0:
        from .collect import empty_observations
        return empty_observations(config.patch_size, obj.key)
    if bench.strategy == "random":
        g = sample_grasp_candidates(obj, bench.context_size, rng, config.jaw_opening, img, config.descent_offset)
        return observe(obj, img, g, config, obj.key)
    return accumulated_context_collection(model.score, obj, bench.context_size, bench.candidate_pool, rng, config, img)


def benchmark_grasping(model, objects: Sequence[HeterogeneousObject], bench: BenchmarkConfig = BenchmarkConfig(),
                       config: RolloutConfig = RolloutConfig(), seed: int = 0,
                       model_id: str = "condex") -> BenchmarkResult:
    """Gather contexts, then per trial execute the best-scored of fresh candidates."""
    if not objects:
        raise EmptyMetricError("benchmark needs at least one object")
    outcomes, scores, rand, ctx_pos = [], [], [], []
    for obj in objects:
        rng = np.random.default_rng(object_collection_seed(derive_seed(seed, 0xBE), obj))
        placed = place_object(obj, int(rng.integers(2**63)), config.random_yaw)
        img = render_placed(placed, config)
        context = gather_context(model, placed, img, bench, rng, config)
        ctx_pos.append(context.y.mean() if len(context) else np.nan)
        # all trials share one batched scoring pass
        g = sample_grasp_candidates(placed, bench.trials * bench.candidate_pool, rng, config.jaw_opening, img,
                                    config.descent_offset)
        cands = observe(placed, img, g, config, placed.key)
        s = np.asarray(model.score(context, cands), dtype=float).reshape(bench.trials, bench.candidate_pool)
        y = cands.y.reshape(bench.trials, bench.candidate_pool)
        best = np.argmax(s, axis=1)
        rows = np.arange(bench.trials)
        outcomes.append(y[rows, best])
        scores.append(s[rows, best])
        rand.append(y[rows, rng.integers(0, bench.candidate_pool, size=bench.trials)])
    return BenchmarkResult(model_id, bench.strategy, int(seed), np.array(outcomes), np.array(scores),
                           np.array(rand), np.array(ctx_pos))


# clamp-force calibration


def sample_contacts(objects: Sequence[HeterogeneousObject], config: RolloutConfig = RolloutConfig(),
                    seed: int = 0) -> ContactBatch:
    """Contact geometry of the same random grasps ``collect_dataset`` would draw."""
    parts = []
    for obj in objects:
        rng = np.random.default_rng(object_collection_seed(seed, obj))
        placed = place_object(obj, int(rng.integers(2**63)), config.random_yaw)
        g = sample_grasp_candidates(placed, config.grasps_per_object, rng, config.jaw_opening, None,
                                    config.descent_offset)
        c = contact_analysis_batch(placed, g, config.physics)
        parts.append(c)
    cat = lambda name: np.concatenate([getattr(c, name) for c in parts])
    mass = np.concatenate([np.full(len(c), c.total_mass) for c in parts])
    return ContactBatch(cat("jaw1_contact_length"), cat("jaw2_contact_length"), cat("mean_friction"),
                        cat("com_offset"), cat("both_jaws_touch"), cat("object_fits"), mass)


@dataclass
class CalibrationResult:
    clamp_force: float
    positive_rate: float
    steps: int
    history: list[tuple[float, float]]


def positive_rate_at(contacts: ContactBatch, params: PhysicsParams, force: float) -> float:
    return float(outcome_from_contacts(contacts, params, force).mean())


def calibrate_clamp_force(objects: Sequence[HeterogeneousObject] | None = None, target_rate: float = 0.427,
                          tolerance: float = 0.08, config: RolloutConfig = RolloutConfig(), seed: int = 0,
                          bounds: tuple[float, float] = (1.0, 2000.0), max_steps: int = 30,
                          contacts: ContactBatch | None = None) -> CalibrationResult:
    """Bisect F_N (in log space) until the random-grasp positive rate is within tolerance.

    The positive rate never decreases with F_N, so bisection converges; a
    target outside the rates reachable within ``bounds`` is an error.
    """
    if contacts is None:
        if not objects:
            raise CalibrationError("calibration needs objects or precomputed contacts")
        contacts = sample_contacts(objects, config, seed)
    params = config.physics
    lo, hi = float(bounds[0]), float(bounds[1])
    r_lo, r_hi = positive_rate_at(contacts, params, lo), positive_rate_at(contacts, params, hi)
    history = [(lo, r_lo), (hi, r_hi)]
    if r_lo > target_rate + tolerance or r_hi < target_rate - tolerance:
        raise CalibrationError(
            f"target rate {target_rate} +/- {tolerance} unreachable: rates span [{r_lo:.4f}, {r_hi:.4f}] "
            f"for F_N in [{lo}, {hi}] N")
    for step in range(1, max_steps + 1):
        mid = float(np.sqrt(lo * hi))
        rate = positive_rate_at(contacts, params, mid)
        history.append((mid, rate))
        if abs(rate - target_rate) <= tolerance:
            return CalibrationResult(mid, rate, step, history)
        if rate < target_rate:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"no F_N within tolerance after {max_steps} bisection steps (last {history[-1]})")


def category_positive_rates(obs: ObservationSet) -> dict[int, np.ndarray]:
    """Per-object positive rates grouped by category id parsed from the object key."""
    out: dict[int, list[float]] = {}
    for key, idx in obs.by_object().items():
        cat = int(key[1:key.index("-")])
        out.setdefault(cat, []).append(float(obs.y[idx].mean()))
    return {c: np.array(v) for c, v in sorted(out.items())}


# charts


def plot_curves(series: dict[str, tuple[Sequence[int], Sequence[float]]], path: str | Path,
                title: str = "error rate vs context size") -> Path:
    """Line chart of several (K, error) series written as a deterministic SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "hetgrasp"
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (ks, errs) in series.items():
        style = "--" if len(set(np.round(errs, 12))) == 1 else "-"
        ax.plot(list(ks), list(errs), style, marker="o" if style == "-" else None, label=name)
    ax.set_xlabel("context size K")
    ax.set_ylabel("error rate")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
