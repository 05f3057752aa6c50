"""Grasp rollouts: candidate sampling, labelled observations, episodes and shards.

Observations are kept as a struct of arrays (:class:`ObservationSet`) so that
a whole dataset of patches is one contiguous block; episodes are index views
into such a pool.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateObjectError, InsufficientDataError, InvalidArgumentError, MissingArtifactError
from .objgen import HeterogeneousObject, derive_seed
from .physics import ContactBatch, PhysicsParams, contact_analysis_batch, grasps_to_array, outcome_from_contacts
from .render import DepthImage, GraspPatch, RenderConfig, _sample_heights, extract_grasp_patches, render_depth

SHARD_MAGIC = b"HGSHARD\x00"
SHARD_VERSION = 1


@dataclass(frozen=True)
class RolloutConfig:
    physics: PhysicsParams = PhysicsParams()
    render: RenderConfig = RenderConfig()
    patch_size: int = 64
    grasps_per_object: int = 30
    jaw_opening: float = 0.12
    descent_offset: float = 0.005
    # objects are placed at the image centre with a random yaw
    random_yaw: bool = True

    def __post_init__(self):
        if self.patch_size not in (64, 32):
            raise InvalidArgumentError(f"patch_size must be 64 or 32, got {self.patch_size}")
        if self.grasps_per_object < 1:
            raise InvalidArgumentError(f"grasps_per_object must be >= 1, got {self.grasps_per_object}")


@dataclass(frozen=True, eq=False)
class GraspObservation:
    x: GraspPatch
    z: float
    y: int
    grasp: np.ndarray  # raw (x, y, angle, opening, z) row, kept as provenance


_CONTACT_FIELDS = ("l1", "l2", "mu", "d", "touch", "fits", "mass")


@dataclass(eq=False)
class ObservationSet:
    """Columnar batch of observations, possibly spanning many objects.

    ``z`` is already normalised by the camera height. The contact columns
    let labels be recomputed for a different clamp force without redoing
    the geometry.
    """

    patches: np.ndarray  # (n, s, s) float32 heights above table
    z: np.ndarray  # (n,)
    y: np.ndarray  # (n,) int64
    grasps: np.ndarray  # (n, 5)
    object_index: np.ndarray  # (n,) int64, into object_keys
    object_keys: list[str] = field(default_factory=list)
    contacts: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def patch_size(self) -> int:
        return self.patches.shape[-1]

    def subset(self, idx) -> "ObservationSet":
        idx = np.asarray(idx, dtype=np.int64)
        return ObservationSet(self.patches[idx], self.z[idx], self.y[idx], self.grasps[idx], self.object_index[idx],
                              self.object_keys, {k: v[idx] for k, v in self.contacts.items()})

    def item(self, i: int) -> GraspObservation:
        return GraspObservation(GraspPatch(self.patches[i].astype(np.float64), float(self.z[i])),
                                float(self.z[i]), int(self.y[i]), self.grasps[i].copy())

    def positive_rate(self) -> float:
        return float(self.y.mean()) if len(self) else float("nan")

    def by_object(self) -> dict[str, np.ndarray]:
        order = np.argsort(self.object_index, kind="stable")
        bounds = np.flatnonzero(np.diff(self.object_index[order])) + 1
        return {self.object_keys[int(self.object_index[g[0]])]: g for g in np.split(order, bounds) if len(g)}

    def relabel(self, params: PhysicsParams, clamp_force: float | None = None) -> "ObservationSet":
        labels = outcome_from_contacts(self.contact_batch(), params, clamp_force)
        return replace(self, y=labels)

    def contact_batch(self) -> ContactBatch:
        c = self.contacts
        if not c:
            raise InvalidArgumentError("observation set carries no contact columns")
        # every object has the same total mass column; the oracle takes a scalar
        # per batch so masses are passed as an array, which broadcasts
        return ContactBatch(c["l1"], c["l2"], c["mu"], c["d"], c["touch"].astype(bool), c["fits"].astype(bool),
                            c["mass"])

    def with_patch_size(self, size: int) -> "ObservationSet":
        from .render import center_crop
        return replace(self, patches=center_crop(self.patches, size))


def concat_observations(sets: Sequence[ObservationSet]) -> ObservationSet:
    """Concatenate sets, merging their object-key tables."""
    keys: list[str] = []
    lookup: dict[str, int] = {}
    remapped = []
    for s in sets:
        table = np.array([lookup.setdefault(k, len(lookup)) for k in s.object_keys], dtype=np.int64)
        remapped.append(table[s.object_index] if len(s) else np.zeros(0, np.int64))
    keys = list(lookup)
    size = sets[0].patch_size if sets else 64
    return ObservationSet(
        np.concatenate([s.patches for s in sets]) if sets else np.zeros((0, size, size), np.float32),
        np.concatenate([s.z for s in sets]) if sets else np.zeros(0),
        np.concatenate([s.y for s in sets]) if sets else np.zeros(0, np.int64),
        np.concatenate([s.grasps for s in sets]) if sets else np.zeros((0, 5)),
        np.concatenate(remapped) if sets else np.zeros(0, np.int64),
        keys,
        {k: np.concatenate([s.contacts[k] for s in sets]) for k in _CONTACT_FIELDS} if sets and sets[0].contacts else {},
    )


# sampling and labelling


def place_object(obj: HeterogeneousObject, seed: int, random_yaw: bool = True) -> HeterogeneousObject:
    theta = np.random.default_rng(derive_seed(seed, 0x9A)).uniform(0.0, 2 * np.pi) if random_yaw else 0.0
    return obj.centered_pose(float(theta))


def silhouette_distance(obj: HeterogeneousObject, pts: np.ndarray) -> np.ndarray:
    """Euclidean distance from world points to the nearest occupied cell (0 inside)."""
    local = obj.to_object(np.atleast_2d(pts))
    centers = obj.cell_centers()
    half = obj.cell_size / 2
    gap = np.maximum(np.abs(local[:, None, :] - centers[None]) - half, 0.0)
    return np.sqrt((gap ** 2).sum(-1)).min(axis=1)


def sample_grasp_candidates(obj: HeterogeneousObject, n: int, rng: np.random.Generator, jaw_opening: float = 0.12,
                            img: DepthImage | None = None, descent_offset: float = 0.005) -> np.ndarray:
    """``n`` grasps uniform over the silhouette dilated by ``jaw_opening / 2``.

    Returns an (n, 5) array of x, y, angle, jaw_opening, z with the angle
    uniform on [0, pi). ``z`` is the surface height under the grasp point
    (read from ``img`` if given) minus the finger descent, floored at 0.
    """
    if n < 1:
        raise InvalidArgumentError(f"need at least one grasp candidate, got n={n}")
    if not obj.occupied.any():
        raise DegenerateObjectError(f"object {obj.key} has an empty silhouette")
    r = jaw_opening / 2
    rows, cols = obj.shape
    s = obj.cell_size
    corners = obj.to_world(np.array([[0, 0], [cols * s, 0], [0, rows * s], [cols * s, rows * s]], dtype=float))
    lo, hi = corners.min(0) - r, corners.max(0) + r
    accepted = []
    have = 0
    while have < n:
        pts = rng.uniform(lo, hi, size=(max(2 * n, 16), 2))
        ok = pts[silhouette_distance(obj, pts) <= r]
        accepted.append(ok)
        have += len(ok)
    pos = np.concatenate(accepted)[:n]
    angle = rng.uniform(0.0, np.pi, size=n)
    if img is not None:
        h = _sample_heights(img, pos[:, 0], pos[:, 1], "nearest")
    else:
        h = obj.height_at(pos)
    z = np.maximum(h - descent_offset, 0.0)
    return np.column_stack([pos, angle, np.full(n, jaw_opening), z])


def observe(obj: HeterogeneousObject, img: DepthImage, grasps: np.ndarray, config: RolloutConfig,
            object_key: str | None = None) -> ObservationSet:
    """Crop, label and record the given grasps on a placed object."""
    g = grasps_to_array(grasps)
    patches = extract_grasp_patches(img, g, config.patch_size, config.render.interpolation).astype(np.float32)
    c = contact_analysis_batch(obj, g, config.physics)
    y = outcome_from_contacts(c, config.physics)
    n = len(g)
    contacts = {
        "l1": c.jaw1_contact_length, "l2": c.jaw2_contact_length, "mu": c.mean_friction, "d": c.com_offset,
        "touch": c.both_jaws_touch.astype(np.int64), "fits": c.object_fits.astype(np.int64),
        "mass": np.full(n, c.total_mass),
    }
    return ObservationSet(patches, g[:, 4] / img.camera_height, y, g, np.zeros(n, dtype=np.int64),
                          [object_key or obj.key], contacts)


def render_placed(obj: HeterogeneousObject, config: RolloutConfig) -> DepthImage:
    r = config.render
    return render_depth(obj, r.resolution, r.camera_height, r.image_px)


def collect_observations(obj: HeterogeneousObject, n: int = 30, rng: np.random.Generator | None = None,
                         config: RolloutConfig = RolloutConfig(), placed: bool = False) -> ObservationSet:
    """Random grasps on one object; ``placed=True`` keeps the object's pose as is."""
    rng = np.random.default_rng(0) if rng is None else rng
    key = obj.key
    if not placed:
        obj = place_object(obj, int(rng.integers(2**63)), config.random_yaw)
    img = render_placed(obj, config)
    grasps = sample_grasp_candidates(obj, n, rng, config.jaw_opening, img, config.descent_offset)
    return observe(obj, img, grasps, config, key)


def object_collection_seed(seed: int, obj: HeterogeneousObject) -> int:
    return derive_seed(seed, obj.category_id, obj.instance_id, int(obj.flipped), obj.provenance_seed)


def _collect_one(args) -> ObservationSet:
    obj, seed, config = args
    return collect_observations(obj, config.grasps_per_object, np.random.default_rng(object_collection_seed(seed, obj)),
                                config)


def collect_dataset(objects: Sequence[HeterogeneousObject], config: RolloutConfig = RolloutConfig(), seed: int = 0,
                    jobs: int = 1) -> ObservationSet:
    """Observations for every object; results do not depend on ``jobs``."""
    tasks = [(o, seed, config) for o in objects]
    if jobs > 1:
        with get_context("fork").Pool(jobs) as pool:
            parts = pool.map(_collect_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs)))
    else:
        parts = [_collect_one(t) for t in tasks]
    return concat_observations(parts)


# episodes


@dataclass(frozen=True, eq=False)
class Episode:
    """Context/target split of one object's pool (index views into ``pool``)."""

    object_key: str
    pool: ObservationSet
    context_idx: np.ndarray
    target_idx: np.ndarray
    inverted: bool = False

    @property
    def k(self) -> int:
        return len(self.context_idx)

    @property
    def m(self) -> int:
        return len(self.target_idx)

    def _labels(self, idx) -> np.ndarray:
        y = self.pool.y[idx]
        return 1 - y if self.inverted else y

    @property
    def context_y(self) -> np.ndarray:
        return self._labels(self.context_idx)

    @property
    def target_y(self) -> np.ndarray:
        return self._labels(self.target_idx)

    @property
    def context(self) -> ObservationSet:
        s = self.pool.subset(self.context_idx)
        return replace(s, y=self.context_y)

    @property
    def target(self) -> ObservationSet:
        s = self.pool.subset(self.target_idx)
        return replace(s, y=self.target_y)


def make_episode(pool: ObservationSet, k_interval: tuple[int, int], m: int, rng: np.random.Generator,
                 object_key: str | None = None, pool_idx: np.ndarray | None = None) -> Episode:
    """Fresh random context/target split; ``pool_idx`` restricts to part of ``pool``."""
    k_min, k_max = int(k_interval[0]), int(k_interval[1])
    if not 0 <= k_min <= k_max:
        raise InvalidArgumentError(f"bad context interval {k_interval}")
    if m < 1:
        raise InvalidArgumentError(f"target size must be >= 1, got {m}")
    idx = np.arange(len(pool)) if pool_idx is None else np.asarray(pool_idx, dtype=np.int64)
    if len(idx) < k_max + m:
        raise InsufficientDataError(f"pool of {len(idx)} observations cannot supply K_max={k_max} + M={m}")
    k = int(rng.integers(k_min, k_max + 1))
    perm = idx[rng.permutation(len(idx))]
    if object_key is None:
        object_key = pool.object_keys[int(pool.object_index[idx[0]])] if pool.object_keys else ""
    return Episode(object_key, pool, perm[:k], perm[k:k + m])


def task_augment(episode: Episode, rng: np.random.Generator, enabled: bool = True) -> Episode:
    """With probability 1/2 invert every label of the episode."""
    if not enabled:
        return episode
    if rng.random() < 0.5:
        return replace(episode, inverted=not episode.inverted)
    return episode


Scorer = Callable[[ObservationSet, ObservationSet], np.ndarray]


def accumulated_context_collection(scorer: Scorer, obj: HeterogeneousObject, t_max: int, candidate_pool_size: int,
                                   rng: np.random.Generator, config: RolloutConfig = RolloutConfig(),
                                   img: DepthImage | None = None) -> ObservationSet:
    """Pick each new context grasp as the best-scored of fresh candidates.

    ``scorer(context, candidates)`` returns one score per candidate given the
    observations gathered so far; ties go to the first candidate. ``obj``
    must already be placed.
    """
    if t_max < 1:
        raise InvalidArgumentError(f"t_max must be >= 1, got {t_max}")
    if candidate_pool_size < 1:
        raise InvalidArgumentError(f"candidate_pool_size must be >= 1, got {candidate_pool_size}")
    img = render_placed(obj, config) if img is None else img
    picked: list[ObservationSet] = []
    context = empty_observations(config.patch_size, obj.key)
    for _ in range(t_max):
        grasps = sample_grasp_candidates(obj, candidate_pool_size, rng, config.jaw_opening, img, config.descent_offset)
        cands = observe(obj, img, grasps, config, obj.key)
        scores = np.asarray(scorer(context, cands), dtype=float)
        best = int(np.argmax(scores))
        picked.append(cands.subset([best]))
        context = concat_observations(picked)
    return context


def empty_observations(patch_size: int = 64, key: str = "") -> ObservationSet:
    return ObservationSet(np.zeros((0, patch_size, patch_size), np.float32), np.zeros(0), np.zeros(0, np.int64),
                          np.zeros((0, 5)), np.zeros(0, np.int64), [key] if key else [],
                          {k: np.zeros(0) for k in _CONTACT_FIELDS})


# shards


def _record_dtype(patch_size: int) -> np.dtype:
    return np.dtype([
        ("object", "<i8"), ("grasp", "<f8", (5,)), ("z", "<f8"), ("y", "<i8"),
        ("l1", "<f8"), ("l2", "<f8"), ("mu", "<f8"), ("d", "<f8"), ("touch", "<i8"), ("fits", "<i8"), ("mass", "<f8"),
        ("patch", "<f4", (patch_size, patch_size)),
    ])


def shard_bytes(obs: ObservationSet, meta: dict | None = None) -> bytes:
    dt = _record_dtype(obs.patch_size)
    rec = np.zeros(len(obs), dtype=dt)
    rec["object"] = obs.object_index
    rec["grasp"] = obs.grasps
    rec["z"] = obs.z
    rec["y"] = obs.y
    for k in _CONTACT_FIELDS:
        rec[k] = obs.contacts[k]
    rec["patch"] = obs.patches
    header = {"version": SHARD_VERSION, "count": len(obs), "patch_size": obs.patch_size,
              "object_keys": list(obs.object_keys), "meta": meta or {}}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return SHARD_MAGIC + struct.pack("<Q", len(hb)) + hb + rec.tobytes()


def write_shard(path: str | Path, obs: ObservationSet, meta: dict | None = None) -> str:
    blob = shard_bytes(obs, meta)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_shard(path: str | Path) -> tuple[ObservationSet, dict]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"shard {path} not found (produced by `collect`)")
    blob = path.read_bytes()
    if blob[:len(SHARD_MAGIC)] != SHARD_MAGIC:
        raise InvalidArgumentError(f"{path} is not an observation shard")
    off = len(SHARD_MAGIC)
    (n,) = struct.unpack("<Q", blob[off:off + 8])
    header = json.loads(blob[off + 8:off + 8 + n])
    if header["version"] != SHARD_VERSION:
        raise InvalidArgumentError(f"unsupported shard version {header['version']}")
    rec = np.frombuffer(blob, dtype=_record_dtype(header["patch_size"]), count=header["count"], offset=off + 8 + n)
    obs = ObservationSet(
        rec["patch"].copy(), rec["z"].copy(), rec["y"].copy(), rec["grasp"].copy(), rec["object"].copy(),
        list(header["object_keys"]), {k: rec[k].copy() for k in _CONTACT_FIELDS},
    )
    return obs, header


SHARD_MANIFEST_COLUMNS = ("key", "shard", "offset", "count", "positives")


def write_shards(out_dir: str | Path, obs: ObservationSet, objects_per_shard: int = 100,
                 meta: dict | None = None) -> list[Path]:
    """Split ``obs`` by object into shards plus a ``manifest.csv`` of offsets."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = obs.by_object()
    keys = [k for k in obs.object_keys if k in groups]
    paths, rows = [], []
    for start in range(0, len(keys), objects_per_shard):
        chunk = keys[start:start + objects_per_shard]
        idx = np.concatenate([groups[k] for k in chunk])
        part = obs.subset(idx)
        local = {k: i for i, k in enumerate(chunk)}
        remap = np.array([local.get(k, -1) for k in obs.object_keys], dtype=np.int64)
        part = replace(part, object_index=remap[part.object_index], object_keys=list(chunk))
        name = f"shard-{start // objects_per_shard:04d}.bin"
        write_shard(out_dir / name, part, meta)
        paths.append(out_dir / name)
        off = 0
        for k in chunk:
            cnt = len(groups[k])
            rows.append([k, name, off, cnt, int(part.y[off:off + cnt].sum())])
            off += cnt
    with (out_dir / "manifest.csv").open("w", newline="") as fh:
        if meta:
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SHARD_MANIFEST_COLUMNS)
        w.writerows(rows)
    return paths


def load_shards(shard_dir: str | Path) -> ObservationSet:
    shard_dir = Path(shard_dir)
    manifest = shard_dir / "manifest.csv"
    if not manifest.exists():
        raise MissingArtifactError(f"{manifest} not found (produced by `collect`)")
    with manifest.open() as fh:
        names = list(dict.fromkeys(r["shard"] for r in csv.DictReader(l for l in fh if not l.startswith("#"))))
    return concat_observations([read_shard(shard_dir / n)[0] for n in names])
