"""Procedural objects with heterogeneous mass and friction.

Two families are supported:

* Letters: 10 cube-composite shapes built from bars of cubes. Every bar
  gets its own density weight and friction coefficient; masses are then
  rescaled so the whole object weighs ``total_mass``.
* Bottles: 8 planar bottle silhouettes split into two component regions,
  one of which is denser and grippier than the other.

Objects live on a regular cell grid. Row ``r`` covers ``y in [r*s, (r+1)*s)``
and column ``c`` covers ``x in [c*s, (c+1)*s)`` in the object frame, so row 0
is the bottom of the object. ``pose`` maps the object frame into the world.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InvalidArgumentError

OBJECT_FORMAT = "hetgrasp-object"
OBJECT_FORMAT_VERSION = 1
FLIP_BIT = 1 << 20

LETTER_NAMES = ("F", "L", "T", "4", "9", "H", "U", "C", "Z", "7")


@dataclass(frozen=True)
class Template:
    template_id: int
    name: str
    labels: np.ndarray  # (rows, cols) int, -1 empty, else bar/region index
    sides: tuple[int, ...] = ()


def _parse_templates(text: str) -> list[Template]:
    blocks: list[tuple[list[str], list[str]]] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            blocks.append((line.strip("[]").split(), []))
        else:
            blocks[-1][1].append(line)
    templates = []
    for head, rows in blocks:
        chars = sorted({ch for row in rows for ch in row if ch != "."})
        index = {ch: i for i, ch in enumerate(chars)}
        # asset rows are written top-down; grid row 0 is the bottom
        labels = np.array([[index.get(ch, -1) for ch in row] for row in reversed(rows)], dtype=np.int64)
        sides = tuple(index[ch] for ch in head[2]) if len(head) > 2 else ()
        templates.append(Template(int(head[0]), head[1], labels, sides))
    return sorted(templates, key=lambda t: t.template_id)


def _load_assets(name: str) -> list[Template]:
    return _parse_templates(resources.files("hetgrasp.assets").joinpath(name).read_text())


LETTER_TEMPLATES = _load_assets("letters.txt")
BOTTLE_TEMPLATES = _load_assets("bottles.txt")


@dataclass(frozen=True)
class LetterConfig:
    total_mass: float = 1.0
    cube_size_range: tuple[float, float] = (0.027, 0.033)
    density_range: tuple[float, float] = (0.1, 10.0)  # log-uniform per bar
    friction_range: tuple[float, float] = (0.2, 1.0)


@dataclass(frozen=True)
class BottleConfig:
    total_mass: float = 1.0
    base_cell_size: float = 0.012
    scale_range: tuple[float, float] = (0.8, 1.2)
    scale_levels: int = 7
    density_ratio_range: tuple[float, float] = (1.5, 4.0)
    light_friction_range: tuple[float, float] = (0.2, 0.7)
    friction_gap: float = 0.1
    friction_max: float = 1.0


@dataclass(frozen=True, eq=False)
class HeterogeneousObject:
    category_id: int
    instance_id: int
    cell_size: float
    occupied: np.ndarray
    height: np.ndarray
    mass: np.ndarray
    friction: np.ndarray
    region: np.ndarray
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    provenance_seed: int = 0
    kind: str = "letters"
    flipped: bool = False
    scale: float = 1.0
    heavy_region: int = -1

    @property
    def key(self) -> str:
        prefix = "b" if self.kind == "bottles" else "c"
        return f"{prefix}{self.category_id}-i{self.instance_id:06d}"

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupied.shape

    @property
    def width(self) -> float:
        return self.occupied.shape[1] * self.cell_size

    @property
    def depth(self) -> float:
        return self.occupied.shape[0] * self.cell_size

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def cell_index(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.occupied)

    def cell_centers(self) -> np.ndarray:
        """Object-frame centers of the occupied cells, shape (n, 2)."""
        rows, cols = self.cell_index()
        return np.stack([(cols + 0.5) * self.cell_size, (rows + 0.5) * self.cell_size], axis=1)

    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.pose[2]), np.sin(self.pose[2])
        return np.array([[c, -s], [s, c]])

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.rotation().T + np.array(self.pose[:2])

    def to_object(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=float) - np.array(self.pose[:2])) @ self.rotation()

    def with_pose(self, x: float, y: float, theta: float) -> "HeterogeneousObject":
        return replace(self, pose=(float(x), float(y), float(theta)))

    def centered_pose(self, theta: float = 0.0) -> "HeterogeneousObject":
        """Place the grid's bounding-box center at the world origin."""
        c, s = np.cos(theta), np.sin(theta)
        hx, hy = self.width / 2, self.depth / 2
        return self.with_pose(-(c * hx - s * hy), -(s * hx + c * hy), theta)

    def height_at(self, pts: np.ndarray) -> np.ndarray:
        """Surface height at world points (0 off the object)."""
        local = self.to_object(np.atleast_2d(pts))
        col = np.floor(local[:, 0] / self.cell_size).astype(np.int64)
        row = np.floor(local[:, 1] / self.cell_size).astype(np.int64)
        rows, cols = self.shape
        inside = (row >= 0) & (row < rows) & (col >= 0) & (col < cols)
        out = np.zeros(len(local))
        out[inside] = self.height[row[inside], col[inside]]
        return out

    def grid_equal(self, other: "HeterogeneousObject") -> bool:
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("occupied", "height", "mass", "friction", "region")
        ) and self.cell_size == other.cell_size


def _check_template(templates: Sequence[Template], template_id: int, family: str) -> Template:
    if not isinstance(template_id, (int, np.integer)) or not 0 <= template_id < len(templates):
        raise InvalidArgumentError(
            f"unknown {family} template id {template_id!r}; expected 0..{len(templates) - 1}"
        )
    return templates[int(template_id)]


def generate_letter_object(
    category: int, seed: int, config: LetterConfig = LetterConfig(), instance_id: int = 0
) -> HeterogeneousObject:
    template = _check_template(LETTER_TEMPLATES, category, "letters")
    rng = np.random.default_rng(seed)
    labels = template.labels
    n_bars = int(labels.max()) + 1
    cell_size = float(rng.uniform(*config.cube_size_range))
    lo, hi = np.log(config.density_range[0]), np.log(config.density_range[1])
    bar_density = np.exp(rng.uniform(lo, hi, size=n_bars))
    bar_friction = rng.uniform(*config.friction_range, size=n_bars)

    occupied = labels >= 0
    weight = np.where(occupied, bar_density[np.maximum(labels, 0)], 0.0)
    mass = weight * (config.total_mass / weight.sum())
    friction = np.where(occupied, bar_friction[np.maximum(labels, 0)], 0.0)
    height = np.where(occupied, cell_size, 0.0)
    obj = HeterogeneousObject(
        category_id=int(category),
        instance_id=int(instance_id),
        cell_size=cell_size,
        occupied=occupied,
        height=height,
        mass=mass,
        friction=friction,
        region=labels.copy(),
        provenance_seed=int(seed),
        kind="letters",
    )
    return obj.centered_pose()


def _dome_heights(occupied: np.ndarray, cell_size: float) -> np.ndarray:
    height = np.zeros(occupied.shape)
    for c in range(occupied.shape[1]):
        rows = np.nonzero(occupied[:, c])[0]
        if len(rows) == 0:
            continue
        r0, r1 = rows.min(), rows.max()
        depth_in = np.minimum(rows - r0, r1 - rows)
        height[rows, c] = cell_size * (1.0 + 0.5 * depth_in)
    return height


def bottle_variants(config: BottleConfig = BottleConfig()) -> list[tuple[int, float, int]]:
    """All (template_id, scale, heavy_region) combinations of the Bottles grid.

    Two-sided templates contribute ``scale_levels * 2`` variants, one-sided
    templates ``scale_levels``; with the default grid this gives 84.
    """
    scales = np.linspace(*config.scale_range, config.scale_levels)
    return [
        (t.template_id, float(s), side)
        for t in BOTTLE_TEMPLATES
        for side in t.sides
        for s in scales
    ]


def _bottle(
    template: Template, scale: float, heavy: int, seed: int, rng: np.random.Generator, config: BottleConfig,
    instance_id: int,
) -> HeterogeneousObject:
    labels = template.labels
    occupied = labels >= 0
    cell_size = config.base_cell_size * scale
    ratio = float(rng.uniform(*config.density_ratio_range))
    mu_light = float(rng.uniform(*config.light_friction_range))
    mu_heavy = float(rng.uniform(mu_light + config.friction_gap, config.friction_max))
    density = np.where(labels == heavy, ratio, 1.0)
    weight = np.where(occupied, density, 0.0)
    mass = weight * (config.total_mass / weight.sum())
    friction = np.where(occupied, np.where(labels == heavy, mu_heavy, mu_light), 0.0)
    obj = HeterogeneousObject(
        category_id=template.template_id,
        instance_id=int(instance_id),
        cell_size=cell_size,
        occupied=occupied,
        height=_dome_heights(occupied, cell_size),
        mass=mass,
        friction=friction,
        region=labels.copy(),
        provenance_seed=int(seed),
        kind="bottles",
        scale=float(scale),
        heavy_region=int(heavy),
    )
    return obj.centered_pose()


def generate_bottle_object(
    template_id: int, seed: int, config: BottleConfig = BottleConfig(), instance_id: int = 0
) -> HeterogeneousObject:
    template = _check_template(BOTTLE_TEMPLATES, template_id, "bottles")
    rng = np.random.default_rng(seed)
    scale = float(rng.uniform(*config.scale_range))
    heavy = int(template.sides[rng.integers(len(template.sides))])
    return _bottle(template, scale, heavy, seed, rng, config, instance_id)


def generate_bottle_variant(
    variant: int, seed: int, config: BottleConfig = BottleConfig()
) -> HeterogeneousObject:
    variants = bottle_variants(config)
    if not 0 <= variant < len(variants):
        raise InvalidArgumentError(f"bottle variant {variant} out of range 0..{len(variants) - 1}")
    template_id, scale, heavy = variants[variant]
    rng = np.random.default_rng(seed)
    return _bottle(BOTTLE_TEMPLATES[template_id], scale, heavy, seed, rng, config, variant)


def flip_object(obj: HeterogeneousObject, instance_id: int | None = None) -> HeterogeneousObject:
    """Mirror the grid about the vertical axis (x -> width - x in the object frame)."""
    return replace(
        obj,
        occupied=obj.occupied[:, ::-1].copy(),
        height=obj.height[:, ::-1].copy(),
        mass=obj.mass[:, ::-1].copy(),
        friction=obj.friction[:, ::-1].copy(),
        region=obj.region[:, ::-1].copy(),
        instance_id=obj.instance_id ^ FLIP_BIT if instance_id is None else int(instance_id),
        flipped=not obj.flipped,
    )


# ---------------------------------------------------------------------------
# serialization


def object_to_text(obj: HeterogeneousObject, meta: dict | None = None) -> str:
    header = {
        "category": obj.category_id,
        "instance": obj.instance_id,
        "kind": obj.kind,
        "cell_size": repr(float(obj.cell_size)),
        "rows": obj.shape[0],
        "cols": obj.shape[1],
        "pose": [repr(float(v)) for v in obj.pose],
        "seed": str(obj.provenance_seed),
        "flipped": obj.flipped,
        "scale": repr(float(obj.scale)),
        "heavy_region": obj.heavy_region,
    }
    if meta:
        header["meta"] = meta
    lines = [f"{OBJECT_FORMAT} v{OBJECT_FORMAT_VERSION}", json.dumps(header, sort_keys=True)]
    rows, cols = obj.cell_index()
    for r, c in zip(rows, cols):
        lines.append(
            f"{r} {c} {obj.region[r, c]} {float(obj.height[r, c])!r} {float(obj.mass[r, c])!r} "
            f"{float(obj.friction[r, c])!r}"
        )
    return "\n".join(lines) + "\n"


def object_from_text(text: str) -> HeterogeneousObject:
    lines = text.splitlines()
    magic = f"{OBJECT_FORMAT} v{OBJECT_FORMAT_VERSION}"
    if not lines or lines[0].strip() != magic:
        raise InvalidArgumentError(f"not a {magic} file")
    h = json.loads(lines[1])
    shape = (int(h["rows"]), int(h["cols"]))
    occupied = np.zeros(shape, dtype=bool)
    region = np.full(shape, -1, dtype=np.int64)
    height, mass, friction = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    for line in lines[2:]:
        if not line.strip():
            continue
        r, c, g, hv, m, mu = line.split()
        r, c = int(r), int(c)
        occupied[r, c] = True
        region[r, c] = int(g)
        height[r, c], mass[r, c], friction[r, c] = float(hv), float(m), float(mu)
    return HeterogeneousObject(
        category_id=int(h["category"]),
        instance_id=int(h["instance"]),
        cell_size=float(h["cell_size"]),
        occupied=occupied,
        height=height,
        mass=mass,
        friction=friction,
        region=region,
        pose=tuple(float(v) for v in h["pose"]),
        provenance_seed=int(h["seed"]),
        kind=h["kind"],
        flipped=bool(h["flipped"]),
        scale=float(h["scale"]),
        heavy_region=int(h["heavy_region"]),
    )


def save_object(obj: HeterogeneousObject, path: str | Path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(object_to_text(obj, meta))
    return path


def load_object(path: str | Path) -> HeterogeneousObject:
    return object_from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetSplit:
    train_categories: list[int]
    intra_category_holdout: list[str]
    cross_categories: list[int]
    _holdout: set[str] = field(default_factory=set, repr=False)

    def __post_init__(self):
        self._holdout = set(self.intra_category_holdout)

    def split_of(self, obj: HeterogeneousObject) -> str:
        if obj.category_id in self.cross_categories:
            return "cross"
        if obj.key in self._holdout:
            return "intra"
        return "train"


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


def _flip_draw(seed: int, category: int, instance: int) -> float:
    state = np.random.SeedSequence([int(seed), int(category), int(instance), 1]).generate_state(1, np.uint64)
    return float(state[0]) / 2.0**64


def make_letter_instance(
    category: int, instance: int, dataset_seed: int, flip_fraction: float = 0.5,
    config: LetterConfig = LetterConfig(),
) -> HeterogeneousObject:
    seed = derive_seed(dataset_seed, category, instance)
    obj = generate_letter_object(category, seed, config, instance_id=instance)
    if _flip_draw(dataset_seed, category, instance) < flip_fraction:
        obj = flip_object(obj, instance_id=instance)
    return obj


def build_dataset(
    categories: Iterable[int] = range(10),
    instances_per_category: int = 210,
    seed: int = 0,
    cross_categories: Sequence[int] = (8, 9),
    holdout_fraction: float = 0.05,
    flip_fraction: float = 0.5,
    config: LetterConfig = LetterConfig(),
    canonical: bool = True,
) -> tuple[list[HeterogeneousObject], DatasetSplit]:
    """Build the Letters dataset and its train / intra-holdout / cross split.

    With ``canonical=True`` the build must use all 10 categories and
    200..250 instances each. ``canonical=False`` lifts those limits for
    small experiments but still requires at least one instance.
    """
    categories = [int(c) for c in categories]
    if instances_per_category < 1:
        raise ConfigError(f"instances_per_category must be >= 1, got {instances_per_category}")
    if canonical:
        if len(set(categories)) < 10:
            raise ConfigError(f"the canonical Letters build needs 10 categories, got {len(set(categories))}")
        if not 200 <= instances_per_category <= 250:
            raise ConfigError(f"instances_per_category must be in 200..250, got {instances_per_category}")
    cross = [c for c in categories if c in set(cross_categories)]
    train = [c for c in categories if c not in set(cross)]

    objects = [
        make_letter_instance(c, i, seed, flip_fraction, config)
        for c in categories
        for i in range(instances_per_category)
    ]
    train_keys = [o.key for o in objects if o.category_id in train]
    n_hold = int(round(holdout_fraction * len(train_keys)))
    rng = np.random.default_rng(derive_seed(seed, 0xD5))
    picked = sorted(rng.choice(len(train_keys), size=n_hold, replace=False).tolist())
    split = DatasetSplit(train, [train_keys[i] for i in picked], cross)
    return objects, split


MANIFEST_COLUMNS = ("key", "category", "instance", "split", "seed", "flipped", "kind", "file")


def write_manifest(path: str | Path, objects: Sequence[HeterogeneousObject], split: DatasetSplit,
                   files: Sequence[str] | None = None, header: str | None = None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for i, o in enumerate(objects):
            w.writerow([o.key, o.category_id, o.instance_id, split.split_of(o), o.provenance_seed,
                        int(o.flipped), o.kind, files[i] if files else ""])
    return path


def read_manifest(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        return [dict(r) for r in rows]

