"""Analytic planar oracle for parallel-jaw grasps on heterogeneous objects.

A grasp succeeds when the jaws close on the object, friction can carry the
weight, and the frictional torque the two contact patches can resist
exceeds the gravity torque about the grasp axis:

    (a) both jaws touch and the cross-section fits between the open jaws
    (b) 2 * mu * F_N >= m * g
    (c) m * g * d <= kappa * mu * F_N * (l1 + l2)

``mu`` is the plain mean friction of the contacted cells, ``d`` the distance
from the center of mass to the grasp axis and ``l1``, ``l2`` the contact
lengths of the two jaw faces.

Geometry is exact at cell resolution: cells are squares, clipped against the
jaw band and against the compliance slab behind each jaw's first contact.
All functions are pure and operate on batches of grasps where it helps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateObjectError, InvalidArgumentError
from .objgen import HeterogeneousObject

_EPS = 1e-12


@dataclass(frozen=True)
class PhysicsParams:
    clamp_force: float = 40.0
    gravity: float = 9.81
    torque_coeff: float = 0.5
    jaw_face_length: float = 0.03
    max_jaw_opening: float = 0.12
    # finger-pad compliance: object points this far behind the first hit still touch the pad
    contact_depth: float = 0.004

    def __post_init__(self):
        for name in ("clamp_force", "gravity", "torque_coeff", "jaw_face_length", "max_jaw_opening",
                     "contact_depth"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"PhysicsParams.{name} must be > 0, got {getattr(self, name)}")
        if self.torque_coeff > 1:
            raise InvalidArgumentError(f"torque_coeff must lie in (0, 1], got {self.torque_coeff}")


def wrap_angle(angle: float) -> float:
    a = float(np.mod(angle, np.pi))
    return 0.0 if a >= np.pi else a


@dataclass(frozen=True)
class GraspCandidate:
    position: tuple[float, float]
    angle: float
    jaw_opening: float = 0.12
    z: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.angle < np.pi:
            raise InvalidArgumentError(f"grasp angle must lie in [0, pi), got {self.angle}")
        if not self.jaw_opening > 0:
            raise InvalidArgumentError(f"jaw_opening must be > 0, got {self.jaw_opening}")
        if not self.z >= 0:
            raise InvalidArgumentError(f"z must be >= 0, got {self.z}")

    def as_row(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.angle, self.jaw_opening, self.z])

    @classmethod
    def from_row(cls, row) -> "GraspCandidate":
        return cls((float(row[0]), float(row[1])), float(row[2]), float(row[3]), float(row[4]))


def grasps_to_array(grasps) -> np.ndarray:
    """Stack grasps into an (n, 5) array of x, y, angle, jaw_opening, z."""
    if isinstance(grasps, np.ndarray):
        return np.atleast_2d(grasps).astype(float)
    return np.array([g.as_row() for g in grasps], dtype=float).reshape(-1, 5)


@dataclass(frozen=True)
class ContactInfo:
    jaw1_contact_length: float
    jaw2_contact_length: float
    mean_friction: float
    com_offset: float
    both_jaws_touch: bool
    object_fits: bool


def center_of_mass(obj: HeterogeneousObject) -> tuple[float, float, float]:
    """Object-frame center of mass and total mass."""
    if not obj.occupied.any():
        raise DegenerateObjectError("object has no occupied cells")
    rows, cols = obj.cell_index()
    m = obj.mass[rows, cols]
    total = float(m.sum())
    if total <= 0:
        raise DegenerateObjectError("object has zero total mass")
    x = float(((cols + 0.5) * obj.cell_size * m).sum() / total)
    y = float(((rows + 0.5) * obj.cell_size * m).sum() / total)
    return x, y, total


def world_center_of_mass(obj: HeterogeneousObject) -> np.ndarray:
    x, y, _ = center_of_mass(obj)
    return obj.to_world(np.array([[x, y]]))[0]


def mirror_grasp(obj: HeterogeneousObject, grasp: GraspCandidate) -> GraspCandidate:
    """The grasp that corresponds to ``grasp`` on ``flip_object(obj)``."""
    local = obj.to_object(np.array([grasp.position]))[0]
    local[0] = obj.width - local[0]
    pos = obj.to_world(local[None])[0]
    rel = grasp.angle - obj.pose[2]
    angle = wrap_angle(obj.pose[2] + np.pi - rel)
    return GraspCandidate((float(pos[0]), float(pos[1])), angle, grasp.jaw_opening, grasp.z)


def _cell_polygons(obj: HeterogeneousObject) -> np.ndarray:
    """World-frame corners of each occupied cell, (n, 4, 2), counter-clockwise."""
    rows, cols = obj.cell_index()
    s = obj.cell_size
    x0, y0 = cols * s, rows * s
    corners = np.stack(
        [
            np.stack([x0, y0], -1),
            np.stack([x0 + s, y0], -1),
            np.stack([x0 + s, y0 + s], -1),
            np.stack([x0, y0 + s], -1),
        ],
        axis=1,
    )
    return obj.to_world(corners.reshape(-1, 2)).reshape(-1, 4, 2)


def _box_extent(poly: np.ndarray, t_lo, t_hi, s_lo, s_hi):
    """Extents of (convex polygon) ∩ (axis-aligned box) in grasp coordinates.

    ``poly`` is (g, n, 4, 2) with coordinates (t, s); the bounds broadcast
    against (g, 1) and may be infinite. Returns t_min, t_max, s_min, s_max
    and a validity mask, all shaped (g, n). Intersections whose extent is
    zero in either coordinate are reported as invalid.
    """
    g, n = poly.shape[:2]
    t_lo, t_hi, s_lo, s_hi = (np.broadcast_to(np.asarray(b, float).reshape(-1, 1), (g, 1))
                              for b in (t_lo, t_hi, s_lo, s_hi))
    bt_lo, bt_hi = t_lo[..., None], t_hi[..., None]
    bs_lo, bs_hi = s_lo[..., None], s_hi[..., None]

    def inside(pts):
        t, s = pts[..., 0], pts[..., 1]
        return (t >= bt_lo - _EPS) & (t <= bt_hi + _EPS) & (s >= bs_lo - _EPS) & (s <= bs_hi + _EPS)

    cands = [poly]
    masks = [inside(poly)]

    p0 = poly
    p1 = np.roll(poly, -1, axis=2)
    d = p1 - p0
    for axis, bound in ((0, t_lo), (0, t_hi), (1, s_lo), (1, s_hi)):
        line = np.broadcast_to(bound.reshape(g, 1, 1), (g, n, 4))
        denom = d[..., axis]
        ok = np.isfinite(line) & (np.abs(denom) > _EPS)
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = np.where(ok, (line - p0[..., axis]) / np.where(ok, denom, 1.0), np.nan)
        pts = p0 + lam[..., None] * d
        pts[..., axis] = np.where(ok, line, np.nan)
        m = ok & (lam >= -_EPS) & (lam <= 1 + _EPS) & inside(np.nan_to_num(pts, nan=np.inf))
        cands.append(np.nan_to_num(pts))
        masks.append(m)

    corners = np.stack(
        [np.concatenate([t_lo, s_lo], -1), np.concatenate([t_hi, s_lo], -1),
         np.concatenate([t_hi, s_hi], -1), np.concatenate([t_lo, s_hi], -1)], axis=1
    )  # (g, 4, 2)
    finite = np.isfinite(corners).all(-1)  # (g, 4)
    # corner inside a CCW convex polygon: every edge cross product >= 0
    q = np.where(np.isfinite(corners), corners, 0.0)[:, None, :, None, :]  # (g,1,4,1,2)
    rel = q - p0[:, :, None, :, :]  # (g,n,4corners,4edges,2)
    cross = d[:, :, None, :, 0] * rel[..., 1] - d[:, :, None, :, 1] * rel[..., 0]
    in_poly = (cross >= -_EPS).all(-1) & finite[:, None, :]
    cands.append(np.broadcast_to(q[:, :, :, 0, :], (g, n, 4, 2)))
    masks.append(in_poly)

    pts = np.concatenate(cands, axis=2)
    mask = np.concatenate(masks, axis=2)
    t, s = pts[..., 0], pts[..., 1]
    t_min = np.where(mask, t, np.inf).min(-1)
    t_max = np.where(mask, t, -np.inf).max(-1)
    s_min = np.where(mask, s, np.inf).min(-1)
    s_max = np.where(mask, s, -np.inf).max(-1)
    valid = mask.any(-1) & (t_max - t_min > 1e-9) & (s_max - s_min > 1e-9)
    return t_min, t_max, s_min, s_max, valid


@dataclass(frozen=True)
class ContactBatch:
    """Column-wise :class:`ContactInfo` for a batch of grasps."""

    jaw1_contact_length: np.ndarray
    jaw2_contact_length: np.ndarray
    mean_friction: np.ndarray
    com_offset: np.ndarray
    both_jaws_touch: np.ndarray
    object_fits: np.ndarray
    total_mass: float

    def __len__(self):
        return len(self.com_offset)

    def row(self, i: int) -> ContactInfo:
        return ContactInfo(
            float(self.jaw1_contact_length[i]), float(self.jaw2_contact_length[i]),
            float(self.mean_friction[i]), float(self.com_offset[i]),
            bool(self.both_jaws_touch[i]), bool(self.object_fits[i]),
        )


def contact_analysis_batch(obj: HeterogeneousObject, grasps, params: PhysicsParams = PhysicsParams()) -> ContactBatch:
    g = grasps_to_array(grasps)
    n_grasps = len(g)
    com = world_center_of_mass(obj)
    total_mass = obj.total_mass
    rows, cols = obj.cell_index()
    mu_cells = obj.friction[rows, cols]

    pos, angle = g[:, :2], g[:, 2]
    opening = np.minimum(g[:, 3], params.max_jaw_opening)
    u = np.stack([np.cos(angle), np.sin(angle)], -1)
    v = np.stack([-np.sin(angle), np.cos(angle)], -1)

    world = _cell_polygons(obj)  # (n, 4, 2)
    rel = world[None] - pos[:, None, None, :]
    poly = np.stack([(rel * u[:, None, None]).sum(-1), (rel * v[:, None, None]).sum(-1)], -1)

    half = params.jaw_face_length / 2
    inf = np.full(n_grasps, np.inf)
    tmin, tmax, _, _, in_band = _box_extent(poly, -inf, inf, -half, half)
    # some of the object must lie between the open jaws; the compliant wrist
    # then centres the jaws on the whole cross-section along the grasp line
    between = in_band & (tmax > -opening[:, None] / 2) & (tmin < opening[:, None] / 2)
    touch = between.any(-1)
    tau1 = np.where(touch, np.where(in_band, tmax, -np.inf).max(-1), 0.0)
    tau2 = np.where(touch, np.where(in_band, tmin, np.inf).min(-1), 0.0)
    fits = touch & (tau1 - tau2 < opening)

    delta = params.contact_depth
    lengths = []
    contacted = np.zeros((n_grasps, len(rows)), dtype=bool)
    for lo, hi in ((tau1 - delta, tau1), (tau2, tau2 + delta)):
        _, _, smin, smax, hit = _box_extent(poly, lo, hi, -half, half)
        hit &= touch[:, None]
        contacted |= hit
        top = np.where(hit, smax, -np.inf).max(-1)
        bottom = np.where(hit, smin, np.inf).min(-1)
        lengths.append(np.where(hit.any(-1), top - bottom, 0.0))

    n_hit = contacted.sum(-1)
    mean_mu = np.where(n_hit > 0, (contacted * mu_cells).sum(-1) / np.maximum(n_hit, 1), 0.0)
    # both jaw faces are centred on the grasp axis, so the line through their
    # contact midpoints is the grasp axis itself
    com_offset = np.abs(((com - pos) * v).sum(-1))
    return ContactBatch(lengths[0], lengths[1], mean_mu, com_offset, touch, fits, total_mass)


def contact_analysis(obj: HeterogeneousObject, grasp: GraspCandidate, params: PhysicsParams = PhysicsParams()) -> ContactInfo:
    return contact_analysis_batch(obj, [grasp], params).row(0)


def outcome_from_contacts(c: ContactBatch, params: PhysicsParams, clamp_force: float | None = None) -> np.ndarray:
    force = params.clamp_force if clamp_force is None else clamp_force
    weight = c.total_mass * params.gravity
    lift = 2.0 * c.mean_friction * force >= weight
    capacity = params.torque_coeff * c.mean_friction * force * (c.jaw1_contact_length + c.jaw2_contact_length)
    torque = weight * c.com_offset <= capacity
    return (c.both_jaws_touch & c.object_fits & lift & torque).astype(np.int64)


def grasp_outcomes(obj: HeterogeneousObject, grasps, params: PhysicsParams = PhysicsParams()) -> np.ndarray:
    return outcome_from_contacts(contact_analysis_batch(obj, grasps, params), params)


def grasp_outcome(obj: HeterogeneousObject, grasp: GraspCandidate, params: PhysicsParams = PhysicsParams()) -> int:
    """1 if the grasp lifts the object, else 0."""
    return int(grasp_outcomes(obj, [grasp], params)[0])
