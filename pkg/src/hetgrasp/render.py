"""Orthographic top-down depth images and grasp-aligned crops.

Image row ``i`` samples ``y = origin_y + (i + 0.5) * resolution`` and column
``j`` samples ``x = origin_x + (j + 0.5) * resolution`` (rows grow with y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, RenderBoundsError
from .objgen import HeterogeneousObject
from .physics import GraspCandidate, grasps_to_array

PATCH_SIZES = (64, 32)


@dataclass(frozen=True)
class RenderConfig:
    resolution: float = 0.0025
    camera_height: float = 0.70
    image_px: int = 128
    interpolation: str = "bilinear"


@dataclass(frozen=True, eq=False)
class DepthImage:
    pixels: np.ndarray
    resolution: float
    camera_height: float
    origin: tuple[float, float]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class GraspPatch:
    pixels: np.ndarray  # height above table, (size, size)
    grasp_z: float

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


def empty_image(resolution: float = 0.0025, camera_height: float = 0.70, image_px: int = 128,
                origin: tuple[float, float] | None = None) -> DepthImage:
    if not resolution > 0:
        raise InvalidArgumentError(f"resolution must be > 0, got {resolution}")
    if origin is None:
        origin = (-image_px * resolution / 2, -image_px * resolution / 2)
    return DepthImage(np.full((image_px, image_px), float(camera_height)), float(resolution),
                      float(camera_height), (float(origin[0]), float(origin[1])))


def render_depth(obj: HeterogeneousObject | None, resolution: float = 0.0025, camera_height: float = 0.70,
                 image_px: int = 128, origin: tuple[float, float] | None = None) -> DepthImage:
    img = empty_image(resolution, camera_height, image_px, origin)
    if obj is None or not obj.occupied.any():
        return img
    rows, cols = obj.cell_index()
    s = obj.cell_size
    corners = np.concatenate([np.stack([cols + dx, rows + dy], -1) * s for dx in (0, 1) for dy in (0, 1)])
    world = obj.to_world(corners)
    x0, y0 = img.origin
    extent = image_px * resolution
    if (world[:, 0].min() < x0 or world[:, 1].min() < y0
            or world[:, 0].max() > x0 + extent or world[:, 1].max() > y0 + extent):
        raise RenderBoundsError(
            f"object {obj.key} spans x [{world[:, 0].min():.4f}, {world[:, 0].max():.4f}], "
            f"y [{world[:, 1].min():.4f}, {world[:, 1].max():.4f}] outside the image window "
            f"[{x0:.4f}, {x0 + extent:.4f}] x [{y0:.4f}, {y0 + extent:.4f}]"
        )
    centers = (np.arange(image_px) + 0.5) * resolution
    gx, gy = np.meshgrid(x0 + centers, y0 + centers)
    h = obj.height_at(np.stack([gx.ravel(), gy.ravel()], -1)).reshape(image_px, image_px)
    return DepthImage(camera_height - h, img.resolution, img.camera_height, img.origin)


def _sample_heights(img: DepthImage, x: np.ndarray, y: np.ndarray, interpolation: str) -> np.ndarray:
    """Height above table at world points; outside the image reads as 0.

    Heights rather than depths are interpolated so that background stays
    exactly zero.
    """
    fc = (x - img.origin[0]) / img.resolution - 0.5
    fr = (y - img.origin[1]) / img.resolution - 0.5
    H, W = img.pixels.shape
    padded = np.pad(img.camera_height - img.pixels, 1, constant_values=0.0)
    if interpolation == "nearest":
        r = np.clip(np.floor(fr + 0.5).astype(np.int64) + 1, 0, H + 1)
        c = np.clip(np.floor(fc + 0.5).astype(np.int64) + 1, 0, W + 1)
        return padded[r, c]
    if interpolation != "bilinear":
        raise InvalidArgumentError(f"unknown interpolation {interpolation!r}")
    r0 = np.floor(fr)
    c0 = np.floor(fc)
    wr = fr - r0
    wc = fc - c0
    r0 = np.clip(r0.astype(np.int64) + 1, 0, H + 1)
    c0 = np.clip(c0.astype(np.int64) + 1, 0, W + 1)
    r1 = np.clip(r0 + 1, 0, H + 1)
    c1 = np.clip(c0 + 1, 0, W + 1)
    top = padded[r0, c0] * (1 - wc) + padded[r0, c1] * wc
    bottom = padded[r1, c0] * (1 - wc) + padded[r1, c1] * wc
    out = top * (1 - wr) + bottom * wr
    # exact background far away from the image
    far = (fr < -1) | (fc < -1) | (fr > H) | (fc > W)
    return np.where(far, 0.0, out)


def extract_grasp_patches(img: DepthImage, grasps, size: int = 64, interpolation: str = "bilinear") -> np.ndarray:
    """Grasp-aligned crops for many grasps, (n, size, size) heights above table.

    The patch centre pixel ``(size // 2, size // 2)`` sits on the grasp
    point and the grasp axis runs along patch columns.
    """
    if size not in PATCH_SIZES:
        raise InvalidArgumentError(f"patch size must be one of {PATCH_SIZES}, got {size}")
    g = grasps_to_array(grasps)
    offs = (np.arange(size) - size // 2) * img.resolution
    # rotate patch coordinates by +angle, i.e. the image by -angle
    cos, sin = np.cos(g[:, 2])[:, None, None], np.sin(g[:, 2])[:, None, None]
    du = offs[None, None, :]  # along the grasp axis (columns)
    dv = offs[None, :, None]  # perpendicular (rows)
    x = g[:, 0, None, None] + du * cos - dv * sin
    y = g[:, 1, None, None] + du * sin + dv * cos
    return _sample_heights(img, x, y, interpolation)


def extract_grasp_patch(img: DepthImage, grasp: GraspCandidate, size: int = 64,
                        interpolation: str = "bilinear") -> GraspPatch:
    pixels = extract_grasp_patches(img, [grasp], size, interpolation)[0]
    return GraspPatch(pixels, normalize_z(grasp.z, img.camera_height))


def normalize_z(z, camera_height: float):
    return np.asarray(z, dtype=float) / camera_height if np.ndim(z) else float(z) / camera_height


def center_crop(patches: np.ndarray, size: int) -> np.ndarray:
    """Central ``size`` crop of larger patches; keeps the grasp pixel centred."""
    big = patches.shape[-1]
    if size == big:
        return patches
    start = big // 2 - size // 2
    return patches[..., start:start + size, start:start + size]
