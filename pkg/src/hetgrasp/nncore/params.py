"""Named parameter tables, seeded initialisation and the checkpoint format.

Checkpoint layout::

    b"HGCKPT\\x00\\x01"            magic + format version
    uint64 little-endian        length of the JSON header
    JSON header                 {"version", "init_seed", "meta", "tensors": [[name, shape], ...]}
    raw '<f8' payloads          in header order, C-contiguous

Tensor names are written in sorted order, so equal tables give equal bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContractError, MissingArtifactError
from .tensor import Tensor, parameter

CKPT_MAGIC = b"HGCKPT\x00\x01"


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def lecun_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ModelParams:
    """Ordered name -> trainable tensor table."""

    tensors: dict[str, Tensor] = field(default_factory=dict)
    version: str = "1"
    init_seed: int = 0
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = parameter(data)
        self.tensors[name] = t
        return t

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.tensors):
            raise ContractError(f"parameter names differ: {sorted(set(arrays) ^ set(self.tensors))}")
        for k, a in arrays.items():
            if a.shape != self.tensors[k].shape:
                raise ContractError(f"parameter {k!r}: shape {a.shape} != {self.tensors[k].shape}")
            self.tensors[k].data = np.array(a, dtype=np.float64)

    def copy(self) -> "ModelParams":
        out = ModelParams(version=self.version, init_seed=self.init_seed, meta=dict(self.meta))
        for k, t in self.tensors.items():
            out.add(k, t.data.copy())
        return out

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def to_bytes(self) -> bytes:
        names = sorted(self.tensors)
        header = {
            "version": self.version,
            "init_seed": int(self.init_seed),
            "meta": self.meta,
            "tensors": [[k, list(self.tensors[k].shape)] for k in names],
        }
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        parts = [CKPT_MAGIC, struct.pack("<Q", len(hb)), hb]
        parts += [np.ascontiguousarray(self.tensors[k].data, dtype="<f8").tobytes() for k in names]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelParams":
        if blob[:len(CKPT_MAGIC)] != CKPT_MAGIC:
            raise ContractError("not a checkpoint file (bad magic)")
        off = len(CKPT_MAGIC)
        (n,) = struct.unpack("<Q", blob[off:off + 8])
        off += 8
        header = json.loads(blob[off:off + n])
        off += n
        out = cls(version=header["version"], init_seed=header["init_seed"], meta=header["meta"])
        for name, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
            out.add(name, arr.astype(np.float64))
            off += 8 * count
        if off != len(blob):
            raise ContractError(f"checkpoint has {len(blob) - off} trailing bytes")
        return out

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def save_checkpoint(params: ModelParams, path: str | Path) -> str:
    """Write ``params``; returns the sha256 of the file contents."""
    blob = params.to_bytes()
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path: str | Path) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"checkpoint {path} not found (produced by `train`)")
    return ModelParams.from_bytes(path.read_bytes())


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
