"""Piecewise-linear paths, their signatures and Cartan developments."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .matrix_core import LinearMapFamily, expm
from .tensor_core import TruncatedTensor, tensor_product


class PathFormatError(ValueError):
    """Malformed path file; ``line`` is one-based (the header is line 1)."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class SampledPath:
    """Samples ``values[i] = gamma(times[i])`` of a piecewise-linear path."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or values.ndim != 2 or values.shape[0] != times.size:
            raise ValueError(f"inconsistent shapes: times {times.shape}, values {values.shape}")
        if times.size < 2:
            raise ValueError("a path needs at least two samples")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("path samples must be finite")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, values, t0: float = 0.0, t1: float = 1.0) -> SampledPath:
        values = np.asarray(values, dtype=float)
        return cls(np.linspace(t0, t1, values.shape[0]), values)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n_segments(self) -> int:
        return self.times.size - 1

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def reversed(self) -> SampledPath:
        t = self.times
        return SampledPath(t[0] + t[-1] - t[::-1], self.values[::-1])

    def concat(self, other: SampledPath) -> SampledPath:
        """Concatenation with ``other`` translated to start where ``self`` ends."""
        shift_t = self.times[-1] - other.times[0]
        shift_x = self.values[-1] - other.values[0]
        return SampledPath(
            np.concatenate([self.times, other.times[1:] + shift_t]),
            np.concatenate([self.values, other.values[1:] + shift_x]),
        )


def time_augment(path: SampledPath) -> SampledPath:
    """Prepend the time channel, rescaled to [0, 1], as channel 0."""
    t = path.times
    tau = (t - t[0]) / (t[-1] - t[0])
    return SampledPath(path.times, np.column_stack([tau, path.values]))


def segment_signature(v: np.ndarray, depth: int) -> TruncatedTensor:
    """Signature of a straight segment with increment ``v``: ``v^{(x)n} / n!``."""
    v = np.asarray(v, dtype=float)
    levels = [np.ones(())]
    for n in range(1, depth + 1):
        levels.append(np.multiply.outer(levels[-1], v) / n)
    return TruncatedTensor(v.size, levels)


def signature(path: SampledPath, depth: int) -> TruncatedTensor:
    """Exact truncated signature of the polyline, combined with Chen's identity."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    sig = TruncatedTensor.unit(path.d, depth)
    for v in path.increments():
        sig = tensor_product(sig, segment_signature(v, depth))
    return sig


def extend_map(family: LinearMapFamily | np.ndarray, x: TruncatedTensor) -> np.ndarray:
    """Canonical extension ``sum_W x^W M(e_w1) ... M(e_wn)`` with ``M(1) = I``.

    Evaluated by a Horner scheme over levels, vectorised across words.
    """
    images = family.images if isinstance(family, LinearMapFamily) else np.asarray(family)
    d, k = images.shape[0], images.shape[-1]
    if d != x.d:
        raise ValueError(f"dimension mismatch: map has d={d}, tensor has d={x.d}")
    dtype = np.result_type(images, x.dtype)
    eye = np.eye(k, dtype=dtype)
    acc = x.level(x.depth)[..., None, None] * eye
    for n in range(x.depth - 1, -1, -1):
        # acc has shape (d,)*(n+1) + (k, k); contract the last letter
        acc = x.level(n)[..., None, None] * eye + np.einsum("jab,...jbc->...ac", images, acc)
    return acc


def develop_increments(increments: np.ndarray, images: np.ndarray) -> np.ndarray:
    """Developments of polylines given by their increments.

    ``increments`` has shape ``(..., L, d)`` and ``images`` shape
    ``(K, d, k, k)`` (or ``(d, k, k)``); the result has shape
    ``(..., K, k, k)`` (resp. ``(..., k, k)``).
    """
    images = np.asarray(images)
    single = images.ndim == 3
    if single:
        images = images[None]
    inc = np.asarray(increments, dtype=float)
    if inc.shape[-1] != images.shape[1]:
        raise ValueError(f"dimension mismatch: increments d={inc.shape[-1]}, map d={images.shape[1]}")
    # (..., L, K, k, k)
    gens = np.einsum("...ld,Kdab->...lKab", inc, images)
    factors = expm(gens)
    out = factors[..., 0, :, :, :]
    for j in range(1, factors.shape[-4]):
        out = out @ factors[..., j, :, :, :]
    return out[..., 0, :, :] if single else out


@dataclass(frozen=True)
class DevelopmentResult:
    matrix: np.ndarray

    def group_residual(self) -> float:
        """``||U* U - I||_HS``: zero for unitary / orthogonal results."""
        u = self.matrix
        return float(np.linalg.norm(np.conj(u.T) @ u - np.eye(u.shape[0])))


def develop(path: SampledPath, family: LinearMapFamily) -> DevelopmentResult:
    """Development of the polyline: ordered product of ``expm(M(increment))``."""
    if family.d != path.d:
        raise ValueError(f"dimension mismatch: map d={family.d}, path d={path.d}")
    return DevelopmentResult(develop_increments(path.increments(), family.images))


# file formats ------------------------------------------------------------


def write_path_csv(path: SampledPath, dest: str | Path) -> None:
    with open(dest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i}" for i in range(1, path.d + 1)])
        for t, row in zip(path.times, path.values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_path_csv(src: str | Path) -> SampledPath:
    with open(src, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PathFormatError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    if d < 1 or header != ["t"] + [f"x{i}" for i in range(1, d + 1)]:
        raise PathFormatError(f"expected header t,x1,...,xd, got {','.join(header)}", 1)
    times, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d + 1:
            raise PathFormatError(f"expected {d + 1} fields, got {len(row)}", lineno)
        try:
            nums = [float(c) for c in row]
        except ValueError as exc:
            raise PathFormatError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in nums):
            raise PathFormatError("non-finite value", lineno)
        if times and nums[0] <= times[-1]:
            raise PathFormatError("times must be strictly increasing", lineno)
        times.append(nums[0])
        values.append(nums[1:])
    if len(times) < 2:
        raise PathFormatError("a path needs at least two samples", len(rows))
    return SampledPath(np.array(times), np.array(values))


def write_path_batch(paths: Sequence[SampledPath], directory: str | Path, **meta) -> Path:
    """One CSV per path plus ``index.json`` listing them in order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(paths))))
    files = []
    for i, p in enumerate(paths):
        name = f"path_{i:0{width}d}.csv"
        write_path_csv(p, directory / name)
        files.append(name)
    index = {"count": len(paths), "d": paths[0].d if paths else None, "files": files, **meta}
    (directory / "index.json").write_text(json.dumps(index, indent=2))
    return directory / "index.json"


def read_path_batch(directory: str | Path) -> list[SampledPath]:
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text())
    return [read_path_csv(directory / name) for name in index["files"]]
