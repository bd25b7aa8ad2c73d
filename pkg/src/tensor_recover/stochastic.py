"""Seeded Brownian / fractional Brownian sample paths and the Brownian expected signature.

Randomness: path ``i`` of stream ``s`` under master seed ``seed`` draws from
``Generator(Philox(SeedSequence(seed, spawn_key=(s, i))))``.  Each path owns
its counter-based stream, so paths can be generated in any order or in
parallel with identical results.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .development import SampledPath
from .tensor_core import TruncatedTensor, tensor_exp


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FbmConfig:
    hurst: float = 0.5
    dim: int = 3
    steps: int = 50
    horizon: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.hurst < 1:
            raise ValueError(f"Hurst parameter must lie in (0, 1), got {self.hurst}")
        if self.steps < 2:
            raise ValueError("at least two time steps are required")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.dim < 1:
            raise ValueError("dimension must be positive")


def path_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream, index))))


@functools.lru_cache(maxsize=64)
def fbm_cholesky(hurst: float, steps: int, horizon: float) -> np.ndarray:
    """Lower Cholesky factor of ``R(s, t) = (s^2h + t^2h - |s - t|^2h) / 2`` on the grid ``t_1..t_L``."""
    t = np.linspace(0.0, horizon, steps + 1)[1:]
    s, u = np.meshgrid(t, t, indexing="ij")
    two_h = 2.0 * hurst
    cov = 0.5 * (s**two_h + u**two_h - np.abs(s - u) ** two_h)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SimulationError(
            f"fBM covariance not positive definite (h={hurst}, steps={steps}, horizon={horizon}, "
            f"min grid spacing {horizon / steps:.3g})") from exc
    chol.setflags(write=False)
    return chol


def simulate_fbm_array(cfg: FbmConfig, count: int, stream: int = 0, start: int = 0) -> np.ndarray:
    """Sample values of shape ``(count, steps + 1, dim)``; every path starts at 0."""
    chol = fbm_cholesky(cfg.hurst, cfg.steps, cfg.horizon)
    out = np.zeros((count, cfg.steps + 1, cfg.dim))
    for i in range(count):
        z = path_rng(cfg.seed, stream, start + i).standard_normal((cfg.steps, cfg.dim))
        out[i, 1:] = chol @ z
    return out


def simulate_fbm(cfg: FbmConfig, count: int, stream: int = 0, start: int = 0) -> list[SampledPath]:
    times = np.linspace(0.0, cfg.horizon, cfg.steps + 1)
    return [SampledPath(times, v) for v in simulate_fbm_array(cfg, count, stream, start)]


def bm_expected_signature(d: int, horizon: float, depth: int) -> TruncatedTensor:
    """``exp((horizon / 2) sum_i e_i (x) e_i)`` truncated at ``depth``."""
    levels = [np.zeros(()), np.zeros(d), 0.5 * horizon * np.eye(d)]
    gen = TruncatedTensor(d, levels).truncate(max(depth, 2))
    return tensor_exp(gen, max(depth, 2)).truncate(depth)
