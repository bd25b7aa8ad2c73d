"""Path characteristic function distances and their training.

The empirical squared distance between measures ``mu`` and ``nu`` for maps
``M_1..M_K`` is ``(1/K) sum_i ||D_mu(M_i) - D_nu(M_i)||_HS^2`` where
``D_mu(M)`` is the mean development over the paths of ``mu``.  The matrix
class of the maps selects the variant: tridiagonal antisymmetric (RPCFD),
antisymmetric (OPCFD) or skew-Hermitian (PCFD).
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .development import SampledPath, time_augment
from .matrix_core import LinearMapFamily, MatrixClass, SkewExpm, expm

log = logging.getLogger(__name__)

NAMES = {
    MatrixClass.TRIDIAG_ANTISYM: "RPCFD",
    MatrixClass.ANTISYM: "OPCFD",
    MatrixClass.SKEW_HERMITIAN: "PCFD",
}
CLASS_BY_NAME = {v: k for k, v in NAMES.items()}

#: paths per chunk when developing large measures
CHUNK = 128


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class DistanceSpec:
    matrix_class: MatrixClass = MatrixClass.TRIDIAG_ANTISYM
    K: int = 8
    k: int = 5
    d: int = 4

    def __post_init__(self):
        object.__setattr__(self, "matrix_class", MatrixClass(self.matrix_class))
        if self.K < 1 or self.k < 2 or self.d < 1:
            raise ValueError(f"invalid distance spec K={self.K}, k={self.k}, d={self.d}")

    @classmethod
    def named(cls, name: str, **kwargs) -> DistanceSpec:
        return cls(CLASS_BY_NAME[name.upper()], **kwargs)

    @property
    def name(self) -> str:
        return NAMES[self.matrix_class]

    @property
    def params_per_map(self) -> int:
        return self.d * self.matrix_class.params_per_image(self.k)

    @property
    def n_params(self) -> int:
        return self.K * self.params_per_map

    def basis(self) -> np.ndarray:
        """Basis matrices ``B_p`` with ``image = sum_p theta_p B_p`` for one image."""
        return _basis(self.matrix_class, self.k)

    def to_dict(self) -> dict:
        return {"statistic": self.name, "K": self.K, "k": self.k, "d": self.d}

    @classmethod
    def from_dict(cls, data: dict) -> DistanceSpec:
        return cls.named(data["statistic"], K=int(data["K"]), k=int(data["k"]), d=int(data["d"]))


def _basis(cls: MatrixClass, k: int) -> np.ndarray:
    mats = []
    if cls is MatrixClass.TRIDIAG_ANTISYM:
        pairs = [(a, a + 1) for a in range(k - 1)]
    else:
        pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
    for a, b in pairs:
        m = np.zeros((k, k), dtype=cls.dtype)
        m[a, b], m[b, a] = 1.0, -1.0
        mats.append(m)
    if cls is MatrixClass.SKEW_HERMITIAN:
        for a, b in pairs:
            m = np.zeros((k, k), dtype=complex)
            m[a, b] = m[b, a] = 1j
            mats.append(m)
        for a in range(k):
            m = np.zeros((k, k), dtype=complex)
            m[a, a] = 1j
            mats.append(m)
    return np.array(mats)


@dataclass(frozen=True)
class MapParameters:
    """Flat real parameter vector for ``K`` maps ``R^d -> class``."""

    spec: DistanceSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.spec.n_params:
            raise ValueError(f"expected {self.spec.n_params} parameters, got {values.size}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def initial(cls, spec: DistanceSpec, seed: int = 0) -> MapParameters:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(7,))))
        return cls(spec, rng.normal(scale=1.0 / math.sqrt(spec.k), size=spec.n_params))

    def images(self) -> np.ndarray:
        """Images of all maps, shape ``(K, d, k, k)``."""
        s = self.spec
        theta = self.values.reshape(s.K, s.d, -1)
        return np.einsum("Kdp,pab->Kdab", theta, s.basis())

    def families(self) -> list[LinearMapFamily]:
        return [LinearMapFamily(img, self.spec.matrix_class) for img in self.images()]

    @classmethod
    def from_images(cls, spec: DistanceSpec, images: np.ndarray) -> MapParameters:
        basis = spec.basis()
        # basis matrices are orthogonal; coefficient = <B_p, M> / <B_p, B_p>
        norms = np.sum(np.abs(basis) ** 2, axis=(1, 2))
        coeffs = np.real(np.einsum("pab,Kdab->Kdp", np.conj(basis), np.asarray(images))) / norms
        return cls(spec, coeffs.ravel())

    @classmethod
    def from_families(cls, spec: DistanceSpec, families: Sequence[LinearMapFamily]) -> MapParameters:
        return cls.from_images(spec, np.stack([f.images for f in families]))


class EmpiricalMeasure:
    """Uniform measure on a list of paths, stored as zero-padded increments.

    Padding with zero increments leaves developments unchanged, so paths
    with different numbers of segments share one array.
    """

    def __init__(self, paths: Sequence[SampledPath] | np.ndarray, augment: bool = False):
        if isinstance(paths, np.ndarray):
            inc = np.asarray(paths, dtype=float)
            if inc.ndim != 3:
                raise ValueError("increment array must have shape (paths, segments, d)")
        else:
            paths = list(paths)
            if not paths:
                raise ValueError("empirical measure needs at least one path")
            if augment:
                paths = [time_augment(p) for p in paths]
            dims = {p.d for p in paths}
            if len(dims) != 1:
                raise ValueError(f"paths have mixed dimensions {sorted(dims)}")
            n_seg = max(p.n_segments for p in paths)
            inc = np.zeros((len(paths), n_seg, dims.pop()))
            for i, p in enumerate(paths):
                inc[i, : p.n_segments] = p.increments()
        if inc.shape[0] == 0:
            raise ValueError("empirical measure needs at least one path")
        inc.setflags(write=False)
        self.increments = inc

    @classmethod
    def from_values(cls, values: np.ndarray, times: np.ndarray | None = None,
                    augment: bool = True) -> EmpiricalMeasure:
        """From sample values ``(paths, samples, d)`` on a shared time grid."""
        values = np.asarray(values, dtype=float)
        inc = np.diff(values, axis=1)
        if augment:
            n = values.shape[1]
            t = np.linspace(0, 1, n) if times is None else np.asarray(times, dtype=float)
            tau = (t - t[0]) / (t[-1] - t[0])
            dtau = np.broadcast_to(np.diff(tau)[None, :, None], inc.shape[:2] + (1,))
            inc = np.concatenate([dtau, inc], axis=2)
        return cls(inc)

    def __len__(self) -> int:
        return self.increments.shape[0]

    @property
    def d(self) -> int:
        return self.increments.shape[2]

    def subset(self, idx) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.increments[np.asarray(idx)])


def _check(mu: EmpiricalMeasure, nu: EmpiricalMeasure, spec: DistanceSpec) -> None:
    for name, m in (("mu", mu), ("nu", nu)):
        if len(m) == 0:
            raise ValueError(f"{name} is empty")
        if m.d != spec.d:
            raise ValueError(f"{name} has dimension {m.d}, spec expects {spec.d} "
                             "(paths must be time-augmented)")


def development_features(measure: EmpiricalMeasure | np.ndarray, images: np.ndarray) -> np.ndarray:
    """Per-path developments, shape ``(paths, K, k, k)``."""
    inc = measure.increments if isinstance(measure, EmpiricalMeasure) else np.asarray(measure)
    out = []
    for start in range(0, inc.shape[0], CHUNK):
        chunk = inc[start:start + CHUNK]
        gens = np.einsum("pld,Kdab->plKab", chunk, images)
        factors = expm(gens)
        acc = factors[:, 0]
        for j in range(1, factors.shape[1]):
            acc = acc @ factors[:, j]
        out.append(acc)
    return np.concatenate(out)


def expected_development(mu: EmpiricalMeasure | Sequence[SampledPath], family: LinearMapFamily) -> np.ndarray:
    if not isinstance(mu, EmpiricalMeasure):
        mu = EmpiricalMeasure(mu)
    if len(mu) == 0:
        raise ValueError("empty measure")
    if mu.d != family.d:
        raise ValueError(f"dimension mismatch: measure d={mu.d}, map d={family.d}")
    return development_features(mu, family.images[None])[:, 0].mean(axis=0)


def distance_from_features(fx: np.ndarray, fy: np.ndarray) -> float:
    """``(1/K) sum_i ||mean fx_i - mean fy_i||^2`` for feature stacks ``(paths, K, k, k)``."""
    diff = fx.mean(axis=0) - fy.mean(axis=0)
    return float(np.sum(np.abs(diff) ** 2) / fx.shape[1])


def empirical_distance_sq(mu: EmpiricalMeasure, nu: EmpiricalMeasure, params: MapParameters,
                          spec: DistanceSpec | None = None) -> float:
    spec = spec or params.spec
    if spec != params.spec:
        raise ValueError("spec does not match parameters")
    _check(mu, nu, spec)
    images = params.images()
    return distance_from_features(development_features(mu, images), development_features(nu, images))


def _forward_chunks(inc: np.ndarray, images: np.ndarray):
    """Yield ``(chunk, exps, prefix)``; ``prefix[:, j]`` is the product of factors before ``j``."""
    for start in range(0, inc.shape[0], CHUNK):
        chunk = inc[start:start + CHUNK]
        exps = SkewExpm(np.einsum("pld,Kdab->plKab", chunk, images))
        factors = exps.value
        prefix = np.empty_like(factors)
        prefix[:, 0] = np.eye(images.shape[-1])
        for j in range(1, factors.shape[1]):
            prefix[:, j] = prefix[:, j - 1] @ factors[:, j - 1]
        yield chunk, exps, prefix


def _backward_chunk(chunk, exps: SkewExpm, prefix, cot: np.ndarray, out: np.ndarray) -> None:
    """Add ``d/d images`` of ``Re <cot, sum of chunk developments>`` to ``out``."""
    factors = exps.value
    suffix = np.empty_like(factors)
    suffix[:, -1] = np.eye(factors.shape[-1])
    for j in range(factors.shape[1] - 2, -1, -1):
        suffix[:, j] = factors[:, j + 1] @ suffix[:, j + 1]
    # cotangent of factor j: prefix_j^* G suffix_j^*
    c = np.conj(np.swapaxes(prefix, -1, -2)) @ cot @ np.conj(np.swapaxes(suffix, -1, -2))
    out += np.einsum("pld,plKab->Kdab", chunk, exps.adjoint_frechet(c))


def distance_gradient(mu: EmpiricalMeasure, nu: EmpiricalMeasure, params: MapParameters,
                      spec: DistanceSpec | None = None, return_value: bool = False,
                      unbiased: bool = False):
    """Exact gradient of :func:`empirical_distance_sq` with respect to the parameters.

    With ``unbiased=True`` the objective is the U-statistic version of the
    squared distance instead.  Developments are unitary, so ``||D||_HS^2 = k``
    for every path and the correction only reweights the two mean terms.
    """
    spec = spec or params.spec
    if spec != params.spec:
        raise ValueError("spec does not match parameters")
    _check(mu, nu, spec)
    if unbiased and min(len(mu), len(nu)) < 2:
        raise ValueError("the unbiased objective needs at least two paths per measure")
    images = params.images()
    saved, means = [], []
    for measure in (mu, nu):
        parts = list(_forward_chunks(measure.increments, images))
        dev = sum((p[2][:, -1] @ p[1].value[:, -1]).sum(axis=0) for p in parts) / len(measure)
        saved.append(parts)
        means.append(dev)
    diff = means[0] - means[1]
    if unbiased:
        wx, wy = (len(m) / (len(m) - 1.0) for m in (mu, nu))
        k = spec.k
        value = (wx * np.sum(np.abs(means[0]) ** 2) - spec.K * k / (len(mu) - 1)
                 + wy * np.sum(np.abs(means[1]) ** 2) - spec.K * k / (len(nu) - 1)
                 - 2 * np.sum(np.real(np.conj(means[0]) * means[1])))
        value = float(value / spec.K)
        cots = (wx * means[0] - means[1], wy * means[1] - means[0])
    else:
        value = float(np.sum(np.abs(diff) ** 2) / spec.K)
        cots = (diff, -diff)
    gimg = np.zeros(images.shape, dtype=np.result_type(images, float))
    for parts, measure, c in zip(saved, (mu, nu), cots):
        cot = 2.0 * c / (spec.K * len(measure))
        for part in parts:
            _backward_chunk(*part, cot, gimg)
    basis = spec.basis()
    grad = np.real(np.einsum("Kdab,pab->Kdp", gimg, np.conj(basis))).ravel()
    return (grad, value) if return_value else grad


# training ----------------------------------------------------------------


@dataclass
class OptConfig:
    iterations: int = 500
    lr: float | None = None
    batch_size: int = 1024
    betas: tuple[float, float] = (0.0, 0.9)
    eps: float = 1e-8
    seed: int = 0
    unbiased: bool = False

    def learning_rate(self, spec: DistanceSpec) -> float:
        if self.lr is not None:
            return self.lr
        return 0.5 if spec.matrix_class is MatrixClass.TRIDIAG_ANTISYM else 0.05


@dataclass
class TrainResult:
    params: MapParameters
    loss_trace: list[float] = field(default_factory=list)
    seconds: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "spec": self.params.spec.to_dict(),
            "params": self.params.values.tolist(),
            "seed": self.seed,
            "iterations": len(self.loss_trace),
            "loss_trace": list(self.loss_trace),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> TrainResult:
        spec = DistanceSpec.from_dict(data["spec"])
        return cls(MapParameters(spec, data["params"]), list(data.get("loss_trace", [])),
                   seed=int(data.get("seed", 0)))


def train(mu: EmpiricalMeasure, nu: EmpiricalMeasure, spec: DistanceSpec, opt: OptConfig | None = None,
          init: MapParameters | None = None) -> TrainResult:
    """Stochastic gradient ascent with Adam on the empirical squared distance.

    Each iteration draws ``batch_size`` paths (without replacement, capped at
    the measure size) from each measure.  The loss trace records the
    mini-batch distance at the parameters used for that step.
    """
    opt = opt or OptConfig()
    _check(mu, nu, spec)
    params = init or MapParameters.initial(spec, opt.seed)
    theta = params.values.copy()
    lr = opt.learning_rate(spec)
    beta1, beta2 = opt.betas
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(opt.seed, spawn_key=(11,))))
    trace = []
    started = time.perf_counter()
    for it in range(1, opt.iterations + 1):
        bx = mu if len(mu) <= opt.batch_size else mu.subset(rng.choice(len(mu), opt.batch_size, replace=False))
        by = nu if len(nu) <= opt.batch_size else nu.subset(rng.choice(len(nu), opt.batch_size, replace=False))
        grad, value = distance_gradient(bx, by, MapParameters(spec, theta), spec, return_value=True,
                                         unbiased=opt.unbiased)
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it} (|theta|_max={np.max(np.abs(theta)):.3g})")
        trace.append(value)
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad**2
        m_hat = m / (1 - beta1**it)
        v_hat = v / (1 - beta2**it)
        theta = theta + lr * m_hat / (np.sqrt(v_hat) + opt.eps)
        if it % 50 == 0:
            log.debug("%s iteration %d: batch distance %.6g", spec.name, it, value)
    return TrainResult(MapParameters(spec, theta), trace, time.perf_counter() - started, opt.seed)
