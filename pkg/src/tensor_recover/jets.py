"""Truncated multivariate polynomials with matrix coefficients.

A :class:`JetMatrix` is ``sum_alpha theta^alpha A_alpha`` with ``A_alpha``
``k x k`` matrices, truncated at total degree ``max_deg`` and optionally at
per-variable degrees ``caps``.  Both truncations are ideals, so products of
truncated jets are exact on the retained monomials.
"""

from __future__ import annotations

import functools
import itertools
import math
from typing import Sequence

import numpy as np


class JetSpace:
    """Monomial basis and product tables shared by jets of one shape."""

    def __init__(self, d: int, max_deg: int, caps: tuple[int, ...] | None = None):
        if caps is not None and len(caps) != d:
            raise ValueError("caps must have one entry per variable")
        self.d = d
        self.max_deg = max_deg
        self.caps = caps
        ranges = [range(min(max_deg, c) + 1) for c in caps] if caps else [range(max_deg + 1)] * d
        monos = [m for m in itertools.product(*ranges) if sum(m) <= max_deg]
        monos.sort(key=lambda m: (sum(m), m))
        self.monomials: tuple[tuple[int, ...], ...] = tuple(monos)
        self.index = {m: i for i, m in enumerate(monos)}
        ia, ib, ic = [], [], []
        for a, ma in enumerate(monos):
            for b, mb in enumerate(monos):
                c = self.index.get(tuple(x + y for x, y in zip(ma, mb)))
                if c is not None:
                    ia.append(a)
                    ib.append(b)
                    ic.append(c)
        self._ia = np.array(ia, dtype=np.intp)
        self._ib = np.array(ib, dtype=np.intp)
        self._ic = np.array(ic, dtype=np.intp)

    def __len__(self) -> int:
        return len(self.monomials)

    def unit_exponent(self, i: int) -> tuple[int, ...]:
        return tuple(int(j == i) for j in range(self.d))


@functools.lru_cache(maxsize=256)
def jet_space(d: int, max_deg: int, caps: tuple[int, ...] | None = None) -> JetSpace:
    return JetSpace(d, max_deg, caps)


class JetMatrix:
    __slots__ = ("space", "coeffs")
    __array_priority__ = 100

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        if coeffs.ndim != 3 or coeffs.shape[0] != len(space) or coeffs.shape[1] != coeffs.shape[2]:
            raise ValueError(f"bad coefficient array shape {coeffs.shape}")
        self.space = space
        self.coeffs = coeffs

    @classmethod
    def zeros(cls, space: JetSpace, k: int, dtype=float) -> JetMatrix:
        return cls(space, np.zeros((len(space), k, k), dtype=dtype))

    @classmethod
    def constant(cls, space: JetSpace, matrix: np.ndarray) -> JetMatrix:
        matrix = np.asarray(matrix)
        out = cls.zeros(space, matrix.shape[-1], dtype=np.result_type(matrix, float))
        out.coeffs[0] = matrix
        return out

    @classmethod
    def linear(cls, space: JetSpace, matrices: Sequence[np.ndarray]) -> JetMatrix:
        """``sum_i theta_i matrices[i]``."""
        matrices = np.asarray(matrices)
        out = cls.zeros(space, matrices.shape[-1], dtype=np.result_type(matrices, float))
        if space.max_deg >= 1:
            for i in range(space.d):
                idx = space.index.get(space.unit_exponent(i))
                if idx is not None:
                    out.coeffs[idx] = matrices[i]
        return out

    @property
    def d(self) -> int:
        return self.space.d

    @property
    def max_deg(self) -> int:
        return self.space.max_deg

    @property
    def k(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def terms(self) -> dict[tuple[int, ...], np.ndarray]:
        """Nonzero coefficients keyed by exponent tuple."""
        nz = np.any(self.coeffs != 0, axis=(1, 2))
        return {self.space.monomials[i]: self.coeffs[i] for i in np.flatnonzero(nz)}

    def coefficient(self, exponent: Sequence[int]) -> np.ndarray:
        idx = self.space.index.get(tuple(exponent))
        if idx is None:
            raise KeyError(f"monomial {tuple(exponent)} is truncated away")
        return self.coeffs[idx]

    def _coerce(self, other) -> JetMatrix:
        if isinstance(other, JetMatrix):
            if other.space is not self.space:
                raise ValueError("jets live in different spaces")
            return other
        if np.isscalar(other):
            return JetMatrix.constant(self.space, other * np.eye(self.k))
        return JetMatrix.constant(self.space, np.asarray(other))

    def __add__(self, other) -> JetMatrix:
        other = self._coerce(other)
        return JetMatrix(self.space, self.coeffs + other.coeffs)

    __radd__ = __add__

    def __sub__(self, other) -> JetMatrix:
        other = self._coerce(other)
        return JetMatrix(self.space, self.coeffs - other.coeffs)

    def __neg__(self) -> JetMatrix:
        return JetMatrix(self.space, -self.coeffs)

    def __mul__(self, scalar) -> JetMatrix:
        if isinstance(scalar, JetMatrix) or np.ndim(scalar) != 0:
            return NotImplemented
        return JetMatrix(self.space, scalar * self.coeffs)

    __rmul__ = __mul__

    def __matmul__(self, other) -> JetMatrix:
        other = self._coerce(other)
        sp = self.space
        nz_a = np.any(self.coeffs != 0, axis=(1, 2))
        nz_b = np.any(other.coeffs != 0, axis=(1, 2))
        keep = nz_a[sp._ia] & nz_b[sp._ib]
        dtype = np.result_type(self.coeffs, other.coeffs)
        out = np.zeros((len(sp), self.k, self.k), dtype=dtype)
        if keep.any():
            prods = self.coeffs[sp._ia[keep]] @ other.coeffs[sp._ib[keep]]
            np.add.at(out, sp._ic[keep], prods)
        return JetMatrix(sp, out)

    def __rmatmul__(self, other) -> JetMatrix:
        return self._coerce(other) @ self

    def exp(self) -> JetMatrix:
        """Exponential of a jet with zero constant term (a finite sum)."""
        if np.any(self.coeffs[0] != 0):
            raise ValueError("jet exponential needs a vanishing constant term")
        one = JetMatrix.constant(self.space, np.eye(self.k, dtype=self.coeffs.dtype))
        result = one
        for m in range(self.max_deg, 0, -1):
            result = one + (self @ result) * (1.0 / m)
        return result

    def evaluate(self, theta: Sequence[float]) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        weights = np.array([math.prod(t**e for t, e in zip(theta, m)) for m in self.space.monomials])
        return np.tensordot(weights, self.coeffs, axes=1)

    def __repr__(self) -> str:
        return f"JetMatrix(d={self.d}, max_deg={self.max_deg}, k={self.k}, nnz={len(self.terms)})"
