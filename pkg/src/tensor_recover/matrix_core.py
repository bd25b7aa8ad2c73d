"""Structured matrices, the matrix exponential and its Frechet derivative.

Matrices are plain numpy arrays; every function accepts a stack of
matrices with arbitrary leading batch dimensions.  Real classes
(tridiagonal antisymmetric, antisymmetric) are kept in float64, the
skew-Hermitian class in complex128.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_ORDER = 64


class MatrixClass(enum.Enum):
    TRIDIAG_ANTISYM = "tridiag-antisym"
    ANTISYM = "antisym"
    SKEW_HERMITIAN = "skew-hermitian"

    @property
    def is_real(self) -> bool:
        return self is not MatrixClass.SKEW_HERMITIAN

    @property
    def dtype(self):
        return np.float64 if self.is_real else np.complex128

    def params_per_image(self, k: int) -> int:
        if self is MatrixClass.TRIDIAG_ANTISYM:
            return k - 1
        if self is MatrixClass.ANTISYM:
            return k * (k - 1) // 2
        return k * k

    def contains(self, m: np.ndarray, atol: float = 1e-12) -> bool:
        return is_in_class(m, self, atol)


def is_skew_hermitian(m: np.ndarray, atol: float = 1e-12) -> bool:
    m = np.asarray(m)
    return bool(np.all(np.abs(m + np.conj(np.swapaxes(m, -1, -2))) <= atol))


def is_antisymmetric(m: np.ndarray, atol: float = 1e-12) -> bool:
    m = np.asarray(m)
    if np.iscomplexobj(m) and np.any(np.abs(m.imag) > atol):
        return False
    return bool(np.all(np.abs(m + np.swapaxes(m, -1, -2)) <= atol))


def is_tridiag_antisym(m: np.ndarray, atol: float = 1e-12) -> bool:
    m = np.asarray(m)
    k = m.shape[-1]
    i, j = np.indices((k, k))
    off_band = np.abs(i - j) != 1
    return is_antisymmetric(m, atol) and bool(np.all(np.abs(m[..., off_band]) <= atol))


def is_in_class(m: np.ndarray, cls: MatrixClass, atol: float = 1e-12) -> bool:
    if cls is MatrixClass.TRIDIAG_ANTISYM:
        return is_tridiag_antisym(m, atol)
    if cls is MatrixClass.ANTISYM:
        return is_antisymmetric(m, atol)
    return is_skew_hermitian(m, atol)


def elementary(k: int, a: int, b: int) -> np.ndarray:
    """``E^a_b``: the ``k x k`` matrix with a one at (one-based) entry ``(a, b)``."""
    if not (1 <= a <= k and 1 <= b <= k):
        raise IndexError(f"elementary({k}, {a}, {b}) out of range")
    if k > MAX_ORDER:
        raise ValueError(f"matrix order {k} exceeds {MAX_ORDER}")
    e = np.zeros((k, k))
    e[a - 1, b - 1] = 1.0
    return e


def hs_norm(m: np.ndarray) -> np.ndarray | float:
    """Hilbert-Schmidt norm ``sqrt(tr(A A*))`` over the last two axes."""
    m = np.asarray(m)
    out = np.sqrt(np.sum(np.abs(m) ** 2, axis=(-2, -1)))
    return float(out) if out.ndim == 0 else out


def hs_dist_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray | float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[-2:] != b.shape[-2:]:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    out = np.sum(np.abs(a - b) ** 2, axis=(-2, -1))
    return float(out) if out.ndim == 0 else out


# matrix exponential ------------------------------------------------------

# Pade coefficients b_0..b_m for degrees 3, 5, 7, 9, 13 and the 1-norm
# thresholds below which no scaling is needed (Higham 2005, double precision).
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}
_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1,
          7: 9.504178996162932e-1, 9: 2.097847961257068e0, 13: 5.371920351148152e0}


def _onenorm(a: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.abs(a).sum(axis=-2).max())


def _pade_uv(a: np.ndarray, m: int):
    b = _PADE[m]
    ident = np.broadcast_to(np.eye(a.shape[-1], dtype=a.dtype), a.shape)
    a2 = a @ a
    if m == 13:
        a4 = a2 @ a2
        a6 = a4 @ a2
        u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
                 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
        v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
             + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
        return u, v
    powers = [ident, a2]
    for _ in range(2, (m + 1) // 2):
        powers.append(powers[-1] @ a2)
    u = a @ sum(b[2 * j + 1] * powers[j] for j in range(len(powers)))
    v = sum(b[2 * j] * powers[j] for j in range(len(powers)))
    return u, v


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Pade approximant.

    The approximant degree and the number of squarings are chosen from the
    largest 1-norm in the batch, so a stack shares one code path.
    """
    a = np.asarray(a)
    if a.dtype.kind not in "fc":
        a = a.astype(float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("expm: non-finite input")
    norm = _onenorm(a)
    for m in (3, 5, 7, 9):
        if norm <= _THETA[m]:
            u, v = _pade_uv(a, m)
            return np.linalg.solve(v - u, v + u)
    s = max(0, int(np.ceil(np.log2(norm / _THETA[13])))) if norm > 0 else 0
    u, v = _pade_uv(a / 2.0**s, 13)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


def expm_frechet(a: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Directional derivative ``L(a, direction)`` of ``expm`` at ``a``.

    Read off the upper-right block of ``expm([[a, E], [0, a]])``.  The
    direction is normalised first so the block norm is governed by ``a``.
    """
    a = np.asarray(a)
    e = np.asarray(direction)
    if a.shape != e.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {e.shape}")
    k = a.shape[-1]
    scale = np.sqrt(np.sum(np.abs(e) ** 2, axis=(-2, -1), keepdims=True))
    safe = np.where(scale > 0, scale, 1.0)
    dtype = np.result_type(a, e, float)
    block = np.zeros(a.shape[:-2] + (2 * k, 2 * k), dtype=dtype)
    block[..., :k, :k] = a
    block[..., k:, k:] = a
    block[..., :k, k:] = e / safe
    return expm(block)[..., :k, k:] * safe


# linear maps R^d -> matrix class -----------------------------------------


@dataclass(frozen=True)
class LinearMapFamily:
    """A linear map ``M: R^d -> g`` stored as its images ``M(e_1..e_d)``.

    ``images`` has shape ``(d, k, k)``.
    """

    images: np.ndarray
    matrix_class: MatrixClass = MatrixClass.SKEW_HERMITIAN

    def __post_init__(self):
        images = np.asarray(self.images)
        if images.ndim != 3 or images.shape[1] != images.shape[2]:
            raise ValueError(f"images must have shape (d, k, k), got {images.shape}")
        if images.shape[1] > MAX_ORDER:
            raise ValueError(f"matrix order exceeds {MAX_ORDER}")
        if not is_in_class(images, self.matrix_class, atol=1e-10):
            raise ValueError(f"images are not in class {self.matrix_class.value}")
        if self.matrix_class.is_real:
            images = images.real.astype(float) if np.iscomplexobj(images) else images.astype(float)
        else:
            images = images.astype(complex)
        images.setflags(write=False)
        object.__setattr__(self, "images", images)

    @property
    def d(self) -> int:
        return self.images.shape[0]

    @property
    def k(self) -> int:
        return self.images.shape[1]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        """``M(v)`` for a vector or a stack of vectors (last axis length ``d``)."""
        return np.tensordot(np.asarray(v), self.images, axes=([-1], [0]))

    def operator_norm_bound(self) -> float:
        """``max_j ||M(e_j)||_op``, bounded above by spectral norms."""
        return float(np.max(np.linalg.norm(self.images, ord=2, axis=(1, 2))))


def matrix_to_json(m: np.ndarray) -> list:
    """Row-major nested lists of ``[re, im]`` pairs."""
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def matrix_from_json(data: list) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def random_in_class(cls: MatrixClass, k: int, rng: np.random.Generator,
                    size: tuple = (), scale: float = 1.0) -> np.ndarray:
    shape = tuple(size) + (k, k)
    g = rng.normal(scale=scale, size=shape)
    if cls is MatrixClass.TRIDIAG_ANTISYM:
        i, j = np.indices((k, k))
        g = np.where(j == i + 1, g, 0.0)
        return g - np.swapaxes(g, -1, -2)
    if cls is MatrixClass.ANTISYM:
        return np.triu(g, 1) - np.swapaxes(np.triu(g, 1), -1, -2)
    h = g + 1j * rng.normal(scale=scale, size=shape)
    return 0.5 * (h - np.conj(np.swapaxes(h, -1, -2)))


def random_family(cls: MatrixClass, d: int, k: int, rng: np.random.Generator,
                  scale: float = 1.0) -> LinearMapFamily:
    return LinearMapFamily(random_in_class(cls, k, rng, size=(d,), scale=scale), cls)


def as_matrix_stack(mats: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(m) for m in mats])


def expm_frechet_pair(a: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(expm(a), L(a, e))`` computed together with ``k x k`` operations only.

    Differentiates the scaled Pade approximant and the squaring phase
    (Al-Mohy and Higham, 2009).  Agrees with :func:`expm_frechet`, which
    stays the reference implementation.
    """
    a = np.asarray(a)
    e = np.asarray(e)
    if a.shape != e.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {e.shape}")
    dtype = np.result_type(a, e, float)
    a = a.astype(dtype, copy=False)
    e = e.astype(dtype, copy=False)
    ident = np.broadcast_to(np.eye(a.shape[-1], dtype=dtype), a.shape)
    norm = _onenorm(a)
    s = 0
    for m in (3, 5, 7, 9, 13):
        if norm <= _THETA[m]:
            break
    if norm > _THETA[13]:
        s = int(np.ceil(np.log2(norm / _THETA[13])))
        a = a / 2.0**s
        e = e / 2.0**s
    b = _PADE[m]
    a2 = a @ a
    m2 = a @ e + e @ a
    if m == 13:
        a4 = a2 @ a2
        m4 = a2 @ m2 + m2 @ a2
        a6 = a4 @ a2
        m6 = a4 @ m2 + m4 @ a2
        w1 = b[13] * a6 + b[11] * a4 + b[9] * a2
        w2 = b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident
        z1 = b[12] * a6 + b[10] * a4 + b[8] * a2
        z2 = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
        w = a6 @ w1 + w2
        u = a @ w
        v = a6 @ z1 + z2
        lw1 = b[13] * m6 + b[11] * m4 + b[9] * m2
        lw2 = b[7] * m6 + b[5] * m4 + b[3] * m2
        lz1 = b[12] * m6 + b[10] * m4 + b[8] * m2
        lz2 = b[6] * m6 + b[4] * m4 + b[2] * m2
        lw = a6 @ lw1 + m6 @ w1 + lw2
        lu = a @ lw + e @ w
        lv = a6 @ lz1 + m6 @ z1 + lz2
    else:
        powers, dpowers = [ident, a2], [np.zeros_like(a), m2]
        for _ in range(2, (m + 1) // 2):
            powers.append(powers[-1] @ a2)
            dpowers.append(dpowers[-1] @ a2 + powers[-2] @ m2)
        w = sum(b[2 * j + 1] * powers[j] for j in range(len(powers)))
        lw = sum(b[2 * j + 1] * dpowers[j] for j in range(1, len(powers)))
        u = a @ w
        v = sum(b[2 * j] * powers[j] for j in range(len(powers)))
        lu = a @ lw + e @ w
        lv = sum(b[2 * j] * dpowers[j] for j in range(1, len(powers)))
    q = v - u
    r = np.linalg.solve(q, v + u)
    lr = np.linalg.solve(q, lu + lv + (lu - lv) @ r)
    for _ in range(s):
        lr = r @ lr + lr @ r
        r = r @ r
    return r, lr


class SkewExpm:
    """``expm`` of a stack of skew-Hermitian matrices, keeping what the adjoint needs.

    For skew-Hermitian ``a`` the adjoint of ``L(a, .)`` is ``L(-a, .)``.  The
    Pade pieces of ``-a`` follow from those of ``a`` (even powers agree, the
    odd part flips sign), and the Pade denominator of ``-a`` is the adjoint
    of that of ``a``, so :meth:`adjoint_frechet` needs no further solves.
    """

    def __init__(self, a: np.ndarray):
        a = np.asarray(a)
        if a.dtype.kind not in "fc":
            a = a.astype(float)
        if not np.all(np.isfinite(a)):
            raise ValueError("expm: non-finite input")
        norm = _onenorm(a)
        s = 0
        for m in (3, 5, 7, 9, 13):
            if norm <= _THETA[m]:
                break
        if norm > _THETA[13]:
            s = int(np.ceil(np.log2(norm / _THETA[13])))
            a = a / 2.0**s
        b = _PADE[m]
        ident = np.broadcast_to(np.eye(a.shape[-1], dtype=a.dtype), a.shape)
        a2 = a @ a
        if m == 13:
            a4 = a2 @ a2
            a6 = a4 @ a2
            w1 = b[13] * a6 + b[11] * a4 + b[9] * a2
            z1 = b[12] * a6 + b[10] * a4 + b[8] * a2
            w = a6 @ w1 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident
            v = a6 @ z1 + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
            self._even = (a2, a4, a6, w1, z1)
        else:
            powers = [ident, a2]
            for _ in range(2, (m + 1) // 2):
                powers.append(powers[-1] @ a2)
            w = sum(b[2 * j + 1] * powers[j] for j in range(len(powers)))
            v = sum(b[2 * j] * powers[j] for j in range(len(powers)))
            self._even = tuple(powers)
        u = a @ w
        qinv = np.linalg.inv(v - u)
        r = qinv @ (v + u)
        squares = [r]
        for _ in range(s):
            squares.append(squares[-1] @ squares[-1])
        self.m, self.s = m, s
        self._a, self._w, self._qinv = a, w, qinv
        self._squares = squares
        self.value = squares[-1]

    def adjoint_frechet(self, c: np.ndarray) -> np.ndarray:
        """``L(a*, c)``: the cotangent of ``a`` given the cotangent ``c`` of ``expm(a)``."""
        b = _PADE[self.m]
        a = -self._a
        e = np.asarray(c) / 2.0**self.s
        m2 = a @ e + e @ a
        if self.m == 13:
            a2, a4, a6, w1, z1 = self._even
            m4 = a2 @ m2 + m2 @ a2
            m6 = a4 @ m2 + m4 @ a2
            lw = a6 @ (b[13] * m6 + b[11] * m4 + b[9] * m2) + m6 @ w1 + b[7] * m6 + b[5] * m4 + b[3] * m2
            lv = a6 @ (b[12] * m6 + b[10] * m4 + b[8] * m2) + m6 @ z1 + b[6] * m6 + b[4] * m4 + b[2] * m2
        else:
            powers = self._even
            dpowers = [None, m2]
            for j in range(2, len(powers)):
                dpowers.append(dpowers[-1] @ powers[1] + powers[j - 1] @ m2)
            lw = sum(b[2 * j + 1] * dpowers[j] for j in range(1, len(powers)))
            lv = sum(b[2 * j] * dpowers[j] for j in range(1, len(powers)))
        lu = a @ lw + e @ self._w
        # Pade value and denominator inverse at -a are adjoints of those at a
        adj = lambda x: np.conj(np.swapaxes(x, -1, -2))
        lr = adj(self._qinv) @ (lu + lv + (lu - lv) @ adj(self._squares[0]))
        for r in self._squares[:-1]:
            r_neg = adj(r)
            lr = r_neg @ lr + lr @ r_neg
        return lr
