"""Recovering a truncated tensor from its matrix-valued generating function.

For a word ``W`` of length ``n`` we build sparse antisymmetric maps
``M^W_1..M^W_d``, substitute ``M_theta = sum_i theta_i M^W_i`` into the
generating function as a first-order jet, and read ``X^W`` off the
``(1, n+1)`` entry of the coefficient of ``prod_i theta_i^{r(i)}``.

A generating-function *oracle* is any callable taking ``d`` ring elements
(``k x k`` arrays or :class:`JetMatrix` values) and returning one ring
element of the same kind; see :func:`tensor_oracle` and :func:`bm_oracle`.
"""

from __future__ import annotations

import enum
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .jets import JetMatrix, jet_space
from .matrix_core import MatrixClass, elementary, expm
from .tensor_core import TruncatedTensor, Word, all_words, word_stats

Oracle = Callable[[Sequence], object]

#: nested finite differences beyond this order are swamped by rounding
MAX_FD_ORDER = 4


class Variant(enum.Enum):
    ANTISYM = "antisym"
    SKEW_HERMITIAN_ALT = "skew-hermitian-alt"


class RecoveryError(ValueError):
    pass


class OrderTooSmallError(RecoveryError):
    """The matrix order ``k`` is below ``|W| + 1``."""


@dataclass(frozen=True)
class RecoveryPlan:
    """The maps ``M^W_i`` for one word; ``maps[i-1, j-1] = M^W_i(e_j)``."""

    word: Word
    d: int
    k: int
    maps: np.ndarray
    c_w: int
    variant: Variant

    @property
    def n(self) -> int:
        return len(self.word)

    @property
    def matrix_class(self) -> MatrixClass:
        if self.variant is Variant.ANTISYM:
            return MatrixClass.TRIDIAG_ANTISYM
        return MatrixClass.SKEW_HERMITIAN

    def jet_images(self, caps: tuple[int, ...] | None = None) -> list[JetMatrix]:
        """``M_theta(e_j) = sum_i theta_i M^W_i(e_j)`` as degree-one jets."""
        space = jet_space(self.d, self.n, caps)
        return [JetMatrix.linear(space, self.maps[:, j]) for j in range(self.d)]

    def numeric_images(self, theta: Sequence[float]) -> list[np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        return [np.tensordot(theta, self.maps[:, j], axes=1) for j in range(self.d)]


def build_plan(word: Sequence[int], d: int, k: int | None = None,
               variant: Variant | str = Variant.ANTISYM) -> RecoveryPlan:
    variant = Variant(variant)
    stats = word_stats(word, d)
    n = len(stats.word)
    if k is None:
        k = n + 1
    if k < n + 1:
        raise OrderTooSmallError(f"matrix order k={k} too small for a word of length {n} (need >= {n + 1})")
    dtype = float if variant is Variant.ANTISYM else complex
    maps = np.zeros((d, d, k, k), dtype=dtype)
    for i in range(1, d + 1):
        for p in stats.positions[i - 1]:
            block = elementary(k, p, p + 1) - elementary(k, p + 1, p)
            if variant is Variant.SKEW_HERMITIAN_ALT:
                block = block + 1j * elementary(k, p, p)
            maps[i - 1, i - 1] += block
    return RecoveryPlan(stats.word, d, k, maps, stats.c_w, variant)


def bracket(plan: RecoveryPlan, i_word: Sequence[int], w_bar: Sequence[int]) -> np.ndarray:
    """``M^W_{i_1}(e_{wbar_1}) ... M^W_{i_n}(e_{wbar_n})``."""
    if not (len(i_word) == len(w_bar) == plan.n):
        raise ValueError(f"words must have length {plan.n}")
    out = np.eye(plan.k, dtype=plan.maps.dtype)
    for i, w in zip(i_word, w_bar):
        out = out @ plan.maps[i - 1, w - 1]
    return out


# oracles -----------------------------------------------------------------


def _one_like(x):
    if isinstance(x, JetMatrix):
        return JetMatrix.constant(x.space, np.eye(x.k))
    return np.eye(np.shape(x)[-1])


def canonical_extension(images: Sequence, x: TruncatedTensor):
    """``sum_W x^W images[w1] ... images[wn]`` in any ring with ``@`` and ``+``.

    Horner scheme over the word tree, skipping subtrees whose coefficients
    all vanish.
    """
    if len(images) != x.d:
        raise ValueError(f"expected {x.d} images, got {len(images)}")
    one = _one_like(images[0])
    # live[n][idx]: some coefficient at or below node idx is nonzero
    live = [None] * (x.depth + 1)
    live[x.depth] = x.level(x.depth) != 0
    for n in range(x.depth - 1, -1, -1):
        live[n] = (x.level(n) != 0) | np.any(live[n + 1], axis=-1)

    def node(n: int, idx: tuple[int, ...]):
        acc = one * x.level(n)[idx].item()
        if n < x.depth:
            for j in range(x.d):
                child = idx + (j,)
                if live[n + 1][child]:
                    acc = acc + images[j] @ node(n + 1, child)
        return acc

    return node(0, ())


def tensor_oracle(x: TruncatedTensor) -> Oracle:
    """Generating function of a known truncated tensor."""

    def phi(images):
        return canonical_extension(images, x)

    phi.d = x.d
    return phi


def _ring_exp(a):
    if isinstance(a, JetMatrix):
        return a.exp()
    return expm(a)


def bm_oracle(d: int, horizon: float) -> Oracle:
    """Generating function of the Brownian expected signature on ``[0, horizon]``:
    ``exp((horizon / 2) sum_i M(e_i)^2)``."""

    def phi(images):
        if len(images) != d:
            raise ValueError(f"expected {d} images, got {len(images)}")
        acc = images[0] @ images[0]
        for m in images[1:]:
            acc = acc + m @ m
        return _ring_exp(acc * (0.5 * horizon))

    phi.d = d
    return phi


def development_oracle(increments: np.ndarray) -> Oracle:
    """Generating function of a polyline's signature: its development
    ``prod_j exp(sum_i dx_j^i M(e_i))`` over the segment increments ``dx_j``."""
    increments = np.atleast_2d(np.asarray(increments, dtype=float))

    def phi(images):
        if len(images) != increments.shape[1]:
            raise ValueError(f"expected {increments.shape[1]} images, got {len(images)}")
        acc = None
        for dx in increments:
            gen = images[0] * dx[0]
            for m, c in zip(images[1:], dx[1:]):
                gen = gen + m * c
            factor = _ring_exp(gen)
            acc = factor if acc is None else acc @ factor
        return acc

    phi.d = increments.shape[1]
    return phi


def _as_oracle(source) -> tuple[Oracle, int | None]:
    if isinstance(source, TruncatedTensor):
        return tensor_oracle(source), source.d
    if callable(source):
        return source, getattr(source, "d", None)
    raise TypeError("source must be a TruncatedTensor or a generating-function oracle")


# recovery ----------------------------------------------------------------


def jet_generating_function(source, plan: RecoveryPlan, caps: tuple[int, ...] | None = None) -> JetMatrix:
    """``Phi(M_theta)`` as an exact jet of total degree ``|W|``."""
    oracle, d = _as_oracle(source)
    if d is not None and d != plan.d:
        raise ValueError(f"dimension mismatch: oracle d={d}, plan d={plan.d}")
    if isinstance(source, TruncatedTensor) and source.depth < plan.n:
        raise RecoveryError(f"tensor depth {source.depth} < word length {plan.n}")
    try:
        out = oracle(plan.jet_images(caps))
    except RecoveryError:
        raise
    except Exception as exc:
        raise RecoveryError(f"oracle evaluation failed for word {plan.word}: {exc}") from exc
    if not isinstance(out, JetMatrix):
        raise RecoveryError("oracle did not return a jet for jet-valued input")
    return out


def monomial_coefficient(jet: JetMatrix, plan: RecoveryPlan) -> np.ndarray:
    """Coefficient matrix of ``prod_i theta_i^{r(i)}``."""
    stats = word_stats(plan.word, plan.d)
    return jet.coefficient(stats.multiplicities)


def mixed_partial(jet: JetMatrix, plan: RecoveryPlan) -> np.ndarray:
    """``d^n Phi(M_theta) / d theta^W`` at zero: ``C_W`` times the monomial coefficient."""
    return plan.c_w * monomial_coefficient(jet, plan)


def recover_coefficient(source, word: Sequence[int], d: int | None = None, k: int | None = None,
                        variant: Variant | str = Variant.ANTISYM) -> float:
    """``X^W``, the ``(1, n+1)`` entry of the monomial coefficient of ``Phi(M^W_theta)``."""
    oracle, od = _as_oracle(source)
    d = d if d is not None else od
    if d is None:
        raise ValueError("alphabet size d is required for a bare oracle")
    plan = build_plan(word, d, k, variant)
    stats = word_stats(plan.word, d)
    # truncating each theta_i at degree r(i) keeps the target monomial exact
    jet = jet_generating_function(source, plan, caps=stats.multiplicities)
    value = monomial_coefficient(jet, plan)[0, plan.n]
    return float(np.real(value))


def recover_tensor(source, d: int | None = None, depth: int | None = None, k: int | None = None,
                   variant: Variant | str = Variant.ANTISYM, threads: int = 1) -> TruncatedTensor:
    """Recover every coefficient up to ``depth``; ``k`` defaults to ``|W| + 1`` per word."""
    oracle, od = _as_oracle(source)
    d = d if d is not None else od
    if depth is None:
        if not isinstance(source, TruncatedTensor):
            raise ValueError("depth is required for a bare oracle")
        depth = source.depth
    if d is None:
        raise ValueError("alphabet size d is required for a bare oracle")
    if k is not None and k < depth + 1:
        raise OrderTooSmallError(f"matrix order k={k} too small for depth {depth} (need >= {depth + 1})")
    word_list = list(all_words(d, depth))

    def one(word):
        return recover_coefficient(oracle, word, d, k, variant)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = list(pool.map(one, word_list))
    else:
        values = [one(w) for w in word_list]
    return TruncatedTensor.from_words(d, depth, dict(zip(word_list, values)))


def finite_difference_derivative(source, plan: RecoveryPlan, h: float = 1e-3) -> np.ndarray:
    """Nested central differences for ``d^n Phi(M_theta) / d theta^W`` at zero.

    Independent of the jet path: only numeric evaluations of the oracle.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if plan.n > MAX_FD_ORDER:
        raise ValueError(f"finite differences limited to words of length <= {MAX_FD_ORDER}")
    oracle, _ = _as_oracle(source)
    acc = np.zeros((plan.k, plan.k), dtype=complex)
    for signs in itertools.product((1, -1), repeat=plan.n):
        theta = np.zeros(plan.d)
        for s, w in zip(signs, plan.word):
            theta[w - 1] += s * h
        acc += np.prod(signs) * np.asarray(oracle(plan.numeric_images(theta)))
    acc /= (2 * h) ** plan.n
    return acc.real if np.allclose(acc.imag, 0) else acc


@dataclass
class DiagnosticRow:
    word: Word
    c_w: int
    k: int
    value: float
    fd_value: float | None
    abs_err: float | None


def recovery_diagnostics(source, d: int, depth: int, k: int | None = None,
                         variant: Variant | str = Variant.ANTISYM, reference: TruncatedTensor | None = None,
                         h: float = 1e-3) -> tuple[TruncatedTensor, list[DiagnosticRow]]:
    """Recover all coefficients and report per-word checks.

    ``fd_value`` is the finite-difference estimate of the same coefficient
    (words up to length four); ``abs_err`` compares against ``reference``
    when given, otherwise against ``fd_value``.
    """
    oracle, _ = _as_oracle(source)
    rows = []
    for word in all_words(d, depth):
        plan = build_plan(word, d, k, variant)
        value = recover_coefficient(oracle, word, d, k, variant)
        fd_value = None
        if plan.n <= MAX_FD_ORDER:
            fd_value = float(np.real(finite_difference_derivative(oracle, plan, h)[0, plan.n])) / plan.c_w
        if reference is not None:
            err = abs(value - reference[word])
        elif fd_value is not None:
            err = abs(value - fd_value)
        else:
            err = None
        rows.append(DiagnosticRow(plan.word, plan.c_w, plan.k, value, fd_value, err))
    tensor = TruncatedTensor.from_words(d, depth, {r.word: r.value for r in rows})
    return tensor, rows
