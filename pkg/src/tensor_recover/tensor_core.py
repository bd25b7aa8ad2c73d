"""Words and truncated free tensor algebra arithmetic.

A :class:`TruncatedTensor` stores level ``n`` as a dense array of shape
``(d,) * n`` indexed by zero-based letters, so ``levels[n][w1-1, ..., wn-1]``
is the coefficient of ``e_{w1} (x) ... (x) e_{wn}``.  Flat word indices use a
base-``d`` little-endian encoding of ``letters - 1`` (the first letter is the
least significant digit); this is also the order used for serialization.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

#: upper bound on the number of coefficients in a single level
MAX_LEVEL_SIZE = 1 << 24

Word = tuple[int, ...]


def check_word(word: Sequence[int], d: int) -> Word:
    word = tuple(int(w) for w in word)
    for letter in word:
        if not 1 <= letter <= d:
            raise ValueError(f"letter {letter} outside alphabet 1..{d}")
    return word


def words(d: int, n: int) -> Iterator[Word]:
    """All words of length ``n`` in word-index order."""
    for rev in itertools.product(range(1, d + 1), repeat=n):
        yield rev[::-1]


def all_words(d: int, depth: int) -> Iterator[Word]:
    for n in range(depth + 1):
        yield from words(d, n)


def word_to_index(word: Sequence[int], d: int) -> int:
    index = 0
    for letter in reversed(tuple(word)):
        index = index * d + (letter - 1)
    return index


def index_to_word(index: int, n: int, d: int) -> Word:
    if not 0 <= index < d**n:
        raise ValueError(f"index {index} out of range for level {n}")
    letters = []
    for _ in range(n):
        index, digit = divmod(index, d)
        letters.append(digit + 1)
    return tuple(letters)


@dataclass(frozen=True)
class WordStats:
    """Multiplicities ``r(i)``, positions ``p(i|t)`` and ``C_W = prod r(i)!``.

    ``multiplicities[i - 1]`` is ``r(i)``; ``positions[i - 1]`` lists the
    one-based positions at which letter ``i`` occurs, in increasing order.
    """

    word: Word
    d: int
    multiplicities: tuple[int, ...]
    positions: tuple[tuple[int, ...], ...]

    @property
    def c_w(self) -> int:
        return math.prod(math.factorial(r) for r in self.multiplicities)

    def position(self, letter: int, t: int) -> int:
        return self.positions[letter - 1][t - 1]


def word_stats(word: Sequence[int], d: int) -> WordStats:
    word = check_word(word, d)
    positions: list[list[int]] = [[] for _ in range(d)]
    for pos, letter in enumerate(word, start=1):
        positions[letter - 1].append(pos)
    return WordStats(
        word=word,
        d=d,
        multiplicities=tuple(len(p) for p in positions),
        positions=tuple(tuple(p) for p in positions),
    )


def is_permutation_of(a: Sequence[int], b: Sequence[int]) -> bool:
    return len(a) == len(b) and sorted(a) == sorted(b)


class TruncatedTensor:
    """Element of the free tensor algebra over ``R^d`` truncated at ``depth``."""

    __slots__ = ("d", "depth", "_levels")

    def __init__(self, d: int, levels: Sequence[np.ndarray]):
        if d < 1:
            raise ValueError("dimension must be positive")
        if not levels:
            raise ValueError("at least the scalar level is required")
        arrays = []
        for n, level in enumerate(levels):
            arr = np.array(level)
            if arr.dtype.kind not in "fc":
                arr = arr.astype(float)
            if arr.size != d**n:
                raise ValueError(f"level {n} has {arr.size} entries, expected {d**n}")
            if arr.size > MAX_LEVEL_SIZE:
                raise ValueError(f"level {n} exceeds {MAX_LEVEL_SIZE} coefficients")
            arr = arr.reshape((d,) * n)
            arr.setflags(write=False)
            arrays.append(arr)
        self.d = d
        self.depth = len(arrays) - 1
        self._levels = tuple(arrays)

    # construction ------------------------------------------------------

    @classmethod
    def zeros(cls, d: int, depth: int, dtype=float) -> TruncatedTensor:
        return cls(d, [np.zeros((d,) * n, dtype=dtype) for n in range(depth + 1)])

    @classmethod
    def unit(cls, d: int, depth: int) -> TruncatedTensor:
        levels = [np.zeros((d,) * n) for n in range(depth + 1)]
        levels[0][()] = 1.0
        return cls(d, levels)

    @classmethod
    def from_words(cls, d: int, depth: int, coeffs: dict) -> TruncatedTensor:
        levels = [np.zeros((d,) * n) for n in range(depth + 1)]
        for word, value in coeffs.items():
            word = check_word(word, d)
            if len(word) > depth:
                raise ValueError(f"word {word} longer than depth {depth}")
            levels[len(word)][tuple(w - 1 for w in word)] += value
        return cls(d, levels)

    @classmethod
    def from_vector(cls, v: Sequence[float], depth: int = 1) -> TruncatedTensor:
        """Level-1 tensor with coefficients ``v`` and zero scalar part."""
        v = np.asarray(v, dtype=float)
        t = cls.zeros(v.size, max(depth, 1))
        levels = list(t.levels)
        levels[1] = v
        return cls(v.size, levels)

    # access ------------------------------------------------------------

    @property
    def levels(self) -> tuple[np.ndarray, ...]:
        return self._levels

    def level(self, n: int) -> np.ndarray:
        return self._levels[n]

    def __getitem__(self, word) -> float:
        word = check_word(word, self.d)
        if len(word) > self.depth:
            raise KeyError(f"word {word} longer than depth {self.depth}")
        return self._levels[len(word)][tuple(w - 1 for w in word)].item()

    def flat_level(self, n: int) -> np.ndarray:
        """Level ``n`` as a flat array in word-index order."""
        return self._levels[n].ravel(order="F")

    def nonzero_items(self, tol: float = 0.0) -> Iterator[tuple[Word, float]]:
        for n, level in enumerate(self._levels):
            if n == 0:
                if abs(level.item()) > tol:
                    yield (), level.item()
                continue
            for idx in zip(*np.nonzero(np.abs(level) > tol)):
                yield tuple(int(i) + 1 for i in idx), level[idx].item()

    def truncate(self, depth: int) -> TruncatedTensor:
        if depth > self.depth:
            extra = [np.zeros((self.d,) * n, dtype=self.dtype)
                     for n in range(self.depth + 1, depth + 1)]
            return TruncatedTensor(self.d, list(self._levels) + extra)
        return TruncatedTensor(self.d, self._levels[: depth + 1])

    @property
    def dtype(self):
        return np.result_type(*self._levels)

    def level_norms(self) -> np.ndarray:
        """Projective (l1-based) norm of each level: the l1 sum of coefficients."""
        return np.array([np.abs(level).sum() for level in self._levels])

    # arithmetic --------------------------------------------------------

    def _check(self, other: TruncatedTensor) -> None:
        if not isinstance(other, TruncatedTensor):
            raise TypeError(f"expected TruncatedTensor, got {type(other).__name__}")
        if other.d != self.d:
            raise ValueError(f"dimension mismatch: {self.d} vs {other.d}")

    def __add__(self, other: TruncatedTensor) -> TruncatedTensor:
        self._check(other)
        depth = min(self.depth, other.depth)
        return TruncatedTensor(self.d, [a + b for a, b in zip(self._levels[: depth + 1], other._levels)])

    def __sub__(self, other: TruncatedTensor) -> TruncatedTensor:
        return self + (-1.0) * other

    def __mul__(self, scalar) -> TruncatedTensor:
        return TruncatedTensor(self.d, [scalar * level for level in self._levels])

    __rmul__ = __mul__

    def __neg__(self) -> TruncatedTensor:
        return -1.0 * self

    def __matmul__(self, other: TruncatedTensor) -> TruncatedTensor:
        return tensor_product(self, other)

    def allclose(self, other: TruncatedTensor, atol: float = 1e-12, rtol: float = 0.0) -> bool:
        self._check(other)
        if self.depth != other.depth:
            return False
        return all(np.allclose(a, b, atol=atol, rtol=rtol) for a, b in zip(self._levels, other._levels))

    def max_abs_diff(self, other: TruncatedTensor) -> float:
        self._check(other)
        depth = min(self.depth, other.depth)
        return max(float(np.max(np.abs(a - b))) for a, b in
                   zip(self._levels[: depth + 1], other._levels[: depth + 1]))

    def __repr__(self) -> str:
        return f"TruncatedTensor(d={self.d}, depth={self.depth})"

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        if np.iscomplexobj(self.dtype.type(0)):
            raise TypeError("only real tensors can be serialized")
        return {
            "d": self.d,
            "depth": self.depth,
            "levels": [self.flat_level(n).tolist() for n in range(self.depth + 1)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> TruncatedTensor:
        d, depth = int(data["d"]), int(data["depth"])
        levels = data["levels"]
        if len(levels) != depth + 1:
            raise ValueError(f"expected {depth + 1} levels, got {len(levels)}")
        return cls(d, [np.asarray(lv, dtype=float).reshape((d,) * n, order="F")
                       for n, lv in enumerate(levels)])

    def to_json(self) -> str:
        # repr-based float formatting in json round-trips bit-exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> TruncatedTensor:
        return cls.from_dict(json.loads(text))


def tensor_product(a: TruncatedTensor, b: TruncatedTensor, depth: int | None = None) -> TruncatedTensor:
    """Truncated tensor product: ``(a (x) b)^W = sum over W = UV of a^U b^V``."""
    a._check(b)
    if depth is None:
        depth = min(a.depth, b.depth)
    elif depth > min(a.depth, b.depth):
        raise ValueError("result depth exceeds the depth of an operand")
    levels = []
    for n in range(depth + 1):
        acc = None
        for p in range(n + 1):
            term = np.multiply.outer(a.level(p), b.level(n - p))
            acc = term if acc is None else acc + term
        levels.append(acc)
    return TruncatedTensor(a.d, levels)


def tensor_exp(a: TruncatedTensor, depth: int | None = None) -> TruncatedTensor:
    """``sum_{m <= depth} a^m / m!`` for ``a`` with zero scalar part."""
    if depth is None:
        depth = a.depth
    if a.level(0).item() != 0:
        raise ValueError("tensor_exp requires a zero scalar component")
    a = a.truncate(depth)
    result = TruncatedTensor.unit(a.d, depth)
    # Horner: 1 + a/1 (1 + a/2 (1 + ... ))
    for m in range(depth, 0, -1):
        result = TruncatedTensor.unit(a.d, depth) + tensor_product(a, result) * (1.0 / m)
    return result


def roc_lower_bound(a: TruncatedTensor) -> float:
    """Finite-depth proxy ``1 / max_n ||pi_n(a)||^(1/n)`` for the radius of convergence.

    Heuristic only: the true radius depends on the whole (untruncated) series.
    """
    if a.depth < 2:
        raise ValueError("roc_lower_bound needs depth >= 2")
    norms = a.level_norms()
    growth = max(norms[n] ** (1.0 / n) for n in range(1, a.depth + 1))
    return math.inf if growth == 0 else 1.0 / growth


def random_sparse_tensor(d: int, depth: int, rng: np.random.Generator,
                         density: float = 0.3, scale: float = 1.0) -> TruncatedTensor:
    levels = []
    for n in range(depth + 1):
        vals = rng.normal(scale=scale, size=(d,) * n)
        mask = rng.random(size=(d,) * n) < density
        levels.append(np.where(mask, vals, 0.0))
    return TruncatedTensor(d, levels)
