"""Permutation two-sample tests and power / Type-I experiments.

Randomness: experiment ``e`` of a test seeded with ``seed`` draws its
samples from ``SeedSequence(seed, spawn_key=(e, 0))`` and permutation ``j``
from ``SeedSequence(seed, spawn_key=(e, j + 1))``, so the experiment loop can
run on any number of threads with identical results.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import jsonschema
import numpy as np

from .distances import (DistanceSpec, EmpiricalMeasure, MapParameters, OptConfig, TrainResult,
                        development_features, distance_from_features, train)
from .stochastic import FbmConfig, simulate_fbm_array

log = logging.getLogger(__name__)

Statistic = Callable[[object, object], float]


class ExperimentError(RuntimeError):
    pass


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _subseed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


@dataclass(frozen=True)
class PermTestConfig:
    alpha: float = 0.05
    N: int = 10
    M: int = 500
    m: int = 200
    n: int = 200
    h0: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("N", "M", "m", "n"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    @property
    def rank(self) -> int:
        """One-based nearest rank of the ``1 - alpha`` quantile among ``M`` values."""
        return max(1, math.ceil((1 - self.alpha) * self.M - 1e-9))


@dataclass
class TestReport:
    ratio: float
    statistics: list[float]
    thresholds: list[float]
    seconds: float
    h0: bool = False
    experiment_seconds: list[float] = field(default_factory=list)

    __test__ = False  # not a pytest class

    @property
    def label(self) -> str:
        return "type1" if self.h0 else "power"

    @property
    def rejections(self) -> int:
        return sum(t > q for t, q in zip(self.statistics, self.thresholds))

    def to_dict(self) -> dict:
        return {
            self.label: self.ratio,
            "statistics": self.statistics,
            "thresholds": self.thresholds,
            "seconds": self.seconds,
        }


def _take(pool, idx: np.ndarray):
    if isinstance(pool, np.ndarray):
        return pool[idx]
    if isinstance(pool, EmpiricalMeasure):
        return pool.subset(idx)
    return [pool[i] for i in idx]


def _concat(x, y):
    if isinstance(x, np.ndarray):
        return np.concatenate([x, y])
    if isinstance(x, EmpiricalMeasure):
        return EmpiricalMeasure(np.concatenate([x.increments, y.increments]))
    return list(x) + list(y)


def _one_experiment(e: int, x_pool, y_pool, statistic: Statistic, cfg: PermTestConfig):
    started = time.perf_counter()
    rng = _rng(cfg.seed, e, 0)
    x = _take(x_pool, rng.choice(len(x_pool), cfg.m, replace=False))
    y = _take(y_pool, rng.choice(len(y_pool), cfg.n, replace=False))
    try:
        t_obs = float(statistic(x, y))
        z = _concat(x, y)
        permuted = np.empty(cfg.M)
        for j in range(cfg.M):
            sigma = _rng(cfg.seed, e, j + 1).permutation(cfg.m + cfg.n)
            permuted[j] = statistic(_take(z, sigma[:cfg.m]), _take(z, sigma[cfg.m:]))
    except Exception as exc:
        raise ExperimentError(f"statistic failed in experiment {e}: {exc}") from exc
    threshold = float(np.sort(permuted)[cfg.rank - 1])
    return t_obs, threshold, time.perf_counter() - started


def permutation_test(x_samples, y_samples, statistic: Statistic, cfg: PermTestConfig,
                     threads: int = 1) -> TestReport:
    """Repeat a permutation test ``N`` times on fresh draws from two pools.

    Each experiment draws ``m`` and ``n`` samples without replacement, then
    rejects iff the observed statistic strictly exceeds the nearest-rank
    ``1 - alpha`` quantile of ``M`` permuted statistics.  Pools may be lists,
    arrays indexed along the first axis, or :class:`EmpiricalMeasure`.
    """
    if len(x_samples) < cfg.m or len(y_samples) < cfg.n:
        raise ValueError(f"pools of sizes {len(x_samples)}, {len(y_samples)} cannot supply "
                         f"m={cfg.m}, n={cfg.n} samples without replacement")
    started = time.perf_counter()

    def run(e):
        return _one_experiment(e, x_samples, y_samples, statistic, cfg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, range(cfg.N)))
    else:
        results = [run(e) for e in range(cfg.N)]
    stats = [r[0] for r in results]
    thresholds = [r[1] for r in results]
    rejections = sum(t > q for t, q in zip(stats, thresholds))
    return TestReport(rejections / cfg.N, stats, thresholds, time.perf_counter() - started, cfg.h0,
                      [r[2] for r in results])


class DevelopmentStatistic:
    """Empirical squared distance with frozen maps.

    Calling it on two measures (or path lists) evaluates the distance.  For
    permutation tests it is much cheaper to map the pools through
    :meth:`features` once and pass the feature arrays; calling the statistic
    on feature arrays then only averages.
    """

    def __init__(self, params: MapParameters):
        self.params = params
        self._images = params.images()

    def features(self, measure) -> np.ndarray:
        if not isinstance(measure, EmpiricalMeasure):
            measure = EmpiricalMeasure(measure, augment=True)
        return development_features(measure, self._images)

    def __call__(self, x, y) -> float:
        if not isinstance(x, np.ndarray):
            x = self.features(x)
        if not isinstance(y, np.ndarray):
            y = self.features(y)
        return distance_from_features(x, y)


# experiments -------------------------------------------------------------

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["simulate", "train", "test"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "simulate": {
            "type": "object",
            "required": ["pool_size"],
            "additionalProperties": False,
            "properties": {
                "pool_size": {"type": "integer", "minimum": 1},
                "train_pool_size": {"type": "integer", "minimum": 1},
                "dim": {"type": "integer", "minimum": 1},
                "steps": {"type": "integer", "minimum": 2},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "null_hurst": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "statistics": {"type": "array", "minItems": 1,
                               "items": {"enum": ["RPCFD", "OPCFD", "PCFD"]}},
                "K": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 2, "maximum": 64},
                "iterations": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 2},
                "lr": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "unbiased": {"type": "boolean"},
            },
        },
        "test": {
            "type": "object",
            "required": ["h_list"],
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "N": {"type": "integer", "minimum": 1},
                "M": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 1},
                "h_list": {"type": "array", "minItems": 1,
                           "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
            },
        },
    },
}


class ConfigError(ValueError):
    """Schema violations; ``errors`` holds ``(json_pointer, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def validate_config(config: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError([(_pointer(e.absolute_path), e.message) for e in errors])
    sim, test = config["simulate"], config["test"]
    pool = sim["pool_size"]
    for key in ("m", "n"):
        if test.get(key, 200) > pool:
            raise ConfigError([(f"/test/{key}", f"{test.get(key, 200)} exceeds pool_size {pool}")])


def load_config(path: str | Path) -> dict:
    try:
        config = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([("/", f"invalid JSON: {exc}")]) from exc
    validate_config(config)
    return config


@dataclass
class ExperimentRow:
    h: float
    statistic: str
    power: float | None
    type1: float | None
    mean_T: float
    train_seconds: float
    test_seconds: float


@dataclass
class ExperimentResult:
    rows: list[ExperimentRow]
    trained: list[dict]
    timings: list[tuple[str, float, str, float]]

    def row(self, h: float, statistic: str = "RPCFD") -> ExperimentRow:
        for r in self.rows:
            if r.statistic == statistic and math.isclose(r.h, h):
                return r
        raise KeyError((h, statistic))


POWER_COLUMNS = ["h", "statistic", "power", "type1", "mean_T", "train_seconds", "test_seconds"]


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_reports(result: ExperimentResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "power.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POWER_COLUMNS)
        for r in result.rows:
            w.writerow([repr(r.h), r.statistic, _fmt(r.power), _fmt(r.type1), _fmt(r.mean_T),
                        f"{r.train_seconds:.3f}", f"{r.test_seconds:.3f}"])
    (out / "params.json").write_text(json.dumps(result.trained, indent=1))
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "h", "statistic", "seconds"])
        for stage, h, stat, sec in result.timings:
            w.writerow([stage, repr(h), stat, f"{sec:.3f}"])


def run_experiment(config: dict, out_dir: str | Path | None = None, seed: int | None = None,
                   threads: int = 1) -> ExperimentResult:
    """Simulate pools, train each statistic per ``h`` and estimate power and Type-I error.

    For every ``h`` the statistic is trained on a BM pool against an fBM(h)
    pool, frozen, and tested on fresh pools.  The Type-I column comes from
    testing the same frozen statistic on two independent BM pools; when
    ``h`` equals the null Hurst index the alternative coincides with the
    null and only ``type1`` is reported.
    """
    validate_config(config)
    seed = config.get("seed", 0) if seed is None else seed
    sim, tr, te = config["simulate"], config.get("train", {}), config["test"]
    pool = sim["pool_size"]
    train_pool = sim.get("train_pool_size", pool)
    null_h = sim.get("null_hurst", 0.5)
    grid = {"dim": sim.get("dim", 3), "steps": sim.get("steps", 50), "horizon": sim.get("horizon", 1.0)}
    names = tr.get("statistics", ["RPCFD"])
    opt = OptConfig(iterations=tr.get("iterations", 500), lr=tr.get("lr"), batch_size=tr.get("batch_size", 1024),
                    seed=seed, unbiased=tr.get("unbiased", False))
    base_cfg = dict(alpha=te.get("alpha", 0.05), N=te.get("N", 10), M=te.get("M", 500),
                    m=te.get("m", 200), n=te.get("n", 200))

    timings = []

    def simulate(hurst: float, count: int, stream: int) -> EmpiricalMeasure:
        started = time.perf_counter()
        try:
            values = simulate_fbm_array(FbmConfig(hurst=hurst, seed=seed, **grid), count, stream=stream)
        except Exception as exc:
            raise ExperimentError(f"stage simulate (h={hurst}): {exc}") from exc
        timings.append(("simulate", hurst, "", time.perf_counter() - started))
        return EmpiricalMeasure.from_values(values, np.linspace(0, grid["horizon"], grid["steps"] + 1))

    # streams: 0/1/2 null pools (train, test, second test); 3 + 2i / 4 + 2i for h_list[i]
    null_train = simulate(null_h, train_pool, 0)
    null_test = simulate(null_h, pool, 1)
    null_test2 = simulate(null_h, pool, 2)

    rows, trained = [], []
    for i, h in enumerate(te["h_list"]):
        is_null = math.isclose(h, null_h)
        alt_train = simulate(h, train_pool, 3 + 2 * i)
        alt_test = null_test2 if is_null else simulate(h, pool, 4 + 2 * i)
        for name in names:
            spec = DistanceSpec.named(name, K=tr.get("K", 8), k=tr.get("k", 5), d=grid["dim"] + 1)
            try:
                result = train(null_train, alt_train, spec, opt)
            except Exception as exc:
                raise ExperimentError(f"stage train (h={h}, {name}): {exc}") from exc
            timings.append(("train", h, name, result.seconds))
            trained.append({"h": h, "statistic": name, **result.to_dict()})
            stat = DevelopmentStatistic(result.params)
            started = time.perf_counter()
            try:
                f_null, f_null2 = stat.features(null_test), stat.features(null_test2)
                f_alt = f_null2 if is_null else stat.features(alt_test)
                main = permutation_test(f_null, f_alt, stat,
                                        PermTestConfig(h0=is_null, seed=_subseed(seed, i, 0), **base_cfg), threads)
                type1 = main if is_null else permutation_test(
                    f_null, f_null2, stat, PermTestConfig(h0=True, seed=_subseed(seed, i, 1), **base_cfg), threads)
            except Exception as exc:
                raise ExperimentError(f"stage test (h={h}, {name}): {exc}") from exc
            test_seconds = time.perf_counter() - started
            timings.append(("test", h, name, test_seconds))
            rows.append(ExperimentRow(h, name, None if is_null else main.ratio, type1.ratio,
                                      float(np.mean(main.statistics)), result.seconds, test_seconds))
            log.info("h=%s %s: power=%s type1=%s", h, name, rows[-1].power, rows[-1].type1)
    out = ExperimentResult(rows, trained, timings)
    if out_dir is not None:
        write_reports(out, out_dir)
    return out
