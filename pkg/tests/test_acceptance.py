"""Acceptance criteria, one test each, at their stated tolerances.

Every test records a ``criterion N: PASS|FAIL`` line; the lines are repeated
in a terminal summary section at the end of the run.
"""

import itertools
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from tensor_recover.development import SampledPath, develop, extend_map, signature
from tensor_recover.distances import (DistanceSpec, EmpiricalMeasure, MapParameters, OptConfig, distance_gradient,
                                      empirical_distance_sq, train)
from tensor_recover.harness import run_experiment
from tensor_recover.matrix_core import MatrixClass, random_family
from tensor_recover.recovery import bm_oracle, build_plan, recover_tensor
from tensor_recover.stochastic import FbmConfig, simulate_fbm_array
from tensor_recover.tensor_core import all_words, random_sparse_tensor, words

TESTS = Path(__file__).parent


def test_exact_recovery(verdict):
    rng = np.random.default_rng(1)
    started, worst = time.perf_counter(), 0.0
    for i in range(50):
        x = random_sparse_tensor(2 + i % 2, 1 + (i // 2) % 4, rng)
        worst = max(worst, recover_tensor(x).max_abs_diff(x))
    seconds = time.perf_counter() - started
    verdict(1, worst <= 1e-10 and seconds < 30, f"max error {worst:.2e}, {seconds:.1f}s (<= 1e-10, < 30s)")


def _distinct_rearrangements(word):
    return set(itertools.permutations(word))


def test_indicator_property(verdict):
    started, failures, checked = time.perf_counter(), 0, 0
    for d in (1, 2, 3):
        for n in range(1, 6):
            for word in words(d, n):
                plan = build_plan(word, d)
                for i_word in _distinct_rearrangements(word):
                    # rows: all W-bar so far; carry only the first row of the running product
                    rows = np.zeros((1, plan.k))
                    rows[0, 0] = 1.0
                    for i in i_word:
                        rows = np.einsum("sa,wab->swb", rows, plan.maps[i - 1]).reshape(-1, plan.k)
                    # row order is W-bar in base-d, first letter most significant
                    entries = rows[:, n]
                    expected = np.zeros_like(entries)
                    if i_word == word:
                        expected[sum((w - 1) * d ** (n - 1 - t) for t, w in enumerate(word))] = 1.0
                    failures += int(np.count_nonzero(np.abs(entries - expected) > 1e-12))
                    checked += entries.size
    seconds = time.perf_counter() - started
    verdict(2, failures == 0 and seconds < 60,
            f"{failures} failures in {checked} brackets, {seconds:.1f}s (0 failures, < 60s)")


def test_bm_expected_signature(verdict):
    rec = recover_tensor(bm_oracle(3, 1.0), d=3, depth=4)
    errors = [abs(rec[(1, 1)] - 0.5), abs(rec[(1, 1, 2, 2)] - 0.125), abs(rec[(1, 2, 1, 2)])]
    errors += [abs(rec[w]) for w in all_words(3, 3) if len(w) % 2]
    worst = max(errors)
    verdict(3, worst <= 1e-9, f"max error {worst:.2e} (<= 1e-9)")


def test_development_matches_generating_function(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        fam = random_family(MatrixClass.SKEW_HERMITIAN, 2, 3, rng)
        values = np.cumsum(np.vstack([np.zeros(2), rng.normal(size=(3, 2))]), axis=0)
        path = SampledPath.uniform(values)
        scale = max(np.linalg.norm(fam(v)) for v in path.increments())
        path = SampledPath.uniform(values / max(scale, 1.0) * rng.uniform(0.2, 1.0))
        assert max(np.linalg.norm(fam(v)) for v in path.increments()) <= 1.0
        diff = develop(path, fam).matrix - extend_map(fam, signature(path, 14))
        worst = max(worst, np.linalg.norm(diff))
    verdict(4, worst <= 1e-6, f"max HS gap {worst:.2e} (<= 1e-6)")


def test_gradient_against_finite_differences(verdict):
    rng = np.random.default_rng(5)
    worst, h = 0.0, 1e-5
    for i in range(20):
        spec = DistanceSpec(list(MatrixClass)[i % 3], K=2, k=3, d=2)
        mu = EmpiricalMeasure(rng.normal(size=(4, 5, 2)))
        nu = EmpiricalMeasure(rng.normal(loc=0.3, size=(4, 5, 2)))
        p = MapParameters(spec, rng.normal(size=spec.n_params))
        g = distance_gradient(mu, nu, p)
        f = lambda v: empirical_distance_sq(mu, nu, MapParameters(spec, v))  # noqa: E731
        fd = np.array([(f(p.values + h * e) - f(p.values - h * e)) / (2 * h) for e in np.eye(spec.n_params)])
        # relative error per component; a tiny floor keeps exact zeros from dividing by zero
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)
        worst = max(worst, rel.max())
    verdict(5, worst <= 1e-4, f"max relative error {worst:.2e} (rtol 1e-4)")


DESK = {
    "simulate": {"pool_size": 1000, "train_pool_size": 1000, "dim": 3, "steps": 50},
    "train": {"statistics": ["RPCFD"], "K": 8, "k": 5, "iterations": 200, "batch_size": 64, "lr": 0.2,
              "unbiased": True},
    "test": {"alpha": 0.05, "N": 10, "M": 300, "m": 100, "n": 100, "h_list": [0.2, 0.4, 0.5, 0.6, 0.8]},
}


@pytest.mark.slow
def test_desk_scale_power(verdict):
    started = time.perf_counter()
    results = [run_experiment(DESK, seed=seed) for seed in (0, 1, 2)]
    minutes = (time.perf_counter() - started) / 60
    power = {h: float(np.mean([r.row(h).power for r in results])) for h in (0.2, 0.4, 0.6, 0.8)}
    type1 = float(np.mean([r.row(0.5).type1 for r in results]))
    ok = (power[0.2] == 1.0 and power[0.8] == 1.0 and power[0.4] >= 0.8 and power[0.6] >= 0.8
          and type1 <= 0.2 and minutes <= 30)
    shown = ", ".join(f"h={h}: {p:.2f}" for h, p in power.items())
    verdict(6, ok, f"power {shown}; type-I {type1:.2f}; {minutes:.1f} min")


def test_rpcfd_cheaper_than_pcfd(verdict):
    x = EmpiricalMeasure.from_values(simulate_fbm_array(FbmConfig(0.5), 200, stream=0))
    y = EmpiricalMeasure.from_values(simulate_fbm_array(FbmConfig(0.3), 200, stream=1))
    opt = OptConfig(iterations=20, batch_size=64, lr=0.1)
    seconds = {}
    for name in ("RPCFD", "PCFD"):
        spec = DistanceSpec.named(name, K=8, k=5, d=4)
        seconds[name] = min(train(x, y, spec, opt).seconds for _ in range(2))
    verdict(7, seconds["RPCFD"] < seconds["PCFD"],
            f"RPCFD {seconds['RPCFD']:.2f}s vs PCFD {seconds['PCFD']:.2f}s")


def test_invariant_suites(verdict):
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(TESTS / "test_properties.py")], capture_output=True, text=True)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    verdict(8, proc.returncode == 0, summary)
