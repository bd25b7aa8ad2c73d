import numpy as np
import pytest

from tensor_recover.recovery import recover_tensor, tensor_oracle
from tensor_recover.stochastic import (FbmConfig, SimulationError, bm_expected_signature, fbm_cholesky,
                                       simulate_fbm, simulate_fbm_array)
from tensor_recover.tensor_core import all_words


def test_bm_increments_uncorrelated():
    x = simulate_fbm_array(FbmConfig(0.5, dim=1, steps=10), 5000)[:, :, 0]
    inc = np.diff(x, axis=1)
    rho = np.corrcoef(inc[:, 2], inc[:, 7])[0, 1]
    assert abs(rho) < 0.05


@pytest.mark.parametrize("h", [0.2, 0.5, 0.8])
def test_variance_scaling(h):
    x = simulate_fbm_array(FbmConfig(h, dim=1, steps=20), 5000)[:, :, 0]
    for idx, t in [(5, 0.25), (20, 1.0)]:
        assert np.var(x[:, idx]) == pytest.approx(t ** (2 * h), rel=0.1)


def test_paths_start_at_zero():
    paths = simulate_fbm(FbmConfig(0.3, dim=2, steps=5), 4)
    assert all(np.array_equal(p.values[0], [0.0, 0.0]) for p in paths)
    assert np.allclose(paths[0].times, np.linspace(0, 1, 6))


def test_seed_determinism_and_streams():
    cfg = FbmConfig(0.4, seed=7)
    a = simulate_fbm_array(cfg, 6)
    assert np.array_equal(a, simulate_fbm_array(cfg, 6))
    # each path owns its stream, so slices agree
    assert np.array_equal(a[2:], simulate_fbm_array(cfg, 4, start=2))
    assert not np.array_equal(a, simulate_fbm_array(cfg, 6, stream=1))
    assert not np.array_equal(a, simulate_fbm_array(FbmConfig(0.4, seed=8), 6))


def test_correlated_increments_for_rough_fbm():
    x = simulate_fbm_array(FbmConfig(0.2, dim=1, steps=10), 4000)[:, :, 0]
    inc = np.diff(x, axis=1)
    # h < 1/2: neighbouring increments are negatively correlated (theory: 2^(2h-1) - 1 ~ -0.34)
    assert np.corrcoef(inc[:, 3], inc[:, 4])[0, 1] == pytest.approx(2 ** (2 * 0.2 - 1) - 1, abs=0.05)


@pytest.mark.parametrize("kwargs", [dict(hurst=0.0), dict(hurst=1.0), dict(steps=1), dict(horizon=0.0),
                                    dict(dim=0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FbmConfig(**kwargs)


def test_cholesky_failure_diagnostic():
    fbm_cholesky.cache_clear()
    with pytest.raises(SimulationError, match="grid"):
        fbm_cholesky(1 - 1e-9, 1000, 1.0)


def test_bm_signature_examples():
    x = bm_expected_signature(3, 1.0, 4)
    assert x[(1, 1)] == 0.5
    assert x[(1, 1, 2, 2)] == pytest.approx(0.125)
    assert x[(1, 2, 1, 2)] == 0.0
    for w in all_words(3, 4):
        if len(w) % 2:
            assert x[w] == 0.0


def test_bm_signature_small_depth():
    assert bm_expected_signature(2, 2.0, 0)[()] == 1.0
    assert bm_expected_signature(2, 2.0, 1).depth == 1
    assert bm_expected_signature(2, 2.0, 2)[(2, 2)] == 1.0


def test_bm_signature_recovered():
    x = bm_expected_signature(2, 0.7, 4)
    assert recover_tensor(tensor_oracle(x), 2, 4).max_abs_diff(x) <= 1e-12
