import json

import numpy as np
import pytest

from tensor_recover.development import SampledPath, develop
from tensor_recover.distances import (DistanceSpec, EmpiricalMeasure, MapParameters, OptConfig, TrainResult,
                                      TrainingDivergedError, development_features, distance_gradient,
                                      empirical_distance_sq, expected_development, train)
from tensor_recover.matrix_core import LinearMapFamily, MatrixClass, expm, is_in_class, random_family
from tensor_recover.stochastic import FbmConfig, simulate_fbm_array

CLASSES = list(MatrixClass)


def measure(rng, n=4, segments=5, d=3, scale=0.3):
    return EmpiricalMeasure(rng.normal(scale=scale, size=(n, segments, d)))


def fd_gradient(mu, nu, p, h=1e-5):
    out = np.zeros(p.values.size)
    for i in range(out.size):
        e = np.zeros(out.size)
        e[i] = h
        up = empirical_distance_sq(mu, nu, MapParameters(p.spec, p.values + e))
        down = empirical_distance_sq(mu, nu, MapParameters(p.spec, p.values - e))
        out[i] = (up - down) / (2 * h)
    return out


@pytest.mark.parametrize("cls,count", [(MatrixClass.TRIDIAG_ANTISYM, 3 * 3), (MatrixClass.ANTISYM, 3 * 6),
                                       (MatrixClass.SKEW_HERMITIAN, 3 * 16)])
def test_parameter_counts(cls, count):
    spec = DistanceSpec(cls, K=2, k=4, d=3)
    assert spec.params_per_map == count and spec.n_params == 2 * count


@pytest.mark.parametrize("cls", CLASSES)
def test_parameter_roundtrip(cls, rng):
    spec = DistanceSpec(cls, K=3, k=4, d=2)
    p = MapParameters(spec, rng.normal(size=spec.n_params))
    assert np.array_equal(MapParameters.from_images(spec, p.images()).values, p.values)
    assert np.allclose(MapParameters.from_families(spec, p.families()).values, p.values, atol=1e-15)
    assert all(is_in_class(img, cls) for img in p.images().reshape(-1, 4, 4))


def test_parameter_validation():
    spec = DistanceSpec(K=1, k=3, d=2)
    with pytest.raises(ValueError):
        MapParameters(spec, np.zeros(5))
    with pytest.raises(ValueError):
        DistanceSpec(K=0)
    with pytest.raises(KeyError):
        DistanceSpec.named("XYZ")


def test_spec_dict_roundtrip():
    spec = DistanceSpec.named("pcfd", K=2, k=3, d=4)
    assert spec.to_dict() == {"statistic": "PCFD", "K": 2, "k": 3, "d": 4}
    assert DistanceSpec.from_dict(spec.to_dict()) == spec


def test_initialisation_seeded():
    spec = DistanceSpec()
    a, b = MapParameters.initial(spec, 3), MapParameters.initial(spec, 3)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, MapParameters.initial(spec, 4).values)
    assert np.std(MapParameters.initial(DistanceSpec(K=64), 0).values) == pytest.approx(1 / np.sqrt(5), rel=0.1)


def test_expected_development_single_path(rng):
    fam = random_family(MatrixClass.SKEW_HERMITIAN, 2, 3, rng)
    p = SampledPath.uniform(rng.normal(size=(4, 2)))
    assert np.allclose(expected_development([p], fam), develop(p, fam).matrix, atol=1e-14)
    assert np.allclose(expected_development([p, p], fam), develop(p, fam).matrix, atol=1e-14)


def test_expected_development_norm_bound(rng):
    fam = random_family(MatrixClass.ANTISYM, 2, 4, rng)
    paths = [SampledPath.uniform(rng.normal(size=(4, 2))) for _ in range(5)]
    assert np.linalg.norm(expected_development(paths, fam)) <= 2 + 1e-12


def test_expected_development_errors(rng):
    fam = random_family(MatrixClass.ANTISYM, 2, 4, rng)
    with pytest.raises(ValueError):
        expected_development([], fam)
    with pytest.raises(ValueError):
        expected_development([SampledPath.uniform(np.zeros((2, 3)))], fam)


def test_measure_padding_keeps_developments(rng):
    fam = random_family(MatrixClass.ANTISYM, 2, 3, rng)
    short = SampledPath.uniform(rng.normal(size=(3, 2)))
    long = SampledPath.uniform(rng.normal(size=(6, 2)))
    feats = development_features(EmpiricalMeasure([short, long]), fam.images[None])
    assert np.allclose(feats[0, 0], develop(short, fam).matrix, atol=1e-14)
    assert np.allclose(feats[1, 0], develop(long, fam).matrix, atol=1e-14)


def test_measure_augmentation():
    values = np.zeros((2, 5, 1))
    mu = EmpiricalMeasure.from_values(values)
    assert mu.d == 2 and np.allclose(mu.increments[0, :, 0], 0.25)
    assert EmpiricalMeasure.from_values(values, augment=False).d == 1
    with pytest.raises(ValueError):
        EmpiricalMeasure([])


def test_distance_identical_is_zero(rng):
    mu = measure(rng)
    p = MapParameters.initial(DistanceSpec(K=2, k=3, d=3))
    assert empirical_distance_sq(mu, mu, p) == 0.0


def test_distance_one_segment_toy(rng):
    spec = DistanceSpec(MatrixClass.ANTISYM, K=1, k=3, d=2)
    p = MapParameters(spec, rng.normal(size=spec.n_params))
    dx, dy = np.array([0.3, -0.2]), np.array([-0.5, 0.9])
    m = p.images()[0]
    expected = np.sum((expm(np.tensordot(dx, m, 1)) - expm(np.tensordot(dy, m, 1))) ** 2)
    value = empirical_distance_sq(EmpiricalMeasure(dx[None, None]), EmpiricalMeasure(dy[None, None]), p)
    assert value == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("cls", CLASSES)
def test_distance_bound_and_symmetry(cls, rng):
    spec = DistanceSpec(cls, K=3, k=4, d=3)
    mu, nu = measure(rng, scale=3.0), measure(rng, n=6, scale=3.0)
    p = MapParameters(spec, rng.normal(scale=2.0, size=spec.n_params))
    value = empirical_distance_sq(mu, nu, p)
    assert 0 <= value <= 4 * spec.k
    assert value == empirical_distance_sq(nu, mu, p)


def test_distance_dimension_check(rng):
    with pytest.raises(ValueError, match="time-augmented"):
        empirical_distance_sq(measure(rng, d=2), measure(rng, d=2), MapParameters.initial(DistanceSpec(d=3)))


@pytest.mark.parametrize("cls", CLASSES)
def test_gradient_matches_finite_differences(cls, rng):
    spec = DistanceSpec(cls, K=2, k=3, d=3)
    mu, nu = measure(rng), measure(rng)
    p = MapParameters.initial(spec, 1)
    g = distance_gradient(mu, nu, p)
    fd = fd_gradient(mu, nu, p)
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-4 * np.abs(fd).max())


def test_gradient_returns_value(rng):
    spec = DistanceSpec(K=2, k=3, d=3)
    mu, nu = measure(rng), measure(rng)
    p = MapParameters.initial(spec)
    _, value = distance_gradient(mu, nu, p, return_value=True)
    assert value == pytest.approx(empirical_distance_sq(mu, nu, p), rel=1e-12)


def test_gradient_zero_for_identical(rng):
    mu = measure(rng)
    assert not np.any(distance_gradient(mu, mu, MapParameters.initial(DistanceSpec(K=2, k=3, d=3))))


def test_gradient_scaling_chain_rule(rng):
    # f(theta) = D(c * theta) has gradient c * (grad D)(c * theta)
    spec = DistanceSpec(MatrixClass.ANTISYM, K=1, k=3, d=2)
    mu, nu = EmpiricalMeasure(rng.normal(size=(1, 1, 2))), EmpiricalMeasure(rng.normal(size=(1, 1, 2)))
    theta = rng.normal(size=spec.n_params)
    c = 1.7
    scaled = distance_gradient(mu, nu, MapParameters(spec, c * theta))
    h = 1e-6
    f = lambda t: empirical_distance_sq(mu, nu, MapParameters(spec, c * t))  # noqa: E731
    fd = np.array([(f(theta + h * e) - f(theta - h * e)) / (2 * h) for e in np.eye(theta.size)])
    assert np.allclose(c * scaled, fd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("cls", CLASSES)
def test_unbiased_gradient(cls, rng):
    spec = DistanceSpec(cls, K=2, k=3, d=3)
    mu, nu = measure(rng, n=3), measure(rng, n=5)
    p = MapParameters.initial(spec, 2)
    g, value = distance_gradient(mu, nu, p, return_value=True, unbiased=True)
    fx, fy = development_features(mu, p.images()), development_features(nu, p.images())

    def inner(a, b):
        return np.real(np.sum(np.conj(a) * b)) / spec.K

    u = (np.mean([inner(fx[i], fx[j]) for i in range(3) for j in range(3) if i != j])
         + np.mean([inner(fy[i], fy[j]) for i in range(5) for j in range(5) if i != j])
         - 2 * np.mean([inner(a, b) for a in fx for b in fy]))
    assert value == pytest.approx(u, abs=1e-13)
    f = lambda t: distance_gradient(mu, nu, MapParameters(spec, t), return_value=True, unbiased=True)[1]  # noqa: E731
    h = 1e-5
    fd = np.array([(f(p.values + h * e) - f(p.values - h * e)) / (2 * h) for e in np.eye(spec.n_params)])
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-4 * np.abs(fd).max())
    with pytest.raises(ValueError):
        distance_gradient(measure(rng, n=1), nu, p, unbiased=True)


def test_train_identical_measures_stay_at_zero(rng):
    mu = measure(rng, n=8)
    spec = DistanceSpec(K=2, k=3, d=3)
    result = train(mu, mu, spec, OptConfig(iterations=100, batch_size=8))
    assert max(result.loss_trace) == 0.0
    assert np.array_equal(result.params.values, MapParameters.initial(spec).values)


def test_train_small_steps_non_decreasing(rng):
    mu, nu = measure(rng, n=6), measure(rng, n=6, scale=0.6)
    spec = DistanceSpec(K=2, k=3, d=3)
    trace = train(mu, nu, spec, OptConfig(iterations=20, lr=1e-3, batch_size=64)).loss_trace
    assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))


def test_train_bm_vs_rough_fbm_increases_distance():
    bm = EmpiricalMeasure.from_values(simulate_fbm_array(FbmConfig(0.5, seed=1), 500))
    fbm = EmpiricalMeasure.from_values(simulate_fbm_array(FbmConfig(0.2, seed=1), 500, stream=1))
    spec = DistanceSpec()
    init = MapParameters.initial(spec, 1)
    result = train(bm, fbm, spec, OptConfig(iterations=200, batch_size=128, lr=0.5, seed=1))
    assert empirical_distance_sq(bm, fbm, result.params) > empirical_distance_sq(bm, fbm, init)


def test_train_separates_polylines():
    x = SampledPath.uniform([[0, 0], [1, 0], [1, 1]])
    y = SampledPath.uniform([[0, 0], [0, 1], [1, 1]])  # same increment, opposite area
    mu, nu = EmpiricalMeasure([x]), EmpiricalMeasure([y])
    spec = DistanceSpec(K=1, k=3, d=2)
    result = train(mu, nu, spec, OptConfig(iterations=50, batch_size=1, lr=0.1))
    assert empirical_distance_sq(mu, nu, result.params) > 1e-3


def test_train_divergence_reported(rng, monkeypatch):
    import tensor_recover.distances as dist

    def bad(*args, **kwargs):
        return np.full(DistanceSpec(K=1, k=3, d=3).n_params, np.nan), float("nan")

    monkeypatch.setattr(dist, "distance_gradient", bad)
    with pytest.raises(TrainingDivergedError, match="iteration 1"):
        train(measure(rng), measure(rng), DistanceSpec(K=1, k=3, d=3), OptConfig(iterations=3))


def test_train_result_json(rng):
    spec = DistanceSpec(K=1, k=3, d=3)
    result = train(measure(rng), measure(rng), spec, OptConfig(iterations=3, seed=5))
    doc = json.loads(result.to_json())
    assert set(doc) == {"spec", "params", "seed", "iterations", "loss_trace"}
    assert doc["iterations"] == 3 and doc["seed"] == 5
    back = TrainResult.from_dict(doc)
    assert np.array_equal(back.params.values, result.params.values)


def test_train_is_seed_deterministic(rng):
    mu, nu = measure(rng, n=10), measure(rng, n=10, scale=0.5)
    spec = DistanceSpec(K=2, k=3, d=3)
    cfg = OptConfig(iterations=5, batch_size=4, seed=9)
    a, b = train(mu, nu, spec, cfg), train(mu, nu, spec, cfg)
    assert np.array_equal(a.params.values, b.params.values) and a.loss_trace == b.loss_trace


def test_default_learning_rates():
    assert OptConfig().learning_rate(DistanceSpec()) == 0.5
    assert OptConfig().learning_rate(DistanceSpec(MatrixClass.SKEW_HERMITIAN)) == 0.05
    assert OptConfig(lr=0.2).learning_rate(DistanceSpec()) == 0.2
