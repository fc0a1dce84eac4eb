import numpy as np
import pytest

from osdm.geometry import Sinogram
from osdm.lowdose import (PhotonModel, log_transform, pwls_weights, simulate_counts,
                          simulate_lowdose)

ETA = 22000.0


def test_model_validation():
    with pytest.raises(ValueError):
        PhotonModel(source_intensity=10, background=10)
    with pytest.raises(ValueError):
        PhotonModel(background=-1)
    with pytest.raises(ValueError):
        PhotonModel(eta=0)


def test_mean_count_at_zero_attenuation():
    m = PhotonModel(1e6, rng_seed=3)
    counts = simulate_counts(np.zeros((100, 100)), m)
    assert abs(counts.mean() - 1e6) <= 4 * np.sqrt(1e6 / counts.size)


def test_seeded_determinism():
    x = np.full((10, 10), 2 * ETA)
    a = simulate_counts(x, PhotonModel(1e5, rng_seed=7))
    b = simulate_counts(x, PhotonModel(1e5, rng_seed=7))
    c = simulate_counts(x, PhotonModel(1e5, rng_seed=8))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        simulate_counts(np.array([[np.nan]]), PhotonModel())


def test_noiseless_counts_invert_exactly():
    m = PhotonModel(1e5)
    x = np.linspace(0, 4 * ETA, 50).reshape(5, 10)
    y = log_transform(m.source_intensity * np.exp(-x / ETA), m)
    np.testing.assert_allclose(y.values, x, rtol=1e-12, atol=1e-9)
    assert y.scale == ETA


def test_floor_for_starved_rays():
    m = PhotonModel(1e4, background=5)
    y = log_transform(np.array([[0.0, 3.0, 5.0]]), m)
    np.testing.assert_allclose(y.values, ETA * np.log(1e4))


def test_weights():
    m = PhotonModel(2e5)
    assert pwls_weights(np.zeros((2, 2)), m)[0, 0] == 2e5
    w = pwls_weights(np.linspace(0, 5 * ETA, 20)[None], m)
    assert np.all(np.diff(w) < 0) and np.all(w > 0) and np.all(np.isfinite(w))


@pytest.mark.parametrize("i0", [1e5, 1e6])
def test_monte_carlo_mean_and_variance(i0):
    x = np.array([0.5, 1.5, 3.0]) * ETA
    m = PhotonModel(i0, rng_seed=11)
    rng = np.random.default_rng(11)
    draws = np.stack([log_transform(simulate_counts(x[None], m, rng), m).values[0] for _ in range(10000)])
    var_model = ETA ** 2 * np.exp(x / ETA) / i0
    se = np.sqrt(var_model / len(draws))
    assert np.all(np.abs(draws.mean(0) - x) <= 3 * se)
    assert np.all(np.abs(draws.var(0) / var_model - 1) <= 0.10)


def test_mse_shrinks_with_dose():
    x = Sinogram(np.full((60, 60), 2 * ETA), ETA)
    mses = []
    for i0 in (1e5, 1e6):
        _, y, _ = simulate_lowdose(x, PhotonModel(i0, rng_seed=2))
        mses.append(np.mean((y.values - x.values) ** 2))
    assert mses[0] >= 8 * mses[1]
