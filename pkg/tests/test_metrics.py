import numpy as np
import pytest
from skimage.metrics import structural_similarity

from osdm.metrics import PSNR_CAP, mse, psnr, report, ssim


def test_identical_images(rng):
    a = rng.random((32, 32))
    assert psnr(a, a) == PSNR_CAP
    assert abs(ssim(a, a, 1.0) - 1.0) <= 1e-12
    assert mse(a, a) == 0.0


def test_constant_offset(rng):
    a = rng.random((20, 30))
    d = 0.125
    assert abs(mse(a + d, a) - d * d) <= 1e-12


def test_literal_psnr_closed_form():
    n = 64
    ref = np.ones((8, 8))
    d = 0.01
    expected = 20 * np.log10(1 / (d * np.sqrt(n)))
    assert abs(psnr(ref + d, ref, literal=True) - expected) <= 1e-9
    # the conventional form uses the per-pixel RMSE
    assert abs(psnr(ref + d, ref) - 20 * np.log10(1 / d)) <= 1e-9


def test_psnr_decreases_with_noise(rng):
    ref = rng.random((40, 40)) + 1
    noise = rng.standard_normal(ref.shape)
    values = [psnr(ref + s * noise, ref) for s in (0.01, 0.02, 0.05, 0.1)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_ssim_matches_reference_implementation(rng):
    a = rng.random((48, 40))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    want = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                 use_sample_covariance=False)
    assert abs(ssim(a, b, 1.0) - want) < 1e-10


def test_ssim_symmetry_and_bounds(rng):
    a, b = rng.random((2, 30, 30))
    assert abs(ssim(a, b, 1.0) - ssim(b, a, 1.0)) <= 1e-12
    assert ssim(a, b, 1.0) <= 1.0
    check = (np.indices((32, 32)).sum(axis=0) % 2).astype(float)
    assert ssim(check, 1 - check, 1.0) < 0.2


def test_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 3)), np.zeros((3, 3)), data_range=0)


def test_report_fields(rng):
    ref = rng.random((24, 24))
    r = report(ref + 0.01, ref)
    assert r.mse == pytest.approx(1e-4)
    assert r.psnr == pytest.approx(psnr(ref + 0.01, ref))
