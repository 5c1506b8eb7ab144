import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from matobf.errors import DomainError
from matobf.metrics import PrivacyReport, privacy_report, psnr, ssim

from oracles import naive_psnr, naive_ssim


def pair(seed, shape=(32, 32)):
    rng = np.random.default_rng(seed)
    a = rng.random(shape)
    b = np.clip(a + 0.2 * rng.standard_normal(shape), 0, 1)
    return a, b


def test_ssim_of_identical_images_is_one():
    a, _ = pair(0)
    assert abs(ssim(a, a) - 1.0) < 1e-12


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (12, 13), elements=st.floats(0, 1)),
    arrays(np.float64, (12, 13), elements=st.floats(0, 1)),
)
def test_ssim_is_symmetric_and_bounded(a, b):
    s = ssim(a, b)
    assert abs(s - ssim(b, a)) < 1e-12
    assert -1.0 - 1e-12 <= s <= 1.0 + 1e-12


@pytest.mark.parametrize("seed", [1, 2])
def test_ssim_matches_naive_oracle(seed):
    a, b = pair(seed)
    assert abs(ssim(a, b) - naive_ssim(a, b)) < 1e-9


@pytest.mark.parametrize("shape", [(6, 20), (5, 5)])
def test_ssim_small_images_use_truncated_window(shape):
    a, b = pair(3, shape)
    assert abs(ssim(a, b) - naive_ssim(a, b)) < 1e-9


def test_ssim_auto_normalizes_unbounded_inputs():
    a, _ = pair(4)
    a = (a - a.min()) / (a.max() - a.min())
    shifted = a * 4 - 2  # affine copy outside [0, 1]
    assert abs(ssim(a, shifted) - 1.0) < 1e-12
    assert ssim(a, shifted, normalize=False) < 0.5


def test_shape_mismatch():
    with pytest.raises(DomainError):
        ssim(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(DomainError):
        psnr(np.zeros((4, 4)), np.zeros((5, 4)))


def test_psnr_examples():
    a, b = pair(5)
    assert psnr(a, a) == math.inf
    x = np.full((8, 8), 0.2)
    assert abs(psnr(x, x + 0.1) - 20.0) < 1e-9
    assert abs(psnr(a, b) - naive_psnr(a, b)) < 1e-9


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(6)
    a = rng.random((32, 32)) * 0.5 + 0.25
    noise = rng.standard_normal((32, 32))
    values = [psnr(a, a + amp * noise, normalize=False) for amp in (0.01, 0.05, 0.1, 0.2)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_report_of_identical_lists():
    imgs = [pair(s)[0] for s in range(4)]
    rep = privacy_report(imgs, imgs)
    assert rep.count == 4
    assert rep.mean_ssim == pytest.approx(1.0, abs=1e-12)
    assert rep.std_ssim == pytest.approx(0.0, abs=1e-12)
    assert rep.mean_psnr == math.inf


def test_report_single_pair():
    a, b = pair(7)
    rep = privacy_report([a], [b])
    assert rep.mean_ssim == ssim(a, b)
    assert rep.std_ssim == 0.0
    assert rep.mean_psnr == psnr(a, b)


def test_report_aggregates_and_threads():
    pairs = [pair(s) for s in range(6)]
    a, b = [p[0] for p in pairs], [p[1] for p in pairs]
    rep = privacy_report(a, b)
    assert rep.pair_ssim == privacy_report(a, b, threads=3).pair_ssim
    s = rep.pair_ssim
    mu = sum(s) / len(s)
    assert rep.mean_ssim == pytest.approx(mu, abs=1e-15)
    assert rep.std_ssim == pytest.approx(math.sqrt(sum((x - mu) ** 2 for x in s) / len(s)), abs=1e-15)
    assert rep.mean_psnr == pytest.approx(sum(rep.pair_psnr) / 6, abs=1e-12)


def test_report_mean_psnr_skips_infinities():
    rep = PrivacyReport([1.0, 0.5], [math.inf, 20.0])
    assert rep.mean_psnr == 20.0
    assert math.isnan(PrivacyReport().mean_ssim)


def test_report_length_mismatch():
    with pytest.raises(DomainError):
        privacy_report([np.zeros((3, 3))], [])


def test_report_csv_format():
    rep = PrivacyReport([1.0, 0.25], [math.inf, 12.5])
    lines = rep.to_csv().splitlines()
    assert lines[0] == "index,ssim,psnr_db"
    assert lines[1] == "0,1.0,inf"
    assert lines[2] == "1,0.25,12.5"
    assert lines[3] == "# mean_ssim=0.625,std_ssim=0.375,mean_psnr=12.5"
