import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dudocf.data import generate_phantom
from dudocf.data.phantom import ShellGeometry, rotation_frame, shell_coordinates
from dudocf.metrics import (
    N_SEGMENTS,
    MetricError,
    PolarMap,
    ape,
    correlation_stats,
    nmse,
    paired_t,
    paired_ttest,
    polar_map_17,
    psnr,
    segment_of,
    ssim,
)
from dudocf.physics.geometry import GeometryError


# brute-force single-loop oracles


def nmse_loop(a, b):
    num = den = 0.0
    for u, v in zip(a.ravel(), b.ravel()):
        num += (u - v) ** 2
        den += v * v
    return num / den * 100.0


def psnr_loop(a, b):
    s = 0.0
    peak = -math.inf
    for u, v in zip(a.ravel(), b.ravel()):
        s += (u - v) ** 2
        peak = max(peak, v)
    return 10.0 * math.log10(peak * peak / (s / a.size))


def ssim_loop(a, b, window=7, k1=0.01, k2=0.03):
    L = float(b.max())
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    w = [min(window, n) for n in b.shape]
    vals = []
    for i in range(b.shape[0] - w[0] + 1):
        for j in range(b.shape[1] - w[1] + 1):
            for k in range(b.shape[2] - w[2] + 1):
                pa = a[i : i + w[0], j : j + w[1], k : k + w[2]].ravel()
                pb = b[i : i + w[0], j : j + w[1], k : k + w[2]].ravel()
                n = pa.size
                ma = sum(pa) / n
                mb = sum(pb) / n
                va = sum((u - ma) ** 2 for u in pa) / n
                vb = sum((v - mb) ** 2 for v in pb) / n
                cov = sum((u - ma) * (v - mb) for u, v in zip(pa, pb)) / n
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def pearson_loop(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sxx = syy = 0.0
    for u, v in zip(x, y):
        sxy += (u - mx) * (v - my)
        sxx += (u - mx) ** 2
        syy += (v - my) ** 2
    return sxy / math.sqrt(sxx * syy)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# voxel metrics


def test_nmse_examples(rng):
    x = rng.uniform(0.1, 2.0, (6, 5, 4))
    assert nmse(x, x) == 0.0
    assert nmse(np.zeros_like(x), x) == pytest.approx(100.0, rel=1e-14)
    assert nmse(2 * x, x) == pytest.approx(100.0, rel=1e-14)


def test_ssim_identity_is_one(rng):
    x = rng.uniform(0.0, 1.0, (9, 8, 8))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-14)


def test_psnr_identity_is_infinite(rng):
    x = rng.uniform(0.1, 1.0, (4, 4, 4))
    assert psnr(x, x) == math.inf


def test_all_zero_reference_is_undefined():
    z = np.zeros((4, 4, 4))
    with pytest.raises(MetricError):
        nmse(z + 1, z)
    with pytest.raises(MetricError):
        psnr(z + 1, z)
    with pytest.raises(MetricError):
        ssim(z + 1, z)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        nmse(np.ones((3, 3)), np.ones((3, 4)))


@pytest.mark.parametrize("shape", [(8, 8, 8), (9, 7, 10), (5, 6, 4)])
def test_voxel_metrics_match_brute_force(rng, shape):
    a = rng.uniform(0.0, 2.0, shape)
    b = rng.uniform(0.1, 2.0, shape)
    assert rel(nmse(a, b), nmse_loop(a, b)) < 1e-12
    assert rel(psnr(a, b), psnr_loop(a, b)) < 1e-12
    assert rel(ssim(a, b), ssim_loop(a, b)) < 1e-12


def test_ssim_in_range_for_anticorrelated(rng):
    b = rng.uniform(0.0, 1.0, (7, 7, 7))
    s = ssim(1.0 - b, b)
    assert -1.0 <= s < 0.0


@given(arrays(np.float64, (4, 3, 5), elements=st.floats(0.01, 10.0)), st.floats(0.1, 10.0))
def test_nmse_scale_invariant(x, c):
    y = x * 1.3
    assert nmse(c * y, c * x) == pytest.approx(nmse(y, x), rel=1e-10)


# segment statistics


def test_ape_examples(rng):
    v = rng.uniform(20.0, 100.0, N_SEGMENTS)
    assert np.all(ape(v, v) == 0.0)
    np.testing.assert_allclose(ape(1.1 * v, v), 10.0, rtol=1e-12)


def test_ape_mean_by_hand():
    ref = np.arange(1, 18, dtype=float) * 5.0
    pred = ref.copy()
    pred[0] = 6.0  # 20 %
    pred[16] = 80.0  # |80 - 85| / 85
    want = (20.0 + 5.0 / 85.0 * 100.0) / 17.0
    assert ape(pred, ref).mean() == pytest.approx(want, rel=1e-13)


def test_ape_rejects_nonpositive_reference():
    with pytest.raises(ValueError):
        ape(np.ones(3), np.array([1.0, 0.0, 2.0]))


def test_correlation_limits(rng):
    v = rng.uniform(10.0, 100.0, 34)
    r, r2 = correlation_stats(v, v)
    assert r == pytest.approx(1.0, abs=1e-14) and r2 == 1.0
    r, _ = correlation_stats(-v, v)
    assert r == pytest.approx(-1.0, abs=1e-14)


def test_correlation_matches_brute_force(rng):
    x = rng.normal(size=51)
    y = 0.5 * x + rng.normal(size=51)
    r, r2 = correlation_stats(x, y)
    assert rel(r, pearson_loop(list(x), list(y))) < 1e-12
    my = sum(y) / len(y)
    ss_res = sum((u - v) ** 2 for u, v in zip(x, y))
    ss_tot = sum((v - my) ** 2 for v in y)
    assert rel(r2, 1.0 - ss_res / ss_tot) < 1e-12


def test_paired_t_matches_brute_force(rng):
    a = rng.normal(10.0, 2.0, 10)
    b = a + rng.normal(0.5, 1.0, 10)
    d = [u - v for u, v in zip(a, b)]
    n = len(d)
    m = sum(d) / n
    sd = math.sqrt(sum((x - m) ** 2 for x in d) / (n - 1))
    t_want = m / (sd / math.sqrt(n))
    t, p = paired_t(a, b)
    assert rel(t, t_want) < 1e-12
    # p from the regularised incomplete beta form of the Student-t tail
    from scipy.special import betainc

    nu = n - 1
    p_want = betainc(nu / 2.0, 0.5, nu / (nu + t_want * t_want))
    assert rel(p, p_want) < 1e-12
    assert paired_ttest(a, b) == p


def test_paired_t_guards():
    a = np.arange(10.0)
    assert paired_ttest(a, a) == 1.0
    t, p = paired_t(a + 2.0, a)
    assert p == 0.0 and t == math.inf
    with pytest.raises(ValueError):
        paired_t([1.0], [2.0])


# polar maps


def test_segment_layout():
    theta = np.array([10.0, 45.0, 45.0, 75.0, 105.0, 105.0, 130.0])
    phi = np.array([200.0, 0.0, 100.0, 0.0, 0.0, 310.0, 0.0])
    np.testing.assert_array_equal(segment_of(theta, phi), [17, 13, 14, 7, 1, 6, 0])
    th, ph = np.meshgrid(np.linspace(0.5, 119.5, 60), np.linspace(0, 359, 90), indexing="ij")
    assert set(np.unique(segment_of(th, ph))) == set(range(1, 18))


def test_polar_map_needs_17_values():
    with pytest.raises(ValueError):
        PolarMap(values=np.ones(16), raw=np.ones(16), counts=np.ones(16, dtype=int))


def _desk_shell():
    outer = np.array([20.0, 19.0, 28.0])
    return ShellGeometry(np.array([6.0, 4.0, 0.0]), rotation_frame(0.8, -0.2, 0.3), outer, outer - 8.0)


def _uniform_shell_volume(shell, grid=(32, 32, 16), vs=4.0, value=3.0):
    ph = generate_phantom(5, grid, vs, shell=shell)
    return np.where(ph.myocardium, value, 0.0), ph


def test_uniform_shell_gives_equal_segments():
    shell = _desk_shell()
    vol, _ = _uniform_shell_volume(shell)
    pm = polar_map_17(vol, shell, 4.0)
    assert len(pm.values) == 17
    np.testing.assert_allclose(pm.raw, 3.0, atol=1e-6)
    assert pm.values.max() == 100.0
    assert np.all(pm.counts >= 1)


def test_polar_map_max_is_100(rng):
    shell = _desk_shell()
    vol, _ = _uniform_shell_volume(shell)
    vol = vol * rng.uniform(0.5, 1.5, vol.shape)
    assert polar_map_17(vol, shell, 4.0).values.max() == pytest.approx(100.0, abs=1e-12)


def test_defect_localises_to_segments():
    shell = _desk_shell()
    # anterior-ish mid-to-basal patch: theta 60..120 deg, phi -30..30 deg covers segments 1 and 7
    defect = {"theta": (math.radians(60), math.radians(120)), "phi": (math.radians(330), math.radians(30)), "factor": 0.3}
    ph = generate_phantom(5, (32, 32, 16), 4.0, shell=shell, defect=defect, myo_ratio=5.0)
    ref = generate_phantom(5, (32, 32, 16), 4.0, shell=shell, myo_ratio=5.0)
    a = polar_map_17(np.where(ph.myocardium, ph.activity, 0.0), shell, 4.0).raw
    b = polar_map_17(np.where(ref.myocardium, ref.activity, 0.0), shell, 4.0).raw
    drop = 1.0 - a / b
    hit = {1, 7}
    for k in range(1, 18):
        if k in hit:
            assert drop[k - 1] > 0.5, (k, drop)
        else:
            assert drop[k - 1] < 0.05, (k, drop)


def test_polar_map_rotation_consistent():
    # a smooth field fixed in the shell frame; rotating shell and field together
    # must leave the map unchanged up to nearest-voxel sampling (2 mm voxels)
    grid, vs = (64, 64, 32), 2.0
    half = 0.5 * np.asarray(grid) * vs
    axes = [-half[i] + (np.arange(n) + 0.5) * vs for i, n in enumerate(grid)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    outer = np.array([20.0, 19.0, 28.0])
    maps = []
    for az in (0.6, 1.1, 1.9):
        shell = ShellGeometry(np.array([4.0, 4.0, 0.0]), rotation_frame(az, -0.2, 0.3), outer, outer - 8.0)
        _, th, ph = shell_coordinates(shell, pts)
        maps.append(polar_map_17(2.0 + np.cos(th) + 0.5 * np.sin(th) * np.cos(ph), shell, vs).values)
    for m in maps[1:]:
        np.testing.assert_allclose(m, maps[0], rtol=0.01)


def test_polar_map_empty_segment_raises():
    outer = np.array([20.0, 19.0, 28.0])
    far = ShellGeometry(np.array([500.0, 0.0, 0.0]), np.eye(3), outer, outer - 8.0)
    with pytest.raises(GeometryError):
        polar_map_17(np.ones((32, 32, 16)), far, 4.0)
