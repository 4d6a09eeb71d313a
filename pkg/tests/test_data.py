import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dudocf.data import (
    ManifestError,
    apply_limited_view,
    apply_low_dose,
    build_dataset,
    compute_boundary,
    expected_projection,
    generate_phantom,
    load_manifest,
    load_sample,
    load_split,
    lv_detectors,
    make_sample,
    simulate_acquisition,
)
from dudocf.physics import GeometryError, ScannerGeometry


@pytest.fixture(scope="module")
def dataset(tmp_path_factory, toy_A):
    root = tmp_path_factory.mktemp("ds")
    m = build_dataset(root, 3, 1, 2, toy_A.geometry, dose_rate=0.1, seed=7, A=toy_A)
    return root, m


# ---------------------------------------------------------------- phantom
def test_phantom_deterministic():
    a = generate_phantom(3, (16, 16, 8))
    b = generate_phantom(3, (16, 16, 8))
    assert np.array_equal(a.activity, b.activity) and np.array_equal(a.mu, b.mu)
    c = generate_phantom(4, (16, 16, 8))
    assert not np.array_equal(a.activity, c.activity)


@pytest.mark.parametrize("seed", range(8))
def test_phantom_contrast_and_mu_values(seed):
    ph = generate_phantom(seed, (32, 32, 16))
    bg = ph.metadata["_masks"]["background"]
    ratio = ph.activity[ph.myocardium].mean() / ph.activity[bg].mean()
    assert 4.0 <= ratio <= 8.0
    assert set(np.unique(ph.mu)) <= {0.0, 0.04, 0.15, 0.25}
    assert np.all(ph.activity >= 0)
    assert ph.myocardium.sum() > 0


def test_phantom_grid_too_small():
    with pytest.raises(GeometryError):
        generate_phantom(0, (4, 16, 16))


# --------------------------------------------------------------- acquisition
def test_zero_activity_zero_counts(toy_A):
    ph = generate_phantom(0, toy_A.geometry.volume_grid)
    ph.activity[:] = 0
    assert np.all(simulate_acquisition(toy_A, ph, 1e5, 0) == 0)


def test_total_counts_within_poisson_band(toy_A):
    ph = generate_phantom(1, toy_A.geometry.volume_grid)
    n = 200_000
    for s in range(5):
        total = simulate_acquisition(toy_A, ph, n, s).sum()
        assert abs(total - n) <= 4 * np.sqrt(n)


def test_draw_mean_converges_to_expectation(toy_A):
    ph = generate_phantom(2, toy_A.geometry.volume_grid)
    n = 1_000_000
    lam = expected_projection(toy_A, ph, n)
    assert lam.sum() == pytest.approx(n)
    reps = 20
    mean = sum(simulate_acquisition(toy_A, ph, n, s) for s in range(reps)) / reps
    # relative error of the total and of the large bins
    assert abs(mean.sum() / n - 1) < 0.01
    big = lam > 500
    assert np.max(np.abs(mean[big] / lam[big] - 1)) < 0.05


# ----------------------------------------------------------------- thinning
def test_low_dose_identity_and_validation():
    p = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(apply_low_dose(p, 1.0, 0), p)
    with pytest.raises(ValueError):
        apply_low_dose(p + 0.5, 0.1, 0)
    with pytest.raises(ValueError):
        apply_low_dose(p, 0.0, 0)
    with pytest.raises(ValueError):
        apply_low_dose(-p - 1, 0.5, 0)


def test_low_dose_tiny_rate_vanishes():
    p = np.full(1000, 20.0)
    assert np.all(apply_low_dose(p, 1e-9, 0) == 0)


def test_low_dose_mean_ratio_three_sigma():
    rng = np.random.default_rng(0)
    p = rng.poisson(30.0, size=100_000).astype(float)
    t = apply_low_dose(p, 0.1, 1)
    n = p.sum()
    sigma = np.sqrt(n * 0.1 * 0.9)
    assert abs(t.sum() - 0.1 * n) <= 3 * sigma
    assert np.all(t <= p) and np.all(t >= 0) and np.all(t == np.round(t))


@given(st.integers(0, 10_000), st.floats(0.01, 0.99))
def test_thin_mask_commute(seed, rate):
    g = ScannerGeometry.toy()
    p = np.random.default_rng(seed).poisson(5.0, size=g.projection_shape).astype(float)
    a = apply_limited_view(apply_low_dose(p, rate, seed), g)
    b = apply_low_dose(apply_limited_view(p, g), rate, seed)
    assert np.array_equal(a, b)


# ------------------------------------------------------------- limited view
def test_limited_view_ones():
    g = ScannerGeometry.toy()
    out = apply_limited_view(np.ones(g.projection_shape), g)
    per_det = out.sum(axis=(0, 1))
    assert np.all(per_det[5:14] == 256) and np.all(per_det[:5] == 0) and np.all(per_det[14:] == 0)
    assert list(lv_detectors(g)) == list(range(5, 14))


def test_limited_view_idempotent_and_shrinking(rng):
    g = ScannerGeometry.toy()
    p = rng.random(g.projection_shape)
    m = apply_limited_view(p, g)
    assert np.array_equal(apply_limited_view(m, g), m)
    assert m.sum() <= p.sum()


def test_limited_view_needs_nine_centre():
    g = ScannerGeometry.toy(n_detectors=19, column_layout=(6, 7, 6))
    with pytest.raises(GeometryError):
        apply_limited_view(np.ones(g.projection_shape), g)


# ----------------------------------------------------------------- boundary
def test_boundary_constant_and_shift(rng):
    assert np.all(compute_boundary(np.full((5, 6, 7), 0.15)) == 0)
    mu = rng.random((5, 6, 7))
    np.testing.assert_allclose(compute_boundary(mu + 0.3), compute_boundary(mu), atol=1e-14)
    assert np.all(compute_boundary(mu) >= 0)


def test_boundary_step():
    h = 0.15
    mu = np.zeros((8, 5, 5))
    mu[4:] = h
    b = compute_boundary(mu)
    np.testing.assert_allclose(b[3], h / 2)
    np.testing.assert_allclose(b[4], h / 2)
    assert np.all(b[:3] == 0) and np.all(b[5:] == 0)


def test_boundary_brute_force(rng):
    mu = rng.random((4, 5, 6))
    ref = np.zeros_like(mu)
    for ax in range(3):
        n = mu.shape[ax]
        for i in range(n):
            lo, hi = max(i - 1, 0), min(i + 1, n - 1)
            d = (np.take(mu, hi, axis=ax) - np.take(mu, lo, axis=ax)) / (hi - lo)
            idx = [slice(None)] * 3
            idx[ax] = i
            ref[tuple(idx)] += np.abs(d)
    np.testing.assert_allclose(compute_boundary(mu), ref, rtol=1e-13)


# ------------------------------------------------------------------ dataset
def test_manifest_sizes_and_disjoint(dataset):
    root, m = dataset
    assert [len(m["splits"][s]) for s in ("train", "val", "test")] == [3, 1, 2]
    ids = sum(m["splits"].values(), [])
    assert len(ids) == len(set(ids)) == 6
    assert m["geometry_hash"] == ScannerGeometry.toy().hash()
    assert m["em_iters"] == 30


def test_sample_invariants_after_reload(dataset, toy_A):
    root, m = dataset
    g = toy_A.geometry
    for i in range(6):
        s = load_sample(root, i, m)
        periph = np.ones(g.n_detectors, dtype=bool)
        periph[5:14] = False
        assert np.all(s.P_LDLV[..., periph] == 0)
        assert np.array_equal(s.P_LDLV, apply_limited_view(s.P_LDFV, g))
        assert np.all(s.P_LDFV <= s.P_FDFV)
        np.testing.assert_allclose(s.beta, compute_boundary(s.mu), atol=1e-6)
        assert np.all(s.mu >= 0) and np.all(s.mu <= 0.5)
        assert np.all(s.S_LDLV >= 0)


def test_roundtrip_bit_identical(dataset, toy_A):
    root, m = dataset
    fresh = make_sample(toy_A, 2, 7, 0.1)
    loaded = load_sample(root, 2, m)
    for f in ("P_FDFV", "P_LDFV", "P_LDLV", "S_LDLV", "mu", "beta", "activity"):
        assert np.array_equal(getattr(fresh, f), getattr(loaded, f)), f


def test_regeneration_bit_identical(dataset, tmp_path, toy_A):
    root, m = dataset
    m2 = build_dataset(tmp_path, 3, 1, 2, toy_A.geometry, dose_rate=0.1, seed=7, A=toy_A)
    assert json.dumps(m2, sort_keys=True) == json.dumps(m, sort_keys=True)
    for p in root.glob("*.ddt"):
        assert (tmp_path / p.name).read_bytes() == p.read_bytes()


def test_corrupt_and_missing_files(dataset, tmp_path, toy_A):
    build_dataset(tmp_path, 1, 0, 0, toy_A.geometry, seed=1, A=toy_A)
    f = tmp_path / "sample_0_mu.ddt"
    blob = bytearray(f.read_bytes())
    blob[-1] ^= 0xFF
    f.write_bytes(bytes(blob))
    with pytest.raises(ManifestError):
        load_sample(tmp_path, 0)
    f.unlink()
    with pytest.raises(ManifestError):
        load_sample(tmp_path, 0)
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "nowhere")


def test_overlapping_splits_rejected(dataset, tmp_path):
    root, m = dataset
    bad = dict(m, splits={"train": [0, 1], "val": [1], "test": [2, 3, 4, 5]})
    (tmp_path / "manifest.json").write_text(json.dumps(bad))
    with pytest.raises(ManifestError):
        load_manifest(tmp_path)


def test_load_split(dataset):
    root, m = dataset
    assert [s.index for s in load_split(root, "test", m)] == m["splits"]["test"]
