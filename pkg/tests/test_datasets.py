import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oddlab.datasets import (
    RNG_NAME,
    LabeledDataset,
    Theorem1Params,
    clean_dataset,
    format_csv,
    generate_blobs,
    generate_gaussian,
    generate_theorem1,
    inject_uniform_noise,
    load_csv,
    save_csv,
)
from oddlab.errors import InvalidFraction, InvalidParams, NotPositiveDefinite, ParseError, SchemaError
from oddlab.linalg import gram, solve_spd


def test_mask_must_match_labels():
    with pytest.raises(InvalidParams):
        LabeledDataset(np.zeros((2, 1)), [0, 1], [0, 0], [False, False], 2)
    with pytest.raises(InvalidParams):
        clean_dataset(np.zeros((2, 1)), [0, 2], 2)


def test_theorem1_flips_exactly_n():
    ds = generate_theorem1(Theorem1Params(N=20, d=64, lam=1.0, n_flip=4, seed=3))
    assert ds.noise_mask.sum() == 4
    s, sc = ds.signs, 2 * ds.clean_labels - 1
    np.testing.assert_array_equal(s[ds.noise_mask], -sc[ds.noise_mask])
    np.testing.assert_array_equal(ds.features[:, 0], sc)
    assert ds.meta["rng"] == RNG_NAME and ds.meta["seed"] == 3


@pytest.mark.parametrize("kw", [dict(N=10, d=10, lam=1.0, n_flip=2),
                                dict(N=10, d=20, lam=1.0, n_flip=5),
                                dict(N=10, d=20, lam=1.0, n_flip=0),
                                dict(N=10, d=20, lam=0.0, n_flip=2)])
def test_theorem1_invalid(kw):
    with pytest.raises(InvalidParams):
        generate_theorem1(Theorem1Params(**kw))


def test_theorem1_column_means():
    lam, N, d = 1.0, 1000, 2000
    ds = generate_theorem1(Theorem1Params(N=N, d=d, lam=lam, n_flip=10, seed=0))
    means = ds.features[:, 1:].mean(axis=0)
    # each column mean has sd lam/sqrt((d-1)N); allow 4 sd plus a union margin
    assert np.mean(np.abs(means) <= 4 * lam / math.sqrt((d - 1) * N)) > 0.999
    assert abs(ds.features[:, 1:].var() - lam**2 / (d - 1)) < 0.01 * lam**2 / (d - 1)


def _gram_gap(N, d, seed, lam=1.0):
    ds = generate_theorem1(Theorem1Params(N=N, d=d, lam=lam, n_flip=3, seed=seed))
    s = np.where(ds.noise_mask, -1.0, 1.0)
    A = np.outer(s, s) + lam**2 * np.eye(N)  # built by hand, not via svm
    return np.max(np.abs(gram(ds.signed_columns()) - A))


def test_theorem1_gram_approaches_reference():
    N = 10
    near = [_gram_gap(N, 200 * N, s) for s in range(20)]
    far = [_gram_gap(N, 2000 * N, s) for s in range(20)]
    # entries fluctuate with sd ~ sqrt(2/d): about 0.03 at d = 2000
    assert max(far) <= 0.05
    assert np.median(far) < np.median(near) / 2
    assert max(near) <= 0.2


def test_theorem1_columns_independent():
    failures = 0
    for seed in range(100):
        ds = generate_theorem1(Theorem1Params(N=10, d=40, lam=1.0, n_flip=3, seed=seed))
        try:
            solve_spd(gram(ds.signed_columns()), np.ones(10))
        except NotPositiveDefinite:
            failures += 1
    assert failures <= 1


def test_blobs_basic():
    a = generate_blobs(3, 20, 5, 4.0, seed=1)
    b = generate_blobs(3, 20, 5, 4.0, seed=1)
    assert np.array_equal(a.features, b.features)
    assert np.bincount(a.labels).tolist() == [20, 20, 20]
    assert not a.noise_mask.any()
    with pytest.raises(InvalidParams):
        generate_blobs(4, 10, 3, 1.0, 0)


def test_blobs_zero_separation_uninformative():
    ds = generate_blobs(2, 2000, 2, 0.0, seed=0)
    m0 = ds.features[ds.labels == 0].mean(axis=0)
    m1 = ds.features[ds.labels == 1].mean(axis=0)
    assert np.max(np.abs(m0 - m1)) < 4 * math.sqrt(2 / 2000)


def test_blobs_nearest_center():
    K = 5
    ds = generate_blobs(K, 400, K, 10.0, seed=2)
    centers = 10.0 * np.eye(K)
    d2 = ((ds.features[:, None, :] - centers[None]) ** 2).sum(-1)
    assert np.mean(d2.argmin(1) == ds.labels) >= 0.99


def test_gaussian_teacher_separable():
    ds = generate_gaussian(30, 4, seed=0, labels="teacher")
    solve = np.linalg.lstsq(ds.features, ds.signs, rcond=None)  # just shape sanity
    assert solve[0].shape == (4,)
    with pytest.raises(InvalidParams):
        generate_gaussian(5, 2, 0, labels="other")


def test_noise_zero_fraction():
    ds = generate_blobs(3, 10, 3, 1.0, 0)
    out = inject_uniform_noise(ds, 0.0, 5)
    assert out.equals(ds) and not out.noise_mask.any()


def test_noise_full_binary_density():
    ds = generate_gaussian(2000, 2, 0)
    out = inject_uniform_noise(ds, 1.0, 1)
    assert abs(out.noise_mask.mean() - 0.5) <= 0.05


def test_noise_many_classes_density():
    labels = np.arange(5000) % 100
    ds = clean_dataset(np.zeros((5000, 1)), labels, 100)
    out = inject_uniform_noise(ds, 0.2, 3)
    assert abs(out.noise_mask.mean() - 0.198) <= 0.02


def test_noise_exclude_true_class():
    ds = generate_blobs(4, 50, 4, 1.0, 0)
    out = inject_uniform_noise(ds, 0.3, 3, exclude_true_class=True)
    assert out.noise_mask.sum() == 60


@pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan")])
def test_noise_invalid_fraction(bad):
    with pytest.raises(InvalidFraction):
        inject_uniform_noise(generate_gaussian(4, 2, 0), bad, 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(0, 1000), st.integers(2, 6))
def test_noise_invariants(fraction, seed, K):
    ds = generate_blobs(K, 10, K, 1.0, 0)
    once = inject_uniform_noise(ds, fraction, seed)
    twice = inject_uniform_noise(once, fraction, seed + 1)
    for out in (once, twice):
        assert np.array_equal(out.features, ds.features)
        assert np.array_equal(out.noise_mask, out.labels != out.clean_labels)
        assert np.array_equal(out.clean_labels, ds.clean_labels)


def test_csv_round_trip(tmp_path):
    ds = inject_uniform_noise(generate_blobs(3, 5, 4, 2.0, 0), 0.4, 1)
    p = tmp_path / "d.csv"
    save_csv(ds, p)
    back = load_csv(p)
    assert back.equals(ds, atol=1e-12)
    assert np.array_equal(back.noise_mask, ds.noise_mask)
    assert back.num_classes == 3


def test_csv_header_with_mask(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,f1,label,clean_label,is_noise\n0.5,1,1,0,1\n2,3,0,0,0\n")
    ds = load_csv(p)
    assert ds.noise_mask.tolist() == [True, False]
    np.testing.assert_array_equal(ds.features, [[0.5, 1], [2, 3]])


def test_csv_without_mask(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,label\n1.0,0\n2.0,1\n")
    ds = load_csv(p)
    assert not ds.noise_mask.any() and ds.meta["mask_known"] is False


def test_csv_bad_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,f1,label\n1,2,0\n1,2\n")
    with pytest.raises(ParseError, match="row 3"):
        load_csv(p)


def test_csv_bad_value(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,f1,label\n1,abc,0\n")
    with pytest.raises(ParseError, match="row 2"):
        load_csv(p)


def test_csv_missing_label(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,f1\n1,2\n")
    with pytest.raises(SchemaError):
        load_csv(p)


def test_csv_format_17_digits():
    ds = clean_dataset(np.array([[0.1]]), [1], 2)
    assert format_csv(ds).splitlines()[1] == "0.10000000000000001,1,1,0"
