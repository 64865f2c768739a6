import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uqnet.datasets import (
    LOG10,
    SURROGATE_RANGES,
    Dataset,
    SplitSpec,
    gen_autoconversion_surrogate,
    gen_simple_regression,
    inverse_log10_transform,
    load_csv,
    log10_transform,
    quadratic_truth,
    save_csv,
    sidecar_path,
    split,
)
from uqnet.errors import DimensionError, NonFiniteError


def test_noiseless_simple_regression_lies_on_curve():
    ds, truth = gen_simple_regression(500, noise_std=0.0, seed=3)
    x, z = ds.inputs[:, 0], ds.outputs[:, 0]
    np.testing.assert_allclose(z, 0.5 * x**2 + 2 * x + 5, rtol=0, atol=1e-12)
    assert truth["a"] == 0.5 and truth["b"] == 2.0 and truth["c"] == 5.0


def test_truth_values():
    assert quadratic_truth(np.array([0.0]))[0] == 5.0
    assert quadratic_truth(np.array([2.0]))[0] == 11.0


def test_simple_regression_moments_and_determinism():
    a, _ = gen_simple_regression(seed=1)
    b, _ = gen_simple_regression(seed=1)
    assert len(a) == 2000
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.outputs, b.outputs)
    big, _ = gen_simple_regression(200000, seed=2)
    # input = N(2, 2^2) plus N(0, 0.3^2) noise
    assert abs(big.inputs.mean() - 2.0) < 0.02
    assert abs(big.inputs.std() - np.hypot(2.0, 0.3)) < 0.02


def test_split_paper_sizes():
    ds, _ = gen_simple_regression(seed=0)
    tr, va, te = split(ds, SplitSpec(0.8, 0.0, 0.2, seed=0))
    assert (len(tr), va, len(te)) == (1600, None, 400)


def test_split_all_train():
    ds, _ = gen_simple_regression(10, seed=0)
    tr, va, te = split(ds, SplitSpec(1.0, 0.0, 0.0))
    assert len(tr) == 10 and va is None and te is None


def test_split_too_small_is_error():
    ds, _ = gen_simple_regression(3, seed=0)
    with pytest.raises(ValueError, match="empty"):
        split(ds, SplitSpec(0.6, 0.2, 0.2))


def test_split_spec_must_sum_to_one():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.2, 0.2)
    with pytest.raises(ValueError):
        SplitSpec(1.2, -0.2, 0.0)


@given(n=st.integers(5, 400), val=st.sampled_from([0.0, 0.1, 0.2, 0.25]), test=st.sampled_from([0.1, 0.2, 0.3]),
       seed=st.integers(0, 2**32 - 1))
def test_split_is_a_partition(n, val, test, seed):
    X = np.arange(n, dtype=float)
    ds = Dataset(X, X * 2)
    spec = SplitSpec(1 - val - test, val, test, seed=seed)
    try:
        parts = split(ds, spec)
    except ValueError:
        assert n * min(f for f in (val, test) if f > 0) < 1 or n * (1 - val - test) < 1
        return
    ids = np.concatenate([p.inputs[:, 0] for p in parts if p is not None])
    assert sorted(ids) == list(X)
    assert len(parts[2]) == int(np.floor(n * test + 1e-9))
    again = split(ds, spec)
    for p, q in zip(parts, again):
        assert (p is None) == (q is None)
        if p is not None:
            np.testing.assert_array_equal(p.inputs, q.inputs)


def test_surrogate_shape_range_and_determinism():
    a = gen_autoconversion_surrogate(10000, seed=4)
    b = gen_autoconversion_surrogate(10000, seed=4)
    np.testing.assert_array_equal(a.outputs, b.outputs)
    assert a.input_names == ("qc", "Nc", "qr", "Nr")
    assert a.n_outputs == 1
    assert all(a.transforms[c] == LOG10 for c in a.columns)
    z = a.outputs[:, 0]
    assert z.max() - z.min() >= 10.0


def test_surrogate_inputs_log_uniform():
    """Clean log10 inputs are uniform on the configured ranges; observed
    inputs add Gaussian noise, so compare against that convolution."""
    from math import erf, sqrt

    from uqnet.datasets import SURROGATE_REL_UNCERTAINTY

    ds = gen_autoconversion_surrogate(10000, seed=5)
    for j, name in enumerate(ds.input_names):
        lo, hi = SURROGATE_RANGES[name]
        s = np.log10(1 + SURROGATE_REL_UNCERTAINTY[name])
        x = np.sort(ds.inputs[:, j])

        def cdf(t):
            # uniform(lo, hi) convolved with N(0, s^2)
            def g(u):
                return u * 0.5 * (1 + erf(u / (s * sqrt(2)))) + s / sqrt(2 * np.pi) * np.exp(-u * u / (2 * s * s))
            return (g(t - lo) - g(t - hi)) / (hi - lo)

        F = np.array([cdf(t) for t in x])
        emp = np.arange(1, x.size + 1) / x.size
        assert np.max(np.abs(F - emp)) < 0.05, name


def test_log10_round_trip_and_errors():
    ds = Dataset(np.array([[1.0, 100.0], [10.0, 1.0]]), np.array([1e-6, 2.5]), ("a", "b"), ("z",))
    t = log10_transform(ds)
    np.testing.assert_allclose(t.inputs, [[0.0, 2.0], [1.0, 0.0]])
    assert t.transforms["a"] == LOG10
    back = inverse_log10_transform(t)
    np.testing.assert_allclose(back.inputs, ds.inputs, rtol=1e-12)
    np.testing.assert_allclose(back.outputs, ds.outputs, rtol=1e-12)
    bad = Dataset(np.array([[1.0], [-2.0]]), np.array([1.0, 1.0]), ("a",), ("z",))
    with pytest.raises(ValueError, match="row 1, column 'a'"):
        log10_transform(bad)


def test_dataset_validation():
    with pytest.raises(NonFiniteError):
        Dataset(np.array([1.0, np.nan]), np.array([1.0, 2.0]))
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 1)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 1)), np.zeros((0, 1)))


def test_csv_round_trip_bit_equal(tmp_path):
    ds = gen_autoconversion_surrogate(50, seed=1)
    p = save_csv(ds, tmp_path / "d.csv", seed=1, generator="surrogate")
    back = load_csv(p)
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.outputs, ds.outputs)
    assert back.columns == ds.columns
    assert back.transforms == ds.transforms
    meta = json.loads(sidecar_path(p).read_text())
    assert meta["generator"] == "surrogate" and meta["transform_record"]["qc"] == LOG10


def test_csv_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(ValueError, match="empty"):
        load_csv(empty)
    header = tmp_path / "h.csv"
    header.write_text("x,z\n")
    with pytest.raises(ValueError, match="no samples"):
        load_csv(header)
    ragged = tmp_path / "r.csv"
    ragged.write_text("x,z\n1,2\n3\n")
    with pytest.raises(ValueError, match=":3:"):
        load_csv(ragged)
    text = tmp_path / "t.csv"
    text.write_text("x,z\n1,2\n3,abc\n")
    with pytest.raises(ValueError, match=":3: non-numeric"):
        load_csv(text)


def test_csv_output_column_selection(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("z,x1,x2\n1,2,3\n4,5,6\n")
    ds = load_csv(p, output_columns="z")
    assert ds.input_names == ("x1", "x2") and ds.output_names == ("z",)
    np.testing.assert_array_equal(ds.outputs[:, 0], [1, 4])
    default = load_csv(p)
    assert default.output_names == ("x2",)
