import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uqnet.datasets import Dataset
from uqnet.errors import DimensionError
from uqnet.perturb import PerturbedDatasetSet, UncertaintySpec, relative_to_log10_sigma, sample_inputs


def test_relative_to_log10_sigma():
    assert relative_to_log10_sigma(0.3) == pytest.approx(math.log10(1.3))
    assert relative_to_log10_sigma(0.53) == pytest.approx(0.18469, abs=1e-5)
    for bad in (0.0, -0.1, 10.0):
        with pytest.raises(ValueError):
            relative_to_log10_sigma(bad)


def test_from_relative_builds_log10_spec():
    s = UncertaintySpec.from_relative([0.3, 0.5, 0.3, 0.2], [0.53])
    assert s.space == "log10"
    np.testing.assert_allclose(s.input_sigma, np.log10([1.3, 1.5, 1.3, 1.2]))


def test_zero_sigma_returns_x_exactly():
    s = UncertaintySpec([0.0, 0.0], [0.0])
    for method in ("random", "stratified"):
        xs = sample_inputs([1.5, -2.0], s, 7, seed=1, method=method)
        assert np.all(xs == [1.5, -2.0])


def test_random_draws_are_nested_and_deterministic():
    s = UncertaintySpec([0.3], [0.3])
    a = sample_inputs([2.0], s, 10, 5)
    b = sample_inputs([2.0], s, 25, 5)
    np.testing.assert_array_equal(a, b[:10])
    assert not np.array_equal(a, sample_inputs([2.0], s, 10, 6))


@given(n=st.integers(1, 60), d=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_stratified_draws_fill_every_stratum(n, d, seed):
    from statistics import NormalDist

    s = UncertaintySpec(np.ones(d), [0.0])
    xs = sample_inputs(np.zeros(d), s, n, seed, method="stratified")
    cdf = np.vectorize(NormalDist().cdf)(xs)
    for j in range(d):
        assert sorted(np.floor(cdf[:, j] * n).astype(int)) == list(range(n))


def test_sample_moments():
    s = UncertaintySpec([0.3, 2.0], [0.0])
    xs = sample_inputs([1.0, -1.0], s, 200000, 3)
    np.testing.assert_allclose(xs.mean(axis=0), [1.0, -1.0], atol=0.02)
    np.testing.assert_allclose(xs.std(axis=0), [0.3, 2.0], rtol=0.01)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        sample_inputs([1.0, 2.0], UncertaintySpec([0.1], [0.1]), 3, 0)
    ds = Dataset(np.zeros((4, 2)), np.zeros(4))
    with pytest.raises(DimensionError):
        PerturbedDatasetSet(ds, UncertaintySpec([0.1], [0.1]), 2)


def test_perturbed_set_replicas_reproducible_and_distinct():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(size=(100, 2)), rng.normal(size=100))
    spec = UncertaintySpec([0.1, 0.2], [0.5])
    a = PerturbedDatasetSet(ds, spec, 5, seed=9)
    b = PerturbedDatasetSet(ds, spec, 5, seed=9)
    np.testing.assert_array_equal(a[3].inputs, b[3].inputs)
    np.testing.assert_array_equal(a[3].outputs, list(b)[3].outputs)
    assert not np.array_equal(a[0].inputs, a[1].inputs)
    d = a[2].inputs - ds.inputs
    assert abs(d[:, 1].std() / d[:, 0].std() - 2.0) < 0.6
    with pytest.raises(IndexError):
        a[5]


def test_output_perturbation_flag_and_unperturbed():
    ds = Dataset(np.arange(10.0), np.arange(10.0))
    spec = UncertaintySpec([0.1], [0.1])
    keep = PerturbedDatasetSet(ds, spec, 2, perturb_outputs=False)
    np.testing.assert_array_equal(keep[1].outputs, ds.outputs)
    u = PerturbedDatasetSet.unperturbed(ds)
    assert len(u) == 1
    np.testing.assert_array_equal(u[0].inputs, ds.inputs)


def test_spec_validation():
    with pytest.raises(ValueError):
        UncertaintySpec([-0.1], [0.1])
    with pytest.raises(ValueError):
        UncertaintySpec([0.1], [np.nan])
    s = UncertaintySpec([0.1], [0.2])
    assert s.fingerprint() == UncertaintySpec([0.1], [0.2]).fingerprint()
    assert s.zero().input_sigma[0] == 0.0
