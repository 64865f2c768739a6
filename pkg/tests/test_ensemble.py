import json
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uqnet.datasets import Dataset, gen_simple_regression
from uqnet.ensemble import (
    EnsembleSpec,
    Member,
    Toggles,
    WeightEnsemble,
    assemble_pdf,
    build_base_ensemble,
    build_weight_ensemble,
    compute_target_loss,
    decompose_uncertainty,
    importance_weights,
    output_samples_for,
    select_neighborhood,
    weights_from_losses,
)
from uqnet.errors import EmptyNeighborhoodError, EnsembleUnusableError, NonFiniteError
from uqnet.model import Network, NetworkArch, TrainConfig, loss, predict
from uqnet.perturb import PerturbedDatasetSet, UncertaintySpec

LINE = NetworkArch.basis([1, 0])
QUAD = NetworkArch.basis([2, 1, 0])


def _line(n=50, slope=2.0, icpt=1.0, lo=-1, hi=1, seed=0):
    x = np.random.default_rng(seed).uniform(lo, hi, n)
    return Dataset(x, slope * x + icpt)


def _members(nets, target=0.0):
    return [Member(j1, k, n, 0.0, target, True, 0) for (j1, k), n in nets]


# ---- target loss


def test_target_loss_perfect_fit_is_zero():
    ds = _line()
    net = Network(LINE, np.array([2.0, 1.0]))
    t = compute_target_loss(net, PerturbedDatasetSet.unperturbed(ds))
    assert t.j0 == 0.0 and t.l0_ref == 0.0


def test_target_loss_is_mean_of_replica_losses():
    net = Network(LINE, np.array([0.0, 0.0]))
    # replica losses 0.5*sum(z^2): z=(2,2) -> 4 and z=(2,2.828...) -> 6
    a = Dataset(np.zeros(2), np.array([2.0, 2.0]))
    b = Dataset(np.zeros(2), np.array([2.0, np.sqrt(8.0)]))

    class Two:
        def __iter__(self):
            return iter([a, b])

    t = compute_target_loss(net, Two())
    assert t.replica_losses == (4.0, pytest.approx(6.0))
    assert t.j0 == pytest.approx(5.0)


@pytest.mark.filterwarnings("ignore:overflow")
def test_target_loss_nonfinite_names_replica():
    ds = Dataset(np.array([0.0, 1e200]), np.zeros(2))
    net = Network(NetworkArch.basis([2]), np.array([1.0]))
    with pytest.raises(NonFiniteError, match="replica 0"):
        compute_target_loss(net, PerturbedDatasetSet.unperturbed(ds))


def test_target_loss_deterministic():
    ds, _ = gen_simple_regression(400, seed=2)
    net = Network(QUAD, np.array([0.5, 2.0, 5.0]))
    spec = UncertaintySpec([0.3], [0.3])
    a = compute_target_loss(net, PerturbedDatasetSet(ds, spec, 20, seed=3))
    b = compute_target_loss(net, PerturbedDatasetSet(ds, spec, 20, seed=3))
    assert a.j0 == b.j0


# ---- ensemble construction


def test_smallest_ensemble_converges_to_target():
    ds = _line(100)
    target = 0.5
    spec = EnsembleSpec(n_x=1, n_x1=1, n_x2=1, n_w=1)
    ens = build_weight_ensemble(PerturbedDatasetSet.unperturbed(ds), LINE,
                                TrainConfig(learning_rate=0.1, max_epochs=200), target, spec)
    assert len(ens) == 1
    m = ens.members[0]
    assert m.converged and abs(m.achieved_loss - target) <= spec.target_tol
    assert m.achieved_loss == loss(m.network, ds.inputs, ds.outputs)


def test_member_count_seeds_and_tolerance():
    ds, _ = gen_simple_regression(300, seed=1)
    spec = EnsembleSpec(n_x1=3, n_w=4, target_mode="per-replica")
    ptr = PerturbedDatasetSet(ds, UncertaintySpec([0.3], [0.3]), 3, seed=1)
    w0 = Network(NetworkArch.basis([2, 1, 0], [16, 4, 1]), np.array([8.0, 8.0, 5.0]))
    cfg = TrainConfig(learning_rate=0.05, batch_size=32, max_epochs=500)
    t = compute_target_loss(w0, ptr)
    ens = build_weight_ensemble(ptr, w0.arch, cfg, t, spec, w0)
    assert len(ens) == 12
    assert len({m.seed for m in ens.members}) == 12
    for m in ens.members:
        if m.converged:
            assert abs(m.achieved_loss - t.replica_losses[m.j1]) <= 0.01


def test_base_ensemble_targets_w0_loss_on_unperturbed_data():
    ds, _ = gen_simple_regression(300, seed=2)
    w0 = Network(NetworkArch.basis([2, 1, 0], [16, 4, 1]), np.array([8.0, 8.0, 5.0]))
    spec = EnsembleSpec(n_x1=5, n_w=3)
    base = build_base_ensemble(ds, w0.arch, TrainConfig(learning_rate=0.05, batch_size=32, max_epochs=500), spec, w0)
    assert len(base) == 3 and {m.j1 for m in base.members} == {0}
    j = loss(w0, ds.inputs, ds.outputs)
    for m in base.members:
        assert m.target == j
        assert m.converged and abs(m.achieved_loss - j) <= spec.target_tol


def test_unreachable_target_makes_ensemble_unusable():
    ds = Dataset(np.linspace(-1, 1, 40), np.sin(6 * np.linspace(-1, 1, 40)))
    spec = EnsembleSpec(n_x1=2, n_w=2)
    with pytest.raises(EnsembleUnusableError):
        build_weight_ensemble(PerturbedDatasetSet(ds, UncertaintySpec([0.0], [0.1]), 2), LINE,
                              TrainConfig(learning_rate=0.05, max_epochs=20, smoothing_window=5), 0.0, spec)


def test_ensemble_persistence_and_resume(tmp_path):
    ds = _line(80, seed=3)
    ptr = PerturbedDatasetSet(ds, UncertaintySpec([0.05], [0.1]), 2, seed=4)
    spec = EnsembleSpec(n_x1=2, n_w=3, target_mode="per-replica")
    w0 = Network(LINE, np.array([2.0, 1.0]))
    cfg = TrainConfig(learning_rate=0.1, max_epochs=300)
    t = compute_target_loss(w0, ptr)
    full = build_weight_ensemble(ptr, LINE, cfg, t, spec, w0, directory=tmp_path / "a")
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["complete"] and len(man["member_files"]) == 6
    # simulate an interrupted build: drop two members and resume
    for f in man["member_files"][:2]:
        (tmp_path / "a" / f).unlink()
    resumed = build_weight_ensemble(ptr, LINE, cfg, t, spec, w0, directory=tmp_path / "a")
    for a, b in zip(full.ordered(), resumed.ordered()):
        np.testing.assert_array_equal(a.network.weights, b.network.weights)
    loaded = WeightEnsemble.load(tmp_path / "a")
    assert [(m.j1, m.k) for m in loaded.ordered()] == [(m.j1, m.k) for m in full.ordered()]
    np.testing.assert_array_equal(loaded.w0.weights, w0.weights)
    assert loaded.j0 == full.j0


# ---- importance weights


def test_identical_members_get_uniform_weights():
    net = Network(LINE, np.array([1.0, 0.5]))
    ens = WeightEnsemble(_members([((0, k), net) for k in range(7)]), 0.0, net)
    rep = importance_weights(ens, _line())
    assert np.all(rep.weights == 1 / 7)
    assert rep.deviation_from_uniform == pytest.approx(0.0, abs=1e-12)


@given(st.lists(st.floats(0, 2000), min_size=1, max_size=50))
def test_weights_sum_to_one(losses):
    rep = weights_from_losses(losses)
    assert abs(rep.weights.sum() - 1.0) <= 1e-12
    assert np.all(rep.weights >= 0)
    assert rep.max_weight == rep.weights.max()


def test_weight_collapse_for_spread_losses():
    rep = weights_from_losses([100.0, 130.0, 160.0])
    assert rep.max_weight > 0.99
    assert rep.log_second_weight == pytest.approx(-30.0)


# ---- neighborhoods and samples


def test_neighborhood_large_radius_returns_all():
    X = np.random.default_rng(0).normal(size=(30, 3))
    assert list(select_neighborhood(X[0], X, 1e9)) == list(range(30))


def test_neighborhood_tiny_radius_returns_row():
    X = np.random.default_rng(1).normal(size=(30, 2))
    assert list(select_neighborhood(X[7], X, [1e-12, 1e-12])) == [7]


def test_neighborhood_grid_box():
    g = np.array([[i, j] for i in range(3) for j in range(3)], dtype=float)
    assert len(select_neighborhood([1.0, 1.0], g, [1.0, 1.0])) == 9
    assert sorted(select_neighborhood([0.0, 0.0], g, [1.0, 0.5])) == [0, 3]


def test_samples_from_perfect_network_are_its_prediction():
    ds = _line()
    net = Network(LINE, np.array([2.0, 1.0]))
    s = output_samples_for(np.array([0.3]), net, ds, np.arange(10))
    np.testing.assert_allclose(s, 2 * 0.3 + 1.0)


def test_constant_bias_cancels_in_residual_shift():
    ds = _line()
    biased = Network(LINE, np.array([2.0, 1.0 + 0.7]))
    s = output_samples_for(np.array([0.3]), biased, ds, np.arange(20))
    np.testing.assert_allclose(s, 2 * 0.3 + 1.0, atol=1e-12)
    raw = output_samples_for(np.array([0.3]), biased, ds, np.arange(3), mode="raw-neighbors")
    np.testing.assert_array_equal(raw, ds.outputs[:3])


def test_empty_neighborhood_is_error():
    with pytest.raises(EmptyNeighborhoodError):
        output_samples_for(np.array([0.0]), Network(LINE, np.zeros(2)), _line(), [])


# ---- assembled pdf


def _toy_setup(n_x=3, n_x1=2, n_w=2, n_x2=2, seed=0, sigma=0.3):
    ds, _ = gen_simple_regression(400, seed=seed)
    us = UncertaintySpec([sigma], [sigma])
    rng = np.random.default_rng(seed)
    nets = [((j1, k), Network(QUAD, np.array([0.5, 2.0, 5.0]) + 0.05 * rng.standard_normal(3)))
            for j1 in range(n_x1) for k in range(n_w)]
    ens = WeightEnsemble(_members(nets), 0.0, nets[0][1], n_x1=n_x1, n_w=n_w)
    pte = PerturbedDatasetSet(ds, us, n_x2, seed=seed + 1)
    spec = EnsembleSpec(n_x=n_x, n_x1=n_x1, n_x2=n_x2, n_w=n_w, neighborhood_radius=(0.3,), seed=seed)
    return us, ens, pte, spec


def _oracle_pdf(x, us, ens, pte, spec):
    """Scalar-loop reference: every (member, test replica) empirical pdf has
    equal mass, every perturbed input has equal mass."""
    from uqnet.perturb import sample_inputs

    xs = sample_inputs(np.atleast_1d(x), us, spec.n_x, spec.seed, spec.input_sampling)
    samples, weights = [], []
    members = ens.ordered()
    for xi in xs:
        blocks = []
        for j2 in range(spec.n_x2):
            rep = pte[j2]
            nb = [m for m in range(len(rep)) if abs(rep.inputs[m, 0] - xi[0]) <= spec.neighborhood_radius[0]]
            if nb:
                blocks.append((rep, nb))
        for mem in members:
            for rep, nb in blocks:
                for m in nb:
                    f = lambda v: float(predict(mem.network, np.array([v]))[0])
                    samples.append(f(xi[0]) + (rep.outputs[m, 0] - f(rep.inputs[m, 0])))
                    weights.append(1.0 / (spec.n_x * len(members) * len(blocks) * len(nb)))
    return np.array(samples), np.array(weights)


def test_assemble_matches_scalar_loop_oracle():
    us, ens, pte, spec = _toy_setup()
    pdf = assemble_pdf([2.0], us, ens, pte, spec)
    s, w = _oracle_pdf(2.0, us, ens, pte, spec)
    assert abs(w.sum() - 1.0) < 1e-12
    mass = np.histogram(s, pdf.bin_edges, weights=w)[0]
    np.testing.assert_allclose(pdf.probabilities, mass, atol=1e-12)
    assert pdf.sample_count == s.size
    assert pdf.bin_edges[0] < s.min() and pdf.bin_edges[-1] > s.max()


def test_member_order_does_not_change_pdf():
    us, ens, pte, spec = _toy_setup(n_x1=3, n_w=3)
    a = assemble_pdf([2.0], us, ens, pte, spec)
    shuffled = list(ens.members)
    random.Random(0).shuffle(shuffled)
    ens2 = WeightEnsemble(shuffled, ens.j0, ens.w0)
    b = assemble_pdf([2.0], us, ens2, pte, spec)
    assert a.densities.tobytes() == b.densities.tobytes()
    assert a.bin_edges.tobytes() == b.bin_edges.tobytes()


@settings(max_examples=25)
@given(x=st.floats(-3, 6), n_x=st.integers(1, 4), n_x2=st.integers(1, 3), bins=st.integers(5, 100),
       seed=st.integers(0, 1000))
def test_assembled_pdf_integrates_to_one(x, n_x, n_x2, bins, seed):
    us, ens, pte, spec = _toy_setup(n_x=n_x, n_x2=n_x2, seed=seed)
    from dataclasses import replace

    spec = replace(spec, bins=bins, neighborhood_radius=(1.0,))
    try:
        pdf = assemble_pdf([x], us, ens, pte, spec)
    except EmptyNeighborhoodError:
        return
    assert abs(pdf.integral() - 1.0) <= 1e-9
    assert np.all(pdf.densities >= 0)


def test_delta_pdf_for_trivial_configuration():
    ds = _line(100)
    net = Network(LINE, np.array([2.0, 1.0]))
    ens = WeightEnsemble(_members([((0, 0), net)]), 0.0, net)
    us = UncertaintySpec([0.0], [0.0])
    spec = EnsembleSpec(n_x=1, n_x1=1, n_x2=1, n_w=1, neighborhood_radius=(0.2,))
    pdf = assemble_pdf([0.1], us, ens, PerturbedDatasetSet(ds, us, 1), spec)
    assert np.count_nonzero(pdf.densities) == 1
    assert pdf.mean() == pytest.approx(1.2, abs=1e-5)


def test_empty_neighborhoods():
    us, ens, pte, spec = _toy_setup()
    with pytest.raises(EmptyNeighborhoodError):
        assemble_pdf([100.0], us, ens, pte, spec)
    from dataclasses import replace

    wide = replace(spec, empty_policy="widen")
    pdf = assemble_pdf([9.0], us, ens, pte, wide)
    assert abs(pdf.integral() - 1) < 1e-9


def test_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(n_w=0)
    with pytest.raises(ValueError):
        EnsembleSpec(neighborhood_radius=(0.0,))
    with pytest.raises(ValueError):
        EnsembleSpec(mode="other")


def test_decomposition_all_off_and_weights_only_narrow():
    us, ens, pte, spec = _toy_setup(n_x=8, n_x1=3, n_w=3, n_x2=3)
    test = pte.source
    base = ens.subset(lambda m: m.j1 == 0)
    off = Toggles(False, False, False, False, False)
    p = decompose_uncertainty([2.0], us, ens, test, us, spec, off, base_ensemble=base)
    assert p.std() < 1e-3 * max(1.0, abs(p.mean()))
    full = decompose_uncertainty([2.0], us, ens, test, us, spec, Toggles())
    w_only = decompose_uncertainty([2.0], us, ens, test, us, spec, Toggles(False, True, False, True, False))
    assert w_only.var() < 0.2 * full.var()
    with pytest.raises(ValueError):
        decompose_uncertainty([2.0], us, ens, test, us, spec, Toggles(train=False))
