"""Target-loss weight ensembles and Monte Carlo predictive densities.

Pipeline: train a baseline network ``w0`` on the unperturbed training data,
measure its loss on every perturbed training replica to get the target
loss, train ``n_w`` networks per replica until their loss hits that target,
then sample outputs for a new input by combining perturbed inputs, ensemble
members and model-error residuals from nearby perturbed testing pairs.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptyNeighborhoodError, EnsembleUnusableError, NonFiniteError, TargetNotBracketedError
from .model import Network, TrainConfig, loss, network_from_dict, network_to_dict, predict, train_to_target
from .pdf import PredictivePdf, common_edges
from .perturb import PerturbedDatasetSet, UncertaintySpec, sample_inputs

log = logging.getLogger(__name__)

RESIDUAL_SHIFT = "residual-shift"
RAW_NEIGHBORS = "raw-neighbors"


@dataclass(frozen=True)
class EnsembleSpec:
    n_x: int = 20
    n_x1: int = 20
    n_x2: int = 20
    n_w: int = 20
    target_tol: float = 0.01
    # per-input-dimension box half-width; None means 1 x input sigma
    neighborhood_radius: tuple | None = None
    bins: int = 80
    bin_width: float | None = None
    range_pad: float = 0.05
    mode: str = RESIDUAL_SHIFT
    empty_policy: str = "skip"  # or "widen"
    # "mean": one target for all replicas; "per-replica": w0's loss on each replica
    target_mode: str = "mean"
    max_nonconverged: float = 0.25
    perturb_train_outputs: bool = True
    perturb_test_outputs: bool = True
    # "stratified" (Latin hypercube) or "random" draws of the new-input perturbations
    input_sampling: str = "stratified"
    seed: int = 0

    def __post_init__(self):
        if min(self.n_x, self.n_x1, self.n_x2, self.n_w) < 1:
            raise ValueError("ensemble sizes must be >= 1")
        if not self.target_tol > 0:
            raise ValueError("target_tol must be positive")
        if self.neighborhood_radius is not None:
            r = tuple(float(v) for v in np.atleast_1d(self.neighborhood_radius))
            if min(r) <= 0:
                raise ValueError("neighborhood radius entries must be > 0")
            object.__setattr__(self, "neighborhood_radius", r)
        if self.mode not in (RESIDUAL_SHIFT, RAW_NEIGHBORS):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.empty_policy not in ("skip", "widen"):
            raise ValueError("empty_policy must be 'skip' or 'widen'")
        if self.input_sampling not in ("stratified", "random"):
            raise ValueError("input_sampling must be 'stratified' or 'random'")
        if self.target_mode not in ("mean", "per-replica"):
            raise ValueError("target_mode must be 'mean' or 'per-replica'")

    def radius_for(self, input_spec: UncertaintySpec):
        if self.neighborhood_radius is None:
            return input_spec.input_sigma.copy()
        r = np.asarray(self.neighborhood_radius, dtype=float)
        return np.broadcast_to(r, input_spec.input_sigma.shape).copy()

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# --------------------------------------------------------------------------
# target loss


@dataclass(frozen=True)
class TargetLoss:
    j0: float
    replica_losses: tuple

    @property
    def l0_ref(self):
        """Likelihoods are referenced to exp(-J0), so the reference is J0 itself."""
        return self.j0

    def for_replica(self, j1, mode="mean"):
        return self.replica_losses[j1] if mode == "per-replica" else self.j0


def compute_target_loss(w0: Network, perturbed_train: PerturbedDatasetSet, sigma_f=1.0):
    """Mean loss of the fixed baseline network over the training replicas."""
    losses = []
    for j1, rep in enumerate(perturbed_train):
        try:
            J = loss(w0, rep.inputs, rep.outputs, sigma_f)
        except NonFiniteError as exc:
            raise NonFiniteError(f"non-finite loss on training replica {j1}: {exc}", index=j1) from exc
        if not math.isfinite(J):
            raise NonFiniteError(f"non-finite loss on training replica {j1}", index=j1)
        losses.append(J)
    return TargetLoss(float(np.mean(losses)), tuple(losses))


# --------------------------------------------------------------------------
# weight ensemble


@dataclass(frozen=True, eq=False)
class Member:
    j1: int
    k: int
    network: Network
    achieved_loss: float
    target: float
    converged: bool
    seed: int

    def to_dict(self):
        return network_to_dict(
            self.network, self.seed, self.achieved_loss,
            j1=self.j1, k=self.k, target=self.target, converged=self.converged,
        )

    @classmethod
    def from_dict(cls, d):
        return cls(d["j1"], d["k"], network_from_dict(d), d["final_loss"], d["target"], d["converged"], d["seed"])


@dataclass(eq=False)
class WeightEnsemble:
    members: list
    j0: float
    w0: Network
    target_tol: float = 0.01
    n_x1: int = 0
    n_w: int = 0
    target_mode: str = "mean"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.members)

    @property
    def networks(self):
        return [m.network for m in self.members]

    @property
    def converged_fraction(self):
        return float(np.mean([m.converged for m in self.members]))

    def ordered(self):
        """Members in canonical (j1, k) order."""
        return sorted(self.members, key=lambda m: (m.j1, m.k))

    def subset(self, keep):
        return replace(self, members=[m for m in self.members if keep(m)])

    def save(self, directory):
        """One JSON file per member plus ``manifest.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for m in self.ordered():
            _write_member(d, m)
        _write_manifest(d, self, complete=True)
        return d

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        man = json.loads((d / "manifest.json").read_text())
        members = [Member.from_dict(json.loads((d / f).read_text())) for f in man["member_files"]]
        w0 = network_from_dict(man["w0"]) if man.get("w0") else None
        return cls(members, man["j0"], w0, man["target_tol"], man["n_x1"], man["n_w"], man["target_mode"], man.get("meta", {}))


def _member_file(j1, k):
    return f"member_{j1:04d}_{k:04d}.json"


def _write_member(d, m):
    (Path(d) / _member_file(m.j1, m.k)).write_text(json.dumps(m.to_dict(), indent=1) + "\n")


def _write_manifest(d, ens, complete):
    mem = ens.ordered()
    man = {
        "j0": ens.j0,
        "target_tol": ens.target_tol,
        "target_mode": ens.target_mode,
        "n_x1": ens.n_x1,
        "n_w": ens.n_w,
        "complete": complete,
        "member_files": [_member_file(m.j1, m.k) for m in mem],
        "seeds": {f"{m.j1},{m.k}": m.seed for m in mem},
        "converged": {f"{m.j1},{m.k}": m.converged for m in mem},
        "targets": {f"{m.j1},{m.k}": m.target for m in mem},
        "w0": network_to_dict(ens.w0) if ens.w0 is not None else None,
        "meta": ens.meta,
    }
    (Path(d) / "manifest.json").write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")


def member_seed(seed, j1, k):
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), 7, j1, k]).generate_state(1, np.uint64)[0])


def _train_member(args):
    perturbed_train, j1, k, arch, cfg, target, tol = args
    mseed = member_seed(cfg.rng_seed, j1, k)
    mcfg = replace(cfg, rng_seed=mseed)
    rep = perturbed_train[j1]
    try:
        net, achieved = train_to_target(rep, arch, mcfg, target, tol)
        return Member(j1, k, net, achieved, target, True, mseed)
    except TargetNotBracketedError as exc:
        log.warning("member (%d, %d) did not bracket target %.6g (min loss %.6g)", j1, k, target, exc.min_loss)
        return Member(j1, k, exc.closest, exc.closest_loss, target, False, mseed)


def build_weight_ensemble(perturbed_train: PerturbedDatasetSet, arch, cfg: TrainConfig, target,
                          spec: EnsembleSpec, w0=None, workers=1, directory=None):
    """Train ``n_w`` networks per training replica to the target loss.

    Each (j1, k) member uses its own init and batch-order seed derived from
    ``cfg.rng_seed``. Members that never bracket the target are kept with
    ``converged=False``. With ``directory`` set, members are written as they
    finish and existing member files are reused, so interrupted builds resume.
    """
    if not isinstance(target, TargetLoss):
        target = TargetLoss(float(target), (float(target),) * len(perturbed_train))
    n_x1 = min(spec.n_x1, len(perturbed_train))
    done = {}
    if directory is not None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for f in directory.glob("member_*.json"):
            m = Member.from_dict(json.loads(f.read_text()))
            done[(m.j1, m.k)] = m
    jobs = [
        (perturbed_train, j1, k, arch, cfg, target.for_replica(j1, spec.target_mode), spec.target_tol)
        for j1 in range(n_x1) for k in range(spec.n_w) if (j1, k) not in done
    ]
    ens = WeightEnsemble(list(done.values()), target.j0, w0, spec.target_tol, n_x1, spec.n_w, spec.target_mode)

    def record(m):
        ens.members.append(m)
        if directory is not None:
            _write_member(directory, m)
            _write_manifest(directory, ens, complete=False)

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            for m in pool.map(_train_member, jobs, chunksize=max(1, len(jobs) // (4 * workers))):
                record(m)
    else:
        for job in jobs:
            record(_train_member(job))
    ens.members = ens.ordered()
    bad = 1.0 - ens.converged_fraction
    if directory is not None:
        _write_manifest(directory, ens, complete=True)
    if bad > spec.max_nonconverged:
        raise EnsembleUnusableError(
            f"{bad:.0%} of members did not reach the target loss (limit {spec.max_nonconverged:.0%})"
        )
    return ens


# --------------------------------------------------------------------------
# importance weights


@dataclass(frozen=True, eq=False)
class ImportanceWeightReport:
    weights: np.ndarray
    losses: np.ndarray
    references: np.ndarray
    member_ids: list

    @property
    def max_weight(self):
        return float(self.weights.max())

    @property
    def second_weight(self):
        """Second-largest weight divided by the largest (0 for one member)."""
        if self.weights.size < 2:
            return 0.0
        w = np.sort(self.weights)
        return float(w[-2] / w[-1])

    @property
    def log_second_weight(self):
        """log of the second-largest normalized likelihood relative to the largest."""
        if self.weights.size < 2:
            return -math.inf
        rel = self.losses - self.references
        r = np.sort(rel)
        return float(-(r[1] - r[0]))

    @property
    def deviation_from_uniform(self):
        return float(np.max(np.abs(self.weights * self.weights.size - 1.0)))

    @property
    def effective_size(self):
        return float(1.0 / np.sum(self.weights**2))

    def to_dict(self):
        return {
            "n_members": int(self.weights.size),
            "max_weight": self.max_weight,
            "second_weight_ratio": self.second_weight,
            "log_second_weight_ratio": self.log_second_weight,
            "deviation_from_uniform": self.deviation_from_uniform,
            "effective_size": self.effective_size,
            "uniform_value": 1.0 / self.weights.size,
        }


def weights_from_losses(losses, references=None, member_ids=None):
    """Normalized exp(-(J - ref)); the common minimum is subtracted before exp."""
    J = np.asarray(losses, dtype=np.float64)
    ref = np.zeros_like(J) if references is None else np.asarray(references, dtype=np.float64)
    rel = J - ref
    w = np.exp(-(rel - rel.min()))
    w /= w.sum()
    return ImportanceWeightReport(w, J, ref, list(member_ids or range(J.size)))


def importance_weights(ens: WeightEnsemble, eval_data=None, sigma_f=1.0, perturbed_train=None, converged_only=False):
    """Normalized likelihood weights of the ensemble members.

    With ``eval_data`` every member is scored on that dataset. Otherwise each
    member is scored on its own training replica (recomputed when
    ``perturbed_train`` is given, else the stored achieved loss) relative to
    its own target loss.
    """
    members = [m for m in ens.ordered() if m.converged or not converged_only]
    if not members:
        raise ValueError("empty ensemble")
    ids = [(m.j1, m.k) for m in members]
    if eval_data is not None:
        J = [loss(m.network, eval_data.inputs, eval_data.outputs, sigma_f) for m in members]
        return weights_from_losses(J, None, ids)
    if perturbed_train is not None:
        J = [loss(m.network, perturbed_train[m.j1].inputs, perturbed_train[m.j1].outputs, sigma_f) for m in members]
    else:
        J = [m.achieved_loss for m in members]
    return weights_from_losses(J, [m.target for m in members], ids)


# --------------------------------------------------------------------------
# sampling the predictive density


def select_neighborhood(x, test_inputs, radius):
    """Indices of rows inside the axis-aligned box |X[m] - x| <= radius."""
    X = np.atleast_2d(np.asarray(test_inputs, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    r = np.broadcast_to(np.asarray(radius, dtype=np.float64), x.shape)
    if X.shape[1] != x.size:
        raise ValueError(f"test inputs have {X.shape[1]} columns, x has {x.size}")
    return np.flatnonzero(np.all(np.abs(X - x) <= r, axis=1))


def output_samples_for(x_i, net: Network, test_replica, neighborhood, mode=RESIDUAL_SHIFT):
    """Output samples for one perturbed input, one member and one test replica.

    ``residual-shift``: f(x_i) + (Z_te[m] - f(X_te[m])) for m in the neighborhood.
    ``raw-neighbors``: Z_te[m] directly.
    Returns an (len(neighborhood), q) array.
    """
    nb = np.asarray(neighborhood, dtype=np.int64)
    if nb.size == 0:
        raise EmptyNeighborhoodError(np.atleast_1d(x_i))
    Z = test_replica.outputs[nb]
    if mode == RAW_NEIGHBORS:
        return Z.copy()
    return predict(net, np.atleast_1d(x_i))[None, :] + (Z - predict(net, test_replica.inputs[nb]))


@dataclass(frozen=True)
class Toggles:
    """Which uncertainty sources are active; ``model`` is the testing-data
    residual term (off means samples are bare network predictions)."""

    input: bool = True
    train: bool = True
    test: bool = True
    weights: bool = True
    model: bool = True

    def tag(self):
        return "-".join(f"{k}{int(getattr(self, k))}" for k in ("input", "train", "test", "weights", "model"))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _neighborhoods(xs, rep_inputs, radius, policy):
    """Per perturbed input, the neighborhood indices in one test replica."""
    out = []
    for x in xs:
        nb = select_neighborhood(x, rep_inputs, radius)
        if nb.size == 0 and policy == "widen":
            r = np.array(radius, dtype=float)
            for _ in range(10):
                r = 2 * r
                nb = select_neighborhood(x, rep_inputs, r)
                if nb.size:
                    log.warning("widened neighborhood radius to %s for x=%s", r.tolist(), x.tolist())
                    break
        out.append(nb)
    return out


def sample_grid(xs, networks, test_set, radius, spec: EnsembleSpec, use_model=True, output_index=0):
    """Predictions and residuals needed for every (i, member, j2) combination.

    Returns ``pred`` (M, n_x) and, per test replica j2, the list of per-input
    residual blocks (M, |neighborhood|) (None when empty).
    """
    pred = np.stack([predict(net, xs)[:, output_index] for net in networks])
    blocks = []
    if not use_model:
        return pred, None
    for rep in test_set:
        nbs = _neighborhoods(xs, rep.inputs, radius, spec.empty_policy)
        union = np.unique(np.concatenate(nbs)) if any(nb.size for nb in nbs) else np.array([], dtype=np.int64)
        if union.size == 0:
            blocks.append([None] * len(xs))
            continue
        Zu = rep.outputs[union, output_index]
        if spec.mode == RAW_NEIGHBORS:
            R = np.broadcast_to(Zu, (len(networks), union.size))
        else:
            Xu = rep.inputs[union]
            R = np.stack([Zu - predict(net, Xu)[:, output_index] for net in networks])
        pos = [np.searchsorted(union, nb) for nb in nbs]
        blocks.append([R[:, p] if p.size else None for p in pos])
    return pred, blocks


def _pdf_from_grid(pred, blocks, spec, mode, provenance):
    M, n_x = pred.shape
    # pass 1: common range
    lo, hi = math.inf, -math.inf
    for i in range(n_x):
        if blocks is None:
            lo, hi = min(lo, pred[:, i].min()), max(hi, pred[:, i].max())
            continue
        for per_i in blocks:
            B = per_i[i]
            if B is None:
                continue
            S = B if mode == RAW_NEIGHBORS else B + pred[:, i : i + 1]
            lo, hi = min(lo, S.min()), max(hi, S.max())
    if not math.isfinite(lo):
        raise EmptyNeighborhoodError(provenance.get("input", []))
    edges = common_edges(lo, hi, spec.bins, spec.bin_width, spec.range_pad)
    width = np.diff(edges)
    nb = edges.size - 1
    acc = np.zeros(nb)
    used_i, total = 0, 0
    skipped = 0
    for i in range(n_x):
        if blocks is None:
            counts = np.histogram(pred[:, i], edges)[0]
            acc += counts / (M * width)
            used_i += 1
            total += M
            continue
        dens_i = np.zeros(nb)
        used_j2 = 0
        for per_i in blocks:
            B = per_i[i]
            if B is None:
                skipped += 1
                continue
            S = B if mode == RAW_NEIGHBORS else B + pred[:, i : i + 1]
            counts = np.histogram(S, edges)[0]
            # each (member, j2) empirical pdf has weight 1; samples within share it
            dens_i += counts / B.shape[1]
            used_j2 += 1
            total += S.size
        if used_j2 == 0:
            continue
        acc += dens_i / (M * used_j2 * width)
        used_i += 1
    if used_i == 0:
        raise EmptyNeighborhoodError(provenance.get("input", []))
    if skipped:
        log.info("skipped %d empty (input, test replica) neighborhoods", skipped)
    dens = acc / used_i
    dens /= np.sum(dens * width)
    provenance = dict(provenance, used_inputs=used_i, skipped_neighborhoods=skipped)
    return PredictivePdf(edges, dens, total, None, provenance)


def assemble_pdf(x, input_spec: UncertaintySpec, ens: WeightEnsemble, perturbed_test: PerturbedDatasetSet,
                 spec: EnsembleSpec, output_index=0, keep_samples=False, toggles=None, members=None):
    """Predictive density for one new input.

    Draws ``n_x`` perturbed inputs and, for each of them, pools output
    samples over all members and testing replicas into a histogram on a
    common grid; the per-input histograms are averaged with equal weight.
    Every (member, testing replica) pair contributes equal total mass.
    """
    toggles = toggles or Toggles()
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    members = members if members is not None else ens.ordered()
    nets = [m.network for m in members]
    if toggles.input:
        xs = sample_inputs(x, input_spec, spec.n_x, spec.seed, spec.input_sampling)
    else:
        xs = x[None, :]
    n_test = min(spec.n_x2, len(perturbed_test))
    test_set = [perturbed_test[j] for j in range(n_test)]
    radius = spec.radius_for(input_spec)
    pred, blocks = sample_grid(xs, nets, test_set, radius, spec, toggles.model, output_index)
    prov = {
        "input": x.tolist(),
        "input_spec": input_spec.fingerprint(),
        "test_set": perturbed_test.source_fingerprint,
        "seed": spec.seed,
        "n_x": len(xs),
        "n_members": len(nets),
        "n_test_replicas": n_test,
        "mode": spec.mode,
        "toggles": toggles.to_dict(),
        "radius": radius.tolist(),
    }
    pdf = _pdf_from_grid(pred, blocks, spec, spec.mode, prov)
    if keep_samples:
        pdf = replace_samples(pdf, _collect_samples(pred, blocks, spec.mode))
    return pdf


def replace_samples(pdf, samples):
    return PredictivePdf(pdf.bin_edges, pdf.densities, pdf.sample_count, samples, pdf.provenance, pdf.mass)


def _collect_samples(pred, blocks, mode):
    if blocks is None:
        return pred.T.ravel().copy()
    out = []
    for i in range(pred.shape[1]):
        for per_i in blocks:
            B = per_i[i]
            if B is not None:
                out.append((B if mode == RAW_NEIGHBORS else B + pred[:, i : i + 1]).ravel())
    return np.concatenate(out)


def decompose_uncertainty(x, input_spec, ens, test_data, test_spec, spec: EnsembleSpec, toggles: Toggles,
                          base_ensemble=None, output_index=0):
    """Predictive density with some uncertainty sources frozen.

    * input off: the unperturbed input only.
    * train off: members from ``base_ensemble`` (trained on the unperturbed
      training data to the same target).
    * weights off: a single member per training replica.
    * test off: the unperturbed testing data.
    * model off: bare network predictions without testing-data residuals.
    """
    if toggles.train:
        members = ens.ordered()
    else:
        if base_ensemble is None:
            raise ValueError("switching off training-data uncertainty needs a base ensemble")
        members = base_ensemble.ordered()
    if not toggles.weights:
        seen, kept = set(), []
        for m in members:
            if m.j1 not in seen:
                seen.add(m.j1)
                kept.append(m)
        members = kept
    if toggles.test:
        test_set = PerturbedDatasetSet(test_data, test_spec, spec.n_x2, spec.perturb_test_outputs, spec.seed + 1)
    else:
        test_set = PerturbedDatasetSet.unperturbed(test_data, test_spec.space)
    return assemble_pdf(x, input_spec, ens, test_set, spec, output_index, toggles=toggles, members=members)


def build_base_ensemble(train_data, arch, cfg, spec: EnsembleSpec, w0, workers=1, target=None):
    """``n_w`` members trained on the unperturbed training data.

    The target defaults to the loss of ``w0`` on that data, the target-loss
    construction applied to a single unperturbed replica.
    """
    base = PerturbedDatasetSet.unperturbed(train_data)
    if target is None:
        target = compute_target_loss(w0, base, cfg.loss_sigma_f).j0
    elif isinstance(target, TargetLoss):
        target = target.j0
    one = replace(spec, n_x1=1, target_mode="mean", max_nonconverged=1.0)
    return build_weight_ensemble(base, arch, replace(cfg, rng_seed=cfg.rng_seed + 1), float(target), one, w0, workers)
