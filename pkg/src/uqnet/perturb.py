"""Gaussian perturbation ensembles for new inputs and for whole datasets."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .datasets import LOG10, RAW, Dataset
from .errors import DimensionError


def relative_to_log10_sigma(relative_uncertainty):
    """Additive log10-space std for a relative (multiplicative) uncertainty.

    A factor (1 + rel) is a shift of log10(1 + rel) in log10 space.
    """
    rel = float(relative_uncertainty)
    if not rel > 0:
        raise ValueError("relative uncertainty must be positive; use sigma 0 directly for exact values")
    if rel >= 10:
        raise ValueError("relative uncertainty must be < 10")
    return math.log10(1.0 + rel)


@dataclass(frozen=True, eq=False)
class UncertaintySpec:
    """Per-dimension additive Gaussian standard deviations in working space."""

    input_sigma: np.ndarray
    output_sigma: np.ndarray
    space: str = RAW

    def __post_init__(self):
        si = np.atleast_1d(np.asarray(self.input_sigma, dtype=np.float64))
        so = np.atleast_1d(np.asarray(self.output_sigma, dtype=np.float64))
        if np.any(si < 0) or np.any(so < 0) or not (np.all(np.isfinite(si)) and np.all(np.isfinite(so))):
            raise ValueError("uncertainty sigmas must be finite and >= 0")
        if self.space not in (RAW, LOG10):
            raise ValueError(f"space must be {RAW!r} or {LOG10!r}")
        object.__setattr__(self, "input_sigma", si)
        object.__setattr__(self, "output_sigma", so)

    @classmethod
    def from_relative(cls, input_rel, output_rel):
        """Build a log10-space spec from relative uncertainties (0.3 = 30%)."""
        conv = lambda r: 0.0 if r == 0 else relative_to_log10_sigma(r)
        return cls([conv(r) for r in input_rel], [conv(r) for r in output_rel], LOG10)

    def zero(self):
        return UncertaintySpec(np.zeros_like(self.input_sigma), np.zeros_like(self.output_sigma), self.space)

    def check(self, ds: Dataset):
        if self.input_sigma.size != ds.n_inputs or self.output_sigma.size != ds.n_outputs:
            raise DimensionError(
                f"uncertainty spec is {self.input_sigma.size}->{self.output_sigma.size} "
                f"but dataset is {ds.n_inputs}->{ds.n_outputs}"
            )

    def to_dict(self):
        return {
            "input_sigma": self.input_sigma.tolist(),
            "output_sigma": self.output_sigma.tolist(),
            "space": self.space,
        }

    def fingerprint(self):
        return hashlib.sha256(repr(self.to_dict()).encode()).hexdigest()[:16]


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *key]))


_norm_ppf = np.vectorize(NormalDist().inv_cdf, otypes=[float])

RANDOM = "random"
STRATIFIED = "stratified"


def sample_inputs(x, spec: UncertaintySpec, n, seed, method=RANDOM):
    """n draws x + eps with eps ~ N(0, diag(input_sigma^2)); shape (n, d).

    ``random`` draws are iid and nested: the first m rows for n > m equal
    the draws for m. ``stratified`` is a Latin hypercube: in every dimension
    each of the n equal-probability strata holds exactly one draw, placed
    uniformly inside it, with strata paired randomly across dimensions.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != spec.input_sigma.shape:
        raise DimensionError(f"x has dimension {x.size}, spec has {spec.input_sigma.size}")
    rng = _rng(seed, 11)
    if method == RANDOM:
        eps = rng.standard_normal((n, x.size))
    elif method == STRATIFIED:
        strata = np.stack([rng.permutation(n) for _ in range(x.size)], axis=1)
        eps = _norm_ppf((strata + rng.random((n, x.size))) / n)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    return x + eps * spec.input_sigma


class PerturbedDatasetSet:
    """N reproducible perturbed replicas of a source dataset.

    Replica j is generated on demand from (source, spec, seed, j), so
    replicas can be produced in any order or in parallel.
    """

    def __init__(self, source: Dataset, spec: UncertaintySpec, n, perturb_outputs=True, seed=0):
        if n < 1:
            raise ValueError("n must be >= 1")
        spec.check(source)
        self.source = source
        self.spec = spec
        self.n = int(n)
        self.perturb_outputs = bool(perturb_outputs)
        self.seed = seed
        self.source_fingerprint = source.fingerprint()

    def __len__(self):
        return self.n

    def __getitem__(self, j) -> Dataset:
        if not 0 <= j < self.n:
            raise IndexError(j)
        rng = _rng(self.seed, 13, j)
        src = self.source
        X = src.inputs + rng.standard_normal(src.inputs.shape) * self.spec.input_sigma
        if self.perturb_outputs:
            Z = src.outputs + rng.standard_normal(src.outputs.shape) * self.spec.output_sigma
        else:
            Z = src.outputs
        return src.with_values(X, Z)

    def __iter__(self):
        return (self[j] for j in range(self.n))

    @property
    def replicas(self):
        return list(self)

    @classmethod
    def unperturbed(cls, source: Dataset, space=RAW):
        """A single replica identical to the source."""
        zero = UncertaintySpec(np.zeros(source.n_inputs), np.zeros(source.n_outputs), space)
        return cls(source, zero, 1, perturb_outputs=False, seed=0)

    def describe(self):
        return {
            "n": self.n,
            "seed": self.seed,
            "perturb_outputs": self.perturb_outputs,
            "source_fingerprint": self.source_fingerprint,
            "spec": self.spec.to_dict(),
        }


def perturb_dataset(ds: Dataset, spec: UncertaintySpec, n, perturb_outputs=True, seed=0):
    return PerturbedDatasetSet(ds, spec, n, perturb_outputs, seed)
