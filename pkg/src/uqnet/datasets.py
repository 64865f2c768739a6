"""Datasets, synthetic generators, splits, log10 transforms and CSV I/O."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimensionError, NonFiniteError

RAW = "raw"
LOG10 = "log10"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Paired input/output samples.

    ``inputs`` is (n, d), ``outputs`` is (n, q); 1-D arrays are promoted to a
    single column. ``transforms`` maps each column name to ``"raw"`` or
    ``"log10"``.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    input_names: tuple = ()
    output_names: tuple = ()
    transforms: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        Z = np.asarray(self.outputs, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if Z.ndim == 1:
            Z = Z[:, None]
        if X.ndim != 2 or Z.ndim != 2:
            raise DimensionError("inputs and outputs must be 1-D or 2-D arrays")
        if X.shape[0] != Z.shape[0]:
            raise DimensionError(
                f"inputs have {X.shape[0]} samples but outputs have {Z.shape[0]}"
            )
        if X.shape[0] < 1:
            raise ValueError("dataset has no samples")
        for name, arr in (("inputs", X), ("outputs", Z)):
            bad = ~np.isfinite(arr)
            if bad.any():
                row = int(np.argwhere(bad)[0][0])
                raise NonFiniteError(f"non-finite {name} value at row {row}", index=row)
        in_names = tuple(self.input_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        out_names = tuple(self.output_names) or tuple(f"z{i}" for i in range(Z.shape[1]))
        if len(in_names) != X.shape[1] or len(out_names) != Z.shape[1]:
            raise DimensionError("column names do not match array widths")
        transforms = {n: RAW for n in in_names + out_names}
        transforms.update(self.transforms)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", Z)
        object.__setattr__(self, "input_names", in_names)
        object.__setattr__(self, "output_names", out_names)
        object.__setattr__(self, "transforms", transforms)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_inputs(self):
        return self.inputs.shape[1]

    @property
    def n_outputs(self):
        return self.outputs.shape[1]

    @property
    def columns(self):
        return self.input_names + self.output_names

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, inputs=self.inputs[idx], outputs=self.outputs[idx])

    def with_values(self, inputs, outputs) -> "Dataset":
        return replace(self, inputs=inputs, outputs=outputs)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.outputs).tobytes())
        h.update(",".join(self.columns).encode())
        return h.hexdigest()[:16]

    def metadata(self, **extra) -> dict:
        meta = {
            "columns": list(self.columns),
            "input_columns": list(self.input_names),
            "output_columns": list(self.output_names),
            "transform_record": dict(self.transforms),
            "n_samples": len(self),
        }
        meta.update(extra)
        return meta


# --------------------------------------------------------------------------
# generators

QUADRATIC_TRUTH = {"a": 0.5, "b": 2.0, "c": 5.0}


def quadratic_truth(x, a=0.5, b=2.0, c=5.0):
    return a * np.asarray(x) ** 2 + b * np.asarray(x) + c


def gen_simple_regression(n=2000, input_mean=2.0, input_std=2.0, noise_std=0.3, seed=0):
    """Toy system z = 0.5 x^2 + 2 x + 5 with Gaussian noise on both x and z.

    Returns the dataset and the true coefficients.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.normal(input_mean, input_std, n)
    z = quadratic_truth(x, **QUADRATIC_TRUTH)
    x_obs = x + noise_std * rng.standard_normal(n)
    z_obs = z + noise_std * rng.standard_normal(n)
    return Dataset(x_obs, z_obs, ("x",), ("z",)), dict(QUADRATIC_TRUTH)


# Log10 ranges of the surrogate inputs (cloud water content, droplet number,
# drizzle water content, drizzle number), SI-like units.
SURROGATE_RANGES = {
    "qc": (-5.7, -3.0),
    "Nc": (6.5, 8.5),
    "qr": (-8.0, -5.0),
    "Nr": (1.0, 4.0),
}
SURROGATE_REL_UNCERTAINTY = {"qc": 0.30, "Nc": 0.50, "qr": 0.30, "Nr": 0.20, "autoconv": 0.53}


def surrogate_log10_rate(log_inputs):
    """Clean log10 autoconversion-like rate from log10 inputs (n, 4).

    Power law in cloud water and droplet number (exponents 2.47 and -1.79)
    with mild drizzle interaction terms.
    """
    u = np.atleast_2d(np.asarray(log_inputs, dtype=np.float64))
    lqc, lnc, lqr, lnr = u.T
    return (
        3.13
        + 2.47 * lqc
        - 1.79 * (lnc - 6.0)
        + 0.25 * (lqr + 6.0)
        - 0.1 * (lnr - 2.5) ** 2
        + 0.05 * (lqc + 4.0) * (lqr + 6.0)
    )


def gen_autoconversion_surrogate(n, seed=0):
    """Four log-uniform inputs and a wide-range rate, returned in log10 space.

    Multiplicative noise of (1 + rel) per column is applied as additive
    Gaussian noise of std log10(1 + rel) on the log10 values.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    names = tuple(SURROGATE_RANGES)
    lo = np.array([SURROGATE_RANGES[k][0] for k in names])
    hi = np.array([SURROGATE_RANGES[k][1] for k in names])
    u = lo + (hi - lo) * rng.random((n, 4))
    rate = surrogate_log10_rate(u)
    in_sig = np.log10(1.0 + np.array([SURROGATE_REL_UNCERTAINTY[k] for k in names]))
    out_sig = math.log10(1.0 + SURROGATE_REL_UNCERTAINTY["autoconv"])
    u_obs = u + in_sig * rng.standard_normal((n, 4))
    rate_obs = rate + out_sig * rng.standard_normal(n)
    transforms = {k: LOG10 for k in names + ("autoconv",)}
    return Dataset(u_obs, rate_obs, names, ("autoconv",), transforms)


# --------------------------------------------------------------------------
# splits and transforms


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f < 0 for f in fr):
            raise ValueError("split fractions must be nonnegative")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise ValueError(f"split fractions sum to {sum(fr)!r}, not 1")


def split(ds: Dataset, spec: SplitSpec):
    """Partition into (train, val, test); val/test sizes floored, remainder to train.

    Empty parts are returned as ``None``.
    """
    n = len(ds)
    n_val = int(math.floor(n * spec.val + 1e-9))
    n_test = int(math.floor(n * spec.test + 1e-9))
    n_train = n - n_val - n_test
    for name, frac, size in (("train", spec.train, n_train), ("val", spec.val, n_val), ("test", spec.test, n_test)):
        if frac > 0 and size < 1:
            raise ValueError(f"{name} split is empty for n={n} and fraction {frac}")
    if spec.train == 0 and n_train > 0:
        # remainder rule only applies when train is requested
        n_test += n_train
        n_train = 0
    idx = np.arange(n)
    if spec.shuffle:
        idx = np.random.default_rng(spec.seed).permutation(n)
    parts = np.split(idx, [n_train, n_train + n_val])
    return tuple(ds.subset(np.sort(p)) if len(p) else None for p in parts)


def _resolve_columns(ds, columns):
    if columns is None:
        return list(ds.columns)
    return [columns] if isinstance(columns, str) else list(columns)


def log10_transform(ds: Dataset, columns=None) -> Dataset:
    X, Z = ds.inputs.copy(), ds.outputs.copy()
    transforms = dict(ds.transforms)
    for col in _resolve_columns(ds, columns):
        arr, j = (X, ds.input_names.index(col)) if col in ds.input_names else (Z, ds.output_names.index(col))
        if transforms[col] == LOG10:
            raise ValueError(f"column {col!r} is already log10-transformed")
        bad = np.flatnonzero(arr[:, j] <= 0)
        if bad.size:
            raise ValueError(f"non-positive value {arr[bad[0], j]!r} at row {bad[0]}, column {col!r}")
        arr[:, j] = np.log10(arr[:, j])
        transforms[col] = LOG10
    return replace(ds, inputs=X, outputs=Z, transforms=transforms)


def inverse_log10_transform(ds: Dataset, columns=None) -> Dataset:
    X, Z = ds.inputs.copy(), ds.outputs.copy()
    transforms = dict(ds.transforms)
    if columns is None:
        columns = [c for c in ds.columns if transforms[c] == LOG10]
    for col in _resolve_columns(ds, columns):
        if transforms[col] != LOG10:
            raise ValueError(f"column {col!r} is not log10-transformed")
        arr, j = (X, ds.input_names.index(col)) if col in ds.input_names else (Z, ds.output_names.index(col))
        arr[:, j] = 10.0 ** arr[:, j]
        transforms[col] = RAW
    return replace(ds, inputs=X, outputs=Z, transforms=transforms)


# --------------------------------------------------------------------------
# CSV I/O


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_csv(ds: Dataset, path, **meta):
    """Write the dataset plus a metadata sidecar (``<path>.json``)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.columns)
        for row in np.hstack([ds.inputs, ds.outputs]):
            w.writerow([repr(float(v)) for v in row])
    sidecar_path(path).write_text(json.dumps(ds.metadata(**meta), indent=2, sort_keys=True) + "\n")
    return path


def load_csv(path, output_columns=None) -> Dataset:
    """Read a dataset CSV.

    Output columns come from ``output_columns``, else the sidecar, else the
    last column.
    """
    path = Path(path)
    meta = {}
    if sidecar_path(path).exists():
        meta = json.loads(sidecar_path(path).read_text())
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no samples")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise ValueError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ValueError(f"{path}:{line}: non-numeric cell {cell!r} in column {header[j]!r}") from None
    if output_columns is None:
        output_columns = meta.get("output_columns") or header[-1:]
    output_columns = [output_columns] if isinstance(output_columns, str) else list(output_columns)
    missing = [c for c in output_columns if c not in header]
    if missing:
        raise ValueError(f"{path}: output columns {missing} not in header")
    in_cols = [c for c in header if c not in output_columns]
    X = values[:, [header.index(c) for c in in_cols]]
    Z = values[:, [header.index(c) for c in output_columns]]
    transforms = {c: meta.get("transform_record", {}).get(c, RAW) for c in header}
    return Dataset(X, Z, tuple(in_cols), tuple(output_columns), transforms)
