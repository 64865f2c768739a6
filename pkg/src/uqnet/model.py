"""Parametric regression models, loss/gradient, and SGD training loops.

Two model families share one flat weight vector layout:

* ``mlp``: fully connected layers, ``relu`` or ``tanh`` hidden activations
  and a linear output layer. Each layer stores its (fan_in, fan_out) matrix
  followed by its bias.
* ``parametric-basis``: a linear combination of fixed monomial features,
  e.g. ``z = d x^4 + e x + f``. Each term may carry a constant ``scale`` that
  divides the monomial; it only changes the conditioning seen by SGD.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datasets import Dataset
from .errors import DimensionError, NonFiniteError, TargetNotBracketedError, TrainingDivergedError

MLP = "mlp"
BASIS = "parametric-basis"
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class BasisTerm:
    exponents: tuple
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "exponents", tuple(int(e) for e in self.exponents))
        if any(e < 0 for e in self.exponents):
            raise ValueError("basis exponents must be nonnegative")
        if not self.scale > 0:
            raise ValueError("basis scale must be positive")


@dataclass(frozen=True)
class NetworkArch:
    family: str = MLP
    layer_widths: tuple = ()
    activation: str = "relu"
    basis_terms: tuple = ()
    n_outputs: int = 1  # parametric-basis only

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        terms = tuple(t if isinstance(t, BasisTerm) else BasisTerm(**t) for t in self.basis_terms)
        object.__setattr__(self, "basis_terms", terms)
        if self.family == MLP:
            if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
                raise ValueError("mlp needs at least two layer widths, all >= 1")
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"activation must be one of {ACTIVATIONS}")
        elif self.family == BASIS:
            if not terms:
                raise ValueError("parametric-basis needs at least one term")
            if len({len(t.exponents) for t in terms}) != 1:
                raise ValueError("all basis terms must cover the same number of inputs")
            if self.n_outputs < 1:
                raise ValueError("n_outputs must be >= 1")
        else:
            raise ValueError(f"unknown model family {self.family!r}")

    @classmethod
    def mlp(cls, widths, activation="relu"):
        return cls(MLP, tuple(widths), activation)

    @classmethod
    def basis(cls, exponents, scales=None, n_outputs=1):
        """Basis from per-term exponents, e.g. ``[4, 1, 0]`` for d x^4 + e x + f."""
        scales = scales or [1.0] * len(exponents)
        terms = tuple(
            BasisTerm((e,) if np.isscalar(e) else tuple(e), s) for e, s in zip(exponents, scales)
        )
        return cls(BASIS, basis_terms=terms, n_outputs=n_outputs)

    @property
    def input_dim(self):
        if self.family == MLP:
            return self.layer_widths[0]
        return len(self.basis_terms[0].exponents)

    @property
    def output_dim(self):
        return self.layer_widths[-1] if self.family == MLP else self.n_outputs

    @property
    def n_params(self):
        if self.family == MLP:
            w = self.layer_widths
            return sum((w[i] + 1) * w[i + 1] for i in range(len(w) - 1))
        return len(self.basis_terms) * self.n_outputs

    def fan_ins(self):
        """Fan-in of every parameter, used for the uniform init radius."""
        if self.family == BASIS:
            return np.full(self.n_params, len(self.basis_terms), dtype=float)
        out = []
        w = self.layer_widths
        for i in range(len(w) - 1):
            out.append(np.full((w[i] + 1) * w[i + 1], w[i], dtype=float))
        return np.concatenate(out)

    def to_dict(self):
        d = {"family": self.family}
        if self.family == MLP:
            d.update(layer_widths=list(self.layer_widths), activation=self.activation)
        else:
            d.update(
                basis_terms=[{"exponents": list(t.exponents), "scale": t.scale} for t in self.basis_terms],
                n_outputs=self.n_outputs,
            )
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("family") == BASIS:
            d["basis_terms"] = tuple(BasisTerm(tuple(t["exponents"]), t.get("scale", 1.0)) for t in d["basis_terms"])
        return cls(**d)

    @property
    def arch_id(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class Network:
    arch: NetworkArch
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        if w.size != self.arch.n_params:
            raise DimensionError(f"weight vector has {w.size} entries, arch needs {self.arch.n_params}")
        if not np.all(np.isfinite(w)):
            raise NonFiniteError("weight vector contains non-finite entries")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def __call__(self, X):
        return predict(self, X)

    def with_weights(self, w):
        return Network(self.arch, w)


# --------------------------------------------------------------------------
# forward / backward


def _mlp_params(arch, w):
    widths = arch.layer_widths
    out, pos = [], 0
    for i in range(len(widths) - 1):
        a, b = widths[i], widths[i + 1]
        W = w[pos : pos + a * b].reshape(a, b)
        pos += a * b
        out.append((W, w[pos : pos + b]))
        pos += b
    return out


def _act(name, h):
    return np.maximum(h, 0.0) if name == "relu" else np.tanh(h)


def _act_grad(name, h):
    if name == "relu":
        return (h > 0).astype(h.dtype)
    t = np.tanh(h)
    return 1.0 - t * t


def basis_features(arch, X):
    X = np.asarray(X, dtype=np.float64)
    cols = []
    for t in arch.basis_terms:
        col = np.ones(X.shape[0])
        for d, e in enumerate(t.exponents):
            if e:
                col = col * X[:, d] ** e
        cols.append(col / t.scale)
    return np.stack(cols, axis=1)


def _check_inputs(arch, X):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.ndim != 2 or X2.shape[1] != arch.input_dim:
        raise DimensionError(f"input has dimension {X2.shape[-1]}, arch expects {arch.input_dim}")
    return X2, single


def _forward(arch, w, X, masks=None):
    """Returns output and, for mlp, the cache of (pre, post) activations."""
    if arch.family == BASIS:
        Phi = basis_features(arch, X)
        if masks is not None:
            Phi = Phi * masks[0]
        return Phi @ w.reshape(len(arch.basis_terms), arch.n_outputs), Phi
    params = _mlp_params(arch, w)
    a = X
    cache = [(None, X)]
    for i, (W, b) in enumerate(params):
        h = a @ W + b
        if i == len(params) - 1:
            return h, cache
        a = _act(arch.activation, h)
        if masks is not None:
            a = a * masks[i]
        cache.append((h, a))


def predict(net: Network, X, masks=None):
    """Vectorized forward pass; a 1-D input gives a 1-D output."""
    X2, single = _check_inputs(net.arch, X)
    out, _ = _forward(net.arch, net.weights, X2, masks)
    return out[0] if single else out


def forward(net: Network, x):
    """Single-input forward pass f(x, w)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("forward takes a single input vector; use predict for batches")
    return predict(net, x)


def _as_targets(Z, n, q):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None] if q == 1 else Z[None, :]
    if Z.shape != (n, q):
        raise DimensionError(f"outputs have shape {Z.shape}, expected {(n, q)}")
    return Z


def residuals(net, X, Z, masks=None):
    """Z - f(X, w) as an (n, q) array."""
    X2, _ = _check_inputs(net.arch, X)
    if X2.shape[0] == 0:
        raise ValueError("empty dataset")
    out, _ = _forward(net.arch, net.weights, X2, masks)
    bad = ~np.isfinite(out)
    if bad.any():
        i = int(np.argwhere(bad)[0][0])
        raise NonFiniteError(f"non-finite model output at sample {i}", index=i)
    return _as_targets(Z, X2.shape[0], net.arch.output_dim) - out


def loss(net, X, Z, sigma_f=1.0):
    """J = 1/2 sum (Z - f(X, w))^2 / sigma_f^2 over samples and output dims."""
    r = residuals(net, X, Z)
    return 0.5 * float(np.sum(r * r)) / sigma_f**2


def _grad(arch, w, X, Z, sigma_f, masks=None):
    out, cache = _forward(arch, w, X, masks)
    delta = -(Z - out) / sigma_f**2  # dJ/d(out)
    if arch.family == BASIS:
        return (cache.T @ delta).ravel(), out
    params = _mlp_params(arch, w)
    g = np.empty_like(w)
    gparams = _mlp_params(arch, g)
    for i in range(len(params) - 1, -1, -1):
        a_prev = cache[i][1]
        gW, gb = gparams[i]
        gW[...] = a_prev.T @ delta
        gb[...] = delta.sum(axis=0)
        if i:
            h = cache[i][0]
            da = delta @ params[i][0].T
            if masks is not None:
                da = da * masks[i - 1]
            delta = da * _act_grad(arch.activation, h)
    return g, out


def gradient(net, X, Z, sigma_f=1.0):
    """Analytic dJ/dw for the loss above (backpropagation for mlp)."""
    X2, _ = _check_inputs(net.arch, X)
    if X2.shape[0] == 0:
        raise ValueError("empty dataset")
    Z2 = _as_targets(Z, X2.shape[0], net.arch.output_dim)
    g, out = _grad(net.arch, net.weights, X2, Z2, sigma_f)
    if not np.all(np.isfinite(out)):
        i = int(np.argwhere(~np.isfinite(out))[0][0])
        raise NonFiniteError(f"non-finite model output at sample {i}", index=i)
    return g


def estimate_sigma_f(net, data: Dataset):
    """RMS residual of ``net`` on ``data``; never applied implicitly."""
    r = residuals(net, data.inputs, data.outputs)
    return float(np.sqrt(np.mean(r * r)))


def normalized_likelihood(J, J_ref):
    """exp(-(J - J_ref)); refuses arguments that would overflow."""
    d = float(J) - float(J_ref)
    if d < -700:
        raise OverflowError(f"J - J_ref = {d:.4g} overflows exp; choose a larger reference loss")
    return math.exp(-d)


# --------------------------------------------------------------------------
# training


def _seed_seq(seed, *key):
    return np.random.SeedSequence([int(seed) & (2**64 - 1), *key])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    smoothing_window: int = 50
    loss_sigma_f: float = 1.0
    rng_seed: int = 0
    dropout: float = 0.0
    stabilize_rel: float = 1e-3

    def __post_init__(self):
        if not self.learning_rate > 0 or self.batch_size < 1 or self.smoothing_window < 1:
            raise ValueError("learning_rate, batch_size and smoothing_window must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.max_epochs and self.smoothing_window > self.max_epochs:
            raise ValueError("smoothing_window must not exceed max_epochs")
        if not self.loss_sigma_f > 0:
            raise ValueError("loss_sigma_f must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class BatchOrder:
    """Per-epoch permutations of sample indices, a pure function of the seed."""

    def __init__(self, seed, n):
        self.seed, self.n = seed, n

    def epoch(self, e):
        return np.random.default_rng(_seed_seq(self.seed, 1, e)).permutation(self.n)


def init_weights(arch, seed):
    """Uniform on [-r, r] with r = 1/sqrt(fan_in)."""
    rng = np.random.default_rng(_seed_seq(seed, 0))
    r = 1.0 / np.sqrt(arch.fan_ins())
    return rng.uniform(-r, r)


def dropout_masks(arch, p, rng, batch):
    if p <= 0:
        return None
    keep = 1.0 - p
    if arch.family == BASIS:
        return [(rng.random((batch, len(arch.basis_terms))) < keep) / keep]
    return [(rng.random((batch, w)) < keep) / keep for w in arch.layer_widths[1:-1]]


def sgd_epoch(arch, w, data, cfg, epoch, order=None):
    """One epoch of minibatch SGD; returns a new weight vector.

    The step uses the batch-mean gradient: w -= lr * grad_batch / batch_size.
    """
    X, Z = data.inputs, data.outputs
    order = order or BatchOrder(cfg.rng_seed, len(data))
    perm = order.epoch(epoch)
    drop_rng = np.random.default_rng(_seed_seq(cfg.rng_seed, 2, epoch)) if cfg.dropout else None
    w = w.copy()
    for s in range(0, len(perm), cfg.batch_size):
        idx = perm[s : s + cfg.batch_size]
        masks = dropout_masks(arch, cfg.dropout, drop_rng, len(idx))
        g, _ = _grad(arch, w, X[idx], Z[idx], cfg.loss_sigma_f, masks)
        w -= (cfg.learning_rate / len(idx)) * g
    return w


def _full_loss(arch, w, data, sigma_f):
    out, _ = _forward(arch, w, data.inputs)
    r = data.outputs - out
    return 0.5 * float(np.sum(r * r)) / sigma_f**2


def _check_data(arch, data, name):
    if data is None or len(data) == 0:
        raise ValueError(f"{name} dataset is empty")
    if data.n_inputs != arch.input_dim or data.n_outputs != arch.output_dim:
        raise DimensionError(
            f"{name} data is {data.n_inputs}->{data.n_outputs}, arch is {arch.input_dim}->{arch.output_dim}"
        )


@dataclass
class LossTrace:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    smoothed_val_loss: list = field(default_factory=list)
    stop_epoch: int = 0
    stabilized: bool = False

    @property
    def empty(self):
        return not self.epochs

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "smoothed_val_loss"])
            for row in zip(self.epochs, self.train_loss, self.val_loss, self.smoothed_val_loss):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            [int(r["epoch"]) for r in rows],
            [float(r["train_loss"]) for r in rows],
            [float(r["val_loss"]) for r in rows],
            [float(r["smoothed_val_loss"]) for r in rows],
        )


def stabilized_epoch(smoothed, window, rel=1e-3):
    """Smallest index e whose next ``window`` smoothed values never fall more
    than ``rel`` (relative) below smoothed[e]; None if no such e yet."""
    for e in range(len(smoothed) - window):
        if _is_stable(smoothed, e, window, rel):
            return e
    return None


def _is_stable(s, e, window, rel):
    return min(s[e + 1 : e + 1 + window]) >= s[e] - rel * abs(s[e])


def train_early_stop(data_train, data_val, arch, cfg, init=None):
    """Train with SGD and stop once the moving-average validation loss stabilizes.

    The validation loss is smoothed with a trailing window of
    ``cfg.smoothing_window`` epochs. Weights are returned from the first epoch
    after which the smoothed loss does not drop by more than
    ``cfg.stabilize_rel`` over the following window; if that never happens the
    epoch with the lowest smoothed loss is used.
    """
    _check_data(arch, data_train, "training")
    _check_data(arch, data_val, "validation")
    w = init_weights(arch, cfg.rng_seed) if init is None else np.array(init, dtype=float)
    trace = LossTrace()
    if cfg.max_epochs == 0:
        return Network(arch, w), trace
    order = BatchOrder(cfg.rng_seed, len(data_train))
    window = cfg.smoothing_window
    s = trace.smoothed_val_loss
    recent = {}  # epoch index -> weights, last window+1 epochs only
    best = (math.inf, None, None)
    for epoch in range(1, cfg.max_epochs + 1):
        w = sgd_epoch(arch, w, data_train, cfg, epoch, order)
        tl = _full_loss(arch, w, data_train, cfg.loss_sigma_f)
        vl = _full_loss(arch, w, data_val, cfg.loss_sigma_f)
        if not (math.isfinite(tl) and math.isfinite(vl)):
            raise TrainingDivergedError(epoch)
        trace.epochs.append(epoch)
        trace.train_loss.append(tl)
        trace.val_loss.append(vl)
        s.append(float(np.mean(trace.val_loss[-window:])))
        i = len(s) - 1
        recent[i] = w
        if s[i] < best[0]:
            best = (s[i], i, w)
        # candidates become decidable in increasing order, so the first hit is the smallest
        cand = i - window
        if cand >= 0:
            if _is_stable(s, cand, window, cfg.stabilize_rel):
                trace.stop_epoch = trace.epochs[cand]
                trace.stabilized = True
                return Network(arch, recent[cand]), trace
            del recent[cand]
    trace.stop_epoch = trace.epochs[best[1]]
    return Network(arch, best[2]), trace


def train_to_target(data, arch, cfg, target, tol=0.01, init=None, max_bisect=200):
    """Train with SGD until the full-data loss crosses ``target``, then bisect.

    Losses are recorded after every epoch; once two consecutive epochs bracket
    the target, the straight segment between their weight vectors is bisected
    until the loss is within ``tol`` of the target. Returns the network and its
    loss recomputed on ``data``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    _check_data(arch, data, "training")
    sf = cfg.loss_sigma_f
    w = init_weights(arch, cfg.rng_seed) if init is None else np.array(init, dtype=float)
    L = _full_loss(arch, w, data, sf)
    if not math.isfinite(L):
        raise TrainingDivergedError(0)
    if abs(L - target) <= tol:
        return Network(arch, w), L
    order = BatchOrder(cfg.rng_seed, len(data))
    best_w, best_L, min_L = w, L, L
    for epoch in range(1, cfg.max_epochs + 1):
        w_new = sgd_epoch(arch, w, data, cfg, epoch, order)
        L_new = _full_loss(arch, w_new, data, sf)
        if not math.isfinite(L_new):
            raise TrainingDivergedError(epoch)
        if abs(L_new - target) <= tol:
            return Network(arch, w_new), L_new
        if (L - target) * (L_new - target) < 0:
            return _bisect(arch, w, L, w_new, data, sf, target, tol, max_bisect)
        if abs(L_new - target) < abs(best_L - target):
            best_w, best_L = w_new, L_new
        min_L = min(min_L, L_new)
        w, L = w_new, L_new
    raise TargetNotBracketedError(target, min_L, Network(arch, best_w), best_L)


def _bisect(arch, w_a, L_a, w_b, data, sf, target, tol, max_iter):
    lo, hi = 0.0, 1.0  # loss(lo) on the same side as L_a
    sign_a = L_a > target
    best = (math.inf, None)
    for _ in range(max_iter):
        t = 0.5 * (lo + hi)
        w = (1.0 - t) * w_a + t * w_b
        L = _full_loss(arch, w, data, sf)
        if abs(L - target) < best[0]:
            best = (abs(L - target), (w, L))
        if abs(L - target) <= tol:
            return Network(arch, w), L
        if (L > target) == sign_a:
            lo = t
        else:
            hi = t
    w, L = best[1]
    return Network(arch, w), L


# --------------------------------------------------------------------------
# serialization


def network_to_dict(net, seed=None, final_loss=None, **extra):
    d = {
        "arch": net.arch.to_dict(),
        "weights": [float(v) for v in net.weights],
        "seed": seed,
        "final_loss": final_loss,
    }
    d.update(extra)
    return d


def network_from_dict(d):
    return Network(NetworkArch.from_dict(d["arch"]), np.array(d["weights"], dtype=float))


def save_network(net, path, seed=None, final_loss=None, **extra):
    Path(path).write_text(json.dumps(network_to_dict(net, seed, final_loss, **extra), indent=1) + "\n")


def load_network(path):
    """Returns (network, full JSON document)."""
    d = json.loads(Path(path).read_text())
    return network_from_dict(d), d
