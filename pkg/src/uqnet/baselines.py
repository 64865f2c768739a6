"""Comparison methods: Bagging, MC Dropout and local quantile regression."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import Dataset
from .ensemble import ImportanceWeightReport, weights_from_losses
from .model import Network, TrainConfig, dropout_masks, loss, predict, train_early_stop
from .pdf import PredictivePdf

# --------------------------------------------------------------------------
# bagging


@dataclass(eq=False)
class BaggingEnsemble:
    members: list
    traces: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("a bagging ensemble needs at least 2 members")

    def __len__(self):
        return len(self.members)


def train_bagging(data_train, data_val, arch, cfg: TrainConfig, n_members=20, bootstrap=False):
    """Independently trained networks, each run to early-stopping convergence.

    Members differ only in init and batch-order seeds; with ``bootstrap`` each
    member also sees its own resample of the training rows.
    """
    members, traces, seeds = [], [], []
    for k in range(n_members):
        seed = int(np.random.SeedSequence([int(cfg.rng_seed) & (2**64 - 1), 17, k]).generate_state(1)[0])
        d = data_train
        if bootstrap:
            idx = np.random.default_rng(seed).integers(0, len(data_train), len(data_train))
            d = data_train.subset(idx)
        net, trace = train_early_stop(d, data_val, arch, replace(cfg, rng_seed=seed))
        members.append(net)
        traces.append(trace)
        seeds.append(seed)
    return BaggingEnsemble(members, traces, seeds)


def bagging_predict(ens: BaggingEnsemble, x, output_index=0):
    """One unweighted output per member."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return np.array([predict(net, x)[output_index] for net in ens.members])


def bagging_degeneracy_report(ens: BaggingEnsemble, data: Dataset, sigma_f=1.0) -> ImportanceWeightReport:
    """Normalized likelihood weights of the members on ``data``."""
    J = [loss(net, data.inputs, data.outputs, sigma_f) for net in ens.members]
    return weights_from_losses(J, None, list(range(len(J))))


# --------------------------------------------------------------------------
# MC dropout


def mc_dropout_predict(net: Network, x, p_drop, n, seed, output_index=0):
    """``n`` forward passes with independent Bernoulli keep-masks (inverted scaling).

    MLPs drop hidden units; parametric-basis models drop basis terms.
    """
    if not 0.0 <= p_drop < 1.0:
        raise ValueError("p_drop must be in [0, 1)")
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if p_drop == 0:
        return np.full(n, predict(net, x)[output_index])
    X = np.broadcast_to(x, (n, x.size))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 19]))
    masks = dropout_masks(net.arch, p_drop, rng, n)
    return predict(net, X, masks)[:, output_index]


# --------------------------------------------------------------------------
# local quantile regression

DEFAULT_LEVELS = tuple(np.round(np.arange(1, 20) * 0.05, 2))


def pinball_loss(residual, level):
    r = np.asarray(residual, dtype=np.float64)
    return np.maximum(level * r, (level - 1.0) * r)


@dataclass(frozen=True, eq=False)
class QuantileModel:
    """Per-level linear quantile functions q_l(x) = a_l + b_l . (x - center) / halfwidth."""

    levels: np.ndarray
    intercepts: np.ndarray
    slopes: np.ndarray  # (n_levels, d)
    center: np.ndarray
    window_halfwidth: np.ndarray
    n_window: int = 0

    def raw_values(self, x):
        u = (np.atleast_1d(np.asarray(x, dtype=np.float64)) - self.center) / self.window_halfwidth
        return self.intercepts + self.slopes @ u

    def values(self, x):
        """Quantile values at x, nondecreasing in level (crossings repaired by sorting)."""
        return np.sort(self.raw_values(x))


def _fit_level(U, y, level, a0, b0, n_iter, step0):
    def objective(a, b):
        return float(np.mean(pinball_loss(y - (a + U @ b), level)))

    a, b = a0, b0.copy()
    best = (objective(a, b), a, b.copy())
    a_avg, b_avg, n_avg = 0.0, np.zeros_like(b), 0
    scale = max(np.std(y), 1e-12)
    for t in range(1, n_iter + 1):
        r = y - (a + U @ b)
        g = np.where(r > 1e-12 * scale, -level, np.where(r < -1e-12 * scale, 1.0 - level, 0.0))
        eta = step0 * scale / np.sqrt(t)
        a -= eta * g.mean()
        b -= eta * (U.T @ g) / len(y)
        if t > n_iter // 2:
            a_avg += a
            b_avg += b
            n_avg += 1
        if t % 50 == 0:
            f = objective(a, b)
            if f < best[0]:
                best = (f, a, b.copy())
    a_avg, b_avg = a_avg / n_avg, b_avg / n_avg
    if objective(a_avg, b_avg) <= best[0]:
        return a_avg, b_avg
    return best[1], best[2]


def quantile_fit_local(data: Dataset, x_center, window_halfwidth, levels=DEFAULT_LEVELS,
                       output_index=0, n_iter=2000, step0=0.5, min_samples=10):
    """Fit one linear quantile function per level on the samples inside the box
    |x - x_center| <= window_halfwidth, by subgradient descent on pinball loss.

    Each level starts from least squares with the intercept moved to the
    empirical residual quantile. The result is the average over the second
    half of the iterations, or the best iterate seen if that has a lower
    pinball loss.
    """
    levels = np.asarray(sorted(levels), dtype=np.float64)
    if levels.size == 0 or levels[0] <= 0 or levels[-1] >= 1:
        raise ValueError("levels must lie in (0, 1)")
    c = np.atleast_1d(np.asarray(x_center, dtype=np.float64))
    h = np.broadcast_to(np.asarray(window_halfwidth, dtype=np.float64), c.shape).copy()
    if np.any(h <= 0):
        raise ValueError("window half-width must be positive")
    inside = np.all(np.abs(data.inputs - c) <= h, axis=1)
    if inside.sum() < min_samples:
        raise ValueError(
            f"only {int(inside.sum())} samples inside the window (need {min_samples}); use a wider window"
        )
    U = (data.inputs[inside] - c) / h
    y = data.outputs[inside, output_index]
    A = np.column_stack([np.ones(len(y)), U])
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    res = y - A @ coef
    ints, slopes = [], []
    for lv in levels:
        a, b = _fit_level(U, y, lv, coef[0] + np.quantile(res, lv), coef[1:], n_iter, step0)
        ints.append(a)
        slopes.append(b)
    return QuantileModel(levels, np.array(ints), np.array(slopes), c, h, int(inside.sum()))


def quantile_pdf(model: QuantileModel, x, **provenance):
    """Piecewise-constant density with mass (level_{l+1} - level_l) on
    [q_l(x), q_{l+1}(x)]; integrates to max level - min level."""
    q = model.values(x)
    dq = np.diff(q)
    if np.any(dq <= 0):
        raise ValueError("quantile values are not strictly increasing; cannot form a density")
    dens = np.diff(model.levels) / dq
    mass = float(model.levels[-1] - model.levels[0])
    prov = dict(provenance, input=np.atleast_1d(x).tolist(), method="quantile-regression")
    return PredictivePdf(q, dens, model.n_window, None, prov, mass)
