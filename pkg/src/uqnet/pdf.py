"""Histogram predictive densities, summary statistics and distances."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class PredictivePdf:
    """Piecewise-constant density on ``bin_edges``.

    ``mass`` is the integral of the density; it is 1 for every pdf built from
    samples and the covered level range for quantile reconstructions.
    """

    bin_edges: np.ndarray
    densities: np.ndarray
    sample_count: int = 0
    raw_samples: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)
    mass: float = 1.0

    def __post_init__(self):
        e = np.asarray(self.bin_edges, dtype=np.float64)
        d = np.asarray(self.densities, dtype=np.float64)
        if e.ndim != 1 or d.shape != (e.size - 1,):
            raise ValueError("need len(bin_edges) == len(densities) + 1")
        if not np.all(np.diff(e) > 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("densities must be finite and nonnegative")
        object.__setattr__(self, "bin_edges", e)
        object.__setattr__(self, "densities", d)

    @property
    def widths(self):
        return np.diff(self.bin_edges)

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def probabilities(self):
        return self.densities * self.widths

    def integral(self):
        return float(np.sum(self.probabilities))

    def normalized(self):
        total = self.integral()
        return PredictivePdf(self.bin_edges, self.densities / total, self.sample_count,
                             self.raw_samples, dict(self.provenance, covered_mass=total), 1.0)

    def mean(self):
        p = self.probabilities
        return float(np.sum(p * self.centers) / p.sum())

    def var(self):
        """Variance of the piecewise-uniform density (includes within-bin spread)."""
        p = self.probabilities / self.probabilities.sum()
        a, b = self.bin_edges[:-1], self.bin_edges[1:]
        m2 = np.sum(p * (a * a + a * b + b * b) / 3.0)
        return float(m2 - self.mean() ** 2)

    def std(self):
        return float(np.sqrt(max(self.var(), 0.0)))

    def skewness(self):
        p = self.probabilities / self.probabilities.sum()
        c = self.centers - self.mean()
        s = self.std()
        return float(np.sum(p * c**3) / s**3) if s > 0 else 0.0

    def cdf(self, z):
        cum = np.concatenate([[0.0], np.cumsum(self.probabilities)]) / self.integral()
        return np.interp(z, self.bin_edges, cum)

    def quantile(self, q):
        cum = np.concatenate([[0.0], np.cumsum(self.probabilities)]) / self.integral()
        return np.interp(q, cum, self.bin_edges)

    def n_modes(self, smooth_bins=5, min_prominence=0.1):
        """Count local maxima of the lightly smoothed density whose dip to the
        neighbouring maximum exceeds ``min_prominence`` of the peak height."""
        d = self.densities
        if d.size < 3:
            return 1
        k = max(1, min(smooth_bins, d.size // 4))
        ds = np.convolve(d, np.ones(k) / k, mode="same")
        peaks = [i for i in range(ds.size) if ds[i] > 0 and (i == 0 or ds[i] > ds[i - 1]) and (i == ds.size - 1 or ds[i] >= ds[i + 1])]
        kept = []
        for i in peaks:
            if kept:
                j = kept[-1]
                dip = ds[j : i + 1].min()
                if min(ds[i], ds[j]) - dip < min_prominence * ds.max():
                    if ds[i] > ds[j]:
                        kept[-1] = i
                    continue
            kept.append(i)
        return max(1, len(kept))

    def summary(self):
        return {
            "mean": self.mean(),
            "std": self.std(),
            "skewness": self.skewness(),
            "n_modes": self.n_modes(),
            "bimodal": self.n_modes() > 1,
            "sample_count": int(self.sample_count),
            "integral": self.integral(),
        }

    def to_csv(self, path, **sidecar):
        """Write bin_left,bin_right,density plus a JSON sidecar next to it."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "density"])
            for a, b, d in zip(self.bin_edges[:-1], self.bin_edges[1:], self.densities):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(d))])
        meta = {"provenance": self.provenance, "sample_count": int(self.sample_count), "mass": self.mass}
        meta.update(summary=self.summary(), **sidecar)
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return path

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        edges = [float(rows[0]["bin_left"])] + [float(r["bin_right"]) for r in rows]
        dens = [float(r["density"]) for r in rows]
        meta = {}
        if path.with_suffix(".json").exists():
            meta = json.loads(path.with_suffix(".json").read_text())
        return cls(np.array(edges), np.array(dens), meta.get("sample_count", 0), None,
                   meta.get("provenance", {}), meta.get("mass", 1.0))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def common_edges(lo, hi, bins=80, bin_width=None, pad=0.05):
    """Bin grid over [lo, hi] padded by ``pad`` of the range on each side."""
    span = hi - lo
    if span <= 0:
        span = max(abs(lo), 1.0) * 1e-6
    lo, hi = lo - pad * span, hi + pad * span
    if bin_width:
        n = max(1, int(np.ceil((hi - lo) / bin_width)))
        return lo + bin_width * np.arange(n + 1)
    return np.linspace(lo, hi, bins + 1)


def pdf_from_samples(samples, bins=80, bin_width=None, pad=0.05, keep_samples=False, **provenance):
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("no samples")
    edges = common_edges(s.min(), s.max(), bins, bin_width, pad)
    counts = np.histogram(s, edges)[0]
    dens = counts / (s.size * np.diff(edges))
    return PredictivePdf(edges, dens, s.size, s.copy() if keep_samples else None, provenance)


def wasserstein1(a: PredictivePdf, b: PredictivePdf):
    """W1 = integral |F_a - F_b| for two piecewise-uniform densities (exact)."""
    grid = np.union1d(a.bin_edges, b.bin_edges)
    d = a.cdf(grid) - b.cdf(grid)
    dx = np.diff(grid)
    d0, d1 = d[:-1], d[1:]
    same = d0 * d1 >= 0
    out = np.where(same, 0.5 * (np.abs(d0) + np.abs(d1)) * dx, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = 0.5 * dx * (d0 * d0 + d1 * d1) / (np.abs(d0) + np.abs(d1))
    out = np.where(same, out, cross)
    return float(np.sum(out))
