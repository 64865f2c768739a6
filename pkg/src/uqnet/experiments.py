"""End-to-end experiment drivers shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import bagging_degeneracy_report, bagging_predict, quantile_fit_local, quantile_pdf, train_bagging
from .config import RunConfig
from .datasets import SplitSpec, gen_autoconversion_surrogate, gen_simple_regression, split
from .ensemble import (
    EnsembleSpec,
    Toggles,
    assemble_pdf,
    build_base_ensemble,
    build_weight_ensemble,
    compute_target_loss,
    decompose_uncertainty,
)
from .model import train_early_stop
from .perturb import PerturbedDatasetSet

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Prepared:
    cfg: RunConfig
    train: object
    fit: object
    val: object
    test: object
    w0: object
    trace: object
    input_spec: object
    spec: EnsembleSpec
    timings: dict = field(default_factory=dict)

    @property
    def arch(self):
        return self.w0.arch

    def train_config(self):
        return self.cfg.train_config()


def prepare(cfg: RunConfig):
    """Generate the data, split it and train w0 with early stopping."""
    t = time.perf_counter()
    d = cfg.dataset
    if d.generator == "simple-regression":
        ds, _ = gen_simple_regression(d.n, seed=cfg.seed, **d.params)
    elif d.generator == "autoconversion-surrogate":
        ds = gen_autoconversion_surrogate(d.n, seed=cfg.seed)
    else:
        raise ValueError("experiments only drive the built-in generators")
    train, val, test = split(ds, cfg.split_spec())
    fit = train
    if val is None:
        f = d.val_from_train
        fit, _, val = split(train, SplitSpec(1 - f, 0.0, f, seed=cfg.seed))
    arch = cfg.arch(ds.n_inputs, ds.n_outputs)
    w0, trace = train_early_stop(fit, val, arch, cfg.train_config())
    us = cfg.uncertainty_spec(ds.n_inputs, ds.n_outputs)
    spec = cfg.ensemble_spec(us)
    return Prepared(cfg, train, fit, val, test, w0, trace, us, spec, {"w0": time.perf_counter() - t})


def perturbed_sets(prep: Prepared, spec=None):
    spec = spec or prep.spec
    ptr = PerturbedDatasetSet(prep.train, prep.input_spec, spec.n_x1, spec.perturb_train_outputs, prep.cfg.seed)
    pte = PerturbedDatasetSet(prep.test, prep.input_spec, spec.n_x2, spec.perturb_test_outputs, prep.cfg.seed + 1)
    return ptr, pte


def run_method(prep: Prepared, inputs, spec=None, workers=1):
    """Target loss, weight ensemble and one predictive pdf per input."""
    spec = spec or prep.spec
    ptr, pte = perturbed_sets(prep, spec)
    t = time.perf_counter()
    target = compute_target_loss(prep.w0, ptr, prep.train_config().loss_sigma_f)
    ens = build_weight_ensemble(ptr, prep.arch, prep.train_config(), target, spec, prep.w0, workers)
    t_ens = time.perf_counter() - t
    t = time.perf_counter()
    pdfs = [assemble_pdf(x, prep.input_spec, ens, pte, spec) for x in np.atleast_2d(inputs)]
    return {
        "target": target,
        "ensemble": ens,
        "pdfs": pdfs,
        "test_set": pte,
        "spec": spec,
        "timings": {"ensemble": t_ens, "pdfs": time.perf_counter() - t},
    }


def run_baselines(prep: Prepared, inputs, n_bagging=20, levels=None, window_sigmas=10.0):
    bag = train_bagging(prep.fit, prep.val, prep.arch, prep.train_config(), n_bagging)
    out = {"bagging": bag, "bagging_outputs": [], "quantile_pdfs": []}
    halfwidth = window_sigmas * prep.input_spec.input_sigma
    for x in np.atleast_2d(inputs):
        out["bagging_outputs"].append(bagging_predict(bag, x))
        kw = {} if levels is None else {"levels": levels}
        qm = quantile_fit_local(prep.train, x, halfwidth, **kw)
        out["quantile_pdfs"].append(quantile_pdf(qm, x).normalized())
    out["degeneracy"] = bagging_degeneracy_report(bag, prep.train, prep.train_config().loss_sigma_f)
    return out


WEIGHTS_ONLY = Toggles(input=False, train=False, test=False, weights=True, model=False)
INPUT_MODEL_ONLY = Toggles(input=True, train=False, test=False, weights=False, model=True)
FULL = Toggles()


def run_decomposition(prep: Prepared, x, ens, spec=None, toggle_sets=(FULL, WEIGHTS_ONLY, INPUT_MODEL_ONLY),
                      base=None, workers=1):
    """Predictive pdfs for several source toggles; returns (pdfs by tag, base ensemble)."""
    spec = spec or prep.spec
    if base is None and any(not t.train for t in toggle_sets):
        base = build_base_ensemble(prep.train, prep.arch, prep.train_config(), spec, prep.w0, workers)
    pdfs = {
        t.tag(): decompose_uncertainty(x, prep.input_spec, ens, prep.test, prep.input_spec, spec, t, base)
        for t in toggle_sets
    }
    return pdfs, base


def scaled_spec(spec: EnsembleSpec, factor):
    return replace(spec, n_x=spec.n_x * factor, n_x1=spec.n_x1 * factor, n_x2=spec.n_x2 * factor, n_w=spec.n_w * factor)


def pick_test_inputs(prep: Prepared, n, seed=None):
    """``n`` distinct test-split input rows chosen reproducibly."""
    rng = np.random.default_rng(np.random.SeedSequence([(prep.cfg.seed if seed is None else seed) & (2**64 - 1), 29]))
    idx = np.sort(rng.choice(len(prep.test), min(n, len(prep.test)), replace=False))
    return prep.test.inputs[idx]


def run_surrogate_pipeline(cfg: RunConfig, n_inputs=10, n_decompose=1, workers=1, out=None, echo=None):
    """w0, weight ensemble, one pdf per test input and the source decomposition
    for the first ``n_decompose`` inputs. Returns a summary dict."""
    t0 = time.perf_counter()
    say = echo or (lambda s: None)
    prep = prepare(cfg)
    say(f"w0: stop epoch {prep.trace.stop_epoch}, {prep.timings['w0']:.0f} s")
    X = pick_test_inputs(prep, n_inputs)
    res = run_method(prep, X, workers=workers)
    ens = res["ensemble"]
    say(f"ensemble: {len(ens)} members, {ens.converged_fraction:.0%} converged, "
        f"{res['timings']['ensemble']:.0f} s; pdfs {res['timings']['pdfs']:.0f} s")
    rows, pdfs, base = [], {}, None
    for i, (x, pdf) in enumerate(zip(X, res["pdfs"])):
        pdfs[f"pdf_{i:03d}"] = pdf
        row = {"index": i, "input": x.tolist(), **pdf.summary()}
        if i < n_decompose:
            dec, base = run_decomposition(prep, x, ens, toggle_sets=(WEIGHTS_ONLY, INPUT_MODEL_ONLY),
                                          base=base, workers=workers)
            for tag, d in dec.items():
                pdfs[f"pdf_{i:03d}_{tag}"] = d
            row["weights_only_var_ratio"] = dec[WEIGHTS_ONLY.tag()].var() / pdf.var()
            row["input_model_n_modes"] = dec[INPUT_MODEL_ONLY.tag()].n_modes()
        rows.append(row)
        say(str(row))
    summary = {
        "n_members": len(ens),
        "converged_fraction": ens.converged_fraction,
        "rows": rows,
        "total_seconds": time.perf_counter() - t0,
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for name, pdf in pdfs.items():
            pdf.to_csv(out / f"{name}.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary, pdfs
