"""Command-line interface.

Every command writes into ``<out>/<command>/vNNN/`` (a fresh version per run)
together with the fully resolved configuration, and reads its inputs from the
latest version of the commands it depends on unless a path is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (
    bagging_degeneracy_report,
    bagging_predict,
    mc_dropout_predict,
    quantile_fit_local,
    quantile_pdf,
    train_bagging,
)
from .config import ConfigError, PRESETS, RunConfig, load_config, parse_toggles
from .datasets import (
    Dataset,
    gen_autoconversion_surrogate,
    gen_simple_regression,
    load_csv,
    log10_transform,
    save_csv,
    split,
    SplitSpec,
)
from .ensemble import (
    WeightEnsemble,
    assemble_pdf,
    build_base_ensemble,
    build_weight_ensemble,
    compute_target_loss,
    decompose_uncertainty,
    importance_weights,
    TargetLoss,
)
from .errors import (
    EmptyNeighborhoodError,
    EnsembleUnusableError,
    NonFiniteError,
    TargetNotBracketedError,
    TrainingDivergedError,
)
from .model import LossTrace, load_network, loss, save_network, train_early_stop
from .pdf import pdf_from_samples
from .perturb import PerturbedDatasetSet

log = logging.getLogger("uqnet")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
NUMERIC_ERRORS = (NonFiniteError, TrainingDivergedError, TargetNotBracketedError, EnsembleUnusableError,
                  EmptyNeighborhoodError, FloatingPointError, OverflowError)


# --------------------------------------------------------------------------
# run directories


def new_version_dir(out, command):
    base = Path(out) / command
    base.mkdir(parents=True, exist_ok=True)
    nums = [int(p.name[1:]) for p in base.glob("v[0-9][0-9][0-9]") if p.name[1:].isdigit()]
    d = base / f"v{(max(nums) + 1 if nums else 1):03d}"
    d.mkdir()
    return d


def latest_version_dir(out, command):
    base = Path(out) / command
    dirs = sorted(p for p in base.glob("v[0-9][0-9][0-9]") if (p / "config.json").exists()) if base.exists() else []
    if not dirs:
        producer = "gen-data" if command == "data" else command
        raise FileNotFoundError(f"no '{command}' output under {out}; run `uqnet {producer}` first")
    return dirs[-1]


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def echo_config(d, cfg: RunConfig, **extra):
    write_json(Path(d) / "config.json", dict(cfg.to_dict(), version=__version__, **extra))


def write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# --------------------------------------------------------------------------
# shared loaders


def generate_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.dataset
    if d.generator == "simple-regression":
        ds, _ = gen_simple_regression(d.n, seed=cfg.seed, **d.params)
    elif d.generator == "autoconversion-surrogate":
        ds = gen_autoconversion_surrogate(d.n, seed=cfg.seed)
    else:
        ds = load_csv(d.csv_path, d.output_columns)
        if d.log10_columns:
            ds = log10_transform(ds, d.log10_columns)
    return ds


def split_dataset(cfg: RunConfig, ds):
    train, val, test = split(ds, cfg.split_spec())
    if test is None:
        raise ConfigError("the configured split has no test part")
    if val is None and cfg.dataset.val_from_train > 0:
        f = cfg.dataset.val_from_train
        train, _, val = split(train, SplitSpec(1 - f, 0.0, f, seed=cfg.seed, shuffle=True))
        log.info("early stopping uses a held-out %.0f%% slice of the training split", 100 * f)
    elif val is None:
        raise ConfigError("no validation data: set a validation split or dataset.val_from_train")
    return train, val, test


def load_splits(data_dir):
    d = Path(data_dir)
    return load_csv(d / "fit.csv"), load_csv(d / "val.csv"), load_csv(d / "test.csv"), load_csv(d / "train.csv")


def _resolve(args, command):
    explicit = getattr(args, f"{command.replace('-', '_')}_dir", None)
    return Path(explicit) if explicit else latest_version_dir(args.out, command)


def _perturbed_sets(cfg, train, test, spec):
    us = cfg.uncertainty_spec(train.n_inputs, train.n_outputs)
    ptr = PerturbedDatasetSet(train, us, spec.n_x1, spec.perturb_train_outputs, cfg.seed)
    pte = PerturbedDatasetSet(test, us, spec.n_x2, spec.perturb_test_outputs, cfg.seed + 1)
    return us, ptr, pte


def _inputs(cfg, args, test, n_inputs):
    if getattr(args, "inputs", None):
        ds_rows = np.loadtxt(args.inputs, delimiter=",", skiprows=1, ndmin=2)
        return ds_rows[:, :n_inputs]
    if cfg.output.inputs:
        X = np.atleast_2d(np.asarray(cfg.output.inputs, dtype=float))
        if X.shape[1] != n_inputs:
            raise ConfigError(f"output.inputs rows have {X.shape[1]} values, data has {n_inputs} inputs")
        return X
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & (2**64 - 1), 29]))
    idx = np.sort(rng.choice(len(test), min(cfg.output.n_test_inputs, len(test)), replace=False))
    return test.inputs[idx]


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg, args):
    out = new_version_dir(args.out, "data")
    echo_config(out, cfg)
    ds = generate_dataset(cfg)
    train_full, _, _ = split(ds, cfg.split_spec())
    fit, val, test = split_dataset(cfg, ds)
    meta = {"seed": cfg.seed, "generator": cfg.dataset.generator, "params": cfg.dataset.params}
    save_csv(ds, out / "dataset.csv", **meta)
    save_csv(train_full, out / "train.csv", **meta, part="train")
    save_csv(fit, out / "fit.csv", **meta, part="fit")
    save_csv(val, out / "val.csv", **meta, part="val")
    save_csv(test, out / "test.csv", **meta, part="test")
    print(f"wrote {len(ds)} samples ({len(train_full)} train / {len(val)} val / {len(test)} test) to {out}")
    return out


def cmd_train(cfg, args):
    data_dir = _resolve(args, "data")
    fit, val, _, _ = load_splits(data_dir)
    out = new_version_dir(args.out, "train")
    echo_config(out, cfg, data_dir=str(data_dir))
    arch = cfg.arch(fit.n_inputs, fit.n_outputs)
    tcfg = cfg.train_config()
    w0, trace = train_early_stop(fit, val, arch, tcfg)
    final = loss(w0, fit.inputs, fit.outputs, tcfg.loss_sigma_f)
    save_network(w0, out / "w0.json", seed=tcfg.rng_seed, final_loss=final,
                 stop_epoch=trace.stop_epoch, stabilized=trace.stabilized)
    trace.to_csv(out / "loss_trace.csv")
    print(f"w0 trained: stop epoch {trace.stop_epoch}, training loss {final:.6g} -> {out}")
    return out


def cmd_build_ensemble(cfg, args):
    data_dir = _resolve(args, "data")
    train_dir = _resolve(args, "train")
    _, _, test, train = load_splits(data_dir)
    w0, _ = load_network(train_dir / "w0.json")
    us = cfg.uncertainty_spec(train.n_inputs, train.n_outputs)
    spec = cfg.ensemble_spec(us)
    _, ptr, _ = _perturbed_sets(cfg, train, test, spec)
    out = _resumable_dir(args.out, cfg, data_dir, train_dir)
    target = compute_target_loss(w0, ptr, cfg.train_config().loss_sigma_f)
    write_json(out / "target.json", {"j0": target.j0, "replica_losses": list(target.replica_losses),
                                     "target_mode": spec.target_mode})
    ens = build_weight_ensemble(ptr, w0.arch, cfg.train_config(), target, spec, w0,
                                workers=args.workers or 1, directory=out / "members")
    rep = importance_weights(ens, converged_only=True)
    write_json(out / "uniformity.json", dict(rep.to_dict(), converged_fraction=ens.converged_fraction))
    write_rows(out / "member_losses.csv", ["j1", "k", "target", "achieved_loss", "converged", "weight"],
               [(m.j1, m.k, m.target, m.achieved_loss, int(m.converged),
                 _weight_of(rep, m)) for m in ens.ordered()])
    print(f"{len(ens)} members, {ens.converged_fraction:.0%} converged, "
          f"max deviation from uniform {rep.deviation_from_uniform:.2%} -> {out}")
    return out


def _weight_of(rep, m):
    ids = {mid: i for i, mid in enumerate(rep.member_ids)}
    i = ids.get((m.j1, m.k))
    return float(rep.weights[i]) if i is not None else 0.0


def _resumable_dir(out_root, cfg, data_dir, train_dir):
    """Reuse the latest ensemble directory if it is incomplete and was
    started with the same configuration; otherwise start a new version."""
    try:
        last = latest_version_dir(out_root, "build-ensemble")
    except FileNotFoundError:
        last = None
    probe = dict(cfg.to_dict(), version=__version__, data_dir=str(data_dir), train_dir=str(train_dir))
    if last is not None:
        man = last / "members" / "manifest.json"
        same = json.loads((last / "config.json").read_text()) == json.loads(json.dumps(probe, default=_jsonable))
        if same and (not man.exists() or not json.loads(man.read_text()).get("complete")):
            log.info("resuming interrupted ensemble build in %s", last)
            return last
    d = new_version_dir(out_root, "build-ensemble")
    echo_config(d, cfg, data_dir=str(data_dir), train_dir=str(train_dir))
    return d


def _load_ensemble(args):
    ens_dir = _resolve(args, "build-ensemble")
    return ens_dir, WeightEnsemble.load(ens_dir / "members")


def cmd_predict(cfg, args):
    data_dir = _resolve(args, "data")
    ens_dir, ens = _load_ensemble(args)
    _, _, test, train = load_splits(data_dir)
    us = cfg.uncertainty_spec(train.n_inputs, train.n_outputs)
    spec = cfg.ensemble_spec(us)
    _, _, pte = _perturbed_sets(cfg, train, test, spec)
    X = _inputs(cfg, args, test, train.n_inputs)
    out = new_version_dir(args.out, "predict")
    echo_config(out, cfg, data_dir=str(data_dir), ensemble_dir=str(ens_dir))
    rows, summaries = [], []
    for i, x in enumerate(X):
        pdf = assemble_pdf(x, us, ens, pte, spec)
        pdf.to_csv(out / f"pdf_{i:03d}.csv", w0_prediction=float(ens.w0(x)[0]) if ens.w0 else None)
        s = pdf.summary()
        summaries.append(dict(s, index=i, input=x.tolist()))
        rows.append([i, *x, s["mean"], s["std"], s["skewness"], s["n_modes"], int(s["bimodal"])])
    write_json(out / "summary.json", summaries)
    write_rows(out / "summary.csv", ["index", *train.input_names, "mean", "std", "skewness", "n_modes", "bimodal"], rows)
    print(f"{len(X)} predictive densities -> {out}")
    return out


def cmd_decompose(cfg, args):
    data_dir = _resolve(args, "data")
    train_dir = _resolve(args, "train")
    ens_dir, ens = _load_ensemble(args)
    _, _, test, train = load_splits(data_dir)
    us = cfg.uncertainty_spec(train.n_inputs, train.n_outputs)
    spec = cfg.ensemble_spec(us)
    x = np.atleast_1d(np.asarray(args.input if args.input else (cfg.output.decompose_input or _inputs(cfg, args, test, train.n_inputs)[0]), dtype=float))
    if x.size != train.n_inputs:
        raise ConfigError(f"decomposition input has {x.size} values, data has {train.n_inputs} inputs")
    toggle_sets = [parse_toggles(t) for t in (args.toggles or cfg.output.toggles)]
    out = new_version_dir(args.out, "decompose")
    echo_config(out, cfg, data_dir=str(data_dir), ensemble_dir=str(ens_dir), input=x.tolist())
    base = None
    if any(not t.train for t in toggle_sets):
        w0, _ = load_network(train_dir / "w0.json")
        base = build_base_ensemble(train, w0.arch, cfg.train_config(), spec, w0, args.workers or 1)
        base.save(out / "base_members")
    rows = []
    for t in toggle_sets:
        pdf = decompose_uncertainty(x, us, ens, test, us, spec, t, base)
        pdf.to_csv(out / f"pdf_{t.tag()}.csv", toggles=t.to_dict())
        s = pdf.summary()
        rows.append([t.tag(), s["mean"], s["std"], s["std"] ** 2, s["n_modes"]])
    write_rows(out / "summary.csv", ["toggles", "mean", "std", "variance", "n_modes"], rows)
    print(f"{len(rows)} source-decomposition densities -> {out}")
    return out


def cmd_baselines(cfg, args):
    data_dir = _resolve(args, "data")
    fit, val, test, train = load_splits(data_dir)
    us = cfg.uncertainty_spec(train.n_inputs, train.n_outputs)
    X = _inputs(cfg, args, test, train.n_inputs)
    b = cfg.baselines
    out = new_version_dir(args.out, "baselines")
    echo_config(out, cfg, data_dir=str(data_dir))
    arch = cfg.arch(train.n_inputs, train.n_outputs)
    tcfg = cfg.train_config()
    bag = train_bagging(fit, val, arch, tcfg, b.bagging_n, b.bagging_bootstrap)
    rep = bagging_degeneracy_report(bag, train, tcfg.loss_sigma_f)
    write_json(out / "degeneracy.json", rep.to_dict())
    drop_net, _ = train_early_stop(fit, val, arch, replace(tcfg, dropout=b.dropout_p))
    bag_rows, drop_rows, rows = [], [], []
    halfwidth = b.quantile_window_sigmas * np.where(us.input_sigma > 0, us.input_sigma, 1.0)
    for i, x in enumerate(X):
        bp = bagging_predict(bag, x)
        bag_rows += [(i, k, v) for k, v in enumerate(bp)]
        dp = mc_dropout_predict(drop_net, x, b.dropout_p, b.dropout_n, cfg.seed + i)
        drop_rows += [(i, k, v) for k, v in enumerate(dp)]
        pdf_from_samples(dp, cfg.output.bins, cfg.output.bin_width, cfg.output.range_pad,
                         input=x.tolist(), method="mc-dropout").to_csv(out / f"dropout_pdf_{i:03d}.csv")
        qm = quantile_fit_local(train, x, halfwidth, b.quantile_levels)
        # written renormalized; the covered level range stays in the provenance
        qp = quantile_pdf(qm, x).normalized()
        qp.to_csv(out / f"quantile_pdf_{i:03d}.csv", levels=list(map(float, qm.levels)),
                  values=qm.values(x).tolist())
        rows.append([i, *x, bp.mean(), bp.std(), dp.mean(), dp.std(), qp.mean(), qp.std()])
    write_rows(out / "bagging_samples.csv", ["input_index", "member_id", "output"], bag_rows)
    write_rows(out / "dropout_samples.csv", ["input_index", "pass_id", "output"], drop_rows)
    write_rows(out / "summary.csv", ["index", *train.input_names, "bagging_mean", "bagging_std",
                                     "dropout_mean", "dropout_std", "quantile_mean", "quantile_std"], rows)
    print(f"baselines for {len(X)} inputs, bagging max weight {rep.max_weight:.6g} -> {out}")
    return out


def cmd_report(cfg, args):
    """Collect diagnostics from the latest run of each command."""
    out = new_version_dir(args.out, "report")
    echo_config(out, cfg)
    report = {}
    for command in ("data", "train", "build-ensemble", "predict", "decompose", "baselines"):
        try:
            d = latest_version_dir(args.out, command)
        except FileNotFoundError:
            continue
        entry = {"directory": str(d)}
        if command == "train":
            w0 = json.loads((d / "w0.json").read_text())
            tr = LossTrace.from_csv(d / "loss_trace.csv")
            entry.update(final_loss=w0["final_loss"], stop_epoch=w0.get("stop_epoch"), epochs_run=len(tr.epochs))
        elif command == "build-ensemble":
            entry.update(target=json.loads((d / "target.json").read_text())["j0"],
                         uniformity=json.loads((d / "uniformity.json").read_text()))
        elif command == "predict":
            entry.update(summary=json.loads((d / "summary.json").read_text()))
        elif command == "baselines":
            entry.update(degeneracy=json.loads((d / "degeneracy.json").read_text()))
        elif command == "decompose":
            with (d / "summary.csv").open() as fh:
                entry.update(summary=list(csv.DictReader(fh)))
        report[command] = entry
    write_json(out / "report.json", report)
    print(json.dumps(report, indent=2, sort_keys=True, default=_jsonable))
    return out


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "build-ensemble": cmd_build_ensemble,
    "predict": cmd_predict,
    "decompose": cmd_decompose,
    "baselines": cmd_baselines,
    "report": cmd_report,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config: {\"preset\": name, ...section overrides}")
    common.add_argument("--preset", choices=sorted(PRESETS), default="toy", help="used when --config is absent")
    common.add_argument("--out", default="runs", help="output root directory (default: runs)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--workers", type=int, help="parallel worker processes (default: available CPUs)")
    common.add_argument("--data-dir", help="dataset directory (default: latest gen-data output)")
    common.add_argument("--train-dir", help="baseline-network directory (default: latest train output)")
    common.add_argument("--build-ensemble-dir", help="ensemble directory (default: latest build-ensemble output)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="uqnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=COMMANDS[name].__doc__ and COMMANDS[name].__doc__.splitlines()[0])
        if name in ("predict", "baselines", "decompose"):
            sp.add_argument("--inputs", help="CSV of new inputs (header row, one input vector per row)")
        if name == "decompose":
            sp.add_argument("--input", type=float, nargs="+", help="the input vector to decompose")
            sp.add_argument("--toggles", nargs="+", help="source sets, e.g. 'input,model' 'weights' ''")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config, args.preset)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        # worker count is an execution detail; it never changes outputs
        args.workers = cfg.workers or os.cpu_count() or 1
        cfg.workers = None
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
