"""Run configuration: dataclass sections, presets and JSON overrides."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import SURROGATE_REL_UNCERTAINTY, SplitSpec
from .ensemble import EnsembleSpec
from .model import NetworkArch, TrainConfig
from .perturb import UncertaintySpec, relative_to_log10_sigma

GENERATORS = ("simple-regression", "autoconversion-surrogate", "csv")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    generator: str = "simple-regression"
    n: int = 2000
    params: dict = field(default_factory=dict)
    csv_path: str | None = None
    output_columns: list | None = None
    log10_columns: list | None = None
    split: list = field(default_factory=lambda: [0.8, 0.0, 0.2])
    shuffle: bool = True
    # fraction of the training split held out for early stopping when the
    # split itself has no validation part
    val_from_train: float = 0.1


@dataclass
class UncertaintyConfig:
    input_sigma: list | None = None
    output_sigma: list | None = None
    # relative uncertainties (0.3 = 30%), converted to log10-space sigmas
    input_rel: list | None = None
    output_rel: list | None = None


@dataclass
class ModelConfig:
    family: str = "parametric-basis"
    widths: list | None = None
    activation: str = "tanh"
    basis_exponents: list | None = None
    basis_scales: list | None = None
    train: dict = field(default_factory=dict)


@dataclass
class EnsembleConfig:
    n_x: int = 20
    n_x1: int = 20
    n_x2: int = 20
    n_w: int = 20
    target_tol: float = 0.01
    # box half-width as a multiple of the input sigma, unless radius is given
    radius_sigmas: float = 1.0
    radius: list | None = None
    mode: str = "residual-shift"
    empty_policy: str = "skip"
    target_mode: str = "mean"
    max_nonconverged: float = 0.25
    perturb_train_outputs: bool = True
    perturb_test_outputs: bool = True
    input_sampling: str = "stratified"


@dataclass
class BaselinesConfig:
    bagging_n: int = 20
    bagging_bootstrap: bool = False
    dropout_p: float = 0.1
    dropout_n: int = 1000
    quantile_levels: list = field(default_factory=lambda: [round(0.05 * i, 2) for i in range(1, 20)])
    quantile_window_sigmas: float = 10.0


@dataclass
class OutputConfig:
    bins: int = 80
    bin_width: float | None = None
    range_pad: float = 0.05
    inputs: list | None = None
    # when ``inputs`` is empty, this many rows are drawn from the test split
    n_test_inputs: int = 10
    decompose_input: list | None = None
    toggles: list = field(default_factory=lambda: [
        "input,train,test,weights,model",
        "weights",
        "input,model",
        "",
    ])


@dataclass
class RunConfig:
    name: str = "toy"
    seed: int = 0
    workers: int | None = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    baselines: BaselinesConfig = field(default_factory=BaselinesConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # ---- derived objects

    def split_spec(self):
        tr, va, te = self.dataset.split
        return SplitSpec(tr, va, te, seed=self.seed, shuffle=self.dataset.shuffle)

    def uncertainty_spec(self, n_inputs, n_outputs):
        u = self.uncertainty
        if u.input_rel is not None or u.output_rel is not None:
            conv = lambda rs: [0.0 if r == 0 else relative_to_log10_sigma(r) for r in rs]
            spec = UncertaintySpec(conv(u.input_rel or [0.0] * n_inputs), conv(u.output_rel or [0.0] * n_outputs), "log10")
        else:
            spec = UncertaintySpec(u.input_sigma or [0.0] * n_inputs, u.output_sigma or [0.0] * n_outputs)
        if spec.input_sigma.size != n_inputs or spec.output_sigma.size != n_outputs:
            raise ConfigError(
                f"uncertainty has {spec.input_sigma.size} input / {spec.output_sigma.size} output sigmas, "
                f"data has {n_inputs} / {n_outputs} columns"
            )
        return spec

    def arch(self, n_inputs=None, n_outputs=1):
        m = self.model
        if m.family == "mlp":
            widths = list(m.widths)
            if n_inputs is not None and widths[0] != n_inputs:
                raise ConfigError(f"model input width {widths[0]} but data has {n_inputs} inputs")
            return NetworkArch.mlp(widths, m.activation)
        return NetworkArch.basis(m.basis_exponents, m.basis_scales, n_outputs)

    def train_config(self, **over):
        kw = dict(self.model.train)
        kw.setdefault("rng_seed", self.seed)
        kw.update(over)
        return TrainConfig(**kw)

    def ensemble_spec(self, input_spec: UncertaintySpec):
        e = self.ensemble
        radius = e.radius if e.radius is not None else (e.radius_sigmas * input_spec.input_sigma).tolist()
        return EnsembleSpec(
            n_x=e.n_x, n_x1=e.n_x1, n_x2=e.n_x2, n_w=e.n_w, target_tol=e.target_tol,
            neighborhood_radius=tuple(radius), bins=self.output.bins, bin_width=self.output.bin_width,
            range_pad=self.output.range_pad, mode=e.mode, empty_policy=e.empty_policy,
            target_mode=e.target_mode, max_nonconverged=e.max_nonconverged,
            perturb_train_outputs=e.perturb_train_outputs, perturb_test_outputs=e.perturb_test_outputs,
            input_sampling=e.input_sampling,
            seed=self.seed,
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    def validate(self):
        """Raise ConfigError on any inconsistency; returns self."""
        d = self.dataset
        if d.generator not in GENERATORS:
            raise ConfigError(f"dataset.generator must be one of {GENERATORS}")
        if d.generator == "csv" and not d.csv_path:
            raise ConfigError("dataset.csv_path is required for the csv generator")
        if d.n < 1:
            raise ConfigError("dataset.n must be >= 1")
        if not 0 <= d.val_from_train < 1:
            raise ConfigError("dataset.val_from_train must be in [0, 1)")
        m = self.model
        if m.family not in ("mlp", "parametric-basis"):
            raise ConfigError("model.family must be 'mlp' or 'parametric-basis'")
        if m.family == "mlp" and not m.widths:
            raise ConfigError("model.widths is required for an mlp")
        if m.family == "parametric-basis" and not m.basis_exponents:
            raise ConfigError("model.basis_exponents is required for a parametric-basis model")
        if self.ensemble.radius_sigmas <= 0:
            raise ConfigError("ensemble.radius_sigmas must be positive")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.split_spec()
            self.arch()
            self.train_config()
            self.ensemble_spec(UncertaintySpec([1.0], [1.0]))
            for t in self.output.toggles:
                parse_toggles(t)
            np.asarray(self.baselines.quantile_levels, dtype=float)
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.baselines.bagging_n < 2:
            raise ConfigError("baselines.bagging_n must be >= 2")
        if not 0 <= self.baselines.dropout_p < 1:
            raise ConfigError("baselines.dropout_p must be in [0, 1)")
        return self


TOGGLE_NAMES = ("input", "train", "test", "weights", "model")


def parse_toggles(text):
    """'input,model' -> Toggles with only those sources on; '' -> all off."""
    from .ensemble import Toggles

    on = {t.strip() for t in text.split(",") if t.strip()}
    bad = on - set(TOGGLE_NAMES)
    if bad:
        raise ConfigError(f"unknown uncertainty sources {sorted(bad)}; choose from {TOGGLE_NAMES}")
    return Toggles(**{k: k in on for k in TOGGLE_NAMES})


# ---------------------------------------------------------------------------
# presets


def toy_preset():
    return RunConfig(
        name="toy",
        dataset=DatasetConfig(generator="simple-regression", n=2000, split=[0.8, 0.0, 0.2], val_from_train=0.1),
        uncertainty=UncertaintyConfig(input_sigma=[0.3], output_sigma=[0.3]),
        model=ModelConfig(
            family="parametric-basis",
            basis_exponents=[[4], [1], [0]],
            basis_scales=[256.0, 4.0, 1.0],
            train={"learning_rate": 0.05, "batch_size": 64, "max_epochs": 2000, "smoothing_window": 50},
        ),
        ensemble=EnsembleConfig(target_mode="per-replica"),
        baselines=BaselinesConfig(),
        output=OutputConfig(inputs=[[-2.0], [2.0], [5.0]], decompose_input=[2.0]),
    )


def surrogate_preset():
    names = ("qc", "Nc", "qr", "Nr")
    return RunConfig(
        name="surrogate",
        dataset=DatasetConfig(generator="autoconversion-surrogate", n=50000, split=[0.6, 0.2, 0.2], val_from_train=0.0),
        uncertainty=UncertaintyConfig(
            input_rel=[SURROGATE_REL_UNCERTAINTY[k] for k in names],
            output_rel=[SURROGATE_REL_UNCERTAINTY["autoconv"]],
        ),
        model=ModelConfig(
            family="mlp",
            widths=[4] + [16] * 6 + [1],
            activation="tanh",
            train={"learning_rate": 0.01, "batch_size": 64, "max_epochs": 300, "smoothing_window": 30},
        ),
        ensemble=EnsembleConfig(n_x=100, radius_sigmas=2.0, target_mode="mean"),
        baselines=BaselinesConfig(),
        output=OutputConfig(inputs=None, n_test_inputs=10),
    )


PRESETS = {"toy": toy_preset, "surrogate": surrogate_preset}


def _merge(obj, overrides, path):
    for key, val in overrides.items():
        if not hasattr(obj, key) or key.startswith("_"):
            raise ConfigError(f"unknown config key {path}{key}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur):
            if not isinstance(val, dict):
                raise ConfigError(f"{path}{key} must be an object")
            _merge(cur, val, f"{path}{key}.")
        elif isinstance(cur, dict) and isinstance(val, dict):
            merged = dict(cur)
            merged.update(val)
            setattr(obj, key, merged)
        else:
            setattr(obj, key, copy.deepcopy(val))


def from_dict(d):
    """Build a config from a document ``{"preset": name, ...overrides}``."""
    d = dict(d)
    preset = d.pop("preset", None) or d.get("name", "toy")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[preset]()
    _merge(cfg, d, "")
    return cfg.validate()


def load_config(path=None, preset="toy"):
    if path is None:
        return PRESETS[preset]().validate()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(doc)
