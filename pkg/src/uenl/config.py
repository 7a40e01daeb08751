"""Experiment configuration: a strict JSON schema with defaults, validation,
and dotted-path overrides.

Unknown keys are rejected at every level so a typo cannot silently fall back
to a default. The KL weight is spelled "lambda" in JSON and on the command
line; in code it is ``kl_weight``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import BackboneConfig, UncertaintyHeadConfig

__all__ = [
    "ExperimentConfig",
    "BackboneSpec",
    "ScoringSpec",
    "DataSpec",
    "GaussianClustersSpec",
    "CsvIdSpec",
    "IdxIdSpec",
    "UniformOodSpec",
    "ShiftedGaussianOodSpec",
    "GaussianNoiseOodSpec",
    "CsvOodSpec",
    "IdxOodSpec",
    "apply_overrides",
    "load_config",
]

METHODS = ("uenl", "ce", "logitnorm")
KL_FORMS = ("variance", "std")
SCORE_METHOD_NAMES = ("msp", "energy", "odin", "uncertainty")


def _check_keys(d: dict, allowed, context: str) -> None:
    if not isinstance(d, dict):
        raise ValueError(f"{context} must be a JSON object, got {type(d).__name__}")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ValueError(f"unknown key(s) in {context}: {', '.join(unknown)}")


def _require(d: dict, key: str, context: str):
    if key not in d:
        raise ValueError(f"missing required key {key!r} in {context}")
    return d[key]


def _positive(value, key: str):
    if not value > 0:
        raise ValueError(f"{key} must be positive, got {value}")
    return value


def _non_negative(value, key: str):
    if value < 0:
        raise ValueError(f"{key} must be non-negative, got {value}")
    return value


@dataclass(frozen=True)
class BackboneSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    use_batchnorm: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        _check_keys(d, ("input_dim", "hidden_dims", "num_classes", "use_batchnorm"), "backbone")
        return cls(
            input_dim=int(_require(d, "input_dim", "backbone")),
            hidden_dims=tuple(int(h) for h in _require(d, "hidden_dims", "backbone")),
            num_classes=int(_require(d, "num_classes", "backbone")),
            use_batchnorm=bool(d.get("use_batchnorm", True)),
        )

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "num_classes": self.num_classes,
            "use_batchnorm": self.use_batchnorm,
        }


@dataclass(frozen=True)
class ScoringSpec:
    methods: tuple[str, ...] = ("msp", "energy", "odin", "uncertainty")
    energy_temperature: float = 0.1
    odin_temperature: float = 1000.0
    odin_epsilon: float = 0.0014
    histogram_bins: int = 30

    def __post_init__(self):
        for m in self.methods:
            if m not in SCORE_METHOD_NAMES:
                raise ValueError(f"unknown scoring method {m!r} (expected one of {SCORE_METHOD_NAMES})")
        if not self.methods:
            raise ValueError("scoring.methods must name at least one method")
        _positive(self.energy_temperature, "scoring.energy_temperature")
        _positive(self.odin_temperature, "scoring.odin_temperature")
        _non_negative(self.odin_epsilon, "scoring.odin_epsilon")
        if self.histogram_bins < 1:
            raise ValueError("scoring.histogram_bins must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ScoringSpec":
        _check_keys(
            d,
            ("methods", "energy_temperature", "odin_temperature", "odin_epsilon", "histogram_bins"),
            "scoring",
        )
        kwargs = {}
        if "methods" in d:
            kwargs["methods"] = tuple(str(m) for m in d["methods"])
        for key in ("energy_temperature", "odin_temperature", "odin_epsilon"):
            if key in d:
                kwargs[key] = float(d[key])
        if "histogram_bins" in d:
            kwargs["histogram_bins"] = int(d["histogram_bins"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "methods": list(self.methods),
            "energy_temperature": self.energy_temperature,
            "odin_temperature": self.odin_temperature,
            "odin_epsilon": self.odin_epsilon,
            "histogram_bins": self.histogram_bins,
        }


@dataclass(frozen=True)
class GaussianClustersSpec:
    dim: int
    num_classes: int
    n_train_per_class: int
    n_test_per_class: int
    sigma: float
    seed: int
    mean_scale: float = 1.0

    def __post_init__(self):
        _positive(self.dim, "data.id.dim")
        _positive(self.n_train_per_class, "data.id.n_train_per_class")
        _positive(self.n_test_per_class, "data.id.n_test_per_class")
        _positive(self.sigma, "data.id.sigma")
        if self.num_classes < 2:
            raise ValueError("data.id.num_classes must be at least 2")


@dataclass(frozen=True)
class CsvIdSpec:
    train: str
    test: str
    has_labels: bool = True


@dataclass(frozen=True)
class IdxIdSpec:
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str


@dataclass(frozen=True)
class UniformOodSpec:
    name: str
    n: int
    low: float
    high: float
    seed: int


@dataclass(frozen=True)
class ShiftedGaussianOodSpec:
    name: str
    n: int
    offset: float
    sigma: float
    seed: int


@dataclass(frozen=True)
class GaussianNoiseOodSpec:
    name: str
    n: int
    seed: int


@dataclass(frozen=True)
class CsvOodSpec:
    name: str
    path: str


@dataclass(frozen=True)
class IdxOodSpec:
    name: str
    images: str


_ID_KINDS = {
    "gaussian_clusters": (
        GaussianClustersSpec,
        ("dim", "num_classes", "n_train_per_class", "n_test_per_class", "sigma", "seed", "mean_scale"),
    ),
    "csv": (CsvIdSpec, ("train", "test", "has_labels")),
    "idx": (IdxIdSpec, ("train_images", "train_labels", "test_images", "test_labels")),
}

_OOD_KINDS = {
    "uniform": (UniformOodSpec, ("name", "n", "low", "high", "seed")),
    "shifted_gaussian": (ShiftedGaussianOodSpec, ("name", "n", "offset", "sigma", "seed")),
    "gaussian_noise": (GaussianNoiseOodSpec, ("name", "n", "seed")),
    "csv": (CsvOodSpec, ("name", "path")),
    "idx": (IdxOodSpec, ("name", "images")),
}


def _parse_kinded(d: dict, kinds: dict, context: str, defaults: dict | None = None):
    kind = _require(d, "kind", context)
    if kind not in kinds:
        raise ValueError(f"unknown kind {kind!r} in {context} (expected one of {sorted(kinds)})")
    cls, allowed = kinds[kind]
    _check_keys(d, ("kind",) + allowed, context)
    kwargs = dict(defaults or {})
    kwargs.update({k: v for k, v in d.items() if k != "kind"})
    return cls(**kwargs)


def _kind_of(spec) -> str:
    for kind, (cls, _) in {**_ID_KINDS, **_OOD_KINDS}.items():
        if type(spec) is cls:
            return kind
    raise TypeError(f"not a data spec: {type(spec).__name__}")


def _spec_to_dict(spec) -> dict:
    d = {"kind": _kind_of(spec)}
    d.update(spec.__dict__)
    return d


@dataclass(frozen=True)
class DataSpec:
    id: GaussianClustersSpec | CsvIdSpec | IdxIdSpec
    ood: tuple = ()

    def __post_init__(self):
        names = [spec.name for spec in self.ood]
        if len(names) != len(set(names)):
            raise ValueError(f"ood set names must be unique, got {names}")

    @classmethod
    def from_dict(cls, d: dict) -> "DataSpec":
        _check_keys(d, ("id", "ood"), "data")
        id_spec = _parse_kinded(_require(d, "id", "data"), _ID_KINDS, "data.id")
        ood = []
        for i, entry in enumerate(d.get("ood", [])):
            kind = entry.get("kind") if isinstance(entry, dict) else None
            defaults = {"name": kind} if kind else None
            ood.append(_parse_kinded(entry, _OOD_KINDS, f"data.ood[{i}]", defaults))
        return cls(id=id_spec, ood=tuple(ood))

    def to_dict(self) -> dict:
        return {"id": _spec_to_dict(self.id), "ood": [_spec_to_dict(s) for s in self.ood]}


_TOP_LEVEL_KEYS = (
    "method",
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "lr_drop_epochs",
    "dropout",
    "delta",
    "lambda",
    "kl_form",
    "scalar_uncertainty",
    "temperature",
    "uhat_scale",
    "pinned_uhat",
    "bn_momentum",
    "bn_epsilon",
    "select_best_validation",
    "backbone",
    "data",
    "scoring",
)


@dataclass
class ExperimentConfig:
    """Everything a training or evaluation run depends on.

    Identical configs (plus identical seeds, which live inside) give
    byte-identical checkpoints and reports.
    """

    backbone: BackboneSpec
    data: DataSpec | None = None
    method: str = "uenl"
    seed: int = 0
    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_drop_epochs: tuple[int, ...] = (80, 140)
    dropout: float = 0.3
    delta: int = 32
    kl_weight: float = 0.1
    kl_form: str = "variance"
    scalar_uncertainty: bool = False
    temperature: float = 0.04
    uhat_scale: float = 1.0
    pinned_uhat: float | None = None
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5
    select_best_validation: bool = False
    scoring: ScoringSpec = field(default_factory=ScoringSpec)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r} (expected one of {METHODS})")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        _positive(self.lr, "lr")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        _non_negative(self.weight_decay, "weight_decay")
        if any(e < 0 for e in self.lr_drop_epochs):
            raise ValueError("lr_drop_epochs must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.delta < 1:
            raise ValueError("delta must be at least 1")
        _non_negative(self.kl_weight, "lambda")
        if self.kl_form not in KL_FORMS:
            raise ValueError(f"unknown kl_form {self.kl_form!r} (expected one of {KL_FORMS})")
        _positive(self.temperature, "temperature")
        _positive(self.uhat_scale, "uhat_scale")
        if self.pinned_uhat is not None:
            _positive(self.pinned_uhat, "pinned_uhat")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ValueError("bn_momentum must lie in (0, 1]")
        _positive(self.bn_epsilon, "bn_epsilon")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _check_keys(d, _TOP_LEVEL_KEYS, "config")
        if "backbone" not in d:
            raise ValueError("missing required key 'backbone' in config")
        kwargs: dict = {"backbone": BackboneSpec.from_dict(d["backbone"])}
        if d.get("data") is not None:
            kwargs["data"] = DataSpec.from_dict(d["data"])
        if "scoring" in d:
            kwargs["scoring"] = ScoringSpec.from_dict(d["scoring"])
        if "method" in d:
            kwargs["method"] = str(d["method"])
        for key in ("seed", "epochs", "batch_size", "delta"):
            if key in d:
                kwargs[key] = int(d[key])
        for key, attr in (
            ("lr", "lr"),
            ("momentum", "momentum"),
            ("weight_decay", "weight_decay"),
            ("dropout", "dropout"),
            ("lambda", "kl_weight"),
            ("temperature", "temperature"),
            ("uhat_scale", "uhat_scale"),
            ("bn_momentum", "bn_momentum"),
            ("bn_epsilon", "bn_epsilon"),
        ):
            if key in d:
                kwargs[attr] = float(d[key])
        if "lr_drop_epochs" in d:
            kwargs["lr_drop_epochs"] = tuple(int(e) for e in d["lr_drop_epochs"])
        if "kl_form" in d:
            kwargs["kl_form"] = str(d["kl_form"])
        if "scalar_uncertainty" in d:
            kwargs["scalar_uncertainty"] = bool(d["scalar_uncertainty"])
        if "pinned_uhat" in d:
            kwargs["pinned_uhat"] = None if d["pinned_uhat"] is None else float(d["pinned_uhat"])
        if "select_best_validation" in d:
            kwargs["select_best_validation"] = bool(d["select_best_validation"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "lr_drop_epochs": list(self.lr_drop_epochs),
            "dropout": self.dropout,
            "delta": self.delta,
            "lambda": self.kl_weight,
            "kl_form": self.kl_form,
            "scalar_uncertainty": self.scalar_uncertainty,
            "temperature": self.temperature,
            "uhat_scale": self.uhat_scale,
            "pinned_uhat": self.pinned_uhat,
            "bn_momentum": self.bn_momentum,
            "bn_epsilon": self.bn_epsilon,
            "select_best_validation": self.select_best_validation,
            "backbone": self.backbone.to_dict(),
            "data": self.data.to_dict() if self.data is not None else None,
            "scoring": self.scoring.to_dict(),
        }

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            input_dim=self.backbone.input_dim,
            hidden_dims=self.backbone.hidden_dims,
            num_classes=self.backbone.num_classes,
            dropout_rate=self.dropout,
            use_batchnorm=self.backbone.use_batchnorm,
            bn_momentum=self.bn_momentum,
            bn_epsilon=self.bn_epsilon,
        )

    def head_config(self) -> UncertaintyHeadConfig:
        return UncertaintyHeadConfig(
            embed_dim=self.backbone.hidden_dims[-1],
            delta=self.delta,
            scalar_u=self.scalar_uncertainty,
            bn_momentum=self.bn_momentum,
            bn_epsilon=self.bn_epsilon,
        )


def apply_overrides(d: dict, assignments) -> dict:
    """Apply "dotted.path=json_value" overrides to a raw config dict.

    Values parse as JSON when possible (numbers, lists, booleans, null) and
    fall back to plain strings. Returns a new dict; the input is untouched.
    """
    result = json.loads(json.dumps(d))
    for assignment in assignments:
        key, sep, raw_value = assignment.partition("=")
        if not sep or not key:
            raise ValueError(f"override {assignment!r} is not of the form key=value")
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        target = result
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                target[part] = {}
            target = target[part]
        target[parts[-1]] = value
    return result


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read a JSON config file and apply any key=value overrides."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from None
    if overrides:
        raw = apply_overrides(raw, overrides)
    return ExperimentConfig.from_dict(raw)
