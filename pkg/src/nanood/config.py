"""Experiment configuration: YAML in, validated frozen sections out.

Unknown keys, wrong types and cross-section conflicts raise ConfigError
carrying the dotted key path. The digest is a SHA-256 of the canonical JSON
form of the fully resolved config, so two files that differ only in
formatting or in spelling out defaults share a digest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .data import OOD_KINDS
from .errors import ConfigError, InvalidParameter
from .net import Activation
from .scores import ScoreKind
from .train import LabelScheme, TrainConfig


@dataclass(frozen=True)
class DataSection:
    generator: str = "blobs"        # blobs | csv
    K: int = 8
    d: int = 32
    n_per_class: int = 313
    spread: float = 1.0
    separation: float = 6.0
    train_fraction: float = 0.8
    train_csv: str = ""
    test_csv: str = ""
    labeled: bool = True


@dataclass(frozen=True)
class ModelSection:
    hidden_dims: tuple = (128, 128, 128, 128, 1024)
    activation: str = "relu"
    bias: bool = False
    temperature: float = 0.1
    embed_dim: int | None = None
    input_norm: bool = True


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 200
    batch_size: int = 128
    lr0: float = 0.06
    momentum: float = 0.9
    weight_decay: float = 5e-4
    scheme: str = "S"
    augment_noise_sigma: float = 0.5
    augment_dropout: float = 0.1


@dataclass(frozen=True)
class OodSpec:
    kind: str
    n: int = 500
    name: str = ""
    variance_factor: float = 9.0
    shift: float = 4.0
    box_scale: float = 1.5
    csv: str = ""

    @property
    def label(self):
        return self.name or self.kind


@dataclass(frozen=True)
class ScoresSection:
    kinds: tuple = ("msp", "energy", "maxlogit", "kl_uniform", "mahalanobis", "knn", "ssd",
                    "residual", "l1", "lp:p=2", "inv_l0", "nan", "embedding", "hidden_conf",
                    "fused:knn", "fused:ssd", "react+nan")
    ssd_clusters: int | None = None
    residual_dim: int | None = None
    react_percentile: float = 90.0
    shrinkage: float = 0.05


@dataclass(frozen=True)
class EvalSection:
    ood_sets: tuple = (OodSpec("uniform_box"), OodSpec("shifted_gaussian"),
                       OodSpec("scaled_gaussian"), OodSpec("interpolated"))
    checkpoint_every: int = 20
    trend_ood: str = "uniform_box"


@dataclass(frozen=True)
class OutputSection:
    directory: str = "runs"
    formats: tuple = ("csv", "json", "svg")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    scores: ScoresSection = field(default_factory=ScoresSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    def train_config(self, checkpoint_every=None) -> TrainConfig:
        t = self.train
        return TrainConfig(t.epochs, t.batch_size, t.lr0, t.momentum, t.weight_decay,
                           LabelScheme.parse(t.scheme), t.augment_noise_sigma, t.augment_dropout,
                           self.seed, self.eval.checkpoint_every if checkpoint_every is None
                           else checkpoint_every)

    def to_dict(self):
        return _plain(asdict(self))

    def digest(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    @property
    def run_id(self):
        return f"{self.name}-{self.digest()[:12]}"


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_SECTIONS = {"data": DataSection, "model": ModelSection, "train": TrainSection,
             "scores": ScoresSection, "eval": EvalSection, "output": OutputSection}


def _coerce(value, default, path):
    """Check ``value`` against the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", path)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms like 1e-3 as strings
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", path)
        return tuple(value)
    return value


def _section(cls, raw, path):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"expected a mapping, got {type(raw).__name__}", path)
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", f"{path}.{unknown[0]}" if path else unknown[0])
    probe = OodSpec("uniform_box") if cls is OodSpec else cls()
    kwargs = {}
    for key, value in raw.items():
        kp = f"{path}.{key}" if path else key
        if cls is EvalSection and key == "ood_sets":
            if not isinstance(value, list) or not value:
                raise ConfigError("expected a non-empty list of OOD sets", kp)
            kwargs[key] = tuple(_ood_spec(v, f"{kp}[{i}]") for i, v in enumerate(value))
            continue
        default = getattr(probe, key)
        if default is None:
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f"expected an integer or null, got {value!r}", kp)
            kwargs[key] = value
        else:
            kwargs[key] = _coerce(value, default, kp)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc), path) from exc


def _ood_spec(raw, path):
    if isinstance(raw, str):
        raw = {"kind": raw}
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError("an OOD set needs a 'kind'", path)
    return _section(OodSpec, raw, path)


def _validate(cfg: ExperimentConfig):
    d, m, t, s, e = cfg.data, cfg.model, cfg.train, cfg.scores, cfg.eval
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative", "seed")
    if d.generator not in ("blobs", "csv"):
        raise ConfigError(f"generator must be 'blobs' or 'csv', got {d.generator!r}",
                          "data.generator")
    if d.generator == "csv" and not d.train_csv:
        raise ConfigError("csv generator needs train_csv", "data.train_csv")
    if d.generator == "blobs":
        if d.K < 1 or d.d < 2 or d.n_per_class < 1:
            raise ConfigError("blobs need K >= 1, d >= 2, n_per_class >= 1", "data")
    if not 0 < d.train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)", "data.train_fraction")
    try:
        scheme = LabelScheme.parse(t.scheme)
    except InvalidParameter as exc:
        raise ConfigError(str(exc), "train.scheme") from exc
    if scheme is LabelScheme.S and d.generator == "csv" and not d.labeled:
        raise ConfigError("scheme 'S' needs labels but the data generator is unlabeled",
                          "train.scheme")
    if not m.hidden_dims or any(isinstance(h, bool) or not isinstance(h, int) or h < 1
                                for h in m.hidden_dims):
        raise ConfigError("hidden_dims must be a non-empty list of positive integers",
                          "model.hidden_dims")
    try:
        Activation.parse(m.activation)
    except InvalidParameter as exc:
        raise ConfigError(str(exc), "model.activation") from exc
    if not m.temperature > 0:
        raise ConfigError("temperature must be positive", "model.temperature")
    try:
        cfg.train_config()
    except InvalidParameter as exc:
        raise ConfigError(str(exc), "train") from exc
    for i, k in enumerate(s.kinds):
        try:
            ScoreKind.parse(k)
        except InvalidParameter as exc:
            raise ConfigError(str(exc), f"scores.kinds[{i}]") from exc
    if not 0 <= s.react_percentile <= 100:
        raise ConfigError("react_percentile must lie in [0, 100]", "scores.react_percentile")
    if not 0 <= s.shrinkage <= 1:
        raise ConfigError("shrinkage must lie in [0, 1]", "scores.shrinkage")
    labels = set()
    for i, o in enumerate(e.ood_sets):
        kp = f"eval.ood_sets[{i}]"
        if o.kind not in OOD_KINDS + ("csv",):
            raise ConfigError(f"unknown OOD kind {o.kind!r}", f"{kp}.kind")
        if o.kind == "csv" and not o.csv:
            raise ConfigError("csv OOD set needs a path", f"{kp}.csv")
        if o.n < 1:
            raise ConfigError("n must be >= 1", f"{kp}.n")
        if o.label in labels:
            raise ConfigError(f"duplicate OOD set name {o.label!r}", f"{kp}.name")
        labels.add(o.label)
    if e.trend_ood not in labels:
        raise ConfigError(f"trend_ood {e.trend_ood!r} is not one of the OOD sets",
                          "eval.trend_ood")
    bad = set(cfg.output.formats) - {"csv", "json", "svg"}
    if bad:
        raise ConfigError(f"unknown output format {sorted(bad)[0]!r}", "output.formats")


def config_from_dict(raw) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", "")
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", unknown[0])
    kwargs = {}
    if "name" in raw:
        kwargs["name"] = _coerce(raw["name"], "", "name")
    if "seed" in raw:
        kwargs["seed"] = _coerce(raw["seed"], 0, "seed")
    for key, cls in _SECTIONS.items():
        if key in raw:
            kwargs[key] = _section(cls, raw[key], key)
    cfg = ExperimentConfig(**kwargs)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    """Load a YAML config from a path, or a bundled config by name (e.g. ``smoke``)."""
    path = Path(path)
    if not path.exists():
        named = {p.stem: p for p in bundled_configs()}
        path = named.get(path.stem if path.suffix == ".yaml" else str(path), path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", "") from exc
    return config_from_dict(raw)


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, seed=int(seed))


def bundled_configs():
    """Paths of the configs shipped with the package."""
    root = Path(__file__).parent / "configs"
    return sorted(root.glob("*.yaml"))
