"""Experiment configuration: a versioned YAML document, validated field by field.

The document is a nested mapping with blocks dataset / imbalance / model /
loss / train / eval. parse/dump round-trip: dump(parse(text)) reparses to the
same configuration. Every validation error names the offending field path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .centers import CenterStrategy
from .data import ImbalanceSpec
from .losses import MarginSpec
from .model import MlpSpec

CONFIG_SCHEMA_VERSION = 1

LOSS_KINDS = ("softmax", "margin", "center", "npairs")


class ConfigError(ValueError):
    """Configuration problem; carries the field path for diagnostics."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class DatasetBlock:
    kind: str                       # mixture | idx
    classes: int = 10
    per_class: int = 600
    dim: int = 2
    radius: float = 4.0
    sigma: float = 1.0
    test_per_class: int = 200
    images: str | None = None       # idx paths
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass(frozen=True)
class TrainBlock:
    epochs: int
    batch_size: int
    learning_rate: float
    momentum: float = 0.0
    seed: int = 0
    warm_start: bool = False
    pretrain_epochs: int = 0


@dataclass(frozen=True)
class LossBlock:
    kind: str
    margin: MarginSpec = field(default_factory=MarginSpec.plain)
    strategy: CenterStrategy | None = None


@dataclass(frozen=True)
class EvalBlock:
    far_targets: tuple[float, ...] = (0.01, 0.1)
    gallery_per_class: int = 3
    unknown_classes: tuple[int, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetBlock
    imbalance: ImbalanceSpec
    model: MlpSpec
    loss: LossBlock
    train: TrainBlock
    eval: EvalBlock


def _expect_mapping(node, path: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(path, f"expected a mapping, got {type(node).__name__}")
    return node


def _get(node: dict, path: str, key: str, kind, default=None, required=False):
    if key not in node:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    value = node[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}",
                          f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _parse_margin(node, path: str) -> MarginSpec:
    m = _expect_mapping(node, path)
    kind = _get(m, path, "kind", str, required=True)
    try:
        if kind == "plain":
            return MarginSpec.plain()
        if kind == "angular":
            if "m" not in m:
                raise ConfigError(f"{path}.m", "angular margin requires an explicit m")
            return MarginSpec.angular(_get(m, path, "m", int, required=True))
        if kind == "additive_angle":
            return MarginSpec.additive_angle(
                _get(m, path, "alpha", float, required=True))
        if kind == "combined":
            return MarginSpec.combined(_get(m, path, "m1", float, required=True),
                                       _get(m, path, "m2", float, required=True),
                                       _get(m, path, "m3", float, required=True))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc
    raise ConfigError(f"{path}.kind", f"unknown margin kind {kind!r}")


def _parse_strategy(node, path: str) -> CenterStrategy:
    m = _expect_mapping(node, path)
    kind = _get(m, path, "kind", str, required=True)
    try:
        if kind == "instance":
            return CenterStrategy.instance_replace()
        if kind == "memory":
            return CenterStrategy.memory_bank(_get(m, path, "window", int, required=True))
        if kind == "auxloss":
            return CenterStrategy.aux_loss(_get(m, path, "lr", float, default=0.5))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc
    raise ConfigError(f"{path}.kind",
                      f"unknown or non-trainable strategy {kind!r} "
                      "(choose instance, memory or auxloss)")


def parse_config(doc: dict) -> ExperimentConfig:
    root = _expect_mapping(doc, "config")
    schema = _get(root, "config", "schema", int, required=True)
    if schema != CONFIG_SCHEMA_VERSION:
        raise ConfigError("config.schema",
                          f"unsupported schema {schema}, expected {CONFIG_SCHEMA_VERSION}")

    d = _expect_mapping(root.get("dataset"), "dataset")
    kind = _get(d, "dataset", "kind", str, required=True)
    if kind not in ("mixture", "idx"):
        raise ConfigError("dataset.kind", f"unknown dataset kind {kind!r}")
    dataset = DatasetBlock(
        kind=kind,
        classes=_get(d, "dataset", "classes", int, default=10),
        per_class=_get(d, "dataset", "per_class", int, default=600),
        dim=_get(d, "dataset", "dim", int, default=2),
        radius=_get(d, "dataset", "radius", float, default=4.0),
        sigma=_get(d, "dataset", "sigma", float, default=1.0),
        test_per_class=_get(d, "dataset", "test_per_class", int, default=200),
        images=_get(d, "dataset", "images", str),
        labels=_get(d, "dataset", "labels", str),
        test_images=_get(d, "dataset", "test_images", str),
        test_labels=_get(d, "dataset", "test_labels", str),
    )
    if kind == "mixture":
        if dataset.classes < 2:
            raise ConfigError("dataset.classes", "need at least 2 classes")
        if dataset.per_class < 1:
            raise ConfigError("dataset.per_class", "must be >= 1")
        if dataset.sigma < 0:
            raise ConfigError("dataset.sigma", "must be >= 0")
    else:
        if not dataset.images or not dataset.labels:
            raise ConfigError("dataset.images", "idx dataset needs images and labels paths")

    imb_node = root.get("imbalance")
    overrides = []
    if imb_node is not None:
        if not isinstance(imb_node, list):
            raise ConfigError("imbalance", "expected a list of {class, keep} entries")
        for i, entry in enumerate(imb_node):
            e = _expect_mapping(entry, f"imbalance[{i}]")
            cls = _get(e, f"imbalance[{i}]", "class", int, required=True)
            keep = _get(e, f"imbalance[{i}]", "keep", int, required=True)
            if keep < 1:
                raise ConfigError(f"imbalance[{i}].keep", "must be >= 1")
            overrides.append((cls, keep))
    imbalance = ImbalanceSpec.from_pairs(overrides)

    m = _expect_mapping(root.get("model"), "model")
    layers = _get(m, "model", "layers", list, required=True)
    if not all(isinstance(s, int) and not isinstance(s, bool) for s in layers):
        raise ConfigError("model.layers", "must be a list of integers")
    try:
        model = MlpSpec(tuple(layers), _get(m, "model", "activation", str, default="relu"))
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from exc

    lo = _expect_mapping(root.get("loss"), "loss")
    loss_kind = _get(lo, "loss", "kind", str, required=True)
    if loss_kind not in LOSS_KINDS:
        raise ConfigError("loss.kind", f"unknown loss {loss_kind!r}")
    margin = MarginSpec.plain()
    if loss_kind in ("margin", "center"):
        if "margin" not in lo:
            raise ConfigError("loss.margin", "margin and center losses need an "
                              "explicit margin block")
        margin = _parse_margin(lo["margin"], "loss.margin")
    strategy = None
    if loss_kind == "center":
        if "strategy" not in lo:
            raise ConfigError("loss.strategy", "center loss needs a strategy block")
        strategy = _parse_strategy(lo["strategy"], "loss.strategy")
    loss = LossBlock(loss_kind, margin, strategy)

    t = _expect_mapping(root.get("train"), "train")
    train = TrainBlock(
        epochs=_get(t, "train", "epochs", int, required=True),
        batch_size=_get(t, "train", "batch_size", int, required=True),
        learning_rate=_get(t, "train", "learning_rate", float, required=True),
        momentum=_get(t, "train", "momentum", float, default=0.0),
        seed=_get(t, "train", "seed", int, default=0),
        warm_start=_get(t, "train", "warm_start", bool, default=False),
        pretrain_epochs=_get(t, "train", "pretrain_epochs", int, default=0),
    )
    if train.epochs < 1:
        raise ConfigError("train.epochs", "must be >= 1")
    if train.batch_size < 1:
        raise ConfigError("train.batch_size", "must be >= 1")
    if not train.learning_rate > 0:
        raise ConfigError("train.learning_rate", "must be > 0")
    if not 0.0 <= train.momentum < 1.0:
        raise ConfigError("train.momentum", "must lie in [0, 1)")
    if train.warm_start and train.pretrain_epochs < 1:
        raise ConfigError("train.pretrain_epochs",
                          "warm_start requires pretrain_epochs >= 1")

    ev = _expect_mapping(root.get("eval"), "eval")
    fars = ev.get("far_targets", [0.01, 0.1])
    if (not isinstance(fars, list) or not fars
            or not all(isinstance(f, (int, float)) and 0 < float(f) <= 1 for f in fars)):
        raise ConfigError("eval.far_targets", "must be a non-empty list of rates in (0, 1]")
    unknown = ev.get("unknown_classes", [])
    if not isinstance(unknown, list) or not all(isinstance(u, int) for u in unknown):
        raise ConfigError("eval.unknown_classes", "must be a list of class ids")
    gallery_pc = _get(ev, "eval", "gallery_per_class", int, default=3)
    if gallery_pc < 1:
        raise ConfigError("eval.gallery_per_class", "must be >= 1")
    eval_block = EvalBlock(tuple(float(f) for f in fars), gallery_pc, tuple(unknown))

    return ExperimentConfig(dataset, imbalance, model, loss, train, eval_block)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError("config", f"YAML parse error{where}: {exc}") from exc
    return parse_config(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-dict form of a config; parse_config(config_to_dict(c)) == c."""
    doc: dict = {"schema": CONFIG_SCHEMA_VERSION}
    d = cfg.dataset
    ds: dict = {"kind": d.kind}
    if d.kind == "mixture":
        ds.update({"classes": d.classes, "per_class": d.per_class, "dim": d.dim,
                   "radius": d.radius, "sigma": d.sigma,
                   "test_per_class": d.test_per_class})
    else:
        ds.update({"images": d.images, "labels": d.labels})
        if d.test_images:
            ds.update({"test_images": d.test_images, "test_labels": d.test_labels})
    doc["dataset"] = ds
    if cfg.imbalance.overrides:
        doc["imbalance"] = [{"class": c, "keep": k} for c, k in cfg.imbalance.overrides]
    doc["model"] = {"layers": list(cfg.model.layer_sizes),
                    "activation": cfg.model.activation}
    lo: dict = {"kind": cfg.loss.kind}
    if cfg.loss.kind in ("margin", "center"):
        mg = cfg.loss.margin
        if mg.kind == "plain":
            lo["margin"] = {"kind": "plain"}
        elif mg.kind == "angular":
            lo["margin"] = {"kind": "angular", "m": mg.m}
        elif mg.kind == "additive_angle":
            lo["margin"] = {"kind": "additive_angle", "alpha": mg.alpha}
        else:
            lo["margin"] = {"kind": "combined", "m1": mg.m1, "m2": mg.m2, "m3": mg.m3}
    if cfg.loss.strategy is not None:
        st = cfg.loss.strategy
        entry: dict = {"kind": st.kind}
        if st.kind == "memory":
            entry["window"] = st.window
        if st.kind == "auxloss":
            entry["lr"] = st.lr
        lo["strategy"] = entry
    doc["loss"] = lo
    t = cfg.train
    doc["train"] = {"epochs": t.epochs, "batch_size": t.batch_size,
                    "learning_rate": t.learning_rate, "momentum": t.momentum,
                    "seed": t.seed, "warm_start": t.warm_start,
                    "pretrain_epochs": t.pretrain_epochs}
    e = cfg.eval
    doc["eval"] = {"far_targets": list(e.far_targets),
                   "gallery_per_class": e.gallery_per_class,
                   "unknown_classes": list(e.unknown_classes)}
    return doc


def dump_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)
