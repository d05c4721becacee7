"""Run configuration files.

A run config is an INI file with four sections::

    [model]   ModelConfig fields
    [train]   TrainConfig fields
    [data]    SkeletonSpec fields, plus count/seed and ``edge.<joint> = lo,hi,angle,spread``
    [infer]   decoding and metric settings

Every key is optional; unknown sections or keys are rejected. Values are
coerced to the type of the field's default. Tuples are comma separated.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .inference import DEFAULT_WEIGHTS
from .model import ModelConfig, TrainConfig
from .structured import LayerDesc, RFRow, receptive_field_of
from .synth import EdgeSpec, SkeletonSpec

SECTIONS = ("model", "train", "data", "infer")
PRESETS = ("default", "small", "vgg16-fcn")
PRESET_ALIASES = {"paper-table1": "vgg16-fcn"}
DECODE_MODES = ("argmax", "tree_dp", "gdt")


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit status 2."""


@dataclass
class DataConfig:
    count: int = 2000
    seed: int = 0
    skeleton: SkeletonSpec = field(default_factory=SkeletonSpec)


@dataclass
class InferConfig:
    mode: str = "tree_dp"
    weight_x: float = DEFAULT_WEIGHTS[0]
    weight_y: float = DEFAULT_WEIGHTS[1]
    normalize: bool = True
    pdj_thresholds: tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    batch_size: int = 64

    def __post_init__(self):
        if self.mode not in DECODE_MODES:
            raise ValueError(f"mode must be one of {DECODE_MODES}, got {self.mode!r}")
        if self.weight_x < 0 or self.weight_y < 0:
            raise ValueError("pairwise weights must be non-negative")
        if any(b < a for a, b in zip(self.pdj_thresholds, self.pdj_thresholds[1:])):
            raise ValueError("pdj_thresholds must be ascending")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @property
    def weights(self) -> tuple[float, float]:
        return (self.weight_x, self.weight_y)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    name: str = "custom"

    def rf_layers(self) -> list[LayerDesc]:
        """Backbone layers followed by one row per stacked transform kernel."""
        layers = []
        for name, desc in self.model.backbone_named_layers():
            if desc[0] == "pool":
                layers.append(LayerDesc(name, 2, 2))
            else:
                layers.append(LayerDesc(name, desc[1]))
        layers += [LayerDesc(f"msp{t + 1}", self.model.kernel) for t in range(self.model.depth)]
        return layers

    def rf_rows(self) -> list[RFRow]:
        return receptive_field_of(self.rf_layers())


# ---------------------------------------------------------------------------
# value coercion


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(text: str, default):
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        kind = type(default[0]) if default else float
        return tuple(kind(p) for p in parts)
    return text.strip()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _defaults(cls) -> dict:
    out = {}
    for f in fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def _section_values(cls, items: dict[str, str], section: str, skip=()) -> dict:
    defaults = _defaults(cls)
    out = {}
    for key, text in items.items():
        if key not in defaults or key in skip:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        try:
            out[key] = _coerce(text, defaults[key])
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# parse / dump

SKELETON_FIXED = ("tree_id", "edges")


def parse_config(text: str, base: RunConfig | None = None, name: str = "custom") -> RunConfig:
    """Parse INI text on top of ``base`` (defaults when omitted)."""
    cp = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#", ";")
    )
    cp.optionxform = str  # keep key case
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {str(exc).splitlines()[0]}") from None
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    base = base or RunConfig()
    sec = {s: dict(cp[s]) if cp.has_section(s) else {} for s in SECTIONS}
    try:
        model = dataclasses.replace(base.model, **_section_values(ModelConfig, sec["model"], "model"))
        train = dataclasses.replace(base.train, **_section_values(TrainConfig, sec["train"], "train"))
        infer = dataclasses.replace(base.infer, **_section_values(InferConfig, sec["infer"], "infer"))

        data_items = dict(sec["data"])
        edges = dict(base.data.skeleton.edges)
        for key in [k for k in data_items if k.startswith("edge.")]:
            edges[key[5:]] = _parse_edge(key, data_items.pop(key))
        own = {k: data_items.pop(k) for k in ("count", "seed") if k in data_items}
        own_vals = _section_values(DataConfig, own, "data", skip=("skeleton",))
        skel_vals = _section_values(SkeletonSpec, data_items, "data", skip=SKELETON_FIXED)
        skeleton = dataclasses.replace(base.data.skeleton, tree_id=model.tree, edges=edges, **skel_vals)
        data = dataclasses.replace(base.data, skeleton=skeleton, **own_vals)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(model, train, data, infer, name)
    validate(cfg)
    return cfg


def _parse_edge(key: str, text: str) -> EdgeSpec:
    try:
        lo, hi, angle, spread = (float(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"[data] {key}: expected 'lo,hi,angle,spread'") from None
    return EdgeSpec((lo, hi), angle, spread)


def validate(cfg: RunConfig) -> None:
    """Cross-section checks that single dataclasses cannot see."""
    t = cfg.train
    if t.epochs < 0 or t.batch_size < 1:
        raise ConfigError("[train] epochs must be >= 0 and batch_size >= 1")
    if t.lr_backbone < 0 or t.lr_new < 0 or not 0 <= t.momentum < 1:
        raise ConfigError("[train] learning rates must be >= 0 and momentum in [0, 1)")
    if t.val_mode not in DECODE_MODES:
        raise ConfigError(f"[train] val_mode must be one of {DECODE_MODES}")
    if cfg.data.skeleton.canvas != cfg.model.input_size:
        raise ConfigError(
            f"[data] canvas {cfg.data.skeleton.canvas} differs from [model] input_size {cfg.model.input_size}"
        )
    if cfg.data.count < 0:
        raise ConfigError("[data] count must be >= 0")
    if not 0 <= cfg.data.skeleton.multi_figure_prob <= 1:
        raise ConfigError("[data] multi_figure_prob must lie in [0, 1]")
    tree = cfg.model.joint_tree
    extra = set(cfg.data.skeleton.edges) - set(tree.names)
    if extra:
        raise ConfigError(f"[data] edge for unknown joint {sorted(extra)[0]!r}")


def dump_config(cfg: RunConfig) -> str:
    """INI text listing every key; ``parse_config(dump_config(c))`` reproduces ``c``."""
    lines = [f"# structpose run config ({cfg.name})"]

    def section(title, obj, skip=()):
        lines.append(f"\n[{title}]")
        for f in fields(obj):
            if f.name not in skip:
                lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")

    section("model", cfg.model)
    section("train", cfg.train)
    section("data", cfg.data, skip=("skeleton",))
    sk = cfg.data.skeleton
    for f in fields(sk):
        if f.name not in SKELETON_FIXED + ("default_edge",):
            lines.append(f"{f.name} = {_format(getattr(sk, f.name))}")
    for joint, e in sk.edges.items():
        lines.append(f"edge.{joint} = {_format((*e.length, e.angle, e.spread))}")
    section("infer", cfg.infer)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# presets and files


def preset_text(name: str) -> str:
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("structpose").joinpath("configs", f"{name}.ini").read_text()


def load_preset(name: str) -> RunConfig:
    canonical = PRESET_ALIASES.get(name, name)
    return parse_config(preset_text(canonical), name=canonical)


def load_config(spec: str | Path | None) -> RunConfig:
    """A file path, a preset name, or ``None`` for defaults."""
    if spec is None:
        return load_preset("default")
    path = Path(spec)
    if path.is_file():
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return parse_config(text, name=path.stem)
    if str(spec) in PRESETS or str(spec) in PRESET_ALIASES:
        return load_preset(str(spec))
    raise ConfigError(f"config {spec!s} is neither a file nor a preset ({', '.join(PRESETS)})")
