"""Run configuration: nested dataclasses with a line-oriented ``[section] key = value`` text form.

Values are JSON literals, so ``parse(serialize(cfg)) == cfg`` holds exactly.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .augment import AugmentationSpec
from .datagen import ContentStyleConfig
from .errors import ConfigError
from .metrics import ProbeConfig
from .nn import OptimizerConfig
from .objective import ObjectiveConfig, preset


@dataclass(frozen=True)
class ModelConfig:
    encoder_widths: tuple = (256, 64)
    normalize_encoder: bool = False

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        if not self.encoder_widths or min(self.encoder_widths) < 1:
            raise ConfigError("encoder_widths must be positive", ["encoder_widths"])


@dataclass(frozen=True)
class EvalConfig:
    test_samples_per_content: int = 250
    log_every: int = 10
    checkpoint_every: int = 500
    corruption_kinds: tuple = ("gaussian_noise", "shot_noise", "impulse_noise")
    severities: tuple = (1, 2, 3, 4, 5)
    probe_lrs: tuple = (0.1, 0.5, 2.0)
    probe_epochs: int = 200
    graph_radius: float = 0.5

    def __post_init__(self):
        for name in ("corruption_kinds", "severities", "probe_lrs"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        bad = [n for n in ("test_samples_per_content", "log_every", "checkpoint_every", "probe_epochs") if getattr(self, n) < 1]
        if any(not 1 <= s <= 5 for s in self.severities):
            bad.append("severities")
        if bad:
            raise ConfigError(f"invalid eval settings: {', '.join(bad)}", bad)

    def probe(self, seed: int) -> ProbeConfig:
        return ProbeConfig(lrs=self.probe_lrs, epochs=self.probe_epochs, seed=seed)


SECTIONS = {
    "data": ContentStyleConfig,
    "augment": AugmentationSpec,
    "model": ModelConfig,
    "objective": ObjectiveConfig,
    "optimizer": OptimizerConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    dataset_path: str = ""  # empty: generate from [data]
    data: ContentStyleConfig = field(default_factory=ContentStyleConfig)
    augment: AugmentationSpec = field(default_factory=AugmentationSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def digest(self) -> bytes:
        """SHA-256 of the serialized config, ignoring the output directory."""
        return hashlib.sha256(serialize(replace(self, out_dir="")).encode()).digest()


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def _untuple(v):
    if isinstance(v, list):
        return tuple(_untuple(x) for x in v)
    return v


def serialize(cfg: RunConfig) -> str:
    lines = ["[run]"]
    for name in ("seed", "out_dir", "dataset_path"):
        lines.append(f"{name} = {json.dumps(getattr(cfg, name))}")
    for section in SECTIONS:
        lines.append("")
        lines.append(f"[{section}]")
        for key, value in asdict(getattr(cfg, section)).items():
            lines.append(f"{key} = {json.dumps(_jsonable(value))}")
    return "\n".join(lines) + "\n"


def _build(cls, values: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}", [f"{section}.{k}" for k in unknown])
    try:
        return cls(**{k: _untuple(v) for k, v in values.items()})
    except ConfigError as exc:
        raise ConfigError(str(exc), [f"{section}.{k}" for k in exc.keys]) from None
    except TypeError as exc:
        raise ConfigError(f"bad value in [{section}]: {exc}", [section]) from None


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse config text; missing keys fall back to ``base`` (defaults if None)."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    base = base or RunConfig()
    unknown = [s for s in parser.sections() if s != "run" and s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}", unknown)
    decoded = {}
    for section in parser.sections():
        decoded[section] = {}
        for key, raw in parser.items(section):
            try:
                decoded[section][key] = json.loads(raw)
            except json.JSONDecodeError:
                raise ConfigError(f"[{section}] {key}: value {raw!r} is not a JSON literal", [f"{section}.{key}"]) from None
    run = decoded.get("run", {})
    bad = sorted(set(run) - {"seed", "out_dir", "dataset_path"})
    if bad:
        raise ConfigError(f"unknown keys in [run]: {', '.join(bad)}", [f"run.{k}" for k in bad])
    updates = dict(run)
    if "seed" in updates and not isinstance(updates["seed"], int):
        raise ConfigError("seed must be an integer", ["run.seed"])
    for section, cls in SECTIONS.items():
        merged = asdict(getattr(base, section))
        merged.update(decoded.get(section, {}))
        updates[section] = _build(cls, merged, section)
    return replace(base, **updates)


def load(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", ["--config"]) from None


def benchmark_config(seed: int = 0, alpha: float = 1.0, out_dir: str = "runs/benchmark") -> RunConfig:
    """Desk-scale content/style benchmark for the alpha=1 versus alpha=0 comparisons.

    4 contents x 4 styles, 16x16 images, 2,000 training samples, 2,000 steps.
    Batch, learning rate, crop and blur ranges are scaled down from the
    ImageNet recipe to fit 16x16 inputs and a small MLP encoder.
    """
    return RunConfig(
        seed=seed,
        out_dir=out_dir,
        data=ContentStyleConfig(stripe_period=6.0),
        augment=AugmentationSpec(crop_area_range=(0.25, 1.0), blur_sigma_range=(0.1, 1.0)),
        model=ModelConfig(),
        objective=preset("relic", alpha=alpha, tau=0.5),
        optimizer=OptimizerConfig(base_lr=2.0, batch_size=64, warmup_steps=100, total_steps=2000),
        eval=EvalConfig(),
    )


def with_overrides(cfg: RunConfig, seed=None, out_dir=None, preset_name=None, alpha=None, tau=None) -> RunConfig:
    """Apply command-line overrides; a preset replaces the objective section first."""
    objective = cfg.objective
    if preset_name is not None:
        objective = preset(preset_name)
    changes = {}
    if alpha is not None:
        changes["alpha"] = alpha
    if tau is not None:
        changes["tau"] = tau
    if changes:
        try:
            objective = replace(objective, **changes)
        except ConfigError as exc:
            raise ConfigError(str(exc), [f"objective.{k}" for k in exc.keys]) from None
    out = replace(cfg, objective=objective)
    if seed is not None:
        out = replace(out, seed=int(seed))
    if out_dir is not None:
        out = replace(out, out_dir=str(out_dir))
    return out
