"""Run configuration: typed sections, config-file parsing, overrides.

Config files are plain text, one ``section.key = value`` per line with
``#`` comments. Unknown keys are rejected rather than ignored, and the
fully resolved configuration serializes to a canonical sorted text block
that is echoed into logs and embedded in checkpoints verbatim.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(Exception):
    """A config file, key, or value the run cannot proceed with."""


@dataclass
class DataConfig:
    dir: str = ""


@dataclass
class ModelConfig:
    embedding_dim: int = 64
    layers: int = 1
    combine: str = "last"            # "last" | "mean0"
    share_level0: bool = True        # one user table for both views
    edge_dropout: float = 0.0
    mean_scale: float = 0.1
    raw_var_init: float = -2.0
    num_prototypes_user: int = 64
    num_prototypes_bundle: int = 64
    proto_input: str = "level0"      # "level0" | "bundle_view" | "item_view"
    proto_scope: str = "full"        # "full" | "batch"
    cl_negatives: str = "batch"      # "batch" | "full"
    disable_gaussian: bool = False
    disable_proto: bool = False


@dataclass
class OtConfig:
    entropy_reg: float = 0.05
    max_iters: int = 100
    tol: float = 1e-6
    refresh_every: int = 1


@dataclass
class LossConfig:
    gamma_cl: float = 0.04
    gamma_pcl: float = 0.1
    gamma_ot: float = 0.1
    temperature: float = 0.25
    num_samples: int = 2


@dataclass
class TrainerConfig:
    epochs: int = 100
    batch_size: int = 2048
    learning_rate: float = 1e-4
    seed: int = 0
    eval_every: int = 10             # epochs between tune evaluations (0 = never)
    patience: int = 20               # evaluations without tune improvement
    embedding_dim_override: int = 0  # 0 = off; capacity-study knob


@dataclass
class EvalConfig:
    topk: str = "20,40"
    mask_seen: bool = True
    freq_buckets: str = "1-10,11-30,31-50,51-"
    samples: int = 10                # draws for uncertainty-mode prediction


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ot: OtConfig = field(default_factory=OtConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        m, t, l, o = self.model, self.trainer, self.loss, self.ot
        checks = [
            (m.embedding_dim > 0, "model.embedding_dim must be positive"),
            (m.layers >= 1, "model.layers must be >= 1"),
            (m.combine in ("last", "mean0"), "model.combine must be last|mean0"),
            (0.0 <= m.edge_dropout < 1.0, "model.edge_dropout must lie in [0, 1)"),
            (m.proto_input in ("level0", "bundle_view", "item_view"),
             "model.proto_input must be level0|bundle_view|item_view"),
            (m.proto_scope in ("full", "batch"), "model.proto_scope must be full|batch"),
            (m.cl_negatives in ("batch", "full"), "model.cl_negatives must be batch|full"),
            (m.num_prototypes_user >= 1, "model.num_prototypes_user must be >= 1"),
            (m.num_prototypes_bundle >= 1, "model.num_prototypes_bundle must be >= 1"),
            (t.epochs >= 0, "trainer.epochs must be >= 0"),
            (t.batch_size >= 1, "trainer.batch_size must be >= 1"),
            (t.learning_rate > 0, "trainer.learning_rate must be positive"),
            (t.seed >= 0, "trainer.seed must be >= 0"),
            (t.embedding_dim_override >= 0, "trainer.embedding_dim_override must be >= 0"),
            (l.num_samples >= 1, "loss.num_samples must be >= 1"),
            (l.temperature > 0, "loss.temperature must be positive"),
            (min(l.gamma_cl, l.gamma_pcl, l.gamma_ot) >= 0, "loss weights must be >= 0"),
            (o.entropy_reg > 0, "ot.entropy_reg must be positive"),
            (o.max_iters >= 1, "ot.max_iters must be >= 1"),
            (o.tol > 0, "ot.tol must be positive"),
            (o.refresh_every >= 1, "ot.refresh_every must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self

    @property
    def effective_dim(self) -> int:
        override = self.trainer.embedding_dim_override
        return override if override > 0 else self.model.embedding_dim

    def topk_list(self) -> list[int]:
        return parse_int_list(self.eval.topk)


_SECTIONS = ("data", "model", "ot", "loss", "trainer", "eval")


def parse_int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in str(text).split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from exc
    if not values:
        raise ConfigError("integer list must not be empty")
    return values


def _coerce_value(name: str, raw: str, target_type) -> object:
    raw = raw.strip()
    if target_type is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: expected {target_type.__name__}, got {raw!r}") from None
    return raw


def flatten(cfg: RunConfig) -> dict[str, object]:
    out: dict[str, object] = {}
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in fields(sub):
            out[f"{section}.{f.name}"] = getattr(sub, f.name)
    return out


def to_text(cfg: RunConfig) -> str:
    flat = flatten(cfg)
    return "".join(f"{key} = {flat[key]}\n" for key in sorted(flat))


def set_key(cfg: RunConfig, key: str, raw_value: str) -> None:
    """Apply one ``section.key=value`` assignment in place."""
    section_name, _, attr = key.partition(".")
    if section_name not in _SECTIONS or not attr:
        raise ConfigError(f"unknown config key {key!r}")
    section = getattr(cfg, section_name)
    if attr not in {f.name for f in fields(section)}:
        raise ConfigError(f"unknown config key {key!r}")
    # defaults are typed literals, so the current value's type is the field type
    target_type = type(getattr(section, attr))
    setattr(section, attr, _coerce_value(key, str(raw_value), target_type))


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    apply_config_text(cfg, text, source)
    return cfg


def apply_config_text(cfg: RunConfig, text: str, source: str = "<config>") -> None:
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{line_no}: expected 'section.key = value'")
        set_key(cfg, key.strip(), value.strip())


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def resolve(config_path: str | None = None,
            overrides: list[str] | None = None,
            seed: int | None = None,
            data_dir: str | None = None) -> RunConfig:
    """Config file -> --set overrides -> convenience flags, then validate."""
    cfg = load_config(config_path) if config_path else RunConfig()
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        set_key(cfg, key.strip(), value.strip())
    if seed is not None:
        cfg.trainer.seed = int(seed)
    if data_dir is not None:
        cfg.data.dir = str(data_dir)
    return cfg.validate()


def clone(cfg: RunConfig) -> RunConfig:
    return dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data),
        model=dataclasses.replace(cfg.model),
        ot=dataclasses.replace(cfg.ot),
        loss=dataclasses.replace(cfg.loss),
        trainer=dataclasses.replace(cfg.trainer),
        eval=dataclasses.replace(cfg.eval),
    )
