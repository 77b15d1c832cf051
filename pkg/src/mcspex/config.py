"""Model and training configuration, ablation presets, and key=value config files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

CONSM_MODES = ("none", "consm", "conditional_ln", "film")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the multi-task objective.

    The small-scale SI-SDR term gets ``1 - alpha - beta``, the middle and large
    scales get ``alpha`` and ``beta``, and ``gamma`` scales the speaker
    cross-entropy.
    """

    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta >= 1:
            raise ConfigError(f"loss weights need alpha, beta >= 0 and alpha + beta < 1, got {self}")
        if self.gamma < 0:
            raise ConfigError(f"loss weight gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class ModelConfig:
    filter_lengths: tuple[int, int, int] = (20, 80, 160)
    stride: int = 10
    filters_per_scale: int = 256
    embedding_dim: int = 256
    resnet_blocks: int = 3
    num_groups: int = 4  # M
    blocks_per_group: int = 8  # N
    tcn_width: int = 512
    tcn_kernel: int = 3
    fuser_channels: tuple[int, ...] = (3, 32, 32, 1)
    fuser_kernels: tuple[int, ...] = (3, 3, 3, 3)
    mg_channels: tuple[int, ...] = (1, 32, 32, 3)
    mg_kernels: tuple[int, ...] = (3, 3, 3, 3)
    num_speakers: int = 291  # Libri2Mix train-100
    loss_weights: LossWeights = field(default_factory=LossWeights)
    use_scalefuser: bool = True
    share_fuser_weights: bool = True
    use_scaleintermg: bool = True
    consm_mode: str = "consm"

    def __post_init__(self):
        validate(self)

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @property
    def sample_span(self) -> int:
        """Shortest admissible waveform length (the longest filter)."""
        return max(self.filter_lengths)


def validate(cfg: ModelConfig) -> None:
    if len(cfg.filter_lengths) != 3 or any(L < 1 for L in cfg.filter_lengths):
        raise ConfigError(f"filter_lengths must be three positive ints, got {cfg.filter_lengths}")
    if list(cfg.filter_lengths) != sorted(cfg.filter_lengths):
        raise ConfigError("filter_lengths must be ordered small, middle, large")
    for name in ("stride", "filters_per_scale", "embedding_dim", "tcn_width", "num_speakers"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if cfg.num_groups < 1:
        raise ConfigError(f"num_groups (M) must be >= 1, got {cfg.num_groups}")
    if cfg.blocks_per_group < 1:
        raise ConfigError(f"blocks_per_group (N) must be >= 1, got {cfg.blocks_per_group}")
    if cfg.resnet_blocks < 0:
        raise ConfigError("resnet_blocks must be >= 0")
    if cfg.tcn_kernel % 2 == 0:
        raise ConfigError("tcn_kernel must be odd to preserve length")
    _check_schedule("fuser", cfg.fuser_channels, cfg.fuser_kernels, first=3, last=1)
    _check_schedule("mg", cfg.mg_channels, cfg.mg_kernels, first=1, last=3)
    if cfg.consm_mode not in CONSM_MODES:
        raise ConfigError(f"consm_mode must be one of {CONSM_MODES}, got {cfg.consm_mode!r}")


def _check_schedule(name, channels, kernels, first, last):
    if len(channels) < 1 or channels[0] != first or channels[-1] != last:
        raise ConfigError(f"{name}_channels must start at {first} and end at {last}, got {list(channels)}")
    if len(kernels) != len(channels):
        raise ConfigError(f"{name}_kernels needs one entry per block ({len(channels)}), got {len(kernels)}")
    if any(c < 1 for c in channels) or any(k < 1 or k % 2 == 0 for k in kernels):
        raise ConfigError(f"{name}: channels must be positive and kernels odd")


# ablation variants: (use_scalefuser, share_fuser_weights, use_scaleintermg, consm_mode)
VARIANT_TOGGLES = {
    1: (False, False, False, "none"),  # SpEx+
    2: (True, True, False, "none"),  # 1 + weight-shared ScaleFusers
    3: (False, False, True, "none"),  # 1 + ScaleInterMG
    4: (True, True, True, "none"),  # 2 + ScaleInterMG
    5: (False, False, False, "consm"),  # 1 + ConSM
    6: (True, True, True, "consm"),  # MC-SpEx
}


def variant_config(variant: int, base: ModelConfig | None = None) -> ModelConfig:
    if variant not in VARIANT_TOGGLES:
        raise ConfigError(f"variant must be one of 1..6, got {variant}")
    sf, share, mg, mode = VARIANT_TOGGLES[variant]
    base = base or ModelConfig()
    return base.replace(use_scalefuser=sf, share_fuser_weights=share, use_scaleintermg=mg, consm_mode=mode)


def toy_config(num_speakers: int = 8, **changes: Any) -> ModelConfig:
    """Small MC-SpEx used for the synthetic-corpus experiments and smoke runs."""
    cfg = ModelConfig(
        filters_per_scale=32,
        embedding_dim=32,
        resnet_blocks=1,
        num_groups=1,
        blocks_per_group=4,
        tcn_width=64,
        fuser_channels=(3, 8, 8, 1),
        mg_channels=(1, 8, 8, 3),
        num_speakers=num_speakers,
    )
    return cfg.replace(**changes) if changes else cfg


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    seed: int = 0
    steps_per_epoch: int = 0  # 0: one pass over the training manifest
    segment_seconds: float = 3.0
    decay_patience: int = 3
    stop_patience: int = 8
    decay_factor: float = 0.5
    max_val_records: int = 0  # 0: the full validation manifest
    log_every: int = 1

    def __post_init__(self):
        if self.steps < 0 or self.lr <= 0 or self.segment_seconds <= 0:
            raise ConfigError(f"invalid training settings: {self}")


def toy_train_config(**changes: Any) -> TrainConfig:
    """Training recipe paired with toy_config on the default synthetic corpus."""
    cfg = TrainConfig(steps=2000, lr=5e-3, seed=0, steps_per_epoch=200, max_val_records=0)
    return TrainConfig(**{**cfg.__dict__, **changes}) if changes else cfg


_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
_LOSS_KEYS = {"alpha", "beta", "gamma"}
# Aliases mirroring the symbols used in the model description.
_ALIASES = {"M": "num_groups", "N": "blocks_per_group", "filter_lengths_samples": "filter_lengths"}


def _coerce(name: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.replace(" ", "").strip("[]()").split(",") if v)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text: str, base_model: ModelConfig | None = None,
                      base_train: TrainConfig | None = None) -> tuple[ModelConfig, TrainConfig, dict[str, str]]:
    """Parse ``key=value`` lines into model/training configs.

    Keys ``data``, ``out`` and ``variant`` are passed through in the third
    return value. Blank lines and ``#`` comments are ignored; an unknown key
    raises :class:`ConfigError` naming its line number.
    """
    base_model = base_model or ModelConfig()
    base_train = base_train or TrainConfig()
    model_kw: dict[str, Any] = {}
    loss_kw: dict[str, float] = {}
    train_kw: dict[str, Any] = {}
    extra: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        try:
            if key in _LOSS_KEYS:
                loss_kw[key] = float(value)
            elif key in _MODEL_FIELDS and key != "loss_weights":
                model_kw[key] = _coerce(key, value, getattr(base_model, key))
            elif key in _TRAIN_FIELDS:
                train_kw[key] = _coerce(key, value, getattr(base_train, key))
            elif key in ("data", "out", "variant"):
                extra[key] = value
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    if loss_kw:
        lw = dataclasses.asdict(base_model.loss_weights) | loss_kw
        model_kw["loss_weights"] = LossWeights(**lw)
    return base_model.replace(**model_kw), dataclasses.replace(base_train, **train_kw), extra


def load_config_file(path: str | Path, **kw) -> tuple[ModelConfig, TrainConfig, dict[str, str]]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), **kw)


def config_to_dict(cfg: ModelConfig) -> dict[str, Any]:
    d = dataclasses.asdict(cfg)
    d["filter_lengths"] = list(cfg.filter_lengths)
    for k in ("fuser_channels", "fuser_kernels", "mg_channels", "mg_kernels"):
        d[k] = list(d[k])
    return d


def config_from_dict(d: dict[str, Any]) -> ModelConfig:
    d = dict(d)
    d["loss_weights"] = LossWeights(**d["loss_weights"])
    for k in ("filter_lengths", "fuser_channels", "fuser_kernels", "mg_channels", "mg_kernels"):
        d[k] = tuple(d[k])
    return ModelConfig(**d)


def train_config_to_dict(tc: TrainConfig) -> dict[str, Any]:
    return dataclasses.asdict(tc)
