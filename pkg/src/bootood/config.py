"""Run configuration: flat ``key = value`` text.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected. Lists
are comma separated. See README for the key set; every
key has a default, so an empty file is a valid config.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields, replace

from .errors import ConfigError, DataIOError, InvalidKError
from .losses import LossWeights
from .trainer import TrainConfig, WarmupPolicy


@dataclass(frozen=True)
class RunConfig:
    # data
    num_classes: int = 4
    input_dim: int = 8
    n_train: int = 500
    n_val: int = 100
    n_test: int = 100
    separation: float = 6.0
    sigma: float = 1.0
    data_seed: int = 0
    near_n: int = 400
    near_eta: float = 1.0
    far_n: int = 400
    far_mode: str = "uniform-box"
    far_scale: float = 27.0
    # model / optimiser
    hidden: tuple = (64, 64)
    feature_dim: int = 16
    epochs: int = 80
    batch_size: int = 64
    lr: float = 0.05
    head_lr: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 5e-3
    grad_clip: float = 10.0
    # method
    K: int = 4
    alpha: float = 1.0
    M: int = 0
    spacing: str = "uniform"
    beta_mu: float = 0.95
    beta_r: float = 0.95
    lambda_cls: float = 1.0
    lambda_reg: float = 1.0
    lambda_ood: float = 0.5
    lambda_sep: float = 0.1
    ramp_fraction: float = 0.2
    reg_target: str = "raw"
    cross_class_pairs: bool = False
    warmup_policy: str = "diagnostic"
    warmup_epochs: int = 40
    nc1_threshold: float = 0.045
    cv_threshold: float = 0.05
    use_warmup: bool = True
    use_radius: bool = True
    use_separation: bool = True
    # run
    seed: int = 0
    seeds: tuple = (0, 1, 2)
    log_interval: int = 10
    # evaluation
    scorers: tuple = ("msp", "ebo", "entropy", "react", "norm")
    ebo_temperature: float = 1.0
    react_percentile: float = 90.0
    hist_bins: int = 30

    def __post_init__(self):
        if not isinstance(self.K, int) or self.K < 1:
            raise InvalidKError(f"InvalidK: K must be a positive integer, got {self.K!r}")
        if self.num_classes < 2 or self.input_dim < 2:
            raise ConfigError("num_classes and input_dim must be >= 2")
        if min(self.n_train, self.n_val, self.n_test) < 2:
            raise ConfigError("every split needs >= 2 samples per class")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.near_n < 1 or self.far_n < 1:
            raise ConfigError("OOD set sizes must be >= 1")
        if self.far_mode not in ("uniform-box", "shifted-gaussian"):
            raise ConfigError(f"unknown far_mode {self.far_mode!r}")
        if not 0 < self.react_percentile <= 100:
            raise ConfigError("react_percentile must lie in (0, 100]")
        if self.hist_bins < 2:
            raise ConfigError("hist_bins must be >= 2")
        from .scorers import SCORERS

        for s in self.scorers:
            if s not in SCORERS and s != "auto":
                raise ConfigError(f"unknown scorer {s!r}")
        self.train_config()  # validates the trainer-facing fields

    def train_config(self, **overrides) -> TrainConfig:
        cfg = self if not overrides else replace(self, **overrides)
        return TrainConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            lr=cfg.lr,
            head_lr=cfg.head_lr,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
            grad_clip=cfg.grad_clip,
            hidden=tuple(cfg.hidden),
            feature_dim=cfg.feature_dim,
            K=cfg.K,
            alpha=cfg.alpha,
            M=cfg.M,
            spacing=cfg.spacing,
            beta_mu=cfg.beta_mu,
            beta_r=cfg.beta_r,
            weights=LossWeights(cls=cfg.lambda_cls, reg=cfg.lambda_reg, ood_max=cfg.lambda_ood, sep_max=cfg.lambda_sep),
            ramp_fraction=cfg.ramp_fraction,
            reg_target=cfg.reg_target,
            warmup=WarmupPolicy(cfg.warmup_policy, cfg.warmup_epochs, cfg.nc1_threshold, cfg.cv_threshold),
            use_warmup=cfg.use_warmup,
            use_radius=cfg.use_radius,
            use_separation=cfg.use_separation,
            seed=cfg.seed,
            log_interval=cfg.log_interval,
            cross_class_pairs=cfg.cross_class_pairs,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(name, raw: str):
    default = _FIELDS[name].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [p.strip() for p in raw.split(",") if p.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(p) for p in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return replace(base or RunConfig(), **values) if values else (base or RunConfig())


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def config_from_dict(d: dict) -> RunConfig:
    unknown = set(d) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    conv = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
    return dataclasses.replace(RunConfig(), **conv)
