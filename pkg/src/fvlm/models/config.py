"""Model and training configuration.

Architecture defaults follow the experimental setup the models were designed
around: 3 stacked LSTM layers of 300 cells (2 shared + 1 per branch for the
multi-task variant), joint-loss weight 1.0.  Optimizer settings (SGD with
clipping, epoch count, seed) are artifact choices with conventional values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..errors import ConfigError


@dataclass
class TrainConfig:
    learning_rate: float = 1.0
    clip_norm: float = 5.0
    epochs: int = 10
    seed: int = 42
    val_fraction: float = 0.1
    # Keep the rate constant for this many epochs; afterwards halve it on
    # every epoch whose validation metric fails to improve the best so far.
    decay_start: int = 6

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.decay_start < 0:
            raise ConfigError("decay_start must be >= 0")


@dataclass
class LmConfig:
    embed_dim: int = 300
    hidden_dim: int = 300
    num_layers: int = 3
    mt_shared_layers: int = 2
    mt_branch_layers: int = 1
    lambda_mt: float = 1.0
    fv_dim: int | None = None  # None -> hidden_dim
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def resolved_fv_dim(self) -> int:
        return self.hidden_dim if self.fv_dim is None else self.fv_dim

    def validate(self):
        for name in ("embed_dim", "hidden_dim", "num_layers",
                     "mt_shared_layers", "mt_branch_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive count")
        if self.lambda_mt < 0:
            raise ConfigError("lambda_mt must be non-negative")
        if self.fv_dim is not None and self.fv_dim < 1:
            raise ConfigError("fv_dim must be a positive count")
        self.train.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LmConfig":
        d = dict(d)
        train = TrainConfig(**d.pop("train", {}))
        return cls(train=train, **d)
