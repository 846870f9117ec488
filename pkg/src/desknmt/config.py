"""Flat ``key=value`` run configuration shared by the command-line tools."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig

__all__ = ["RunConfig", "ConfigError"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    num_layers: int = 2
    rnn_size: int = 64
    embed_size: int = 64
    bidirectional: bool = True
    dropout: float = 0.3
    max_source_len: int = 250
    init_scale: float = 0.1
    # vocabulary / data
    src_vocab_size: int = 50000
    tgt_vocab_size: int = 50000
    case_features: bool = False
    # training
    epochs: int = 13
    batch_size: int = 64
    learning_rate: float = 1.0
    decay: float = 0.7
    start_decay_epoch: int = 9
    max_len: int = 50
    seed: int = 0
    w_ga: float = 0.5
    w_ga_decay: float = 0.9
    guided_decay: bool = True
    feat_weight: float = 1.0
    max_grad_norm: float = 5.0
    # decoding
    beam_size: int = 5
    decode_batch_size: int = 16
    max_decode_len: int = 100

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def update(self, items: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        for key, raw in items.items():
            if key not in types:
                raise ConfigError(f"unknown configuration key {key!r}")
            current = getattr(self, key)
            try:
                if isinstance(current, bool):
                    if str(raw).lower() not in ("true", "false", "1", "0"):
                        raise ValueError(raw)
                    value = str(raw).lower() in ("true", "1")
                else:
                    value = type(current)(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
            setattr(self, key, value)
        return self

    @staticmethod
    def parse_lines(lines, source: str = "<config>") -> dict:
        items = {}
        for lineno, line in enumerate(lines, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            items[key] = value
        return items

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        """File values first, then ``overrides`` (command-line flags) on top."""
        cfg = cls()
        if path is not None:
            cfg.update(cls.parse_lines(Path(path).read_text(encoding="utf-8").splitlines(), str(path)))
        if overrides:
            cfg.update(overrides)
        return cfg

    def dump(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    def model_config(self) -> ModelConfig:
        return ModelConfig(num_layers=self.num_layers, rnn_size=self.rnn_size,
                           embed_size=self.embed_size, bidirectional=self.bidirectional,
                           dropout=self.dropout, max_source_len=self.max_source_len,
                           init_scale=self.init_scale)

    def train_config(self, **changes) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        values = {k: v for k, v in asdict(self).items() if k in names}
        values.update(changes)
        return TrainConfig(**values)
