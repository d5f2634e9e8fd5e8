"""
Pipeline configuration: flat key=value text with documented defaults.

Precedence: defaults < config file < key=value overrides < --seed.
"""

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .utils import parse_key_values, read_lines


@dataclass
class PipelineConfig:
    # model
    hidden: int = 200
    latent: int = 200
    embed: int = 150
    dropout: float = 0.2
    bidirectional: bool = True
    n_filters: int = 2
    precision: int = 64
    # training
    optimizer: str = 'adam'
    lr: float = 0.001
    epochs: int = 10
    batch_size: int = 16
    patience: int = 3
    clip: float = 5.0
    workers: int = 1
    # data
    data_dir: str = ''
    train_size: int = 480
    valid_size: int = 120
    test_size: int = 120
    mix: float = 0.5
    bias: float = 0.85
    max_seq_len: int = 30
    decode_max_len: int = 32
    # latent enhancement
    k: float = 100.0
    b: float = 25.0
    target: float = 0.55
    max_steps: int = 500
    episode_steps: int = 50
    action_low: float = 0.5
    action_high: float = 1.5
    sac_hidden: int = 64
    sac_lr: float = 0.0003
    sac_batch: int = 64
    buffer_size: int = 10000
    gamma: float = 0.99
    tau: float = 0.005
    warmup_steps: int = 64
    reward_scale: float = 0.01
    silhouette_sample: int = 512
    log_every: int = 50
    # studies
    budgets: str = '10,20,30,50,100,200,300,500'
    study_seeds: int = 3
    # run
    seed: int = 7
    out_dir: str = 'results'
    eval_split: str = 'test'

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else Path(self.out_dir) / 'data'

    @property
    def budget_list(self) -> List[int]:
        return [int(b) for b in self.budgets.split(',') if b.strip()]

    def replace(self, **changes) -> 'PipelineConfig':
        config = dataclasses.replace(self, **changes)
        validate(config)
        return config


Check = Tuple[Callable[[object, 'PipelineConfig'], bool], str]

CHECKS: Dict[str, Check] = {
    'hidden': (lambda v, c: v > 0, "must be > 0"),
    'latent': (lambda v, c: v > 0, "must be > 0"),
    'embed': (lambda v, c: v > 0, "must be > 0"),
    'dropout': (lambda v, c: 0.0 <= v < 1.0, "must be in [0, 1)"),
    'bidirectional': (lambda v, c: v is True, "only a bidirectional encoder is supported"),
    'n_filters': (lambda v, c: v >= 1, "must be >= 1"),
    'precision': (lambda v, c: v in (32, 64), "must be 32 or 64"),
    'optimizer': (lambda v, c: v == 'adam', "only 'adam' is supported"),
    'lr': (lambda v, c: v >= 0, "must be >= 0"),
    'epochs': (lambda v, c: v >= 0, "must be >= 0"),
    'batch_size': (lambda v, c: v >= 1, "must be >= 1"),
    'patience': (lambda v, c: v >= 1, "must be >= 1"),
    'clip': (lambda v, c: v >= 0, "must be >= 0 (0 disables clipping)"),
    'workers': (lambda v, c: v >= 1, "must be >= 1"),
    'train_size': (lambda v, c: v >= 2, "must be >= 2"),
    'valid_size': (lambda v, c: v >= 0, "must be >= 0"),
    'test_size': (lambda v, c: v >= 0, "must be >= 0"),
    'mix': (lambda v, c: 0.0 < v < 1.0, "must be in (0, 1)"),
    'bias': (lambda v, c: 0.0 <= v <= 1.0, "must be in [0, 1]"),
    'max_seq_len': (lambda v, c: v >= 1, "must be >= 1"),
    'decode_max_len': (lambda v, c: v >= 1, "must be >= 1"),
    'target': (lambda v, c: -1.0 <= v <= 1.0, "must be in [-1, 1]"),
    'max_steps': (lambda v, c: v >= 0, "must be >= 0"),
    'episode_steps': (lambda v, c: v >= 1, "must be >= 1"),
    'action_low': (lambda v, c: v > 0, "must be > 0"),
    'action_high': (lambda v, c: v > c.action_low, "must be > action_low"),
    'sac_hidden': (lambda v, c: v >= 1, "must be >= 1"),
    'sac_lr': (lambda v, c: v >= 0, "must be >= 0"),
    'sac_batch': (lambda v, c: v >= 1, "must be >= 1"),
    'buffer_size': (lambda v, c: v >= c.sac_batch, "must be >= sac_batch"),
    'gamma': (lambda v, c: 0.0 <= v <= 1.0, "must be in [0, 1]"),
    'tau': (lambda v, c: 0.0 <= v <= 1.0, "must be in [0, 1]"),
    'warmup_steps': (lambda v, c: v >= 0, "must be >= 0"),
    'reward_scale': (lambda v, c: v > 0, "must be > 0"),
    'silhouette_sample': (lambda v, c: v >= 2, "must be >= 2"),
    'log_every': (lambda v, c: v >= 0, "must be >= 0"),
    'budgets': (lambda v, c: _valid_budgets(v), "must be a comma-separated list of integers >= 0"),
    'study_seeds': (lambda v, c: v >= 1, "must be >= 1"),
    'seed': (lambda v, c: v >= 0, "must be >= 0"),
    'out_dir': (lambda v, c: bool(v), "must not be empty"),
    'eval_split': (lambda v, c: v in ('train', 'valid', 'test'), "must be train, valid or test"),
}


def _valid_budgets(text: str) -> bool:
    try:
        values = [int(b) for b in text.split(',') if b.strip()]
    except ValueError:
        return False
    return bool(values) and min(values) >= 0


FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def parse_value(key: str, text: str):
    if key not in FIELD_TYPES:
        raise ConfigError(key, "unknown key")
    kind = FIELD_TYPES[key]
    text = text.strip()
    if kind in (bool, 'bool'):
        if text.lower() in ('true', '1', 'yes'):
            return True
        if text.lower() in ('false', '0', 'no'):
            return False
        raise ConfigError(key, f"must be true or false, got {text!r}")
    if kind in (int, 'int'):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(key, f"must be an integer, got {text!r}") from None
    if kind in (float, 'float'):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(key, f"must be a number, got {text!r}") from None
    return text


def validate(config: PipelineConfig):
    for key, (check, constraint) in CHECKS.items():
        if not check(getattr(config, key), config):
            raise ConfigError(key, constraint)


def _split_override(item: str) -> Tuple[str, str]:
    key, sep, value = item.partition('=')
    if not sep or not key.strip():
        raise ConfigError(item, "overrides must be written key=value")
    return key.strip(), value


def parse_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                 seed: Optional[int] = None) -> PipelineConfig:
    values: Dict[str, object] = {}
    if path:
        if not Path(path).is_file():
            raise ConfigError('--config', f"file not found: {path}")
        try:
            entries = parse_key_values(read_lines(path))
        except ValueError as exc:
            raise ConfigError('--config', str(exc)) from None
        for key, text in entries.items():
            values[key] = parse_value(key, text)
    for item in overrides:
        key, text = _split_override(item)
        values[key] = parse_value(key, text)
    if seed is not None:
        values['seed'] = seed
    config = PipelineConfig(**values)
    validate(config)
    return config


def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_echo(config: PipelineConfig) -> Dict[str, str]:
    """Every key exactly once, in declaration order."""
    return {f.name: _format(getattr(config, f.name)) for f in fields(config)}


def echo_lines(config: PipelineConfig) -> List[str]:
    return [f"{k}={v}" for k, v in config_echo(config).items()]


def config_from_echo(echo: Dict[str, str]) -> PipelineConfig:
    """Inverse of config_echo; keys that are not config keys (e.g. phase) are ignored."""
    values = {k: parse_value(k, v) for k, v in echo.items() if k in FIELD_TYPES}
    return PipelineConfig(**values)
