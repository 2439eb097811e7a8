"""Training configuration and the ``key = value`` config-file format.

Nested dataclasses are flattened with dotted prefixes, e.g.::

    batch_size = 2
    patch = 64 64 64
    net.base_filters = 32
    augment.p_scale = 0.2
    loss.smooth = 1e-05
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..loss import LossConfig
from ..net.model import NetworkConfig
from ..prep import AugmentConfig


@dataclass
class TrainConfig:
    batch_size: int = 2
    epochs: int = 300
    folds: int = 5
    patch: tuple[int, int, int] = (64, 64, 64)
    steps_per_epoch: int = 50
    optimizer: str = "sgd"  # "sgd" (Nesterov) or "adam"
    lr: float = 0.01
    momentum: float = 0.99
    weight_decay: float = 3e-5
    poly_exponent: float = 0.9
    fg_fraction: float = 0.5
    seed: int = 0
    workers: int = 1
    deterministic: bool = True
    target_soft_dice: float | None = None  # stop early once the training batch reaches it
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        self.patch = tuple(int(p) for p in self.patch)
        if len(self.patch) != 3:
            raise ValueError("patch must have three dims")

    def check_patch(self, netcfg: NetworkConfig):
        f = 2 ** (netcfg.stages - 1)
        for name, n in zip(("depth", "height", "width"), self.patch):
            if n % f:
                raise ValueError(f"patch {name} {n} is not divisible by {f}")


def _parse(value: str, tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value.lower() in ("none", ""):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _parse(value, inner)
    if origin is tuple:
        elem = args[0]
        return tuple(_parse(v, elem) for v in value.replace(",", " ").split())
    if tp is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if tp in (int, float, str):
        return tp(value)
    raise TypeError(f"unsupported config type {tp}")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def flatten(obj, prefix: str = "") -> dict[str, str]:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, f"{prefix}{f.name}."))
        else:
            out[prefix + f.name] = _format(value)
    return out


def apply(obj, kv: dict[str, str]):
    """Return a copy of dataclass ``obj`` with dotted keys overridden."""
    hints = typing.get_type_hints(type(obj))
    changes, nested = {}, {}
    for key, value in kv.items():
        head, _, rest = key.partition(".")
        if head not in hints:
            raise KeyError(f"unknown config key {key!r}")
        if rest:
            nested.setdefault(head, {})[rest] = value
        else:
            changes[head] = _parse(value, hints[head])
    for head, sub in nested.items():
        changes[head] = apply(getattr(obj, head), sub)
    return dataclasses.replace(obj, **changes)


def read_kv(path) -> dict[str, str]:
    kv = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    return kv


def write_kv(path, kv: dict[str, str]) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in kv.items()))


def load_configs(path=None, overrides: dict[str, str] | None = None):
    """(TrainConfig, NetworkConfig) from a config file; ``net.*`` keys go to the network."""
    kv = read_kv(path) if path else {}
    kv.update(overrides or {})
    net_kv = {k[4:]: v for k, v in kv.items() if k.startswith("net.")}
    train_kv = {k: v for k, v in kv.items() if not k.startswith("net.")}
    return apply(TrainConfig(), train_kv), apply(NetworkConfig(), net_kv)


def resolved(train: TrainConfig, net: NetworkConfig) -> dict[str, str]:
    """Every field with defaults materialized, for provenance echoes."""
    out = flatten(train)
    out.update({f"net.{k}": v for k, v in flatten(net).items()})
    return out
