"""Run configuration and the flat ``key = value`` config file format.

Files are INI-style with one section per module::

    [autorec]
    k = 32
    alpha = 0.001

    [darec]
    variant = U
    mu = 1.0

Keys are unique across sections, so ``--set k=64`` and ``--set autorec.k=64``
mean the same thing. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Iterable


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class TrainConfig:
    # experiment
    variant: str = "U"
    orientation: str = ""
    seed: int = 0
    train_frac: float = 0.9
    val_frac: float = 0.1
    # autorec
    k: int = 32
    alpha: float = 0.1
    autorec_lr: float = 0.01
    autorec_batch: int = 32
    autorec_epochs: int = 150
    shared_autorec: bool = True
    # darec
    beta: float = 1.0
    mu: float = 10.0
    lam: float = 0.001
    extractor_width: int = 64
    lr: float = 0.01
    batch_size: int = 32
    epochs: int = 300
    cross_domain: bool = True
    share_heads: bool = True
    predict_from: str = "both"
    eval_every: int = 5
    patience: int = 0

    def __post_init__(self):
        if self.variant not in ("U", "I"):
            raise ConfigError(f"variant: expected U or I, got {self.variant!r}")
        orient = self.orientation or ("user" if self.variant == "U" else "item")
        object.__setattr__(self, "orientation", orient)
        if orient not in ("user", "item"):
            raise ConfigError(f"orientation: expected user or item, got {orient!r}")
        if (self.variant, orient) not in (("U", "user"), ("I", "item")):
            raise ConfigError(f"orientation: variant {self.variant} requires "
                              f"{'user' if self.variant == 'U' else 'item'} orientation, got {orient!r}")
        if self.predict_from not in ("own", "cross", "both"):
            raise ConfigError(f"predict_from: expected own, cross or both, got {self.predict_from!r}")
        for name in ("k", "autorec_batch", "batch_size", "extractor_width", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        for name in ("autorec_epochs", "epochs", "patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0")
        for name in ("alpha", "beta", "mu", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0")
        for name in ("autorec_lr", "lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be > 0")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError("train_frac: must lie in (0, 1)")
        if not 0.0 <= self.val_frac < 1.0:
            raise ConfigError("val_frac: must lie in [0, 1)")

    def with_(self, **changes) -> "TrainConfig":
        if "variant" in changes and "orientation" not in changes:
            changes["orientation"] = ""
        return replace(self, **changes)


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 300
    n_items_src: int = 150
    n_items_tgt: int = 150
    rank: int = 2
    rho: float = 0.9
    density_src: float = 0.2
    density_tgt: float = 0.02
    noise: float = 0.25
    seed: int = 0

    def __post_init__(self):
        for name in ("n_users", "n_items_src", "n_items_tgt", "rank"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho: must lie in [0, 1]")
        for name in ("density_src", "density_tgt"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"{name}: must lie in (0, 1]")
        if self.noise < 0:
            raise ConfigError("noise: must be >= 0")


SECTIONS = {
    "experiment": ("variant", "orientation", "seed", "train_frac", "val_frac"),
    "autorec": ("k", "alpha", "autorec_lr", "autorec_batch", "autorec_epochs", "shared_autorec"),
    "darec": ("beta", "mu", "lam", "extractor_width", "lr", "batch_size", "epochs",
              "cross_domain", "share_heads", "predict_from", "eval_every", "patience"),
    "synth": tuple(f"synth.{f.name}" for f in fields(SynthConfig)),
}
_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_SYNTH_TYPES = {f"synth.{f.name}": f.type for f in fields(SynthConfig)}


def _coerce(key: str, raw: str, typ: str) -> Any:
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None
    return raw


def _canonical(key: str) -> str:
    """Map ``section.key`` or bare ``key`` to the internal key name."""
    key = key.strip()
    if key in _TYPES or key in _SYNTH_TYPES:
        return key
    section, _, name = key.partition(".")
    if section == "synth" and f"synth.{name}" in _SYNTH_TYPES:
        return f"synth.{name}"
    if section in SECTIONS and name in SECTIONS[section]:
        return name
    raise ConfigError(f"{key}: unknown configuration key")


def read_config_file(path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read(path, encoding="utf-8")
    values: dict[str, Any] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"[{section}]: unknown section")
        for key, raw in parser.items(section):
            name = f"synth.{key}" if section == "synth" else key
            if name not in SECTIONS[section]:
                raise ConfigError(f"{section}.{key}: unknown configuration key")
            values[name] = raw
    return values


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"{item}: override must look like key=value")
        out[_canonical(key)] = val
    return out


def resolve(file_values: dict[str, Any] | None = None,
            overrides: dict[str, Any] | None = None) -> tuple[TrainConfig, SynthConfig]:
    """Build configs from file values, then overrides (later wins)."""
    merged = dict(file_values or {})
    merged.update(overrides or {})
    train_kw, synth_kw = {}, {}
    for key, raw in merged.items():
        key = _canonical(key)
        if key in _SYNTH_TYPES:
            val = raw if not isinstance(raw, str) else _coerce(key, raw, _SYNTH_TYPES[key])
            synth_kw[key.split(".", 1)[1]] = val
        else:
            val = raw if not isinstance(raw, str) else _coerce(key, raw, _TYPES[key])
            train_kw[key] = val
    return TrainConfig(**train_kw), SynthConfig(**synth_kw)


def dump_config(cfg: TrainConfig, synth: SynthConfig | None = None) -> str:
    """Fully resolved config in the same file format."""
    flat = asdict(cfg)
    lines = []
    for section, keys in SECTIONS.items():
        if section == "synth":
            if synth is None:
                continue
            lines.append("[synth]")
            lines += [f"{k} = {v}" for k, v in asdict(synth).items()]
        else:
            lines.append(f"[{section}]")
            lines += [f"{k} = {flat[k]}" for k in keys]
        lines.append("")
    return "\n".join(lines)
