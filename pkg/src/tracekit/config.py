"""Plain-text configuration: INI sections of ``key = value`` pairs.

Example::

    [code]
    n = 10000
    m = 1024
    seed = 7

    [attack]
    name = interleaving
    c = 4

    [decoder]
    c_max = 8
    p_fp = 0.01

    [experiment]
    repetitions = 100
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace

from .codegen import CodeParams
from .collusion import HARD_ATTACKS, SOFT_PRESETS, named_channel, snr_to_noise_var, soft_preset, SoftChannel
from .decoder import DecoderParams
from .errors import ParameterError, TracekitError

SECTIONS = ("code", "attack", "decoder", "experiment", "io")
DECODER_VARIANTS = ("joint", "single", "single-si", "compound", "symmetric", "map-oracle",
                    "soft-joint", "hard-joint", "soft-single", "hard-single")


class ConfigError(TracekitError):
    """Missing, unknown or invalid configuration entries."""


@dataclass(frozen=True)
class AttackSpec:
    name: str = "interleaving"
    c: int = 2
    soft: str = ""          # "", "I" or "II"
    noise_var: float = 1.0

    def hard_channel(self):
        return named_channel(self.name, self.c)

    def soft_channel(self) -> SoftChannel:
        if self.name in SOFT_PRESETS:
            return soft_preset(self.name, self.c, self.noise_var)
        return SoftChannel("II", self.c, named_channel(self.name, self.c).theta, self.noise_var)

    @property
    def is_soft(self) -> bool:
        return bool(self.soft) or self.name in SOFT_PRESETS


@dataclass(frozen=True)
class ExperimentConfig:
    code: CodeParams
    attack: AttackSpec
    decoder: DecoderParams
    repetitions: int = 1
    seed: int = 0
    out: str = "-"
    sweep_c: tuple = ()
    sweep_m: tuple = ()
    decoders: tuple = ("joint",)
    workers: int = 1
    io: dict = field(default_factory=dict)
    raw: configparser.ConfigParser | None = field(default=None, compare=False, repr=False)

    def digest(self) -> str:
        text = dump_config(self.raw) if self.raw is not None else repr(self)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, code=replace(self.code, seed=seed))


def parse_text(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from None
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    return cp


def dump_config(cp: configparser.ConfigParser) -> str:
    """Serialise sections and keys in their original order (comments are dropped)."""
    out = []
    for sec in cp.sections():
        if out:
            out.append("")
        out.append(f"[{sec}]")
        for key, val in cp.items(sec, raw=True):
            out.append(f"{key} = {val}")
    return "\n".join(out) + "\n"


def normalise(text: str) -> str:
    """Canonical form of a config text, for round-trip comparisons."""
    return dump_config(parse_text(text))


_KEYS = {
    "code": {"n": int, "m": int, "dist": str, "seed": int},
    "attack": {"name": str, "c": int, "soft": str, "noise_var": float, "snr_db": float},
    "decoder": {"c_max": int, "t_max": int, "subset_budget": float, "p_fp": float, "scenario": str,
                "score_mode": str, "particles": int, "sweeps": float, "confidence": float,
                "single_pass": bool},
    "experiment": {"repetitions": int, "seed": int, "out": str, "sweep_c": list, "sweep_m": list,
                   "decoders": list, "workers": int},
    "io": {"code": str, "trace": str, "report": str, "worst_cache": str},
}


def _get(cp, sec, key, kind, default):
    if not cp.has_option(sec, key):
        return default
    raw = cp.get(sec, key, raw=True).strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if kind is list:
            return tuple(v for v in raw.replace(",", " ").split() if v)
        if kind is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{sec}] {key}: cannot read {raw!r} as {kind.__name__}") from None


def from_parser(cp: configparser.ConfigParser, seed_override: int | None = None) -> ExperimentConfig:
    for sec in cp.sections():
        for key in cp.options(sec):
            if key not in _KEYS[sec]:
                raise ConfigError(f"[{sec}] unknown key {key!r}")
    g = lambda sec, key, default: _get(cp, sec, key, _KEYS[sec][key], default)  # noqa: E731
    seed = g("experiment", "seed", g("code", "seed", 0))
    if seed_override is not None:
        seed = int(seed_override)
    try:
        code = CodeParams(g("code", "n", 100), g("code", "m", 256), g("code", "dist", "tardos"), seed)
        name = g("attack", "name", "interleaving")
        if name not in HARD_ATTACKS + SOFT_PRESETS:
            raise ConfigError(f"[attack] unknown attack {name!r}")
        soft = g("attack", "soft", "")
        if soft not in ("", "I", "II"):
            raise ConfigError("[attack] soft must be empty, I or II")
        noise = g("attack", "noise_var", 1.0)
        if cp.has_option("attack", "snr_db"):
            noise = snr_to_noise_var(g("attack", "snr_db", 0.0))
        attack = AttackSpec(name, g("attack", "c", 2), soft, noise)
        c_max = g("decoder", "c_max", max(attack.c, 2))
        dec = DecoderParams(
            c_max=c_max, t_max=g("decoder", "t_max", min(5, c_max)),
            subset_budget=g("decoder", "subset_budget", 4.5e6), p_fp=g("decoder", "p_fp", 1e-2),
            scenario=g("decoder", "scenario", "detect-many"), score_mode=g("decoder", "score_mode", "inference"),
            particles=g("decoder", "particles", 1000), sweeps=g("decoder", "sweeps", 1.0),
            confidence=g("decoder", "confidence", 0.95), seed=seed,
            single_pass=g("decoder", "single_pass", False),
            oracle=attack.hard_channel() if g("decoder", "score_mode", "") == "map-oracle" else None)
        decoders = g("experiment", "decoders", ("joint",))
        bad = [d for d in decoders if d not in DECODER_VARIANTS]
        if bad:
            raise ConfigError(f"[experiment] unknown decoder(s): {', '.join(bad)}")
        reps = g("experiment", "repetitions", 1)
        if reps < 1:
            raise ConfigError("[experiment] repetitions must be >= 1")
        workers = g("experiment", "workers", 1)
        if workers < 1:
            raise ConfigError("[experiment] workers must be >= 1")
        sweep_c = tuple(int(v) for v in g("experiment", "sweep_c", ()))
        sweep_m = tuple(int(v) for v in g("experiment", "sweep_m", ()))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"invalid value: {exc}") from None
    io = {k: cp.get("io", k, raw=True) for k in cp.options("io")} if cp.has_section("io") else {}
    return ExperimentConfig(code, attack, dec, reps, seed, g("experiment", "out", "-"),
                            sweep_c, sweep_m, tuple(decoders), workers, io, cp)


def load_config(path: str, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    return from_parser(parse_text(text), seed_override)


def loads_config(text: str, seed_override: int | None = None) -> ExperimentConfig:
    return from_parser(parse_text(text), seed_override)
