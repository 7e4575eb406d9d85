"""Run configuration read from a sectioned ``key = value`` file.

Sections used by the commands::

    [run]       seed
    [scenario]  name, preset, sample_rate_hz, duration_s, groups, seed
    [baseline]  frequency_hz, amplitude, decay_per_s, noise_std
    [state.X]   same keys as [baseline], one section per state, in state order
    [features]  f_start_hz, f_stop_hz, window_length, stride
    [gmm]       n_components, tolerance, max_iterations, init
    [hmm]       preset, tolerance, max_iterations
    [split]     train_fraction, stratified, seed

``--seed`` on the command line replaces every seed in the file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .datastore import SplitSpec
from .errors import ConfigError, InvalidInputError
from .features import FrequencyWindow
from .gmm import FitConfig
from .hmm import PRESETS, TrainConfig


@dataclass
class RunConfig:
    parser: configparser.ConfigParser
    seed: int = 0
    window: FrequencyWindow | None = None
    window_length: int | None = None
    stride: int | None = None
    n_components: int = 3
    preset: str | None = None
    gmm: FitConfig = field(default_factory=FitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    seed_override: bool = False

    def require_features(self) -> None:
        missing = [
            k for k, v in (("f_start_hz/f_stop_hz", self.window), ("window_length", self.window_length),
                           ("stride", self.stride)) if v is None
        ]
        if missing:
            raise ConfigError(f"[features] needs {', '.join(missing)}")

    def require_preset(self) -> str:
        if self.preset is None:
            raise ConfigError("[hmm] preset is not set")
        return self.preset


def _get(section, key, cast, default=None):
    if section is None or key not in section:
        return default
    raw = section[key]
    try:
        if cast is bool:
            return section.getboolean(key)
        return cast(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a valid {cast.__name__}") from None


def read_parser(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parser


def run_config(parser: configparser.ConfigParser, seed: int | None = None, **overrides) -> RunConfig:
    """Build a :class:`RunConfig`; keyword overrides win over file values when not ``None``."""

    def sec(name):
        return parser[name] if name in parser else None

    base_seed = seed if seed is not None else _get(sec("run"), "seed", int, 0)
    feat, g, h, s = sec("features"), sec("gmm"), sec("hmm"), sec("split")

    def pick(key, section, name, cast, default=None):
        if overrides.get(key) is not None:
            return cast(overrides[key])
        return _get(section, name, cast, default)

    try:
        f_start = pick("f_start", feat, "f_start_hz", float)
        f_stop = pick("f_stop", feat, "f_stop_hz", float)
        window = FrequencyWindow(f_start, f_stop) if f_start is not None and f_stop is not None else None
        preset = pick("preset", h, "preset", str) or _get(sec("scenario"), "preset", str)
        if preset is not None and preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        n_components = pick("n_components", g, "n_components", int, 3)
        if n_components < 1:
            raise ConfigError("n_components must be >= 1")
        gmm_seed = base_seed if seed is not None else _get(g, "seed", int, base_seed)
        split_seed = base_seed if seed is not None else _get(s, "seed", int, base_seed)
        for value in (base_seed, gmm_seed, split_seed):
            if not 0 <= value < 2**64:
                raise ConfigError(f"seed {value} is not an unsigned 64-bit integer")
        return RunConfig(
            parser=parser,
            seed=base_seed,
            window=window,
            window_length=pick("window_length", feat, "window_length", int),
            stride=pick("stride", feat, "stride", int),
            n_components=n_components,
            preset=preset,
            gmm=FitConfig(
                tolerance=_get(g, "tolerance", float, 1e-6),
                max_iterations=_get(g, "max_iterations", int, 200),
                seed=gmm_seed,
                init=_get(g, "init", str, "kmeans++"),
            ),
            train=TrainConfig(
                tolerance=_get(h, "tolerance", float, 1e-6),
                max_iterations=_get(h, "max_iterations", int, 200),
            ),
            split=SplitSpec(
                train_fraction=pick("train_fraction", s, "train_fraction", float, 0.5),
                seed=split_seed,
                stratified=_get(s, "stratified", bool, True),
            ),
            seed_override=seed is not None,
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path, seed: int | None = None, **overrides) -> RunConfig:
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file {path} does not exist")
    return run_config(read_parser(path), seed, **overrides)
