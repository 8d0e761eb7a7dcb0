"""Flat ``key = value`` run configuration with simulation-table defaults."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .channel import ChannelConfig
from .evaluation import BAND_LEVELS, OCCUPANCY_LEVELS, PATH_LEVELS, VELOCITY_LEVELS, ABLATION_VELOCITIES, EvalCondition
from .interference import DEFAULT_P10
from .losses import LossWeights
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


# key -> (parser, default)
SCHEMA = {
    # channel
    "fc": (float, 3.5e9),
    "bandwidth": (float, 100e6),
    "nb": (int, 5),
    "fb": (int, 256),
    "T": (int, 20),
    "ts": (float, 0.5e-3),
    "paths": (int, 6),
    "velocity": (float, 7.0),
    "d_max": (_opt_int, None),
    "noise_scale": (float, 0.1),
    "jitter": (_bool, True),
    # model
    "d_model": (int, 128),
    "n_heads": (int, 4),
    "n_blocks": (int, 2),
    "ffn_hidden": (_opt_int, None),  # auto: 2 * d_model
    # training
    "epochs": (int, 70),
    "steps_per_epoch": (int, 5000),
    "lr": (float, 1e-3),
    "weight_decay": (float, 1e-4),
    "clip_norm": (float, 1.0),
    "v_min": (float, 0.5),
    "v_max": (float, 30.0),
    "pi_min": (float, 0.1),
    "pi_max": (float, 0.9),
    "p10": (float, DEFAULT_P10),
    "lambda_pdp": (float, 1.0),
    "lambda_sparse": (float, 5e-4),
    "lambda_temp": (float, 0.05),
    # evaluation
    "eval_samples": (int, 500),
    "eval_velocity": (float, 7.0),
    "eval_pi": (float, 0.5),
    "occupancy_levels": (_floats, OCCUPANCY_LEVELS),
    "velocity_levels": (_floats, VELOCITY_LEVELS),
    "path_levels": (_ints, PATH_LEVELS),
    "band_levels": (_ints, BAND_LEVELS),
    "ablation_velocities": (_floats, ABLATION_VELOCITIES),
    # run
    "seed": (int, 0),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def channel(self, **changes) -> ChannelConfig:
        v = self.values
        kw = dict(
            fc=v["fc"], bandwidth=v["bandwidth"], nb=v["nb"], fb=v["fb"], T=v["T"], ts=v["ts"], paths=v["paths"],
            velocity=v["velocity"], d_max=v["d_max"], noise_scale=v["noise_scale"], jitter=v["jitter"],
        )
        kw.update(changes)
        return ChannelConfig(**kw)

    def model(self, **changes) -> ModelConfig:
        v = self.values
        kw = dict(d_model=v["d_model"], n_heads=v["n_heads"], n_blocks=v["n_blocks"], ffn_hidden=v["ffn_hidden"], T=v["T"], nb=v["nb"], fb=v["fb"])
        kw.update(changes)
        return ModelConfig(**kw)

    def train(self, **changes) -> TrainConfig:
        v = self.values
        channel = changes.pop("channel", None) or self.channel()
        model = changes.pop("model", None) or self.model(T=channel.T, nb=channel.nb, fb=channel.fb)
        kw = dict(
            epochs=v["epochs"], steps_per_epoch=v["steps_per_epoch"], lr=v["lr"], weight_decay=v["weight_decay"],
            clip_norm=v["clip_norm"], v_min=v["v_min"], v_max=v["v_max"], pi_min=v["pi_min"], pi_max=v["pi_max"],
            p10=v["p10"], weights=LossWeights(v["lambda_pdp"], v["lambda_sparse"], v["lambda_temp"]),
            seed=v["seed"], channel=channel, model=model,
        )
        kw.update(changes)
        return TrainConfig(**kw)

    def eval_condition(self, **changes) -> EvalCondition:
        v = self.values
        kw = dict(channel=self.channel(velocity=v["eval_velocity"]), pi_busy=v["eval_pi"], n_samples=v["eval_samples"], seed=v["seed"], p10=v["p10"])
        kw.update(changes)
        return EvalCondition(**kw)

    def derived(self) -> dict:
        ch = self.channel()
        return {
            "F": ch.F,
            "delta_f_hz": ch.delta_f,
            "delta_tau_s": ch.delta_tau,
            "d_max": ch.max_delay,
            "ffn_hidden": self.model().hidden,
        }

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.values.items():
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    def validate(self) -> "RunConfig":
        try:
            self.train()
            self.eval_condition()
        except ValueError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        hidden = self.values["ffn_hidden"]
        if hidden is not None and hidden < 1:
            raise ConfigError("invalid configuration: ffn_hidden must be >= 1")
        return self


def parse_lines(lines, source: str = "<config>") -> dict:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = (value, f"{source}:{n}")
    return out


def _apply(values: dict, raw: dict):
    for key, (text, where) in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}; valid keys: {', '.join(SCHEMA)}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from exc


def parse_config(path=None, overrides=None) -> RunConfig:
    """Resolve defaults <- config file <- ``overrides`` (``key=value`` strings or a dict)."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        _apply(cfg.values, parse_lines(p.read_text().splitlines(), str(p)))
    if overrides:
        if isinstance(overrides, dict):
            raw = {k: (str(v), "override") for k, v in overrides.items()}
        else:
            raw = parse_lines(overrides, "--set")
        _apply(cfg.values, raw)
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.values.items():
        if isinstance(v, tuple):
            v = ", ".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
        elif v is None:
            v = "auto"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"

