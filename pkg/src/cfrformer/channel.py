"""Time-varying multipath channel generator.

Each realization is a ``T x F`` channel impulse response built from ``P``
Rayleigh paths with Doppler phase ramps, low-pass filtered gain noise and
per-snapshot delay jitter, plus its DFT (the channel frequency response).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import butterworth_design, dft_rows, filter_sequence

SPEED_OF_LIGHT = 299_792_458.0
# Doppler-to-cutoff divisor for the gain-noise filter.
CLARKE_CUTOFF_DIVISOR = 0.423
WN_FLOOR = 1e-4


@dataclass(frozen=True)
class ChannelConfig:
    fc: float = 3.5e9
    bandwidth: float = 100e6
    nb: int = 5
    fb: int = 256
    T: int = 20
    ts: float = 0.5e-3
    paths: int = 6
    velocity: float = 7.0
    d_max: int | None = None
    noise_scale: float = 0.1
    jitter: bool = True

    def __post_init__(self):
        if self.nb < 1 or self.fb < 1:
            raise ValueError("nb and fb must be positive")
        if self.T < 1:
            raise ValueError("T must be positive")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.velocity < 0:
            raise ValueError("velocity must be >= 0")
        if self.ts <= 0:
            raise ValueError("ts must be > 0")
        if self.fc <= 0 or self.bandwidth <= 0:
            raise ValueError("fc and bandwidth must be > 0")
        if not 0 < self.max_delay < self.F:
            raise ValueError(f"d_max must satisfy 0 < d_max < F={self.F}, got {self.max_delay}")

    @property
    def F(self) -> int:
        return self.nb * self.fb

    @property
    def max_delay(self) -> int:
        return self.d_max if self.d_max is not None else max(1, self.F // 16)

    @property
    def delta_f(self) -> float:
        return self.bandwidth / self.F

    @property
    def delta_tau(self) -> float:
        return 1.0 / self.bandwidth

    @property
    def doppler(self) -> float:
        return max_doppler(self.velocity, self.fc)

    @property
    def max_phase_step(self) -> float:
        return 2.0 * math.pi * self.doppler * self.ts

    @property
    def noise_cutoff(self) -> float:
        wn = self.doppler * self.ts / CLARKE_CUTOFF_DIVISOR
        return min(max(wn, WN_FLOOR), 1.0 - WN_FLOOR)

    def with_(self, **changes) -> "ChannelConfig":
        return replace(self, **changes)


def max_doppler(v: float, fc: float) -> float:
    """Maximum Doppler shift in Hz for speed ``v`` (m/s) at carrier ``fc`` (Hz)."""
    if v < 0 or fc <= 0:
        raise ValueError("need v >= 0 and fc > 0")
    return v * fc / SPEED_OF_LIGHT


@dataclass
class PathState:
    envelope: float
    phase0: float
    phase_step: float
    delay: int
    jitter: np.ndarray
    noise_r: np.ndarray
    noise_i: np.ndarray

    def delays(self, d_max: int) -> np.ndarray:
        return np.clip(self.delay + self.jitter, 0, d_max)

    def gains(self, noise_scale: float) -> np.ndarray:
        t = np.arange(self.jitter.shape[0])
        ramp = self.envelope * np.exp(1j * (self.phase0 + self.phase_step * t))
        return ramp + noise_scale * (self.noise_r + 1j * self.noise_i)


def sample_paths(cfg: ChannelConfig, rng: np.random.Generator) -> list[PathState]:
    """Draw the random state of every path.

    Path parameters are drawn before the (velocity-dependent length) noise
    sequences, so two configs differing only in velocity share envelopes,
    phases and delays for the same stream.
    """
    P, T = cfg.paths, cfg.T
    envelope = np.sqrt(rng.exponential(1.0, P))
    phase0 = rng.uniform(0.0, 2.0 * math.pi, P)
    step_max = cfg.max_phase_step
    phase_step = rng.uniform(-step_max, step_max, P) if step_max > 0 else np.zeros(P)
    delay = rng.integers(0, cfg.max_delay + 1, P)
    jitter = rng.integers(-1, 2, (P, T))
    if not cfg.jitter:
        jitter = np.zeros_like(jitter)

    filt = butterworth_design(cfg.noise_cutoff)
    warmup = filt.warmup_length()
    white = rng.standard_normal((P, 2, warmup + T))
    paths = []
    for p in range(P):
        paths.append(
            PathState(
                envelope=float(envelope[p]),
                phase0=float(phase0[p]),
                phase_step=float(phase_step[p]),
                delay=int(delay[p]),
                jitter=jitter[p],
                noise_r=filter_sequence(filt, white[p, 0], warmup),
                noise_i=filter_sequence(filt, white[p, 1], warmup),
            )
        )
    return paths


@dataclass
class ChannelRealization:
    cir: np.ndarray
    cfr: np.ndarray
    config: ChannelConfig
    seed: tuple = field(default=())


def realize(cfg: ChannelConfig, paths: list[PathState]) -> tuple[np.ndarray, np.ndarray]:
    cir = np.zeros((cfg.T, cfg.F), dtype=np.complex128)
    rows = np.arange(cfg.T)
    for path in paths:
        # colliding taps superpose
        np.add.at(cir, (rows, path.delays(cfg.max_delay)), path.gains(cfg.noise_scale))
    return cir, dft_rows(cir)


def generate_realization(cfg: ChannelConfig, rng: np.random.Generator, seed: tuple = ()) -> ChannelRealization:
    cir, cfr = realize(cfg, sample_paths(cfg, rng))
    return ChannelRealization(cir=cir, cfr=cfr, config=cfg, seed=seed)


# ---------------------------------------------------------------------------
# realization dump

SAMPLE_MAGIC = b"CFRS"
SAMPLE_VERSION = 1


def save_realization(path, real: ChannelRealization, mask: np.ndarray | None = None) -> None:
    """Write a realization as ``magic | version | header | cir | cfr | mask``.

    Grids are little-endian float64 interleaved (re, im), row-major. The mask,
    when present, is stored as packed bits in row-major order.
    """
    header = {
        "config": asdict(real.config),
        "seed": list(real.seed),
        "shape": list(real.cir.shape),
        "has_mask": mask is not None,
    }
    text = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(SAMPLE_MAGIC)
        fh.write(struct.pack("<II", SAMPLE_VERSION, len(text)))
        fh.write(text)
        for grid in (real.cir, real.cfr):
            fh.write(np.ascontiguousarray(grid, dtype="<c16").tobytes())
        if mask is not None:
            fh.write(np.packbits(np.asarray(mask, dtype=np.uint8).ravel()).tobytes())


def load_realization(path) -> tuple[ChannelRealization, np.ndarray | None]:
    blob = Path(path).read_bytes()
    if blob[:4] != SAMPLE_MAGIC:
        raise ValueError(f"{path}: not a realization file")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != SAMPLE_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = 12
    header = json.loads(blob[pos : pos + hlen])
    pos += hlen
    rows, cols = header["shape"]
    n = rows * cols * 16
    cir = np.frombuffer(blob, dtype="<c16", count=rows * cols, offset=pos).reshape(rows, cols).copy()
    pos += n
    cfr = np.frombuffer(blob, dtype="<c16", count=rows * cols, offset=pos).reshape(rows, cols).copy()
    pos += n
    mask = None
    if header["has_mask"]:
        bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, offset=pos))
        mask = bits[: rows * cols].reshape(rows, cols).astype(np.uint8)
    cfg = ChannelConfig(**header["config"])
    return ChannelRealization(cir, cfr, cfg, tuple(header["seed"])), mask
