"""Bursty sub-band interference from independent two-state Markov chains."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_P10 = 0.30


class InfeasibleTargetError(ValueError):
    pass


@dataclass(frozen=True)
class DtmcParams:
    """Idle->Busy (``p01``) and Busy->Idle (``p10``) transition probabilities."""

    p01: float
    p10: float

    def __post_init__(self):
        for name in ("p01", "p10"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")

    @property
    def pi_busy(self) -> float:
        total = self.p01 + self.p10
        return 0.0 if total == 0 else self.p01 / total

    @property
    def mean_burst(self) -> float:
        return float("inf") if self.p10 == 0 else 1.0 / self.p10


def p01_from_target(pi_busy: float, p10: float = DEFAULT_P10) -> float:
    """Idle->Busy probability giving stationary busy probability ``pi_busy``."""
    if not 0.0 <= pi_busy < 1.0:
        raise ValueError(f"pi_busy must be in [0, 1), got {pi_busy}")
    if not 0.0 < p10 <= 1.0:
        raise ValueError(f"p10 must be in (0, 1], got {p10}")
    p01 = pi_busy * p10 / (1.0 - pi_busy)
    if p01 > 1.0:
        limit = 1.0 / (1.0 + p10)
        raise InfeasibleTargetError(
            f"pi_busy={pi_busy} needs p01={p01:.3f} > 1 at p10={p10}; "
            f"feasible maximum is pi_busy={limit:.4f}"
        )
    return p01


def dtmc_for_target(pi_busy: float, p10: float = DEFAULT_P10) -> DtmcParams:
    """Chain parameters for a target occupancy, clamping p01 at 1 when needed.

    When the target is infeasible at the requested ``p10`` the busy->idle
    probability is re-solved as ``(1 - pi) / pi`` so that the stationary
    occupancy is preserved at the cost of longer bursts.
    """
    if pi_busy >= 1.0:
        return DtmcParams(1.0, 0.0)
    try:
        return DtmcParams(p01_from_target(pi_busy, p10), p10)
    except InfeasibleTargetError as exc:
        log.debug("%s; clamping p01=1 and using p10=%.4f", exc, (1 - pi_busy) / pi_busy)
        return DtmcParams(1.0, (1.0 - pi_busy) / pi_busy)


def clamp_note(pi_busy: float, p10: float = DEFAULT_P10) -> str | None:
    """Human-readable note when ``pi_busy`` needs the p01 clamp, else None."""
    if pi_busy >= 1.0 or pi_busy * p10 / (1.0 - pi_busy) <= 1.0:
        return None
    return (
        f"pi_busy={pi_busy} is infeasible at p10={p10} (max {1.0 / (1.0 + p10):.4f}); "
        f"using p01=1, p10={(1.0 - pi_busy) / pi_busy:.4f}"
    )


def markov_trajectories(params: DtmcParams, T: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent chains of length ``T`` started from stationarity (1 = busy)."""
    u = rng.random((T, n))
    states = np.empty((T, n), dtype=np.uint8)
    state = u[0] < params.pi_busy
    states[0] = state
    for t in range(1, T):
        state = np.where(state, u[t] >= params.p10, u[t] < params.p01)
        states[t] = state
    return states.T


@dataclass
class InterferenceMask:
    grid: np.ndarray  # (T, F) uint8, 1 = busy / missing
    trajectories: np.ndarray  # (Nb, T)

    @property
    def fb(self) -> int:
        return self.grid.shape[1] // self.trajectories.shape[0]

    @classmethod
    def from_trajectories(cls, trajectories: np.ndarray, fb: int) -> "InterferenceMask":
        trajectories = np.asarray(trajectories, dtype=np.uint8)
        grid = np.repeat(trajectories.T, fb, axis=1)
        return cls(grid=grid, trajectories=trajectories)


def generate_mask(params: DtmcParams, T: int, nb: int, fb: int, rng: np.random.Generator) -> InterferenceMask:
    return InterferenceMask.from_trajectories(markov_trajectories(params, T, nb, rng), fb)


def _grid(mask) -> np.ndarray:
    return mask.grid if isinstance(mask, InterferenceMask) else np.asarray(mask)


def apply_mask(cfr: np.ndarray, mask) -> np.ndarray:
    """Zero the busy cells of ``cfr``; observed cells are returned untouched."""
    m = _grid(mask)
    if m.shape != cfr.shape:
        raise ValueError(f"mask shape {m.shape} does not match grid shape {cfr.shape}")
    return np.where(m.astype(bool), 0, cfr).astype(cfr.dtype)


def burst_lengths(trajectory: np.ndarray) -> np.ndarray:
    """Lengths of maximal runs of ones in a binary sequence."""
    x = np.concatenate(([0], np.asarray(trajectory, dtype=np.int8), [0]))
    d = np.diff(x)
    return np.flatnonzero(d == -1) - np.flatnonzero(d == 1)
