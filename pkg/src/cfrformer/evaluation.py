"""Paired-seed evaluation of reconstruction methods and the experiment sweeps.

Sample ``i`` of every condition is drawn from streams keyed only by the
condition's base seed and ``i``. All methods therefore see the same
realization and mask at a given condition, and conditions that differ in a
single swept parameter share the remaining randomness (same path envelopes,
phases and delays, same uniform draws behind the masks).
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import STRATEGIES
from .channel import ChannelConfig
from .interference import DEFAULT_P10, clamp_note
from .losses import pdp_similarity
from .model import CFRTransformer, FeatureGrid
from .training import EVAL_DOMAIN, Sample, make_sample

log = logging.getLogger(__name__)

METHODS = ("transformer", "historical", "zero", "spline")
OCCUPANCY_LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9)
VELOCITY_LEVELS = (0.5, 1.0, 3.0, 7.0, 15.0, 30.0)
PATH_LEVELS = (2, 6, 10)
BAND_LEVELS = (3, 5, 7, 9)
ABLATION_VELOCITIES = (0.5, 7.0, 30.0)
RESULT_COLUMNS = (
    "method",
    "velocity_mps",
    "pi_busy",
    "paths",
    "nb_subbands",
    "doppler_hz",
    "rho_mean",
    "rho_std",
    "n_samples",
    "seed",
)


class GeometryMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class EvalCondition:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    pi_busy: float = 0.5
    n_samples: int = 100
    seed: int = 1
    p10: float = DEFAULT_P10

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0.0 <= self.pi_busy <= 1.0:
            raise ValueError("pi_busy must be in [0, 1]")

    @property
    def velocity(self) -> float:
        return self.channel.velocity

    @property
    def paths(self) -> int:
        return self.channel.paths

    def with_channel(self, **changes) -> "EvalCondition":
        return replace(self, channel=self.channel.with_(**changes))

    def with_(self, **changes) -> "EvalCondition":
        return replace(self, **changes)


@dataclass
class SweepResult:
    method: str
    condition: EvalCondition
    rho_mean: float
    rho_std: float
    n_samples: int
    rhos: list = field(default_factory=list, repr=False)

    @property
    def doppler(self) -> float:
        return self.condition.channel.doppler

    def row(self) -> dict:
        c = self.condition
        return {
            "method": self.method,
            "velocity_mps": f"{c.velocity:.10g}",
            "pi_busy": f"{c.pi_busy:.10g}",
            "paths": str(c.paths),
            "nb_subbands": str(c.channel.nb),
            "doppler_hz": f"{self.doppler:.6f}",
            "rho_mean": f"{self.rho_mean:.6f}",
            "rho_std": f"{self.rho_std:.6f}",
            "n_samples": str(self.n_samples),
            "seed": str(c.seed),
        }


def _check_geometry(model: CFRTransformer, channel: ChannelConfig):
    m = model.cfg
    if (m.T, m.nb, m.fb) != (channel.T, channel.nb, channel.fb):
        raise GeometryMismatchError(
            f"checkpoint geometry T={m.T}, nb={m.nb}, fb={m.fb} does not match "
            f"condition geometry T={channel.T}, nb={channel.nb}, fb={channel.fb}"
        )


def _summarize(method: str, cond: EvalCondition, rhos: list) -> SweepResult:
    arr = np.asarray(rhos, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return SweepResult(method, cond, float(arr.mean()), std, int(arr.size), list(arr))


def draw_eval_samples(cond: EvalCondition, workers: int = 1) -> list[Sample]:
    def one(i):
        return make_sample(cond.channel, cond.pi_busy, cond.seed, EVAL_DOMAIN, i, cond.p10)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, range(cond.n_samples)))
    return [one(i) for i in range(cond.n_samples)]


def _transformer_estimates(model: CFRTransformer, samples: list[Sample], batch: int = 16) -> list[np.ndarray]:
    out = []
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        feats = FeatureGrid(
            re=np.stack([s.features.re for s in chunk]),
            im=np.stack([s.features.im for s in chunk]),
            mask=np.stack([s.features.mask for s in chunk]),
        )
        out.extend(model(feats))
    return out


def evaluate_methods(methods, cond: EvalCondition, model: CFRTransformer | None = None, workers: int = 1, label: str | None = None) -> list[SweepResult]:
    """Evaluate several methods on one shared set of samples."""
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
        if method == "transformer":
            if model is None:
                raise ValueError("transformer evaluation needs a checkpoint")
            _check_geometry(model, cond.channel)
    note = clamp_note(cond.pi_busy, cond.p10)
    if note:
        log.warning(note)
    samples = draw_eval_samples(cond, workers)
    results = []
    for method in methods:
        if method == "transformer":
            estimates = _transformer_estimates(model, samples)
        else:
            fill = STRATEGIES[method]
            estimates = [fill(s.features.re + 1j * s.features.im, s.mask) for s in samples]
        rhos = [pdp_similarity(est, s.truth) for est, s in zip(estimates, samples)]
        name = label if (label and method == "transformer") else method
        results.append(_summarize(name, cond, rhos))
    return results


def evaluate_method(method: str, cond: EvalCondition, model: CFRTransformer | None = None, workers: int = 1) -> SweepResult:
    return evaluate_methods([method], cond, model, workers)[0]


def sweep_occupancy(methods, base_cond: EvalCondition, levels=OCCUPANCY_LEVELS, model=None, workers: int = 1) -> list[SweepResult]:
    results = []
    for pi in levels:
        results.extend(evaluate_methods(methods, base_cond.with_(pi_busy=pi), model, workers))
    return results


def sweep_velocity(methods, base_cond: EvalCondition, levels=VELOCITY_LEVELS, model=None, workers: int = 1) -> list[SweepResult]:
    results = []
    for v in levels:
        results.extend(evaluate_methods(methods, base_cond.with_channel(velocity=v), model, workers))
    return results


def sweep_paths(model: CFRTransformer, base_cond: EvalCondition, path_levels=PATH_LEVELS, velocity_levels=VELOCITY_LEVELS, methods=("transformer",), workers: int = 1) -> list[SweepResult]:
    """Velocity sweep repeated for each path count, one checkpoint for all."""
    results = []
    for p in path_levels:
        results.extend(sweep_velocity(methods, base_cond.with_channel(paths=p), velocity_levels, model, workers))
    return results


def band_geometry(nb: int, total_bins: int) -> tuple[int, int]:
    """Sub-band count and bins per sub-band keeping the total close to ``total_bins``."""
    fb = max(1, round(total_bins / nb))
    return nb, fb


def sweep_bands(models: dict, base_cond: EvalCondition, occupancy_levels=OCCUPANCY_LEVELS, velocity_levels=VELOCITY_LEVELS, occupancy_velocity: float = 7.0, velocity_pi: float = 0.5, workers: int = 1) -> list[SweepResult]:
    """Occupancy and velocity sweeps for one trained model per sub-band geometry.

    ``models`` maps sub-band count to a :class:`CFRTransformer` whose geometry
    defines the evaluation grid for that entry.
    """
    results = []
    for nb in sorted(models):
        model = models[nb]
        cond = base_cond.with_channel(nb=model.cfg.nb, fb=model.cfg.fb, T=model.cfg.T, d_max=None)
        if model.cfg.nb != nb:
            raise GeometryMismatchError(f"model registered for nb={nb} has nb={model.cfg.nb}")
        results.extend(sweep_occupancy(["transformer"], cond.with_channel(velocity=occupancy_velocity), occupancy_levels, model, workers))
        results.extend(sweep_velocity(["transformer"], cond.with_(pi_busy=velocity_pi), velocity_levels, model, workers))
    return results


def ablation_velocity(models: dict, base_cond: EvalCondition, eval_velocities=ABLATION_VELOCITIES, workers: int = 1) -> dict:
    """Mean rho per (training condition, evaluation velocity).

    ``models`` maps a training-condition label to a model; returns
    ``{label: [SweepResult per eval velocity]}``.
    """
    table = {}
    for label, model in models.items():
        row = []
        for v in eval_velocities:
            row.extend(evaluate_methods(["transformer"], base_cond.with_channel(velocity=v), model, workers, label=label))
        table[label] = row
    return table


def write_results(path, results) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in results:
            writer.writerow(r.row())


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
