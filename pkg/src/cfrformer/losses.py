"""Physics-informed loss terms and the PDP similarity metric.

Every loss accepts the estimate either as a complex ndarray (returns a
float) or as a ``(real, imag)`` pair of :class:`~cfrformer.autodiff.Tensor`
(returns a differentiable scalar Tensor). Expectations are plain means over
all grid cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, complex_abs
from .numerics import idft_rows, pdp_rows

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class LossWeights:
    pdp: float = 1.0
    sparse: float = 5e-4
    temporal: float = 0.05

    def __post_init__(self):
        if min(self.pdp, self.sparse, self.temporal) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    cfr: float
    pdp: float
    sparse: float
    temporal: float
    total: float

    def as_dict(self) -> dict:
        return {"cfr": self.cfr, "pdp": self.pdp, "sparse": self.sparse, "temporal": self.temporal, "total": self.total}


def _as_pair(est):
    if isinstance(est, tuple):
        return est, True
    est = np.asarray(est)
    return (Tensor(est.real.copy()), Tensor(est.imag.copy())), False


def _finish(t: Tensor, differentiable: bool):
    return t if differentiable else t.item()


def _check_shapes(est_shape, truth):
    if tuple(est_shape) != np.shape(truth):
        raise ValueError(f"estimate shape {tuple(est_shape)} does not match truth shape {np.shape(truth)}")


@lru_cache(maxsize=16)
def _idft_matrices(F: int, dtype_str: str):
    n = np.arange(F)
    angle = 2.0 * np.pi * np.outer(n, n) / F
    return np.cos(angle).astype(dtype_str) / F, np.sin(angle).astype(dtype_str) / F


def idft_tensor(re: Tensor, im: Tensor):
    """Row-wise inverse DFT (1/F scaling) on split real/imaginary tensors."""
    c, s = _idft_matrices(re.shape[-1], re.dtype.str)
    c, s = Tensor(c), Tensor(s)
    return re @ c - im @ s, re @ s + im @ c


def loss_cfr(est, truth):
    (er, ei), diff = _as_pair(est)
    _check_shapes(er.shape, truth)
    dr = er - truth.real.astype(er.dtype)
    di = ei - truth.imag.astype(er.dtype)
    return _finish((dr * dr + di * di).mean(), diff)


def loss_pdp(est, truth):
    (er, ei), diff = _as_pair(est)
    _check_shapes(er.shape, truth)
    hr, hi = idft_tensor(er, ei)
    p_true = pdp_rows(idft_rows(truth)).astype(er.dtype)
    d = hr * hr + hi * hi - p_true
    return _finish((d * d).mean(), diff)


def loss_sparse(est):
    (er, ei), diff = _as_pair(est)
    hr, hi = idft_tensor(er, ei)
    return _finish(complex_abs(hr, hi).mean(), diff)


def loss_temporal(est):
    (er, ei), diff = _as_pair(est)
    if er.shape[-2] < 2:
        return _finish(Tensor(np.zeros((), dtype=er.dtype)), diff)
    dr = er[..., 1:, :] - er[..., :-1, :]
    di = ei[..., 1:, :] - ei[..., :-1, :]
    return _finish(complex_abs(dr, di).mean(), diff)


def composite_loss(est: tuple, truth: np.ndarray, w: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the four terms as a differentiable scalar plus its breakdown."""
    terms = (loss_cfr(est, truth), loss_pdp(est, truth), loss_sparse(est), loss_temporal(est))
    total = terms[0] + w.pdp * terms[1] + w.sparse * terms[2] + w.temporal * terms[3]
    vals = [t.item() for t in terms]
    breakdown = LossBreakdown(*vals, total=vals[0] + w.pdp * vals[1] + w.sparse * vals[2] + w.temporal * vals[3])
    return total, breakdown


def total_loss(est, truth: np.ndarray, w: LossWeights = LossWeights()) -> LossBreakdown:
    pair, _ = _as_pair(est)
    return composite_loss(pair, truth, w)[1]


def pdp_similarity_rows(est: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-snapshot similarity of unit-L2-normalized PDPs, clipped to [0, 1]."""
    est = np.asarray(est)
    truth = np.asarray(truth)
    _check_shapes(est.shape, truth)
    p = pdp_rows(idft_rows(truth))
    q = pdp_rows(idft_rows(est))
    pn = np.linalg.norm(p, axis=-1, keepdims=True)
    qn = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(pn == 0):
        row = int(np.argwhere(pn.reshape(-1) == 0)[0, 0])
        raise ValueError(f"ground-truth PDP has zero energy in row {row}")
    empty = (qn == 0).reshape(qn.shape[:-1])
    q = q / np.where(qn == 0, 1.0, qn)
    rho = 1.0 - np.linalg.norm(q - p / pn, axis=-1) / SQRT2
    rho = np.where(empty, 0.0, rho)
    return np.clip(rho, 0.0, 1.0)


def pdp_similarity(est: np.ndarray, truth: np.ndarray) -> float:
    """Mean over snapshots of the PDP similarity factor."""
    return float(pdp_similarity_rows(est, truth).mean())
