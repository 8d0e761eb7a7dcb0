"""Classical gap-filling strategies for masked CFR grids.

All three leave observed cells untouched and only fill busy cells.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline

from .interference import apply_mask


def _mask_grid(masked: np.ndarray, mask) -> np.ndarray:
    m = np.asarray(getattr(mask, "grid", mask)).astype(bool)
    if m.shape != masked.shape:
        raise ValueError(f"mask shape {m.shape} does not match grid shape {masked.shape}")
    return m


def historical_fill(masked: np.ndarray, mask) -> np.ndarray:
    """Carry the last observed value of each bin forward in time.

    Busy cells with no earlier observation in their column are set to 0.
    """
    busy = _mask_grid(masked, mask)
    T, F = masked.shape
    last = np.where(busy, -1, np.arange(T)[:, None])
    last = np.maximum.accumulate(last, axis=0)
    cols = np.broadcast_to(np.arange(F), (T, F))
    filled = masked[np.maximum(last, 0), cols]
    return np.where(last >= 0, filled, 0).astype(masked.dtype)


def zero_fill(masked: np.ndarray, mask) -> np.ndarray:
    return apply_mask(masked, mask)


def _fill_row(f_obs: np.ndarray, y_obs: np.ndarray, f_miss: np.ndarray) -> np.ndarray:
    if len(f_obs) < 2:
        return np.zeros(len(f_miss))
    if len(f_obs) < 4:
        # np.interp holds the end values outside the observed range
        return np.interp(f_miss, f_obs, y_obs)
    inside = (f_miss >= f_obs[0]) & (f_miss <= f_obs[-1])
    out = np.where(f_miss < f_obs[0], y_obs[0], y_obs[-1]).astype(np.float64)
    if inside.any():
        out[inside] = CubicSpline(f_obs, y_obs, bc_type="natural")(f_miss[inside])
    return out


def spline_fill(masked: np.ndarray, mask) -> np.ndarray:
    """Per-snapshot natural cubic spline across frequency.

    Real and imaginary parts are interpolated independently. Rows with fewer
    than four observed bins fall back to linear interpolation, rows with
    fewer than two to zeros; bins outside the observed range take the nearest
    observed value.
    """
    busy = _mask_grid(masked, mask)
    out = np.array(masked, dtype=np.complex128, copy=True)
    out[busy] = 0
    f = np.arange(masked.shape[1])
    for t in range(masked.shape[0]):
        miss = busy[t]
        if not miss.any():
            continue
        f_obs, f_miss = f[~miss], f[miss]
        row = masked[t, ~miss]
        out[t, miss] = _fill_row(f_obs, row.real, f_miss) + 1j * _fill_row(f_obs, row.imag, f_miss)
    return out.astype(masked.dtype)


STRATEGIES = {
    "historical": historical_fill,
    "zero": zero_fill,
    "spline": spline_fill,
}
