"""Differentiable 1-D window extraction and paste-back.

Both directions resample with two-tap linear interpolation, which is exact on
affine data and has simple analytic partials. `st_extract` cuts a fixed-length
sub-trajectory out of the window (offset, duration) in normalized time;
`st_paste` writes a sub-trajectory back onto the canvas additively, so
overlapping windows sum. Sample times outside [0, 1] clamp to the boundary
sample and contribute no gradient to the window parameters there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from skillseg.diffcore.tensor import Tensor, _accum, const

WINDOW_TOL = 1e-9


@dataclass(frozen=True)
class Window:
    """offset in [0, 1), duration in (0, 1]; offset + duration <= 1 + tol."""

    offset: float
    duration: float

    def __post_init__(self):
        if not (0.0 <= self.offset < 1.0):
            raise ValueError(f"offset must be in [0, 1), got {self.offset}")
        if not (0.0 < self.duration <= 1.0):
            raise ValueError(f"duration must be in (0, 1], got {self.duration}")
        if self.offset + self.duration > 1.0 + WINDOW_TOL:
            object.__setattr__(self, "duration", 1.0 - self.offset)


def _gather(arr: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """arr (R, N, D) indexed along axis 1 by idx (R, M) -> (R, M, D)."""
    r, _, d = arr.shape
    idx3 = np.broadcast_to(idx[:, :, None], (r, idx.shape[1], d))
    return np.take_along_axis(arr, idx3, axis=1)


def _scatter(idx: np.ndarray, vals: np.ndarray, n_rows: int) -> np.ndarray:
    """Inverse of _gather: accumulate vals (R, M, D) at idx (R, M) into (R, n_rows, D)."""
    r, m, d = vals.shape
    lin = ((np.arange(r)[:, None] * n_rows + idx)[:, :, None] * d
           + np.arange(d)[None, None, :])
    flat = np.bincount(lin.ravel(), weights=vals.ravel(), minlength=r * n_rows * d)
    return flat.reshape(r, n_rows, d)


def _window_arrays(offset, duration, r):
    off = offset.data.reshape(r, 1)
    dur = duration.data.reshape(r, 1)
    return off, dur


def st_extract(traj: Tensor, offset: Tensor, duration: Tensor, length: int,
               return_flags: bool = False):
    """Sample ``length`` points of traj (R, T, D) inside each row's window.

    Sample i sits at normalized time offset + duration * i / (length - 1).
    Differentiable w.r.t. trajectory values, offset, and duration. With
    ``return_flags`` also returns a bool row mask marking windows that left
    [0, 1] beyond tolerance and were clipped.
    """
    r, t, d = traj.data.shape
    off, dur = _window_arrays(offset, duration, r)
    frac = np.linspace(0.0, 1.0, length)
    pos_raw = (off + dur * frac[None, :]) * (t - 1)
    tol = WINDOW_TOL * (t - 1)
    flags = ((pos_raw < -tol) | (pos_raw > (t - 1) + tol)).any(axis=1)
    pos = np.clip(pos_raw, 0.0, float(t - 1))
    unclamped = (pos_raw > 0.0) & (pos_raw < t - 1)
    base = np.clip(np.floor(pos).astype(np.intp), 0, t - 2)
    frac_w = pos - base
    lo = _gather(traj.data, base)
    hi = _gather(traj.data, base + 1)
    out_data = (1.0 - frac_w)[:, :, None] * lo + frac_w[:, :, None] * hi

    def back(g):
        dpos = ((hi - lo) * g).sum(axis=2) * unclamped
        if not offset.is_const:
            _accum(offset, (dpos.sum(axis=1) * (t - 1)).reshape(offset.data.shape))
        if not duration.is_const:
            _accum(duration, ((dpos * frac[None, :]).sum(axis=1) * (t - 1))
                   .reshape(duration.data.shape))
        if not traj.is_const:
            dtraj = _scatter(base, (1.0 - frac_w)[:, :, None] * g, t)
            dtraj += _scatter(base + 1, frac_w[:, :, None] * g, t)
            _accum(traj, dtraj)

    out = Tensor(out_data, (traj, offset, duration), back)
    if return_flags:
        return out, flags
    return out


def st_paste(sub: Tensor, offset: Tensor, duration: Tensor, t_steps: int) -> Tensor:
    """Contribution of one sub-trajectory (R, L, D) to a (R, T, D) canvas.

    Canvas steps in the grid cells enclosing [offset, offset+duration]
    receive the linear interpolation of ``sub`` at the local coordinate
    (clamped to the boundary sample just outside the window, so extraction
    with the same window inverts the paste up to interpolation error). One
    further step past the right edge carries a linear fade of the final
    sample: it makes the paste continuous in (offset, duration) and gives the
    window parameters an explicit coverage gradient, which is what lets the
    model learn to extend a window over still-unexplained canvas. Everything
    farther out is zero. Add the result onto the running canvas: overlapping
    windows accumulate. Durations below 1/T are clamped up so a window covers
    at least one canvas step.
    """
    r, length, d = sub.data.shape
    off, dur = _window_arrays(offset, duration, r)
    min_dur = 1.0 / t_steps
    dur_open = dur > min_dur
    dur_eff = np.maximum(dur, min_dur)
    tn = np.linspace(0.0, 1.0, t_steps)
    u_raw = (tn[None, :] - off) / dur_eff
    grid_tol = WINDOW_TOL * (t_steps - 1)
    end_pos = (off + dur_eff) * (t_steps - 1)
    lo_step = np.floor(off * (t_steps - 1) + grid_tol)
    hi_step = np.ceil(end_pos - grid_tol)
    steps = np.arange(t_steps)[None, :]
    mask = (steps >= lo_step) & (steps <= hi_step)
    u = np.clip(u_raw, 0.0, 1.0)
    pos = u * (length - 1)
    base = np.clip(np.floor(pos).astype(np.intp), 0, length - 2)
    frac_w = pos - base
    lo = _gather(sub.data, base)
    hi = _gather(sub.data, base + 1)
    out_data = ((1.0 - frac_w)[:, :, None] * lo + frac_w[:, :, None] * hi) * mask[:, :, None]

    fade_col = np.minimum(hi_step + 1, t_steps - 1).astype(np.intp)[:, 0]
    fade_w = np.clip(end_pos[:, 0] + 1.0 - hi_step[:, 0], 0.0, 1.0) \
        * (hi_step[:, 0] + 1 <= t_steps - 1)
    rows = np.arange(r)
    last = sub.data[:, length - 1, :]
    out_data[rows, fade_col, :] += fade_w[:, None] * last

    def back(g):
        gm = g * mask[:, :, None]
        inside = mask & (u_raw > 0.0) & (u_raw < 1.0)
        du = ((hi - lo) * gm).sum(axis=2) * inside * (length - 1)
        g_fade = g[rows, fade_col, :]
        d_end = (g_fade * last).sum(axis=1) * ((fade_w > 0.0) & (fade_w < 1.0)) \
            * (hi_step[:, 0] + 1 <= t_steps - 1) * (t_steps - 1)
        if not offset.is_const:
            d_off = (du * (-1.0 / dur_eff)).sum(axis=1) + d_end
            _accum(offset, d_off.reshape(offset.data.shape))
        if not duration.is_const:
            ddur = (du * (-u_raw / dur_eff)).sum(axis=1) + d_end
            _accum(duration, (ddur * dur_open[:, 0]).reshape(duration.data.shape))
        if not sub.is_const:
            dsub = _scatter(base, (1.0 - frac_w)[:, :, None] * gm, length)
            dsub += _scatter(base + 1, frac_w[:, :, None] * gm, length)
            dsub[:, length - 1, :] += fade_w[:, None] * g_fade
            _accum(sub, dsub)

    return Tensor(out_data, (sub, offset, duration), back)


def paste_onto(canvas: Tensor, sub: Tensor, offset: Tensor, duration: Tensor) -> Tensor:
    """canvas + st_paste(sub, ...): the additive write used by the model loop."""
    return canvas + st_paste(sub, offset, duration, canvas.data.shape[1])


# numpy-only conveniences for evaluation code and tests


def extract_window(values: np.ndarray, window: Window, length: int) -> np.ndarray:
    """st_extract on one bare T x D array; returns an L x D array."""
    out = st_extract(const(values[None, :, :]), const([[window.offset]]),
                     const([[window.duration]]), length)
    return out.data[0]


def paste_window(canvas: np.ndarray, sub: np.ndarray, window: Window) -> np.ndarray:
    """st_paste of one bare L x D array added onto a T x D canvas copy."""
    contrib = st_paste(const(sub[None, :, :]), const([[window.offset]]),
                       const([[window.duration]]), canvas.shape[0])
    return canvas + contrib.data[0]
