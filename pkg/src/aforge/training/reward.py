"""Shaped reward for gate racing, evaluated on batches of transitions."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


DEFAULT_SMOOTHING_WEIGHT = 0.1


@dataclass(frozen=True)
class RewardWeights:
    path: float = 2.0
    no_improvement: float = 2.0
    no_improvement_slack: float = 0.5
    angvel: float = 2.0
    angvel_limit: float = 10.0
    tilt: float = 2.0
    tilt_limit: float = 0.5 * np.pi
    heading: float = 0.01
    crash: float = 100.0
    task: float = 10.0
    crossed: float = 1.0
    missed: float = 10.0
    smoothing: float = 0.0


@dataclass
class RewardBreakdown:
    """Per-term rewards; every field is an array over the batch."""

    pos: np.ndarray
    path_deviation: np.ndarray
    no_improvement: np.ndarray
    angvel: np.ndarray
    orientation: np.ndarray
    crash: np.ndarray
    instantaneous_task_performance: np.ndarray
    smoothing: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return sum(getattr(self, f.name) for f in fields(self))

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["total"] = self.total
        return d


def _corridor(p, s_prev, s, half_width):
    """Lateral excess ``(d_y, d_z)`` beyond the swept gate square, and the
    along-track flag for the corridor's x-extent."""
    x0, x1 = s_prev[:, 0], s[:, 0]
    span = x1 - x0
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.where(np.abs(span) > 1e-12, (p[:, 0] - x0) / span, 1.0)
    lam = np.clip(lam, 0.0, 1.0)
    center = s_prev + lam[:, None] * (s - s_prev)
    dy = np.maximum(np.abs(p[:, 1] - center[:, 1]) - half_width, 0.0)
    dz = np.maximum(np.abs(p[:, 2] - center[:, 2]) - half_width, 0.0)
    lo_x, hi_x = np.minimum(x0, x1), np.maximum(x0, x1)
    in_x = (p[:, 0] >= lo_x) & (p[:, 0] <= hi_x)
    return dy, dz, in_x


def path_factor(p, s_prev, s, half_width: float = 0.25) -> np.ndarray:
    """Corridor deviation factor in [0, 1].

    Zero inside the prism swept by the gate square from ``s_prev`` to ``s``,
    one outside the axis-aligned box holding both gate squares, otherwise
    ``clip(2 max(d_y, d_z) / (s - p)_x, 0, 1)``.
    """
    p, s_prev, s = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (p, s_prev, s))
    dy, dz, in_x = _corridor(p, s_prev, s, half_width)
    excess = np.maximum(dy, dz)
    inside = in_x & (excess == 0.0)
    lo = np.minimum(s_prev, s)
    hi = np.maximum(s_prev, s)
    lo[:, 1:] -= half_width
    hi[:, 1:] += half_width
    in_out = np.all((p >= lo) & (p <= hi), axis=1)
    ahead = s[:, 0] - p[:, 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(ahead > 1e-12, 2.0 * excess / np.where(ahead > 1e-12, ahead, 1.0), np.inf)
    mid = np.clip(np.nan_to_num(ratio, nan=0.0, posinf=1.0), 0.0, 1.0)
    return np.where(inside, 0.0, np.where(in_out, mid, 1.0))


def axis_angles(rot):
    """Unsigned angles between body y / z and world y / z, in [0, pi]."""
    rot = np.asarray(rot, dtype=float)
    a_y = np.arccos(np.clip(rot[..., 1, 1], -1.0, 1.0))
    a_z = np.arccos(np.clip(rot[..., 2, 2], -1.0, 1.0))
    return a_y, a_z


def smoothing_penalty(actions, prev_actions, weight: float) -> np.ndarray:
    """``-weight * ||a_t - a_{t-1}||^2`` per row."""
    if weight == 0:
        return np.zeros(np.atleast_2d(actions).shape[0])
    d = np.atleast_2d(actions) - np.atleast_2d(prev_actions)
    return -weight * np.sum(d * d, axis=1)


def reward(tr, c: float, weights: RewardWeights | None = None, half_width: float = 0.25,
           actions=None, prev_actions=None) -> RewardBreakdown:
    """Per-term reward of a batch of :class:`aforge.tasks.Transition`.

    ``c`` is the curriculum progress.  The path term is folded to a penalty
    of ``|R_pos| * P_path``, so it is non-positive.
    """
    if not 0.0 <= c <= 1.0:
        raise ValueError("curriculum progress must lie in [0, 1]")
    w = weights or RewardWeights()
    s = tr.target
    d_prev = np.linalg.norm(tr.pos_prev - s, axis=1)
    d_cur = np.linalg.norm(tr.pos - s, axis=1)
    r_pos = (d_prev - d_cur) * (1.0 - c)
    p_path = path_factor(tr.pos, tr.target_prev, s, half_width)
    path = -w.path * np.abs(r_pos) * p_path * (1.0 - c)
    no_imp = -w.no_improvement * np.maximum(d_cur - tr.d_best - w.no_improvement_slack, 0.0)
    angvel = -w.angvel * np.maximum(np.linalg.norm(tr.angular_velocity, axis=1) - w.angvel_limit, 0.0)
    a_y, a_z = axis_angles(tr.rotation)
    orient = -w.tilt * np.maximum(a_z - w.tilt_limit, 0.0) - w.heading * a_y
    crash = -w.crash * (tr.crash_dist + tr.crash_orient) * c
    itp = w.task * (w.crossed * tr.crossed - w.missed * tr.missed)
    if actions is not None and prev_actions is not None:
        smooth = smoothing_penalty(actions, prev_actions, w.smoothing)
    else:
        smooth = np.zeros_like(r_pos)
    return RewardBreakdown(r_pos, path, no_imp, angvel, orient, crash, itp.astype(float), smooth)
