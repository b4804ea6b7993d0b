"""Action of piecewise-linear queue-length paths.

The action of an absolutely continuous path is the time integral of the
local rate at (position, velocity).  On a piecewise-linear path that
integral is a finite sum: one local-rate solve per segment, weighted by
the segment duration, with the face read off the segment endpoints (a
coordinate is on the boundary for the whole open segment exactly when it
vanishes at both ends).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .local_rates import GatingWindow, solve_local_rate

_START_ATOL = 1e-12


@dataclass(frozen=True)
class PiecewiseLinearPath:
    """Breakpoint times t_0 = 0 < t_1 < ... < t_M and positions in the
    nonnegative orthant."""

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        x = np.array(self.positions, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise InvalidInputError("times must be a nonempty 1-d array")
        if x.ndim != 2 or x.shape[0] != t.size:
            raise InvalidInputError("positions must be (len(times), K)")
        if t[0] != 0.0:
            raise InvalidInputError("paths start at time zero")
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("breakpoint times must be strictly increasing")
        if np.any(x < 0):
            raise InvalidInputError("positions must stay in the nonnegative orthant")
        t.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", x)

    @property
    def K(self) -> int:
        return self.positions.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def start(self) -> np.ndarray:
        return self.positions[0]

    def end(self) -> np.ndarray:
        return self.positions[-1]

    def at(self, t: float) -> np.ndarray:
        """Position at time t (constant extension beyond the last breakpoint)."""
        t = float(t)
        if t <= 0:
            return self.positions[0].copy()
        if t >= self.times[-1]:
            return self.positions[-1].copy()
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        frac = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return (1 - frac) * self.positions[i] + frac * self.positions[i + 1]

    def refined(self, extra_times) -> "PiecewiseLinearPath":
        """Insert breakpoints at the given times (no-op for duplicates)."""
        cur = set(np.round(self.times, 15))
        add = [t for t in extra_times if 0.0 < t < self.times[-1]
               and round(float(t), 15) not in cur]
        if not add:
            return self
        t_new = np.sort(np.concatenate([self.times, np.array(add, dtype=float)]))
        x_new = np.vstack([self.at(t) for t in t_new])
        return PiecewiseLinearPath(t_new, x_new)


def segment_face(p, q) -> frozenset:
    """Stations at zero on the whole open segment from p to q: exactly the
    coordinates vanishing at both endpoints."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p < 0) or np.any(q < 0):
        raise InvalidInputError("segment endpoints must be nonnegative")
    return frozenset(int(k) for k in np.nonzero((p == 0.0) & (q == 0.0))[0])


def action(spec, path: PiecewiseLinearPath, q0=None, **solve_kwargs) -> float:
    """Action of the path over its finite window [0, t_M].

    Infinite when the path does not start at q0.  Zero-length segments are
    impossible by construction; segments with zero displacement still pay
    duration times the cost of holding still on their face.
    """
    if q0 is not None:
        q0 = np.asarray(q0, dtype=float)
        if not np.allclose(path.positions[0], q0, rtol=0.0, atol=_START_ATOL):
            return math.inf
    total = 0.0
    t, x = path.times, path.positions
    for i in range(len(t) - 1):
        dt = t[i + 1] - t[i]
        v = (x[i + 1] - x[i]) / dt
        face = segment_face(x[i], x[i + 1])
        total += dt * solve_local_rate(spec, v, empty=face, **solve_kwargs).value
        if math.isinf(total):
            return math.inf
    return total


def action_delayed(spec, path: PiecewiseLinearPath, u, v, q0=None,
                   strict_gating: bool = False, **solve_kwargs) -> float:
    """Action under the delayed (gated) local rates.

    Segments are split at every delay epoch so the gates are constant on
    each integration piece; each piece is then charged at its own gated
    rate.  With all delays zero this reduces exactly to :func:`action`.
    """
    if q0 is not None:
        q0 = np.asarray(q0, dtype=float)
        if not np.allclose(path.positions[0], q0, rtol=0.0, atol=_START_ATOL):
            return math.inf
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    split = path.refined(sorted(set(np.concatenate([u, v]).tolist())))
    total = 0.0
    t, x = split.times, split.positions
    for i in range(len(t) - 1):
        dt = t[i + 1] - t[i]
        vel = (x[i + 1] - x[i]) / dt
        face = segment_face(x[i], x[i + 1])
        t_mid = 0.5 * (t[i] + t[i + 1])   # gates are constant on the open piece
        gating = GatingWindow.at(u, v, t_mid)
        total += dt * solve_local_rate(spec, vel, empty=face, gating=gating,
                                       strict_gating=strict_gating, **solve_kwargs).value
        if math.isinf(total):
            return math.inf
    return total


def path_to_rows(path: PiecewiseLinearPath):
    """(t, x_1..x_K) rows for CSV emission."""
    return np.hstack([path.times[:, None], path.positions])


def path_from_rows(rows) -> PiecewiseLinearPath:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] < 2:
        raise InvalidInputError("path rows must be (t, x_1..x_K)")
    return PiecewiseLinearPath(rows[:, 0], rows[:, 1:])
