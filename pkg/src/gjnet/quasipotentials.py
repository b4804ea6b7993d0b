"""Quasipotential: cheapest path action from the origin to a target.

The value V(x) is the infimum, over piecewise-linear paths from the
origin to x and over all durations, of the path action.  Durations
decouple per segment, and the duration-minimized cost of one segment
with displacement delta on face J is the support function

    inf_T  T * L_J(delta / T)  =  max { <w, delta> : H_J(w) <= 0 },

a small smooth convex program in the dual tilts (H_J is the aggregate
counting cumulant used by the local-rate solver).  What remains is a
nonconvex search over breakpoint positions; we run seeded multistart
local optimization over structured initial paths (straight segment,
boundary staircases, randomized perturbations), report the spread across
starts, and finally re-derive segment durations with the golden-section
duration minimizer so that the returned value is exactly the action of
the returned path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import InvalidInputError, SolverError
from .local_rates import _DualModel, _cumulant_pair, solve_local_rate
from .path_action import PiecewiseLinearPath, action, segment_face

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class HoldTime:
    """Duration minimization of one segment: T* and the attained cost.

    For a zero displacement there is no finite minimizer unless holding
    is free; ``hold_cost_rate`` reports the linear growth rate of cost
    with duration in that case.
    """

    duration: float
    cost: float
    hold_cost_rate: float = 0.0


@dataclass
class QuasipotentialResult:
    value: float
    optimal_path: PiecewiseLinearPath
    segments_used: int
    multistart_spread: float
    start_values: tuple[float, ...] = ()
    spread_warning: bool = False


class _SegmentCoster:
    """Duration-minimized segment costs via the dual support program,
    with per-face warm starts and memoization."""

    def __init__(self, spec):
        self.spec = spec
        self.K = spec.K
        self.cache: dict = {}
        self.warm: dict = {}

    def __call__(self, face: frozenset, delta: np.ndarray) -> float:
        return self.solve(face, delta)[0]

    def solve(self, face: frozenset, delta: np.ndarray):
        key = (face, tuple(np.round(delta, 12)))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        model = _DualModel(self.spec, np.zeros(self.K), face,
                           np.ones(self.K, dtype=bool), np.ones(self.K, dtype=bool))
        n = self.K + model.n_slack
        z0 = self.warm.get(face)
        if z0 is None or z0.shape != (n,):
            z0 = np.zeros(n)

        def neg_obj(z):
            g = np.zeros(n)
            g[: self.K] = -delta
            return -float(delta @ z[: self.K]), g

        def headroom(z):
            # H_total(z) <= 0, written as -H_total >= 0; neg_dual at y = 0
            # is exactly +H_total
            val, grad = model.neg_dual(z)
            return np.array([-val]), -grad[None, :]

        cons = [{"type": "ineq", "fun": lambda z: headroom(z)[0],
                 "jac": lambda z: headroom(z)[1]}]
        if model.n_slack:
            cons.append({"type": "ineq", "fun": model.slack_gap,
                         "jac": model.slack_gap_jac})
        bounds = [(-80.0, 80.0)] * self.K + [(0.0, np.inf)] * model.n_slack

        def run(start):
            res = optimize.minimize(neg_obj, start, jac=True, method="SLSQP",
                                    bounds=bounds, constraints=cons,
                                    options={"ftol": 1e-14, "maxiter": 300})
            zz = self._min_slacks(model, res.x)
            return zz, headroom(zz)[0][0]

        z, feas = run(z0)
        if feas < -1e-10 and np.any(z0):
            z2, feas2 = run(np.zeros(n))
            if feas2 > feas:
                z, feas = z2, feas2
        if feas < -1e-10:
            z = self._project_ray(model, z)
        cost = max(float(delta @ z[: self.K]), 0.0)
        grad_h = model.neg_dual(z)[1][: self.K]   # gradient of H_total in w
        denom = float(grad_h @ grad_h)
        t_est = float(delta @ grad_h) / denom if denom > 1e-20 else 0.0
        out = (cost, max(t_est, 0.0))
        self.cache[key] = out
        self.warm[face] = z.copy()
        return out

    @staticmethod
    def _min_slacks(model, z):
        """Tighten the hull slacks to their pointwise minimum at fixed w."""
        if not model.n_slack:
            return z
        z = z.copy()
        _, theta = model.tilt(z[: model.K])
        for j, k in enumerate(model.hull):
            z[model.K + j] = max(_cumulant_pair(model.spec.service[k], theta[k])[0], 0.0)
        return z

    def _project_ray(self, model, z):
        """Scale w toward the origin until the cumulant headroom is
        restored; H is convex with H(0) = 0, so the ray hits the set."""
        w = z[: self.K]

        def feasible(t):
            zt = self._min_slacks(model, np.concatenate([t * w, z[self.K:]]))
            return model.neg_dual(zt)[0] <= 0.0, zt

        ok, zt = feasible(1.0)
        if ok:
            return zt
        lo, hi = 0.0, 1.0
        z_best = self._min_slacks(model, np.concatenate([0.0 * w, z[self.K:]]))
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            ok, zt = feasible(mid)
            if ok:
                lo, z_best = mid, zt
            else:
                hi = mid
        return z_best


def best_segment_duration(spec, empty, delta, rel_tol: float = 1e-6) -> HoldTime:
    """Minimize duration * local_rate(delta / duration) over durations.

    Convex in the duration; solved by golden section in log-duration to
    the requested relative tolerance.  A zero displacement has cost zero
    at any duration exactly when holding on the face is free; otherwise
    the cost grows linearly and the growth rate is reported.
    """
    delta = np.asarray(delta, dtype=float)
    empty = frozenset(int(k) for k in empty)
    if np.max(np.abs(delta)) == 0.0:
        rate = solve_local_rate(spec, delta, empty=empty).value
        return HoldTime(duration=0.0, cost=0.0, hold_cost_rate=rate)

    def phi(T: float) -> float:
        return T * solve_local_rate(spec, delta / T, empty=empty).value

    speed = float(np.sum(spec.arrival_rates) + np.sum(spec.service_rates)) + 1e-9
    t_mid = float(np.sum(np.abs(delta))) / speed
    lo, hi = t_mid * 1e-3, t_mid * 1e3
    f_lo, f_hi = phi(lo), phi(hi)
    f_mid = phi(t_mid)
    for _ in range(30):
        if f_lo < f_mid - 1e-15:
            lo /= 8.0
            f_mid = f_lo
            f_lo = phi(lo)
        else:
            break
    for _ in range(30):
        if f_hi < f_mid - 1e-15:
            hi *= 8.0
            f_mid = f_hi
            f_hi = phi(hi)
        else:
            break

    a, b = math.log(lo), math.log(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = phi(math.exp(c)), phi(math.exp(d))
    best_t, best_f = (math.exp(c), fc) if fc <= fd else (math.exp(d), fd)
    while b - a > rel_tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = phi(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = phi(math.exp(d))
        t_new, f_new = (math.exp(c), fc) if fc <= fd else (math.exp(d), fd)
        if f_new < best_f:
            best_t, best_f = t_new, f_new
    return HoldTime(duration=best_t, cost=best_f)


def _segments_of(points: list[np.ndarray]):
    """Consecutive (face, delta) pairs, zero-length segments dropped."""
    segs = []
    for p, q in itertools.pairwise(points):
        delta = q - p
        if np.max(np.abs(delta)) <= 1e-12:
            continue
        segs.append((segment_face(p, q), delta))
    return segs


def _starts_for(x: np.ndarray, max_segments: int, n_starts: int, seed: int):
    """Initial breakpoint lists (positions, zero masks) for the multistart."""
    K = x.size
    rng = np.random.default_rng(seed)
    starts: list[list[tuple[np.ndarray, np.ndarray]]] = [[]]   # straight shot
    if K >= 2:
        for j in range(K):
            for scale in (1.0, 0.5):
                bp = np.zeros(K)
                bp[j] = max(x[j], np.max(x) * 0.5) * scale
                mask = np.ones(K, dtype=bool)
                mask[j] = False
                starts.append([(bp, mask)])
        for j in range(K):
            bp1 = np.zeros(K)
            bp1[j] = max(x[j], np.max(x) * 0.5)
            mask1 = np.ones(K, dtype=bool)
            mask1[j] = False
            bp2 = np.maximum(x * 0.6, 1e-3)
            starts.append([(bp1, mask1), (bp2, np.zeros(K, dtype=bool))])
        starts.append([(np.maximum(x * 0.5, 1e-3), np.zeros(K, dtype=bool))])
    while len(starts) < n_starts:
        m = int(rng.integers(1, max(2, max_segments)))
        pts = []
        for i in range(m):
            frac = (i + 1) / (m + 1)
            base = frac * x
            jitter = rng.lognormal(0.0, 0.35, size=K)
            bp = base * jitter + 0.02 * np.max(x) * rng.random(K)
            mask = rng.random(K) < 0.35
            bp[mask] = 0.0
            pts.append((bp, mask))
        starts.append(pts)
    return starts[:max(n_starts, 1)]


def _polish_start(coster: _SegmentCoster, x, bps, horizon):
    """Local optimization of the free breakpoint coordinates."""
    K = x.size
    masks = [mask for _, mask in bps]
    free_idx = [(i, k) for i, mask in enumerate(masks) for k in range(K) if not mask[k]]

    def build(zfree):
        pts = [np.zeros(K)]
        j = 0
        for i, (bp0, mask) in enumerate(bps):
            bp = np.zeros(K)
            for k in range(K):
                if mask[k]:
                    bp[k] = 0.0
                else:
                    bp[k] = max(zfree[j], 0.0)
                    j += 1
            pts.append(bp)
        pts.append(np.asarray(x, dtype=float))
        return pts

    def cost(zfree):
        segs = _segments_of(build(zfree))
        total = 0.0
        t_total = 0.0
        for face, delta in segs:
            c, t_est = coster.solve(face, delta)
            total += c
            t_total += t_est
        if horizon is not None and t_total > horizon:
            total = _horizon_cost(coster.spec, segs, horizon)[0]
        return total

    z0 = np.array([bps[i][0][k] for i, k in free_idx], dtype=float)
    if z0.size == 0:
        return build(z0), cost(z0)
    res = optimize.minimize(cost, z0, method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": 1e-10,
                                     "maxiter": 250 * max(1, z0.size),
                                     "maxfev": 250 * max(1, z0.size)})
    return build(res.x), float(res.fun)


def _horizon_cost(spec, segs, horizon, t0=None):
    """Minimize total action over durations with their sum capped."""
    m = len(segs)
    if m == 0:
        return 0.0, []
    faces = [f for f, _ in segs]
    deltas = [d for _, d in segs]

    def cost_and_grad(T):
        total = 0.0
        grad = np.zeros(m)
        for i in range(m):
            sol = solve_local_rate(spec, deltas[i] / T[i], empty=faces[i])
            total += T[i] * sol.value
            # d/dT [T L(delta/T)] = L - (delta/T) . dL = -H(w*) = L - <w, y>
            grad[i] = sol.value - float(sol.dual_vector @ (deltas[i] / T[i]))
        return total, grad

    if t0 is None:
        weights = np.array([np.sum(np.abs(d)) for d in deltas])
        t0 = horizon * weights / weights.sum()
    t0 = np.maximum(np.asarray(t0, dtype=float), 1e-8)
    t0 *= min(1.0, horizon / t0.sum())
    res = optimize.minimize(cost_and_grad, t0, jac=True, method="SLSQP",
                            bounds=[(1e-9 * horizon, horizon)] * m,
                            constraints=[{"type": "ineq",
                                          "fun": lambda T: horizon - np.sum(T),
                                          "jac": lambda T: -np.ones(m)}],
                            options={"ftol": 1e-14, "maxiter": 200})
    return float(res.fun), list(res.x)


def _assemble_path(spec, points, horizon):
    """Attach optimal durations to the breakpoint positions."""
    segs = _segments_of(points)
    if not segs:
        return PiecewiseLinearPath(np.array([0.0]), np.array(points[:1]))
    durations = [best_segment_duration(spec, f, d).duration for f, d in segs]
    durations = [max(t, 1e-9) for t in durations]
    if horizon is not None and sum(durations) > horizon:
        scaled = [t * horizon / sum(durations) for t in durations]
        _, durations = _horizon_cost(spec, segs, horizon, t0=scaled)
    times = np.concatenate([[0.0], np.cumsum(durations)])
    pos = [points[0]]
    j = 0
    for p, q in itertools.pairwise(points):
        if np.max(np.abs(q - p)) <= 1e-12:
            continue
        pos.append(q)
        j += 1
    return PiecewiseLinearPath(times, np.array(pos))


def quasipotential(spec, x, max_segments: int | None = None, n_starts: int = 16,
                   seed: int = 0, t_horizon: float | None = None,
                   initial_paths=()) -> QuasipotentialResult:
    """Minimal path action from the origin to x (over all durations).

    Multistart local search over piecewise-linear paths with at most
    ``max_segments`` segments (default 2K + 1).  ``t_horizon`` caps the
    total duration.  ``initial_paths`` seeds extra warm starts, e.g. the
    optimum of a neighbouring target or horizon.  The returned value is
    exactly the action of the returned path; ``multistart_spread`` is
    max - min over the per-start optima and a spread above 5 percent of
    the best value sets ``spread_warning``.
    """
    x = np.asarray(x, dtype=float)
    K = spec.K
    if x.shape != (K,) or np.any(x < 0):
        raise InvalidInputError(f"target must be a nonnegative length-{K} vector")
    if max_segments is None:
        max_segments = 2 * K + 1
    if np.max(x) == 0.0:
        path = PiecewiseLinearPath(np.array([0.0]), np.zeros((1, K)))
        return QuasipotentialResult(0.0, path, 0, 0.0)

    coster = _SegmentCoster(spec)
    candidates: list[tuple[float, list[np.ndarray]]] = []
    start_values = []
    for bps in _starts_for(x, max_segments, n_starts, seed):
        try:
            points, val = _polish_start(coster, x, bps, t_horizon)
        except SolverError:
            continue
        candidates.append((val, points))
        start_values.append(val)
    for p in initial_paths:
        pts = [np.asarray(row, dtype=float) for row in p.positions]
        if np.max(np.abs(pts[-1] - x)) > 1e-9 or np.max(np.abs(pts[0])) > 0:
            continue
        bps = [(pt.copy(), pt == 0.0) for pt in pts[1:-1]]
        try:
            points, val = _polish_start(coster, x, bps, t_horizon)
        except SolverError:
            continue
        candidates.append((val, points))
        start_values.append(val)
    if not candidates:
        raise SolverError("every quasipotential start failed", {"target": x.tolist()})

    candidates.sort(key=lambda c: c[0])
    best_points = candidates[0][1]
    path = _assemble_path(spec, best_points, t_horizon)
    value = action(spec, path)
    # candidate paths supplied by the caller compete on equal terms: if one
    # of them evaluates below the local search result, keep it verbatim
    for p in initial_paths:
        if np.max(np.abs(p.end() - x)) > 1e-9 or np.max(np.abs(p.start())) > 0:
            continue
        if t_horizon is not None and p.duration > t_horizon + 1e-12:
            continue
        v = action(spec, p)
        if v < value:
            value, path = v, p
    spread = max(start_values) - min(start_values) if start_values else 0.0
    warn = bool(start_values) and spread > 0.05 * max(abs(value), 1e-12)
    return QuasipotentialResult(value=float(value), optimal_path=path,
                                segments_used=len(path.times) - 1,
                                multistart_spread=float(spread),
                                start_values=tuple(start_values),
                                spread_warning=warn)


def quasipotential_finite_horizon(spec, x, t_horizon: float, **kwargs) -> QuasipotentialResult:
    """Quasipotential with the total path duration capped at ``t_horizon``;
    nonincreasing in the horizon and equal to the unconstrained value once
    the horizon exceeds the optimal total duration."""
    if not t_horizon > 0:
        raise InvalidInputError("t_horizon must be positive")
    return quasipotential(spec, x, t_horizon=t_horizon, **kwargs)


def fluid_drain_path(spec, q0, horizon: float | None = None,
                     max_segments: int = 1000) -> PiecewiseLinearPath:
    """Zero-cost fluid trajectory from q0: busy stations serve at full
    rate, empty stations at the minimum of capacity and inflow, faces
    resolved by a monotone fixed point.  Subcritical networks drain to
    the origin and stay there."""
    lam = spec.arrival_rates
    mu = spec.service_rates
    P = spec.routing
    q = np.array(q0, dtype=float)
    if np.any(q < 0):
        raise InvalidInputError("initial state must be nonnegative")
    q[q <= 1e-12] = 0.0
    t = 0.0
    times = [0.0]
    points = [q.copy()]
    for _ in range(max_segments):
        if horizon is not None and t >= horizon - 1e-15:
            break
        busy = q > 0.0
        d = mu.copy()
        for _ in range(100_000):
            inflow = lam + P.T @ d
            d_new = np.where(busy, mu, np.minimum(mu, inflow))
            if np.max(np.abs(d_new - d)) < 1e-15:
                d = d_new
                break
            d = d_new
        else:
            raise SolverError("face resolution did not converge",
                              {"state": q.tolist()})
        v = lam + P.T @ d - d
        v[~busy] = np.maximum(v[~busy], 0.0)
        v[np.abs(v) < 1e-13] = 0.0
        if np.max(np.abs(v)) == 0.0:
            break   # absorbed (at the origin for subcritical specs)
        hit = np.inf
        hit_k = -1
        for k in range(spec.K):
            if q[k] > 0 and v[k] < 0:
                tk = q[k] / (-v[k])
                if tk < hit:
                    hit, hit_k = tk, k
        dt = hit
        clipped = False
        if horizon is not None and t + dt > horizon:
            dt = horizon - t
            clipped = True
        q = q + dt * v
        if not clipped and hit_k >= 0:
            q[hit_k] = 0.0
        q[np.abs(q) <= 1e-12] = 0.0
        q = np.maximum(q, 0.0)
        t += dt
        times.append(t)
        points.append(q.copy())
        if clipped:
            break
    if horizon is not None and t < horizon:
        times.append(horizon)
        points.append(q.copy())
    return PiecewiseLinearPath(np.array(times), np.array(points))
