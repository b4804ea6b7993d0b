"""Per-unit-time large-deviation costs of renewal streams and routing.

The central object is the rate cost of a renewal stream,

    cost(dist, a) = sup_{theta < beta} (theta - a * log E exp(theta * X)),

the price in nats per unit time of forcing a stream with generic gap law
``dist`` to run at rate ``a``.  It is strictly convex, zero exactly at the
stream's natural rate, and equals ``beta`` (the MGF abscissa) at a = 0.
The supremum is solved by bisection on the concave objective's derivative,
vectorized over ``a``; closed forms exist for the shipped families and are
used as oracles in the test suite.

``counting_cumulant`` is the convex conjugate of that cost: the long-run
cumulant of the renewal counting process, obtained by inverting the gap
log-MGF.  The local-rate solver is built on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import kl_div

from .distributions import DistributionFamily, Exponential, Gamma
from .errors import InvalidInputError

_ROUND = 12  # memoization key granularity for scalar evaluations


def unit_rate_kl(u):
    """u*ln(u) - u + 1: divergence of rate u against a unit-rate stream.

    Zero at u = 1, equal to 1 at u = 0, +inf at u = +inf; rejects
    negative input.
    """
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0):
        raise InvalidInputError("unit_rate_kl is defined on nonnegative rates only")
    out = kl_div(arr, np.ones_like(arr))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RateCostDetail:
    value: float
    maximizer: float | None   # optimal tilt, None when the sup is at a boundary
    at_boundary: bool


def _rate_cost_numeric(dist: DistributionFamily, rates: np.ndarray):
    """Sup over tilts by bisection on the concave objective's derivative,
    vectorized over the rates; the general-family engine."""
    a = np.asarray(rates, dtype=float)
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise InvalidInputError("stream rates must be finite and nonnegative")
    beta = dist.mgf_sup
    val = np.empty_like(a)
    theta = np.empty_like(a)
    boundary = np.zeros(a.shape, dtype=bool)

    zero = a == 0
    val[zero] = beta
    theta[zero] = np.nan
    boundary[zero] = True

    pos = ~zero
    if np.any(pos):
        ap = a[pos]
        # upper bracket: push toward beta until the derivative turns negative
        hi = np.full(ap.shape, 0.5 * beta)
        for _ in range(80):
            need = 1.0 - ap * dist.log_mgf_deriv(hi) >= 0
            if not np.any(need):
                break
            hi[need] = beta - 0.5 * (beta - hi[need])
        # lower bracket: expand left until the derivative is positive
        lo = np.zeros(ap.shape)
        need = 1.0 - ap * dist.log_mgf_deriv(lo) <= 0
        lo[need] = -1.0
        while np.any(need) and np.min(lo) > -1e18:
            need = 1.0 - ap * dist.log_mgf_deriv(lo) <= 0
            lo[need] *= 2.0
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            up = 1.0 - ap * dist.log_mgf_deriv(mid) > 0
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        th = 0.5 * (lo + hi)
        theta[pos] = th
        # evaluating at the approximate maximizer never overshoots the sup;
        # theta = 0 witnesses nonnegativity
        val[pos] = np.maximum(th - ap * dist.log_mgf(th), 0.0)
    return val, theta, boundary


def _rate_cost_vec(dist: DistributionFamily, rates: np.ndarray):
    """(values, maximizers, boundary mask) of the tilt sup over the rates.

    Exponential and Gamma gap laws admit an exact stationary point of the
    same maximization (the derivative condition solves in closed form);
    other families fall back to the numeric engine.  The closed forms are
    cross-checked against the numeric engine in the test suite.
    """
    a = np.asarray(rates, dtype=float)
    if isinstance(dist, (Exponential, Gamma)):
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise InvalidInputError("stream rates must be finite and nonnegative")
        beta = dist.mgf_sup
        shape = dist.shape if isinstance(dist, Gamma) else 1.0
        val = beta * unit_rate_kl(a * shape / beta)
        theta = np.where(a > 0, beta - shape * a, np.nan)
        boundary = a == 0
        val = np.where(boundary, beta, val)
        return val, theta, boundary
    return _rate_cost_numeric(dist, rates)


@lru_cache(maxsize=1 << 16)
def _rate_cost_scalar(dist: DistributionFamily, rate: float) -> RateCostDetail:
    v, th, b = _rate_cost_vec(dist, np.array([rate]))
    at_b = bool(b[0])
    return RateCostDetail(float(v[0]), None if at_b else float(th[0]), at_b)


def renewal_rate_cost(dist: DistributionFamily, rate):
    """Large-deviation cost per unit time of running ``dist``'s renewal
    stream at the given rate (or array of rates)."""
    arr = np.asarray(rate, dtype=float)
    if arr.ndim == 0:
        return _rate_cost_scalar(dist, round(float(arr), _ROUND)).value
    return _rate_cost_vec(dist, arr)[0]


def renewal_rate_cost_detail(dist: DistributionFamily, rate: float) -> RateCostDetail:
    return _rate_cost_scalar(dist, round(float(rate), _ROUND))


def routing_cost(p_row: np.ndarray, r_row: np.ndarray) -> float:
    """Relative entropy per routed customer of using frequencies ``r_row``
    when the law is ``p_row``, exit slot included.

    Finite exactly when r is absolutely continuous with respect to p
    (including the exit slot); the conventions 0/0 = 0 and 0*log 0 = 0
    are exact.
    """
    p = np.asarray(p_row, dtype=float)
    r = np.asarray(r_row, dtype=float)
    if p.shape != r.shape or p.ndim != 1:
        raise InvalidInputError("routing rows must be 1-d arrays of equal length")
    if np.any(p < 0) or np.any(r < 0):
        raise InvalidInputError("routing rows must be entrywise nonnegative")
    ps, rs = p.sum(), r.sum()
    if ps > 1 + 1e-12 or rs > 1 + 1e-12:
        raise InvalidInputError("routing rows must sum to at most one")
    pe = max(1.0 - ps, 0.0)
    re = max(1.0 - rs, 0.0)
    return float(np.sum(kl_div(r, p)) + kl_div(re, pe))


def scale_cost(cost: float, weight: float) -> float:
    """cost * weight with the convention inf * 0 = 0."""
    if weight == 0.0:
        return 0.0
    return cost * weight


def local_cost(spec, empty, a, d, r) -> float:
    """Instantaneous cost rate of driving the network with arrival rates
    ``a``, departure rates ``d`` and routing frequencies ``r`` while the
    stations in ``empty`` have empty queues.

    Empty stations pay for service only above their capacity; busy
    stations pay for any off-nominal rate.
    """
    empty = frozenset(empty)
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    r = np.asarray(r, dtype=float)
    mu = spec.service_rates
    total = 0.0
    for k in range(spec.K):
        total += renewal_rate_cost(spec.arrival[k], a[k])
        if k in empty:
            if d[k] > mu[k]:
                total += renewal_rate_cost(spec.service[k], d[k])
        else:
            total += renewal_rate_cost(spec.service[k], d[k])
        total += scale_cost(routing_cost(spec.routing[k], r[k]), d[k])
    return total


def local_cost_delayed(spec, empty, a, d, r, u, v, t) -> float:
    """Gated variant of :func:`local_cost` for delayed streams.

    Arrival terms count only once t exceeds the arrival delay u[k];
    service and routing terms only once t exceeds the residual service
    delay v[k].  Nondecreasing in t: gates only switch on.
    """
    empty = frozenset(empty)
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    mu = spec.service_rates
    total = 0.0
    for k in range(spec.K):
        if t > u[k]:
            total += renewal_rate_cost(spec.arrival[k], a[k])
        if t > v[k]:
            if k in empty:
                if d[k] > mu[k]:
                    total += renewal_rate_cost(spec.service[k], d[k])
            else:
                total += renewal_rate_cost(spec.service[k], d[k])
            total += scale_cost(routing_cost(spec.routing[k], r[k]), d[k])
    return total


# --- counting-process cumulants (convex conjugates of the rate costs) ----

def log_mgf_inverse(dist: DistributionFamily, x: float) -> float:
    """The tilt theta solving log E exp(theta X) = x.

    The gap log-MGF of every shipped family is a continuous increasing
    bijection from (-inf, mgf_sup) onto the reals, so the inverse is
    globally defined.
    """
    if isinstance(dist, Exponential):
        return dist.rate * -math.expm1(-x)
    if isinstance(dist, Gamma):
        return dist.rate * -math.expm1(-x / dist.shape)
    return _log_mgf_inverse_numeric(dist, round(float(x), _ROUND))


@lru_cache(maxsize=1 << 16)
def _log_mgf_inverse_numeric(dist: DistributionFamily, x: float) -> float:
    beta = dist.mgf_sup
    hi = beta * (1 - 1e-9)
    for _ in range(60):
        if dist.log_mgf(hi) > x:
            break
        hi = beta - 0.5 * (beta - hi)
    lo = min(hi, 0.0) - 1.0
    for _ in range(200):
        if dist.log_mgf(lo) < x:
            break
        lo *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dist.log_mgf(mid) < x:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def counting_cumulant(dist: DistributionFamily, w: float) -> float:
    """Long-run cumulant of the renewal counting stream,
    lim (1/t) log E exp(w * N(t)); convex, increasing, zero at w = 0."""
    return -log_mgf_inverse(dist, -w)


def counting_cumulant_deriv(dist: DistributionFamily, w: float) -> float:
    """Derivative of the counting cumulant: the tilted stream rate."""
    theta = log_mgf_inverse(dist, -w)
    return 1.0 / float(dist.log_mgf_deriv(theta))
