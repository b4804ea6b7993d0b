"""Exact discrete-event simulation of the generalized Jackson network.

The state is (Q, U, W): queue lengths, excess exogenous arrival times,
residual service times, plus per-station cumulative busy time.  Service
is FIFO, one customer at a time; a station's service clock runs on busy
time, and since under work conservation a station only empties at a
completion epoch, the in-progress service never freezes: freezing can
only happen between customers, which the renewal construction handles by
simply not drawing the next service time until a customer is present.

Initial delays: a station with initial queue q0 > 0 carries a residual
service time v > 0 (its first completion lands after exactly v busy
time); the first exogenous arrival at station k lands at u[k] when
u[k] > 0, and at a freshly drawn interarrival time when u[k] = 0.

Randomness: one deterministic stream per station and process kind
(arrivals, services, routing), derived from the master seed by spawning
``numpy.random.SeedSequence(seed)`` children in the fixed order
3*k + {0, 1, 2}.  Identical seed and spec give identical event logs.
Event ties (measure zero for the shipped continuous families) break by
time, then station index, then kind with arrivals before completions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ModelError, SolverError
from .network import NetworkSpec, validate

_BLOCK = 4096


@dataclass
class SimState:
    """Markov state snapshot plus bookkeeping counters."""

    clock: float
    queue: np.ndarray            # Q, integer occupancy
    excess_arrival: np.ndarray   # U, time to next exogenous arrival
    residual_service: np.ndarray  # W, zero at idle stations
    busy_time: np.ndarray        # B, cumulative busy time
    arrivals: np.ndarray         # exogenous arrival counts
    departures: np.ndarray
    routed_in: np.ndarray


@dataclass
class EventLog:
    times: np.ndarray
    stations: np.ndarray
    kinds: np.ndarray    # 0 arrival, 1 completion
    dests: np.ndarray    # routing target, -1 exit, -2 not a completion

    def tobytes(self) -> bytes:
        return (self.times.tobytes() + self.stations.tobytes()
                + self.kinds.tobytes() + self.dests.tobytes())

    def __len__(self) -> int:
        return self.times.size


@dataclass
class StateSamples:
    times: np.ndarray
    queue: np.ndarray            # (n, K)
    excess_arrival: np.ndarray
    residual_service: np.ndarray
    busy_time: np.ndarray


@dataclass
class SimResult:
    final: SimState
    samples: StateSamples | None
    events: EventLog | None
    n_events: int


@dataclass
class TailEstimate:
    """Empirical orthant tail probabilities across the scaling and the
    fitted exponential decay slope."""

    x: np.ndarray
    n_grid: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    hits: np.ndarray
    n_samples: int
    censored: np.ndarray
    slope: float
    slope_stderr: float
    intercept: float
    warnings: tuple[str, ...] = ()


def _spawn_streams(spec: NetworkSpec, seed: int):
    children = np.random.SeedSequence(seed).spawn(3 * spec.K)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def _require_valid(spec: NetworkSpec):
    report = validate(spec)
    if not report.ok:
        raise ModelError(f"network specification invalid: {report.first_failure}")


def simulate(spec: NetworkSpec, horizon: float, seed: int = 0, *,
             sample_times=None, collect_events: bool = False,
             check_conservation: bool = False,
             max_events: int = 50_000_000) -> SimResult:
    """Run the network on [0, horizon]; deterministic given the seed."""
    _require_valid(spec)
    if not horizon > 0:
        raise InvalidInputError("horizon must be positive")
    q0 = np.floor(spec.initial_q0 + 1e-9).astype(np.int64)
    return _run(spec, q0, spec.initial_u, spec.initial_v, float(horizon), seed,
                sample_times=sample_times, collect_events=collect_events,
                check_conservation=check_conservation, max_events=max_events)


def _run(spec, q0_int, u0, v0, horizon, seed, *, sample_times=None,
         collect_events=False, check_conservation=False,
         max_events=50_000_000) -> SimResult:
    K = spec.K
    rngs = _spawn_streams(spec, seed)
    arr_dist = spec.arrival
    svc_dist = spec.service
    cum_rout = [np.cumsum(spec.routing[k]).tolist() for k in range(K)]

    # per-station sample tapes; lists of floats are cheap to index
    arr_buf = [arr_dist[k].sample(rngs[3 * k], _BLOCK).tolist() for k in range(K)]
    svc_buf = [svc_dist[k].sample(rngs[3 * k + 1], _BLOCK).tolist() for k in range(K)]
    rou_buf = [rngs[3 * k + 2].random(_BLOCK).tolist() for k in range(K)]
    arr_i = [0] * K
    svc_i = [0] * K
    rou_i = [0] * K

    def next_gap(k):
        i = arr_i[k]
        if i >= _BLOCK:
            arr_buf[k] = arr_dist[k].sample(rngs[3 * k], _BLOCK).tolist()
            i = 0
        arr_i[k] = i + 1
        return arr_buf[k][i]

    def next_service(k):
        i = svc_i[k]
        if i >= _BLOCK:
            svc_buf[k] = svc_dist[k].sample(rngs[3 * k + 1], _BLOCK).tolist()
            i = 0
        svc_i[k] = i + 1
        return svc_buf[k][i]

    def next_uniform(k):
        i = rou_i[k]
        if i >= _BLOCK:
            rou_buf[k] = rngs[3 * k + 2].random(_BLOCK).tolist()
            i = 0
        rou_i[k] = i + 1
        return rou_buf[k][i]

    q = [int(x) for x in q0_int]
    base_q = list(q)
    na = [float(u0[k]) if u0[k] > 0 else float(next_gap(k)) for k in range(K)]
    nc = [float(v0[k]) if q[k] > 0 else math.inf for k in range(K)]
    for k in range(K):
        if q[k] > 0 and not v0[k] > 0:
            nc[k] = next_service(k)   # defensive: busy station without residual
    busy_total = [0.0] * K
    busy_since = [0.0 if q[k] > 0 else -1.0 for k in range(K)]
    n_arr = [0] * K
    n_dep = [0] * K
    n_in = [0] * K

    log_t, log_s, log_k, log_d = ([], [], [], []) if collect_events else (None,) * 4
    stimes = np.asarray(sample_times, dtype=float) if sample_times is not None else None
    sp = 0
    samp_rows = [] if stimes is not None else None

    def snapshot(ts):
        uu = [na[k] - ts for k in range(K)]
        ww = [nc[k] - ts if q[k] > 0 else 0.0 for k in range(K)]
        bb = [busy_total[k] + (ts - busy_since[k] if q[k] > 0 else 0.0) for k in range(K)]
        samp_rows.append((ts, list(q), uu, ww, bb))

    inf = math.inf
    n_events = 0
    clock = 0.0
    while True:
        t_min = inf
        k_min = -1
        kind = 0
        for k in range(K):
            t = na[k]
            if t < t_min:
                t_min, k_min, kind = t, k, 0
            t = nc[k]
            if t < t_min:
                t_min, k_min, kind = t, k, 1
        if t_min > horizon or k_min < 0:
            break
        if stimes is not None:
            while sp < stimes.size and stimes[sp] < t_min:
                snapshot(float(stimes[sp]))
                sp += 1
        clock = t_min
        k = k_min
        dest = -2
        if kind == 0:
            q[k] += 1
            n_arr[k] += 1
            na[k] = clock + next_gap(k)
            if q[k] == 1:
                busy_since[k] = clock
                nc[k] = clock + next_service(k)
        else:
            q[k] -= 1
            n_dep[k] += 1
            u = next_uniform(k)
            dest = -1
            cr = cum_rout[k]
            for l in range(K):
                if u < cr[l]:
                    dest = l
                    break
            if q[k] > 0:
                nc[k] = clock + next_service(k)
            else:
                nc[k] = inf
                busy_total[k] += clock - busy_since[k]
                busy_since[k] = -1.0
            if dest >= 0:
                q[dest] += 1
                n_in[dest] += 1
                if q[dest] == 1:
                    busy_since[dest] = clock
                    nc[dest] = clock + next_service(dest)
        n_events += 1
        if collect_events:
            log_t.append(clock)
            log_s.append(k)
            log_k.append(kind)
            log_d.append(dest)
        if check_conservation:
            for j in range(K):
                if q[j] != base_q[j] + n_arr[j] + n_in[j] - n_dep[j]:
                    raise SolverError("queue bookkeeping identity violated",
                                      {"station": j, "event": n_events, "time": clock})
        if n_events >= max_events:
            raise SolverError("event budget exceeded",
                              {"max_events": max_events, "time": clock})

    if stimes is not None:
        while sp < stimes.size and stimes[sp] <= horizon:
            snapshot(float(stimes[sp]))
            sp += 1

    clock = horizon
    final = SimState(
        clock=clock,
        queue=np.array(q, dtype=np.int64),
        excess_arrival=np.array([na[k] - clock for k in range(K)]),
        residual_service=np.array([nc[k] - clock if q[k] > 0 else 0.0 for k in range(K)]),
        busy_time=np.array([busy_total[k] + (clock - busy_since[k] if q[k] > 0 else 0.0)
                            for k in range(K)]),
        arrivals=np.array(n_arr, dtype=np.int64),
        departures=np.array(n_dep, dtype=np.int64),
        routed_in=np.array(n_in, dtype=np.int64),
    )
    events = None
    if collect_events:
        events = EventLog(np.array(log_t, dtype=np.float64),
                          np.array(log_s, dtype=np.int16),
                          np.array(log_k, dtype=np.int8),
                          np.array(log_d, dtype=np.int16))
    samples = None
    if samp_rows is not None:
        samples = StateSamples(
            times=np.array([r[0] for r in samp_rows]),
            queue=np.array([r[1] for r in samp_rows], dtype=np.int64).reshape(-1, K),
            excess_arrival=np.array([r[2] for r in samp_rows]).reshape(-1, K),
            residual_service=np.array([r[3] for r in samp_rows]).reshape(-1, K),
            busy_time=np.array([r[4] for r in samp_rows]).reshape(-1, K),
        )
    return SimResult(final=final, samples=samples, events=events, n_events=n_events)


def default_burn_in(spec: NetworkSpec) -> float:
    """50 K / min_k (mu_k - lambda_bar_k): long relative to every
    station's drain time."""
    margin = float(np.min(spec.service_rates - spec.total_arrival_rates()))
    return 50.0 * spec.K / margin


def default_spacing(spec: NetworkSpec) -> float:
    """Five drain times between samples, taming autocorrelation."""
    margin = float(np.min(spec.service_rates - spec.total_arrival_rates()))
    return 5.0 / margin


def stationary_sample(spec: NetworkSpec, n_samples: int, burn_in: float | None = None,
                      spacing: float | None = None, seed: int = 0) -> StateSamples:
    """Sample the state at spaced epochs after a burn-in period."""
    _require_valid(spec)
    if n_samples <= 0:
        raise InvalidInputError("n_samples must be positive")
    if burn_in is None:
        burn_in = default_burn_in(spec)
    if spacing is None:
        spacing = default_spacing(spec)
    times = burn_in + spacing * np.arange(n_samples)
    horizon = float(times[-1]) + 1e-9
    res = simulate(spec, horizon, seed, sample_times=times)
    return res.samples


def _wilson(hits: int, n: int, z: float = 1.959963984540054):
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    rad = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(center - rad, 0.0), min(center + rad, 1.0)


def estimate_tail(spec: NetworkSpec, x, n_grid, samples_per_n: int = 100_000,
                  seed: int = 0, burn_in: float | None = None,
                  spacing: float | None = None) -> TailEstimate:
    """Monte Carlo tail probabilities P(Q >= n x entrywise) across the
    scaling grid, with Wilson intervals and a weighted least-squares fit
    of -log p against n.

    One stationary pool of ``samples_per_n`` states is shared by every n
    (the events {Q >= n x} are nested, which only helps the slope fit);
    zero-hit rows are censored: reported with an upper confidence limit
    and excluded from the fit.
    """
    x = np.asarray(x, dtype=float)
    n_grid = np.asarray(sorted(int(n) for n in n_grid), dtype=int)
    if np.any(np.diff(n_grid) <= 0) or n_grid.size == 0:
        raise InvalidInputError("n_grid must be strictly increasing and nonempty")
    pool = stationary_sample(spec, samples_per_n, burn_in=burn_in,
                             spacing=spacing, seed=seed)
    N = pool.queue.shape[0]
    warnings = []
    hits = np.array([int(np.sum(np.all(pool.queue >= n * x - 1e-9, axis=1)))
                     for n in n_grid])
    p_hat = hits / N
    ci = np.array([_wilson(int(h), N) for h in hits])
    censored = hits == 0
    if np.any(censored):
        warnings.append(f"censored cells (zero hits) at n = "
                        f"{[int(n) for n in n_grid[censored]]}: upper CI only, excluded from fit")
    use = ~censored
    if int(use.sum()) >= 2:
        nn = n_grid[use].astype(float)
        yy = -np.log(p_hat[use])
        w = hits[use].astype(float)          # Var(log p_hat) ~ 1/hits
        X = np.column_stack([nn, np.ones_like(nn)])
        WX = X * w[:, None]
        cov = np.linalg.inv(X.T @ WX)
        beta = cov @ (WX.T @ yy)
        slope, intercept = float(beta[0]), float(beta[1])
        slope_se = float(math.sqrt(max(cov[0, 0], 0.0)))
    else:
        slope, intercept, slope_se = math.nan, math.nan, math.nan
        warnings.append("fewer than two uncensored cells: no slope fitted")
    return TailEstimate(x=x, n_grid=n_grid, p_hat=p_hat, ci_lo=ci[:, 0], ci_hi=ci[:, 1],
                        hits=hits, n_samples=N, censored=censored, slope=slope,
                        slope_stderr=slope_se, intercept=intercept,
                        warnings=tuple(warnings))


def scaled_trajectory(spec: NetworkSpec, n: int, horizon: float, seed: int = 0,
                      grid_dt: float = 0.01):
    """Fluid-scaled sample path: initial queue floor(n q0), delays n u and
    n v, state read on the uniform grid, returned as (t, Q(nt)/n)."""
    _require_valid(spec)
    if n < 1:
        raise InvalidInputError("scale n must be at least 1")
    q0 = np.floor(n * spec.initial_q0 + 1e-9).astype(np.int64)
    v0 = np.where(q0 > 0, n * spec.initial_v, 0.0)
    u0 = n * spec.initial_u
    tgrid = np.arange(0.0, horizon + grid_dt * 0.5, grid_dt)
    res = _run(spec, q0, u0, v0, float(n * horizon) + 1e-9, seed,
               sample_times=n * tgrid)
    return tgrid, res.samples.queue / float(n)
