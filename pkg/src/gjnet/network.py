"""Network specifications: stations, routing, stability checks, JSON I/O.

A network is K single-server FIFO stations with renewal exogenous
arrivals, renewal services, and i.i.d. Markovian routing given by a
row-substochastic matrix P (the missing row mass is the exit
probability).  Stations are indexed from 0 throughout the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .distributions import DistributionFamily, from_config, to_config
from .errors import InvalidInputError, ModelError


def spectral_radius(P: np.ndarray, tol: float = 1e-10, max_iter: int = 200_000) -> float:
    """Spectral radius of an entrywise-nonnegative matrix.

    Power iteration on the shifted matrix P + I, which is aperiodic and has
    radius rho(P) + 1, so the iteration converges for every nonnegative P.
    Restarts with fresh positive vectors if an iterate ever degenerates.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidInputError(f"matrix must be square, got shape {P.shape}")
    if np.any(P < 0) or not np.all(np.isfinite(P)):
        raise InvalidInputError("matrix entries must be nonnegative and finite")
    n = P.shape[0]
    if n == 0:
        return 0.0
    B = P + np.eye(n)
    rng = np.random.default_rng(0)
    for _ in range(3):  # restart loop; the positive start makes restarts moot
        v = np.full(n, 1.0 / n)
        lam = 1.0
        for _ in range(max_iter):
            w = B @ v
            norm = w.sum()
            if norm <= 0 or not np.isfinite(norm):
                break  # degenerate iterate: restart with a random vector
            w /= norm
            if abs(norm - lam) < tol * 0.5 and np.max(np.abs(w - v)) < tol * 0.5:
                return max(norm - 1.0, 0.0)
            v, lam = w, norm
        else:
            return max(lam - 1.0, 0.0)
        v = rng.random(n) + 0.1
    return max(lam - 1.0, 0.0)


def effective_rates(lam: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Total arrival rates: the solution of rate = lam + P^T rate.

    Requires rho(P) < 1; solved directly and checked to a residual of
    1e-12 relative to |lam|.
    """
    lam = np.asarray(lam, dtype=float)
    P = np.asarray(P, dtype=float)
    K = lam.shape[0]
    if P.shape != (K, K):
        raise InvalidInputError(f"routing matrix shape {P.shape} does not match {K} stations")
    A = np.eye(K) - P.T
    try:
        out = np.linalg.solve(A, lam)
    except np.linalg.LinAlgError as exc:
        raise ModelError("routing matrix is not subcritical: I - P^T is singular") from exc
    residual = np.max(np.abs(A @ out - lam))
    if residual > 1e-12 * max(1.0, float(np.max(np.abs(lam)))):
        raise ModelError(f"traffic equations solved poorly (residual {residual:.3e}); "
                         "is the spectral radius of P below one?")
    return out


@dataclass(frozen=True)
class NetworkSpec:
    """Full model input: per-station laws, routing, initial data.

    ``initial_u[k]`` is the time of the first exogenous arrival at station
    k (0 means the first interarrival time is drawn fresh) and
    ``initial_v[k]`` the residual service time of the customer initially
    in service; by convention v[k] > 0 exactly when q0[k] > 0.
    """

    arrival: tuple[DistributionFamily, ...]
    service: tuple[DistributionFamily, ...]
    routing: np.ndarray
    initial_q0: np.ndarray = None
    initial_u: np.ndarray = None
    initial_v: np.ndarray = None

    def __post_init__(self):
        arrival = tuple(self.arrival)
        service = tuple(self.service)
        K = len(arrival)
        if len(service) != K or K == 0:
            raise InvalidInputError("arrival and service families must have one entry per station")
        routing = np.array(self.routing, dtype=float)
        if routing.shape != (K, K):
            raise InvalidInputError(f"routing matrix must be {K}x{K}, got {routing.shape}")
        routing.setflags(write=False)

        def _vec(x, name):
            v = np.zeros(K) if x is None else np.array(x, dtype=float)
            if v.shape != (K,):
                raise InvalidInputError(f"{name} must be a length-{K} vector")
            v.setflags(write=False)
            return v

        object.__setattr__(self, "arrival", arrival)
        object.__setattr__(self, "service", service)
        object.__setattr__(self, "routing", routing)
        object.__setattr__(self, "initial_q0", _vec(self.initial_q0, "initial_q0"))
        object.__setattr__(self, "initial_u", _vec(self.initial_u, "initial_u"))
        object.__setattr__(self, "initial_v", _vec(self.initial_v, "initial_v"))

    @property
    def K(self) -> int:
        return len(self.arrival)

    @property
    def arrival_rates(self) -> np.ndarray:
        return np.array([d.stream_rate for d in self.arrival])

    @property
    def service_rates(self) -> np.ndarray:
        return np.array([d.stream_rate for d in self.service])

    @property
    def exit_probs(self) -> np.ndarray:
        return 1.0 - self.routing.sum(axis=1)

    def total_arrival_rates(self) -> np.ndarray:
        """Exogenous plus routed-in arrival rates at every station."""
        return effective_rates(self.arrival_rates, self.routing)


@dataclass
class ValidationCheck:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[ValidationCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def first_failure(self) -> str | None:
        for c in self.checks:
            if not c.ok:
                return c.name
        return None

    def __str__(self) -> str:
        lines = [f"[{'pass' if c.ok else 'FAIL'}] {c.name}" + (f": {c.detail}" if c.detail else "")
                 for c in self.checks]
        return "\n".join(lines)


def validate(spec: NetworkSpec) -> ValidationReport:
    """Check every model assumption; failures become report entries."""
    report = ValidationReport()
    add = report.checks.append
    P = spec.routing

    neg = bool(np.any(P < 0) or not np.all(np.isfinite(P)))
    add(ValidationCheck("routing-nonnegative", not neg,
                        "" if not neg else "routing matrix has negative or non-finite entries"))
    row_sums = P.sum(axis=1)
    bad_rows = np.nonzero(row_sums > 1.0 + 1e-12)[0]
    add(ValidationCheck("routing-substochastic", bad_rows.size == 0,
                        "" if bad_rows.size == 0 else
                        f"row {bad_rows[0]} sums to {row_sums[bad_rows[0]]:.6g} > 1"))
    if not neg:
        rho = spectral_radius(P)
        add(ValidationCheck("spectral-radius", rho < 1.0 - 1e-12,
                            f"rho(P) = {rho:.10g}"))
    else:
        rho = np.inf
        add(ValidationCheck("spectral-radius", False, "skipped: negative entries"))

    q0, u, v = spec.initial_q0, spec.initial_u, spec.initial_v
    add(ValidationCheck("initial-data-nonnegative",
                        bool(np.all(q0 >= 0) and np.all(u >= 0) and np.all(v >= 0))))
    consistent = bool(np.all((v > 0) == (q0 > 0)))
    add(ValidationCheck("residual-service-consistency", consistent,
                        "" if consistent else "v[k] > 0 must hold exactly when q0[k] > 0"))

    means_ok = all(np.isfinite(d.mean) and d.mean > 0 for d in spec.arrival + spec.service)
    add(ValidationCheck("finite-positive-means", means_ok))
    cramer_ok = all(d.mgf_sup > 0 for d in spec.arrival + spec.service)
    add(ValidationCheck("exponential-moments", cramer_ok,
                        "every family has a finite MGF on a right neighbourhood of zero"))

    if rho < 1.0 - 1e-12:
        lam_bar = effective_rates(spec.arrival_rates, P)
        mu = spec.service_rates
        margin = mu - lam_bar
        k_bad = int(np.argmin(margin))
        add(ValidationCheck("subcritical", bool(np.all(margin > 0)),
                            f"min service margin {margin[k_bad]:.6g} at station {k_bad}"))
    else:
        add(ValidationCheck("subcritical", False, "skipped: spectral radius check failed"))
    return report


# --- JSON configuration -------------------------------------------------
#
# Schema (all fields required, unknown fields rejected):
# {
#   "stations": [{"arrival": <dist>, "service": <dist>,
#                 "q0": float, "u": float, "v": float}, ...],
#   "routing": [[p00, p01, ...], ...]          # row-major, K x K
# }
# <dist> is {"family": "exponential", "rate": r} or
#          {"family": "gamma", "shape": s, "rate": r} or
#          {"family": "hyperexponential", "weights": [...], "rates": [...]}

_STATION_FIELDS = {"arrival", "service", "q0", "u", "v"}


def spec_from_dict(cfg: dict) -> NetworkSpec:
    if not isinstance(cfg, dict):
        raise InvalidInputError("network config must be a JSON object")
    unknown = set(cfg) - {"stations", "routing"}
    if unknown:
        raise InvalidInputError(f"unknown top-level fields: {sorted(unknown)}")
    if "stations" not in cfg or "routing" not in cfg:
        raise InvalidInputError("config requires 'stations' and 'routing'")
    stations = cfg["stations"]
    if not isinstance(stations, list) or not stations:
        raise InvalidInputError("'stations' must be a nonempty list")
    arrival, service, q0, u, v = [], [], [], [], []
    for i, st in enumerate(stations):
        if not isinstance(st, dict):
            raise InvalidInputError(f"station {i} must be an object")
        unknown = set(st) - _STATION_FIELDS
        if unknown:
            raise InvalidInputError(f"station {i}: unknown fields {sorted(unknown)}")
        missing = {"arrival", "service"} - set(st)
        if missing:
            raise InvalidInputError(f"station {i}: missing fields {sorted(missing)}")
        arrival.append(from_config(st["arrival"]))
        service.append(from_config(st["service"]))
        q0.append(float(st.get("q0", 0.0)))
        u.append(float(st.get("u", 0.0)))
        v.append(float(st.get("v", 0.0)))
    return NetworkSpec(arrival=tuple(arrival), service=tuple(service),
                       routing=np.asarray(cfg["routing"], dtype=float),
                       initial_q0=q0, initial_u=u, initial_v=v)


def spec_to_dict(spec: NetworkSpec) -> dict:
    stations = []
    for k in range(spec.K):
        stations.append({
            "arrival": to_config(spec.arrival[k]),
            "service": to_config(spec.service[k]),
            "q0": float(spec.initial_q0[k]),
            "u": float(spec.initial_u[k]),
            "v": float(spec.initial_v[k]),
        })
    return {"stations": stations, "routing": spec.routing.tolist()}


def load_spec(path) -> NetworkSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: not valid JSON ({exc})") from exc
    return spec_from_dict(cfg)


def save_spec(spec: NetworkSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
