"""Interarrival and service time distribution families.

The families shipped here are deliberately restricted: every one is
absolutely continuous with unbounded support and has a finite moment
generating function on a right neighbourhood of zero.  Those are exactly
the properties the rate-function machinery downstream needs, and keeping
the enumeration closed makes them checkable.

All log-MGFs accept scalars or numpy arrays and return ``+inf`` beyond
the convergence abscissa.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Exponential:
    """Exponential law with the given rate (mean ``1/rate``)."""

    rate: float

    def __post_init__(self):
        if not (self.rate > 0 and np.isfinite(self.rate)):
            raise InvalidInputError(f"exponential rate must be positive, got {self.rate}")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    @property
    def stream_rate(self) -> float:
        """Long-run events per unit time of the renewal stream, 1/mean."""
        return self.rate

    @property
    def mgf_sup(self) -> float:
        """Supremum of the domain where the MGF is finite."""
        return self.rate

    def log_mgf(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, np.inf)
        ok = theta < self.rate
        out[ok] = -np.log1p(-theta[ok] / self.rate)
        return out if out.ndim else float(out)

    def log_mgf_deriv(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, np.inf)
        ok = theta < self.rate
        out[ok] = 1.0 / (self.rate - theta[ok])
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(1.0 / self.rate, size)


@dataclass(frozen=True)
class Gamma:
    """Gamma law with shape >= 1 and the given rate (mean ``shape/rate``).

    Shapes below one are rejected: they put an integrable singularity at
    zero, which breaks the positive right derivative of the CDF at the
    origin that the network asymptotics rely on.
    """

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape >= 1 and np.isfinite(self.shape)):
            raise InvalidInputError(f"gamma shape must be >= 1, got {self.shape}")
        if not (self.rate > 0 and np.isfinite(self.rate)):
            raise InvalidInputError(f"gamma rate must be positive, got {self.rate}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def stream_rate(self) -> float:
        return self.rate / self.shape

    @property
    def mgf_sup(self) -> float:
        return self.rate

    def log_mgf(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, np.inf)
        ok = theta < self.rate
        out[ok] = -self.shape * np.log1p(-theta[ok] / self.rate)
        return out if out.ndim else float(out)

    def log_mgf_deriv(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, np.inf)
        ok = theta < self.rate
        out[ok] = self.shape / (self.rate - theta[ok])
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.gamma(self.shape, 1.0 / self.rate, size)


@dataclass(frozen=True)
class HyperExponential:
    """Mixture of exponentials: weight ``w_i`` on rate ``rates_i``."""

    weights: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        if w.ndim != 1 or w.shape != r.shape or w.size == 0:
            raise InvalidInputError("weights and rates must be equal-length nonempty sequences")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidInputError("weights must be positive and sum to one")
        if np.any(r <= 0) or not np.all(np.isfinite(r)):
            raise InvalidInputError("rates must be positive and finite")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "rates", tuple(float(x) for x in r))

    @property
    def mean(self) -> float:
        return float(sum(w / r for w, r in zip(self.weights, self.rates)))

    @property
    def stream_rate(self) -> float:
        return 1.0 / self.mean

    @property
    def mgf_sup(self) -> float:
        return min(self.rates)

    def _mgf(self, theta):
        w = np.asarray(self.weights)
        r = np.asarray(self.rates)
        t = np.asarray(theta, dtype=float)[..., None]
        return np.sum(w * r / (r - t), axis=-1)

    def log_mgf(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, np.inf)
        ok = theta < self.mgf_sup
        if np.any(ok):
            out[ok] = np.log(self._mgf(theta[ok]))
        return out if out.ndim else float(out)

    def log_mgf_deriv(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, np.inf)
        ok = theta < self.mgf_sup
        if np.any(ok):
            w = np.asarray(self.weights)
            r = np.asarray(self.rates)
            t = theta[ok][..., None]
            m = np.sum(w * r / (r - t), axis=-1)
            dm = np.sum(w * r / (r - t) ** 2, axis=-1)
            out[ok] = dm / m
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, rng.random(size))
        rates = np.asarray(self.rates)[idx]
        return rng.exponential(1.0, size) / rates


DistributionFamily = Exponential | Gamma | HyperExponential

_FAMILY_TAGS = {"exponential": Exponential, "gamma": Gamma, "hyperexponential": HyperExponential}


def from_config(cfg: dict) -> DistributionFamily:
    """Build a distribution from its JSON form, rejecting unknown fields."""
    if not isinstance(cfg, dict) or "family" not in cfg:
        raise InvalidInputError(f"distribution config must be an object with a 'family' field: {cfg!r}")
    tag = cfg["family"]
    if tag not in _FAMILY_TAGS:
        raise InvalidInputError(f"unknown distribution family {tag!r}")
    fields = {k: v for k, v in cfg.items() if k != "family"}
    expected = {
        "exponential": {"rate"},
        "gamma": {"shape", "rate"},
        "hyperexponential": {"weights", "rates"},
    }[tag]
    unknown = set(fields) - expected
    if unknown:
        raise InvalidInputError(f"unknown fields {sorted(unknown)} for family {tag!r}")
    missing = expected - set(fields)
    if missing:
        raise InvalidInputError(f"missing fields {sorted(missing)} for family {tag!r}")
    if tag == "hyperexponential":
        fields = {"weights": tuple(fields["weights"]), "rates": tuple(fields["rates"])}
    return _FAMILY_TAGS[tag](**fields)


def to_config(dist: DistributionFamily) -> dict:
    if isinstance(dist, Exponential):
        return {"family": "exponential", "rate": dist.rate}
    if isinstance(dist, Gamma):
        return {"family": "gamma", "shape": dist.shape, "rate": dist.rate}
    if isinstance(dist, HyperExponential):
        return {"family": "hyperexponential", "weights": list(dist.weights), "rates": list(dist.rates)}
    raise InvalidInputError(f"not a distribution family: {dist!r}")
