"""Site-probability laws, their exponents, and realized environments.

Only finite-support laws are handled, so every moment below is an exact
finite sum: ``E[rho^t] = sum_j m_j * rho_j**t`` with ``rho = (1 - w) / w``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from . import rng
from .errors import InvalidDistribution, NoKappa

MASS_TOL = 1e-12


@dataclass(frozen=True)
class EnvDistribution:
    """Law of a single site probability ``omega_0``.

    ``values`` are site probabilities in (0, 1) and ``masses`` their
    probabilities. ``epsilon0`` is the ellipticity margin that
    :func:`check_assumptions` tests the support against.
    """

    values: tuple
    masses: tuple
    epsilon0: float

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        masses = tuple(float(m) for m in self.masses)
        if len(values) == 0 or len(values) != len(masses):
            raise InvalidDistribution("values and masses must be non-empty and of equal length")
        if any(m < 0 or not math.isfinite(m) for m in masses):
            raise InvalidDistribution(f"masses must be finite and nonnegative, got {masses}")
        if abs(math.fsum(masses) - 1.0) > MASS_TOL:
            raise InvalidDistribution(f"masses sum to {math.fsum(masses)!r}, not 1")
        if any(not (0.0 < v < 1.0) for v in values):
            raise InvalidDistribution(f"site probabilities must lie in (0, 1), got {values}")
        if not (0.0 < self.epsilon0 < 0.5):
            raise InvalidDistribution(f"epsilon0 must lie in (0, 1/2), got {self.epsilon0}")
        # drop zero-mass atoms; they never realize
        kept = [(v, m) for v, m in zip(values, masses) if m > 0]
        object.__setattr__(self, "values", tuple(v for v, _ in kept))
        object.__setattr__(self, "masses", tuple(m for _, m in kept))
        object.__setattr__(self, "epsilon0", float(self.epsilon0))

    @classmethod
    def two_point(cls, p_low: float, p_high: float, q: float, epsilon0: Optional[float] = None):
        """``omega = p_low`` with probability ``q``, else ``p_high``."""
        if epsilon0 is None:
            epsilon0 = min(p_low, 1 - p_low, p_high, 1 - p_high)
        if q in (0.0, 1.0):
            v = p_low if q == 1.0 else p_high
            return cls((v,), (1.0,), epsilon0)
        return cls((p_low, p_high), (q, 1.0 - q), epsilon0)

    @classmethod
    def constant(cls, w: float, epsilon0: Optional[float] = None):
        if epsilon0 is None:
            epsilon0 = min(w, 1 - w)
        return cls((w,), (1.0,), epsilon0)

    @property
    def log_rho(self) -> np.ndarray:
        v = np.asarray(self.values)
        return np.log(1.0 - v) - np.log(v)

    @property
    def log_masses(self) -> np.ndarray:
        return np.log(np.asarray(self.masses))

    @property
    def lattice_span(self) -> Optional[float]:
        return lattice_span(self)

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.masses)
        c[-1] = 1.0
        return c


@dataclass(frozen=True)
class EnvMoments:
    mean_log_rho: float
    kappa: Optional[float] = None
    kappa0: Optional[float] = None
    v0: Optional[float] = None


@dataclass(frozen=True)
class AssumptionReport:
    elliptic: bool
    transient_right: bool
    kappa_in_unit_interval: bool
    moments: EnvMoments

    @property
    def ok(self) -> bool:
        return self.elliptic and self.transient_right and self.kappa_in_unit_interval

    def as_dict(self) -> dict:
        m = self.moments
        return {
            "elliptic": self.elliptic,
            "transient_right": self.transient_right,
            "kappa_in_unit_interval": self.kappa_in_unit_interval,
            "mean_log_rho": m.mean_log_rho,
            "kappa": m.kappa,
            "kappa0": m.kappa0,
            "v0": m.v0,
        }


def lattice_span(dist: EnvDistribution, max_denominator: int = 1000, rtol: float = 1e-9):
    """Largest ``a > 0`` with every ``log rho`` in ``a * Z``, or None.

    Commensurability is decided by rational approximation of the ratios
    to the smallest nonzero step, so it is a heuristic for values built
    from floats.
    """
    steps = [s for s in dist.log_rho.tolist() if abs(s) > 1e-300]
    if not steps:
        return None
    base = min(steps, key=abs)
    fracs = []
    for s in steps:
        r = s / base
        fr = Fraction(r).limit_denominator(max_denominator)
        if abs(float(fr) - r) > rtol * max(1.0, abs(r)):
            return None
        fracs.append(fr)
    denom = reduce(lambda x, y: x * y // math.gcd(x, y), (f.denominator for f in fracs), 1)
    nums = [int(f * denom) for f in fracs]
    g = reduce(math.gcd, (abs(n) for n in nums))
    return abs(base) * g / denom


def log_mgf(dist: EnvDistribution, t: float) -> float:
    """``log E[exp(t log rho_0)]``, evaluated as a log-sum-exp."""
    if t == 0:
        return 0.0
    return float(logsumexp(t * dist.log_rho + dist.log_masses))


def _log_mgf_prime(dist: EnvDistribution, t: float) -> float:
    w = t * dist.log_rho + dist.log_masses
    w = np.exp(w - w.max())
    return float(np.dot(w, dist.log_rho) / w.sum())


def moment(dist: EnvDistribution, t: float) -> float:
    """``E[rho_0^t]``."""
    return math.exp(log_mgf(dist, t))


def mean_log_rho(dist: EnvDistribution) -> float:
    return math.fsum(m * s for m, s in zip(dist.masses, dist.log_rho.tolist()))


def solve_kappa(dist: EnvDistribution, tol: float = 1e-12) -> float:
    """Positive root of ``E[rho_0^t] = 1``.

    The map is strictly convex with value 1 at t = 0, so a positive root
    exists iff the slope at 0 is negative and some site has ``rho > 1``.
    """
    ls = dist.log_rho
    if mean_log_rho(dist) >= 0 or not (ls > 0).any():
        raise NoKappa("E[rho^t] < 1 has no positive crossing for this law")
    hi = 1.0
    while log_mgf(dist, hi) <= 0:
        hi *= 2.0
        if hi > 1e6:
            raise NoKappa("failed to bracket the root")
    lo = hi
    while log_mgf(dist, lo) >= 0:
        lo /= 2.0
        if lo < 1e-300:
            raise NoKappa("failed to bracket the root from below")
    kappa = brentq(lambda t: log_mgf(dist, t), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(moment(dist, kappa) - 1.0) > max(tol, 1e-13):
        raise NoKappa(f"root search converged to {kappa} with residual above {tol}")
    return kappa


def sub_exponent(dist: EnvDistribution, kappa: float) -> tuple[float, float]:
    """A point ``kappa0`` in (0, kappa) and ``v0 = E[rho^kappa0] < 1``."""
    kappa0 = kappa / 2.0
    return kappa0, moment(dist, kappa0)


def check_assumptions(dist: EnvDistribution) -> AssumptionReport:
    lo, hi = dist.epsilon0, 1.0 - dist.epsilon0
    elliptic = all(lo <= v <= hi for v in dist.values)
    mlr = mean_log_rho(dist)
    transient = mlr < 0
    try:
        kappa = solve_kappa(dist)
    except NoKappa:
        return AssumptionReport(elliptic, transient, False, EnvMoments(mlr))
    kappa0, v0 = sub_exponent(dist, kappa)
    return AssumptionReport(elliptic, transient, 0 < kappa < 1, EnvMoments(mlr, kappa, kappa0, v0))


def rate_function(dist: EnvDistribution, y: float, tol: float = 1e-13) -> float:
    """Cramer rate ``I(y) = sup_{t >= 0} (t*y - log E[rho^t])`` for ``y >= 0``.

    The maximizer is found by ternary search; the right end of the bracket
    doubles until the derivative of the log-MGF exceeds ``y``. At the top of
    the support the supremum is a limit and is returned in closed form.
    """
    if y < 0:
        raise ValueError("rate_function is defined here for y >= 0")
    ls = dist.log_rho
    top = float(ls.max())
    if y > top + 1e-12:
        return math.inf
    if y >= top - 1e-12:
        return -math.log(math.fsum(m for m, s in zip(dist.masses, ls) if s >= top - 1e-12))
    # t -> t*y - Lambda(t) is concave; its maximizer over [0, inf) sits where Lambda' = y
    if _log_mgf_prime(dist, 0.0) >= y:
        return 0.0
    spread = float(ls.max() - ls.min()) or 1.0
    hi = 64.0 / spread
    while _log_mgf_prime(dist, hi) < y:
        hi *= 2.0
    lo = 0.0
    g = lambda t: t * y - log_mgf(dist, t)  # noqa: E731
    while hi - lo > tol * max(1.0, hi):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if g(m1) < g(m2):
            lo = m1
        else:
            hi = m2
    return max(0.0, g(0.5 * (lo + hi)))


class Environment:
    """A realized i.i.d. environment, queried lazily site by site.

    ``omega_at(x)`` is a pure function of ``(master_seed, x, dist)``: the
    site's uniform variate comes from :func:`rng.site_uniforms` and is
    pushed through the inverse CDF of ``dist``. A window of realized sites
    is cached and grown on demand; growth only recomputes the same values.
    """

    def __init__(self, dist: EnvDistribution, master_seed: int):
        self.dist = dist
        self.master_seed = int(master_seed)
        self._cdf = dist.cdf()
        self._values = np.asarray(dist.values)
        self._lock = threading.Lock()
        self._lo = 0
        self._idx = np.empty(0, dtype=np.int8 if len(dist.values) < 128 else np.int32)

    def __repr__(self):
        return f"Environment(seed={self.master_seed}, support={self.dist.values})"

    def _support_index(self, sites) -> np.ndarray:
        u = rng.site_uniforms(self.master_seed, sites)
        idx = np.searchsorted(self._cdf, u, side="right")
        return np.minimum(idx, len(self._cdf) - 1).astype(self._idx.dtype)

    def _ensure(self, lo: int, hi: int):
        with self._lock:
            if not len(self._idx):
                self._lo = lo
                self._idx = self._support_index(np.arange(lo, hi))
                return
            cur_lo, cur_hi = self._lo, self._lo + len(self._idx)
            if lo >= cur_lo and hi <= cur_hi:
                return
            new_lo, new_hi = min(lo, cur_lo), max(hi, cur_hi)
            self._idx = np.concatenate([
                self._support_index(np.arange(new_lo, cur_lo)),
                self._idx,
                self._support_index(np.arange(cur_hi, new_hi)),
            ])
            self._lo = new_lo

    def support_index(self, lo: int, hi: int) -> np.ndarray:
        """Support indices of sites ``lo..hi-1``."""
        self._ensure(lo, hi)
        start = lo - self._lo
        return self._idx[start:start + (hi - lo)]

    def omega(self, lo: int, hi: int) -> np.ndarray:
        """Site probabilities for ``lo..hi-1``."""
        return self._values[self.support_index(lo, hi)]

    def omega_at(self, x: int) -> float:
        return float(self._values[self._support_index(np.array([x]))[0]])

    @property
    def realized(self) -> tuple[int, int]:
        return self._lo, self._lo + len(self._idx)


def sample_env(dist: EnvDistribution, master_seed: int) -> Environment:
    return Environment(dist, master_seed)


def omega_at(env: Environment, x: int) -> float:
    return env.omega_at(x)


def dist_from_config(cfg: dict) -> EnvDistribution:
    """Build a distribution from a config mapping.

    ``kind: two_point`` takes ``p_low``, ``p_high``, ``q``; ``kind: finite``
    takes parallel ``values`` and ``masses`` lists. Both accept ``epsilon0``.
    """
    kind = cfg.get("kind", "two_point")
    eps = cfg.get("epsilon0")
    if kind == "two_point":
        try:
            return EnvDistribution.two_point(float(cfg["p_low"]), float(cfg["p_high"]), float(cfg["q"]), eps)
        except KeyError as exc:
            raise InvalidDistribution(f"two_point distribution needs {exc.args[0]!r}") from None
    if kind == "finite":
        values, masses = cfg.get("values"), cfg.get("masses")
        if values is None or masses is None:
            raise InvalidDistribution("finite distribution needs 'values' and 'masses'")
        if eps is None:
            eps = min(min(v, 1 - v) for v in values)
        return EnvDistribution(tuple(values), tuple(masses), float(eps))
    if kind == "constant":
        return EnvDistribution.constant(float(cfg["omega"]), eps)
    raise InvalidDistribution(f"unknown distribution kind {kind!r}")
