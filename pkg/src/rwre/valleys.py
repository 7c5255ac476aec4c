"""Valleys of the potential indexed by excursions, and the very deep ones.

Valley ``i`` sits at the bottom ``b_i = e_{sigma(i)}`` of the first weak
ladder excursion after ``sigma(i-1)`` whose height reaches ``f_i``. Its
walls ``a_i``/``c_i`` are where ``V`` climbs ``f_i + z_i`` above the bottom,
clipped to the surrounding excursions. Six boolean events describe how
regular the valley is; the very deep valleys are those passing the
invariant-sum and height tests past an empirical regularity threshold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .env_model import EnvDistribution, Environment, check_assumptions
from .errors import ConfigError, WindowExhausted
from .potential import LadderDecomposition, PotentialPath, ladder, potential, t_up

# N_i is kept as an exact integer while it fits in a double's mantissa
_EXACT_LOG_LIMIT = 52 * math.log(2)


@dataclass(frozen=True)
class ValleySchedule:
    epsilon: float
    kappa: float
    C0: float = 1.0
    C2: float = 1.0
    C4: Optional[float] = None
    kappa0: Optional[float] = None
    v0: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.kappa < 1:
            raise ConfigError(f"kappa must lie in (0, 1), got {self.kappa}")
        upper = (1 - self.kappa) / (2 * self.kappa)
        if not 0 < self.epsilon < upper:
            raise ConfigError(f"epsilon must lie in (0, {upper:.6g}) for kappa={self.kappa:.6g}, got {self.epsilon}")
        if self.C0 < 1:
            raise ConfigError("C0 must be >= 1")
        if self.C2 <= 0:
            raise ConfigError("C2 must be > 0")
        bound = self.c4_lower_bound
        if self.C4 is None:
            object.__setattr__(self, "C4", 1.25 * bound if bound is not None else 50.0)
        elif bound is not None and not self.C4 > bound:
            raise ConfigError(f"C4 must exceed 2(kappa+kappa0)/|log v0| = {bound:.6g}, got {self.C4}")

    @property
    def c4_lower_bound(self) -> Optional[float]:
        if self.kappa0 is None or self.v0 is None:
            return None
        return 2 * (self.kappa + self.kappa0) / abs(math.log(self.v0))

    @property
    def epsilon_upper(self) -> float:
        return (1 - self.kappa) / (2 * self.kappa)

    @property
    def index_exponent(self) -> float:
        """Exponent ``(1+eps) / (1/kappa - 1 - 3 eps/2)`` in the lower bound on ``i(n)``."""
        return (1 + self.epsilon) / (1 / self.kappa - 1 - 1.5 * self.epsilon)

    @classmethod
    def for_distribution(cls, dist: EnvDistribution, epsilon: Optional[float] = None, C0: float = 1.0,
                         C2: float = 1.0, C4: Optional[float] = None) -> "ValleySchedule":
        rep = check_assumptions(dist)
        if not rep.kappa_in_unit_interval:
            raise ConfigError("valley construction needs 0 < kappa < 1")
        m = rep.moments
        if epsilon is None:
            epsilon = 0.5 * (1 - m.kappa) / (2 * m.kappa)
        return cls(epsilon, m.kappa, C0, C2, C4, m.kappa0, m.v0)


class ScheduleValues(NamedTuple):
    N: float  # int when exact
    f: float
    z: float
    log_N: float
    exact: bool


def schedule(sched: ValleySchedule, i: int) -> ScheduleValues:
    """``N_i``, ``f_i`` and ``z_i``; the factorial is handled in log space."""
    if i < 1:
        raise ValueError("i must be >= 1")
    eps = sched.epsilon
    log_fact = math.fsum(math.log(j) for j in range(2, i + 1))
    log_i = math.log(i)
    log_N_real = math.log(sched.C0) + (1 + eps) * log_i + (1 + eps) / sched.kappa * log_fact
    z = log_i / sched.kappa
    if log_N_real < _EXACT_LOG_LIMIT:
        N = math.floor(math.exp(log_N_real))
        log_N = math.log(N)
        exact = True
    else:
        N = math.exp(log_N_real) if log_N_real < 700 else math.inf
        log_N = log_N_real
        exact = False
    f = log_N - math.log(sched.C0) - (1 + eps) * log_i
    return ScheduleValues(N, f, z, log_N, exact)


@dataclass(frozen=True)
class ValleyRecord:
    i: int
    sigma: int
    a: int
    alpha: int
    b: int
    gamma: int
    c: int
    beta_minus: Optional[int]
    beta_plus: Optional[int]
    height: float
    N: float
    f: float
    z: float
    flags: Optional[tuple] = None

    def passes(self, *which: int) -> bool:
        """True when every listed event (1-based) holds."""
        return all(self.flags[k - 1] for k in which)

    @property
    def very_deep_candidate(self) -> bool:
        return self.flags is not None and self.flags[4] and self.flags[5]


def _last_at_least(v: np.ndarray, level: float) -> Optional[int]:
    hits = np.flatnonzero(v >= level)
    return int(hits[-1]) if len(hits) else None


def _first_at_least(v: np.ndarray, level: float) -> Optional[int]:
    hits = np.flatnonzero(v >= level)
    return int(hits[0]) if len(hits) else None


def locate_valley(path: PotentialPath, lad: LadderDecomposition, sched: ValleySchedule, i: int,
                  prev: Optional[ValleyRecord] = None) -> ValleyRecord:
    """Anatomy of valley ``i`` given valley ``i-1`` (None for ``i = 1``)."""
    if (prev is None) != (i == 1) or (prev is not None and prev.i != i - 1):
        raise ValueError("prev must be valley i-1 (None for i = 1)")
    sv = schedule(sched, i)
    f, z = sv.f, sv.z
    sigma_prev = -1 if prev is None else prev.sigma
    e, H = lad.weak_epochs, lad.weak_heights
    later = np.flatnonzero(H[sigma_prev + 1:] >= f)
    if len(later) == 0:
        raise WindowExhausted(f"no excursion of height >= f_{i} = {f:.4g} after sigma={sigma_prev} in window")
    sigma = sigma_prev + 1 + int(later[0])
    b = int(e[sigma])
    cap_left = int(e[sigma_prev + 1])
    next_epoch = int(e[sigma + 1])
    V = path.values
    off = -path.x_min
    vb = V[b + off]

    left = V[cap_left + off:b + off]
    k = _last_at_least(left, vb + f + z)
    a = cap_left + k if k is not None else cap_left
    k = _last_at_least(left, vb + f / 2)
    alpha = cap_left + k if k is not None else cap_left

    right = V[b + 1 + off:]
    # gamma never passes the next epoch when f > 0; the cap only binds for f <= 0 (valley 1)
    k = _first_at_least(right[:next_epoch - b - 1], vb + f / 2)
    gamma = next_epoch - 1 if k is None else b + 1 + k
    k = _first_at_least(right, vb + f + z)
    c = next_epoch - 1 if k is None else min(next_epoch - 1, b + 1 + k)

    k = _last_at_least(V[:b + off], vb + f)
    beta_minus = path.x_min + k if k is not None else None
    k = _first_at_least(right, vb + f)
    beta_plus = b + 1 + k if k is not None else None

    return ValleyRecord(i, sigma, a, alpha, b, gamma, c, beta_minus, beta_plus, float(H[sigma]), sv.N, f, z)


def omega_events(rec: ValleyRecord, path: PotentialPath, sched: ValleySchedule) -> tuple:
    """The six regularity events of a located valley, each evaluated literally."""
    V = lambda lo, hi: path.segment(lo, hi)  # noqa: E731
    vb = path.V(rec.b)
    f, z = rec.f, rec.z
    level = vb + f + z

    # 1: a is the unclipped last site before b at height >= f+z
    om1 = rec.a < rec.b and path.V(rec.a) >= level and (
        rec.a + 1 > rec.b - 1 or float(V(rec.a + 1, rec.b - 1).max()) < level)

    # 2: b <= T_up(f) - 1 <= i e^{kappa f}
    T = t_up(path, f) if f > 0 else 0
    om2 = rec.b <= T - 1 <= rec.i * math.exp(sched.kappa * f)

    # 3: the valley is not too wide
    om3 = rec.c - rec.a <= sched.C4 * (f + z)

    # 4: V stays above V(b) + f/4 on ]a, c[ minus ]alpha, gamma[
    outer = []
    if rec.alpha >= rec.a + 1:
        outer.append(V(rec.a + 1, rec.alpha))
    if rec.c - 1 >= rec.gamma:
        outer.append(V(rec.gamma, rec.c - 1))
    om4 = all(float(seg.min()) > vb + f / 4 for seg in outer)

    # 5: invariant-measure sum over [alpha, gamma]
    om5 = valley_sum(path, rec.alpha, rec.gamma, rec.b) < 7 * sched.C2

    # 6: the valley is at least f + z deep on the right
    om6 = rec.height >= f + z
    return (bool(om1), bool(om2), bool(om3), bool(om4), bool(om5), bool(om6))


def valley_sum(path: PotentialPath, lo: int, hi: int, bottom: int) -> float:
    """``sum_{k=lo}^{hi} exp(-(V(k) - V(bottom)))``."""
    terms = np.exp(-(path.segment(lo, hi) - path.V(bottom)))
    return math.fsum(np.sort(terms))


@dataclass
class DeepValleyIndex:
    indices: list
    i0: int
    exponent: float
    complete: bool = True
    candidates: list = field(default_factory=list)


def index_lower_bound(n: int, exponent: float) -> float:
    return max(float(n), float(n) ** exponent)


def empirical_i0(records: Iterable[ValleyRecord]) -> int:
    """One past the last valley that has the height event but fails one of events 1-4."""
    last_bad = 0
    for r in records:
        if r.flags[5] and not all(r.flags[:4]):
            last_bad = max(last_bad, r.i)
    return last_bad + 1


def deep_valley_indices(records: Iterable[ValleyRecord], sched: ValleySchedule, n_max: int) -> DeepValleyIndex:
    """Indices ``i(0) < i(1) < ... < i(n_max-1)`` of the very deep valleys.

    Raises WindowExhausted, carrying the partial index, when the records run
    out before ``n_max`` indices are found.
    """
    records = sorted(records, key=lambda r: r.i)
    i0 = empirical_i0(records)
    members = [r.i for r in records if r.i >= i0 and r.flags[4] and r.flags[5]]
    p = sched.index_exponent
    out = []
    pos = 0
    for n in range(n_max):
        floor = index_lower_bound(n, p)
        if out:
            floor = max(floor, out[-1] + 1)
        while pos < len(members) and members[pos] < floor:
            pos += 1
        if pos == len(members):
            idx = DeepValleyIndex(out, i0, p, complete=False, candidates=members)
            raise WindowExhausted(f"only {len(out)} of {n_max} very deep valleys within the examined valleys", partial=idx)
        out.append(members[pos])
        pos += 1
    return DeepValleyIndex(out, i0, p, True, members)


@dataclass
class Census:
    path: PotentialPath
    ladder: LadderDecomposition
    records: list
    exhausted: bool

    def valley_of(self, site: int) -> Optional[int]:
        """Index of the valley whose ``[a, c]`` contains ``site``."""
        for r in self.records:
            if r.a <= site <= r.c:
                return r.i
        return None

    def record(self, i: int) -> ValleyRecord:
        return self.records[i - 1]


def locate_all(path: PotentialPath, lad: LadderDecomposition, sched: ValleySchedule, i_max: int):
    """Valleys ``1..i_max`` with flags; stops early (exhausted=True) at the window edge."""
    out = []
    prev = None
    for i in range(1, i_max + 1):
        try:
            rec = locate_valley(path, lad, sched, i, prev)
            rec = replace(rec, flags=omega_events(rec, path, sched))
        except WindowExhausted:
            return out, True
        out.append(rec)
        prev = rec
    return out, False


def census(env, sched: ValleySchedule, i_max: int, left: int = -1000, right: int = 1 << 14,
           max_right: int = 1 << 24) -> Census:
    """Locate valleys ``1..i_max`` on ``env``, doubling the window to the right as needed."""
    while True:
        path = potential(env, (left, right))
        lad = ladder(path)
        recs, exhausted = locate_all(path, lad, sched, i_max)
        if not exhausted or right >= max_right:
            return Census(path, lad, recs, exhausted)
        right *= 2


CSV_COLUMNS = ["i", "sigma", "a", "alpha", "b", "gamma", "c", "height", "N_i", "f_i", "z_i",
               "omega1", "omega2", "omega3", "omega4", "omega5", "omega6", "beta_minus", "beta_plus"]


def write_csv(records: Iterable[ValleyRecord], fh, lead: Optional[dict] = None):
    """Write records as CSV; ``lead`` adds constant leading columns (e.g. config hash and seed)."""
    lead = lead or {}
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([*lead, *CSV_COLUMNS])
    for r in records:
        flags = [int(x) for x in r.flags] if r.flags is not None else [""] * 6
        w.writerow([*lead.values(), r.i, r.sigma, r.a, r.alpha, r.b, r.gamma, r.c, repr(r.height), r.N, repr(r.f), repr(r.z),
                    *flags, "" if r.beta_minus is None else r.beta_minus,
                    "" if r.beta_plus is None else r.beta_plus])


def find_deep_valley(dist: EnvDistribution, sched: ValleySchedule, seeds: Iterable[int], i_max: int = 6,
                     max_right: int = 1 << 20):
    """First environment seed whose census up to ``i_max`` holds a very deep valley.

    Returns ``(seed, env, census, record)`` for the valley ``i(0)``, or None.
    """
    for s in seeds:
        env = Environment(dist, s)
        cen = census(env, sched, i_max, max_right=max_right)
        try:
            idx = deep_valley_indices(cen.records, sched, 1)
        except WindowExhausted:
            continue
        return s, env, cen, cen.record(idx.indices[0])
    return None
