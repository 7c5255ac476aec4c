"""The potential ``V`` of an environment and its fluctuation functionals.

``V(0) = 0`` and ``V(x) - V(x-1) = log rho_x``. Values are assembled from
integer counts of each support atom, ``V(x) = sum_j n_j(x) * log rho_j``, so
a site's value does not depend on how the window was chunked and the
rounding error does not grow with the distance from 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .env_model import Environment
from .errors import WindowExhausted


@dataclass(frozen=True, eq=False)
class PotentialPath:
    """``V`` on the integer window ``[x_min, x_max]`` (which contains 0)."""

    x_min: int
    values: np.ndarray
    log_rho: np.ndarray  # log rho_x for x in [x_min, x_max]; log_rho[0] is unused by V

    @property
    def x_max(self) -> int:
        return self.x_min + len(self.values) - 1

    def __len__(self):
        return len(self.values)

    def V(self, x):
        x = np.asarray(x)
        if np.any(x < self.x_min) or np.any(x > self.x_max):
            raise WindowExhausted(f"site outside window [{self.x_min}, {self.x_max}]")
        out = self.values[x - self.x_min]
        return float(out) if out.ndim == 0 else out

    def segment(self, lo: int, hi: int) -> np.ndarray:
        """``V(lo..hi)`` inclusive."""
        if lo < self.x_min or hi > self.x_max:
            raise WindowExhausted(f"[{lo}, {hi}] outside window [{self.x_min}, {self.x_max}]")
        return self.values[lo - self.x_min:hi - self.x_min + 1]

    @property
    def right(self) -> np.ndarray:
        """``V(0..x_max)``."""
        return self.values[-self.x_min:]

    def mirrored(self) -> "PotentialPath":
        """Path of the environment ``x -> 1 - omega_{1-x}``, i.e. ``V'(x) = V(-x)``."""
        vals = self.values[::-1].copy()
        lr = np.empty_like(self.log_rho)
        # V'(x) - V'(x-1) = V(-x) - V(1-x) = -log rho_{1-x}
        lr[1:] = -self.log_rho[::-1][:-1]
        lr[0] = np.nan
        return PotentialPath(-self.x_max, vals, lr)


def _assemble(idx: np.ndarray, log_rho_support: np.ndarray, x_min: int) -> np.ndarray:
    """``V`` on the window from per-site support indices."""
    n = len(idx)
    zero = -x_min
    k = len(log_rho_support)
    counts_right = np.zeros((k, n - zero), dtype=np.int64)
    counts_left = np.zeros((k, zero + 1), dtype=np.int64)
    right_idx = idx[zero + 1:]
    left_idx = idx[1:zero + 1][::-1]  # sites 0, -1, ..., x_min+1
    for j in range(k):
        counts_right[j, 1:] = np.cumsum(right_idx == j)
        counts_left[j, 1:] = np.cumsum(left_idx == j)
    right = _combine(counts_right, log_rho_support)
    left = -_combine(counts_left, log_rho_support)
    return np.concatenate([left[::-1][:-1], right])


def _combine(counts: np.ndarray, steps: np.ndarray) -> np.ndarray:
    # Neumaier summation across the (few) support atoms
    total = np.zeros(counts.shape[1])
    comp = np.zeros(counts.shape[1])
    for j in range(len(steps)):
        term = counts[j] * steps[j]
        t = total + term
        comp += np.where(np.abs(total) >= np.abs(term), (total - t) + term, (term - t) + total)
        total = t
    return total + comp


def potential(env: Environment, window: tuple[int, int]) -> PotentialPath:
    """``V`` over ``window = (x_min, x_max)``, inclusive, ``x_min <= 0 <= x_max``."""
    x_min, x_max = int(window[0]), int(window[1])
    if not x_min <= 0 <= x_max:
        raise ValueError("window must contain 0")
    idx = env.support_index(x_min, x_max + 1).astype(np.int64)
    steps = env.dist.log_rho
    values = _assemble(idx, steps, x_min)
    return PotentialPath(x_min, values, steps[idx])


def from_increments(log_rho: np.ndarray, x_min: int = 0) -> PotentialPath:
    """Path from explicit increments ``log rho_x``, ``x = x_min..x_min+len-1``.

    Uses a plain cumulative sum; meant for synthetic paths in tests and
    samplers, not for the long windows :func:`potential` serves.
    """
    log_rho = np.asarray(log_rho, dtype=float)
    zero = -x_min
    n = len(log_rho)
    vals = np.empty(n)
    vals[zero] = 0.0
    vals[zero + 1:] = np.cumsum(log_rho[zero + 1:])
    if zero:
        vals[:zero] = -np.cumsum(log_rho[1:zero + 1][::-1])[::-1]
    return PotentialPath(x_min, vals, log_rho)


def from_values(values, x_min: int = 0) -> PotentialPath:
    """Path from explicit values of ``V`` (``V(0)`` must be 0)."""
    values = np.asarray(values, dtype=float)
    if values[-x_min] != 0.0:
        raise ValueError("V(0) must be 0")
    lr = np.empty_like(values)
    lr[0] = np.nan
    lr[1:] = np.diff(values)
    return PotentialPath(x_min, values, lr)


def dump_csv(path: PotentialPath, fh, omega: Optional[np.ndarray] = None):
    """Write ``x, omega_x, V_x`` rows."""
    w = csv.writer(fh)
    w.writerow(["x", "omega_x", "V_x"])
    if omega is None:
        omega = 1.0 / (1.0 + np.exp(path.log_rho))
    for k, v in enumerate(path.values):
        w.writerow([path.x_min + k, repr(float(omega[k])), repr(float(v))])


# ---------------------------------------------------------------- ladder


@dataclass(frozen=True)
class LadderDecomposition:
    weak_epochs: np.ndarray
    weak_heights: np.ndarray
    strict_epochs: np.ndarray
    strict_heights: np.ndarray
    exhausted: bool = False


def _epochs(v: np.ndarray, strict: bool) -> np.ndarray:
    prev_min = np.minimum.accumulate(v)[:-1]
    hit = v[1:] < prev_min if strict else v[1:] <= prev_min
    return np.concatenate([[0], np.flatnonzero(hit) + 1])


def _heights(v: np.ndarray, epochs: np.ndarray) -> np.ndarray:
    if len(epochs) < 2:
        return np.empty(0)
    # max over [e_i, e_{i+1}); V(e_{i+1}) <= V(e_i) so the closed interval gives the same value
    seg_max = np.maximum.reduceat(v[:epochs[-1]], epochs[:-1])
    return seg_max - v[epochs[:-1]]


def ladder(path: PotentialPath, count: Optional[int] = None) -> LadderDecomposition:
    """Weak and strict descending ladder epochs of ``V`` on ``[0, x_max]``.

    ``count`` asks for that many complete excursions, i.e. ``count + 1``
    epochs and ``count`` heights. When the window holds fewer, everything
    available is returned with ``exhausted=True``.
    """
    v = path.right
    weak = _epochs(v, strict=False)
    strict = _epochs(v, strict=True)
    exhausted = False
    if count is not None:
        if len(weak) < count + 1 or len(strict) < count + 1:
            exhausted = True
        weak = weak[:count + 1]
        strict = strict[:count + 1]
    return LadderDecomposition(weak, _heights(v, weak), strict, _heights(v, strict), exhausted)


# ---------------------------------------------------------------- maximal increase


def v_up_array(path: PotentialPath, x_end: Optional[int] = None) -> np.ndarray:
    """``V_up(x)`` for ``x = 0..x_end``."""
    v = path.right if x_end is None else path.segment(0, x_end)
    return np.maximum.accumulate(v - np.minimum.accumulate(v))


def v_up(path: PotentialPath, x: int) -> float:
    """Largest rise ``max_{0 <= i <= j <= x} V(j) - V(i)``."""
    if x < 0:
        raise ValueError("x must be >= 0")
    return float(v_up_array(path, x)[-1])


def v_up_between(path: PotentialPath, x: int, y: int) -> float:
    if x > y:
        raise ValueError("need x <= y")
    v = path.segment(x, y)
    return float(np.max(v - np.minimum.accumulate(v)))


def t_up(path: PotentialPath, h: float) -> int:
    """First ``x >= 0`` where the maximal increase reaches ``h``."""
    if h <= 0:
        raise ValueError("h must be > 0")
    vu = v_up_array(path)
    k = int(np.searchsorted(vu, h, side="left"))
    if k >= len(vu):
        raise WindowExhausted(f"maximal increase {vu[-1]:.4g} < h={h} up to x={path.x_max}", partial=float(vu[-1]))
    return k


def m1(path: PotentialPath, h: float, t: Optional[int] = None) -> int:
    """Leftmost argmin of ``V`` on ``[0, t_up(h)]``."""
    if t is None:
        t = t_up(path, h)
    return int(np.argmin(path.segment(0, t)))


def left_ascent(path: PotentialPath, h: float, y: float, bottom: Optional[int] = None) -> Optional[int]:
    """``max{x <= m1(h) : V(x) - V(m1(h)) >= y}``; None when no such site is in the window."""
    if y <= 0:
        raise ValueError("y must be > 0")
    if bottom is None:
        bottom = m1(path, h)
    seg = path.segment(path.x_min, bottom)
    hits = np.flatnonzero(seg - seg[-1] >= y)
    if len(hits) == 0:
        return None
    return path.x_min + int(hits[-1])


class Interval(NamedTuple):
    lo: float = -math.inf
    hi: float = math.inf
    lo_closed: bool = True
    hi_closed: bool = True

    def contains(self, v):
        v = np.asarray(v)
        above = v >= self.lo if self.lo_closed else v > self.lo
        below = v <= self.hi if self.hi_closed else v < self.hi
        return above & below

    @classmethod
    def at_least(cls, x):
        return cls(x, math.inf, True, False)

    @classmethod
    def above(cls, x):
        return cls(x, math.inf, False, False)

    @classmethod
    def at_most(cls, x):
        return cls(-math.inf, x, False, True)

    @classmethod
    def below(cls, x):
        return cls(-math.inf, x, False, False)


def hit_level_set(path: PotentialPath, direction: int, A: Interval) -> Optional[int]:
    """First ``x >= 1`` with ``V(direction * x)`` in ``A``, or None within the window."""
    if direction > 0:
        seq = path.values[-path.x_min + 1:]
    else:
        seq = path.values[:-path.x_min][::-1]
    hits = np.flatnonzero(A.contains(seq))
    return int(hits[0]) + 1 if len(hits) else None
