"""Quenched simulation: walkers, meetings, the reflected chain and the coupling.

Every walk steps ``+1`` when its uniform variate is below ``omega`` at the
current site and ``-1`` otherwise. Uniforms come from :mod:`rwre.rng`
streams keyed by role and ids, so the ``t``-th step of a given walker
always consumes the ``t``-th variate of its own stream.

Long single trajectories (``run``, ``hitting_time``) go through a compiled
kernel. Replicate batches advance synchronously, one numpy tick per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import rng
from .env_model import Environment
from .errors import DegenerateInterval, ParityMismatch

CHUNK = 1 << 16


@njit(cache=True)
def _advance(omega, lo, x, u, out, start):
    """Advance one walker over ``u[start:]``; stop early on leaving the window."""
    n = len(omega)
    for t in range(start, len(u)):
        k = x - lo
        if k < 0 or k >= n:
            return t, x
        if u[t] < omega[k]:
            x += 1
        else:
            x -= 1
        out[t] = x
    return len(u), x


@njit(cache=True)
def _advance_until(omega, lo, x, u, stop_lo, stop_hi, start):
    """Like ``_advance`` but stop once ``x <= stop_lo`` or ``x >= stop_hi``. Returns (t, x, hit)."""
    n = len(omega)
    for t in range(start, len(u)):
        k = x - lo
        if k < 0 or k >= n:
            return t, x, False
        if u[t] < omega[k]:
            x += 1
        else:
            x -= 1
        if x <= stop_lo or x >= stop_hi:
            return t + 1, x, True
    return len(u), x, False


class OmegaWindow:
    """Realized site probabilities over ``[lo, hi)``, grown by doubling, with optional overrides."""

    def __init__(self, env: Environment, lo: int, hi: int, overrides: Optional[dict] = None):
        self.env = env
        self.overrides = dict(overrides or {})
        self.lo, self.hi = int(lo), int(hi)
        self._load()

    def _load(self):
        self.omega = np.array(self.env.omega(self.lo, self.hi), dtype=np.float64)
        for x, w in self.overrides.items():
            if self.lo <= x < self.hi:
                self.omega[x - self.lo] = w

    def ensure(self, xmin: int, xmax: int):
        if xmin >= self.lo and xmax < self.hi:
            return
        width = self.hi - self.lo
        lo, hi = self.lo, self.hi
        while xmin < lo:
            lo -= width
            width *= 2
        while xmax >= hi:
            hi += width
            width *= 2
        self.lo, self.hi = lo, hi
        self._load()

    def at(self, x: np.ndarray) -> np.ndarray:
        return self.omega[x - self.lo]


# ---------------------------------------------------------------- d walkers


@dataclass
class MeetingLog:
    meeting_times: np.ndarray
    meeting_sites: np.ndarray

    def count(self, before: Optional[int] = None, at_least: int = 0) -> int:
        t = self.meeting_times
        mask = t >= at_least
        if before is not None:
            mask &= t <= before
        return int(mask.sum())


@dataclass
class TrajectorySummary:
    starts: tuple
    horizon: int
    final: np.ndarray
    max_site: np.ndarray
    min_site: np.ndarray
    checkpoint_times: np.ndarray
    checkpoints: np.ndarray  # shape (n_checkpoints, d)


def _check_same_parity(starts):
    if len({s % 2 for s in starts}) > 1:
        raise ParityMismatch(f"starts {tuple(starts)} do not share one parity; the walkers can never meet")


def run(env: Environment, starts: Sequence[int], horizon: int, seed: int, run_id: int = 0,
        checkpoint_stride: Optional[int] = None, detect_meetings: bool = True,
        chunk: int = CHUNK) -> tuple[TrajectorySummary, MeetingLog]:
    """Simulate ``d`` independent walkers in ``env`` for ``horizon`` steps.

    Walker ``j`` draws from stream ``(seed, WALKER, run_id, j)``. Every
    time ``n`` (including 0) at which all walkers share a site is logged.
    """
    starts = tuple(int(s) for s in starts)
    d = len(starts)
    if d < 1:
        raise ValueError("need at least one walker")
    if detect_meetings:
        _check_same_parity(starts)
    gens = [rng.stream(seed, rng.WALKER, run_id, j) for j in range(d)]
    win = OmegaWindow(env, min(starts) - 1024, max(starts) + 1024)
    pos = np.array(starts, dtype=np.int64)
    max_site = pos.copy()
    min_site = pos.copy()
    stride = checkpoint_stride or 0
    cp_times = [0]
    cp_rows = [pos.copy()]
    m_times, m_sites = [], []
    if detect_meetings and np.all(pos == pos[0]):
        m_times.append(np.array([0]))
        m_sites.append(pos[:1].copy())

    done = 0
    buf = np.empty((d, chunk), dtype=np.int64)
    while done < horizon:
        n = min(chunk, horizon - done)
        for j in range(d):
            u = gens[j].random(n)
            out = buf[j, :n]
            t, x = 0, int(pos[j])
            while True:
                t, x = _advance(win.omega, win.lo, x, u, out, t)
                if t == n:
                    break
                win.ensure(x, x)
            pos[j] = x
        block = buf[:, :n]
        np.maximum(max_site, block.max(axis=1), out=max_site)
        np.minimum(min_site, block.min(axis=1), out=min_site)
        if detect_meetings:
            hit = np.flatnonzero(np.all(block == block[0], axis=0))
            if len(hit):
                m_times.append(hit + done + 1)
                m_sites.append(block[0, hit].copy())
        if stride:
            first = (done // stride + 1) * stride
            ts = np.arange(first, done + n + 1, stride)
            if len(ts):
                cp_times.extend(ts.tolist())
                cp_rows.extend(block[:, ts - done - 1].T)
        done += n

    if stride and cp_times[-1] != horizon:
        cp_times.append(horizon)
        cp_rows.append(pos.copy())
    summary = TrajectorySummary(starts, horizon, pos.copy(), max_site, min_site,
                                np.array(cp_times), np.array(cp_rows))
    if m_times:
        log = MeetingLog(np.concatenate(m_times), np.concatenate(m_sites))
    else:
        log = MeetingLog(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    return summary, log


def trajectory(env: Environment, start: int, horizon: int, seed: int, role: int = rng.WALKER,
               ids: tuple = (0, 0), overrides: Optional[dict] = None) -> np.ndarray:
    """Positions ``S_0..S_horizon`` of one walker (stream ``(seed, role, *ids)``)."""
    g = rng.stream(seed, role, *ids)
    out = np.empty(horizon + 1, dtype=np.int64)
    out[0] = start
    win = OmegaWindow(env, start - 1024, start + 1024, overrides)
    x, done = int(start), 0
    while done < horizon:
        n = min(CHUNK, horizon - done)
        u = g.random(n)
        seg = out[1 + done:1 + done + n]
        t = 0
        while True:
            t, x = _advance(win.omega, win.lo, x, u, seg, t)
            if t == n:
                break
            win.ensure(x, x)
        done += n
    return out


# ---------------------------------------------------------------- hitting times

_FAR = np.iinfo(np.int64).max // 4


def _hit(env, start, targets, cap, gen, win=None):
    targets = sorted(set(int(t) for t in targets))
    if start in targets:
        return 0, start
    below = [t for t in targets if t < start]
    above = [t for t in targets if t > start]
    stop_lo = below[-1] if below else -_FAR
    stop_hi = above[0] if above else _FAR
    if win is None:
        win = OmegaWindow(env, start - 1024, start + 1024)
    x, steps = int(start), 0
    while cap is None or steps < cap:
        n = CHUNK if cap is None else min(CHUNK, cap - steps)
        u = gen.random(n)
        t = 0
        while True:
            t, x, hit = _advance_until(win.omega, win.lo, x, u, stop_lo, stop_hi, t)
            if hit:
                return steps + t, x
            if t == n:
                break
            win.ensure(x, x)
        steps += n
    return None, x


def hitting_time(env: Environment, start: int, target, cap: Optional[int], seed: int,
                 run_id: int = 0) -> Optional[int]:
    """First step at which the walker from ``start`` sits on ``target`` (an int or a set of ints).

    None when ``cap`` steps pass first.
    """
    if isinstance(target, (set, frozenset, list, tuple, np.ndarray)):
        targets = list(np.asarray(sorted(target) if isinstance(target, (set, frozenset)) else target).ravel())
    else:
        targets = [target]
    g = rng.stream(seed, rng.WALKER, run_id, 0)
    t, _ = _hit(env, int(start), targets, cap, g)
    return t


def hitting_time_after(env: Environment, x: int, y: int, cap: Optional[int], seed: int,
                       run_id: int = 0, start: int = 0) -> Optional[int]:
    """Steps from the first visit to ``x`` until the next visit to ``y``, same stream throughout."""
    g = rng.stream(seed, rng.WALKER, run_id, 0)
    win = OmegaWindow(env, min(start, x, y) - 1024, max(start, x, y) + 1024)
    t1, _ = _hit(env, int(start), [x], cap, g, win)
    if t1 is None:
        return None
    t2, _ = _hit(env, int(x), [y], None if cap is None else cap - t1, g, win)
    return t2


# ---------------------------------------------------------------- replicate batches


def first_exit(env: Environment, start: int, n_runs: int, gen: np.random.Generator,
               lower: Optional[int] = None, upper: Optional[int] = None, cap: Optional[int] = None,
               overrides: Optional[dict] = None) -> tuple[np.ndarray, np.ndarray]:
    """Run ``n_runs`` walkers from ``start`` until they reach ``lower`` or ``upper``.

    Returns ``(site, time)`` arrays; ``time`` is -1 for runs stopped by ``cap``.
    All active replicates advance together and consume one variate each per tick.
    """
    if cap is None and lower is None and upper is None:
        raise ValueError("unbounded simulation: give lower, upper or cap")
    lo = start - 1024 if lower is None else lower
    hi = start + 1024 if upper is None else upper + 1
    win = OmegaWindow(env, lo, hi, overrides)
    x = np.full(n_runs, start, dtype=np.int64)
    site = np.full(n_runs, start, dtype=np.int64)
    when = np.full(n_runs, -1, dtype=np.int64)
    active = np.arange(n_runs)
    if (lower is not None and start <= lower) or (upper is not None and start >= upper):
        return site, np.zeros(n_runs, dtype=np.int64)
    t = 0
    while len(active) and (cap is None or t < cap):
        xa = x[active]
        if lower is None or upper is None:
            win.ensure(int(xa.min()), int(xa.max()))
        u = gen.random(len(active))
        xa = xa + np.where(u < win.at(xa), 1, -1)
        x[active] = xa
        t += 1
        done = np.zeros(len(active), dtype=bool)
        if lower is not None:
            done |= xa <= lower
        if upper is not None:
            done |= xa >= upper
        if done.any():
            idx = active[done]
            site[idx] = xa[done]
            when[idx] = t
            active = active[~done]
    site[active] = x[active]
    return site, when


def positions_at(env: Environment, starts: np.ndarray, times: Sequence[int], gen: np.random.Generator,
                 overrides: Optional[dict] = None) -> np.ndarray:
    """Positions of walkers started at ``starts`` at each of ``times`` (shape ``(len(times), n)``)."""
    x = np.array(starts, dtype=np.int64)
    times = sorted(int(t) for t in times)
    out = np.empty((len(times), len(x)), dtype=np.int64)
    win = OmegaWindow(env, int(x.min()) - 1024, int(x.max()) + 1024, overrides)
    t = 0
    for k, target in enumerate(times):
        while t < target:
            if t % 512 == 0:
                win.ensure(int(x.min()) - 512, int(x.max()) + 512)
            u = gen.random(len(x))
            x += np.where(u < win.at(x), 1, -1)
            t += 1
        out[k] = x
    return out


def occupation_probability(env: Environment, start: int, site: int, at_step: int, n_runs: int,
                           seed: int, run_id: int = 0) -> tuple[float, float]:
    """Monte Carlo ``P^start[S_at_step = site]`` with its binomial standard error."""
    if (site - start - at_step) % 2:
        raise ParityMismatch(f"site {site} is unreachable from {start} in exactly {at_step} steps")
    if at_step == 0:
        return (1.0 if site == start else 0.0), 0.0
    g = rng.stream(seed, rng.BATCH, run_id)
    pos = positions_at(env, np.full(n_runs, start), [at_step], g)[0]
    p = float(np.mean(pos == site))
    return p, math.sqrt(p * (1 - p) / n_runs)


# ---------------------------------------------------------------- reflected chain


@dataclass
class ReflectedEnv:
    """``env`` with ``omega_a = 1`` and ``omega_c = 0``; ``bottom`` defaults to the leftmost argmin of V on [a, c]."""

    base: Environment
    a: int
    c: int
    bottom: Optional[int] = None

    def __post_init__(self):
        if self.c <= self.a:
            raise DegenerateInterval(f"need a < c, got [{self.a}, {self.c}]")
        if self.bottom is None:
            self.bottom = self.a + int(np.argmin(self.local_potential()))

    @property
    def b(self) -> int:
        return self.bottom

    @property
    def overrides(self) -> dict:
        return {self.a: 1.0, self.c: 0.0}

    def omega_hat(self) -> np.ndarray:
        """Reflected site probabilities on ``[a, c]``."""
        w = np.array(self.base.omega(self.a, self.c + 1), dtype=float)
        w[0], w[-1] = 1.0, 0.0
        return w

    def local_potential(self) -> np.ndarray:
        """``V(x) - V(a)`` for ``x`` in ``[a, c]`` (unreflected environment)."""
        w = self.base.omega(self.a + 1, self.c + 1)
        return np.concatenate([[0.0], np.cumsum(np.log(1.0 - w) - np.log(w))])

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.a, self.c + 1)


@dataclass
class InvariantMeasure:
    sites: np.ndarray
    mu_hat: np.ndarray  # scaled so that e^{-(V(x) - V(bottom))} terms enter unnormalized
    nu_hat: np.ndarray  # normalized on the parity class of the bottom, zero elsewhere
    bottom: int

    def nu(self, x: int) -> float:
        return float(self.nu_hat[x - self.sites[0]])


def reflected_invariant_measure(renv: ReflectedEnv) -> InvariantMeasure:
    """Closed-form invariant measure of the chain reflected at ``a`` and ``c``."""
    a, c, b = renv.a, renv.c, renv.bottom
    if c <= a + 1:
        raise DegenerateInterval(f"interval [{a}, {c}] too short for the closed form")
    v = renv.local_potential()
    w = np.exp(-(v - v[b - a]))
    mu = np.empty_like(w)
    mu[0] = w[0]
    mu[-1] = w[-2]
    mu[1:-1] = w[1:-1] + w[:-2]
    sites = renv.sites
    same = (sites - b) % 2 == 0
    nu = np.where(same, mu, 0.0)
    nu /= math.fsum(nu[same])
    return InvariantMeasure(sites, mu, nu, b)


def sample_nu(inv: InvariantMeasure, n: int, gen: np.random.Generator) -> np.ndarray:
    return gen.choice(inv.sites, size=n, p=inv.nu_hat)


# ---------------------------------------------------------------- coupling


@dataclass
class CouplingBatch:
    a: int
    b: int
    c: int
    horizon: int
    tau_meet: np.ndarray  # -1: never met within horizon
    tau_exit: np.ndarray  # -1: no exit after meeting within horizon
    checkpoint_times: np.ndarray
    s_at: np.ndarray  # (n_checkpoints, n_runs)
    s_hat_at: np.ndarray
    s_start_hat: np.ndarray
    s_paths: Optional[np.ndarray] = None
    s_hat_paths: Optional[np.ndarray] = None

    def coupled_through(self, lo: int, hi: int) -> np.ndarray:
        """Runs with ``tau_meet <= lo`` and no exit before ``hi``."""
        met = (self.tau_meet >= 0) & (self.tau_meet <= lo)
        stays = (self.tau_exit < 0) | (self.tau_exit >= hi)
        return met & stays


@dataclass
class CouplingRun:
    s_path: np.ndarray
    s_hat_path: np.ndarray
    tau_meet: Optional[int]
    tau_exit: Optional[int]


class CouplingViolation(AssertionError):
    pass


def couple_batch(env: Environment, a: int, b: int, c: int, horizon: int, n_runs: int, seed: int,
                 run_id: int = 0, checkpoints: Sequence[int] = (), coupled: bool = True,
                 record_paths: bool = False, s_hat_start=None) -> CouplingBatch:
    """Coupled pairs ``(S, S_hat)`` in the valley ``[a, c]`` with bottom ``b``.

    ``S`` starts at ``b`` in ``env``; ``S_hat`` starts from the reflected
    chain's ``nu_hat`` (or ``s_hat_start``) in the environment reflected at
    ``a`` and ``c``. The two move on separate streams until they meet, then
    ``S_hat`` reuses ``S``'s variates until ``S`` leaves ``[a, c]``, after
    which ``S_hat`` draws from a fresh post-exit stream. ``S`` never
    depends on ``S_hat``. With ``coupled=False`` the pair never glues.
    Parity, no-crossing and glue are checked on every tick.
    """
    renv = ReflectedEnv(env, a, c, b)
    g_s = rng.stream(seed, rng.S_CHAIN, run_id)
    g_h = rng.stream(seed, rng.S_HAT_CHAIN, run_id)
    g_p = rng.stream(seed, rng.POST_EXIT, run_id)
    if s_hat_start is None:
        inv = reflected_invariant_measure(renv)
        s_hat0 = sample_nu(inv, n_runs, rng.stream(seed, rng.S_HAT_INIT, run_id))
    else:
        s_hat0 = np.broadcast_to(np.asarray(s_hat_start, dtype=np.int64), (n_runs,)).copy()
    if np.any((s_hat0 - b) % 2):
        raise ParityMismatch("S_hat must start in the parity class of b")

    win = OmegaWindow(env, a - 1024, c + 1024)
    w_hat = renv.omega_hat()
    S = np.full(n_runs, b, dtype=np.int64)
    H = s_hat0.copy()
    phase = np.zeros(n_runs, dtype=np.int8)  # 0 apart, 1 glued, 2 after exit
    tau_meet = np.full(n_runs, -1, dtype=np.int64)
    tau_exit = np.full(n_runs, -1, dtype=np.int64)
    if coupled:
        glued = H == S
        phase[glued] = 1
        tau_meet[glued] = 0

    cps = sorted(set(int(k) for k in checkpoints if 0 <= k <= horizon))
    s_at = np.empty((len(cps), n_runs), dtype=np.int64)
    h_at = np.empty((len(cps), n_runs), dtype=np.int64)
    ci = 0
    if cps and cps[0] == 0:
        s_at[0], h_at[0] = S, H
        ci = 1
    s_paths = h_paths = None
    if record_paths:
        s_paths = np.empty((horizon + 1, n_runs), dtype=np.int64)
        h_paths = np.empty((horizon + 1, n_runs), dtype=np.int64)
        s_paths[0], h_paths[0] = S, H
    sign = np.sign(H - S)

    for k in range(1, horizon + 1):
        if k % 512 == 1:
            win.ensure(int(S.min()) - 512, int(S.max()) + 512)
        u_s = g_s.random(n_runs)
        u_h = g_h.random(n_runs)
        u_p = g_p.random(n_runs)
        S_new = S + np.where(u_s < win.at(S), 1, -1)
        u_used = np.where(phase == 0, u_h, np.where(phase == 1, u_s, u_p))
        H_new = H + np.where(u_used < w_hat[H - a], 1, -1)

        inside = (S_new >= a) & (S_new <= c)
        glued = phase == 1
        if np.any(glued & inside & (H_new != S_new)):
            raise CouplingViolation(f"glued pair separated inside the valley at step {k}")
        exiting = glued & ~inside
        phase[exiting] = 2
        tau_exit[exiting] = k
        if coupled:
            meet = (phase == 0) & (H_new == S_new)
            phase[meet] = 1
            tau_meet[meet] = k
        if np.any((H_new - S_new) % 2):
            raise CouplingViolation(f"parity broken at step {k}")
        new_sign = np.sign(H_new - S_new)
        before = tau_meet < 0
        if np.any(before & (sign * new_sign < 0)):
            raise CouplingViolation(f"S and S_hat crossed without meeting at step {k}")
        sign = new_sign
        S, H = S_new, H_new
        if ci < len(cps) and cps[ci] == k:
            s_at[ci], h_at[ci] = S, H
            ci += 1
        if record_paths:
            s_paths[k], h_paths[k] = S, H
        if np.any(H < a) or np.any(H > c):
            raise CouplingViolation("reflected chain left [a, c]")

    return CouplingBatch(a, b, c, horizon, tau_meet, tau_exit, np.array(cps, dtype=np.int64), s_at, h_at,
                         s_hat0, s_paths, h_paths)


def couple(env: Environment, valley, horizon: int, seed: int, run_id: int = 0, coupled: bool = True,
           s_hat_start=None) -> CouplingRun:
    """A single coupled run with full paths. ``valley`` is any object with ``a``, ``b``, ``c``."""
    bt = couple_batch(env, valley.a, valley.b, valley.c, horizon, 1, seed, run_id, coupled=coupled,
                      record_paths=True, s_hat_start=s_hat_start)
    tm = int(bt.tau_meet[0])
    te = int(bt.tau_exit[0])
    return CouplingRun(bt.s_paths[:, 0], bt.s_hat_paths[:, 0], tm if tm >= 0 else None, te if te >= 0 else None)


def s_marginal_path(env: Environment, b: int, horizon: int, seed: int, run_id: int = 0) -> np.ndarray:
    """The free chain from ``b`` on the coupling's S stream, simulated alone."""
    g = rng.stream(seed, rng.S_CHAIN, run_id)
    out = np.empty(horizon + 1, dtype=np.int64)
    out[0] = b
    win = OmegaWindow(env, b - 1024, b + 1024)
    x = b
    for k in range(1, horizon + 1):
        u = g.random(1)[0]
        win.ensure(x, x)
        x += 1 if u < win.omega[x - win.lo] else -1
        out[k] = x
    return out
