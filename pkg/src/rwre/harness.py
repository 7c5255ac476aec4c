"""Experiment configuration, seeded orchestration and result files.

Outputs are canonical JSON (sorted keys) and CSV. Both carry a hash of the
resolved configuration that leaves out the worker count and the output
directory, so reruns at any parallelism produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
import yaml

from . import oracles, rng, walker
from .env_model import EnvDistribution, Environment, check_assumptions, dist_from_config, lattice_span, solve_kappa
from .errors import ConfigError, InsufficientTail, NoKappa, WindowExhausted
from .valleys import ValleySchedule, census, deep_valley_indices, write_csv

EXIT_OK, EXIT_HARD, EXIT_STAT, EXIT_USAGE = 0, 1, 2, 3

DEFAULT_DIST = {"kind": "two_point", "p_low": 0.25, "p_high": 0.75, "q": 0.3}


@dataclass
class ValleyParams:
    epsilon: Optional[float] = None
    C0: float = 1.0
    C2: float = 1.0
    C4: Optional[float] = None
    i_max: int = 6
    n_max: int = 1


@dataclass
class CollideParams:
    d: int = 2
    starts: list = field(default_factory=lambda: [0, 0])
    horizon: int = 100_000
    n_seeds: int = 1
    checkpoint_stride: Optional[int] = None
    late_after: int = 100
    prefix_horizon: Optional[int] = None
    join_valleys: bool = True


@dataclass
class ExperimentConfig:
    distribution: dict = field(default_factory=lambda: dict(DEFAULT_DIST))
    master_seed: int = 0
    valleys: ValleyParams = field(default_factory=ValleyParams)
    collide: CollideParams = field(default_factory=CollideParams)
    window: int = 1 << 14
    max_window: int = 1 << 24
    verify_scale: float = 1.0
    tail_samples: int = 100_000
    jobs: int = 1
    out_dir: str = "out"

    # -- construction

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw or {})
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for k, v in raw.items():
            if k == "valleys":
                cfg.valleys = _sub(ValleyParams, v)
            elif k == "collide":
                cfg.collide = _sub(CollideParams, v)
            else:
                setattr(cfg, k, v)
        return cfg

    @classmethod
    def load(cls, path: Optional[str]) -> "ExperimentConfig":
        if path is None:
            return cls()
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)  # also reads JSON
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse config {path}: {e}") from e
        return cls.from_mapping(raw)

    # -- derived

    def dist(self) -> EnvDistribution:
        try:
            return dist_from_config(self.distribution)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad distribution {self.distribution}: {e}") from e

    def schedule(self) -> ValleySchedule:
        v = self.valleys
        dist = self.dist()
        try:
            return ValleySchedule.for_distribution(dist, v.epsilon, v.C0, v.C2, v.C4)
        except NoKappa as e:
            raise ConfigError(f"valley construction needs 0 < kappa < 1: {e}") from e

    def validate_collide(self):
        c = self.collide
        if c.d < 1:
            raise ConfigError("collide.d must be >= 1")
        if len(c.starts) != c.d:
            raise ConfigError(f"collide.starts has {len(c.starts)} entries but d = {c.d}")
        if len({int(s) % 2 for s in c.starts}) > 1:
            raise ConfigError(f"collide.starts {c.starts} mix parities; walkers with different parity never meet. "
                              "Shift one start by 1.")
        if c.horizon < 0:
            raise ConfigError("collide.horizon must be >= 0")

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("jobs")
        d.pop("out_dir")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _sub(kind, raw):
    raw = dict(raw or {})
    known = {f.name for f in fields(kind)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
    return kind(**raw)


# ---------------------------------------------------------------- output


def _plain(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_plain, allow_nan=True) + "\n"


def write_text(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- commands


def cmd_check_env(cfg: ExperimentConfig) -> tuple[int, dict]:
    dist = cfg.dist()
    rep = check_assumptions(dist)
    out = {"config_hash": cfg.hash(), "seed": cfg.master_seed, "distribution": cfg.distribution, **rep.as_dict(),
           "ok": rep.ok}
    write_text(cfg.out_dir, "check_env.json", dumps(out))
    return (EXIT_OK if rep.ok else EXIT_HARD), out


def valley_report(cfg: ExperimentConfig, env_seed: int):
    sched = cfg.schedule()
    env = Environment(cfg.dist(), env_seed)
    cen = census(env, sched, cfg.valleys.i_max, right=cfg.window, max_right=cfg.max_window)
    try:
        idx = deep_valley_indices(cen.records, sched, cfg.valleys.n_max)
        partial = False
    except WindowExhausted as e:
        idx, partial = e.partial, True
    for n, i in enumerate(idx.indices):
        assert i >= n, "deep valley index below its position"
    return cen, idx, partial


def cmd_valleys(cfg: ExperimentConfig) -> tuple[int, dict]:
    cen, idx, partial = valley_report(cfg, cfg.master_seed)
    buf = io.StringIO()
    h = cfg.hash()
    write_csv(cen.records, buf, {"config_hash": h, "seed": cfg.master_seed})
    write_text(cfg.out_dir, "valleys.csv", buf.getvalue())
    out = {"config_hash": h, "seed": cfg.master_seed, "indices": idx.indices, "i0": idx.i0,
           "exponent": idx.exponent, "candidates": idx.candidates, "partial": partial,
           "census_exhausted": cen.exhausted, "n_valleys": len(cen.records),
           "window": [cen.path.x_min, cen.path.x_max]}
    write_text(cfg.out_dir, "deep_valleys.json", dumps(out))
    return EXIT_OK, out


def _collide_one(args):
    cfg, k = args
    c = cfg.collide
    env_seed = rng.derive_seed(cfg.master_seed, k, 0)
    walk_seed = rng.derive_seed(cfg.master_seed, k, 1)
    env = Environment(cfg.dist(), env_seed)
    summary, log = walker.run(env, c.starts, c.horizon, walk_seed, 0, c.checkpoint_stride)
    times, sites = log.meeting_times, log.meeting_sites
    prefix = c.prefix_horizon if c.prefix_horizon is not None else c.horizon // 10
    valley_of = None
    if c.join_valleys and len(sites):
        try:
            sched = cfg.schedule()
            # valleys beyond twice the rightmost visited site cannot hold a meeting
            right = min(2 * max(int(summary.max_site.max()), 0) + 1024, cfg.max_window)
            cen = census(env, sched, cfg.valleys.i_max, right=right, max_right=right)
            lookup = {int(s): cen.valley_of(int(s)) for s in np.unique(sites)}
            valley_of = [lookup[int(s)] for s in sites]
        except ConfigError:
            valley_of = None
    return {
        "index": k,
        "env_seed": env_seed,
        "walk_seed": walk_seed,
        "d": c.d,
        "starts": list(c.starts),
        "horizon": c.horizon,
        "n_meetings": len(times),
        "n_meetings_late": int(np.sum(times >= c.late_after)),
        "n_meetings_prefix": int(np.sum(times <= prefix)),
        "prefix_horizon": prefix,
        "first_meeting": int(times[0]) if len(times) else None,
        "last_meeting": int(times[-1]) if len(times) else None,
        "meeting_times": times,
        "meeting_sites": sites,
        "meeting_valleys": valley_of,
        "final": summary.final,
        "max_site": summary.max_site,
        "min_site": summary.min_site,
        "checkpoint_times": summary.checkpoint_times,
        "checkpoints": summary.checkpoints,
    }


COLLIDE_COLUMNS = ["config_hash", "index", "env_seed", "n_meetings", "n_meetings_late", "n_meetings_prefix",
                   "first_meeting", "last_meeting"]


def cmd_collide(cfg: ExperimentConfig) -> tuple[int, dict]:
    cfg.validate_collide()
    h = cfg.hash()
    results = _pool_map(_collide_one, [(cfg, k) for k in range(cfg.collide.n_seeds)], cfg.jobs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLLIDE_COLUMNS)
    for r in results:
        r["config_hash"] = h
        write_text(cfg.out_dir, f"collide_{r['index']:04d}.json", dumps(r))
        w.writerow(["" if r[k] is None else r[k] for k in COLLIDE_COLUMNS])
    write_text(cfg.out_dir, "collide.csv", buf.getvalue())
    return EXIT_OK, {"config_hash": h, "runs": [{k: r[k] for k in COLLIDE_COLUMNS} for r in results]}


def cmd_verify(cfg: ExperimentConfig) -> tuple[int, dict]:
    checks = oracles.verify(cfg.dist(), cfg.master_seed, cfg.verify_scale)
    summary = oracles.summarize(checks)
    out = {"config_hash": cfg.hash(), "seed": cfg.master_seed, "checks": [asdict(c) for c in checks], **summary}
    write_text(cfg.out_dir, "verify.json", dumps(out))
    if summary["hard_failures"]:
        return EXIT_HARD, out
    if summary["statistical_budget_exceeded"]:
        return EXIT_STAT, out
    return EXIT_OK, out


def cmd_tail(cfg: ExperimentConfig) -> tuple[int, dict]:
    dist = cfg.dist()
    span = lattice_span(dist)
    n = int(cfg.tail_samples)
    out = {"config_hash": cfg.hash(), "seed": cfg.master_seed, "kappa": solve_kappa(dist), "lattice_span": span}
    code = EXIT_OK
    for kind, sampler in (("excursion-height", oracles.sample_excursion_heights), ("sup-V", oracles.sample_sup)):
        try:
            out[kind] = oracles.tail_fit(sampler(dist, n, cfg.master_seed), kind, span=span).as_dict()
        except InsufficientTail as e:
            out[kind] = {"error": str(e)}
            code = EXIT_STAT
    write_text(cfg.out_dir, "tail.json", dumps(out))
    return code, out


COMMANDS = {
    "check-env": cmd_check_env,
    "valleys": cmd_valleys,
    "collide": cmd_collide,
    "verify": cmd_verify,
    "tail": cmd_tail,
}
