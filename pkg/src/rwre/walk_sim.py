"""Quenched nearest-neighbour walk simulation.

The environment is realized lazily over a growing window of sites and never
resampled; hitting-time runs record per-site left-step counts, which tie the
walk to its branching representation through the exact bookkeeping identity

    steps to first hit n  =  n + 2 * (total left steps).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .env_model import EnvSpec, check_transient
from .errors import HorizonExceeded
from .rng import RngStream

__all__ = [
    "QuenchedEnv",
    "HitRecord",
    "ExcursionStat",
    "run_until_hit",
    "position_after",
    "longest_excursion",
    "batch_hits",
    "batch_positions",
]

DEFAULT_STEP_CAP = 10 ** 9
_BUF = 1 << 15
_UNREACHABLE = np.int64(2) ** 40


class _EnvTable:
    """Realized environment over [lo, hi], extended on demand.

    Sites are drawn in fixed per-side order (0, 1, 2, ... and -1, -2, ...),
    so the realized table is a function of the extent alone, independent of
    the query pattern: quenched semantics.
    """

    def __init__(self, spec: EnvSpec, gen_left, gen_right,
                 left0: int = 128, right0: int = 256):
        self.spec = spec
        self._gen_left = gen_left
        self._gen_right = gen_right
        left = spec.sample_omega(gen_left, left0)    # sites -1, -2, ...
        right = spec.sample_omega(gen_right, right0)  # sites 0, 1, ...
        self.lo = -left0
        self.hi = right0 - 1
        self._table = np.concatenate([left[::-1], right])

    @property
    def table(self) -> np.ndarray:
        return self._table

    def ensure(self, lo_need: int, hi_need: int) -> None:
        if hi_need > self.hi:
            grow = max(hi_need - self.hi, self.hi - self.lo + 1, 256)
            fresh = self.spec.sample_omega(self._gen_right, grow)
            self._table = np.concatenate([self._table, fresh])
            self.hi += grow
        if lo_need < self.lo:
            grow = max(self.lo - lo_need, self.hi - self.lo + 1, 256)
            fresh = self.spec.sample_omega(self._gen_left, grow)
            self._table = np.concatenate([fresh[::-1], self._table])
            self.lo -= grow

    def omega_at(self, site: int) -> float:
        self.ensure(site, site)
        return float(self._table[site - self.lo])


class QuenchedEnv:
    """One fixed random medium, shared by any number of walk runs."""

    def __init__(self, spec: EnvSpec, stream: RngStream):
        check_transient(spec)
        self.spec = spec
        self.stream = stream
        self._table = _EnvTable(
            spec,
            stream.child(1).generator(),
            stream.child(0).generator(),
        )

    @property
    def lo(self) -> int:
        return self._table.lo

    @property
    def hi(self) -> int:
        return self._table.hi

    def omega_at(self, site: int) -> float:
        return self._table.omega_at(site)


@dataclass
class HitRecord:
    """Outcome of one run to the first visit of site n."""

    n: int
    t_n: int
    left_counts: dict[int, int]   # site -> left steps from it, positive entries only
    min_site: int
    steps_left_total: int

    def to_json(self) -> dict:
        pairs = sorted(self.left_counts.items())
        return {"n": self.n, "T_n": self.t_n, "U": [[s, c] for s, c in pairs]}


@dataclass
class ExcursionStat:
    """Deepest visit below site j within a horizon after first hitting j."""

    j: int
    depth: int
    horizon: int


class _Runner:
    """Drives the jitted kernel: refills uniforms, extends the environment.

    The uniform buffer starts at ``buf0`` draws and doubles on each refill
    (capped), so short runs stay cheap and long runs amortize.
    """

    def __init__(self, table: _EnvTable, gen: np.random.Generator, buf0: int = 1024):
        self.table = table
        self.gen = gen
        self.buf_size = buf0
        self.state = np.zeros(3, dtype=np.int64)
        self.counts_lo = table.lo
        self.counts = np.zeros(table.hi - table.lo + 1, dtype=np.int64)
        self.buf = gen.random(buf0)
        self.cursor = 0

    def _align_counts(self) -> None:
        lo, hi = self.table.lo, self.table.hi
        width = hi - lo + 1
        if lo == self.counts_lo and width == self.counts.shape[0]:
            return
        fresh = np.zeros(width, dtype=np.int64)
        off = self.counts_lo - lo
        fresh[off: off + self.counts.shape[0]] = self.counts
        self.counts = fresh
        self.counts_lo = lo

    def run(self, target: int, max_steps: int) -> int:
        while True:
            self._align_counts()
            status, self.cursor = _kernels.step_walk(
                self.state, self.table.table, self.counts, self.table.lo,
                self.buf, self.cursor, target, max_steps,
            )
            if status == _kernels.NEED_UNIFORMS:
                self.buf_size = min(2 * self.buf_size, _BUF)
                self.buf = self.gen.random(self.buf_size)
                self.cursor = 0
            elif status == _kernels.NEED_LEFT:
                self.table.ensure(int(self.state[0]), self.table.hi)
            elif status == _kernels.NEED_RIGHT:
                self.table.ensure(self.table.lo, int(self.state[0]))
            else:
                return status


def run_until_hit(env: QuenchedEnv, n: int, stream: RngStream,
                  max_steps: int = DEFAULT_STEP_CAP) -> HitRecord:
    """Walk from 0 until the first visit to n, counting left steps per site.

    Only counters are kept, never the path.  Raises HorizonExceeded past
    ``max_steps`` (near-boundary media make hitting times heavy-tailed).
    """
    if n < 1:
        raise ValueError("target must be positive")
    env._table.ensure(env.lo, n)
    runner = _Runner(env._table, stream.generator())
    status = runner.run(target=n, max_steps=max_steps)
    if status == _kernels.CAPPED:
        raise HorizonExceeded(f"no visit to {n} within {max_steps} steps")
    sites = np.flatnonzero(runner.counts)
    left_counts = {int(s + runner.counts_lo): int(runner.counts[s]) for s in sites}
    total = int(runner.counts.sum())
    return HitRecord(n=n, t_n=int(runner.state[1]), left_counts=left_counts,
                     min_site=int(runner.state[2]), steps_left_total=total)


def position_after(env: QuenchedEnv, steps: int, stream: RngStream) -> int:
    """Walk position after a fixed number of steps."""
    if steps == 0:
        return 0
    runner = _Runner(env._table, stream.generator())
    runner.run(target=_UNREACHABLE, max_steps=steps)
    return int(runner.state[0])


def longest_excursion(env: QuenchedEnv, j: int, horizon: int, stream: RngStream,
                      max_steps: int = DEFAULT_STEP_CAP) -> ExcursionStat:
    """Deepest dip below j during ``horizon`` steps after first hitting j."""
    if j < 1:
        raise ValueError("site must be positive")
    env._table.ensure(env.lo, j)
    runner = _Runner(env._table, stream.generator())
    status = runner.run(target=j, max_steps=max_steps)
    if status == _kernels.CAPPED:
        raise HorizonExceeded(f"no visit to {j} within {max_steps} steps")
    runner.state[2] = j  # depth is measured only after the hit
    runner.run(target=_UNREACHABLE, max_steps=int(runner.state[1]) + horizon)
    depth = max(0, j - int(runner.state[2]))
    return ExcursionStat(j=j, depth=depth, horizon=horizon)


# --------------------------------------------------------------------------
# annealed batches: fresh environment per replica, one generator per block
# --------------------------------------------------------------------------

def _fresh_table(spec: EnvSpec, gen, right0: int) -> _EnvTable:
    return _EnvTable(spec, gen, gen, left0=128, right0=right0)


def batch_hits(spec: EnvSpec, n: int, replicas: int, stream: RngStream,
               max_steps: int = DEFAULT_STEP_CAP):
    """Hitting summaries over iid environments.

    Returns (t_n, left_total, min_site) int64 arrays of length ``replicas``.
    Sequential within the stream: parallel callers split replicas into
    blocks with child streams.
    """
    check_transient(spec)
    gen = stream.generator()
    t_out = np.empty(replicas, dtype=np.int64)
    u_out = np.empty(replicas, dtype=np.int64)
    m_out = np.empty(replicas, dtype=np.int64)
    for r in range(replicas):
        table = _fresh_table(spec, gen, right0=n + 1)
        runner = _Runner(table, gen)
        status = runner.run(target=n, max_steps=max_steps)
        if status == _kernels.CAPPED:
            raise HorizonExceeded(f"replica {r}: no visit to {n} within {max_steps} steps")
        t_out[r] = runner.state[1]
        u_out[r] = runner.counts.sum()
        m_out[r] = runner.state[2]
    return t_out, u_out, m_out


def batch_positions(spec: EnvSpec, steps: int, replicas: int,
                    stream: RngStream) -> np.ndarray:
    """Walk positions after ``steps`` steps over iid environments."""
    check_transient(spec)
    gen = stream.generator()
    out = np.empty(replicas, dtype=np.int64)
    right0 = min(steps + 1, 1024)
    buf0 = min(steps, _BUF)
    for r in range(replicas):
        table = _fresh_table(spec, gen, right0=right0)
        runner = _Runner(table, gen, buf0=buf0)
        runner.run(target=_UNREACHABLE, max_steps=steps)
        out[r] = runner.state[0]
    return out
