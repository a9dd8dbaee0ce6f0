"""Branching process with geometric offspring and unit immigration.

Generation sizes follow Z_0 = 0, Z_{k+1} = sum of Z_k + 1 independent
geometric(w_k) draws, one per current particle plus one for the immigrant
arriving at time k.  The sum is drawn as a single negative binomial with
Z_k + 1 successes, which is exact in distribution and O(1) per generation.
Per-immigrant lines, quenched means, regeneration cycles, and the
early/window/late split of the total progeny all live here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env_model import EnvSpec, check_transient, deviation_window, profile, DeviationWindow
from .errors import HorizonExceeded, PopulationOverflow
from .rng import RngStream

__all__ = [
    "BranchTrajectory",
    "RegenSample",
    "BlockDecomposition",
    "CycleSample",
    "step_generation",
    "simulate_Z",
    "total_progeny",
    "sample_total_progeny",
    "regenerations",
    "sample_cycles",
    "first_passage_tau",
    "decompose_blocks",
    "telescope_residual",
]

_MAX_POP = np.int64(2) ** 62
_DEFAULT_GEN_CAP = 10 ** 8


def _nb(gen: np.random.Generator, counts: np.ndarray, omega) -> np.ndarray:
    """Vectorized negative binomial; zero successes map to zero failures."""
    counts = np.asarray(counts, dtype=np.int64)
    out = np.zeros(counts.shape, dtype=np.int64)
    mask = counts > 0
    if mask.any():
        om = omega[mask] if np.ndim(omega) else omega
        try:
            out[mask] = gen.negative_binomial(counts[mask], om)
        except ValueError as exc:
            raise PopulationOverflow(f"offspring draw out of sampler range: {exc}")
    return out


def _nb1(gen: np.random.Generator, count: int, omega: float) -> int:
    if count <= 0:
        return 0
    try:
        return int(gen.negative_binomial(count, omega))
    except ValueError as exc:
        raise PopulationOverflow(f"offspring draw out of sampler range: {exc}")


def _check_pop(z) -> None:
    if np.any(np.asarray(z) > _MAX_POP):
        raise PopulationOverflow("generation size left the 64-bit safe range")


def step_generation(z: int, omega: float, stream: RngStream) -> int:
    """Next generation from z particles plus one immigrant.

    One negative-binomial draw with z + 1 successes and success probability
    omega, counting failures: exactly the law of the sum of z + 1 iid
    geometric(omega) offspring counts.
    """
    if not (0.0 < omega < 1.0):
        raise ValueError(f"omega must be in (0, 1), got {omega}")
    gen = stream.generator()
    return int(gen.negative_binomial(int(z) + 1, omega))


@dataclass
class BranchTrajectory:
    """One simulated path, optionally with per-immigrant lines.

    ``multipliers[k] = (1 - w_{k-1}) / w_{k-1}`` is the mean number of
    offspring per particle feeding generation k, so the quenched mean
    satisfies ``quenched_mean[k] = multipliers[k] * (quenched_mean[k-1] + 1)``
    exactly, starting from 0.
    """

    horizon: int
    z: np.ndarray                       # Z_0..Z_n
    omega: np.ndarray                   # w_0..w_{n-1}
    multipliers: np.ndarray             # index 1..n; [0] is NaN
    lines: Optional[np.ndarray] = None  # lines[i, k] = generation-k size of line i
    quenched_mean: Optional[np.ndarray] = None  # Y_0..Y_n

    def __post_init__(self):
        if self.z[0] != 0:
            raise ValueError("a trajectory starts from an empty population")


def simulate_Z(spec: EnvSpec, n: int, stream: RngStream,
               track_lines: bool = False,
               track_quenched_means: bool = False) -> BranchTrajectory:
    """Simulate n generations with immigration in a fresh environment.

    With ``track_lines`` each immigrant's line evolves by its own negative
    binomial draw; the per-generation total is their sum, which preserves
    the law exactly because independent geometric sums compose.
    """
    if n < 1:
        raise ValueError("horizon must be at least 1")
    gen = stream.generator()
    omega = spec.sample_omega(gen, n)
    mult = np.empty(n + 1)
    mult[0] = np.nan
    mult[1:] = (1.0 - omega) / omega

    z = np.zeros(n + 1, dtype=np.int64)
    lines = None
    if track_lines:
        lines = np.zeros((n + 1, n + 1), dtype=np.int64)
        for k in range(1, n + 1):
            w = omega[k - 1]
            lines[1:k, k] = _nb(gen, lines[1:k, k - 1], w)
            lines[k, k] = _nb1(gen, 1, w)
            z[k] = lines[1:k + 1, k].sum()
            _check_pop(z[k])
    else:
        for k in range(1, n + 1):
            z[k] = _nb1(gen, int(z[k - 1]) + 1, omega[k - 1])
            _check_pop(z[k])

    qmean = None
    if track_quenched_means:
        qmean = np.zeros(n + 1)
        for k in range(1, n + 1):
            qmean[k] = mult[k] * (qmean[k - 1] + 1.0)

    return BranchTrajectory(horizon=n, z=z, omega=omega, multipliers=mult,
                            lines=lines, quenched_mean=qmean)


def first_passage_tau(traj: BranchTrajectory, t: float) -> Optional[int]:
    """First k with Z_k > t, or None if extinction comes first.

    Only the stretch before the first regeneration is scanned, matching the
    cycle-wise use of the crossing time.
    """
    for k in range(traj.horizon + 1):
        if traj.z[k] > t:
            return k
        if k > 0 and traj.z[k] == 0:
            return None
    return None


# --------------------------------------------------------------------------
# total progeny of the first n immigrants
# --------------------------------------------------------------------------

def sample_total_progeny(spec: EnvSpec, n: int, replicas: int, stream: RngStream,
                         max_generations: int = _DEFAULT_GEN_CAP) -> np.ndarray:
    """Vectorized total progeny over independent environments.

    Runs n immigration generations, then lets the population die out with
    immigration switched off; the running sum of generation sizes is the
    total progeny of the first n immigrants.
    """
    check_transient(spec)
    gen = stream.generator()
    z = np.zeros(replicas, dtype=np.int64)
    w = np.zeros(replicas, dtype=np.int64)
    for _ in range(n):
        omega = spec.sample_omega(gen, replicas)
        z = _nb(gen, z + 1, omega)
        _check_pop(z)
        w += z
    gens = n
    active = z > 0
    while active.any():
        gens += 1
        if gens > max_generations:
            raise HorizonExceeded(f"no extinction within {max_generations} generations")
        omega = spec.sample_omega(gen, int(active.sum()))
        nxt = _nb(gen, z[active], omega)
        _check_pop(nxt)
        z[active] = nxt
        w[active] += nxt
        active = z > 0
    return w


def total_progeny(spec: EnvSpec, n: int, stream: RngStream,
                  max_generations: int = _DEFAULT_GEN_CAP) -> int:
    """Total progeny of the first n immigrants (single replica)."""
    if n == 0:
        return 0
    return int(sample_total_progeny(spec, n, 1, stream, max_generations)[0])


# --------------------------------------------------------------------------
# regeneration structure
# --------------------------------------------------------------------------

@dataclass
class RegenSample:
    """Regeneration times of the immigration chain and their cycle sums."""

    nu_list: np.ndarray      # strictly increasing hitting times of 0
    cycle_sums: np.ndarray   # sum of generation sizes inside each cycle

    def count_before(self, n: int) -> int:
        return int(np.searchsorted(self.nu_list, n, side="left"))

    def to_json(self) -> dict:
        return {"nu": self.nu_list.tolist(), "cycle_sums": self.cycle_sums.tolist()}


@dataclass
class CycleSample:
    """Per-cycle summaries from independent regeneration cycles.

    ``crossed[j, i]`` says whether cycle i exceeded level ``t_grid[j]``
    before regenerating, and ``z_at_crossing[j, i]`` holds the population
    at that first crossing (0 when it never happened).
    """

    lengths: np.ndarray
    sums: np.ndarray
    t_grid: np.ndarray
    crossed: np.ndarray
    z_at_crossing: np.ndarray


def sample_cycles(spec: EnvSpec, n_cycles: int, stream: RngStream,
                  t_grid=(), max_generations: int = _DEFAULT_GEN_CAP) -> CycleSample:
    """Simulate independent regeneration cycles, vectorized across cycles.

    Cycles are iid, so simulating them in parallel (one chain per cycle,
    stopped at its first return to 0) has exactly the law of consecutive
    cycles of a single chain.
    """
    check_transient(spec)
    gen = stream.generator()
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    R = n_cycles
    z = np.zeros(R, dtype=np.int64)
    lengths = np.zeros(R, dtype=np.int64)
    sums = np.zeros(R, dtype=np.int64)
    crossed = np.zeros((len(t_grid), R), dtype=bool)
    z_cross = np.zeros((len(t_grid), R), dtype=np.int64)
    alive = np.ones(R, dtype=bool)
    gens = 0
    while alive.any():
        gens += 1
        if gens > max_generations:
            raise HorizonExceeded(f"open cycles after {max_generations} generations")
        idx = np.flatnonzero(alive)
        omega = spec.sample_omega(gen, idx.size)
        nxt = _nb(gen, z[idx] + 1, omega)
        _check_pop(nxt)
        z[idx] = nxt
        lengths[idx] += 1
        sums[idx] += nxt
        for j, t in enumerate(t_grid):
            hit = idx[(nxt > t) & ~crossed[j, idx]]
            crossed[j, hit] = True
            z_cross[j, hit] = z[hit]
        alive[idx[nxt == 0]] = False
    return CycleSample(lengths=lengths, sums=sums, t_grid=t_grid,
                       crossed=crossed, z_at_crossing=z_cross)


def regenerations(spec: EnvSpec, n_cycles: int, stream: RngStream,
                  max_generations: int = _DEFAULT_GEN_CAP) -> RegenSample:
    """Regeneration times and cycle sums for a chain with n_cycles returns."""
    cycles = sample_cycles(spec, n_cycles, stream, max_generations=max_generations)
    return RegenSample(nu_list=np.cumsum(cycles.lengths),
                       cycle_sums=cycles.sums.copy())


# --------------------------------------------------------------------------
# early / window / late decomposition of the total progeny
# --------------------------------------------------------------------------

@dataclass
class BlockDecomposition:
    """Exact integer split of the total progeny around the deviation window.

    For immigrant j, generations j..j+n1-1 count as early, j+n1..j+n2 as the
    window core, and everything later as late.  The core is further grouped
    into blocks of n1 consecutive immigrants; blocks two apart are
    independent.
    """

    x: float
    window: DeviationWindow
    early: int
    core: int
    late: int
    blocks: np.ndarray    # length p + 1, p = n // n1
    total: int

    def to_json(self) -> dict:
        return {
            "x": self.x,
            "window": [self.window.n0, self.window.m, self.window.n1, self.window.n2],
            "early": self.early, "core": self.core, "late": self.late,
            "blocks": self.blocks.tolist(), "total": self.total,
        }


def decompose_blocks(spec: EnvSpec, n: int, x: float, delta: float,
                     stream: RngStream,
                     max_generations: int = _DEFAULT_GEN_CAP) -> BlockDecomposition:
    """Simulate all per-immigrant lines and split their progeny by window.

    All lines share one environment (drawn on demand), so the joint law is
    the annealed one; per-line negative binomial draws keep each line exact.
    """
    prof = profile(spec)
    win = deviation_window(prof, x, delta)
    gen = stream.generator()

    sizes = np.zeros(n + 1, dtype=np.int64)   # current generation, per line
    early = np.zeros(n + 1, dtype=np.int64)
    core = np.zeros(n + 1, dtype=np.int64)
    late = np.zeros(n + 1, dtype=np.int64)

    k = 0
    while True:
        k += 1
        if k > n and not (sizes > 0).any():
            break
        if k > max_generations:
            raise HorizonExceeded(f"lines alive after {max_generations} generations")
        w = float(spec.sample_omega(gen, 1)[0])
        sizes[:] = _nb(gen, sizes, w)
        if k <= n:
            sizes[k] = _nb1(gen, 1, w)
        _check_pop(sizes)
        live = np.flatnonzero(sizes > 0)
        if live.size:
            off = k - live
            early[live[off < win.n1]] += sizes[live[off < win.n1]]
            mid = live[(off >= win.n1) & (off <= win.n2)]
            core[mid] += sizes[mid]
            late[live[off > win.n2]] += sizes[live[off > win.n2]]

    n1 = win.n1
    p = n // n1
    blocks = np.zeros(p + 1, dtype=np.int64)
    for bk in range(1, p + 1):
        blocks[bk - 1] = core[(bk - 1) * n1 + 1: bk * n1 + 1].sum()
    blocks[p] = core[p * n1 + 1: n + 1].sum()

    e, c, l = int(early.sum()), int(core.sum()), int(late.sum())
    return BlockDecomposition(x=x, window=win, early=e, core=c, late=l,
                              blocks=blocks, total=e + c + l)


def decompose_blocks_batch(spec: EnvSpec, n: int, x: float, delta: float,
                           replicas: int, stream: RngStream,
                           max_generations: int = _DEFAULT_GEN_CAP) -> dict:
    """Window decomposition over many independent environments at once.

    Same law as repeated :func:`decompose_blocks`; every line of every
    replica advances by its own negative binomial draw per generation, and
    the early/core/late buckets are contiguous line ranges.  The running
    ``grand`` total is accumulated independently of the buckets so the
    partition check stays a real cross-check.
    """
    prof = profile(spec)
    win = deviation_window(prof, x, delta)
    gen = stream.generator()
    R = replicas
    sizes = np.zeros((R, n + 1), dtype=np.int64)
    early = np.zeros(R, dtype=np.int64)
    late = np.zeros(R, dtype=np.int64)
    core_lines = np.zeros((R, n + 1), dtype=np.int64)
    grand = np.zeros(R, dtype=np.int64)
    rows = np.arange(R)

    k = 0
    while True:
        k += 1
        busy = rows if k <= n else rows[sizes[rows].any(axis=1)]
        if k > n and busy.size == 0:
            break
        if k > max_generations:
            raise HorizonExceeded(f"lines alive after {max_generations} generations")
        omega = spec.sample_omega(gen, busy.size)
        sub = sizes[busy]
        om = np.broadcast_to(omega[:, None], sub.shape)
        mask = sub > 0
        if mask.any():
            try:
                sub[mask] = gen.negative_binomial(sub[mask], om[mask])
            except ValueError as exc:
                raise PopulationOverflow(f"offspring draw out of sampler range: {exc}")
        if k <= n:
            sub[:, k] = gen.negative_binomial(1, omega)
        _check_pop(sub)
        sizes[busy] = sub
        grand[busy] += sub.sum(axis=1)
        # offsets k - i: early below n1, core inside [n1, n2], late beyond
        lo_core, hi_core = max(1, k - win.n2), k - win.n1
        if hi_core >= lo_core:
            core_lines[busy, lo_core:hi_core + 1] += sub[:, lo_core:hi_core + 1]
        lo_early = max(1, k - win.n1 + 1)
        if k >= lo_early:
            early[busy] += sub[:, lo_early:min(k, n) + 1].sum(axis=1)
        hi_late = k - win.n2 - 1
        if hi_late >= 1:
            late[busy] += sub[:, 1:hi_late + 1].sum(axis=1)
        rows = busy if k > n else rows

    n1 = win.n1
    p = n // n1
    blocks = np.zeros((R, p + 1), dtype=np.int64)
    for bk in range(1, p + 1):
        blocks[:, bk - 1] = core_lines[:, (bk - 1) * n1 + 1: bk * n1 + 1].sum(axis=1)
    blocks[:, p] = core_lines[:, p * n1 + 1: n + 1].sum(axis=1)
    core = core_lines.sum(axis=1)
    return {"window": win, "early": early, "core": core, "late": late,
            "blocks": blocks, "total": grand}


def line_telescope_residuals_batch(spec: EnvSpec, n: int, ks, replicas: int,
                                   stream: RngStream) -> np.ndarray:
    """Max relative telescoping residual of line 1 over the given anchors.

    Vectorizes :func:`telescope_residual` across replicas: one environment
    and one first-immigrant line per replica, residuals normalized by one
    plus the line's window progeny.
    """
    gen = stream.generator()
    R = replicas
    omega = spec.sample_omega(gen, (R, n))
    m = np.empty((R, n + 1))
    m[:, 0] = np.nan
    m[:, 1:] = (1.0 - omega) / omega
    z1 = np.zeros((R, n + 1), dtype=np.int64)
    z1[:, 1] = gen.negative_binomial(1, omega[:, 0])
    for k in range(2, n + 1):
        col = z1[:, k - 1]
        mask = col > 0
        if mask.any():
            try:
                z1[mask, k] = gen.negative_binomial(col[mask], omega[mask, k - 1])
            except ValueError as exc:
                raise PopulationOverflow(f"offspring draw out of sampler range: {exc}")
    zf = z1.astype(float)
    out = np.zeros(R)
    for k in ks:
        if not (0 < k < n):
            raise ValueError(f"anchor {k} outside (0, {n})")
        H = np.empty((R, n + 1))
        H[:, n] = 1.0
        for i in range(n - 1, k - 1, -1):
            H[:, i] = 1.0 + m[:, i + 1] * H[:, i + 1]
        lhs = zf[:, k:n + 1].sum(axis=1) - zf[:, k] * H[:, k]
        incr = zf[:, k + 1:n + 1] - m[:, k + 1:n + 1] * zf[:, k:n]
        rhs = (incr * H[:, k + 1:n + 1]).sum(axis=1)
        scale = 1.0 + zf[:, k:n + 1].sum(axis=1)
        out = np.maximum(out, np.abs(lhs - rhs) / scale)
    return out


# --------------------------------------------------------------------------
# exact telescoping identity for a single line
# --------------------------------------------------------------------------

def telescope_residual(traj: BranchTrajectory, k: int, n: int) -> float:
    """Residual of the exact window-progeny decomposition of line 1.

    The progeny of the first immigrant over generations k..n splits into
    the quenched expectation given generation k plus martingale increments
    weighted by quenched tail means:

        sum_{j=k}^{n} Z_j  =  Z_k * H_k
                            + sum_{i=k+1}^{n} (Z_i - m_i Z_{i-1}) * H_i,

    where m_i is the multiplier feeding generation i and
    H_i = 1 + m_{i+1} + m_{i+1} m_{i+2} + ... + m_{i+1}...m_n.  The
    identity is pathwise-exact; the returned absolute residual is floating
    point noise only.
    """
    if traj.lines is None:
        raise ValueError("trajectory must be simulated with track_lines=True")
    if not (0 < k < n <= traj.horizon):
        raise ValueError(f"need 0 < k < n <= horizon, got k={k}, n={n}")
    z1 = traj.lines[1].astype(float)
    m = traj.multipliers
    H = np.empty(n + 1)
    H[n] = 1.0
    for i in range(n - 1, k - 1, -1):
        H[i] = 1.0 + m[i + 1] * H[i + 1]
    lhs = z1[k:n + 1].sum() - z1[k] * H[k]
    incr = z1[k + 1:n + 1] - m[k + 1:n + 1] * z1[k:n]
    rhs = float(np.dot(incr, H[k + 1:n + 1]))
    return abs(lhs - rhs)
