"""Regenerative estimators for the tail constants.

The total-progeny tail constant factorizes into per-cycle quantities: the
mean regeneration time, the cycle-sum tail constant (reachable both through
an empirical tail plateau and through the population at first passage over
a high level), and finally the walk-level constant, which for tail index
above one picks up a factor (2 v)^alpha from the speed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .branching import sample_cycles
from .env_model import CumulantProfile, EnvSpec
from .errors import GridUnstable, NotStabilized, RegimeMismatch, TooFewSamples
from .perpetuity import Estimate, kesten_constant
from .rng import RngStream

__all__ = [
    "TailEstimate",
    "estimate_cycle_mean",
    "estimate_c3_tail",
    "estimate_c3_conditional",
    "compose_c1",
    "compose_constants",
    "hill_diagnostic",
    "write_estimates_csv",
]


@dataclass
class TailEstimate:
    """Named point estimate with standard error and provenance."""

    quantity: str
    estimate: float
    se: float
    replicas: int
    method: str
    grid: tuple = ()
    flags: tuple = ()
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.se < 0:
            raise ValueError("standard error cannot be negative")

    def csv_row(self) -> list:
        lo = min(self.grid) if self.grid else ""
        hi = max(self.grid) if self.grid else ""
        return [self.quantity, self.method, f"{self.estimate:.12g}",
                f"{self.se:.12g}", self.replicas, lo, hi, ";".join(self.flags)]


def write_estimates_csv(path, estimates: Sequence[TailEstimate]) -> None:
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "method", "estimate", "se", "replicas",
                    "grid_lo", "grid_hi", "flags"])
        for est in estimates:
            w.writerow(est.csv_row())


def _flags_for(spec: EnvSpec) -> tuple:
    return ("arithmetic_support",) if spec.is_arithmetic() else ()


def estimate_cycle_mean(spec: EnvSpec, replicas: int, stream: RngStream) -> TailEstimate:
    """Plain Monte Carlo mean of the regeneration time (light tails)."""
    cycles = sample_cycles(spec, replicas, stream)
    lengths = cycles.lengths.astype(float)
    mean = float(lengths.mean())
    se = float(lengths.std(ddof=1) / math.sqrt(replicas))
    return TailEstimate(quantity="cycle_mean", estimate=mean, se=se,
                        replicas=replicas, method="plain-mc",
                        flags=_flags_for(spec))


def estimate_c3_tail(spec: EnvSpec, alpha: float, x_grid: Sequence[float],
                     replicas: int, stream: RngStream,
                     cycles=None) -> TailEstimate:
    """Cycle-sum tail constant from the empirical plateau of x^alpha P(S > x).

    The plateau must be flat to within a factor 2 across the grid, else the
    grid is declared pre-asymptotic.  The reported standard error assumes
    perfect correlation across grid points (they share one sample), which
    is the conservative direction.
    """
    x_grid = tuple(float(x) for x in x_grid)
    if not x_grid:
        raise ValueError("empty grid")
    if cycles is None:
        cycles = sample_cycles(spec, replicas, stream)
    sums = cycles.sums
    points = []
    ses = []
    for x in x_grid:
        p = float((sums > x).mean())
        points.append(x ** alpha * p)
        ses.append(x ** alpha * math.sqrt(p * (1.0 - p) / replicas))
    lo, hi = min(points), max(points)
    if lo <= 0 or hi / lo > 2.0:
        raise GridUnstable(
            f"plateau ratio {math.inf if lo <= 0 else hi / lo:.3g} exceeds 2 "
            f"on grid {x_grid}"
        )
    return TailEstimate(
        quantity="cycle_sum_tail", estimate=float(np.mean(points)),
        se=float(np.mean(ses)), replicas=replicas, method="empirical-tail-plateau",
        grid=x_grid, flags=_flags_for(spec),
        detail={"points": points, "plateau_ratio": hi / lo},
    )


def estimate_c3_conditional(spec: EnvSpec, alpha: float, c2: Estimate,
                            t_grid: Sequence[float], replicas: int,
                            stream: RngStream, cycles=None,
                            stabilize_rtol: float = 0.10) -> TailEstimate:
    """Cycle-sum tail constant through the first-passage route.

    Multiplies the perpetuity tail constant by the limit of
    E[Z_crossing^alpha ; crossing before regeneration], taken at the
    largest grid level whose step from the previous level is inside the
    stabilization band (10% of the value, widened to twice the pathwise
    step error when Monte Carlo noise dominates).  The restricted moment
    is the convergent form: the crossing population exceeds the level, so
    the conditional moment alone grows like level^alpha and cannot
    stabilize; the conditional curve is still reported for inspection.
    """
    t_grid = tuple(sorted(float(t) for t in t_grid))
    if len(t_grid) < 2:
        raise ValueError("need at least two levels")
    if cycles is None:
        cycles = sample_cycles(spec, replicas, stream, t_grid=t_grid)
    curve = []
    zas = []
    for j, t in enumerate(cycles.t_grid):
        za = np.where(cycles.crossed[j], cycles.z_at_crossing[j].astype(float) ** alpha, 0.0)
        zas.append(za)
        m = float(za.mean())
        se = float(za.std(ddof=1) / math.sqrt(replicas))
        hits = int(cycles.crossed[j].sum())
        cond = m * replicas / hits if hits else math.nan
        curve.append({"t": float(t), "restricted": m, "se": se,
                      "hits": hits, "conditional": cond})
    # largest level whose step from the previous one is within the band;
    # levels share cycles, so the step error comes from pathwise differences
    chosen = None
    for j in range(len(curve) - 1, 0, -1):
        prev, this = curve[j - 1], curve[j]
        if prev["restricted"] <= 0:
            continue
        step = this["restricted"] - prev["restricted"]
        se_step = float((zas[j] - zas[j - 1]).std(ddof=1) / math.sqrt(replicas))
        if abs(step) <= max(stabilize_rtol * prev["restricted"], 2.0 * se_step):
            chosen = curve[j]
            break
    if chosen is None:
        raise NotStabilized(
            f"crossing moment still moving more than {stabilize_rtol:.0%} "
            f"(beyond noise) across levels {t_grid}"
        )
    m, se_m = chosen["restricted"], chosen["se"]
    value = c2.value * m
    se = math.sqrt((c2.value * se_m) ** 2 + (m * c2.se) ** 2)
    return TailEstimate(
        quantity="cycle_sum_tail", estimate=value, se=se, replicas=replicas,
        method="conditional-moment", grid=t_grid, flags=_flags_for(spec),
        detail={"curve": curve, "stabilized_at": chosen["t"], "c2": c2.value},
    )


def compose_c1(c3: TailEstimate, cycle_mean: TailEstimate) -> TailEstimate:
    """Per-immigrant constant: tail constant over mean cycle length."""
    value = c3.estimate / cycle_mean.estimate
    rel = 0.0
    if c3.estimate > 0:
        rel = math.sqrt((c3.se / c3.estimate) ** 2
                        + (cycle_mean.se / cycle_mean.estimate) ** 2)
    return TailEstimate(
        quantity="progeny_tail_per_immigrant", estimate=value, se=value * rel,
        replicas=min(c3.replicas, cycle_mean.replicas), method="composed",
        flags=tuple(sorted(set(c3.flags) | set(cycle_mean.flags))),
        detail={"c3": c3.estimate, "cycle_mean": cycle_mean.estimate},
    )


def compose_constants(prof: CumulantProfile, c1: TailEstimate) -> dict:
    """Walk-level constant from the per-immigrant one.

    Above tail index one the walk constant is (2v)^alpha times the progeny
    constant; at or below one they coincide.
    """
    if prof.alpha > 1.0:
        if prof.speed_v == 0.0:
            raise RegimeMismatch("alpha > 1 demands a positive speed")
        factor = (2.0 * prof.speed_v) ** prof.alpha
    else:
        factor = 1.0
    c_alpha = TailEstimate(
        quantity="walk_deviation_constant", estimate=factor * c1.estimate,
        se=factor * c1.se, replicas=c1.replicas, method="composed",
        flags=c1.flags, detail={"factor": factor, "alpha": prof.alpha},
    )
    return {"c1": c1, "c_alpha": c_alpha}


def hill_diagnostic(samples, k_fraction: float = 0.05) -> TailEstimate:
    """Hill tail-index estimate on the top order statistics.

    Independent check that simulated heavy tails carry the analytic index;
    the standard error is the usual first-order asymptotic one.
    """
    x = np.asarray(samples, dtype=float)
    x = x[x > 0]
    if x.size < 1000:
        raise TooFewSamples(f"need at least 1000 positive samples, got {x.size}")
    if not (0.0 < k_fraction <= 0.1):
        raise ValueError("k_fraction must be in (0, 0.1]")
    k = int(math.floor(k_fraction * x.size))
    if k < 10:
        raise TooFewSamples(f"top fraction keeps only {k} points")
    top = np.sort(x)[-(k + 1):]
    logs = np.log(top[1:]) - np.log(top[0])
    gamma = float(logs.mean())
    if gamma <= 0:
        raise TooFewSamples("degenerate upper tail (no spread in the top block)")
    alpha_hat = 1.0 / gamma
    return TailEstimate(quantity="tail_index", estimate=alpha_hat,
                        se=alpha_hat / math.sqrt(k), replicas=int(x.size),
                        method="hill", detail={"k": k})
