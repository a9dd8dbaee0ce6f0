"""Affine recursions, perpetuity tails, and tilted product deviations.

The forward chain Y_k = A_k (Y_{k-1} + 1) and the backward partial sums
of running products have the same one-dimensional laws; the backward sums
increase to a heavy-tailed limit whose tail constant has the classical
Kesten-Goldie form.  Exponential tilting at the tail index turns rare
product deviations into typical events with exactly computable weights,
which is what every small-probability estimate here runs on.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env_model import (
    EnvSpec,
    DeviationWindow,
    check_transient,
    deviation_window,
    legendre,
    profile,
    solve_alpha,
)
from .errors import NoPositiveRoot, NotTransient, PopulationOverflow, TiltUnavailable
from .rng import RngStream

__all__ = [
    "PerpetuityPath",
    "TiltedStream",
    "Estimate",
    "TailReportRow",
    "WindowTailReport",
    "run_perpetuity",
    "truncation_order",
    "approx_Y_inf",
    "sample_perpetuity_tails",
    "kesten_constant",
    "tilted_product_tail",
    "window_negligibility",
]

_CHUNK = 100_000


@dataclass
class PerpetuityPath:
    """One realization of the forward and backward affine recursions.

    ``products[j]`` is the running product of multipliers 0..j, ``backward``
    its partial sums (nondecreasing), and ``forward`` the affine chain on the
    same multipliers, started from 0 before the first map is applied.
    """

    horizon: int
    multipliers: np.ndarray   # A_0..A_n
    forward: np.ndarray       # Y_0..Y_n
    backward: np.ndarray      # partial sums of products, index 0..n
    products: np.ndarray      # prod(A_0..A_j), index 0..n


def run_perpetuity(spec: EnvSpec, n: int, stream: RngStream) -> PerpetuityPath:
    """Draw n + 1 multipliers and fill both recursions in one pass."""
    if n < 1:
        raise ValueError("horizon must be at least 1")
    gen = stream.generator()
    a = spec.sample_A(gen, n + 1)
    products = np.cumprod(a)
    backward = np.cumsum(products)
    forward = np.empty(n + 1)
    forward[0] = a[0]
    for k in range(1, n + 1):
        forward[k] = a[k] * (forward[k - 1] + 1.0)
    return PerpetuityPath(horizon=n, multipliers=a, forward=forward,
                          backward=backward, products=products)


def truncation_order(spec: EnvSpec, tol: float) -> int:
    """Smallest N with lambda(theta)^N < tol for a provably finite order theta.

    theta = 0.9 * min(1, alpha) keeps the controlling moment strictly below
    the tail index; without a positive root every positive order works and
    theta = 1 is used.
    """
    check_transient(spec)
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    try:
        alpha = solve_alpha(spec)
        theta = 0.9 * min(1.0, alpha)
    except NoPositiveRoot:
        theta = 1.0
    lam = spec.moment(theta)
    if lam >= 1.0:
        raise NotTransient(f"moment of order {theta} is {lam} >= 1")
    return max(1, math.ceil(math.log(tol) / math.log(lam)))


def sample_perpetuity_tails(spec: EnvSpec, tol: float, replicas: int,
                            stream: RngStream):
    """iid truncated-perpetuity draws; returns (values, truncation order)."""
    n_terms = truncation_order(spec, tol)
    gen = stream.generator()
    out = np.empty(replicas)
    done = 0
    while done < replicas:
        c = min(_CHUNK, replicas - done)
        a = spec.sample_A(gen, (c, n_terms + 1))
        out[done:done + c] = np.cumprod(a, axis=1).sum(axis=1)
        done += c
    return out, n_terms


def approx_Y_inf(spec: EnvSpec, tol: float, stream: RngStream):
    """One truncated draw of the perpetuity limit; returns (value, order)."""
    values, n_terms = sample_perpetuity_tails(spec, tol, 1, stream)
    return float(values[0]), n_terms


@dataclass
class Estimate:
    """Monte Carlo point estimate with its standard error."""

    value: float
    se: float
    replicas: int
    meta: dict = field(default_factory=dict)


def kesten_constant(spec: EnvSpec, replicas: int, stream: RngStream,
                    tol: float = 1e-6) -> Estimate:
    """Kesten-Goldie tail constant of the perpetuity limit.

    Monte Carlo for the numerator E[(Y+1)^alpha - Y^alpha] over truncated
    perpetuity draws; the denominator alpha * E[A^alpha log A] is analytic
    (it equals alpha times the cumulant slope at the root).  The standard
    error is the numerator's, scaled by the constant denominator.
    """
    alpha = solve_alpha(spec)
    denom = alpha * spec.cumulant_prime(alpha)
    n_terms = truncation_order(spec, tol)
    gen = stream.generator()
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < replicas:
        c = min(_CHUNK, replicas - done)
        a = spec.sample_A(gen, (c, n_terms + 1))
        y = np.cumprod(a, axis=1).sum(axis=1)
        g = (y + 1.0) ** alpha - y ** alpha
        total += g.sum()
        total_sq += (g * g).sum()
        done += c
    mean = total / replicas
    var = max(total_sq / replicas - mean * mean, 0.0)
    return Estimate(value=mean / denom,
                    se=math.sqrt(var / replicas) / denom,
                    replicas=replicas,
                    meta={"alpha": alpha, "denominator": denom, "n_terms": n_terms})


class TiltedStream:
    """Multiplier draws under the tail-index tilt, with the path weight.

    The tilt with exponent alpha is a probability exactly because
    E A^alpha = 1; the accumulated weight (running product)^(-alpha) times
    any indicator of the drawn path is an unbiased estimator of the
    untilted probability of that event.
    """

    def __init__(self, spec: EnvSpec, alpha: float):
        if abs(spec.cumulant(alpha)) > 1e-8:
            raise TiltUnavailable(f"E A^s must be 1 at the tilt order, got s={alpha}")
        self.spec = spec
        self.alpha = alpha
        self.tilted_spec = spec.tilted(alpha)
        self._log_product = 0.0

    def draw(self, gen: np.random.Generator, count: int) -> np.ndarray:
        a = self.tilted_spec.sample_A(gen, count)
        self._log_product += float(np.log(a).sum())
        return a

    @property
    def log_product(self) -> float:
        return self._log_product

    def weight(self) -> float:
        return math.exp(-self.alpha * self._log_product)


def tilted_product_tail(spec: EnvSpec, n: int, x: float, replicas: int,
                        stream: RngStream) -> Estimate:
    """Unbiased importance-sampling estimate of P(product of n draws > x)."""
    alpha = solve_alpha(spec)
    tilted = spec.tilted(alpha)
    log_x = math.log(x) if x > 0 else -math.inf
    gen = stream.generator()
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < replicas:
        c = min(_CHUNK, replicas - done)
        s = np.log(tilted.sample_A(gen, (c, n))).sum(axis=1)
        w = np.where(s > log_x, np.exp(-alpha * s), 0.0)
        total += w.sum()
        total_sq += (w * w).sum()
        done += c
    mean = total / replicas
    var = max(total_sq / replicas - mean * mean, 0.0)
    return Estimate(value=mean, se=math.sqrt(var / replicas), replicas=replicas,
                    meta={"alpha": alpha, "n": n, "x": x})


# --------------------------------------------------------------------------
# negligibility of the pre- and post-window contributions
# --------------------------------------------------------------------------

@dataclass
class TailReportRow:
    quantity: str
    x: float
    n_window: int
    estimate: float        # x^alpha * P(quantity > x)
    se: float
    replicas: int
    below_threshold: bool


@dataclass
class WindowTailReport:
    window: DeviationWindow
    threshold: float
    rows: list

    def row(self, quantity: str) -> TailReportRow:
        for r in self.rows:
            if r.quantity == quantity:
                return r
        raise KeyError(quantity)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "x", "n_window", "estimate", "se", "replicas"])
            for r in self.rows:
                w.writerow([r.quantity, f"{r.x:.12g}", r.n_window,
                            f"{r.estimate:.12g}", f"{r.se:.12g}", r.replicas])


def _weighted_tail(gen, draw_chunk, replicas):
    """Accumulate mean and se of a weighted-indicator estimator."""
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < replicas:
        c = min(_CHUNK, replicas - done)
        w = draw_chunk(gen, c)
        total += w.sum()
        total_sq += (w * w).sum()
        done += c
    mean = total / replicas
    var = max(total_sq / replicas - mean * mean, 0.0)
    return mean, math.sqrt(var / replicas)


def _line_nb(gen, counts, omega):
    out = np.zeros_like(counts)
    mask = counts > 0
    if mask.any():
        try:
            out[mask] = gen.negative_binomial(counts[mask], omega[mask])
        except ValueError as exc:
            raise PopulationOverflow(f"offspring draw out of sampler range: {exc}")
    return out


def window_negligibility(spec: EnvSpec, x: float, delta: float, replicas: int,
                         stream: RngStream, threshold_ratio: float = 0.2,
                         c2: Optional[float] = None,
                         tol: float = 1e-6) -> WindowTailReport:
    """Normalized tail mass of the early and late window complements.

    Estimates x^alpha * P(. > x) for the truncated perpetuity below the
    window, the perpetuity remainder past it, and the branching analogues
    (first-line progeny before the window and past it), via environment
    tilting over the deviating stretch.  For reference the report also
    carries the full perpetuity tail and the in-window slice.  Each row is
    flagged against threshold_ratio times the perpetuity tail constant.
    """
    prof = profile(spec)
    alpha = prof.alpha
    win = deviation_window(prof, x, delta)
    n1, n2 = win.n1, win.n2
    tilted = spec.tilted(alpha)
    xa = x ** alpha
    n_terms = truncation_order(spec, tol)

    if c2 is None:
        c2 = kesten_constant(spec, min(replicas, 200_000), stream.child(9)).value
    threshold = threshold_ratio * c2

    rows = []

    def add(quantity, n_window, mean, se):
        rows.append(TailReportRow(
            quantity=quantity, x=x, n_window=n_window,
            estimate=xa * mean, se=xa * se, replicas=replicas,
            below_threshold=(xa * (mean + 1.96 * se)) < threshold,
        ))

    # perpetuity below the window: first n1 + 1 products, all tilted
    def head_chunk(gen, c):
        la = np.log(tilted.sample_A(gen, (c, n1 + 1)))
        y = np.exp(np.cumsum(la, axis=1)).sum(axis=1)
        return np.where(y > x, np.exp(-alpha * la.sum(axis=1)), 0.0)

    mean, se = _weighted_tail(stream.child(0).generator(), head_chunk, replicas)
    add("perpetuity_head", n1, mean, se)

    # perpetuity past the window: the remainder is an untilted perpetuity
    # scaled by the running product, which is tilted all the way to n2
    # because the deviation epoch of this event is past the window.
    def tail_chunk(gen, c):
        la = np.log(tilted.sample_A(gen, (c, n2 + 1)))
        rest = np.cumprod(spec.sample_A(gen, (c, n_terms + 1)), axis=1).sum(axis=1)
        remainder = np.exp(la.sum(axis=1)) * rest
        return np.where(remainder > x, np.exp(-alpha * la.sum(axis=1)), 0.0)

    mean, se = _weighted_tail(stream.child(1).generator(), tail_chunk, replicas)
    add("perpetuity_tail", n2, mean, se)

    # full tail and in-window slice deviate around the typical epoch n0, so
    # the tilt stops there; later multipliers and the remainder are typical.
    n_tilt = win.n0 + 1
    sums = {"full": [0.0, 0.0], "window": [0.0, 0.0]}

    def full_chunk(gen, c):
        la = np.log(tilted.sample_A(gen, (c, n_tilt)))
        w = np.exp(-alpha * la.sum(axis=1))
        a_rest = spec.sample_A(gen, (c, n2 + 1 - n_tilt))
        cum = np.exp(np.cumsum(np.concatenate([la, np.log(a_rest)], axis=1), axis=1))
        rest = np.cumprod(spec.sample_A(gen, (c, n_terms + 1)), axis=1).sum(axis=1)
        full = cum.sum(axis=1) + cum[:, -1] * rest
        mid = cum[:, n1 + 1:].sum(axis=1)
        for key, val in (("full", full), ("window", mid)):
            ww = np.where(val > x, w, 0.0)
            sums[key][0] += ww.sum()
            sums[key][1] += (ww * ww).sum()

    gen2 = stream.child(4).generator()
    done = 0
    while done < replicas:
        c = min(_CHUNK, replicas - done)
        full_chunk(gen2, c)
        done += c
    for key, quantity in (("full", "perpetuity_full"),
                          ("window", "perpetuity_window")):
        m = sums[key][0] / replicas
        v = max(sums[key][1] / replicas - m * m, 0.0)
        add(quantity, n2, m, math.sqrt(v / replicas))

    # first-line progeny before the window: generations 1..n1 under a
    # tilted environment, weighted by the environment likelihood ratio
    def line_head_chunk(gen, c):
        om = tilted.sample_omega(gen, (c, n1))
        logw = -alpha * np.log((1.0 - om) / om).sum(axis=1)
        z = gen.negative_binomial(1, om[:, 0]).astype(np.int64)
        tot = z.copy()
        for k in range(1, n1):
            z = _line_nb(gen, z, om[:, k])
            tot += z
        return np.where(tot > x, np.exp(logw), 0.0)

    mean, se = _weighted_tail(stream.child(2).generator(), line_head_chunk, replicas)
    add("line_head", n1, mean, se)

    # first-line progeny past the window: tilt the environment up to
    # generation n2, then let the line die out in a typical environment.
    # Paths whose population leaves the sampler-safe range are frozen with
    # indicator 1: an upper bound whose bias is below their own weights
    # (about e^(-2 alpha log z)), far under the estimator scale, and
    # conservative for a negligibility check.
    z_freeze = np.int64(2) ** 40

    def line_tail_chunk(gen, c):
        om = tilted.sample_omega(gen, (c, n2))
        logw = -alpha * np.log((1.0 - om) / om).sum(axis=1)
        z = gen.negative_binomial(1, om[:, 0]).astype(np.int64)
        frozen = np.zeros(c, dtype=bool)
        for k in range(1, n2):
            frozen |= z > z_freeze
            live = ~frozen
            z[live] = _line_nb(gen, z[live], om[live, k])
        tail_tot = np.where(frozen, x + 1.0, z.astype(float))
        active = (z > 0) & ~frozen
        while active.any():
            idx = np.flatnonzero(active)
            om_fresh = spec.sample_omega(gen, idx.size)
            nxt = _line_nb(gen, z[idx], om_fresh)
            z[idx] = nxt
            tail_tot[idx] += nxt
            done = (nxt == 0) | (tail_tot[idx] > x) | (nxt > z_freeze)
            tail_tot[idx[nxt > z_freeze]] = x + 1.0
            active[idx[done]] = False
        return np.where(tail_tot > x, np.exp(logw), 0.0)

    mean, se = _weighted_tail(stream.child(3).generator(), line_tail_chunk, replicas)
    add("line_tail", n2, mean, se)

    return WindowTailReport(window=win, threshold=threshold, rows=rows)
