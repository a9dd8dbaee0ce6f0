"""Environment laws and their cumulant analytics.

A site-random medium assigns each site a right-jump probability w in (0, 1).
All asymptotics are driven by the multiplier A = (1 - w)/w: the sign of
E log A decides transience, E A decides ballisticity, and the positive root
alpha of E A^alpha = 1 is the tail index governing every polynomial rate
in the package.  Four parametric families are shipped, each with closed-form
moments so that solver output can be checked against exact values:

* ``TwoPoint(a1, a2, p)``   A takes two positive values.
* ``Discrete(atoms, probs)`` A takes finitely many positive values.
* ``Beta(a, b)``            w ~ Beta(a, b); E A^s = B(a-s, b+s)/B(a, b).
* ``Deterministic(a)``      A is constant (the classical biased walk).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .errors import (
    ConfigError,
    MomentDiverges,
    NoPositiveRoot,
    NotTransient,
    OutOfDomain,
    WindowDegenerate,
)

__all__ = [
    "EnvSpec",
    "TwoPoint",
    "Discrete",
    "Beta",
    "Deterministic",
    "CumulantProfile",
    "DeviationWindow",
    "Regime",
    "check_transient",
    "solve_alpha",
    "legendre",
    "profile",
    "deviation_window",
    "sample_A",
    "env_to_json",
    "env_from_json",
]

_PROB_TOL = 1e-12


class Regime(Enum):
    BALLISTIC = "ballistic"
    SUB_BALLISTIC = "sub_ballistic"
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class EnvSpec:
    """Base class for environment laws. Immutable and thread-safe."""

    # -- moments -----------------------------------------------------------

    @property
    def alpha_inf(self) -> float:
        """Supremum of s with E A^s finite."""
        raise NotImplementedError

    @property
    def rho_inf(self) -> float:
        """Supremum of the cumulant slope over the open moment domain."""
        raise NotImplementedError

    def moment(self, s: float) -> float:
        """E A^s. Raises MomentDiverges for s >= alpha_inf."""
        return math.exp(self.cumulant(s))

    def cumulant(self, s: float) -> float:
        """log E A^s on [0, alpha_inf)."""
        raise NotImplementedError

    def cumulant_prime(self, s: float) -> float:
        """Derivative of the cumulant; equals E[A^s log A] / E[A^s]."""
        raise NotImplementedError

    def mean_log_A(self) -> float:
        return self.cumulant_prime(0.0)

    def has_mass_above_one(self) -> bool:
        """P(A > 1) > 0, a prerequisite for a positive tail index."""
        raise NotImplementedError

    def is_arithmetic(self) -> bool:
        """True when log A is supported on a lattice."""
        raise NotImplementedError

    # -- sampling ----------------------------------------------------------

    def sample_omega(self, gen: np.random.Generator, size) -> np.ndarray:
        """Draw right-jump probabilities w = 1/(1 + A)."""
        return 1.0 / (1.0 + self.sample_A(gen, size))

    def sample_A(self, gen: np.random.Generator, size) -> np.ndarray:
        raise NotImplementedError

    def tilted(self, alpha: float) -> "EnvSpec":
        """Exponentially tilted law with density proportional to a^alpha."""
        raise NotImplementedError

    # -- misc ----------------------------------------------------------------

    def family(self) -> str:
        raise NotImplementedError

    def _check_order(self, s: float) -> None:
        if s >= self.alpha_inf:
            raise MomentDiverges(
                f"E A^s is infinite for s={s} (finite only below {self.alpha_inf})"
            )


def _validate_prob(p: float, what: str) -> None:
    if not (0.0 <= p <= 1.0):
        raise ConfigError(f"{what} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class Discrete(EnvSpec):
    """A supported on finitely many positive atoms."""

    atoms: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        atoms = tuple(float(a) for a in self.atoms)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)
        if len(atoms) != len(probs) or not atoms:
            raise ConfigError("atoms and probs must be equal-length and nonempty")
        if any(a <= 0 for a in atoms):
            raise ConfigError("all atoms must be strictly positive")
        if any(p < 0 for p in probs):
            raise ConfigError("probabilities must be nonnegative")
        if abs(sum(probs) - 1.0) > _PROB_TOL:
            raise ConfigError(f"probabilities sum to {sum(probs)}, not 1")

    @property
    def alpha_inf(self) -> float:
        return math.inf

    @property
    def rho_inf(self) -> float:
        return math.log(max(a for a, p in zip(self.atoms, self.probs) if p > 0))

    def cumulant(self, s: float) -> float:
        log_terms = [math.log(p) + s * math.log(a)
                     for a, p in zip(self.atoms, self.probs) if p > 0]
        return float(special.logsumexp(log_terms))

    def cumulant_prime(self, s: float) -> float:
        # softmax weights keep this stable for any s
        logs = np.array([math.log(a) for a, p in zip(self.atoms, self.probs) if p > 0])
        logp = np.array([math.log(p) for p in self.probs if p > 0])
        t = logp + s * logs
        w = np.exp(t - special.logsumexp(t))
        return float(np.dot(w, logs))

    def has_mass_above_one(self) -> bool:
        return any(a > 1.0 and p > 0 for a, p in zip(self.atoms, self.probs))

    def is_arithmetic(self) -> bool:
        logs = [math.log(a) for a, p in zip(self.atoms, self.probs) if p > 0]
        logs = [x for x in logs if abs(x) > 1e-15]
        if len(logs) <= 1:
            return True  # at most one lattice generator
        base = logs[0]
        for x in logs[1:]:
            r = x / base
            frac = Fraction(r).limit_denominator(1000)
            if abs(r - float(frac)) > 1e-9:
                return False
        return True

    def sample_A(self, gen: np.random.Generator, size) -> np.ndarray:
        edges = np.cumsum(self.probs)
        idx = np.searchsorted(edges, gen.random(size), side="right")
        idx = np.minimum(idx, len(self.atoms) - 1)
        return np.asarray(self.atoms, dtype=float)[idx]

    def tilted(self, alpha: float) -> "Discrete":
        w = np.array(self.probs) * np.array(self.atoms) ** alpha
        w = w / w.sum()
        return Discrete(self.atoms, tuple(w))

    def family(self) -> str:
        return "discrete"


@dataclass(frozen=True)
class TwoPoint(EnvSpec):
    """A equals a1 with probability p, else a2."""

    a1: float
    a2: float
    p: float

    def __post_init__(self):
        if self.a1 <= 0 or self.a2 <= 0:
            raise ConfigError("atoms must be strictly positive")
        _validate_prob(self.p, "p")

    def _as_discrete(self) -> Discrete:
        return Discrete((self.a1, self.a2), (self.p, 1.0 - self.p))

    @property
    def alpha_inf(self) -> float:
        return math.inf

    @property
    def rho_inf(self) -> float:
        return self._as_discrete().rho_inf

    def cumulant(self, s: float) -> float:
        return self._as_discrete().cumulant(s)

    def cumulant_prime(self, s: float) -> float:
        return self._as_discrete().cumulant_prime(s)

    def has_mass_above_one(self) -> bool:
        return self._as_discrete().has_mass_above_one()

    def is_arithmetic(self) -> bool:
        return self._as_discrete().is_arithmetic()

    def sample_A(self, gen: np.random.Generator, size) -> np.ndarray:
        return np.where(gen.random(size) < self.p, self.a1, self.a2)

    def tilted(self, alpha: float) -> "TwoPoint":
        w1 = self.p * self.a1 ** alpha
        w2 = (1.0 - self.p) * self.a2 ** alpha
        return TwoPoint(self.a1, self.a2, w1 / (w1 + w2))

    def family(self) -> str:
        return "two_point"


@dataclass(frozen=True)
class Beta(EnvSpec):
    """w ~ Beta(a, b); the canonical nonarithmetic family.

    Moments of A are Beta-function ratios, so E A^s is finite iff s < a,
    and the tail index is exactly a - b whenever a > b.
    """

    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ConfigError("Beta shapes must be strictly positive")

    @property
    def alpha_inf(self) -> float:
        return self.a

    @property
    def rho_inf(self) -> float:
        return math.inf  # digamma(a - s) blows up at the domain edge

    def cumulant(self, s: float) -> float:
        self._check_order(s)
        return float(
            special.gammaln(self.a - s) + special.gammaln(self.b + s)
            - special.gammaln(self.a) - special.gammaln(self.b)
        )

    def cumulant_prime(self, s: float) -> float:
        self._check_order(s)
        return float(special.digamma(self.b + s) - special.digamma(self.a - s))

    def moment_by_quadrature(self, s: float) -> float:
        """Adaptive quadrature of the defining integral, for cross-checks."""
        self._check_order(s)
        c = math.exp(-special.betaln(self.a, self.b))

        def integrand(w):
            return c * (1.0 - w) ** (s + self.b - 1.0) * w ** (self.a - s - 1.0)

        val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12)
        return val

    def has_mass_above_one(self) -> bool:
        return True  # w < 1/2 has positive probability for every Beta law

    def is_arithmetic(self) -> bool:
        return False

    def sample_A(self, gen: np.random.Generator, size) -> np.ndarray:
        w = gen.beta(self.a, self.b, size)
        return (1.0 - w) / w

    def sample_omega(self, gen: np.random.Generator, size) -> np.ndarray:
        return gen.beta(self.a, self.b, size)

    def tilted(self, alpha: float) -> "Beta":
        # conjugacy: tilting A^alpha shifts the shapes, no rejection needed
        if alpha >= self.a:
            raise MomentDiverges(f"tilt order {alpha} at or beyond alpha_inf={self.a}")
        return Beta(self.a - alpha, self.b + alpha)

    def family(self) -> str:
        return "beta"


@dataclass(frozen=True)
class Deterministic(EnvSpec):
    """A constant: the homogeneous nearest-neighbour walk."""

    a: float

    def __post_init__(self):
        if self.a <= 0:
            raise ConfigError("the multiplier must be strictly positive")

    @property
    def alpha_inf(self) -> float:
        return math.inf

    @property
    def rho_inf(self) -> float:
        return math.log(self.a)

    def cumulant(self, s: float) -> float:
        return s * math.log(self.a)

    def cumulant_prime(self, s: float) -> float:
        return math.log(self.a)

    def has_mass_above_one(self) -> bool:
        return self.a > 1.0

    def is_arithmetic(self) -> bool:
        return True

    def sample_A(self, gen: np.random.Generator, size) -> np.ndarray:
        return np.full(size, self.a, dtype=float)

    def tilted(self, alpha: float) -> "Deterministic":
        return self

    def family(self) -> str:
        return "deterministic"


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def env_to_json(spec: EnvSpec) -> dict:
    if isinstance(spec, Beta):
        return {"family": "beta", "a": spec.a, "b": spec.b}
    if isinstance(spec, TwoPoint):
        return {"family": "two_point", "a1": spec.a1, "a2": spec.a2, "p": spec.p}
    if isinstance(spec, Discrete):
        return {"family": "discrete", "atoms": list(spec.atoms), "probs": list(spec.probs)}
    if isinstance(spec, Deterministic):
        return {"family": "deterministic", "a": spec.a}
    raise ConfigError(f"unknown spec type {type(spec)!r}")


def env_from_json(doc) -> EnvSpec:
    if isinstance(doc, str):
        doc = json.loads(doc)
    try:
        family = doc["family"]
        if family == "beta":
            return Beta(doc["a"], doc["b"])
        if family == "two_point":
            return TwoPoint(doc["a1"], doc["a2"], doc["p"])
        if family == "discrete":
            return Discrete(tuple(doc["atoms"]), tuple(doc["probs"]))
        if family == "deterministic":
            return Deterministic(doc["a"])
    except KeyError as exc:
        raise ConfigError(f"environment document missing field {exc}") from exc
    raise ConfigError(f"unknown environment family {family!r}")


# --------------------------------------------------------------------------
# derived analytics
# --------------------------------------------------------------------------

def check_transient(spec: EnvSpec) -> None:
    """Gate demanded by every simulation entry point: E log A < 0."""
    m = spec.mean_log_A()
    if m >= 0:
        raise NotTransient(f"E log A = {m:.6g} >= 0; walk is not transient right")


def sample_A(spec: EnvSpec, stream, count: int) -> np.ndarray:
    """iid multiplier draws from a dedicated stream."""
    return spec.sample_A(stream.generator(), count)


def solve_alpha(spec: EnvSpec, rel_tol: float = 1e-10) -> float:
    """Unique positive root of E A^s = 1.

    Uses that the cumulant is convex with value 0 and negative slope at the
    origin: bracket by doubling (shrinking geometrically toward the domain
    edge when it is finite), then bisect on the cumulant sign.
    """
    if spec.mean_log_A() >= 0:
        raise NotTransient("E log A >= 0; the root problem is ill-posed")
    if not spec.has_mass_above_one():
        raise NoPositiveRoot("P(A > 1) = 0, so E A^s < 1 for all s > 0")
    edge = spec.alpha_inf
    lo = 1e-3
    if spec.cumulant(lo) >= 0:
        lo = lo * rel_tol  # pathologically steep; fall back to a tiny bracket
    hi = lo
    for _ in range(200):
        nxt = hi * 2.0 if math.isinf(edge) else 0.5 * (hi + edge)
        if not math.isinf(edge) and edge - nxt < 1e-13 * edge:
            raise NoPositiveRoot("cumulant stays negative up to the domain edge")
        if math.isinf(edge) and nxt > 1e7:
            raise NoPositiveRoot("cumulant stays negative over a huge range")
        if spec.cumulant(nxt) > 0:
            hi = nxt
            break
        lo, hi = nxt, nxt
    else:
        raise NoPositiveRoot("bracketing failed")
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if spec.cumulant(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def legendre(spec: EnvSpec, rho: float, rel_tol: float = 1e-12) -> float:
    """Legendre-Fenchel transform of the cumulant at slope rho.

    Solves cumulant'(s) = rho by bisection (the slope is strictly
    increasing) and returns s*rho - cumulant(s).  The slope must lie in
    [E log A, rho_inf); the left endpoint maps to 0.
    """
    mean_log = spec.mean_log_A()
    if rho < mean_log or rho >= spec.rho_inf:
        raise OutOfDomain(
            f"slope {rho} outside [{mean_log:.6g}, {spec.rho_inf:.6g})"
        )
    if rho == mean_log:
        return 0.0
    edge = spec.alpha_inf
    lo = 0.0
    hi = 1.0 if math.isinf(edge) else 0.5 * edge
    for _ in range(200):
        if spec.cumulant_prime(hi) > rho:
            break
        lo = hi
        hi = hi * 2.0 if math.isinf(edge) else 0.5 * (hi + edge)
        if not math.isinf(edge) and edge - hi < 1e-13 * max(edge, 1.0):
            raise OutOfDomain(f"slope {rho} not attained inside the domain")
        if math.isinf(edge) and hi > 1e7:
            raise OutOfDomain(f"slope {rho} not attained below s = 1e7")
    while hi - lo > rel_tol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if spec.cumulant_prime(mid) > rho:
            hi = mid
        else:
            lo = mid
    s = 0.5 * (lo + hi)
    return s * rho - spec.cumulant(s)


@dataclass(frozen=True)
class CumulantProfile:
    """Everything the deviation asymptotics need, computed once."""

    alpha: float          # root of E A^alpha = 1
    rho0: float           # cumulant slope at alpha; typical deviation rate
    mean_A: float
    mean_logA: float
    speed_v: float        # ballistic speed, 0 in the sub-ballistic regime
    regime: Regime
    alpha_inf: float
    rho_inf: float
    arithmetic_flag: bool


def profile(spec: EnvSpec) -> CumulantProfile:
    """Full analytic profile; raises if the spec has no tail index."""
    check_transient(spec)
    alpha = solve_alpha(spec)
    rho0 = spec.cumulant_prime(alpha)
    mean_A = spec.moment(1.0) if spec.alpha_inf > 1.0 else math.inf
    if mean_A < 1.0 - _PROB_TOL:
        regime = Regime.BALLISTIC
        speed = (1.0 - mean_A) / (1.0 + mean_A)
    elif mean_A <= 1.0 + _PROB_TOL:
        regime = Regime.BOUNDARY
        speed = 0.0
    else:
        regime = Regime.SUB_BALLISTIC
        speed = 0.0
    return CumulantProfile(
        alpha=alpha,
        rho0=rho0,
        mean_A=mean_A,
        mean_logA=spec.mean_log_A(),
        speed_v=speed,
        regime=regime,
        alpha_inf=spec.alpha_inf,
        rho_inf=spec.rho_inf,
        arithmetic_flag=spec.is_arithmetic(),
    )


@dataclass(frozen=True)
class DeviationWindow:
    """Integer window around the most probable deviation epoch."""

    n0: int   # floor(log x / rho0)
    m: int    # floor((log x)^(1/2 + delta))
    n1: int   # n0 - m, clamped at 1 when requested
    n2: int   # n0 + m
    clamped: bool = False


def deviation_window(prof: CumulantProfile, x: float, delta: float,
                     clamp: bool = False) -> DeviationWindow:
    """Window (n1, n2) = n0 -+ m around the typical crossing epoch of x.

    Raises WindowDegenerate when m >= n0, unless ``clamp`` forces n1 = 1
    (flagged in the result).
    """
    if not (0.0 < delta < 0.5):
        raise ConfigError(f"delta must be in (0, 1/2), got {delta}")
    log_x = math.log(x)
    if log_x <= 1.0:
        raise WindowDegenerate(f"x = {x} too small: need log x > 1")
    n0 = int(math.floor(log_x / prof.rho0))
    m = int(math.floor(log_x ** (0.5 + delta)))
    n1 = n0 - m
    clamped = False
    if n1 <= 0:
        if not clamp:
            raise WindowDegenerate(
                f"n1 = {n1} <= 0: x = {x} too small for an asymptotic window"
            )
        n1, clamped = 1, True
    return DeviationWindow(n0=n0, m=m, n1=n1, n2=n0 + m, clamped=clamped)
