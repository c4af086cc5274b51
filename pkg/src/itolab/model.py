"""Semimartingale model specification and theorem-applicability checking.

A :class:`ModelSpec` describes the simulated process

    dX_t = b(t, X_t) dt + sigma_t dW_t + jumps,

with the volatility matrix sigma following its own dynamics (:class:`VolSpec`)
driven by the same Brownian motion W, an independent Brownian motion V, and
optional jumps. Jumps in X are finite-activity: a Poisson stream with i.i.d.
sizes plus an optional deterministic schedule.

The effective drift between jumps is b'(t, x) = b(t, x) - lambda E[h(J)],
where h is the smooth compactly supported truncation map (identity inside
``truncation_radius``, zero beyond twice that); E[h(J)] is computed in closed
form where possible and by a cached 10^6-sample Monte Carlo otherwise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng
from .functions import (
    TestFunction,
    bump,
    grad_x_vanishes_at_zero,
    spot_check,
    vanishes_at_zero,
)

__all__ = [
    "Coefficient", "Const", "Sine", "Affine", "MeanRevert",
    "SizeLaw", "ConstantLaw", "TwoPointLaw", "UniformBoxLaw", "GaussianLaw",
    "JumpSpec", "SigmaJumpSchedule", "VolSpec", "ModelFlags", "ModelSpec",
    "truncate", "Verdict", "ApplicabilityReport", "check_applicability",
    "THEOREMS",
]

_HBAR_SEED = 0x4842_4152  # stream for the E[h(J)] Monte Carlo cache
_PROBE_SEED = 0x4D50_524F  # stream for model flag spot checks


# ---------------------------------------------------------------------------
# coefficient presets
# ---------------------------------------------------------------------------

class Coefficient:
    """Callable coefficient of (t, state) with a structure declaration.

    ``state_dependent`` distinguishes coefficients that read the current
    state (X or sigma) from purely deterministic ones; the simulator takes a
    vectorized path for the latter via :meth:`at_times`.
    """

    state_dependent: bool = True

    def __call__(self, t: float, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def at_times(self, ts: np.ndarray) -> np.ndarray:
        if self.state_dependent:
            raise ValueError("state-dependent coefficient has no time-only form")
        return np.stack([np.asarray(self(t, None), dtype=float) for t in ts])


@dataclass(frozen=True)
class Const(Coefficient):
    """Constant coefficient (any shape)."""
    value: np.ndarray
    state_dependent = False

    def __post_init__(self):
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))

    def __call__(self, t, state):
        return self.value

    def at_times(self, ts):
        return np.broadcast_to(self.value, (len(ts),) + self.value.shape)


def zeros(*shape: int) -> Const:
    return Const(np.zeros(shape))


@dataclass(frozen=True)
class Sine(Coefficient):
    """base + amplitude * sin(2 pi frequency t + phase), elementwise."""
    base: np.ndarray
    amplitude: np.ndarray
    frequency: float = 1.0
    phase: float = 0.0
    state_dependent = False

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "amplitude", np.asarray(self.amplitude, dtype=float))

    def __call__(self, t, state):
        return self.base + self.amplitude * math.sin(2.0 * math.pi * self.frequency * t + self.phase)

    def at_times(self, ts):
        osc = np.sin(2.0 * math.pi * self.frequency * np.asarray(ts) + self.phase)
        return self.base + self.amplitude * osc[(...,) + (None,) * self.base.ndim]


@dataclass(frozen=True)
class Affine(Coefficient):
    """const + linear @ state (state read as a flat vector)."""
    const: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "const", np.asarray(self.const, dtype=float))
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float))

    def __call__(self, t, state):
        return self.const + self.linear @ np.ravel(state)


@dataclass(frozen=True)
class MeanRevert(Coefficient):
    """kappa * (theta - state), elementwise; usable for X or sigma drift."""
    kappa: float
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))

    def __call__(self, t, state):
        return self.kappa * (self.theta - state)


# ---------------------------------------------------------------------------
# truncation map
# ---------------------------------------------------------------------------

def truncate(x: np.ndarray, radius: float) -> np.ndarray:
    """Smooth radial truncation h: identity for ||x|| <= radius, zero beyond
    2 radius, bump interpolation in between."""
    x = np.asarray(x, dtype=float)
    nrm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    return x * bump(nrm / radius)


# ---------------------------------------------------------------------------
# jump size laws
# ---------------------------------------------------------------------------

class SizeLaw:
    """I.i.d. jump-size distribution on R^dim."""

    dim: int

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def mean_truncated(self, radius: float) -> Optional[np.ndarray]:
        """E[h(J)] in closed form, or None when Monte Carlo is needed."""
        return None

    def gamma_bound(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantLaw(SizeLaw):
    value: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.value, dtype=float))
        if not np.any(v != 0.0):
            raise ValueError("constant jump size must be nonzero")
        object.__setattr__(self, "value", v)

    @property
    def dim(self):
        return self.value.shape[0]

    def sample(self, gen, n):
        return np.broadcast_to(self.value, (n, self.dim)).copy()

    def mean_truncated(self, radius):
        return truncate(self.value, radius)

    def gamma_bound(self):
        return float(np.linalg.norm(self.value))


@dataclass(frozen=True)
class TwoPointLaw(SizeLaw):
    a: np.ndarray
    b: np.ndarray
    p_a: float = 0.5

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if a.shape != b.shape:
            raise ValueError("two-point values must share a shape")
        if not (0.0 <= self.p_a <= 1.0):
            raise ValueError("p_a must be a probability")
        if not np.any(a != 0.0) or not np.any(b != 0.0):
            raise ValueError("two-point jump sizes must be nonzero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.a.shape[0]

    def sample(self, gen, n):
        pick = gen.random(n) < self.p_a
        return np.where(pick[:, None], self.a, self.b)

    def mean_truncated(self, radius):
        return self.p_a * truncate(self.a, radius) + (1.0 - self.p_a) * truncate(self.b, radius)

    def gamma_bound(self):
        return float(max(np.linalg.norm(self.a), np.linalg.norm(self.b)))


@dataclass(frozen=True)
class UniformBoxLaw(SizeLaw):
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float))
        high = np.atleast_1d(np.asarray(self.high, dtype=float))
        if low.shape != high.shape or np.any(low >= high):
            raise ValueError("box must satisfy low < high componentwise")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self):
        return self.low.shape[0]

    def sample(self, gen, n):
        return gen.uniform(self.low, self.high, size=(n, self.dim))

    def gamma_bound(self):
        corners = itertools.product(*zip(self.low, self.high))
        return float(max(np.linalg.norm(c) for c in corners))


@dataclass(frozen=True)
class GaussianLaw(SizeLaw):
    """Centered Gaussian sizes; gamma_bound is a declared 8-sigma figure used
    for hypothesis reporting only (simulation never truncates draws)."""
    cov: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))

    @property
    def dim(self):
        return self.cov.shape[0]

    def sample(self, gen, n):
        return gen.standard_normal((n, self.dim)) @ self._chol.T

    def mean_truncated(self, radius):
        # h is odd and the law is symmetric
        return np.zeros(self.dim)

    def gamma_bound(self):
        return 8.0 * math.sqrt(float(np.max(np.linalg.eigvalsh(self.cov))))


def _parse_scheduled(scheduled, dim, shape=None):
    out = []
    prev = 0.0
    for time, size in scheduled:
        t = float(time)
        s = np.asarray(size, dtype=float)
        if shape is not None:
            s = s.reshape(shape)
        else:
            s = np.atleast_1d(s)
            if s.shape != (dim,):
                raise ValueError(f"scheduled jump size must have shape ({dim},)")
        if t <= prev:
            raise ValueError("scheduled jump times must be strictly increasing and > 0")
        if not np.any(s != 0.0):
            raise ValueError("scheduled jump sizes must be nonzero")
        out.append((t, s))
        prev = t
    return tuple(out)


@dataclass(frozen=True)
class JumpSpec:
    """Finite-activity jumps: Poisson stream (intensity, size_law) plus an
    optional deterministic schedule of (time, size) pairs.

    The jump measure is lambda * Law(J); with finite lambda and the supported
    laws every moment integral of the sizes is finite, so the s-integrability
    hypotheses hold for all s >= 0.
    """

    intensity: float = 0.0
    size_law: Optional[SizeLaw] = None
    scheduled: Sequence = ()
    gamma_bound: Optional[float] = None

    def __post_init__(self):
        if self.intensity < 0 or not math.isfinite(self.intensity):
            raise ValueError("intensity must be finite and >= 0")
        if self.intensity > 0 and self.size_law is None:
            raise ValueError("Poisson jumps need a size_law")
        if self.intensity == 0 and not self.scheduled and self.size_law is None:
            raise ValueError("JumpSpec with no Poisson part and no schedule")
        dim = self.size_law.dim if self.size_law is not None else np.atleast_1d(
            np.asarray(self.scheduled[0][1], dtype=float)).shape[0]
        object.__setattr__(self, "scheduled", _parse_scheduled(self.scheduled, dim))
        if self.gamma_bound is None:
            g = self.size_law.gamma_bound() if self.size_law is not None else 0.0
            for _, s in self.scheduled:
                g = max(g, float(np.linalg.norm(s)))
            object.__setattr__(self, "gamma_bound", g)

    @property
    def dim(self):
        if self.size_law is not None:
            return self.size_law.dim
        return self.scheduled[0][1].shape[0]


@dataclass(frozen=True)
class SigmaJumpSchedule:
    """Deterministic jumps of the volatility matrix: (time, d x m size)."""

    scheduled: Sequence = ()

    def __post_init__(self):
        prev = 0.0
        out = []
        for time, size in self.scheduled:
            t = float(time)
            s = np.asarray(size, dtype=float)
            if t <= prev:
                raise ValueError("sigma jump times must be strictly increasing and > 0")
            out.append((t, s))
            prev = t
        object.__setattr__(self, "scheduled", tuple(out))


# ---------------------------------------------------------------------------
# volatility dynamics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VolSpec:
    """Dynamics of the d x m volatility matrix:

        dsigma = btilde(t, sigma) dt + sigmatilde(t, sigma) dW
                 + v(t, sigma) dV + jumps,

    where sigmatilde in T(d, m, m) loads on the same W that drives X and
    v in T(d, m, l) loads on an independent Brownian V. Jumps are either a
    deterministic :class:`SigmaJumpSchedule` or a :class:`JumpSpec` whose
    sizes (dimension d*m) are reshaped to matrices.
    """

    sigma0: np.ndarray
    drift: Coefficient
    vol_of_vol: Coefficient
    indep_loading: Coefficient
    jumps: Optional[object] = None  # SigmaJumpSchedule | JumpSpec

    def __post_init__(self):
        object.__setattr__(self, "sigma0", np.asarray(self.sigma0, dtype=float))
        if self.sigma0.ndim != 2:
            raise ValueError("sigma0 must be a d x m matrix")
        if self.jumps is not None and not isinstance(self.jumps, (SigmaJumpSchedule, JumpSpec)):
            raise TypeError("vol jumps must be SigmaJumpSchedule or JumpSpec")

    @classmethod
    def constant(cls, sigma0, l: int = 0) -> "VolSpec":
        """Time-constant volatility matrix."""
        sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
        d, m = sigma0.shape
        return cls(sigma0=sigma0, drift=zeros(d, m),
                   vol_of_vol=zeros(d, m, m), indep_loading=zeros(d, m, l))

    @property
    def state_dependent(self) -> bool:
        return (self.drift.state_dependent or self.vol_of_vol.state_dependent
                or self.indep_loading.state_dependent)


@dataclass(frozen=True)
class ModelFlags:
    """Declared hypothesis booleans, spot-checked at model construction."""
    continuous: bool = False
    bprime_zero: bool = False
    sigmatilde_zero: bool = False


class CoefficientError(ValueError):
    """A coefficient produced a non-finite or mis-shaped value."""


@dataclass(frozen=True)
class ModelSpec:
    d: int
    m: int
    l: int
    x0: np.ndarray
    drift: Coefficient
    vol: VolSpec
    jumps: Optional[JumpSpec] = None
    truncation_radius: float = 1.0
    flags: ModelFlags = field(default_factory=ModelFlags)

    def __post_init__(self):
        if self.d < 1 or self.m < 1 or self.l < 0:
            raise ValueError("need d >= 1, m >= 1, l >= 0")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(self.d))
        if self.vol.sigma0.shape != (self.d, self.m):
            raise ValueError(f"sigma0 must be {self.d} x {self.m}")
        if self.truncation_radius <= 0:
            raise ValueError("truncation_radius must be positive")
        if self.jumps is not None and self.jumps.dim != self.d:
            raise ValueError("jump sizes must live in R^d")
        if (self.jumps is not None) == self.flags.continuous:
            raise ValueError("flags.continuous must match absence of jumps")
        if isinstance(self.vol.jumps, JumpSpec) and self.vol.jumps.dim != self.d * self.m:
            raise ValueError("Poisson sigma-jump sizes must have dimension d*m")
        object.__setattr__(self, "_mean_h", self._compute_mean_h())
        self._spot_check_flags()

    # -- derived quantities ---------------------------------------------------

    def _compute_mean_h(self) -> np.ndarray:
        """E[h(J)] for the Poisson size law (zero without a Poisson part)."""
        if self.jumps is None or self.jumps.intensity == 0 or self.jumps.size_law is None:
            return np.zeros(self.d)
        law = self.jumps.size_law
        closed = law.mean_truncated(self.truncation_radius)
        if closed is not None:
            return np.asarray(closed, dtype=float)
        gen = rng.generator(_HBAR_SEED, rng.MC_QUADRATURE)
        draws = law.sample(gen, 1_000_000)
        return truncate(draws, self.truncation_radius).mean(axis=0)

    @property
    def mean_truncated_jump(self) -> np.ndarray:
        return self._mean_h

    @property
    def drift_compensation(self) -> np.ndarray:
        """lambda E[h(J)]: the shift between the declared drift b and the
        effective inter-jump drift b'."""
        lam = self.jumps.intensity if self.jumps is not None else 0.0
        return lam * self._mean_h

    def bprime(self, t: float, x: np.ndarray) -> np.ndarray:
        val = np.asarray(self.drift(t, x), dtype=float)
        return val - self.drift_compensation

    def bprime_at_times(self, ts: np.ndarray) -> np.ndarray:
        return self.drift.at_times(ts) - self.drift_compensation

    # -- declared-flag spot checks ---------------------------------------------

    def _spot_check_flags(self, n: int = 100, tol: float = 1e-12) -> None:
        gen = rng.generator(_PROBE_SEED, rng.PROBE_POINTS)
        ts = gen.uniform(0.0, 10.0, size=n)
        xs = self.x0 + gen.normal(0.0, 2.0, size=(n, self.d))
        sigs = self.vol.sigma0 + gen.normal(0.0, 1.0, size=(n, self.d, self.m))
        if self.flags.bprime_zero:
            worst = max(float(np.max(np.abs(self.bprime(t, x)))) for t, x in zip(ts, xs))
            if worst > tol:
                raise ValueError(
                    f"flags.bprime_zero declared but |b'| reaches {worst:.3e} at probes")
        if self.flags.sigmatilde_zero:
            worst = max(float(np.max(np.abs(np.asarray(self.vol.vol_of_vol(t, s), dtype=float))))
                        for t, s in zip(ts, sigs))
            if worst > tol:
                raise ValueError(
                    f"flags.sigmatilde_zero declared but |sigma~| reaches {worst:.3e} at probes")
        # all coefficients must at least evaluate finitely at the probes
        for t, x, s in zip(ts[:10], xs[:10], sigs[:10]):
            for label, val in (
                ("drift", self.drift(t, x)),
                ("vol drift", self.vol.drift(t, s)),
                ("vol_of_vol", self.vol.vol_of_vol(t, s)),
                ("indep_loading", self.vol.indep_loading(t, s)),
            ):
                if not np.all(np.isfinite(np.asarray(val, dtype=float))):
                    raise CoefficientError(f"{label} non-finite at t={t:.4f}")


# ---------------------------------------------------------------------------
# theorem applicability
# ---------------------------------------------------------------------------

THEOREMS = ("t1", "t2", "t3", "t4", "t5", "t6")


@dataclass(frozen=True)
class Verdict:
    status: str  # "applies" | "fails" | "unknown"
    reason: str = ""

    def __str__(self):
        return self.status if not self.reason else f"{self.status}({self.reason})"


@dataclass(frozen=True)
class ApplicabilityReport:
    verdicts: dict

    def __getitem__(self, key: str) -> Verdict:
        return self.verdicts[key]

    def applies(self, key: str) -> bool:
        return self.verdicts[key].status == "applies"

    def summary_lines(self) -> list[str]:
        return [f"{k}: {self.verdicts[k]}" for k in THEOREMS]


def _smoothness_route(model: ModelSpec, f: TestFunction) -> Optional[Verdict]:
    """Shared M_2 / M_2' route of the two normalized-increment CLTs.

    Returns None when the route is open, a failing Verdict otherwise.
    Finite-activity jump models satisfy the s-integrability requirement for
    every s, so the model side never blocks; only the declared function
    smoothness can.
    """
    if model.flags.continuous:
        if f.meta.satisfies_M2 or f.meta.satisfies_M2prime:
            return None
        return Verdict("fails", "f not declared to satisfy M_2")
    if f.meta.satisfies_M2prime:
        return None
    return Verdict("fails", "discontinuous X requires M_2' (bounded f, grad f)")


def check_applicability(model: ModelSpec, f: TestFunction) -> ApplicabilityReport:
    """Per-theorem verdicts from declared metadata plus numerical spot checks.

    The verdicts certify that the *declared* hypotheses hold and that the
    declarations survive random-probe checks; they never constitute a proof
    for ω-dependent bounds, which is why uncheckable conditions come back
    "unknown" rather than "applies".
    """
    meta = f.meta
    problems = spot_check(f)
    parity_ok = not any("declared" in p for p in problems)
    v: dict[str, Verdict] = {}

    # t1: pure jump-sum limit; needs K plus a local bound with exponent > 2
    if not meta.satisfies_K:
        v["t1"] = Verdict("fails", "f not declared to satisfy K")
    elif meta.zero_order is None:
        v["t1"] = Verdict("unknown", "near-origin vanishing order undeclared")
    elif meta.zero_order > 2:
        v["t1"] = Verdict("applies")
    else:
        v["t1"] = Verdict("fails",
                          f"vanishing order {meta.zero_order:g} <= 2 at the origin")

    # t2: Ito-decomposition limit; needs K, C^2 data near 0 and f(.,.,0) = 0
    if not meta.satisfies_K:
        v["t2"] = Verdict("fails", "f not declared to satisfy K")
    elif f.grad_x_fn is None or f.hess_x_fn is None:
        v["t2"] = Verdict("fails", "needs grad_x and hess_x near 0")
    elif not vanishes_at_zero(f):
        v["t2"] = Verdict("fails", "f(.,.,0) != 0 at spot check")
    else:
        v["t2"] = Verdict("applies")

    # t3: normalized-increment LLN
    if not meta.satisfies_K:
        v["t3"] = Verdict("fails", "f not declared to satisfy K")
    elif not meta.locally_equicontinuous_x:
        v["t3"] = Verdict("fails", "f not locally equicontinuous in x")
    elif model.flags.continuous:
        v["t3"] = Verdict("applies")
    elif meta.growth_p < 2:
        v["t3"] = Verdict("applies")
    else:
        v["t3"] = Verdict("fails", f"p = {meta.growth_p:g} >= 2 with jumps")

    # t4: CLT for the raw-increment functional; needs M_1
    if not meta.satisfies_M1:
        v["t4"] = Verdict("fails", "f not declared to satisfy M_1")
    elif meta.time_alpha is not None and meta.time_alpha <= 0.5:
        v["t4"] = Verdict("fails", "M_1 needs time-Hoelder exponent > 1/2")
    elif not (vanishes_at_zero(f) and grad_x_vanishes_at_zero(f)):
        v["t4"] = Verdict("fails", "M_1 spot check: f or grad_x f nonzero at x = 0")
    else:
        v["t4"] = Verdict("applies")

    # t5: CLT for the normalized functional, even f
    if not f.is_even:
        v["t5"] = Verdict("fails", "f not even in x (componentwise)")
    elif not parity_ok:
        v["t5"] = Verdict("fails", "declared parity fails spot check")
    else:
        v["t5"] = _smoothness_route(model, f) or Verdict("applies")

    # t6: general-f CLT; needs b' = 0 and sigma~ = 0 on top of the route
    blocked = _smoothness_route(model, f)
    if blocked is not None:
        v["t6"] = blocked
    elif not model.flags.bprime_zero:
        v["t6"] = Verdict("fails", "b' not declared zero")
    elif not model.flags.sigmatilde_zero:
        v["t6"] = Verdict("fails", "sigma~ not declared zero")
    else:
        v["t6"] = Verdict("applies")

    return ApplicabilityReport(verdicts=v)
