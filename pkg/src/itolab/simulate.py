"""Euler simulation of (X, sigma) on a regular grid refined by exact jump times.

The path is advanced on *segments*: the regular grid nodes, split wherever a
jump (of X or of sigma) falls strictly inside a step. Jumps are applied at
their exact sampled times; a step's stored Brownian increment is the sum of
its segment increments, so grid-node values include every jump in the
preceding step.

Randomness contract (all streams derive from one master seed, see
:mod:`itolab.rng`):

1. ``(seed, JUMP_MARKS)``       Poisson jump times of X via exponential
                                interarrivals until the horizon is passed,
                                then all Poisson jump sizes in one block.
2. ``(seed, SIGMA_JUMP_MARKS)`` same protocol for Poisson sigma jumps.
3. ``(seed, STEP_NOISE)``       one standard-normal block of shape
                                (n_segments, m + l); the first m columns
                                scaled by sqrt(segment duration) give dW,
                                the rest dV.

The segment layout is fixed once the jump times are known, so the same
(model, grid, seed) triple reproduces the path bit-for-bit regardless of
how many worker processes run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import rng
from .model import CoefficientError, JumpSpec, ModelSpec, SigmaJumpSchedule

__all__ = ["TimeGrid", "JumpEvent", "PathRecord", "SimulationError",
           "simulate_path", "subsample"]


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Regular grid: n steps of length horizon / n."""

    horizon: float
    n: int

    def __post_init__(self):
        if self.horizon <= 0 or self.n < 1:
            raise ValueError("need horizon > 0 and n >= 1")

    @property
    def delta(self) -> float:
        return self.horizon / self.n

    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.delta


@dataclass(frozen=True)
class JumpEvent:
    """One jump of X: exact time, size, pre-jump state and the volatility
    matrix on both sides (they differ only if sigma itself jumps there).
    ``host_step`` is the index i with (i-1) delta < time <= i delta."""

    time: float
    size: np.ndarray
    x_pre: np.ndarray
    sigma_pre: np.ndarray
    sigma_post: np.ndarray
    host_step: int


@dataclass(frozen=True)
class PathRecord:
    """One simulated trajectory with everything downstream modules need."""

    grid: TimeGrid
    x: np.ndarray        # (n+1, d) node values of X
    sigma: np.ndarray    # (n+1, d, m) node values of sigma
    dW: np.ndarray       # (n, m) per-step Brownian increments
    dV: np.ndarray       # (n, l) per-step independent Brownian increments
    jump_ledger: tuple   # JumpEvent, ordered by time

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.sigma.shape[2]

    def increments(self) -> np.ndarray:
        return np.diff(self.x, axis=0)

    def jump_sum_per_step(self) -> np.ndarray:
        """(n, d) sum of jump sizes hosted in each step."""
        out = np.zeros((self.n, self.d))
        for ev in self.jump_ledger:
            out[ev.host_step - 1] += ev.size
        return out

    def continuous_increments(self) -> np.ndarray:
        """Step increments with the hosted jumps removed."""
        if not self.jump_ledger:
            return self.increments()
        return self.increments() - self.jump_sum_per_step()

    def sigma_outer(self) -> np.ndarray:
        """(n+1, d, d) values of sigma sigma^T at the nodes."""
        return np.einsum("idk,iek->ide", self.sigma, self.sigma)

    def brownian_variance_band(self) -> np.ndarray:
        """Per-component sample variance of dW / sqrt(delta); the sanity
        band [0.5, 1.5] applies for n >= 256."""
        return np.var(self.dW / math.sqrt(self.grid.delta), axis=0)


def _draw_poisson_jumps(gen: np.random.Generator, spec: JumpSpec, horizon: float):
    times: list[float] = []
    if spec.intensity > 0:
        t = gen.exponential(1.0 / spec.intensity)
        while t <= horizon:
            times.append(t)
            t += gen.exponential(1.0 / spec.intensity)
    if times:
        sizes = spec.size_law.sample(gen, len(times))
    else:
        sizes = np.zeros((0, spec.dim))
    return np.asarray(times), sizes


def _merge_jumps(poisson_times, poisson_sizes, scheduled, horizon, what):
    times = list(poisson_times)
    sizes = list(poisson_sizes)
    for t, s in scheduled:
        if t > horizon:
            raise SimulationError(f"scheduled {what} jump at t={t} beyond horizon {horizon}")
        times.append(t)
        sizes.append(np.asarray(s, dtype=float))
    if not times:
        return np.zeros(0), []
    order = np.argsort(times, kind="stable")
    times = np.asarray(times)[order]
    sizes = [sizes[i] for i in order]
    if np.any(np.diff(times) <= 0):
        raise SimulationError(f"coinciding {what} jump times {times}")
    return times, sizes


def _check_finite(arr, what, t):
    if not np.all(np.isfinite(arr)):
        raise SimulationError(f"non-finite {what} at t={t!r}: {np.asarray(arr)!r}")


def simulate_path(model: ModelSpec, grid: TimeGrid, seed: int) -> PathRecord:
    """Simulate one joint (X, sigma) trajectory; deterministic given seed."""
    d, m, l = model.d, model.m, model.l
    nodes = grid.nodes()
    horizon = nodes[-1]

    # -- jump layout ---------------------------------------------------------
    if model.jumps is not None:
        gen_j = rng.generator(seed, rng.JUMP_MARKS)
        pt, ps = _draw_poisson_jumps(gen_j, model.jumps, horizon)
        x_jump_times, x_jump_sizes = _merge_jumps(pt, ps, model.jumps.scheduled,
                                                  horizon, "X")
    else:
        x_jump_times, x_jump_sizes = np.zeros(0), []

    vol_jumps = model.vol.jumps
    if isinstance(vol_jumps, JumpSpec):
        gen_sj = rng.generator(seed, rng.SIGMA_JUMP_MARKS)
        spt, sps = _draw_poisson_jumps(gen_sj, vol_jumps, horizon)
        sps = [s.reshape(d, m) for s in sps]
        s_jump_times, s_jump_sizes = _merge_jumps(spt, sps, vol_jumps.scheduled,
                                                  horizon, "sigma")
        s_jump_sizes = [np.asarray(s, dtype=float).reshape(d, m) for s in s_jump_sizes]
    elif isinstance(vol_jumps, SigmaJumpSchedule):
        s_jump_times, s_jump_sizes = _merge_jumps(
            np.zeros(0), [], vol_jumps.scheduled, horizon, "sigma")
        s_jump_sizes = [np.asarray(s, dtype=float).reshape(d, m) for s in s_jump_sizes]
    else:
        s_jump_times, s_jump_sizes = np.zeros(0), []

    # -- segment layout --------------------------------------------------------
    ends = np.union1d(nodes[1:], np.concatenate([x_jump_times, s_jump_times]))
    starts = np.concatenate([[0.0], ends[:-1]])
    dur = ends - starts
    n_seg = len(ends)

    x_jadd = np.zeros((n_seg, d))
    if len(x_jump_times):
        pos = np.searchsorted(ends, x_jump_times)
        for p, s in zip(pos, x_jump_sizes):
            x_jadd[p] += s
    s_jadd = np.zeros((n_seg, d, m))
    if len(s_jump_times):
        spos = np.searchsorted(ends, s_jump_times)
        for p, s in zip(spos, s_jump_sizes):
            s_jadd[p] += s

    # -- noise -------------------------------------------------------------------
    gen_w = rng.generator(seed, rng.STEP_NOISE)
    z = gen_w.standard_normal((n_seg, m + l))
    sq = np.sqrt(dur)[:, None]
    dW_seg = z[:, :m] * sq
    dV_seg = z[:, m:] * sq

    # -- sigma path over segments --------------------------------------------------
    vol = model.vol
    try:
        if not vol.state_dependent:
            bt = vol.drift.at_times(starts).reshape(n_seg, d, m)
            st = vol.vol_of_vol.at_times(starts).reshape(n_seg, d, m, m)
            vt = vol.indep_loading.at_times(starts).reshape(n_seg, d, m, l)
            inc = bt * dur[:, None, None]
            inc += np.einsum("sdmk,sk->sdm", st, dW_seg)
            if l:
                inc += np.einsum("sdml,sl->sdm", vt, dV_seg)
            sig_end = vol.sigma0 + np.cumsum(inc + s_jadd, axis=0)
            _check_finite(sig_end, "sigma", "path")
        else:
            sig_end = np.empty((n_seg, d, m))
            cur = vol.sigma0
            for k in range(n_seg):
                t0 = starts[k]
                b = np.asarray(vol.drift(t0, cur), dtype=float)
                s3 = np.asarray(vol.vol_of_vol(t0, cur), dtype=float)
                v3 = np.asarray(vol.indep_loading(t0, cur), dtype=float)
                nxt = cur + b * dur[k] + s3 @ dW_seg[k]
                if l:
                    nxt = nxt + v3 @ dV_seg[k]
                nxt = nxt + s_jadd[k]
                _check_finite(nxt, "sigma", ends[k])
                sig_end[k] = nxt
                cur = nxt
    except CoefficientError as exc:
        raise SimulationError(str(exc)) from exc
    sig_start = np.concatenate([vol.sigma0[None], sig_end[:-1]], axis=0)

    # -- X path over segments ------------------------------------------------------
    diffusion = np.einsum("sdm,sm->sd", sig_start, dW_seg)
    if not model.drift.state_dependent:
        bvals = model.bprime_at_times(starts).reshape(n_seg, d)
        cont = bvals * dur[:, None] + diffusion
        x_end = model.x0 + np.cumsum(cont + x_jadd, axis=0)
        _check_finite(x_end, "X", "path")
    else:
        x_end = np.empty((n_seg, d))
        cur = model.x0
        for k in range(n_seg):
            b = np.asarray(model.bprime(starts[k], cur), dtype=float)
            nxt = cur + b * dur[k] + diffusion[k] + x_jadd[k]
            _check_finite(nxt, "X", ends[k])
            x_end[k] = nxt
            cur = nxt

    # -- node extraction ----------------------------------------------------------
    node_pos = np.searchsorted(ends, nodes[1:])
    x = np.concatenate([model.x0[None], x_end[node_pos]], axis=0)
    sigma = np.concatenate([vol.sigma0[None], sig_end[node_pos]], axis=0)

    step_of_seg = np.searchsorted(nodes, ends, side="left")
    first_seg = np.searchsorted(step_of_seg, np.arange(1, grid.n + 1), side="left")
    dW = np.add.reduceat(dW_seg, first_seg, axis=0)
    dV = (np.add.reduceat(dV_seg, first_seg, axis=0)
          if l else np.zeros((grid.n, 0)))

    # -- ledger ---------------------------------------------------------------
    ledger = []
    if len(x_jump_times):
        pos = np.searchsorted(ends, x_jump_times)
        for p, s in zip(pos, x_jump_sizes):
            s = np.asarray(s, dtype=float)
            if not np.any(s != 0.0):
                raise SimulationError(f"zero jump size drawn at t={ends[p]}")
            ledger.append(JumpEvent(
                time=float(ends[p]),
                size=s,
                x_pre=x_end[p] - x_jadd[p],
                sigma_pre=sig_end[p] - s_jadd[p],
                sigma_post=sig_end[p].copy(),
                host_step=int(step_of_seg[p]),
            ))

    return PathRecord(grid=grid, x=x, sigma=sigma, dW=dW, dV=dV,
                      jump_ledger=tuple(ledger))


def subsample(path: PathRecord, factor: int) -> PathRecord:
    """Restrict a path to every factor-th node (factor a power of two
    dividing n). Brownian increments aggregate by summation; the jump ledger
    is re-hosted to the coarse steps."""
    if factor < 1 or factor & (factor - 1):
        raise ValueError("factor must be a power of two")
    if path.n % factor:
        raise ValueError(f"factor {factor} does not divide n = {path.n}")
    if factor == 1:
        return path
    n_coarse = path.n // factor
    grid = TimeGrid(path.grid.horizon, n_coarse)
    dW = path.dW.reshape(n_coarse, factor, path.dW.shape[1]).sum(axis=1)
    dV = path.dV.reshape(n_coarse, factor, path.dV.shape[1]).sum(axis=1)
    ledger = tuple(
        JumpEvent(time=ev.time, size=ev.size, x_pre=ev.x_pre,
                  sigma_pre=ev.sigma_pre, sigma_post=ev.sigma_post,
                  host_step=(ev.host_step - 1) // factor + 1)
        for ev in path.jump_ledger
    )
    return PathRecord(grid=grid, x=path.x[::factor], sigma=path.sigma[::factor],
                      dW=dW, dV=dV, jump_ledger=ledger)
