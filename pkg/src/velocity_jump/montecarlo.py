"""Event-driven Monte Carlo of the velocity-jump particle.

Holding times are exact ``Exp(lam)`` draws and positions are integrated
exactly along each straight segment, so the only error is statistical.

Random streams come from numpy's Philox4x64-10 counter-based generator keyed
by ``SeedSequence(seed, spawn_key=(chunk,))``.  Particles are split into
fixed-size chunks and each chunk owns one stream, so results are
bit-identical for any number of workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp

from .model import ModelConfig, VelocityTable

__all__ = [
    "ParticleState",
    "RunConfig",
    "MomentEstimate",
    "Histogram",
    "stream",
    "step_to",
    "simulate_batch",
    "sample_positions",
    "empirical_density",
    "second_moment_closed_form",
    "second_moment_ode",
    "velocity_autocorrelation",
]


def stream(seed: int, chunk: int) -> np.random.Generator:
    """Independent generator for ``chunk`` under the 64-bit ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(chunk),))))


@dataclass(frozen=True)
class ParticleState:
    """Position, velocity state (0-based index into ``e_1..e_2n``) and clock."""

    position: np.ndarray
    state: int
    t: float = 0.0


def step_to(p: ParticleState, t_target: float, cfg: ModelConfig, rng: np.random.Generator,
            max_jumps: Optional[int] = None) -> ParticleState:
    """Advance one particle to ``t_target``.

    Memorylessness of the holding time means a fresh ``Exp(lam)`` draw is
    valid from ``p.t``.  ``max_jumps=0`` conditions on no jump (ballistic
    motion), which is useful for checking the integration.
    """
    if t_target < p.t:
        raise ValueError(f"cannot step backwards from {p.t} to {t_target}")
    dirs = VelocityTable(cfg.n).directions
    size = 2 * cfg.n
    pos = np.array(p.position, dtype=float)
    state, t = p.state, p.t
    jumps = 0
    while True:
        hold = rng.exponential(1.0 / cfg.lam)
        if t + hold >= t_target or (max_jumps is not None and jumps >= max_jumps):
            pos += cfg.v * (t_target - t) * dirs[state]
            return ParticleState(pos, state, float(t_target))
        pos += cfg.v * hold * dirs[state]
        t += hold
        state = (state + 1 + int(rng.integers(size - 1))) % size
        jumps += 1


@dataclass(frozen=True)
class RunConfig:
    """Ensemble run: ``N`` particles observed on ``t_grid``.

    ``initial_state`` is ``"uniform"`` (stationary law on the states) or a
    0-based state index.  Initial positions are the origin, or isotropic
    Gaussian with standard deviation ``sigma0`` when it is positive.
    """

    cfg: ModelConfig
    N: int
    t_grid: Tuple[float, ...]
    seed: int = 0
    initial_state: Union[str, int] = "uniform"
    sigma0: float = 0.0
    chunk_size: int = 8192
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "t_grid", tuple(float(t) for t in self.t_grid))
        if self.N < 1:
            raise ValueError("ensemble size N must be at least 1")
        t = np.asarray(self.t_grid)
        if t.size == 0 or (t < 0).any() or (np.diff(t) <= 0).any():
            raise ValueError("t_grid must be nonempty, nonnegative and strictly increasing")
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.initial_state != "uniform" and not (0 <= int(self.initial_state) < 2 * self.cfg.n):
            raise ValueError(f"initial state {self.initial_state} outside 0..{2 * self.cfg.n - 1}")
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be nonnegative")

    def chunks(self) -> List[Tuple[int, int]]:
        return [(c, min(self.chunk_size, self.N - c * self.chunk_size))
                for c in range(math.ceil(self.N / self.chunk_size))]


def _run_chunk(rc: RunConfig, chunk: int, count: int, keep_positions: bool = False):
    cfg = rc.cfg
    n, size = cfg.n, 2 * cfg.n
    rng = stream(rc.seed, chunk)
    dirs = VelocityTable(n).directions
    if rc.initial_state == "uniform":
        state = rng.integers(size, size=count)
    else:
        state = np.full(count, int(rc.initial_state))
    pos = rc.sigma0 * rng.standard_normal((count, n)) if rc.sigma0 > 0 else np.zeros((count, n))
    c0 = dirs[state] * cfg.v
    clock = np.zeros(count)
    next_jump = rng.exponential(1.0 / cfg.lam, size=count)
    T = len(rc.t_grid)
    s1, s2, s4 = np.zeros((T, n)), np.zeros((T, n)), np.zeros((T, n))
    vacf, vacf2 = np.zeros((T, n)), np.zeros((T, n))
    counts = np.zeros((T, size))
    snapshots = []
    for ti, t in enumerate(rc.t_grid):
        while True:
            idx = np.flatnonzero(next_jump < t)
            if idx.size == 0:
                break
            pos[idx] += cfg.v * (next_jump[idx] - clock[idx])[:, None] * dirs[state[idx]]
            clock[idx] = next_jump[idx]
            state[idx] = (state[idx] + 1 + rng.integers(size - 1, size=idx.size)) % size
            next_jump[idx] += rng.exponential(1.0 / cfg.lam, size=idx.size)
        x = pos + cfg.v * (t - clock)[:, None] * dirs[state]
        x2 = x * x
        s1[ti], s2[ti], s4[ti] = x.sum(0), x2.sum(0), (x2 * x2).sum(0)
        cc = c0 * (dirs[state] * cfg.v)
        vacf[ti], vacf2[ti] = cc.sum(0), (cc * cc).sum(0)
        counts[ti] = np.bincount(state, minlength=size)
        if keep_positions:
            snapshots.append(x.copy())
    return (s1, s2, s4, vacf, vacf2, counts), snapshots


def _fsum_stack(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Correctly rounded elementwise sum, hence independent of the merge order."""
    stacked = np.stack(parts)
    flat = stacked.reshape(len(parts), -1)
    return np.array([math.fsum(col) for col in flat.T]).reshape(stacked.shape[1:])


@dataclass(frozen=True)
class MomentEstimate:
    """Ensemble moments on ``t_grid``; arrays are ``(len(t_grid), n)`` unless noted."""

    t_grid: Tuple[float, ...]
    N: int
    mean: np.ndarray
    se_mean: np.ndarray
    m2: np.ndarray
    se_m2: np.ndarray
    vacf: np.ndarray
    se_vacf: np.ndarray
    state_counts: np.ndarray  # (len(t_grid), 2n)

    def variance(self) -> np.ndarray:
        return self.m2 - self.mean ** 2


def _standard_error(sum1: np.ndarray, sum2: np.ndarray, N: int) -> np.ndarray:
    if N < 2:
        return np.full_like(sum1, np.nan)
    var = np.maximum(sum2 - sum1 ** 2 / N, 0.0) / (N - 1)
    return np.sqrt(var / N)


def simulate_batch(rc: RunConfig) -> MomentEstimate:
    """Run the ensemble and reduce it to moment estimates."""
    chunks = rc.chunks()
    if rc.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=rc.workers) as pool:
            results = list(pool.map(lambda cc: _run_chunk(rc, *cc)[0], chunks))
    else:
        results = [_run_chunk(rc, c, count)[0] for c, count in chunks]
    s1, s2, s4, vacf, vacf2, counts = (_fsum_stack([r[i] for r in results]) for i in range(6))
    N = rc.N
    return MomentEstimate(
        t_grid=rc.t_grid,
        N=N,
        mean=s1 / N,
        se_mean=_standard_error(s1, s2, N),
        m2=s2 / N,
        se_m2=_standard_error(s2, s4, N),
        vacf=vacf / N,
        se_vacf=_standard_error(vacf, vacf2, N),
        state_counts=counts,
    )


def sample_positions(rc: RunConfig) -> List[np.ndarray]:
    """Particle positions at every time of ``t_grid`` (one ``(N, n)`` array per time)."""
    per_chunk = [_run_chunk(rc, c, count, keep_positions=True)[1] for c, count in rc.chunks()]
    return [np.concatenate([snap[ti] for snap in per_chunk]) for ti in range(len(rc.t_grid))]


@dataclass(frozen=True)
class Histogram:
    """Normalized histogram: ``mass`` per bin divided by bin volume integrates to 1."""

    edges: Tuple[np.ndarray, ...]
    density: np.ndarray

    @property
    def centers(self) -> Tuple[np.ndarray, ...]:
        return tuple(0.5 * (e[1:] + e[:-1]) for e in self.edges)

    @property
    def bin_volume(self) -> float:
        return float(np.prod([e[1] - e[0] for e in self.edges]))

    def total(self) -> float:
        return float(self.density.sum() * self.bin_volume)

    def variance(self) -> float:
        """Variance of a one-dimensional histogram with Sheppard's bin-width correction."""
        if len(self.edges) != 1:
            raise ValueError("variance is defined for marginal histograms")
        c = self.centers[0]
        w = self.density * self.bin_volume
        mean = np.sum(c * w)
        h = self.edges[0][1] - self.edges[0][0]
        return float(np.sum((c - mean) ** 2 * w) - h * h / 12)


def empirical_density(rc: RunConfig, t: float, bins: int = 64, half_width: Optional[float] = None,
                      marginal: Optional[int] = None) -> Histogram:
    """Histogram of positions at time ``t`` on ``[-half_width, half_width]^n``.

    The default half width is the reach ``v t`` of a particle started at the
    origin.  ``marginal=a`` histograms axis ``a`` only.  Any sample outside the
    binning range raises ``ValueError``: either the bins are mis-sized or the
    finite-speed bound is violated.
    """
    if half_width is None:
        half_width = rc.cfg.v * t * (1 + 1e-12) + 1e-300
    positions = sample_positions(replace(rc, t_grid=(t,)))[0]
    if marginal is not None:
        positions = positions[:, [marginal]]
    outside = np.abs(positions) > half_width
    if outside.any():
        raise ValueError(f"{int(outside.any(axis=1).sum())} samples fall outside +-{half_width:g}")
    dim = positions.shape[1]
    counts, edges = np.histogramdd(positions, bins=[bins] * dim, range=[(-half_width, half_width)] * dim)
    vol = float(np.prod([e[1] - e[0] for e in edges]))
    return Histogram(tuple(edges), counts / (len(positions) * vol))


def second_moment_closed_form(cfg: ModelConfig, t) -> np.ndarray:
    """``E[x_a(t)^2] = (2 v^2 / n)(t/beta - (1 - exp(-beta t))/beta^2)`` from a stationary start at the origin.

    Follows from integrating the stationary velocity autocorrelation
    ``(v^2/n) exp(-beta t)``, ``beta = 2n lam/(2n-1)``.
    """
    t = np.asarray(t, dtype=float)
    beta = cfg.switch_rate
    return (2 * cfg.v ** 2 / cfg.n) * (t / beta - (1 - np.exp(-beta * t)) / beta ** 2)


def velocity_autocorrelation(cfg: ModelConfig, t) -> np.ndarray:
    """Stationary ``E[C_a(xi_t) C_a(xi_0)] = (v^2/n) exp(-beta t)``."""
    return cfg.v ** 2 / cfg.n * np.exp(-cfg.switch_rate * np.asarray(t, dtype=float))


def second_moment_ode(cfg: ModelConfig, t_grid, axis: int = 0, weights=None,
                      rtol: float = 1e-12, atol: float = 1e-14) -> np.ndarray:
    """``E[x_axis(t)^2]`` by integrating the state-resolved moment equations.

    With ``m_p[i] = E[x^p ; xi = i]`` the forward equations are
    ``m_p' = Q^T m_p + p * c * m_{p-1}`` where ``c_i`` is the velocity
    component of state ``i`` and ``Q`` the jump generator.
    """
    size = 2 * cfg.n
    Q = np.full((size, size), cfg.lam / (size - 1))
    np.fill_diagonal(Q, -cfg.lam)
    c = VelocityTable(cfg.n).velocities(cfg.v)[:, axis]
    w = np.full(size, 1.0 / size) if weights is None else np.asarray(weights, dtype=float)

    def rhs(_, y):
        m0, m1, m2 = y[:size], y[size:2 * size], y[2 * size:]
        return np.concatenate([Q.T @ m0, Q.T @ m1 + c * m0, Q.T @ m2 + 2 * c * m1])

    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    y0 = np.concatenate([w, np.zeros(size), np.zeros(size)])
    sol = solve_ivp(rhs, (0.0, float(t_grid.max())), y0, t_eval=t_grid, method="DOP853",
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"moment ODE integration failed: {sol.message}")
    return sol.y[2 * size:].sum(axis=0)
