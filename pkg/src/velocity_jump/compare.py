"""Cross-checks between the symbolic, spectral, expansion and Monte Carlo routes."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import expansion, spectral
from .algebra import Monomial, det_bareiss, det_rank_one
from .model import (
    ModelConfig,
    build_L,
    det_model,
    expected_leading_operator,
    is_direction_symmetric,
    is_even_in_v,
    perturbation_series,
    printed_closed_form,
    reconcile_published,
)
from .montecarlo import RunConfig, simulate_batch

__all__ = [
    "CompareSpec",
    "ConvergenceTable",
    "UnderResolvedError",
    "VerifyReport",
    "fit_loglog_slope",
    "run_compare",
    "reference_vs_montecarlo",
    "verify",
]


class UnderResolvedError(ValueError):
    """The spectral grid does not resolve the density."""


def fit_loglog_slope(eps, errors) -> Tuple[float, float]:
    """Least-squares slope of ``log(error)`` against ``log(eps)`` and the RMS residual."""
    x, y = np.log(np.asarray(eps, dtype=float)), np.log(np.asarray(errors, dtype=float))
    if len(x) < 2:
        raise ValueError("slope fit needs at least two points")
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


@dataclass(frozen=True)
class CompareSpec:
    n: int = 3
    eps_list: Tuple[float, ...] = (0.4, 0.2, 0.1)
    k_list: Tuple[int, ...] = (0, 1)
    t_eval: float = 1.0
    grid: spectral.SpectralGrid = spectral.SpectralGrid(3, 16.0, 32)
    init: spectral.InitialCondition = spectral.InitialCondition("gaussian", 1.0)
    split: str = "slow"
    resolution_tol: float = 1e-6
    mc: Optional[RunConfig] = None

    def __post_init__(self):
        if len(self.eps_list) < 3:
            raise ValueError("eps_list needs at least three values for a slope fit")
        if any(not 0 < e < 1 for e in self.eps_list):
            raise ValueError("every eps must lie in (0, 1)")
        if list(self.eps_list) != sorted(self.eps_list, reverse=True):
            raise ValueError("eps_list must be decreasing")
        if self.grid.n != self.n:
            raise ValueError("grid dimension differs from n")


@dataclass
class ConvergenceTable:
    rows: List[Tuple[float, int, float, float]] = field(default_factory=list)
    slopes: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    t: float = 1.0

    def errors(self, k: int, norm: str = "L2") -> List[float]:
        col = 2 if norm == "L2" else 3
        return [r[col] for r in self.rows if r[1] == k]

    def error(self, eps: float, k: int) -> float:
        for r in self.rows:
            if r[0] == eps and r[1] == k:
                return r[2]
        raise KeyError((eps, k))

    def fit(self):
        for k in sorted({r[1] for r in self.rows}):
            eps = [r[0] for r in self.rows if r[1] == k]
            self.slopes[k] = fit_loglog_slope(eps, self.errors(k))
        return self

    def csv_rows(self) -> List[List[str]]:
        out = [["eps", "k", "t", "L2_error", "Linf_error", "fitted_slope", "fit_residual"]]
        for eps, k, l2, linf in self.rows:
            slope, resid = self.slopes.get(k, (math.nan, math.nan))
            out.append([repr(eps), str(k), repr(self.t), repr(l2), repr(linf), repr(slope), repr(resid)])
        return out


def _check_resolution(values: np.ndarray, indices: np.ndarray, grid, tol: float, what: str):
    edge = (np.abs(np.fft.fftfreq(grid.m, 1.0 / grid.m))[indices].max(axis=1) == grid.m // 2)
    ratio = float(np.abs(values[edge]).max() / abs(values[~indices.any(axis=1)][0]))
    if ratio > tol:
        raise UnderResolvedError(
            f"{what}: outermost mode shell holds {ratio:.2e} of the mass, above the decay "
            f"threshold {tol:.0e}; add modes or smooth the initial data")


def run_compare(spec: CompareSpec, workers: int = 1) -> ConvergenceTable:
    """Errors of the truncated expansion against the reference solver, with slope fits."""
    grid, init = spec.grid, spec.init
    _check_resolution(init.spectrum(grid, grid.mode_indices("axes")), grid.mode_indices("axes"),
                      grid, spec.resolution_tol, "initial condition")
    series = perturbation_series(spec.n)
    stack = expansion.build_stack(series, grid, init, max(spec.k_list), split=spec.split)
    start = spectral.ModeSystemState.initial(grid, init)
    table = ConvergenceTable(t=spec.t_eval)
    for eps in spec.eps_list:
        cfg = ModelConfig(spec.n, eps=eps)
        ref = spectral.density(spectral.evolve(start, spec.t_eval, cfg, workers=workers))
        if eps == min(spec.eps_list):
            _check_resolution(ref.values, ref.indices, grid, spec.resolution_tol,
                              f"reference at eps={eps}, t={spec.t_eval}")
        for k in spec.k_list:
            l2, linf = (ref - expansion.assemble(stack, eps, k, spec.t_eval)).norms()
            table.rows.append((eps, k, l2, linf))
    return table.fit()


def reference_vs_montecarlo(rc: RunConfig, grid: spectral.SpectralGrid) -> List[dict]:
    """Per-axis variance of the spectral solution against the Monte Carlo ensemble.

    Both start from the same isotropic Gaussian (``rc.sigma0``) with the
    stationary state law.
    """
    init = spectral.InitialCondition("gaussian", rc.sigma0) if rc.sigma0 > 0 else spectral.InitialCondition("delta")
    est = simulate_batch(rc)
    state = spectral.ModeSystemState.initial(grid, init, subset="axes")
    out = []
    t_prev = 0.0
    for ti, t in enumerate(rc.t_grid):
        if t > t_prev:
            state = spectral.evolve(state, t - t_prev, rc.cfg)
            t_prev = t
        mom = spectral.moments(spectral.density(state))
        var_mc = est.variance()[ti]
        for a in range(rc.cfg.n):
            out.append({"t": t, "axis": a, "var_ref": float(mom.variance[a]), "var_mc": float(var_mc[a]),
                        "se_mc": float(est.se_m2[ti, a]),
                        "rel_diff": float(abs(var_mc[a] - mom.variance[a]) / mom.variance[a])})
    return out


@dataclass
class VerifyReport:
    n: int
    checks: List[Tuple[str, bool, str]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    reconciliations: Dict[str, object] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    def check(self, name: str, passed: bool, detail: str = ""):
        self.checks.append((name, bool(passed), detail))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "ok": self.ok,
            "checks": [{"name": c, "passed": p, "detail": d} for c, p, d in self.checks],
            "notes": self.notes,
            "reconciliation_counts": {k: r.counts() for k, r in self.reconciliations.items()},
        }


def verify(n: int) -> VerifyReport:
    """Run the symbolic invariants for dimension ``n``.

    Hard checks decide ``report.ok``; disagreements with published
    coefficients are recorded as notes and reconciliation tables.
    """
    if not 1 <= n <= 4:
        raise ValueError("verify supports 1 <= n <= 4")
    rep = VerifyReport(n)
    L = build_L(n)
    elim = det_bareiss(L)
    closed = det_rank_one([L[i][i] for i in range(2 * n)], L[0][1])
    rep.check("elimination determinant equals rank-one identity", elim == closed)
    det = det_model(n)
    rep.check("determinant even in v", is_even_in_v(det))
    rep.check("determinant symmetric under d_a -> -d_a", is_direction_symmetric(det))
    rep.check("determinant invariant under axis relabeling",
              all(det.permute_axes(p) == det for p in itertools.permutations(range(n))))
    rep.check("total (s, d) degree at most 2n", det.max_sd_degree() <= 2 * n)
    series = perturbation_series(n)
    P0 = expected_leading_operator(n)
    rep.check("leading operator s - (2n-1)/(2n^2) Lap", series.P[0] == P0, str(series.P[0]))
    rep.check("series has eps^0 .. eps^(4n-2) only", len(series.P) - 1 <= 2 * n - 1)
    rep.check("every P_j symmetric under d_a -> -d_a",
              all(is_direction_symmetric(P) for P in series.P))
    rep.notes.append(f"P_0 = {series.P[0]}")
    rep.notes.append(f"normalization (eps^0 coefficient of d/dt) = {series.normalization}")
    quoted = printed_closed_form(n)
    matching = printed_closed_form(n, Fraction(-1, 2 * n - 1))
    rep.check("closed form with sum coefficient -lambda/(2n-1) equals determinant", matching == det)
    rep.notes.append("closed form with sum coefficient +2n*lambda/(2n-1): "
                     + ("agrees" if quoted == det else "disagrees") + " with the determinant")
    if n == 3:
        for what in ("det", "series"):
            report = reconcile_published(3, what)
            rep.reconciliations[what] = report
            rep.notes.append(f"published {what} comparison: {report.counts()}")
        lead = rep.reconciliations["det"].lookup(Monomial(1, (0, 0, 0)))
        rep.check("eps^-10 d/dt coefficient 7776/3125", lead.computed == Fraction(7776, 3125))
    return rep
