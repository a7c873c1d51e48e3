"""Concrete model objects: configuration, velocities, the operator matrix and its determinant."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from typing import Dict, List, Optional, Tuple

import numpy as np

from .algebra import (
    Monomial,
    OperatorPoly,
    PerturbationSeries,
    det_bareiss,
    det_rank_one,
    scale_and_center,
)

__all__ = [
    "ModelConfig",
    "VelocityTable",
    "ReconciliationRow",
    "ReconciliationReport",
    "axis_of",
    "sign_of",
    "build_L",
    "det_model",
    "perturbation_series",
    "printed_closed_form",
    "reconcile_published",
]


@dataclass(frozen=True)
class ModelConfig:
    """Parameters of the velocity-jump motion.

    If ``eps`` is given it overrides ``v`` and ``lam`` with the diffusive
    scaling ``v = 1/eps``, ``lam = 1/eps**2``.
    """

    n: int
    v: float = 1.0
    lam: float = 1.0
    eps: Optional[float] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"dimension n must be a positive integer, got {self.n}")
        if self.eps is not None:
            if not self.eps > 0:
                raise ValueError(f"eps must be positive, got {self.eps}")
            object.__setattr__(self, "v", 1.0 / self.eps)
            object.__setattr__(self, "lam", 1.0 / self.eps ** 2)
        if not self.v > 0:
            raise ValueError(f"speed v must be positive, got {self.v}")
        if not self.lam > 0:
            raise ValueError(f"jump rate lam must be positive, got {self.lam}")

    @property
    def n_states(self) -> int:
        return 2 * self.n

    @property
    def switch_rate(self) -> float:
        """Decay rate ``2n lam / (2n-1)`` of the velocity autocorrelation."""
        return 2 * self.n * self.lam / (2 * self.n - 1)

    @property
    def diffusion(self) -> float:
        """Limit diffusion coefficient ``v^2 / (n * switch_rate)``."""
        return self.v ** 2 / (self.n * self.switch_rate)

    def scaled(self, eps: float) -> "ModelConfig":
        return replace(self, eps=eps)


def axis_of(i: int) -> int:
    """Spatial axis (0-based) moved along in state ``i`` (0-based)."""
    return i // 2


def sign_of(i: int) -> int:
    """+1 for states pointing along ``+b_a``, -1 for ``-b_a`` (0-based ``i``)."""
    return 1 if i % 2 == 0 else -1


@dataclass(frozen=True)
class VelocityTable:
    """Unit directions ``e_1..e_2n`` with ``e_{2a-1} = +b_a`` and ``e_{2a} = -b_a``."""

    n: int

    @property
    def directions(self) -> np.ndarray:
        e = np.zeros((2 * self.n, self.n))
        for i in range(2 * self.n):
            e[i, axis_of(i)] = sign_of(i)
        return e

    def velocities(self, v: float) -> np.ndarray:
        return v * self.directions


def build_L(cfg: ModelConfig | int, symbolic: bool = True) -> List[List[OperatorPoly]]:
    """The operator matrix acting on ``(f_1, ..., f_2n)``.

    Diagonal ``s + sign(i) v d_axis(i) + lambda``, off-diagonal ``-lambda/(2n-1)``.
    With ``symbolic=False`` the numeric ``v`` and ``lam`` of ``cfg`` are
    substituted; they must then be exactly representable as rationals.
    """
    n = cfg if isinstance(cfg, int) else cfg.n
    if symbolic:
        v, lam = OperatorPoly.v(n), OperatorPoly.lam(n)
    else:
        v = OperatorPoly.const(n, Fraction(cfg.v).limit_denominator(10 ** 12))
        lam = OperatorPoly.const(n, Fraction(cfg.lam).limit_denominator(10 ** 12))
    s = OperatorPoly.s(n)
    off = lam * Fraction(-1, 2 * n - 1)
    size = 2 * n
    L = []
    for i in range(size):
        row = []
        for j in range(size):
            if i == j:
                row.append(s + sign_of(i) * v * OperatorPoly.d(n, axis_of(i)) + lam)
            else:
                row.append(off)
        L.append(row)
    return L


def _rank_one_det(n: int) -> OperatorPoly:
    L = build_L(n)
    return det_rank_one([L[i][i] for i in range(2 * n)], L[0][1])


@lru_cache(maxsize=None)
def _det_model(n: int, check: bool) -> OperatorPoly:
    closed = _rank_one_det(n)
    if not check:
        return closed
    det = det_bareiss(build_L(n))
    if det != closed:
        raise AssertionError(f"elimination and rank-one determinants disagree for n={n}")
    return det


def det_model(cfg: ModelConfig | int, check: bool = True) -> OperatorPoly:
    """Symbolic determinant of the operator matrix.

    With ``check`` (default) the determinant is computed by fraction-free
    elimination and asserted equal to the rank-one closed form.
    """
    n = cfg if isinstance(cfg, int) else cfg.n
    if n > 6:
        raise ValueError(f"n={n} exceeds the supported bound n <= 6")
    return _det_model(n, check)


def perturbation_series(cfg: ModelConfig | int, check: bool = True) -> PerturbationSeries:
    n = cfg if isinstance(cfg, int) else cfg.n
    return scale_and_center(det_model(n, check=check), n)


def printed_closed_form(n: int, sum_coeff: Fraction | None = None) -> OperatorPoly:
    """The closed form with ``2n lambda/(2n-1)`` shift and the given sum-term coefficient.

    ``prod_i (s + sign v d + 2n lambda/(2n-1)) + sum_coeff * sum_k prod_{i != k}(...)``.
    The default ``sum_coeff`` is ``+2n lambda/(2n-1)``, as the formula is
    usually quoted; the value consistent with the matrix is ``-lambda/(2n-1)``.
    """
    lam = OperatorPoly.lam(n)
    shift = lam * Fraction(2 * n, 2 * n - 1)
    coeff = shift if sum_coeff is None else lam * sum_coeff
    factors = [OperatorPoly.s(n) + sign_of(i) * OperatorPoly.v(n) * OperatorPoly.d(n, axis_of(i)) + shift
               for i in range(2 * n)]
    total = OperatorPoly.const(n, 1)
    for f in factors:
        total = total * f
    loo = OperatorPoly.zero(n)
    for k in range(2 * n):
        prod = OperatorPoly.const(n, 1)
        for i, f in enumerate(factors):
            if i != k:
                prod = prod * f
        loo = loo + prod
    return total + coeff * loo


# -- reconciliation against the published n=3 determinant ----------------------

_GROUPS = {
    "1": lambda n: [()],
    "laplacian": lambda n: [(a,) for a in range(n)],
    "mixed4": lambda n: [(a, b) for a in range(n) for b in range(a + 1, n)],
    "mixed6": lambda n: [tuple(range(n))],
}


@dataclass(frozen=True)
class ReconciliationRow:
    monomial: Monomial
    eps_power: int
    computed: Fraction
    printed: Optional[Fraction]
    printed_eps_power: Optional[int]
    status: str
    label: str = ""

    def as_dict(self) -> dict:
        return {
            "monomial": self.monomial.pretty(),
            "s": self.monomial.s,
            "d": list(self.monomial.d),
            "eps": self.eps_power,
            "computed": str(self.computed),
            "printed": None if self.printed is None else str(self.printed),
            "printed_eps": self.printed_eps_power,
            "status": self.status,
            "printed_term": self.label,
        }


@dataclass(frozen=True)
class ReconciliationReport:
    n: int
    rows: Tuple[ReconciliationRow, ...]
    printed_terms: int

    def counts(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for r in self.rows:
            out[r.status] = out.get(r.status, 0) + 1
        return out

    def lookup(self, mono: Monomial) -> ReconciliationRow:
        for r in self.rows:
            if r.monomial == mono:
                return r
        raise KeyError(mono.pretty())

    def mismatches(self) -> List[ReconciliationRow]:
        return [r for r in self.rows if r.status == "mismatch"]

    def to_json(self) -> dict:
        return {"n": self.n, "printed_terms": self.printed_terms, "counts": self.counts(),
                "rows": [r.as_dict() for r in self.rows]}

    def csv_rows(self) -> List[List[str]]:
        rows = [["monomial", "eps", "computed", "printed", "printed_eps", "status"]]
        for r in self.rows:
            rows.append([r.monomial.pretty(), str(r.eps_power), str(r.computed),
                         "" if r.printed is None else str(r.printed),
                         "" if r.printed_eps_power is None else str(r.printed_eps_power), r.status])
        return rows


def load_printed_table(what: str = "det", n: int = 3) -> dict:
    name = {"det": "published_det", "series": "published_series"}[what]
    path = resources.files("velocity_jump").joinpath("data", f"{name}_n{n}.json")
    return json.loads(path.read_text())


def _expand_printed(table: dict) -> Dict[Monomial, Tuple[Fraction, int, str]]:
    n = table["n"]
    out: Dict[Monomial, Tuple[Fraction, int, str]] = {}
    for term in table["terms"]:
        coeff = Fraction(term["coeff"])
        for axes in _GROUPS[term["spatial"]](n):
            d = [0] * n
            for a in axes:
                d[a] = 2
            mono = Monomial(int(term["s"]), tuple(d))
            if mono in out:
                raise ValueError(f"printed table lists {mono.pretty()} twice")
            out[mono] = (coeff, int(term["eps"]), term["label"])
    return out


def _computed_terms(what: str, n: int) -> List[Tuple[Monomial, int, Fraction]]:
    if what == "det":
        return [(Monomial(m.s, m.d), -m.v - 2 * m.lam, c) for m, c in det_model(n).items()]
    series = perturbation_series(n)
    return [(m, 2 * j, c) for j, P in enumerate(series.P) for m, c in P.items()]


def reconcile_published(n: int = 3, what: str = "det") -> ReconciliationReport:
    """Term-by-term comparison with the published n=3 operator.

    ``what="det"`` compares the determinant written in eps form (before the
    overall ``eps^(4n-2)`` factor); ``what="series"`` compares the normalized
    perturbation series.  Each computed monomial appears once.  Printed terms
    with no computed counterpart are appended as ``mismatch`` rows with
    computed coefficient 0, so nothing is dropped silently.
    """
    if n != 3:
        raise ValueError("only the n=3 operator is tabulated")
    table = load_printed_table(what, n)
    printed = _expand_printed(table)
    rows = []
    seen = set()
    for mono, power, c in _computed_terms(what, n):
        if mono in printed:
            seen.add(mono)
            pc, pp, label = printed[mono]
            status = "match" if (pc == c and pp == power) else "mismatch"
            rows.append(ReconciliationRow(mono, power, c, pc, pp, status, label))
        else:
            rows.append(ReconciliationRow(mono, power, c, None, None, "not-printed"))
    for mono, (pc, pp, label) in printed.items():
        if mono not in seen:
            rows.append(ReconciliationRow(mono, pp, Fraction(0), pc, pp, "mismatch", label))
    return ReconciliationReport(n, tuple(rows), len(table["terms"]))


def scaled_power(mono: Monomial, n: int) -> int:
    """Power of eps carried by an ``s, d`` monomial of the unscaled determinant."""
    return -4 * n + 2 * mono.s + sum(mono.d)


def is_even_in_v(p: OperatorPoly) -> bool:
    return all(m.v % 2 == 0 for m in p.terms)


def is_direction_symmetric(p: OperatorPoly) -> bool:
    return all(p.flip_axis(a) == p for a in range(p.n))


def expected_leading_operator(n: int) -> OperatorPoly:
    """``s - (2n-1)/(2n^2) * sum d_a^2``."""
    return OperatorPoly.s(n) - OperatorPoly.laplacian(n) * Fraction(2 * n - 1, 2 * n * n)


def diffusion_coefficient(n: int) -> Fraction:
    return Fraction(2 * n - 1, 2 * n * n)

