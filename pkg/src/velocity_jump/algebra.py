"""Exact commutative operator polynomials with rational coefficients.

A constant-coefficient linear differential operator in ``t, x_1..x_n`` is a
polynomial in the commuting symbols ``s = d/dt`` and ``d_a = d/dx_a``.  The
model parameters ``v`` (speed) and ``lambda`` (jump rate) are carried as two
further symbols so that determinants can be formed before any scaling.

All arithmetic goes through :class:`fractions.Fraction`; nothing in this
module touches floating point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, NamedTuple, Sequence, Tuple, Union

__all__ = [
    "Monomial",
    "OperatorPoly",
    "EpsSeries",
    "PerturbationSeries",
    "InexactDivisionError",
    "det_bareiss",
    "det_cofactor",
    "det_rank_one",
    "scale_and_center",
    "to_fraction",
]

Number = Union[int, Fraction]


class InexactDivisionError(ArithmeticError):
    """Raised when a division that must be exact leaves a remainder."""


def to_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    raise TypeError(f"exact coefficient expected, got {type(value).__name__}")


class Monomial(NamedTuple):
    """Exponents of ``s``, ``d_1..d_n``, ``v`` and ``lambda``."""

    s: int
    d: Tuple[int, ...]
    v: int = 0
    lam: int = 0

    @classmethod
    def one(cls, n: int) -> "Monomial":
        return cls(0, (0,) * n, 0, 0)

    @property
    def n(self) -> int:
        return len(self.d)

    @property
    def degree(self) -> int:
        return self.s + sum(self.d) + self.v + self.lam

    @property
    def sd_degree(self) -> int:
        return self.s + sum(self.d)

    def exponents(self) -> Tuple[int, ...]:
        return (self.s, *self.d, self.v, self.lam)

    def sort_key(self):
        # graded lexicographic in (s, d_1..d_n, v, lambda), highest first
        return (-self.degree, tuple(-e for e in self.exponents()))

    def __mul__(self, other: "Monomial") -> "Monomial":  # type: ignore[override]
        return Monomial(
            self.s + other.s,
            tuple(a + b for a, b in zip(self.d, other.d)),
            self.v + other.v,
            self.lam + other.lam,
        )

    def divides(self, other: "Monomial") -> bool:
        return (
            self.s <= other.s
            and self.v <= other.v
            and self.lam <= other.lam
            and all(a <= b for a, b in zip(self.d, other.d))
        )

    def quotient(self, other: "Monomial") -> "Monomial":
        """``self / other``; caller guarantees ``other.divides(self)``."""
        return Monomial(
            self.s - other.s,
            tuple(a - b for a, b in zip(self.d, other.d)),
            self.v - other.v,
            self.lam - other.lam,
        )

    def pretty(self) -> str:
        parts = []
        for name, e in [("s", self.s)] + [(f"d{a + 1}", e) for a, e in enumerate(self.d)] + [
            ("v", self.v),
            ("lambda", self.lam),
        ]:
            if e == 1:
                parts.append(name)
            elif e > 1:
                parts.append(f"{name}^{e}")
        return "*".join(parts) if parts else "1"


class OperatorPoly:
    """Immutable polynomial in ``s, d_1..d_n, v, lambda`` over the rationals.

    The term map never stores zero coefficients, so two polynomials are equal
    exactly when their term maps are equal.
    """

    __slots__ = ("n", "_terms", "_hash")

    def __init__(self, n: int, terms: Mapping[Monomial, Number] | None = None):
        self.n = int(n)
        clean: Dict[Monomial, Fraction] = {}
        if terms:
            for mono, c in terms.items():
                if len(mono.d) != self.n:
                    raise ValueError(f"monomial {mono} does not have {self.n} spatial exponents")
                c = to_fraction(c)
                if c:
                    clean[mono] = clean.get(mono, Fraction(0)) + c
                    if not clean[mono]:
                        del clean[mono]
        self._terms = clean
        self._hash = None

    # -- constructors -------------------------------------------------------
    @classmethod
    def zero(cls, n: int) -> "OperatorPoly":
        return cls(n)

    @classmethod
    def const(cls, n: int, c: Number) -> "OperatorPoly":
        return cls(n, {Monomial.one(n): c})

    @classmethod
    def s(cls, n: int) -> "OperatorPoly":
        return cls(n, {Monomial(1, (0,) * n): 1})

    @classmethod
    def d(cls, n: int, axis: int) -> "OperatorPoly":
        """``d/dx_{axis+1}`` (axis is 0-based)."""
        exps = [0] * n
        exps[axis] = 1
        return cls(n, {Monomial(0, tuple(exps)): 1})

    @classmethod
    def v(cls, n: int) -> "OperatorPoly":
        return cls(n, {Monomial(0, (0,) * n, 1, 0): 1})

    @classmethod
    def lam(cls, n: int) -> "OperatorPoly":
        return cls(n, {Monomial(0, (0,) * n, 0, 1): 1})

    @classmethod
    def laplacian(cls, n: int) -> "OperatorPoly":
        return sum((cls.d(n, a) ** 2 for a in range(n)), cls.zero(n))

    @classmethod
    def mixed_fourth(cls, n: int) -> "OperatorPoly":
        """Sum of ``d_a^2 d_b^2`` over axis pairs ``a < b``."""
        out = cls.zero(n)
        for a in range(n):
            for b in range(a + 1, n):
                out = out + cls.d(n, a) ** 2 * cls.d(n, b) ** 2
        return out

    # -- accessors ----------------------------------------------------------
    @property
    def terms(self) -> Dict[Monomial, Fraction]:
        return dict(self._terms)

    def items(self):
        return sorted(self._terms.items(), key=lambda kv: kv[0].sort_key())

    def coeff(self, mono: Monomial) -> Fraction:
        return self._terms.get(mono, Fraction(0))

    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self) -> int:
        return len(self._terms)

    def __bool__(self) -> bool:
        return bool(self._terms)

    def leading(self) -> Tuple[Monomial, Fraction]:
        if not self._terms:
            raise ValueError("zero polynomial has no leading term")
        mono = min(self._terms, key=Monomial.sort_key)
        return mono, self._terms[mono]

    def max_sd_degree(self) -> int:
        return max((m.sd_degree for m in self._terms), default=0)

    # -- arithmetic ---------------------------------------------------------
    def _coerce(self, other) -> "OperatorPoly":
        if isinstance(other, OperatorPoly):
            if other.n != self.n:
                raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")
            return other
        return OperatorPoly.const(self.n, to_fraction(other))

    def __add__(self, other) -> "OperatorPoly":
        other = self._coerce(other)
        out = dict(self._terms)
        for mono, c in other._terms.items():
            out[mono] = out.get(mono, Fraction(0)) + c
        return OperatorPoly(self.n, out)

    __radd__ = __add__

    def __neg__(self) -> "OperatorPoly":
        return OperatorPoly(self.n, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other) -> "OperatorPoly":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "OperatorPoly":
        return self._coerce(other) - self

    def __mul__(self, other) -> "OperatorPoly":
        if not isinstance(other, OperatorPoly):
            c = to_fraction(other)
            return OperatorPoly(self.n, {m: c * v for m, v in self._terms.items()})
        other = self._coerce(other)
        out: Dict[Monomial, Fraction] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = m1 * m2
                out[m] = out.get(m, Fraction(0)) + c1 * c2
        return OperatorPoly(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "OperatorPoly":
        if k < 0:
            raise ValueError("negative powers are not polynomials")
        result = OperatorPoly.const(self.n, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def exact_div(self, divisor: "OperatorPoly") -> "OperatorPoly":
        """Quotient of an exact multivariate division.

        Runs the division algorithm against the graded-lex leading term of
        ``divisor``.  A leading term that cannot be cancelled means the
        division has a remainder, which is reported as
        :class:`InexactDivisionError`.
        """
        divisor = self._coerce(divisor)
        if divisor.is_zero():
            raise ZeroDivisionError("division by the zero polynomial")
        lead_m, lead_c = divisor.leading()
        rest = dict(self._terms)
        quotient: Dict[Monomial, Fraction] = {}
        dterms = list(divisor._terms.items())
        while rest:
            m = min(rest, key=Monomial.sort_key)
            c = rest[m]
            if not lead_m.divides(m):
                raise InexactDivisionError(
                    f"remainder term {c}*{m.pretty()} not divisible by {lead_m.pretty()}"
                )
            qm = m.quotient(lead_m)
            qc = c / lead_c
            quotient[qm] = qc
            for dm, dc in dterms:
                mm = qm * dm
                val = rest.get(mm, Fraction(0)) - qc * dc
                if val:
                    rest[mm] = val
                else:
                    rest.pop(mm, None)
        return OperatorPoly(self.n, quotient)

    # -- structure ----------------------------------------------------------
    def __eq__(self, other) -> bool:
        if isinstance(other, OperatorPoly):
            return self.n == other.n and self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == OperatorPoly.const(self.n, other)
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.n, frozenset(self._terms.items())))
        return self._hash

    def flip_axis(self, axis: int) -> "OperatorPoly":
        """Substitute ``d_axis -> -d_axis``."""
        return OperatorPoly(
            self.n, {m: (-c if m.d[axis] % 2 else c) for m, c in self._terms.items()}
        )

    def permute_axes(self, perm: Sequence[int]) -> "OperatorPoly":
        """Relabel ``d_a -> d_{perm[a]}``."""
        out = {}
        for m, c in self._terms.items():
            d = [0] * self.n
            for a, e in enumerate(m.d):
                d[perm[a]] = e
            out[Monomial(m.s, tuple(d), m.v, m.lam)] = c
        return OperatorPoly(self.n, out)

    def uses_only_sd(self) -> bool:
        return all(m.v == 0 and m.lam == 0 for m in self._terms)

    def __repr__(self) -> str:
        return f"OperatorPoly(n={self.n}, {self})"

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        out = []
        for m, c in self.items():
            body = m.pretty()
            if body == "1":
                term = str(abs(c))
            elif abs(c) == 1:
                term = body
            else:
                term = f"{abs(c)}*{body}"
            out.append(("- " if c < 0 else "+ ") + term)
        text = " ".join(out)
        return text[2:] if text.startswith("+ ") else "-" + text[1:]

    # -- serialization ------------------------------------------------------
    def to_json(self, include_params: bool = True) -> List[dict]:
        rows = []
        for m, c in self.items():
            row = {"s": m.s, "d": list(m.d)}
            if include_params:
                row["v"] = m.v
                row["lambda"] = m.lam
            row["coeff"] = str(c)
            rows.append(row)
        return rows

    @classmethod
    def from_json(cls, n: int, rows: Iterable[dict]) -> "OperatorPoly":
        terms = {}
        for row in rows:
            mono = Monomial(int(row["s"]), tuple(int(e) for e in row["d"]),
                            int(row.get("v", 0)), int(row.get("lambda", 0)))
            terms[mono] = terms.get(mono, Fraction(0)) + Fraction(row["coeff"])
        return cls(n, terms)


Matrix = List[List[OperatorPoly]]


def _check_square(M: Sequence[Sequence[OperatorPoly]]) -> int:
    size = len(M)
    if size == 0 or any(len(row) != size for row in M):
        raise ValueError("determinant needs a non-empty square matrix")
    return size


def det_bareiss(M: Sequence[Sequence[OperatorPoly]]) -> OperatorPoly:
    """Determinant by fraction-free (Bareiss) elimination.

    Every intermediate division is an exact polynomial division; a remainder
    indicates a bug and raises :class:`InexactDivisionError`.
    """
    size = _check_square(M)
    n = M[0][0].n
    A = [list(row) for row in M]
    sign = 1
    prev = OperatorPoly.const(n, 1)
    for k in range(size - 1):
        if A[k][k].is_zero():
            swap = next((r for r in range(k + 1, size) if not A[r][k].is_zero()), None)
            if swap is None:
                return OperatorPoly.zero(n)
            A[k], A[swap] = A[swap], A[k]
            sign = -sign
        pivot = A[k][k]
        for i in range(k + 1, size):
            for j in range(k + 1, size):
                num = A[i][j] * pivot - A[i][k] * A[k][j]
                A[i][j] = num.exact_div(prev)
            A[i][k] = OperatorPoly.zero(n)
        prev = pivot
    det = A[size - 1][size - 1]
    return det if sign > 0 else -det


def det_cofactor(M: Sequence[Sequence[OperatorPoly]]) -> OperatorPoly:
    """Laplace expansion along the first row.  Exponential cost; oracle use only."""
    size = _check_square(M)
    if size == 1:
        return M[0][0]
    total = OperatorPoly.zero(M[0][0].n)
    for j in range(size):
        if M[0][j].is_zero():
            continue
        minor = [row[:j] + row[j + 1:] for row in M[1:]]
        term = M[0][j] * det_cofactor(minor)
        total = total + term if j % 2 == 0 else total - term
    return total


def det_rank_one(diagonal: Sequence[OperatorPoly], c: OperatorPoly) -> OperatorPoly:
    """Determinant of a matrix with the given diagonal and constant off-diagonal ``c``.

    Uses ``det(diag(b - c) + c J) = prod(b_i - c) + c * sum_k prod_{i != k}(b_i - c)``.
    """
    shifted = [b - c for b in diagonal]
    n = c.n
    size = len(shifted)
    # prefix/suffix products give every leave-one-out product in O(size) multiplications
    prefix = [OperatorPoly.const(n, 1)]
    for b in shifted:
        prefix.append(prefix[-1] * b)
    suffix = [OperatorPoly.const(n, 1)]
    for b in reversed(shifted):
        suffix.append(suffix[-1] * b)
    suffix.reverse()
    leave_one_out = OperatorPoly.zero(n)
    for k in range(size):
        leave_one_out = leave_one_out + prefix[k] * suffix[k + 1]
    return prefix[size] + c * leave_one_out


@dataclass(frozen=True)
class EpsSeries:
    """Laurent series in eps whose coefficients are operators in ``s, d`` only."""

    n: int
    terms: Dict[int, OperatorPoly] = field(default_factory=dict)

    def __post_init__(self):
        for power, poly in self.terms.items():
            if not poly.uses_only_sd():
                raise ValueError(f"eps^{power} coefficient still contains v or lambda")

    @property
    def powers(self) -> List[int]:
        return sorted(p for p, poly in self.terms.items() if not poly.is_zero())

    @classmethod
    def from_scaling(cls, p: OperatorPoly, shift: int = 0) -> "EpsSeries":
        """Substitute ``v = 1/eps``, ``lambda = 1/eps^2`` and multiply by ``eps**shift``."""
        grouped: Dict[int, Dict[Monomial, Fraction]] = {}
        for m, c in p.terms.items():
            power = shift - m.v - 2 * m.lam
            grouped.setdefault(power, {})[Monomial(m.s, m.d)] = c
        return cls(p.n, {k: OperatorPoly(p.n, t) for k, t in grouped.items()})


@dataclass(frozen=True)
class PerturbationSeries:
    """Normalized coefficients ``P_j`` of ``eps^(2j)`` in the regularly perturbed equation."""

    n: int
    P: Tuple[OperatorPoly, ...]
    normalization: Fraction = Fraction(1)

    @property
    def diffusion(self) -> Fraction:
        """Diffusion coefficient ``D`` read off ``P_0 = s - D * sum d_a^2``."""
        return -self.P[0].coeff(Monomial(0, (2,) + (0,) * (self.n - 1)))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "normalization": str(self.normalization),
            "eps_terms": [
                {"eps": 2 * j, "monomials": P.to_json(include_params=False)}
                for j, P in enumerate(self.P)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "PerturbationSeries":
        n = int(data["n"])
        by_power = {int(t["eps"]): OperatorPoly.from_json(n, t["monomials"]) for t in data["eps_terms"]}
        top = max(by_power)
        P = tuple(by_power.get(2 * j, OperatorPoly.zero(n)) for j in range(top // 2 + 1))
        return cls(n, P, Fraction(data.get("normalization", "1")))


def scale_and_center(p: OperatorPoly, n: int | None = None) -> PerturbationSeries:
    """Hydrodynamic scaling of a determinant operator.

    Substitutes ``v = 1/eps`` and ``lambda = 1/eps^2``, multiplies by
    ``eps^(4n-2)``, checks that the result is a power series in ``eps^2``
    starting at ``eps^0``, and divides through by the coefficient of ``s`` at
    ``eps^0``.
    """
    n = p.n if n is None else n
    if n != p.n:
        raise ValueError(f"polynomial has {p.n} spatial symbols, expected {n}")
    series = EpsSeries.from_scaling(p, shift=4 * n - 2)
    powers = series.powers
    if not powers:
        raise ValueError("cannot scale the zero operator")
    odd = [k for k in powers if k % 2]
    if odd:
        raise ValueError(f"odd eps powers {odd} present: operator is not even in v")
    if powers[0] != 0:
        raise ValueError(f"lowest eps power after scaling is {powers[0]}, expected 0")
    lead = series.terms[0].coeff(Monomial(1, (0,) * n))
    if not lead:
        raise ValueError("eps^0 part has no pure d/dt term to normalize by")
    P = tuple(series.terms.get(2 * j, OperatorPoly.zero(n)) * (1 / lead)
              for j in range(powers[-1] // 2 + 1))
    return PerturbationSeries(n, P, lead)
