import itertools
from fractions import Fraction

import numpy as np
import pytest

from velocity_jump.algebra import Monomial, OperatorPoly, det_bareiss
from velocity_jump.model import (
    ModelConfig,
    VelocityTable,
    build_L,
    det_model,
    expected_leading_operator,
    is_direction_symmetric,
    is_even_in_v,
    perturbation_series,
    printed_closed_form,
    reconcile_published,
)


def poly(n, text_terms):
    return OperatorPoly(n, {Monomial(s, d, v, lam): c for (s, d, v, lam), c in text_terms.items()})


def test_config_scaling_overrides():
    cfg = ModelConfig(3, v=7.0, lam=9.0, eps=0.5)
    assert cfg.v == 2.0 and cfg.lam == 4.0
    assert cfg.switch_rate == pytest.approx(4.0 * 6 / 5)


@pytest.mark.parametrize("kwargs", [dict(n=0), dict(n=2, v=0.0), dict(n=2, lam=-1.0), dict(n=2, eps=0.0)])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        ModelConfig(**kwargs)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_velocity_table(n):
    e = VelocityTable(n).directions
    assert np.allclose(e.sum(axis=0), 0)
    assert np.allclose(np.linalg.norm(e, axis=1), 1)
    assert np.allclose(e[0::2], -e[1::2])
    assert np.allclose(e[0], np.eye(n)[0])


def test_L_two_state():
    n = 1
    s, v, lam, d = OperatorPoly.s(n), OperatorPoly.v(n), OperatorPoly.lam(n), OperatorPoly.d(n, 0)
    L = build_L(1)
    assert L == [[s + v * d + lam, -lam], [-lam, s - v * d + lam]]


def test_L_offdiagonal_n3():
    L = build_L(3)
    assert L[0][1] == OperatorPoly.lam(3) * Fraction(-1, 5)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_L_row_balance(n):
    L = build_L(n)
    for i, row in enumerate(L):
        off = sum((row[j] for j in range(2 * n) if j != i), OperatorPoly.zero(n))
        assert off == -OperatorPoly.lam(n)
        # spatially constant, state-uniform vector: only the transport part survives
        total = sum(row, OperatorPoly.zero(n))
        assert total == OperatorPoly.s(n) + (1 if i % 2 == 0 else -1) * OperatorPoly.v(n) * OperatorPoly.d(n, i // 2)


def test_L_numeric_substitution():
    L = build_L(ModelConfig(1, v=2.0, lam=3.0), symbolic=False)
    assert L[0][1] == OperatorPoly.const(1, -3)


def test_det_two_state():
    assert det_model(1) == poly(1, {(2, (0,), 0, 0): 1, (1, (0,), 0, 1): 2, (0, (2,), 2, 0): -1})


def test_det_n3_published_leading_coefficients():
    det = det_model(3)
    assert det.coeff(Monomial(1, (0, 0, 0), 0, 5)) == Fraction(7776, 3125)
    for a in range(3):
        d = [0, 0, 0]
        d[a] = 2
        assert det.coeff(Monomial(0, tuple(d), 2, 4)) == Fraction(-432, 625)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_det_even_in_v_and_symmetric(n):
    det = det_model(n)
    assert is_even_in_v(det)
    assert is_direction_symmetric(det)
    assert det.max_sd_degree() <= 2 * n


@pytest.mark.parametrize("n", [2, 3])
def test_det_axis_relabeling(n):
    det = det_model(n)
    for perm in itertools.permutations(range(n)):
        assert det.permute_axes(perm) == det


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_leading_operator(n):
    ser = perturbation_series(n)
    assert ser.P[0] == expected_leading_operator(n)
    assert len(ser.P) - 1 <= 2 * n - 1
    assert all(is_direction_symmetric(P) for P in ser.P)


def test_series_n2():
    ser = perturbation_series(2)
    assert ser.P[0] == OperatorPoly.s(2) - OperatorPoly.laplacian(2) * Fraction(3, 8)


def test_series_n3_published_terms():
    ser = perturbation_series(3)
    n = 3
    s, lap, lap2 = OperatorPoly.s(n), OperatorPoly.laplacian(n), OperatorPoly.mixed_fourth(n)
    assert ser.P[0] == s - lap * Fraction(5, 18)
    assert ser.P[1] == (s ** 2 - lap * s * Fraction(1, 3) + lap2 * Fraction(5, 54)) * Fraction(25, 6)
    assert len(ser.P) == 6
    # d/dt^6 carries 1 before normalization, hence 1/(7776/3125) after
    assert ser.P[5] == s ** 6 * Fraction(3125, 7776)


def test_series_two_state():
    ser = perturbation_series(1)
    s, d = OperatorPoly.s(1), OperatorPoly.d(1, 0)
    assert ser.P == (s - d ** 2 * Fraction(1, 2), s ** 2 * Fraction(1, 2))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_quoted_closed_form_sum_coefficient(n):
    det = det_model(n)
    assert printed_closed_form(n, Fraction(-1, 2 * n - 1)) == det
    assert printed_closed_form(n) != det


def test_reconcile_covers_every_printed_term():
    rep = reconcile_published(3, "det")
    assert rep.printed_terms == 15
    det = det_model(3)
    computed = [r for r in rep.rows if r.computed != 0]
    assert len(computed) == len(det)
    assert len({r.monomial for r in computed}) == len(det)
    labels = {r.label for r in rep.rows if r.label}
    assert len(labels) == 15


def test_reconcile_statuses():
    rep = reconcile_published(3, "det")
    assert rep.lookup(Monomial(1, (0, 0, 0))).status == "match"
    assert rep.lookup(Monomial(1, (0, 0, 0))).computed == Fraction(7776, 3125)
    lap_row = rep.lookup(Monomial(0, (2, 0, 0)))
    assert (lap_row.status, lap_row.computed, lap_row.eps_power) == ("match", Fraction(-432, 625), -10)
    top = rep.lookup(Monomial(6, (0, 0, 0)))
    assert (top.status, top.computed, top.eps_power) == ("match", 1, 0)


def test_reconcile_itemizes_mismatches():
    rep = reconcile_published(3, "det")
    bad = {r.monomial for r in rep.mismatches()}
    # printed with eps powers that the scaling cannot produce
    assert Monomial(2, (0, 0, 0)) in bad
    assert Monomial(2, (2, 2, 0)) in bad
    assert all(r.printed_eps_power != r.eps_power for r in rep.mismatches())
    assert len(rep.csv_rows()) == len(rep.rows) + 1


def test_reconcile_series_reports_without_failing():
    rep = reconcile_published(3, "series")
    assert rep.lookup(Monomial(0, (2, 0, 0))).status == "match"
    assert rep.lookup(Monomial(2, (0, 0, 0))).status == "match"
    assert rep.counts()["mismatch"] > 0


def test_reconcile_only_n3():
    with pytest.raises(ValueError):
        reconcile_published(2)
