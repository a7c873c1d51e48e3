import warnings

import numpy as np
import pytest

from velocity_jump import spectral
from velocity_jump.model import ModelConfig
from velocity_jump.montecarlo import second_moment_closed_form
from velocity_jump.spectral import (
    BoundaryMassWarning,
    InitialCondition,
    ModeSystemState,
    SpectralGrid,
    density,
    evolve,
    mode_matrix,
    moments,
    telegraph_rates,
)


def test_mode_matrix_pure_jump():
    M = mode_matrix(np.array([0.0]), ModelConfig(1, v=2.0, lam=1.5))
    assert np.allclose(M, [[-1.5, 1.5], [1.5, -1.5]])


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_mode_matrix_columns_sum_to_zero_at_origin(n):
    M = mode_matrix(np.zeros(n), ModelConfig(n, v=1.3, lam=0.7))
    assert np.allclose(M.sum(axis=0), 0, atol=1e-15)


def test_mode_matrix_entries_n3():
    cfg = ModelConfig(3, v=2.0, lam=3.0)
    k = np.array([0.5, -1.0, 2.0])
    M = mode_matrix(k, cfg)
    assert M[0, 1] == pytest.approx(3.0 / 5)
    assert M[0, 0] == pytest.approx(-1j * 2.0 * 0.5 - 3.0)
    assert M[3, 3] == pytest.approx(+1j * 2.0 * -1.0 - 3.0)


@pytest.mark.parametrize("k", [0.0, 0.3, 1.0, 1.49, 1.5, 2.0, 7.5])
def test_two_state_dispersion(k):
    cfg = ModelConfig(1, v=2.0, lam=3.0)
    eig = np.linalg.eigvals(mode_matrix(np.array([k]), cfg))
    expected = telegraph_rates(k, cfg)
    # match as multisets
    d = np.abs(eig[:, None] - expected[None, :])
    assert min(d[0, 0] + d[1, 1], d[0, 1] + d[1, 0]) < 1e-10 * max(1.0, np.abs(expected).max()) or \
        (np.isclose(k * 2.0, 3.0) and np.allclose(eig, expected, atol=1e-6))


def test_two_state_propagator_closed_form():
    grid = SpectralGrid(1, 10.0, 8)
    st = ModeSystemState(grid, np.array([[0]]), np.array([[1.0, 0.0]], dtype=complex))
    out = evolve(st, 1.0, ModelConfig(1, v=1.0, lam=1.0))
    e2 = np.exp(-2.0)
    assert np.allclose(out.coeffs, [[(1 + e2) / 2, (1 - e2) / 2]], atol=1e-14)
    assert out.t == 1.0


def _gaussian_state(n=2, m=16, L=12.0, sigma0=0.8, center=None, subset="full"):
    grid = SpectralGrid(n, L, m)
    return ModeSystemState.initial(grid, InitialCondition("gaussian", sigma0, center=center), subset)


def test_tiny_step_is_identity():
    st = _gaussian_state()
    out = evolve(st, 1e-15, ModelConfig(2, v=1.0, lam=2.0))
    assert np.allclose(out.coeffs, st.coeffs, atol=1e-13)


def test_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        evolve(_gaussian_state(), 0.0, ModelConfig(2))


def test_semigroup():
    cfg = ModelConfig(2, v=1.7, lam=0.9)
    st = _gaussian_state(center=[0.3, -0.2])
    one = evolve(st, 0.8, cfg)
    two = evolve(evolve(st, 0.4, cfg), 0.4, cfg)
    assert np.max(np.abs(one.coeffs - two.coeffs)) < 1e-12


def test_mass_conservation_n3():
    cfg = ModelConfig(3, v=2.0, lam=3.0)
    st = _gaussian_state(n=3, m=16, center=[0.5, 0.0, -0.3])
    m0 = st.mass
    for _ in range(4):
        st = evolve(st, 0.37, cfg)
        assert abs(st.mass - m0) <= 1e-12


def _mirror(indices, m):
    return (-indices) % m


def test_conjugate_symmetry_preserved():
    n, m = 2, 16
    cfg = ModelConfig(n, v=1.5, lam=2.0)
    st = evolve(_gaussian_state(n=n, m=m, center=[0.7, -0.4]), 0.6, cfg)
    full = np.zeros((m, m, 2 * n), dtype=complex)
    full[tuple(st.indices.T)] = st.coeffs
    keep = ~(st.indices == m // 2).any(axis=1)
    idx = st.indices[keep]
    mirrored = full[tuple(_mirror(idx, m).T)]
    assert np.max(np.abs(mirrored - np.conj(full[tuple(idx.T)]))) < 1e-12


def test_symmetric_data_gives_real_density():
    cfg = ModelConfig(2, v=1.0, lam=1.0)
    f = density(evolve(_gaussian_state(), 0.9, cfg))
    assert np.max(np.abs(f.values.imag)) < 1e-12


def test_evolve_independent_of_workers(monkeypatch):
    monkeypatch.setattr(spectral, "_CHUNK", 50)
    cfg = ModelConfig(2, v=1.0, lam=2.0)
    st = _gaussian_state(center=[0.1, 0.2])
    a = evolve(st, 0.5, cfg, workers=1)
    b = evolve(st, 0.5, cfg, workers=4)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_exponential_failure_reports_mode(monkeypatch):
    monkeypatch.setattr(spectral.scipy.linalg, "expm", lambda A: np.full_like(A, np.nan))
    with pytest.raises(spectral.ExponentialError, match="k="):
        evolve(_gaussian_state(), 0.1, ModelConfig(2))


def test_gaussian_moments():
    grid = SpectralGrid(3, 20.0, 128)
    st = ModeSystemState.initial(grid, InitialCondition("gaussian", 1.0), "axes")
    mom = moments(density(st))
    assert abs(mom.mass - 1) < 1e-12
    assert np.allclose(mom.variance, 1.0, atol=1e-10)
    assert np.allclose(mom.fourth, 3.0, atol=1e-9)
    assert np.allclose(mom.mean, 0.0, atol=1e-12)


def test_shifted_gaussian_mean():
    grid = SpectralGrid(2, 20.0, 128)
    st = ModeSystemState.initial(grid, InitialCondition("gaussian", 1.0, center=[0.5, -1.0]), "axes")
    mom = moments(density(st))
    assert np.allclose(mom.mean, [0.5, -1.0], atol=1e-10)
    assert np.allclose(mom.variance, 1.0, atol=1e-10)


def test_point_mass_moments():
    # band-limited point mass: the box variance of the Dirichlet kernel is O((L/m)^2)
    grid = SpectralGrid(1, 10.0, 512)
    st = ModeSystemState.initial(grid, InitialCondition("delta"), "axes")
    mom = moments(density(st))
    assert np.allclose(mom.mean, 0.0, atol=1e-14)
    assert abs(mom.variance[0]) < (grid.L / grid.m) ** 2


def test_symmetric_evolution_has_zero_mean():
    cfg = ModelConfig(3, v=2.0, lam=3.0)
    st = ModeSystemState.initial(SpectralGrid(3, 12.0, 64), InitialCondition("gaussian", 0.3), "axes")
    mom = moments(density(evolve(st, 1.0, cfg)))
    assert np.allclose(mom.mean, 0.0, atol=1e-12)


def test_boundary_warning():
    st = ModeSystemState.initial(SpectralGrid(1, 4.0, 64), InitialCondition("gaussian", 1.0), "axes")
    with pytest.warns(BoundaryMassWarning):
        moments(density(st))


def test_table_initial_condition_matches_gaussian():
    grid = SpectralGrid(2, 16.0, 64)
    x = grid.points()
    X, Y = np.meshgrid(x, x, indexing="ij")
    table = np.exp(-(X ** 2 + Y ** 2) / 2) / (2 * np.pi)
    a = InitialCondition("table", table=table).spectrum(grid, grid.mode_indices())
    b = InitialCondition("gaussian", 1.0).spectrum(grid, grid.mode_indices())
    assert np.max(np.abs(a - b)) < 1e-12


def test_real_space_roundtrip():
    grid = SpectralGrid(2, 16.0, 64)
    f = density(ModeSystemState.initial(grid, InitialCondition("gaussian", 1.0)))
    vals = f.to_real()
    assert vals[0, 0] == pytest.approx(1 / (2 * np.pi), rel=1e-12)
    assert vals.sum() * grid.cell_volume == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("n", [1, 3])
def test_variance_matches_moment_law(n):
    cfg = ModelConfig(n, v=2.0, lam=3.0)
    sigma0 = 0.2
    st = ModeSystemState.initial(SpectralGrid(n, 12.0, 256), InitialCondition("gaussian", sigma0), "axes")
    for t in (0.5, 1.0, 2.0):
        st = evolve(st, t - st.t, cfg)
        var = moments(density(st)).variance
        assert np.allclose(var, sigma0 ** 2 + second_moment_closed_form(cfg, t), atol=1e-9)


def test_two_state_long_time_variance():
    cfg = ModelConfig(1, v=1.0, lam=2.0)
    st = ModeSystemState.initial(SpectralGrid(1, 40.0, 512), InitialCondition("gaussian", 0.5), "axes")
    t = 20.0
    var = moments(density(evolve(st, t, cfg))).variance[0]
    # diffusive growth plus the ballistic offset -v^2 / (2 lam^2)
    assert var == pytest.approx(0.25 + cfg.v ** 2 * t / cfg.lam - cfg.v ** 2 / (2 * cfg.lam ** 2), rel=1e-6)


def test_two_state_mode_decay():
    cfg = ModelConfig(1, v=1.0, lam=3.0)
    grid = SpectralGrid(1, 8.0, 16)
    k = 2 * np.pi / grid.L
    st = ModeSystemState(grid, np.array([[1]]), np.array([[0.5, 0.5]], dtype=complex))
    a = evolve(st, 10.0, cfg)
    b = evolve(a, 1.0, cfg)
    rate = np.log(density(b).values[0] / density(a).values[0]).real
    assert rate == pytest.approx(telegraph_rates(k, cfg)[0].real, abs=1e-10)


def test_hydrodynamic_variance_limit():
    n, sigma0 = 3, 0.5
    D = (2 * n - 1) / (2 * n * n)
    target = sigma0 ** 2 + 2 * D
    grid = SpectralGrid(n, 16.0, 256)
    gaps = []
    eps_list = [0.2, 0.1, 0.05]
    for eps in eps_list:
        st = ModeSystemState.initial(grid, InitialCondition("gaussian", sigma0), "axes")
        with warnings.catch_warnings():
            warnings.simplefilter("error", BoundaryMassWarning)
            var = moments(density(evolve(st, 1.0, ModelConfig(n, eps=eps)))).variance[0]
        gaps.append(abs(var - target))
    slope = np.polyfit(np.log(eps_list), np.log(gaps), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)
