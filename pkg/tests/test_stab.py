import numpy as np
import pytest

from src.fespace import FESpace, inverse_constants
from src.mesh import build_structured_square
from src.stab import (POINCARE_SAFETY, UNIT_SQUARE_POINCARE, boundary_weights, build_stab, decay_envelope,
                      estimate_poincare, ledger_rows, poincare_upper_bound, semi_discrete_envelope,
                      spectral_gap, stab_params)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_ledger_formulas(mesh4, p):
    space = FESpace(mesh4, p)
    consts = inverse_constants(space)
    stab = stab_params(mesh4, p, consts)
    assert np.allclose(stab.tau, mesh4.h ** 2 / (4 * consts.grad ** 2 * p ** 4))
    assert np.allclose(stab.delta, stab.C_delta * p ** 4 / mesh4.h ** 2)
    assert np.allclose(stab.alpha * stab.delta, 1 / 8)
    assert np.allclose(stab.beta * stab.delta ** 2, 1 / 24)
    assert np.allclose(stab.gamma * stab.delta ** 3, 1 / 64)
    expected = consts.trace ** 2 / 6 * (3 * stab.xn2_minus + 2 * stab.n1_max ** 2)
    assert np.allclose(stab.C_delta, expected)
    assert np.all(stab.C_delta > 0)


def test_A_is_spd_with_closed_form_determinant(space4_p2):
    stab = build_stab(space4_p2)
    assert stab.check_spd()
    det = np.linalg.det(stab.A)
    assert np.allclose(det, stab.delta ** -4 * (1 / 512 - 1 / 576), rtol=1e-10)
    assert np.allclose(stab.A, np.transpose(stab.A, (0, 2, 1)))


def test_abc_scale_rescales_the_matrix(space4_p1):
    base = build_stab(space4_p1)
    scaled = build_stab(space4_p1, abc_scale=(2.0, 1.0, 0.5))
    assert np.allclose(scaled.alpha, 2 * base.alpha)
    assert np.allclose(scaled.beta, base.beta)
    assert np.allclose(scaled.gamma, 0.5 * base.gamma)
    assert np.allclose(scaled.tau, base.tau)


def test_boundary_weights_on_unit_square(mesh2):
    xn2_minus, n1_max = boundary_weights(mesh2)
    # every triangle has an edge with n2 < 0 somewhere at x > 0
    assert np.all(xn2_minus > 0)
    assert np.all(xn2_minus <= 1.0 + 1e-14)
    # every triangle has a vertical edge
    assert np.allclose(n1_max, 1.0)


def test_method_variants_of_the_ledger(space4_p1):
    stab = build_stab(space4_p1)
    galerkin = stab.zero()
    supg = stab.without_A()
    assert not np.any(galerkin.tau) and not np.any(galerkin.A)
    assert np.allclose(supg.tau, stab.tau) and not np.any(supg.A)
    assert np.allclose(supg.delta, stab.delta)


def test_mismatched_constants_rejected(mesh2, mesh4):
    consts = inverse_constants(FESpace(mesh2, 1))
    with pytest.raises(ValueError):
        stab_params(mesh4, 1, consts)


def test_spectral_gap_formula(space4_p2):
    stab = build_stab(space4_p2)
    h_min = space4_p2.mesh.h_min
    gap = spectral_gap(stab, h_min, 2, C_PF=0.4)
    c_hc = 0.5 * min(1 / (192 * 0.4), stab.C_delta.min())
    assert gap.c_hc == pytest.approx(c_hc)
    assert gap.kappa == pytest.approx(c_hc * h_min ** 4 / 2 ** 8)
    assert gap.branch in ("poincare", "c_delta")
    steps = np.full(5, 0.1)
    assert np.allclose(gap.mu(steps, 1), gap.kappa * 0.1 / 16)
    assert gap.decay_product(steps, 1) == pytest.approx((1 + gap.kappa * 0.1 / 16) ** -5)
    with pytest.raises(ValueError):
        spectral_gap(stab, h_min, 2, C_PF=0.0)


def test_decay_envelopes(space4_p1):
    stab = build_stab(space4_p1)
    gap = spectral_gap(stab, 1.0, 1, C_PF=1e-4)
    steps = np.full(8, 0.5)
    env = decay_envelope(gap, steps, 0)
    sharp = decay_envelope(gap, steps, 0, sharp=True)
    assert env[0] == 1.0 and sharp[0] == 1.0
    assert len(env) == 9
    assert np.all(np.diff(env) < 0)
    assert np.all(sharp[1:] < env[1:])
    assert env[-1] ** 2 == pytest.approx(gap.decay_product(steps, 0))
    semi = semi_discrete_envelope(gap, np.array([0.0, 4.0]))
    assert semi[0] == 1.0 and semi[1] == pytest.approx(np.exp(-gap.kappa))


def test_poincare_estimate_is_a_monotone_lower_bound():
    coarse = estimate_poincare(FESpace(build_structured_square(4), 1))
    fine = estimate_poincare(FESpace(build_structured_square(8), 1))
    continuous = UNIT_SQUARE_POINCARE
    assert 0 < coarse <= fine <= continuous * (1 + 1e-12)
    assert fine == pytest.approx(continuous, rel=0.05)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_scaled_poincare_estimate_bounds_the_continuous_constant(n):
    space = FESpace(build_structured_square(n), 2)
    estimate = estimate_poincare(space)
    bound = poincare_upper_bound(space)
    assert estimate <= UNIT_SQUARE_POINCARE * (1 + 1e-12)
    assert bound == pytest.approx(POINCARE_SAFETY * estimate)
    assert bound >= UNIT_SQUARE_POINCARE
    with pytest.raises(ValueError):
        poincare_upper_bound(space, safety=0.9)


def test_ledger_rows(space4_p1):
    stab = build_stab(space4_p1)
    rows = ledger_rows(stab)
    assert len(rows) == space4_p1.mesh.n_elements
    assert set(rows[0]) == {"element", "h", "C_INV", "C_inv", "tau", "C_delta", "delta", "alpha", "beta", "gamma"}
    assert rows[3]["tau"] == pytest.approx(stab.tau[3])
