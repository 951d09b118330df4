import cmath
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.sparse.linalg import eigs

from odewave import verify
from odewave.design import (ackermann, char_A, char_A1, char_A1_prime, char_A_prime, check_assumptions,
                            design_gains, find_root, place_H)
from odewave.errors import DesignInfeasibleError, InvalidInputError
from odewave.kernel import PlantConfig, compute_kernels


def wave_generator(N, left, right):
    """Semi-discrete first-order generator of w_tt = w_xx with ghost-node ends.

    left = ("flux_vel", k) means w_x(0) = k w_t(0).
    right = ("robin", alpha, beta) means w_x(1) = -alpha w(1) - beta w_t(1).
    """
    h = 1.0 / N
    n = N + 1
    main = np.full(n, -2.0)
    up = np.ones(n - 1)
    lo = np.ones(n - 1)
    up[0] = 2.0
    lo[-1] = 2.0
    D = sp.diags([lo, main, up], [-1, 0, 1], format="lil") / h ** 2
    V = sp.lil_matrix((n, n))
    V[0, 0] = -2.0 * left[1] / h
    _, a, b = right
    D[n - 1, n - 1] += -2.0 * a / h
    V[n - 1, n - 1] = -2.0 * b / h
    return sp.bmat([[None, sp.identity(n)], [D, V]], format="csc")


def nearest_eig(G, target):
    vals = eigs(G.astype(complex), k=1, sigma=target, return_eigenvectors=False)
    return complex(vals[0])


def test_char_A1_values():
    assert char_A1(0.0, 1.0, 1.0) == pytest.approx(1.0)
    # sinh(iy) = i sin y, cosh(iy) = cos y
    assert char_A1(1j * math.pi / 2, 1.0, 0.0) == pytest.approx(-math.pi / 2)


def test_char_A_matched_gain():
    assert char_A(-1.0, 1.0, 1.0) == 0
    assert char_A(-2.0, 1.0, 1.0) == pytest.approx(2 * (-1.0) * math.exp(-2.0))


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(max_magnitude=3.0), st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_derivatives_match_finite_differences(lam, alpha, other):
    h = 1e-6
    for f, fp in ((char_A1, char_A1_prime), (char_A, char_A_prime)):
        num = (f(lam + h, alpha, other) - f(lam - h, alpha, other)) / (2 * h)
        assert abs(num - fp(lam, alpha, other)) <= 1e-5 * max(1.0, abs(fp(lam, alpha, other)))


def test_real_seed_cannot_reach_complex_roots():
    # for alpha = beta = 1 the function has no real zeros; Newton from -0.5 wanders off
    with pytest.raises(DesignInfeasibleError):
        find_root("A1", -0.5, 1.0, 1.0)


def test_root_char_A1_against_discretized_operator():
    lam = find_root("A1", -0.3 + 0.9j, 1.0, 1.0)
    assert abs(char_A1(lam, 1.0, 1.0)) <= 1e-10
    assert lam == pytest.approx(-0.30251 + 0.894094j, abs=1e-5)
    G = wave_generator(800, ("flux_vel", 0.0), ("robin", 1.0, 1.0))
    assert abs(nearest_eig(G, lam) - lam) <= 1e-3


def test_root_char_A_against_discretized_operator():
    alpha, k = 1.0, 0.5
    lam = find_root("A", -1.0 + 2.0j, alpha, k)
    assert abs(char_A(lam, alpha, k)) <= 1e-10
    G = wave_generator(800, ("flux_vel", k), ("robin", alpha, 0.0))
    assert abs(nearest_eig(G, lam) - lam) <= 1e-3


def test_find_root_rejects_unknown():
    with pytest.raises(InvalidInputError):
        find_root("B", 0.0, 1.0, 1.0)


def test_worked_assumptions(worked):
    rep = check_assumptions(worked)
    assert rep.ok
    assert rep.margins_A1[0] == pytest.approx(1.0)
    assert rep.controllable_rank == 1 and rep.observable_rank == 1
    assert rep.failures() == []


def test_planted_root_flags_and_names_eigenvalue():
    cfg = PlantConfig.from_dict(verify.planted_config())
    rep = check_assumptions(cfg)
    assert not rep.spectrum_A1_ok
    assert not rep.ok
    assert any("-0.30251" in f for f in rep.failures())
    doc = rep.to_dict()
    assert doc["ok"] is False


def test_uncontrollable_and_unobservable():
    cfg = PlantConfig.from_dict({"A": [[-1.0, 0.0], [0.0, -2.0]], "B1": [1.0, 0.0], "C": [[1.0, 0.0]]})
    rep = check_assumptions(cfg)
    assert not rep.controllable
    assert not rep.observable


def test_worked_gains(worked, worked_kernels):
    g = design_gains(worked, worked_kernels, poles_K=[-1.0], poles_H=[-2.0])
    np.testing.assert_allclose(g.K, [-1.0], atol=1e-14)
    np.testing.assert_allclose(g.H, [[-2.0]], atol=1e-14)


def test_ackermann_double_integrator():
    K = ackermann([[0.0, 1.0], [0.0, 0.0]], [0.0, 1.0], [-1.0, -2.0])
    np.testing.assert_allclose(K, [-2.0, -3.0], atol=1e-13)


def test_ackermann_uncontrollable():
    with pytest.raises(DesignInfeasibleError):
        ackermann(np.diag([1.0, 2.0]), [1.0, 0.0], [-1.0, -2.0])


def test_place_H_multi_output():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    C = rng.normal(size=(2, 3))
    H = place_H(A, C, [-1.0, -2.0, -3.0])
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(A + H @ C).real), [-3.0, -2.0, -1.0], atol=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_random_designs_hurwitz(seed):
    rng = np.random.default_rng(seed)
    cfg = verify.random_plant(rng)
    if not check_assumptions(cfg).ok:
        pytest.skip("random plant violates an assumption")
    ks = compute_kernels(cfg, 32)
    g = design_gains(cfg, ks)
    assert np.linalg.eigvals(cfg.A + np.outer(ks.L2_at_1, g.K)).real.max() < 0
    assert np.linalg.eigvals(cfg.A + g.H @ cfg.C).real.max() < 0


def test_complex_pole_pairs(worked):
    cfg = PlantConfig.from_dict({"A": [[0.0, 1.0], [-1.0, 0.0]], "B1": [0.0, 1.0], "C": [[1.0, 0.0]]})
    ks = compute_kernels(cfg, 16)
    g = design_gains(cfg, ks, poles_K=[[-1.0, 1.0], [-1.0, -1.0]])
    ev = np.linalg.eigvals(cfg.A + np.outer(ks.L2_at_1, g.K))
    assert sorted(ev, key=lambda z: z.imag)[0] == pytest.approx(cmath.rect(math.sqrt(2), -3 * math.pi / 4))


def test_explicit_unstable_gain_rejected(worked, worked_kernels):
    with pytest.raises(DesignInfeasibleError):
        design_gains(worked, worked_kernels, K=[1.0])
