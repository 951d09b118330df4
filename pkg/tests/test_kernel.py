import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odewave import kernel, verify
from odewave.errors import DesignInfeasibleError, InvalidInputError
from odewave.kernel import (PlantConfig, TransformState, apply_transform, compute_kernels, compute_Q,
                            kernel_residual, reduced_Q1)
from odewave.wavesolver import WaveGridState, grid


def test_worked_config_closed_forms(worked_kernels):
    ks = worked_kernels
    # A = 0: L2(x) = -x B1 + Q with Q = 2, so L2 = 2 - x and L1 = A(...) = 0
    np.testing.assert_allclose(ks.Q, [2.0], atol=1e-14)
    np.testing.assert_allclose(ks.L2[:, 0], 2.0 - ks.x, atol=1e-14)
    np.testing.assert_allclose(ks.L1, 0.0, atol=1e-14)
    np.testing.assert_allclose(ks.L3, [0.0])
    np.testing.assert_allclose(ks.L4, [1.0], atol=1e-14)
    np.testing.assert_allclose(ks.L2_at_1, [1.0], atol=1e-14)
    # the two boundary conditions of the kernel problem
    assert ks.dL2_0[0] == pytest.approx(-1.0)
    assert ks.dL2_1[0] + 1.0 * ks.L2_at_1[0] == pytest.approx(0.0, abs=1e-14)


def test_Q_at_A_zero_collapses():
    # A = 0 gives Q = (B3 + (1 + alpha) B1) / alpha
    for alpha, b1, b3 in [(1.0, 1.0, 0.0), (2.0, 0.5, 1.5), (0.5, -1.0, 2.0)]:
        cfg = PlantConfig.from_dict({"A": [[0.0]], "B1": [b1], "B3": [b3], "alpha": alpha})
        assert compute_Q(cfg)[0] == pytest.approx((b3 + (1 + alpha) * b1) / alpha, rel=1e-13)


def test_Q_scalar_unit_A():
    cfg = PlantConfig.from_dict({"A": [[1.0]], "B1": [1.0]})
    c, s = math.cosh(1.0), math.sinh(1.0)
    assert compute_Q(cfg)[0] == pytest.approx((c + 2 * s) / (s + 2 * c), rel=1e-13)


def test_worked_residuals_at_rounding(worked, worked_kernels):
    rep = kernel_residual(worked_kernels, worked)
    assert max(rep.fd.values()) <= 1e-8
    assert max(rep.analytic.values()) <= 1e-12


def test_random_stable_3x3_ode_residual():
    rng = np.random.default_rng(7)
    cfg = verify.random_plant(rng, n=3, stable=True)
    rep = kernel_residual(compute_kernels(cfg, 400), cfg)
    assert rep.fd["ode"] <= 1e-5


def test_fd_residuals_fourth_order():
    rng = np.random.default_rng(11)
    cfg = verify.random_plant(rng, n=2, stable=False)
    _, ratios = verify.kernel_convergence(cfg)
    assert ratios, "no residual above the noise floor"
    assert min(ratios.values()) >= 15.0


def test_reduced_Q1():
    cfg = PlantConfig.from_dict({"A": [[0.0]], "B1": [1.0]})
    np.testing.assert_allclose(reduced_Q1(cfg), [2.0], atol=1e-14)
    zero = PlantConfig.from_dict({"A": [[0.3, 1.0], [-1.0, 0.2]], "B1": [0.0, 0.0]})
    np.testing.assert_allclose(reduced_Q1(zero), 0.0)
    rng = np.random.default_rng(5)
    for _ in range(10):
        A = rng.normal(size=(2, 2))
        A -= (np.linalg.eigvals(A).real.max() + 0.5) * np.eye(2)
        cfg = PlantConfig.from_dict({"A": A.tolist(), "B1": rng.normal(size=2).tolist()})
        np.testing.assert_allclose(reduced_Q1(cfg), compute_Q(cfg), rtol=0, atol=1e-11)
    with pytest.raises(InvalidInputError):
        reduced_Q1(PlantConfig.from_dict({"A": [[0.0]], "B1": [1.0], "B4": [1.0]}))


def test_singular_denominator_is_infeasible():
    cfg = PlantConfig.from_dict(verify.planted_config())
    with pytest.raises(DesignInfeasibleError):
        compute_Q(cfg)


def test_transform_examples(worked_kernels):
    N = worked_kernels.N
    one = WaveGridState(N, np.ones(N + 1), np.zeros(N + 1))
    Y = apply_transform("forward", TransformState(np.zeros(1), one), worked_kernels)
    np.testing.assert_allclose(Y, [1.0], atol=1e-14)
    zero = WaveGridState.zeros(N)
    X = np.array([0.7])
    np.testing.assert_array_equal(apply_transform("forward", TransformState(X, zero), worked_kernels), X)
    with pytest.raises(InvalidInputError):
        apply_transform("sideways", TransformState(X, zero), worked_kernels)
    with pytest.raises(InvalidInputError):
        apply_transform("forward", TransformState(X, WaveGridState.zeros(N // 2)), worked_kernels)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(-5, 5))
def test_transform_round_trip(coef, X0):
    cfg = PlantConfig.from_dict({"A": [[0.4]], "B1": [1.0], "B2": [0.3], "B3": [-0.2], "B4": [0.5]})
    ks = _cached(cfg)
    x = ks.x
    disp = coef[0] + coef[1] * np.cos(np.pi * x) + coef[2] * x ** 2
    vel = coef[3] + coef[4] * np.sin(2 * x) + coef[5] * x
    s = TransformState(np.array([X0]), WaveGridState(ks.N, disp, vel))
    Y = apply_transform("forward", s, ks)
    back = apply_transform("inverse", TransformState(Y, s.field), ks)
    assert abs(back[0] - X0) <= 1e-10
    fwd = apply_transform("forward", TransformState(apply_transform("inverse", s, ks), s.field), ks)
    assert abs(fwd[0] - X0) <= 1e-10


_KS = {}


def _cached(cfg):
    key = id(type(cfg))
    if key not in _KS:
        _KS[key] = compute_kernels(cfg, 64)
    return _KS[key]


def test_kernels_read_only(worked_kernels):
    with pytest.raises(ValueError):
        worked_kernels.L2[0, 0] = 1.0


def test_kernel_csv(tmp_path, worked_kernels):
    path = tmp_path / "k.csv"
    worked_kernels.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 0], grid(200))
    np.testing.assert_allclose(data[:, 2], 2.0 - grid(200), atol=1e-14)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        PlantConfig.from_dict({"A": [[0.0]], "B1": [1.0], "alpha": -1.0})
    with pytest.raises(InvalidInputError):
        PlantConfig.from_dict({"A": [[0.0, 1.0]], "B1": [1.0]})
    with pytest.raises(InvalidInputError):
        PlantConfig.from_dict({"A": [[0.0]], "B1": [1.0, 2.0]})
    with pytest.raises(InvalidInputError):
        PlantConfig.from_dict({"A": [[0.0]]})


def test_sign_flipped_Q_fails_the_kernel_check(monkeypatch):
    good = kernel.compute_Q
    monkeypatch.setattr(kernel, "compute_Q", lambda cfg: -good(cfg))
    res = verify.run_check(1)
    assert not res.passed
    # with the L2(1) cross-check out of the way the residuals themselves blow up
    monkeypatch.setattr(kernel, "_L2_CROSSCHECK_TOL", math.inf)
    res = verify.run_check(1)
    assert not res.passed
    assert res.measured["max_residual_N400"] > 1e-2
