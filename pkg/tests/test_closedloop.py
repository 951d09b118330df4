import math

import numpy as np
import pytest

from odewave import verify
from odewave.analysis import tracking_error
from odewave.closedloop import (ClosedLoopIC, DisturbanceSpec, Trace, check_compatibility,
                                control_output_feedback, control_state_feedback, estimate_disturbance,
                                eval_total_disturbance, profile, simulate_error_systems,
                                simulate_output_feedback, simulate_state_feedback)
from odewave.design import design_gains
from odewave.errors import BlowUpError, InvalidInputError
from odewave.kernel import compute_kernels
from odewave.wavesolver import WaveGridState, grid


@pytest.fixture(scope="module")
def setup():
    cfg = verify.worked_config()
    ks = compute_kernels(cfg, 40)
    return cfg, ks, design_gains(cfg, ks)


def test_state_feedback_law(worked, worked_kernels):
    N = worked_kernels.N
    zero = WaveGridState.zeros(N)
    assert control_state_feedback([0.0], zero, worked_kernels, [-1.0], 1.0, 1.0) == 0.0
    w = WaveGridState(N, np.full(N + 1, 0.5), np.full(N + 1, 2.0))
    assert control_state_feedback([3.0], w, worked_kernels, [0.0], 1.0, 1.0) == pytest.approx(-0.5 - 2.0)
    one = WaveGridState(N, np.ones(N + 1), np.zeros(N + 1))
    assert control_state_feedback([0.0], one, worked_kernels, [-1.0], 1.0, 1.0) == pytest.approx(-2.0, abs=1e-13)


def test_output_feedback_law(worked_kernels):
    ks = worked_kernels
    N = ks.N
    zero = WaveGridState.zeros(N)
    assert control_output_feedback([0.0], zero, 0.0, zero, ks, [-1.0], 1.0, 1.0) == 0.0
    assert control_output_feedback([1.0], zero, 0.0, zero, ks, [-1.0], 1.0, 1.0) == pytest.approx(-1.0)
    x = grid(N)
    w = WaveGridState(N, np.cos(2 * x), np.sin(x))
    us = control_state_feedback([0.4], w, ks, [-1.0], 1.0, 1.0)
    uo = control_output_feedback([0.4], w, w.disp[-1], zero, ks, [-1.0], 1.0, 1.0)
    assert uo == pytest.approx(us, abs=1e-13)


def test_total_disturbance():
    N = 20
    zero = WaveGridState.zeros(N)
    assert eval_total_disturbance(DisturbanceSpec(), zero, 1.0) == 0.0
    assert eval_total_disturbance(DisturbanceSpec(d_kind="sinusoid"), zero, math.pi / 4) == pytest.approx(1.0)
    one = WaveGridState(N, np.ones(N + 1), np.zeros(N + 1))
    f = DisturbanceSpec(f_kind="bounded_nonlinear")
    assert eval_total_disturbance(f, one, 0.0) == pytest.approx(0.1 * math.sin(1.0), rel=1e-14)
    step = DisturbanceSpec(d_kind="step", d_amp=2.0, d_t0=1.0)
    assert step.d(0.5) == 0.0 and step.d(1.0) == 2.0
    tab = DisturbanceSpec(d_kind="tabulated", d_table=([0.0, 1.0], [0.0, 4.0]))
    assert tab.d(0.25) == pytest.approx(1.0)
    assert f.vanishes_at_rest and not DisturbanceSpec(d_kind="sinusoid").vanishes_at_rest


def test_disturbance_validation():
    with pytest.raises(InvalidInputError):
        DisturbanceSpec(d_kind="noise")
    with pytest.raises(InvalidInputError):
        DisturbanceSpec(d_kind="tabulated")
    with pytest.raises(InvalidInputError):
        DisturbanceSpec.from_dict({"amplitude": 1.0})
    with pytest.raises(InvalidInputError):
        DisturbanceSpec(d_amp=math.nan)
    spec = DisturbanceSpec(f_kind="tabulated", f_table=([0.0, 2.0], [0.0, 1.0]))
    assert DisturbanceSpec.from_dict(spec.to_dict()).f_of_s(1.0) == pytest.approx(0.5)


def test_estimate_disturbance():
    N = 20
    x = grid(N)
    assert estimate_disturbance(WaveGridState.zeros(N), 1.0) == 0.0
    assert estimate_disturbance(WaveGridState(N, 1.0 - x, np.zeros(N + 1)), 1.0) == pytest.approx(1.0, abs=1e-12)


def test_profiles():
    x = grid(8)
    np.testing.assert_allclose(profile({"kind": "cos", "mode": 2}, x), np.cos(2 * np.pi * x))
    np.testing.assert_allclose(profile(lambda y: y ** 2, x), x ** 2)
    np.testing.assert_allclose(profile(2.0, x), 2.0)
    a = profile({"kind": "random"}, x, np.random.default_rng(1))
    b = profile({"kind": "random"}, x, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(InvalidInputError):
        profile({"kind": "square"}, x)
    with pytest.raises(InvalidInputError):
        profile(np.ones(3), x)


def test_initial_data_checks(worked):
    with pytest.raises(InvalidInputError):
        ClosedLoopIC.build(worked, 20, {"q": 1.0})
    ic = ClosedLoopIC.build(worked, 20, {"w": 1.0, "z": 3.0})
    assert ic.p.disp[-1] == 2.0
    check_compatibility(ic)
    bad = ClosedLoopIC.build(worked, 20, {"w": 1.0, "p": 0.0})
    with pytest.raises(InvalidInputError):
        check_compatibility(bad)


def test_smooth_ic_starts_with_zero_control(setup):
    cfg, ks, gains = setup
    ic = ClosedLoopIC.smooth(cfg, ks)
    tr = simulate_output_feedback(cfg, gains, ic, DisturbanceSpec(), 0.05, ks.N, ks=ks)
    assert tr["u"][0] == pytest.approx(0.0, abs=1e-14)


def test_zero_data_stays_zero(setup):
    cfg, ks, gains = setup
    N = ks.N
    ic = ClosedLoopIC.build(cfg, N)
    tr = simulate_state_feedback(cfg, gains, ic, 2.0, N, ks=ks)
    assert not np.any(tr["norm_w"]) and not np.any(tr["u"])
    tr = simulate_output_feedback(cfg, gains, ic, DisturbanceSpec(f_kind="bounded_nonlinear"), 2.0, N, ks=ks)
    for c in ("u", "norm_w", "norm_what", "norm_z", "norm_p", "F", "F_hat"):
        assert not np.any(tr[c]), c
    tr = simulate_error_systems(cfg, gains, ic, DisturbanceSpec(), 2.0, N, ks=ks)
    assert not np.any(tr["error_norm"])


def test_superposition_is_exact(setup):
    cfg, ks, gains = setup
    ic = ClosedLoopIC.demo(cfg, ks.N)
    tr = simulate_error_systems(cfg, gains, ic, DisturbanceSpec(d_kind="sinusoid"), 5.0, ks.N, ks=ks, record_every=1)
    assert tr["superposition"].max() <= 1e-8
    # the estimator and zh error fields are linear combinations of full-loop fields
    assert tr["diff_ph"].max() <= 1e-8
    assert tr["diff_zh"].max() <= 1e-8


def test_error_trace_inequalities(setup):
    cfg, ks, gains = setup
    ic = ClosedLoopIC.demo(cfg, ks.N)
    tr = simulate_error_systems(cfg, gains, ic, DisturbanceSpec(d_kind="sinusoid"), 5.0, ks.N, ks=ks, record_every=1)
    a = cfg.alpha
    assert np.all(tr["wt_end"] ** 2 <= tr["norm_wt"] ** 2 / a * (1 + 1e-12))
    assert np.all(np.abs(tr["rho"]) <= tr["E0"] * (1 + 1e-12))
    assert np.all(np.diff(tr["E2_scheme"]) <= 1e-12 * tr["E2_scheme"][0])


def _subtraction_gap(N, T=5.0):
    cfg = verify.worked_config()
    ks = compute_kernels(cfg, N)
    gains = design_gains(cfg, ks)
    ic = ClosedLoopIC.smooth(cfg, ks)
    tr = simulate_error_systems(cfg, gains, ic, DisturbanceSpec(d_kind="sinusoid"), T, N, ks=ks)
    return np.max(np.abs(tr["identity_residual"])), tr["diff_wt"].max(), tr["diff_Xt"].max()


def test_direct_and_subtracted_errors_converge():
    coarse, fine = _subtraction_gap(50), _subtraction_gap(100)
    for c, f in zip(coarse, fine):
        assert f < c / 1.6
    assert fine[0] < 1e-2


def test_state_feedback_target_oracle():
    assert verify.target_oracle_error(100, T=10.0) <= 2e-3


def test_unstable_gain_blows_up(setup):
    cfg, ks, _ = setup
    ic = ClosedLoopIC.demo(cfg, ks.N)
    with pytest.raises(BlowUpError) as info:
        simulate_state_feedback(cfg, [6.0], ic, 20.0, ks.N, ks=ks)
    assert 0 < info.value.t < 20
    assert info.value.trace is not None and len(info.value.trace) > 1


def test_nonlinear_f_without_d_decays():
    tr = verify.output_run(200, 60.0, verify._key({"f_kind": "bounded_nonlinear"}))
    plant = np.hypot(tr["norm_X"], tr["norm_w"])
    obs = np.hypot(tr["norm_Xhat"], tr["norm_what"])
    assert plant[-1] <= 1e-2 * plant[0]
    assert obs[-1] <= 1e-2 * max(obs[0], plant[0])
    zp = np.hypot(tr["norm_z"], tr["norm_p"])
    assert zp[-1] <= 1e-2 * zp.max()


def test_smooth_ic_tracking():
    cfg = verify.worked_config()
    N = 100
    ks = compute_kernels(cfg, N)
    gains = design_gains(cfg, ks)
    tr = simulate_output_feedback(cfg, gains, ClosedLoopIC.smooth(cfg, ks), DisturbanceSpec(d_kind="sinusoid"),
                                  20.0, N, ks=ks)
    assert tracking_error(tr["F"], tr["F_hat"], tr["t"])[2] <= 0.05


def test_trace_csv(tmp_path):
    tr = Trace(("t", "u"))
    tr.append(t=0.0, u=1.0)
    tr.append(t=0.1)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    data = np.genfromtxt(path, delimiter=",", names=True)
    assert data["u"][0] == 1.0 and math.isnan(data["u"][1])
