"""Acceptance checks. Each check returns a CheckResult with measured values,
the thresholds it was held to and a pass flag.

Module-level functions are looked up at call time (``kernel.compute_Q`` and
friends), so a monkeypatched formula shows up here as a failing check.
"""

import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.linalg import expm

from . import closedloop, design, kernel, matrixfun, wavesolver
from .analysis import boundedness, fit_decay, tracking_error

# kernel residuals whose coarse value sits below this (relative to max|L2|) are
# sample noise from per-node matrix functions, not truncation error
NOISE_FLOOR = 1e-9
WORKED = {"A": [[0.0]], "B1": [1.0], "alpha": 1.0, "beta": 1.0}


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    measured: Dict[str, object] = field(default_factory=dict)
    expected: Dict[str, object] = field(default_factory=dict)
    seconds: float = 0.0
    notes: List[str] = field(default_factory=list)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        meas = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{status}] {self.number:2d} {self.name}: {meas} ({self.seconds:.1f}s)"

    def to_dict(self):
        return json.loads(json.dumps(asdict(self), default=_jsonable))


def _fmt(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.3g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, complex):
        return [v.real, v.imag]
    return str(v)


def _timed(fn):
    def run(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t0
        return res

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def worked_config():
    return kernel.PlantConfig.from_dict(WORKED)


def random_plant(rng, n=None, stable=None):
    """A random plant with an invertible kernel denominator."""
    while True:
        m = int(rng.integers(1, 5)) if n is None else n
        A = rng.normal(size=(m, m))
        shift = rng.uniform(0.5, 1.5)
        st = bool(rng.integers(0, 2)) if stable is None else stable
        # move the rightmost eigenvalue to -shift (stable) or +shift (unstable)
        ev = np.linalg.eigvals(A).real.max()
        A = A - (ev + (shift if st else -shift)) * np.eye(m)
        d = {
            "A": A.tolist(),
            "B1": rng.normal(size=m).tolist(),
            "B2": rng.normal(size=m).tolist(),
            "B3": rng.normal(size=m).tolist(),
            "B4": rng.normal(size=m).tolist(),
            "C": rng.normal(size=(1, m)).tolist(),
            "alpha": float(rng.uniform(0.5, 2.0)),
            "beta": float(rng.uniform(0.5, 2.0)),
            "k_est": float(rng.uniform(0.5, 2.0)),
        }
        cfg = kernel.PlantConfig.from_dict(d)
        try:
            kernel.compute_Q(cfg)
        except Exception:
            continue
        return cfg


# ---------------------------------------------------------------- 1

def kernel_convergence(cfg, N_pair=(16, 32), N_abs=400):
    """Max residuals at N_abs and the FD ratios between the pair of coarse grids."""
    coarse, fine = (kernel.kernel_residual(kernel.compute_kernels(cfg, N), cfg) for N in N_pair)
    ks = kernel.compute_kernels(cfg, N_abs)
    top = kernel.kernel_residual(ks, cfg)
    floor = NOISE_FLOOR * max(1.0, float(np.max(np.abs(ks.L2))))
    ratios = {}
    for name in kernel.RESIDUAL_NAMES:
        c, f = coarse.fd[name], fine.fd[name]
        if c <= floor:
            continue
        ratios[name] = c / max(f, 1e-300)
    return top.max_fd(), ratios


@_timed
def check_kernels(n_random=20, seed=1):
    rng = np.random.default_rng(seed)
    cfgs = [worked_config()] + [random_plant(rng, stable=(i % 2 == 0)) for i in range(n_random)]
    worst, min_ratio, checked = 0.0, math.inf, 0
    for cfg in cfgs:
        r, ratios = kernel_convergence(cfg)
        worst = max(worst, r)
        for v in ratios.values():
            min_ratio = min(min_ratio, v)
            checked += 1
    ok = worst <= 1e-5 and (checked == 0 or min_ratio >= 15.0)
    res = CheckResult(1, "kernel residuals", ok,
                      {"configs": len(cfgs), "max_residual_N400": worst, "min_ratio": min_ratio, "ratios_checked": checked},
                      {"max_residual_N400": 1e-5, "min_ratio": 15.0, "seconds": 5.0})
    return res


def _finish_runtime(res: CheckResult, limit):
    if res.seconds > limit:
        res.passed = False
        res.notes.append(f"runtime {res.seconds:.1f}s over {limit}s")
    res.measured["seconds"] = round(res.seconds, 2)
    return res


# ---------------------------------------------------------------- 2

def random_matrices(rng, count=200):
    out = []
    for i in range(count):
        n = int(rng.integers(1, 7))
        kind = i % 5
        if kind == 0:
            M = rng.normal(size=(n, n)) * rng.uniform(0.1, 2.0)
        elif kind == 1:  # singular
            M = rng.normal(size=(n, n))
            M[:, 0] = 0.0 if n == 1 else M[:, 1]
        elif kind == 2:  # nilpotent
            M = np.triu(rng.normal(size=(n, n)), 1)
        elif kind == 3:  # zero eigenvalue inside a Jordan-like block
            M = np.diag(rng.normal(size=n)) + np.diag(np.ones(n - 1), 1)
            M[0, 0] = 0.0
        else:
            M = rng.normal(size=(n, n)) * 3.0
        out.append(M)
    return out


@_timed
def check_matrix_identities(seed=2):
    rng = np.random.default_rng(seed)
    worst_g, worst_h = 0.0, 0.0
    for M in random_matrices(rng):
        c, s = matrixfun.mat_cosh(M), matrixfun.mat_sinh(M)
        g = matrixfun.mat_gfun(M)
        n = M.shape[0]
        worst_g = max(worst_g, np.linalg.norm(M @ g - s) / max(1.0, np.linalg.norm(s)))
        worst_h = max(worst_h, np.linalg.norm(c @ c - s @ s - np.eye(n)) / max(1.0, np.linalg.norm(c) ** 2))
    ok = worst_g <= 1e-9 and worst_h <= 1e-9
    return CheckResult(2, "matrix-function identities", ok,
                       {"matrices": 200, "MG_minus_sinh": worst_g, "cosh2_minus_sinh2": worst_h},
                       {"relative": 1e-9, "seconds": 5.0})


# ---------------------------------------------------------------- 3

@_timed
def check_transform(n_states=100, seed=3, N=64):
    rng = np.random.default_rng(seed)
    x = wavesolver.grid(N)
    x2 = wavesolver.grid(2 * N)
    worst_rt, worst_allow = 0.0, 0.0
    ok = True
    cache = {}
    for i in range(n_states):
        key = i % 10
        if key not in cache:
            cfg = worked_config() if key == 0 else random_plant(rng)
            cache[key] = (cfg, kernel.compute_kernels(cfg, N), kernel.compute_kernels(cfg, 2 * N))
        cfg, ks, ks2 = cache[key]
        a = rng.normal(size=(2, 4))

        def prof(xx, row):
            return sum(a[row, j] * np.cos((j + 1) * np.pi * xx + j) for j in range(4))

        X = rng.normal(size=cfg.n)
        s = kernel.TransformState(X, wavesolver.WaveGridState(N, prof(x, 0), prof(x, 1)))
        Y = kernel.apply_transform("forward", s, ks)
        back = kernel.apply_transform("inverse", kernel.TransformState(Y, s.field), ks)
        s2 = wavesolver.WaveGridState(2 * N, prof(x2, 0), prof(x2, 1))
        quad_est = float(np.max(np.abs(ks.P(s.field.disp, s.field.vel) - ks2.P(s2.disp, s2.vel))))
        allow = 1e-10 + quad_est
        err = float(np.max(np.abs(back - X)))
        worst_rt = max(worst_rt, err)
        worst_allow = max(worst_allow, quad_est)
        ok &= err <= allow
    return CheckResult(3, "transform round trip", bool(ok),
                       {"states": n_states, "max_round_trip": worst_rt, "max_quadrature_estimate": worst_allow},
                       {"round_trip": "1e-10 + quadrature estimate"})


# ---------------------------------------------------------------- 4

def target_oracle_error(N, T=20.0, X0=2.0):
    cfg = worked_config()
    ks = kernel.compute_kernels(cfg, N)
    gains = design.design_gains(cfg, ks)
    ic = closedloop.ClosedLoopIC.build(cfg, N, {"X": [X0], "w": {"kind": "cos", "mode": 1}})
    tr = closedloop.simulate_state_feedback(cfg, gains, ic, T, N, ks=ks)
    Y = tr["Y"]
    t = tr["t"]
    Acl = cfg.A + np.outer(ks.L2_at_1, gains.K)
    Ye = np.array([expm(Acl * ti) @ Y[0] for ti in t])
    return float(np.max(np.abs(Y - Ye)) / np.max(np.abs(Ye)))


@_timed
def check_target_oracle():
    errs = {N: target_oracle_error(N) for N in (100, 200, 400)}
    r1, r2 = errs[100] / errs[200], errs[200] / errs[400]
    ok = errs[200] <= 2e-2 and min(r1, r2) >= 1.5
    res = CheckResult(4, "target-system oracle", ok,
                      {"rel_err_N100": errs[100], "rel_err_N200": errs[200], "rel_err_N400": errs[400],
                       "ratio_100_200": r1, "ratio_200_400": r2},
                      {"rel_err_N200": 2e-2, "min_ratio": 1.5, "seconds": 30.0})
    res.notes.append("ratio threshold checks the second-order rate rather than a halving")
    return res


# ---------------------------------------------------------------- 5

def state_feedback_demo(N=200, T=40.0):
    cfg = worked_config()
    ks = kernel.compute_kernels(cfg, N)
    gains = design.design_gains(cfg, ks)
    ic = closedloop.ClosedLoopIC.demo(cfg, N)
    tr = closedloop.simulate_state_feedback(cfg, gains, ic, T, N, ks=ks)
    return tr["t"], np.hypot(tr["norm_X"], tr["norm_w"])


@_timed
def check_state_decay():
    t, norm = state_feedback_demo()
    fit = fit_decay(t, norm)
    ratio = float(norm[-1] / norm[0])
    ok = fit.gamma > 0.05 and fit.residual < 0.1 and ratio <= 1e-2
    res = CheckResult(5, "state-feedback decay", ok,
                      {"gamma": fit.gamma, "fit_residual": fit.residual, "final_over_initial": ratio},
                      {"gamma": "> 0.05", "fit_residual": "< 0.1", "final_over_initial": "<= 1e-2"})
    if fit.residual >= 0.1:
        res.notes.append("slowest closed-loop mode is oscillatory; the log-norm ripples around the fitted line")
    return res


# ---------------------------------------------------------------- 6

DISTURBANCES = {
    "sin": {"d_kind": "sinusoid"},
    "sin+f": {"d_kind": "sinusoid", "f_kind": "bounded_nonlinear"},
    "step": {"d_kind": "step", "d_amp": 0.5, "d_t0": 1.0},
}


@lru_cache(maxsize=None)
def error_run(dist_name, N=200, T=20.0, ic_kind="demo"):
    cfg = worked_config()
    ks = kernel.compute_kernels(cfg, N)
    gains = design.design_gains(cfg, ks)
    ic = closedloop.ClosedLoopIC.demo(cfg, N) if ic_kind == "demo" else closedloop.ClosedLoopIC.smooth(cfg, ks)
    dist = closedloop.DisturbanceSpec.from_dict(DISTURBANCES[dist_name])
    return closedloop.simulate_error_systems(cfg, gains, ic, dist, T, N, ks=ks)


@_timed
def check_error_decay():
    gam, res_ = {}, {}
    sub = {}
    for name in DISTURBANCES:
        tr = error_run(name)
        fit = fit_decay(tr["t"], tr["error_norm"])
        gam[name], res_[name] = fit.gamma, fit.residual
        sub[name] = float(tr["error_norm_subtracted"][-1])
    spread = max(gam.values()) - min(gam.values())
    ok = min(gam.values()) > 0.05
    res = CheckResult(6, "observer-error decay", ok,
                      {"gamma": [gam[k] for k in DISTURBANCES], "fit_residual": [res_[k] for k in DISTURBANCES],
                       "gamma_spread": spread},
                      {"gamma": "> 0.05 for each disturbance"})
    res.notes.append("error fields integrated directly; final norms by subtraction from the full loop: "
                     + ", ".join(f"{k} {v:.2e}" for k, v in sub.items()))
    return res


# ---------------------------------------------------------------- 7

@lru_cache(maxsize=None)
def output_run(N, T, dist_key):
    cfg = worked_config()
    ks = kernel.compute_kernels(cfg, N)
    gains = design.design_gains(cfg, ks)
    ic = closedloop.ClosedLoopIC.demo(cfg, N)
    dist = closedloop.DisturbanceSpec.from_dict(dict(dist_key))
    return closedloop.simulate_output_feedback(cfg, gains, ic, dist, T, N, ks=ks)


def _key(d):
    return tuple(sorted(d.items()))


@_timed
def check_tracking(T=20.0):
    ratios = {}
    for N in (100, 200, 400):
        tr = output_run(N, T, _key(DISTURBANCES["sin"]))
        ratios[N] = tracking_error(tr["F"], tr["F_hat"], tr["t"])[2]
    mono = ratios[100] >= ratios[200] >= ratios[400]
    ok = ratios[200] <= 0.05 and mono
    return CheckResult(7, "disturbance tracking", ok,
                       {"ratio_N100": ratios[100], "ratio_N200": ratios[200], "ratio_N400": ratios[400], "monotone": mono},
                       {"ratio_N200": 0.05, "monotone": True})


# ---------------------------------------------------------------- 8

def _zp(tr):
    return np.hypot(tr["norm_z"], tr["norm_p"])


@_timed
def check_main_claims(N=200, T=60.0, fit_until=20.0):
    tr = output_run(N, T, _key(DISTURBANCES["sin+f"]))
    t = tr["t"]
    early = t <= fit_until + 1e-9
    plant = np.hypot(tr["norm_X"], tr["norm_w"])
    obs = np.hypot(tr["norm_Xhat"], tr["norm_what"])
    fp, fo = fit_decay(t[early], plant[early]), fit_decay(t[early], obs[early])
    zp = _zp(tr)
    bounded = bool(np.all(np.isfinite(zp))) and boundedness(t, zp)
    floor = float(plant[t >= 2 * T / 3].max())
    ok_a = fp.gamma > 0.05 and fo.gamma > 0.05 and bounded

    tr0 = output_run(N, T, _key({"f_kind": "bounded_nonlinear"}))
    zp0 = _zp(tr0)
    frac = float(zp0[-1] / zp0.max())
    ok_b = frac <= 5e-2
    res = CheckResult(8, "closed-loop claims", ok_a and ok_b,
                      {"gamma_plant": fp.gamma, "gamma_observer": fo.gamma, "zp_bounded": bounded,
                       "plant_floor": floor, "zp_final_over_peak": frac},
                      {"gamma": "> 0.05 before the grid floor", "zp_bounded": True, "zp_final_over_peak": 5e-2})
    res.notes.append(f"plant and observer norms fitted on t <= {fit_until}; afterwards they settle at a grid-dependent floor")
    return res


# ---------------------------------------------------------------- 9

def estimator_decrement(N, k=1.0, T=3.0):
    ph0 = wavesolver.WaveGridState.from_functions(N, lambda x: np.exp(-((x - 0.5) / 0.1) ** 2))
    r = closedloop.simulate_estimator_error(k, ph0, T)
    E, v = r["E2_scheme"], r["ph_t0"]
    dt = r["t"][1] - r["t"][0]
    dE = np.diff(E)
    pred = -k * dt * (v[1:] ** 2 + v[:-1] ** 2)
    return float(dE.max()), float(np.max(np.abs(dE - pred))), float(np.max(np.abs(dE)))


@_timed
def check_energy():
    runs = [error_run(name) for name in DISTURBANCES] + [output_run(200, 60.0, _key(DISTURBANCES["sin+f"]))]
    # relative slack covers rounding once everything has decayed to ~1e-17
    margin = min(float(np.min((tr["E0"] - np.abs(tr["rho"])) / np.maximum(tr["E0"], 1e-300))) for tr in runs)
    inc, mism = {}, {}
    for N in (100, 200, 400):
        inc[N], mism[N], _ = estimator_decrement(N)
    r1, r2 = mism[100] / mism[200], mism[200] / mism[400]
    monotone = max(inc.values()) <= 1e-12
    ok = margin >= -1e-12 and monotone and min(r1, r2) >= 3.0
    return CheckResult(9, "energy diagnostics", ok,
                       {"min_rel_E0_minus_abs_rho": margin, "max_E2_increment": max(inc.values()),
                        "decrement_mismatch": [mism[100], mism[200], mism[400]], "mismatch_ratios": [r1, r2]},
                       {"min_rel_E0_minus_abs_rho": ">= -1e-12", "max_E2_increment": "<= 1e-12", "mismatch_ratio": ">= 3 (O(dt^2))"})


# ---------------------------------------------------------------- 10

def planted_config():
    """A real 2x2 A whose eigenvalues are a conjugate pair of roots of char_A1."""
    lam = design.find_root("A1", -0.3 + 0.9j, 1.0, 1.0)
    a, b = lam.real, lam.imag
    return {"A": [[a, b], [-b, a]], "B1": [1.0, 0.0], "C": [[1.0, 0.0]], "alpha": 1.0, "beta": 1.0}


@_timed
def check_assumption_gate(n_random=20, seed=10):
    from . import cli

    plant = planted_config()
    rep = design.check_assumptions(kernel.PlantConfig.from_dict(plant))
    flipped = not rep.spectrum_A1_ok
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "planted.json")
        with open(path, "w") as fh:
            json.dump({"plant": plant, "scenario": "output_feedback", "grid": 20, "horizon": 0.1}, fh)
        code = cli.main(["simulate", "--config", path, "--out", os.path.join(tmp, "out")], quiet=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_random):
        cfg = random_plant(rng)
        cfg.B2[:] = 0.0
        cfg.B3[:] = 0.0
        cfg.B4[:] = 0.0
        Q, Q1 = kernel.compute_Q(cfg), kernel.reduced_Q1(cfg)
        worst = max(worst, float(np.max(np.abs(Q - Q1)) / max(1.0, np.max(np.abs(Q1)))))
    ok = flipped and code == 3 and worst <= 1e-11
    return CheckResult(10, "assumption gate", ok,
                       {"spectrum_A1_ok": rep.spectrum_A1_ok, "simulate_exit_code": code, "max_Q_minus_Q1": worst},
                       {"spectrum_A1_ok": False, "simulate_exit_code": 3, "max_Q_minus_Q1": 1e-11})


# ---------------------------------------------------------------- 11

def standing_wave_error(N, t_end=1.0, dt_factor=0.5):
    s = wavesolver.WaveGridState.from_functions(N, lambda x: np.cos(np.pi * x))
    dt = wavesolver.time_step(N, dt_factor)
    steps = int(round(t_end / dt))
    bc = wavesolver.BoundaryCondition.neumann_flux(0.0)
    out = wavesolver.simulate_wave(s, bc, bc, dt, steps)
    x, t = out.x, out.t
    ex_u = np.cos(np.pi * x) * np.cos(np.pi * t)
    ex_v = -np.pi * np.cos(np.pi * x) * np.sin(np.pi * t)
    return float(max(np.max(np.abs(out.disp - ex_u)), np.max(np.abs(out.vel - ex_v))))


@_timed
def check_standing_wave():
    e1, e2 = standing_wave_error(100), standing_wave_error(200)
    r = e1 / e2
    return CheckResult(11, "wave-solver convergence", 3.5 <= r <= 4.5,
                       {"err_N100": e1, "err_N200": e2, "ratio": r}, {"ratio": [3.5, 4.5]})


CHECKS: Dict[int, Callable[[], CheckResult]] = {
    1: lambda: _finish_runtime(check_kernels(), 5.0),
    2: lambda: _finish_runtime(check_matrix_identities(), 5.0),
    3: check_transform,
    4: lambda: _finish_runtime(check_target_oracle(), 30.0),
    5: check_state_decay,
    6: check_error_decay,
    7: check_tracking,
    8: check_main_claims,
    9: check_energy,
    10: check_assumption_gate,
    11: check_standing_wave,
}


NAMES = {
    1: "kernel residuals", 2: "matrix-function identities", 3: "transform round trip",
    4: "target-system oracle", 5: "state-feedback decay", 6: "observer-error decay",
    7: "disturbance tracking", 8: "closed-loop claims", 9: "energy diagnostics",
    10: "assumption gate", 11: "wave-solver convergence",
}


def run_check(num) -> CheckResult:
    """Run one check; an exception inside it counts as a failure."""
    t0 = time.perf_counter()
    try:
        return CHECKS[num]()
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        return CheckResult(num, NAMES[num], False, {"error": f"{type(exc).__name__}: {exc}"},
                           seconds=time.perf_counter() - t0)


def run_all(select: Optional[List[int]] = None, echo: Optional[Callable[[str], None]] = None):
    results = []
    for num in CHECKS:
        if select and num not in select:
            continue
        res = run_check(num)
        results.append(res)
        if echo:
            echo(res.line())
    return results


def clear_caches():
    error_run.cache_clear()
    output_run.cache_clear()
