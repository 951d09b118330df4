"""Closed-loop simulations of the ODE-wave cascade.

Plant:   X' = A X + B1 w(0) + B2 w_t(0) + B3 w(1) + B4 w_t(1)
         w_tt = w_xx,  w_x(0) = 0,  w_x(1) = u + F(t)
Output:  y = (w_t(0), w(1), C X)

Every field is a ``wavesolver.Field`` and all of them advance in lockstep
with one time step. Within a step the fields are half-kicked and drifted
together, the ODE part is advanced by classical RK4 with boundary traces
interpolated across the step, and finally the boundary half-kicks are
closed in dependency order (left ends first, then the control, then the
right ends that depend on it).
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .analysis import energy_diagnostics, h1_norm
from .design import GainSet
from .errors import BlowUpError, InvalidInputError
from .kernel import KernelSet, PlantConfig, compute_kernels
from .wavesolver import (
    Field,
    WaveGridState,
    boundary_trace,
    check_cfl,
    grid,
    one_sided_slope,
    simpson_weights,
    time_step,
)

BLOWUP_LIMIT = 1e10
VISCOSITY = 0.5
RECORD_EVERY = 10

F_KINDS = ("zero", "bounded_nonlinear", "tabulated")
D_KINDS = ("zero", "sinusoid", "step", "tabulated")


# ---------------------------------------------------------------- disturbances

@dataclass
class DisturbanceSpec:
    """F(t) = f(w, w_t) + d(t).

    f is a function of s = int(w^2 + w_t^2): ``bounded_nonlinear`` gives
    f_amp * sin(s), ``tabulated`` interpolates the pairs in ``f_table``.
    d is zero, a_d sin(omega t + phase), a step of height a_d at t0, or
    interpolated from ``d_table`` = (times, values).
    """

    f_kind: str = "zero"
    f_amp: float = 0.1
    f_table: Optional[tuple] = None
    d_kind: str = "zero"
    d_amp: float = 1.0
    d_freq: float = 2.0
    d_phase: float = 0.0
    d_t0: float = 0.0
    d_table: Optional[tuple] = None

    def __post_init__(self):
        if self.f_kind not in F_KINDS:
            raise InvalidInputError(f"f_kind must be one of {F_KINDS}, got {self.f_kind!r}")
        if self.d_kind not in D_KINDS:
            raise InvalidInputError(f"d_kind must be one of {D_KINDS}, got {self.d_kind!r}")
        for name in ("f_amp", "d_amp", "d_freq", "d_phase", "d_t0"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        self.f_table = self._table(self.f_table, "f_table", self.f_kind == "tabulated")
        self.d_table = self._table(self.d_table, "d_table", self.d_kind == "tabulated")

    @staticmethod
    def _table(tab, name, required):
        if tab is None:
            if required:
                raise InvalidInputError(f"{name} is required for a tabulated disturbance")
            return None
        xs, ys = (np.asarray(a, dtype=float) for a in tab)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise InvalidInputError(f"{name} needs two equal-length arrays with increasing abscissae")
        return xs, ys

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown disturbance fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for k in ("f_table", "d_table"):
            if out[k] is not None:
                out[k] = [a.tolist() for a in out[k]]
        return out

    @property
    def is_zero(self):
        return self.f_kind == "zero" and (self.d_kind == "zero" or self.d_amp == 0.0)

    @property
    def vanishes_at_rest(self):
        """True if F = 0 whenever the plant field is zero (f(0,0) = 0 and d = 0)."""
        if self.d_kind != "zero" and not (self.d_kind in ("sinusoid", "step") and self.d_amp == 0.0):
            return False
        return self.f_kind != "tabulated" or abs(self.f_of_s(0.0)) == 0.0

    def d(self, t):
        if self.d_kind == "zero":
            return 0.0
        if self.d_kind == "sinusoid":
            return self.d_amp * math.sin(self.d_freq * t + self.d_phase)
        if self.d_kind == "step":
            return self.d_amp if t >= self.d_t0 else 0.0
        return float(np.interp(t, *self.d_table))

    def f_of_s(self, s):
        if self.f_kind == "zero":
            return 0.0
        if self.f_kind == "bounded_nonlinear":
            return self.f_amp * math.sin(s)
        return float(np.interp(s, *self.f_table))

    def f(self, disp, vel, weights):
        if self.f_kind == "zero":
            return 0.0
        return self.f_of_s(float(weights @ (disp * disp + vel * vel)))


def eval_total_disturbance(dist: DisturbanceSpec, w: WaveGridState, t):
    """F(t) = f(w, w_t) + d(t), integrals by Simpson's rule."""
    return dist.f(w.disp, w.vel, simpson_weights(w.N)) + dist.d(t)


def estimate_disturbance(p: WaveGridState, alpha):
    """F_hat = -p_x(1) - alpha p(1)."""
    tr = boundary_trace(p, "right")
    return -tr.slope - alpha * tr.value


# ---------------------------------------------------------------- initial data

def profile(spec, x, rng=None):
    """Sample an initial profile on ``x``.

    ``spec`` may be None/"zero", a number, a callable, an array of samples,
    or a dict with ``kind`` in cos, sin, pulse, random.
    """
    if spec is None or (isinstance(spec, str) and spec == "zero"):
        return np.zeros_like(x)
    if callable(spec):
        return np.broadcast_to(np.asarray(spec(x), dtype=float), x.shape).copy()
    if isinstance(spec, (int, float)):
        return np.full_like(x, float(spec))
    if isinstance(spec, dict):
        kind = spec.get("kind")
        amp = float(spec.get("amp", 1.0))
        if kind == "cos":
            return amp * np.cos(spec.get("mode", 1) * np.pi * x)
        if kind == "sin":
            return amp * np.sin(spec.get("mode", 1) * np.pi * x)
        if kind == "pulse":
            c, wd = spec.get("center", 0.5), spec.get("width", 0.1)
            return amp * np.exp(-(((x - c) / wd) ** 2))
        if kind == "random":
            if rng is None:
                rng = np.random.default_rng(spec.get("seed", 0))
            modes = int(spec.get("modes", 4))
            c = rng.standard_normal(modes)
            return amp * sum(c[j] * np.cos(j * np.pi * x) / (1 + j) ** 2 for j in range(modes))
        raise InvalidInputError(f"unknown profile kind {kind!r}")
    arr = np.asarray(spec, dtype=float)
    if arr.shape != x.shape:
        raise InvalidInputError(f"profile has {arr.size} samples, grid has {x.size}")
    return arr


@dataclass
class ClosedLoopIC:
    """Initial data for plant, observer and estimator."""

    X: np.ndarray
    w: WaveGridState
    Xhat: np.ndarray
    what: WaveGridState
    z: WaveGridState
    p: WaveGridState

    @property
    def N(self):
        return self.w.N

    @classmethod
    def build(cls, cfg: PlantConfig, N, spec=None, seed=None):
        """Build from a dict of profiles; unspecified parts start at zero.

        The estimator field p defaults to the constant z(1) - w(1), which
        satisfies the compatibility condition p(1) = z(1) - w(1).
        """
        spec = dict(spec or {})
        allowed = {"X", "Xhat", "w", "w_t", "what", "what_t", "z", "z_t", "p", "p_t"}
        unknown = set(spec) - allowed
        if unknown:
            raise InvalidInputError(f"unknown initial-condition fields: {sorted(unknown)}")
        rng = np.random.default_rng(seed)
        x = grid(N)

        def fld(d, v):
            return WaveGridState(N, profile(spec.get(d), x, rng), profile(spec.get(v), x, rng))

        def vec(name):
            v = spec.get(name)
            if v is None:
                return np.zeros(cfg.n)
            v = np.asarray(v, dtype=float).ravel()
            if v.size == 1 and cfg.n > 1:
                v = np.full(cfg.n, v[0])
            if v.size != cfg.n:
                raise InvalidInputError(f"{name} must have {cfg.n} entries")
            return v

        w, what, z = fld("w", "w_t"), fld("what", "what_t"), fld("z", "z_t")
        if spec.get("p") is None:
            p = WaveGridState(N, np.full(N + 1, z.disp[-1] - w.disp[-1]), profile(spec.get("p_t"), x, rng))
        else:
            p = fld("p", "p_t")
        return cls(vec("X"), w, vec("Xhat"), what, z, p)

    @classmethod
    def demo(cls, cfg: PlantConfig, N):
        return cls.build(cfg, N, {"X": [1.0], "w": {"kind": "cos", "amp": 1.0, "mode": 1}})

    @classmethod
    def smooth(cls, cfg: PlantConfig, ks: KernelSet, X=None):
        """Initial data that meets every boundary condition at t = 0 when F(0) = 0.

        w = what = z = 1 + cos(pi x) at rest, p = 0, and Xhat cancels the
        kernel integral so that the control starts at zero.
        """
        prof = 1.0 + np.cos(np.pi * ks.x)
        Xhat = -(ks.WL1 @ prof)
        X = np.ones(cfg.n) if X is None else np.asarray(X, dtype=float).ravel()
        ic = cls.build(cfg, ks.N, {"X": X, "w": prof, "what": prof, "z": prof})
        ic.Xhat = Xhat
        return ic


def check_compatibility(ic: ClosedLoopIC, tol=1e-12):
    mismatch = ic.p.disp[-1] - (ic.z.disp[-1] - ic.w.disp[-1])
    scale = max(1.0, abs(ic.z.disp[-1]), abs(ic.w.disp[-1]))
    if abs(mismatch) > tol * scale:
        raise InvalidInputError(f"incompatible initial data: p(1) - (z(1) - w(1)) = {mismatch:.3g}")
    grids = {ic.w.N, ic.what.N, ic.z.N, ic.p.N}
    if len(grids) != 1:
        raise InvalidInputError(f"initial fields use different grids {sorted(grids)}")


# ---------------------------------------------------------------- traces

STANDARD_COLUMNS = (
    "t", "u", "y1", "y2", "y3", "F", "F_hat",
    "norm_X", "norm_w", "norm_Xhat", "norm_what", "norm_z", "norm_p",
    "E0", "rho", "E", "E2",
)


class Trace:
    """Column store of recorded samples; ``extra`` holds non-scalar series."""

    def __init__(self, columns: Sequence[str] = STANDARD_COLUMNS, meta=None):
        self._cols: Dict[str, list] = {c: [] for c in columns}
        self.extra: Dict[str, list] = {}
        self.meta = dict(meta or {})

    @property
    def columns(self):
        return list(self._cols)

    def append(self, **row):
        for c, col in self._cols.items():
            col.append(float(row.get(c, math.nan)))

    def add_extra(self, name, value):
        self.extra.setdefault(name, []).append(np.array(value, dtype=float))

    def __getitem__(self, name):
        if name in self._cols:
            return np.asarray(self._cols[name], dtype=float)
        return np.asarray(self.extra[name])

    def __len__(self):
        return len(self._cols["t"])

    def to_csv(self, path):
        data = np.column_stack([self[c] for c in self._cols]) if len(self) else np.zeros((0, len(self._cols)))
        np.savetxt(path, data, delimiter=",", header=",".join(self._cols), comments="", fmt="%.12e")


def _norm_field(u, v, N, alpha):
    return math.sqrt(h1_norm(WaveGridState(N, u, v), alpha))


# ---------------------------------------------------------------- control laws

def control_state_feedback(X, w: WaveGridState, ks: KernelSet, K, alpha, beta):
    """u = -alpha w(1) - beta w_t(1) + K^T [X + P(w, w_t)]."""
    if w.N != ks.N:
        raise InvalidInputError(f"field grid N={w.N} does not match kernel grid N={ks.N}")
    K = np.asarray(K, dtype=float)
    return float(-alpha * w.disp[-1] - beta * w.vel[-1] + K @ (np.asarray(X, dtype=float) + ks.P(w.disp, w.vel)))


def control_output_feedback(Xhat, what: WaveGridState, w1, p: WaveGridState, ks: KernelSet, K, alpha, beta):
    """Observer-based law with disturbance cancellation.

    u = -alpha w(1) - beta what_t(1)
        + K^T [Xhat + L3 what(0) + L4 w(1) + int L1 what + int L2 what_t]
        + p_x(1) + alpha p(1)

    ``w1`` is the measured w(1); the L4 term uses it rather than what(1).
    """
    if what.N != ks.N or p.N != ks.N:
        raise InvalidInputError("field grids do not match the kernel grid")
    K = np.asarray(K, dtype=float)
    inner = np.asarray(Xhat, dtype=float) + ks.L3 * what.disp[0] + ks.L4 * w1 + ks.WL1 @ what.disp + ks.WL2 @ what.vel
    return float(-alpha * w1 - beta * what.vel[-1] + K @ inner - estimate_disturbance(p, alpha))


# ---------------------------------------------------------------- stepping helpers

class _EndTraces:
    """End-point samples of one field across a step, for the RK4 stages.

    Positions are interpolated linearly; velocities use v^n, v^{n+1/2} and
    the extrapolation 2 v^{n+1/2} - v^n at the three stage times.
    """

    __slots__ = ("u0", "v0", "vh", "u1")

    def start(self, f: Field):
        self.u0 = (f.u[0], f.u[-1])
        self.v0 = (f.v[0], f.v[-1])

    def half(self, f: Field):
        self.vh = (f.v[0], f.v[-1])
        self.u1 = (f.u[0], f.u[-1])

    def pos(self, end, theta):
        return self.u0[end] + theta * (self.u1[end] - self.u0[end])

    def vel(self, end, theta):
        if theta == 0.0:
            return self.v0[end]
        if theta == 0.5:
            return self.vh[end]
        return 2.0 * self.vh[end] - self.v0[end]


def _rk4_linear(M, Z, forcing, dt):
    """Classical RK4 for Z' = M Z + g(theta), g given at theta = 0, 1/2, 1."""
    g0, gm, g1 = forcing(0.0), forcing(0.5), forcing(1.0)
    k1 = M @ Z + g0
    k2 = M @ (Z + 0.5 * dt * k1) + gm
    k3 = M @ (Z + 0.5 * dt * k2) + gm
    k4 = M @ (Z + dt * k3) + g1
    return Z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_finite(t, trace, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)) or np.max(np.abs(a)) > BLOWUP_LIMIT:
            raise BlowUpError(f"numerical blow-up at t={t:.6g}", t, trace)


def _grid_setup(ks, N, cfg, dt_factor):
    if ks is None:
        ks = compute_kernels(cfg, N)
    elif ks.N != N:
        raise InvalidInputError(f"kernel grid N={ks.N} does not match N={N}")
    dt = time_step(N, dt_factor)
    check_cfl(N, dt)
    return ks, dt


def _steps(T, dt):
    if not (T > 0 and math.isfinite(T)):
        raise InvalidInputError(f"horizon must be positive, got {T}")
    return int(round(T / dt))


def _gains(gains):
    if isinstance(gains, GainSet):
        return np.asarray(gains.K, dtype=float), np.asarray(gains.H, dtype=float)
    K = np.asarray(gains, dtype=float).ravel()
    return K, None


# ---------------------------------------------------------------- state feedback

class StateFeedbackLoop:
    """Plant under the full-state law, F = 0."""

    def __init__(self, cfg: PlantConfig, ks: KernelSet, K, X0, w0: WaveGridState, dt, viscosity=VISCOSITY):
        self.cfg, self.ks, self.K, self.dt = cfg, ks, np.asarray(K, dtype=float), dt
        self.X = np.array(X0, dtype=float)
        self.w = Field(w0, dt, viscosity)
        self.t = w0.t
        self.w.flux_left = 0.0
        self.u = control_state_feedback(self.X, w0, ks, self.K, cfg.alpha, cfg.beta)
        self.w.flux_right = self.u
        self._tr = _EndTraces()
        self._u1 = -cfg.beta + self.K @ ks.WL2[:, -1]

    def Y(self):
        return self.X + self.ks.P(self.w.u, self.w.v)

    def _control_base(self):
        ks, w, cfg = self.ks, self.w, self.cfg
        inner = self.X + ks.P(w.u, w.v) - ks.WL2[:, -1] * w.v[-1]
        return -cfg.alpha * w.u[-1] + self.K @ inner

    def step(self):
        cfg, w, tr = self.cfg, self.w, self._tr
        tr.start(w)
        w.kick_open()
        w.drift()
        tr.half(w)

        def forcing(th):
            return (cfg.B1 * tr.pos(0, th) + cfg.B2 * tr.vel(0, th)
                    + cfg.B3 * tr.pos(1, th) + cfg.B4 * tr.vel(1, th))

        self.X = _rk4_linear(cfg.A, self.X, forcing, self.dt)
        w.kick_interior()
        w.close_left(0.0, 0.0)
        base = self._control_base()
        w.close_right(base, self._u1)
        self.u = base + self._u1 * w.v[-1]
        self.t = w.t


def simulate_state_feedback(cfg: PlantConfig, gains, ic, T, N, dt_factor=0.5,
                            record_every=RECORD_EVERY, ks: Optional[KernelSet] = None, viscosity=VISCOSITY):
    """Plant under the state-feedback law with F = 0.

    ``ic`` is a ClosedLoopIC (only X and w are used). The trace carries the
    transformed variable Y = X + P(w, w_t) in ``extra['Y']``.
    """
    ks, dt = _grid_setup(ks, N, cfg, dt_factor)
    K, _ = _gains(gains)
    if ic.w.N != N:
        raise InvalidInputError("initial field grid does not match N")
    loop = StateFeedbackLoop(cfg, ks, K, ic.X, ic.w, dt, viscosity)
    trace = Trace(meta={"scenario": "state_feedback", "N": N, "dt": dt, "T": T})

    def record():
        w = loop.w
        X = loop.X
        trace.append(
            t=loop.t, u=loop.u, y1=w.v[0], y2=w.u[-1], y3=(cfg.C @ X)[0], F=0.0,
            norm_X=np.linalg.norm(X), norm_w=_norm_field(w.u, w.v, N, cfg.alpha),
        )
        trace.add_extra("Y", loop.Y())

    record()
    for i in range(1, _steps(T, dt) + 1):
        loop.step()
        _check_finite(loop.t, trace, loop.X, loop.w.v[[0, -1]])
        if i % record_every == 0:
            _check_finite(loop.t, trace, loop.w.u, loop.w.v)
            record()
    return trace


# ---------------------------------------------------------------- output feedback

class OutputFeedbackLoop:
    """Plant, observer (Xhat, what) and disturbance estimator (z, p) in lockstep."""

    def __init__(self, cfg: PlantConfig, ks: KernelSet, gains: GainSet, dist: DisturbanceSpec,
                 ic: ClosedLoopIC, dt, viscosity=VISCOSITY):
        check_compatibility(ic)
        if ic.N != ks.N:
            raise InvalidInputError("initial field grid does not match the kernel grid")
        self.cfg, self.ks, self.dist, self.dt = cfg, ks, dist, dt
        self.K = np.asarray(gains.K, dtype=float)
        self.H = np.array(gains.H, dtype=float, ndmin=2).reshape(cfg.n, cfg.q)
        self.N = ic.N
        self.wq = simpson_weights(self.N)
        n = cfg.n
        self.Z = np.concatenate([ic.X, ic.Xhat]).astype(float)
        HC = self.H @ cfg.C
        self.M = np.block([[cfg.A, np.zeros((n, n))], [-HC, cfg.A + HC]])
        self.w, self.wh, self.z, self.p = (Field(s, dt, viscosity) for s in (ic.w, ic.what, ic.z, ic.p))
        self.fields = (self.w, self.wh, self.z, self.p)
        self.traces = {name: _EndTraces() for name in ("w", "wh")}
        self.t = ic.w.t
        self._u1 = -cfg.beta + self.K @ ks.WL2[:, -1]
        self._init_fluxes()

    @property
    def X(self):
        return self.Z[: self.cfg.n]

    @property
    def Xhat(self):
        return self.Z[self.cfg.n:]

    def _correction(self):
        p = self.p
        return one_sided_slope(p.u, "right", self.N) + self.cfg.alpha * p.u[-1]

    def F_hat(self):
        return -self._correction()

    def _control_base(self):
        """Control with what_t(1) set to zero; u = base + u1 * what_t(1)."""
        ks, wh, w, cfg = self.ks, self.wh, self.w, self.cfg
        inner = (self.Xhat + ks.L3 * wh.u[0] + ks.L4 * w.u[-1] + ks.WL1 @ wh.u
                 + ks.WL2 @ wh.v - ks.WL2[:, -1] * wh.v[-1])
        return -cfg.alpha * w.u[-1] + self.K @ inner + self._correction()

    def _init_fluxes(self):
        cfg, k = self.cfg, self.cfg.k_est
        w, wh, z, p = self.fields
        w.flux_left = 0.0
        wh.flux_left = k * (wh.v[0] - w.v[0])
        z.flux_left = k * (z.v[0] - w.v[0])
        p.flux_left = k * p.v[0]
        corr = self._correction()
        self.u = self._control_base() + self._u1 * wh.v[-1]
        wh.flux_right = -cfg.alpha * (wh.u[-1] - w.u[-1]) + self.u - corr
        z.flux_right = -cfg.alpha * (z.u[-1] - w.u[-1]) + self.u
        self.F = self.dist.f(w.u, w.v, self.wq) + self.dist.d(self.t)
        w.flux_right = self.u + self.F
        p.set_right_dirichlet(z.u[-1] - w.u[-1], z.v[-1] - w.v[-1])

    def step(self):
        cfg, k = self.cfg, self.cfg.k_est
        w, wh, z, p = self.fields
        tw, twh = self.traces["w"], self.traces["wh"]
        tw.start(w)
        twh.start(wh)
        for f in self.fields:
            f.kick_open()
        p.v[-1] = z.v[-1] - w.v[-1]
        for f in self.fields:
            f.drift()
        tw.half(w)
        twh.half(wh)
        p.u[-1] = z.u[-1] - w.u[-1]

        def forcing(th):
            w0, w1 = tw.pos(0, th), tw.pos(1, th)
            wt0 = tw.vel(0, th)
            gx = cfg.B1 * w0 + cfg.B2 * wt0 + cfg.B3 * w1 + cfg.B4 * tw.vel(1, th)
            gh = cfg.B1 * twh.pos(0, th) + cfg.B2 * wt0 + cfg.B3 * w1 + cfg.B4 * twh.vel(1, th)
            return np.concatenate([gx, gh])

        self.Z = _rk4_linear(self.M, self.Z, forcing, self.dt)
        for f in self.fields:
            f.kick_interior()
        self.t = w.t

        w.close_left(0.0, 0.0)
        wh.close_left(-k * w.v[0], k)
        z.close_left(-k * w.v[0], k)
        p.close_left(0.0, k)

        corr = self._correction()
        base = self._control_base()
        wh.close_right(-cfg.alpha * (wh.u[-1] - w.u[-1]) + base - corr, self._u1)
        self.u = base + self._u1 * wh.v[-1]
        z.close_right(-cfg.alpha * (z.u[-1] - w.u[-1]) + self.u, 0.0)
        # f sees the half-kicked end velocity of w; the error is O(dt) at one node
        self.F = self.dist.f(w.u, w.v, self.wq) + self.dist.d(self.t)
        w.close_right(self.u + self.F, 0.0)
        p.set_right_dirichlet(p.u[-1], z.v[-1] - w.v[-1])

    def check(self, trace=None, full=False):
        ends = [self.Z] + [f.v[[0, -1]] for f in self.fields]
        if full:
            ends += [f.u for f in self.fields] + [f.v for f in self.fields]
        _check_finite(self.t, trace, *ends)

    def error_fields(self):
        """Observer error what - w and estimator error p - (z - w), by subtraction."""
        w, wh, z, p = self.fields
        N = self.N
        wt = WaveGridState(N, wh.u - w.u, wh.v - w.v, self.t)
        ph = WaveGridState(N, p.u - z.u + w.u, p.v - z.v + w.v, self.t)
        return wt, ph

    def record(self, trace: Trace):
        cfg, N = self.cfg, self.N
        w, wh, z, p = self.fields
        wt, ph = self.error_fields()
        en = energy_diagnostics(wt, ph, cfg.alpha)
        y3 = cfg.C @ self.X
        trace.append(
            t=self.t, u=self.u, y1=w.v[0], y2=w.u[-1], y3=y3[0], F=self.F, F_hat=self.F_hat(),
            norm_X=np.linalg.norm(self.X), norm_w=_norm_field(w.u, w.v, N, cfg.alpha),
            norm_Xhat=np.linalg.norm(self.Xhat), norm_what=_norm_field(wh.u, wh.v, N, cfg.alpha),
            norm_z=_norm_field(z.u, z.v, N, cfg.alpha), norm_p=_norm_field(p.u, p.v, N, cfg.alpha),
            E0=en.E0, rho=en.rho, E=en.E, E2=en.E2,
        )
        if y3.size > 1:
            trace.add_extra("y3", y3)


def simulate_output_feedback(cfg: PlantConfig, gains: GainSet, ic: ClosedLoopIC, dist: DisturbanceSpec,
                             T, N, dt_factor=0.5, record_every=RECORD_EVERY, ks: Optional[KernelSet] = None,
                             viscosity=VISCOSITY):
    """Observer-based output feedback with disturbance estimation and cancellation."""
    ks, dt = _grid_setup(ks, N, cfg, dt_factor)
    if ic.N != N:
        raise InvalidInputError("initial field grid does not match N")
    loop = OutputFeedbackLoop(cfg, ks, gains, dist, ic, dt, viscosity)
    trace = Trace(meta={"scenario": "output_feedback", "N": N, "dt": dt, "T": T})
    loop.record(trace)
    for i in range(1, _steps(T, dt) + 1):
        loop.step()
        loop.check(trace)
        if i % record_every == 0:
            loop.check(trace, full=True)
            loop.record(trace)
    return trace


# ---------------------------------------------------------------- error systems

class ErrorSystemLoop:
    """The error systems integrated directly.

    zh  : zh_x(0) = k zh_t(0),  zh_x(1) = -alpha zh(1) - F(t)
    ph  : ph_x(0) = k ph_t(0),  ph(1) = 0
    wt  : wt_x(0) = k wt_t(0),  wt_x(1) = -alpha wt(1) - ph_x(1)
    Xt' = (A + H C) Xt + B1 wt(0) + B4 wt_t(1)
    eps : eps_x(0) = k eps_t(0), eps_x(1) = -alpha eps(1)

    ph_x(1) in the wt boundary is the two-point slope (ph_N - ph_{N-1})/dx,
    the flux under which a fixed end node is at rest in the ghost-node
    update. With that choice wt + ph reproduces eps exactly on the grid.
    """

    def __init__(self, cfg: PlantConfig, H, zh: WaveGridState, ph: WaveGridState, wt: WaveGridState,
                 Xt, F0, dt, viscosity=VISCOSITY):
        self.cfg, self.dt = cfg, dt
        self.N = zh.N
        H = np.array(H, dtype=float, ndmin=2).reshape(cfg.n, cfg.q)
        self.M = cfg.A + H @ cfg.C
        self.Xt = np.array(Xt, dtype=float)
        eps = WaveGridState(self.N, wt.disp + ph.disp, wt.vel + ph.vel, wt.t)
        self.zh, self.ph, self.wt, self.eps = (Field(s, dt, viscosity) for s in (zh, ph, wt, eps))
        self.fields = (self.zh, self.ph, self.wt, self.eps)
        self.t = zh.t
        self._tr = _EndTraces()
        k, a = cfg.k_est, cfg.alpha
        for f in self.fields:
            f.flux_left = k * f.v[0]
        self.ph.set_right_dirichlet(0.0, 0.0)
        self.zh.flux_right = -a * self.zh.u[-1] - F0
        self.wt.flux_right = -a * self.wt.u[-1] - self._ph_slope()
        self.eps.flux_right = -a * self.eps.u[-1]
        self.F = F0

    def _ph_slope(self):
        return (self.ph.u[-1] - self.ph.u[-2]) * self.N

    def step(self, F_new):
        cfg, k, a = self.cfg, self.cfg.k_est, self.cfg.alpha
        zh, ph, wt, eps = self.fields
        tr = self._tr
        tr.start(wt)
        for f in self.fields:
            f.kick_open()
        if wt.viscosity:
            # viscous counterpart of the ph_x(1) coupling, keeps wt + ph = eps exact
            corr = 2.0 * wt.viscosity * self.dt * (ph.v[-2] - ph.v[-1])
            for f in self.fields:
                f.damp()
            wt.v[-1] += corr
        for f in self.fields:
            f.u += self.dt * f.v
            f.t += self.dt
        tr.half(wt)
        ph.u[-1] = 0.0

        def forcing(th):
            return cfg.B1 * tr.pos(0, th) + cfg.B4 * tr.vel(1, th)

        self.Xt = _rk4_linear(self.M, self.Xt, forcing, self.dt)
        for f in self.fields:
            f.kick_interior()
        for f in self.fields:
            f.close_left(0.0, k)
        ph.set_right_dirichlet(0.0, 0.0)
        wt.close_right(-a * wt.u[-1] - self._ph_slope(), 0.0)
        eps.close_right(-a * eps.u[-1], 0.0)
        zh.close_right(-a * zh.u[-1] - F_new, 0.0)
        self.F = F_new
        self.t = zh.t

    def identity_residual(self):
        """F - (-zh_x(1) - alpha zh(1)) with the three-point slope."""
        zh = self.zh
        return self.F + one_sided_slope(zh.u, "right", self.N) + self.cfg.alpha * zh.u[-1]

    def superposition_error(self):
        e, w, p = self.eps, self.wt, self.ph
        return max(np.max(np.abs(e.u - w.u - p.u)), np.max(np.abs(e.v - w.v - p.v)))

    def combined_norm(self):
        a, N = self.cfg.alpha, self.N
        wt, ph = self.wt, self.ph
        return math.sqrt(self.Xt @ self.Xt + h1_norm(WaveGridState(N, wt.u, wt.v), a)
                         + h1_norm(WaveGridState(N, ph.u, ph.v), a))


ERROR_COLUMNS = (
    "t", "F", "norm_Xt", "norm_wt", "norm_ph", "norm_zh", "norm_eps", "error_norm",
    "E0", "rho", "E", "E2", "E2_scheme", "ph_t0", "identity_residual", "superposition",
    "diff_Xt", "diff_wt", "diff_ph", "diff_zh", "error_norm_subtracted", "wt_end",
)


def simulate_error_systems(cfg: PlantConfig, gains: GainSet, ic: ClosedLoopIC, dist: DisturbanceSpec,
                           T, N, dt_factor=0.5, record_every=RECORD_EVERY, ks: Optional[KernelSet] = None,
                           viscosity=VISCOSITY):
    """Integrate the error systems directly next to the full output-feedback loop.

    The full loop supplies F(t) to the zh system and the subtraction
    reference (what - w, p - z + w, z - w, Xhat - X). The full-loop trace is
    returned in ``trace.extra['full']``.
    """
    ks, dt = _grid_setup(ks, N, cfg, dt_factor)
    full = OutputFeedbackLoop(cfg, ks, gains, dist, ic, dt, viscosity)
    wt0, ph0 = full.error_fields()
    zh0 = WaveGridState(N, ic.z.disp - ic.w.disp, ic.z.vel - ic.w.vel, ic.w.t)
    err = ErrorSystemLoop(cfg, gains.H, zh0, ph0, wt0, ic.Xhat - ic.X, full.F, dt, viscosity)
    trace = Trace(ERROR_COLUMNS, meta={"scenario": "error_systems", "N": N, "dt": dt, "T": T})
    full_trace = Trace(meta={"scenario": "output_feedback", "N": N, "dt": dt, "T": T})
    trace.extra["full"] = full_trace
    a = cfg.alpha

    def record():
        full.record(full_trace)
        wt_s, ph_s = full.error_fields()
        wt = WaveGridState(N, err.wt.u, err.wt.v)
        ph = WaveGridState(N, err.ph.u, err.ph.v)
        eps = WaveGridState(N, err.eps.u, err.eps.v)
        en = energy_diagnostics(wt, ph, a, eps)
        w, z = full.w, full.z
        Xt_s = full.Xhat - full.X
        trace.append(
            t=err.t, F=err.F,
            norm_Xt=np.linalg.norm(err.Xt), norm_wt=math.sqrt(h1_norm(wt, a)), norm_ph=math.sqrt(h1_norm(ph, a)),
            norm_zh=_norm_field(err.zh.u, err.zh.v, N, a), norm_eps=math.sqrt(h1_norm(eps, a)),
            error_norm=err.combined_norm(),
            E0=en.E0, rho=en.rho, E=en.E, E2=en.E2, E2_scheme=err.ph.shadow_energy(), ph_t0=err.ph.v[0],
            identity_residual=err.identity_residual(), superposition=err.superposition_error(),
            diff_Xt=np.max(np.abs(err.Xt - Xt_s)),
            diff_wt=max(np.max(np.abs(err.wt.u - wt_s.disp)), np.max(np.abs(err.wt.v - wt_s.vel))),
            diff_ph=max(np.max(np.abs(err.ph.u - ph_s.disp)), np.max(np.abs(err.ph.v - ph_s.vel))),
            diff_zh=max(np.max(np.abs(err.zh.u - (z.u - w.u))), np.max(np.abs(err.zh.v - (z.v - w.v)))),
            error_norm_subtracted=math.sqrt(Xt_s @ Xt_s + h1_norm(wt_s, a) + h1_norm(ph_s, a)),
            wt_end=err.wt.u[-1],
        )

    record()
    for i in range(1, _steps(T, dt) + 1):
        full.step()
        err.step(full.F)
        full.check(trace)
        _check_finite(err.t, trace, err.Xt, err.wt.v[[0, -1]], err.zh.v[[0, -1]])
        if i % record_every == 0:
            record()
    return trace


def simulate_estimator_error(k, ph0: WaveGridState, T, dt_factor=0.5, viscosity=0.0):
    """The estimator error alone: ph_x(0) = k ph_t(0), ph(1) = 0.

    Returns per-step arrays (t, scheme energy, ph_t(0), quadrature E2).
    """
    N = ph0.N
    dt = time_step(N, dt_factor)
    f = Field(ph0, dt, viscosity)
    f.flux_left = k * f.v[0]
    f.set_right_dirichlet(0.0, 0.0)
    wq = simpson_weights(N)
    out = {"t": [f.t], "E2_scheme": [f.shadow_energy()], "ph_t0": [f.v[0]], "E2": []}

    def quad():
        px = np.gradient(f.u, 1.0 / N, edge_order=2)
        return float(wq @ (px ** 2 + f.v ** 2))

    out["E2"].append(quad())
    for _ in range(_steps(T, dt)):
        f.kick_open()
        f.drift()
        f.u[-1] = 0.0
        f.kick_interior()
        f.close_left(0.0, k)
        f.set_right_dirichlet(0.0, 0.0)
        out["t"].append(f.t)
        out["E2_scheme"].append(f.shadow_energy())
        out["ph_t0"].append(f.v[0])
        out["E2"].append(quad())
    _check_finite(f.t, None, f.u, f.v)
    return {key: np.asarray(v) for key, v in out.items()}
