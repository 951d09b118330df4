"""Explicit finite-difference integrator for w_tt = w_xx on [0, 1].

The scheme is leapfrog written in velocity-Verlet (kick-drift-kick) form on
the grid x_i = i/N. Flux boundary conditions w_x = g enter through a ghost
node, which turns the end-point update into

    w_tt(0) ~ 2 (w_1 - w_0)/dx^2 - 2 w_x(0)/dx
    w_tt(1) ~ 2 (w_{N-1} - w_N)/dx^2 + 2 w_x(1)/dx.

Every flux used here is affine in the end-point velocity, w_x = a + b w_t.
The opening half-kick uses the flux from the previous time level and the
closing half-kick solves the scalar equation for the new end-point velocity,
so damping terms are treated trapezoidally and stay stable for any gain.
Dirichlet ends are imposed by overwriting the end node.

An optional numerical viscosity c dx^2 (w_t)_xx is applied to the half-step
velocity before the drift. Plain leapfrog damps the grid-scale modes only
at a rate O(dx^2): their group velocity vanishes, so they never reach a
dissipative boundary. The viscosity damps them at a rate of about 4c and
changes smooth solutions by O(dx^2).
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .errors import BlowUpError, ConfigurationError, InvalidInputError

CFL_LIMIT = 0.9
DEFAULT_DT_FACTOR = 0.5

Signal = Union[float, Callable[[float], float]]


def grid(N):
    return np.linspace(0.0, 1.0, N + 1)


def check_grid_size(N):
    if N < 4 or N % 2:
        raise InvalidInputError(f"grid size N must be even and >= 4, got {N}")


def time_step(N, dt_factor=DEFAULT_DT_FACTOR):
    """Time step for grid ``N``; rejects factors that break the CFL bound."""
    if not 0.0 < dt_factor <= CFL_LIMIT:
        raise ConfigurationError(
            f"dt_factor={dt_factor} violates the CFL bound dt <= {CFL_LIMIT}*dx"
        )
    return dt_factor / N


def simpson_weights(N):
    check_grid_size(N)
    w = np.ones(N + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * N)


@dataclass
class WaveGridState:
    """One wave field (displacement and velocity) sampled on N+1 nodes."""

    N: int
    disp: np.ndarray
    vel: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        check_grid_size(self.N)
        self.disp = np.array(self.disp, dtype=float).reshape(-1)
        self.vel = np.array(self.vel, dtype=float).reshape(-1)
        if self.disp.size != self.N + 1 or self.vel.size != self.N + 1:
            raise InvalidInputError("disp/vel must have N+1 samples")
        if not (np.all(np.isfinite(self.disp)) and np.all(np.isfinite(self.vel))):
            raise InvalidInputError("wave state has non-finite samples")

    @classmethod
    def zeros(cls, N, t=0.0):
        return cls(N, np.zeros(N + 1), np.zeros(N + 1), t)

    @classmethod
    def from_functions(cls, N, disp, vel=None, t=0.0):
        x = grid(N)
        d = np.broadcast_to(np.asarray(disp(x), dtype=float), x.shape)
        v = np.zeros_like(x) if vel is None else np.broadcast_to(np.asarray(vel(x), dtype=float), x.shape)
        return cls(N, d, v, t)

    @property
    def x(self):
        return grid(self.N)

    @property
    def dx(self):
        return 1.0 / self.N

    def copy(self):
        return WaveGridState(self.N, self.disp.copy(), self.vel.copy(), self.t)


def _evaluate(signal, t):
    return float(signal(t)) if callable(signal) else float(signal)


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary condition at one end of a field.

    kinds:
      neumann_flux      w_x = g(t)
      damped_velocity   w_x = gain * w_t + g(t)
      robin_feedback    w_x = -alpha w - beta w_t + g(t)
      dirichlet_traced  w = g(t), w_t = rate(t)
    """

    kind: str
    g: Signal = 0.0
    gain: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    rate: Optional[Signal] = None

    @classmethod
    def neumann_flux(cls, g=0.0):
        return cls("neumann_flux", g=g)

    @classmethod
    def damped_velocity(cls, gain, g=0.0):
        return cls("damped_velocity", g=g, gain=gain)

    @classmethod
    def robin_feedback(cls, alpha, beta, g=0.0):
        return cls("robin_feedback", g=g, alpha=alpha, beta=beta)

    @classmethod
    def dirichlet_traced(cls, g, rate=None):
        return cls("dirichlet_traced", g=g, rate=rate)

    @property
    def is_dirichlet(self):
        return self.kind == "dirichlet_traced"

    def flux_coefficients(self, t, value):
        """(a, b) with w_x = a + b * w_t at this end."""
        g = _evaluate(self.g, t)
        if self.kind == "neumann_flux":
            return g, 0.0
        if self.kind == "damped_velocity":
            return g, self.gain
        if self.kind == "robin_feedback":
            return g - self.alpha * value, -self.beta
        raise InvalidInputError(f"no flux form for boundary kind {self.kind!r}")

    def dirichlet_data(self, t):
        g = _evaluate(self.g, t)
        if self.rate is not None:
            return g, _evaluate(self.rate, t)
        if callable(self.g):
            h = 1e-6
            return g, (self.g(t + h) - self.g(t - h)) / (2 * h)
        return g, 0.0


class Field:
    """In-place kick-drift-kick stepper for one field.

    Coupled simulations drive the phases explicitly (``kick_open``,
    ``drift``, ``kick_interior``, then one closing call per end) so that
    boundary data can be exchanged in dependency order. ``flux_left`` and
    ``flux_right`` hold the boundary flux of the current time level; they are
    ``None`` at a Dirichlet end.
    """

    def __init__(self, state: WaveGridState, dt, viscosity=0.0):
        if viscosity < 0 or 4.0 * viscosity * dt > 1.0:
            raise ConfigurationError(f"numerical viscosity {viscosity} outside [0, 1/(4 dt)]")
        self.viscosity = viscosity
        self.N = state.N
        self.u = state.disp.copy()
        self.v = state.vel.copy()
        self.t = state.t
        self.dt = dt
        self.idx = float(self.N)
        self.idx2 = float(self.N) ** 2
        self.flux_left: Optional[float] = 0.0
        self.flux_right: Optional[float] = 0.0

    def state(self):
        return WaveGridState(self.N, self.u.copy(), self.v.copy(), self.t)

    def acceleration(self):
        u = self.u
        acc = np.zeros_like(u)
        acc[1:-1] = self.idx2 * (u[2:] - 2.0 * u[1:-1] + u[:-2])
        if self.flux_left is not None:
            acc[0] = 2.0 * (u[1] - u[0]) * self.idx2 - 2.0 * self.flux_left * self.idx
        if self.flux_right is not None:
            acc[-1] = 2.0 * (u[-2] - u[-1]) * self.idx2 + 2.0 * self.flux_right * self.idx
        return acc

    def shadow_energy(self):
        """Modified energy of the scheme, exactly conserved for zero-flux ends.

        Trapezoidal kinetic term plus forward-difference gradient term minus
        the O(dt^2) correction (dt^2/4) * |acc|^2 that velocity Verlet carries.
        """
        w = np.full(self.N + 1, 1.0 / self.N)
        w[0] = w[-1] = 0.5 / self.N
        acc = self.acceleration()
        return w @ self.v ** 2 + self.idx * np.sum(np.diff(self.u) ** 2) - 0.25 * self.dt ** 2 * (w @ acc ** 2)

    def kick_open(self):
        u, v, h = self.u, self.v, 0.5 * self.dt
        acc0 = accN = None
        if self.flux_left is not None:
            acc0 = 2.0 * (u[1] - u[0]) * self.idx2 - 2.0 * self.flux_left * self.idx
        if self.flux_right is not None:
            accN = 2.0 * (u[-2] - u[-1]) * self.idx2 + 2.0 * self.flux_right * self.idx
        v[1:-1] += h * self.idx2 * (u[2:] - 2.0 * u[1:-1] + u[:-2])
        if acc0 is not None:
            v[0] += h * acc0
        if accN is not None:
            v[-1] += h * accN

    def damp(self):
        """Explicit step of the numerical viscosity c dx^2 (v_t)_xx, mirrored at flux ends."""
        c = self.viscosity * self.dt
        v = self.v
        lap = np.empty_like(v)
        lap[1:-1] = v[2:] - 2.0 * v[1:-1] + v[:-2]
        lap[0] = 0.0 if self.flux_left is None else 2.0 * (v[1] - v[0])
        lap[-1] = 0.0 if self.flux_right is None else 2.0 * (v[-2] - v[-1])
        v += c * lap

    def drift(self):
        if self.viscosity:
            self.damp()
        self.u += self.dt * self.v
        self.t += self.dt

    def kick_interior(self):
        u = self.u
        self.v[1:-1] += 0.5 * self.dt * self.idx2 * (u[2:] - 2.0 * u[1:-1] + u[:-2])

    def close_left(self, a, b):
        u, h = self.u, 0.5 * self.dt
        rhs = self.v[0] + h * (2.0 * (u[1] - u[0]) * self.idx2 - 2.0 * a * self.idx)
        self.v[0] = rhs / (1.0 + self.dt * b * self.idx)
        self.flux_left = a + b * self.v[0]

    def close_right(self, a, b):
        u, h = self.u, 0.5 * self.dt
        rhs = self.v[-1] + h * (2.0 * (u[-2] - u[-1]) * self.idx2 + 2.0 * a * self.idx)
        self.v[-1] = rhs / (1.0 - self.dt * b * self.idx)
        self.flux_right = a + b * self.v[-1]

    def set_left_dirichlet(self, value, rate):
        self.u[0] = value
        self.v[0] = rate
        self.flux_left = None

    def set_right_dirichlet(self, value, rate):
        self.u[-1] = value
        self.v[-1] = rate
        self.flux_right = None

    def init_flux(self, bc_left: BoundaryCondition, bc_right: BoundaryCondition):
        """Set time-level fluxes from boundary conditions at the current time."""
        if bc_left.is_dirichlet:
            self.set_left_dirichlet(*bc_left.dirichlet_data(self.t))
        else:
            a, b = bc_left.flux_coefficients(self.t, self.u[0])
            self.flux_left = a + b * self.v[0]
        if bc_right.is_dirichlet:
            self.set_right_dirichlet(*bc_right.dirichlet_data(self.t))
        else:
            a, b = bc_right.flux_coefficients(self.t, self.u[-1])
            self.flux_right = a + b * self.v[-1]

    def step(self, bc_left: BoundaryCondition, bc_right: BoundaryCondition):
        self.kick_open()
        self.drift()
        if bc_left.is_dirichlet:
            self.set_left_dirichlet(*bc_left.dirichlet_data(self.t))
        if bc_right.is_dirichlet:
            self.set_right_dirichlet(*bc_right.dirichlet_data(self.t))
        self.kick_interior()
        if not bc_left.is_dirichlet:
            self.close_left(*bc_left.flux_coefficients(self.t, self.u[0]))
        if not bc_right.is_dirichlet:
            self.close_right(*bc_right.flux_coefficients(self.t, self.u[-1]))
        if not (np.isfinite(self.v[-1]) and np.isfinite(self.v[0])):
            raise BlowUpError("non-finite wave state", self.t)


def check_cfl(N, dt):
    if dt > CFL_LIMIT / N * (1 + 1e-12):
        raise ConfigurationError(f"dt={dt:g} violates CFL dt <= {CFL_LIMIT}*dx for N={N}")


def step_wave(s: WaveGridState, bc_left: BoundaryCondition, bc_right: BoundaryCondition, dt):
    """Advance ``s`` by one leapfrog step and return the new state."""
    check_cfl(s.N, dt)
    f = Field(s, dt)
    f.init_flux(bc_left, bc_right)
    f.step(bc_left, bc_right)
    if not (np.all(np.isfinite(f.u)) and np.all(np.isfinite(f.v))):
        raise BlowUpError("non-finite wave state", f.t)
    return f.state()


def simulate_wave(s: WaveGridState, bc_left, bc_right, dt, steps, callback=None):
    """Take ``steps`` leapfrog steps; ``callback(state)`` runs after each one."""
    check_cfl(s.N, dt)
    f = Field(s, dt)
    f.init_flux(bc_left, bc_right)
    for _ in range(steps):
        f.step(bc_left, bc_right)
        if callback is not None:
            callback(f)
    if not (np.all(np.isfinite(f.u)) and np.all(np.isfinite(f.v))):
        raise BlowUpError("non-finite wave state", f.t)
    return f.state()


class Trace(NamedTuple):
    value: float
    slope: float
    velocity: float


def one_sided_slope(u, end, N):
    if end == "right":
        return (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) * N / 2.0
    if end == "left":
        return (-3.0 * u[0] + 4.0 * u[1] - u[2]) * N / 2.0
    raise InvalidInputError(f"end must be 'left' or 'right', got {end!r}")


def boundary_trace(s: WaveGridState, end):
    """(value, slope, velocity) at one end; slope is the 3-point one-sided difference."""
    i = -1 if end == "right" else 0
    return Trace(float(s.disp[i]), float(one_sided_slope(s.disp, end, s.N)), float(s.vel[i]))


def quadrature(kernel, s: WaveGridState, against="disp"):
    """Composite Simpson value of the integral of kernel(x) * field(x) over [0, 1].

    ``kernel`` holds samples on the state's grid, shape (N+1,) or (N+1, n).
    """
    kernel = np.asarray(kernel, dtype=float)
    if kernel.shape[0] != s.N + 1:
        raise InvalidInputError(f"kernel has {kernel.shape[0]} samples, grid has {s.N + 1}")
    if against not in ("disp", "vel"):
        raise InvalidInputError(f"against must be 'disp' or 'vel', got {against!r}")
    fieldv = s.disp if against == "disp" else s.vel
    return (simpson_weights(s.N) * fieldv) @ kernel


def discrete_energy(s: WaveGridState):
    """Scheme energy: trapezoidal velocity term plus forward-difference gradient term."""
    dx = s.dx
    v2 = s.vel ** 2
    kinetic = dx * (v2.sum() - 0.5 * (v2[0] + v2[-1]))
    potential = np.sum(np.diff(s.disp) ** 2) / dx
    return kinetic + potential


def export_snapshots(path, states):
    """Write snapshots as CSV with columns t, x, disp, vel."""
    rows = [np.column_stack([np.full(st.N + 1, st.t), st.x, st.disp, st.vel]) for st in states]
    np.savetxt(path, np.vstack(rows), delimiter=",", header="t,x,disp,vel", comments="")
