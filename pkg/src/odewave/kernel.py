"""Kernel vectors of the state transformation Y = X + P(w, w_t).

    P(w, w_t) = L3 w(0) + L4 w(1) + int L1 w dx + int L2 w_t dx

With b = A B2 + B1 and M = A sinh A + (alpha + beta A) cosh A the kernels are

    Q     = M^{-1} { A B4 + B3 + [cosh A + (alpha + beta A) G(A)] b }
    L2(x) = -x G(Ax) b + cosh(Ax) Q
    L1(x) = -sinh(Ax) b + A cosh(Ax) Q
    L3    = -B2
    L4    = -beta G(A) b + beta cosh(A) Q - B4

and they make the Y-dynamics collapse to Y' = (A + L2(1) K^T) Y under the
state-feedback law.
"""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import DesignInfeasibleError, InvalidInputError
from .matrixfun import as_square_matrix, cosh_sinh, mat_gfun
from .wavesolver import WaveGridState, check_grid_size, grid, simpson_weights

_Q_COND_LIMIT = 1e12
_L2_CROSSCHECK_TOL = 1e-9


def _vector(v, n, name):
    v = np.array(v, dtype=float).reshape(-1)
    if v.size != n:
        raise InvalidInputError(f"{name} must have length {n}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return v


@dataclass
class PlantConfig:
    """Plant matrices and scalars.

    A is n x n, B1..B4 are n-vectors, C is q x n. ``alpha`` and ``beta`` are
    the feedback parameters of the boundary law and ``k_est`` the damping
    gain of the disturbance estimator and observer.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    B4: np.ndarray
    C: np.ndarray
    alpha: float = 1.0
    beta: float = 1.0
    k_est: float = 1.0

    def __post_init__(self):
        self.A = as_square_matrix(self.A)
        n = self.A.shape[0]
        for name in ("B1", "B2", "B3", "B4"):
            setattr(self, name, _vector(getattr(self, name), n, name))
        C = np.array(self.C, dtype=float)
        if C.ndim == 1:
            C = C.reshape(1, -1)
        if C.ndim != 2 or C.shape[1] != n or C.shape[0] < 1:
            raise InvalidInputError(f"C must be q x {n}, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise InvalidInputError("C has non-finite entries")
        self.C = C
        for name in ("alpha", "beta", "k_est"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise InvalidInputError(f"{name} must be a positive number, got {value}")
            setattr(self, name, value)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def q(self):
        return self.C.shape[0]

    @classmethod
    def from_dict(cls, d):
        missing = {"A", "B1"} - set(d)
        if missing:
            raise InvalidInputError(f"plant config is missing {sorted(missing)}")
        n = np.atleast_2d(np.array(d["A"], dtype=float)).shape[0]
        zero = [0.0] * n
        return cls(
            A=d["A"],
            B1=d["B1"],
            B2=d.get("B2", zero),
            B3=d.get("B3", zero),
            B4=d.get("B4", zero),
            C=d.get("C", np.eye(n).tolist()),
            alpha=d.get("alpha", 1.0),
            beta=d.get("beta", 1.0),
            k_est=d.get("k_est", 1.0),
        )

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B1": self.B1.tolist(),
            "B2": self.B2.tolist(),
            "B3": self.B3.tolist(),
            "B4": self.B4.tolist(),
            "C": self.C.tolist(),
            "alpha": self.alpha,
            "beta": self.beta,
            "k_est": self.k_est,
        }


def char_A1(lam, alpha, beta):
    """lam sinh(lam) + (alpha + beta lam) cosh(lam); zero exactly on the spectrum of the wave operator."""
    lam = complex(lam)
    return lam * np.sinh(lam) + (alpha + beta * lam) * np.cosh(lam)


def denominator_matrix(cfg: PlantConfig):
    """A sinh A + (alpha + beta A) cosh A, with cosh A and sinh A."""
    A = cfg.A
    ch, sh = cosh_sinh(A)
    M = A @ sh + (cfg.alpha * np.eye(cfg.n) + cfg.beta * A) @ ch
    return M, ch, sh


def _check_invertible(M, cfg):
    # M can vanish entirely (normal A with a planted conjugate pair), so the
    # smallest singular value is measured against the terms that build M
    ch, sh = cosh_sinh(cfg.A)
    scale = np.linalg.norm(cfg.A @ sh, 2) + np.linalg.norm((cfg.alpha * np.eye(cfg.n) + cfg.beta * cfg.A) @ ch, 2)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] <= scale / _Q_COND_LIMIT:
        eig = np.linalg.eigvals(cfg.A)
        worst = eig[np.argmin([abs(char_A1(l, cfg.alpha, cfg.beta)) for l in eig])]
        raise DesignInfeasibleError(
            f"A sinh A + (alpha + beta A) cosh A is singular: eigenvalue {worst:.6g} of A "
            f"lies on the spectrum of the closed-loop wave operator"
        )


def compute_Q(cfg: PlantConfig):
    M, ch, _ = denominator_matrix(cfg)
    _check_invertible(M, cfg)
    A = cfg.A
    b = A @ cfg.B2 + cfg.B1
    rhs = A @ cfg.B4 + cfg.B3 + (ch + (cfg.alpha * np.eye(cfg.n) + cfg.beta * A) @ mat_gfun(A)) @ b
    return np.linalg.solve(M, rhs)


def reduced_Q1(cfg: PlantConfig):
    """Q for the single-interconnection case B2 = B3 = B4 = 0."""
    if np.any(cfg.B2) or np.any(cfg.B3) or np.any(cfg.B4):
        raise InvalidInputError("reduced_Q1 requires B2 = B3 = B4 = 0")
    M, ch, _ = denominator_matrix(cfg)
    _check_invertible(M, cfg)
    A = cfg.A
    return np.linalg.solve(M, (ch + (cfg.alpha * np.eye(cfg.n) + cfg.beta * A) @ mat_gfun(A)) @ cfg.B1)


def L2_at_1_closed_form(cfg: PlantConfig):
    """L2(1) = M^{-1} [A B2 + B1 + cosh A (A B4 + B3)], independent of the sampled kernel."""
    M, ch, _ = denominator_matrix(cfg)
    _check_invertible(M, cfg)
    A = cfg.A
    return np.linalg.solve(M, A @ cfg.B2 + cfg.B1 + ch @ (A @ cfg.B4 + cfg.B3))


@dataclass(frozen=True)
class KernelSet:
    """Kernels sampled on the uniform grid x_i = i/N (rows of L1, L2).

    ``L2_ghost`` holds the closed form continued to x = -2dx, -dx, 1 + dx,
    1 + 2dx so that central stencils reach the end nodes.
    """

    x: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray
    L4: np.ndarray
    Q: np.ndarray
    L2_at_1: np.ndarray
    dL2_0: np.ndarray
    dL2_1: np.ndarray
    L2_ghost: np.ndarray
    _weighted: Dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("x", "L1", "L2", "L3", "L4", "Q", "L2_at_1", "dL2_0", "dL2_1", "L2_ghost"):
            getattr(self, name).setflags(write=False)
        w = simpson_weights(self.N)
        # quadrature rows: int L1 w dx = WL1 @ w
        self._weighted["L1"] = (self.L1 * w[:, None]).T.copy()
        self._weighted["L2"] = (self.L2 * w[:, None]).T.copy()

    @property
    def N(self):
        return self.x.size - 1

    @property
    def n(self):
        return self.L3.size

    @property
    def WL1(self):
        return self._weighted["L1"]

    @property
    def WL2(self):
        return self._weighted["L2"]

    def P(self, disp, vel):
        """The vector L3 w(0) + L4 w(1) + int L1 w + int L2 w_t."""
        return self.L3 * disp[0] + self.L4 * disp[-1] + self.WL1 @ disp + self.WL2 @ vel

    def to_csv(self, path):
        n = self.n
        header = ",".join(["x"] + [f"L1_{i + 1}" for i in range(n)] + [f"L2_{i + 1}" for i in range(n)])
        np.savetxt(path, np.column_stack([self.x, self.L1, self.L2]), delimiter=",", header=header, comments="")


def compute_kernels(cfg: PlantConfig, N) -> KernelSet:
    check_grid_size(N)
    A, n = cfg.A, cfg.n
    Q = compute_Q(cfg)
    b = A @ cfg.B2 + cfg.B1
    x = grid(N)
    L1 = np.empty((N + 1, n))
    L2 = np.empty((N + 1, n))
    for i, xi in enumerate(x):
        ch, sh = cosh_sinh(A * xi)
        L2[i] = -xi * (mat_gfun(A * xi) @ b) + ch @ Q
        L1[i] = -sh @ b + A @ (ch @ Q)
    dx = 1.0 / N
    ghost = np.empty((4, n))
    for i, xi in enumerate((-2 * dx, -dx, 1 + dx, 1 + 2 * dx)):
        ghost[i] = -xi * (mat_gfun(A * xi) @ b) + cosh_sinh(A * xi)[0] @ Q
    ch1, sh1 = cosh_sinh(A)
    L3 = -cfg.B2.copy()
    L4 = cfg.beta * (-(mat_gfun(A) @ b) + ch1 @ Q) - cfg.B4
    # d/dx [x G(Ax)] = cosh(Ax)
    dL2_0 = -b
    dL2_1 = -ch1 @ b + A @ (sh1 @ Q)
    closed = L2_at_1_closed_form(cfg)
    scale = max(1.0, np.linalg.norm(closed))
    if np.linalg.norm(L2[-1] - closed) > _L2_CROSSCHECK_TOL * scale:
        raise DesignInfeasibleError(
            f"sampled L2(1) disagrees with its closed form by {np.linalg.norm(L2[-1] - closed):.3g}; "
            "the kernel problem is too ill-conditioned"
        )
    return KernelSet(x, L1, L2, L3, L4, Q, L2[-1].copy(), dL2_0, dL2_1, ghost)


def extend_samples(f, ghost):
    """Stack two ghost rows on each side of the samples ``f``."""
    return np.concatenate([ghost[:2], np.asarray(f, dtype=float), ghost[2:]])


def fd_second_derivative(f_ext, dx):
    """Fourth-order central second derivative at the nodes of an extended array.

    ``f_ext`` carries two ghost rows on each side; the result has two rows
    fewer at each end.
    """
    f = np.asarray(f_ext, dtype=float)
    d = -f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]
    return d / (12 * dx * dx)


def fd_end_slopes(f_ext, dx):
    """Fourth-order central first derivatives at the two end nodes of an extended array."""
    f = np.asarray(f_ext, dtype=float)
    left = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * dx)
    right = (f[-5] - 8 * f[-4] + 8 * f[-2] - f[-1]) / (12 * dx)
    return left, right


RESIDUAL_NAMES = ("ode", "L1", "left", "B2", "right", "B4")
FD_RESIDUALS = ("ode", "left", "right")


@dataclass
class ResidualReport:
    """Max-norm residuals of the six kernel equations.

    ``fd`` uses fourth-order finite differences of the sampled L2;
    ``analytic`` uses the closed-form derivatives. ``ode_pointwise`` is the
    per-node FD residual of L2'' = A^2 L2.
    """

    fd: Dict[str, float]
    analytic: Dict[str, float]
    ode_pointwise: np.ndarray

    def max_fd(self):
        return max(self.fd.values())


def kernel_residual(ks: KernelSet, cfg: PlantConfig) -> ResidualReport:
    A, dx = cfg.A, 1.0 / ks.N
    L2, L1 = np.asarray(ks.L2), np.asarray(ks.L1)
    A2L2 = L2 @ (A @ A).T
    ext = extend_samples(L2, ks.L2_ghost)
    ode_pw = np.max(np.abs(fd_second_derivative(ext, dx) - A2L2), axis=1)
    dl, dr = fd_end_slopes(ext, dx)

    def vmax(v):
        return float(np.max(np.abs(v)))

    common = {
        "L1": vmax(L1 - L2 @ A.T),
        "B2": vmax(cfg.B2 + ks.L3),
        "B4": vmax(cfg.B4 + ks.L4 - cfg.beta * ks.L2_at_1),
    }
    fd = {
        "ode": float(ode_pw.max()),
        "left": vmax(cfg.B1 - A @ ks.L3 + dl),
        "right": vmax(cfg.B3 - A @ ks.L4 - dr - cfg.alpha * ks.L2_at_1),
        **common,
    }
    analytic = {
        "ode": vmax(L1 @ A.T - A2L2),
        "left": vmax(cfg.B1 - A @ ks.L3 + ks.dL2_0),
        "right": vmax(cfg.B3 - A @ ks.L4 - ks.dL2_1 - cfg.alpha * ks.L2_at_1),
        **common,
    }
    return ResidualReport(fd, analytic, ode_pw)


@dataclass
class TransformState:
    X: np.ndarray
    field: WaveGridState


def apply_transform(direction, s: TransformState, ks: KernelSet):
    """Forward: Y = X + P(w, w_t). Inverse: X = Y - P(w, w_t)."""
    if s.field.N != ks.N:
        raise InvalidInputError(f"field grid N={s.field.N} does not match kernel grid N={ks.N}")
    X = _vector(s.X, ks.n, "X")
    p = ks.P(s.field.disp, s.field.vel)
    if direction == "forward":
        return X + p
    if direction == "inverse":
        return X - p
    raise InvalidInputError(f"direction must be 'forward' or 'inverse', got {direction!r}")
