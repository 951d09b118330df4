"""Standing-assumption checks and gain synthesis.

Two characteristic functions govern the spectra of the wave operators that
appear in the closed loop:

    char_A1(lam) = lam sinh(lam) + (alpha + beta lam) cosh(lam)
    char_A(lam)  = (1 + k)(lam + alpha) e^lam + (1 - k)(alpha - lam) e^-lam

The first belongs to the plant wave with the damped boundary
w_x(1) = -alpha w(1) - beta w_t(1); the second to the observer error wave
with e_x(0) = k e_t(0), e_x(1) = -alpha e(1). The gains K and H must not be
designed for plants whose A shares an eigenvalue with either operator.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from scipy import optimize, signal

from .errors import DesignInfeasibleError, InvalidInputError
from .kernel import KernelSet, PlantConfig, char_A1, denominator_matrix
from .matrixfun import as_square_matrix

__all__ = [
    "char_A1",
    "char_A1_prime",
    "char_A",
    "char_A_prime",
    "find_root",
    "AssumptionReport",
    "check_assumptions",
    "GainSet",
    "default_poles_K",
    "default_poles_H",
    "ackermann",
    "controllability_matrix",
    "observability_matrix",
    "place_K",
    "place_H",
    "design_gains",
]

SPECTRAL_MARGIN = 1e-8
_CTRB_COND_LIMIT = 1e12
_POLE_TOL = 1e-6


def char_A1_prime(lam, alpha, beta):
    lam = complex(lam)
    sh, ch = np.sinh(lam), np.cosh(lam)
    return sh + lam * ch + beta * ch + (alpha + beta * lam) * sh


def char_A(lam, alpha, k):
    """Characteristic function of the observer-error wave operator.

    Its zeros (other than the excluded lam = 0) are the eigenvalues. For
    k = 1 only the first term survives and the single root is -alpha.
    """
    lam = complex(lam)
    return (1 + k) * (lam + alpha) * np.exp(lam) + (1 - k) * (alpha - lam) * np.exp(-lam)


def char_A_prime(lam, alpha, k):
    lam = complex(lam)
    return (1 + k) * (lam + alpha + 1) * np.exp(lam) + (1 - k) * (lam - alpha - 1) * np.exp(-lam)


def find_root(which, seed, alpha, other, tol=1e-10, maxiter=200):
    """Newton iteration for a zero of ``char_A1`` (other = beta) or ``char_A`` (other = k).

    Both functions are real on the real axis, so a real seed can only reach
    real roots; pass a complex seed to reach the oscillatory ones.
    """
    if which == "A1":
        f, fp = char_A1, char_A1_prime
    elif which == "A":
        f, fp = char_A, char_A_prime
    else:
        raise InvalidInputError(f"unknown characteristic function {which!r}")
    try:
        root = optimize.newton(
            lambda z: f(z, alpha, other),
            complex(seed),
            fprime=lambda z: fp(z, alpha, other),
            tol=tol * 1e-2,
            maxiter=maxiter,
        )
    except RuntimeError as exc:
        raise DesignInfeasibleError(f"Newton search from {seed} did not converge: {exc}") from None
    if abs(f(root, alpha, other)) > tol * max(1.0, abs(fp(root, alpha, other))):
        raise DesignInfeasibleError(f"Newton search from {seed} stalled at {root}")
    return complex(root)


def _rank(M):
    return int(np.linalg.matrix_rank(M))


def controllability_matrix(A, b):
    n = A.shape[0]
    cols = [np.asarray(b, dtype=float)]
    for _ in range(n - 1):
        cols.append(A @ cols[-1])
    return np.column_stack(cols)


def observability_matrix(A, C):
    rows = [np.atleast_2d(C)]
    for _ in range(A.shape[0] - 1):
        rows.append(rows[-1] @ A)
    return np.vstack(rows)


def _jsonable(z):
    z = complex(z)
    return [z.real, z.imag]


@dataclass
class AssumptionReport:
    eigenvalues: List[complex]
    margins_A1: List[float]
    margins_A: List[float]
    spectrum_A1_ok: bool
    spectrum_A_ok: bool
    controllable: bool
    controllable_rank: int
    observable: bool
    observable_rank: int
    n: int
    margin: float = SPECTRAL_MARGIN

    @property
    def ok(self):
        return self.spectrum_A1_ok and self.spectrum_A_ok and self.controllable and self.observable

    def failures(self):
        out = []
        for lam, m in zip(self.eigenvalues, self.margins_A1):
            if m <= self.margin:
                out.append(f"eigenvalue {lam:.6g} of A is (numerically) in the spectrum of the plant wave operator, |char| = {m:.3g}")
        for lam, m in zip(self.eigenvalues, self.margins_A):
            if m <= self.margin:
                out.append(f"eigenvalue {lam:.6g} of A is (numerically) in the spectrum of the observer error operator, |char| = {m:.3g}")
        if not self.controllable:
            out.append(f"interconnection pair not controllable (rank {self.controllable_rank} < {self.n})")
        if not self.observable:
            out.append(f"(A, C) not observable (rank {self.observable_rank} < {self.n})")
        return out

    def to_dict(self):
        d = asdict(self)
        d["eigenvalues"] = [_jsonable(z) for z in self.eigenvalues]
        d["ok"] = self.ok
        d["failures"] = self.failures()
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def check_assumptions(cfg: PlantConfig, margin=SPECTRAL_MARGIN) -> AssumptionReport:
    A = cfg.A
    eig = [complex(l) for l in np.linalg.eigvals(A)]
    m1 = [float(abs(char_A1(l, cfg.alpha, cfg.beta))) for l in eig]
    m2 = [float(abs(char_A(l, cfg.alpha, cfg.k_est))) for l in eig]
    _, ch, _ = denominator_matrix(cfg)
    pair = A @ cfg.B2 + cfg.B1 + ch @ (A @ cfg.B4 + cfg.B3)
    rc = _rank(controllability_matrix(A, pair))
    ro = _rank(observability_matrix(A, cfg.C))
    return AssumptionReport(
        eigenvalues=eig,
        margins_A1=m1,
        margins_A=m2,
        spectrum_A1_ok=all(m > margin for m in m1),
        spectrum_A_ok=all(m > margin for m in m2),
        controllable=rc == cfg.n,
        controllable_rank=rc,
        observable=ro == cfg.n,
        observable_rank=ro,
        n=cfg.n,
        margin=margin,
    )


def default_poles_K(n):
    return [-1.0 - j for j in range(n)]


def default_poles_H(n):
    return [-3.0 * (1 + j) for j in range(n)]


def _check_poles(poles, n):
    poles = np.asarray(poles, dtype=complex).ravel()
    if poles.size != n:
        raise InvalidInputError(f"need {n} desired poles, got {poles.size}")
    if not np.all(np.isfinite(poles)):
        raise InvalidInputError("desired poles must be finite")
    coeffs = np.poly(poles)
    if np.max(np.abs(coeffs.imag)) > 1e-9 * max(1.0, np.max(np.abs(coeffs))):
        raise InvalidInputError("complex desired poles must come in conjugate pairs")
    return poles, coeffs.real


def _match_spectrum(actual, desired, what):
    """Raise unless ``actual`` equals ``desired`` as multisets to relative 1e-6."""
    desired = list(desired)
    distinct = len(desired) == 1 or min(
        abs(a - b) for i, a in enumerate(desired) for b in desired[i + 1:]
    ) > 1e-3 * max(1.0, max(abs(p) for p in desired))
    if distinct:
        left = list(actual)
        for p in desired:
            j = int(np.argmin([abs(a - p) for a in left]))
            if abs(left[j] - p) > _POLE_TOL * max(1.0, abs(p)):
                raise DesignInfeasibleError(f"{what}: placed pole {left[j]:.6g} misses {p:.6g}")
            left.pop(j)
    else:
        # repeated poles are ill-conditioned as eigenvalues; compare polynomials
        ca, cd = np.poly(actual).real, np.poly(desired).real
        if np.max(np.abs(ca - cd)) > _POLE_TOL * max(1.0, np.max(np.abs(cd))):
            raise DesignInfeasibleError(f"{what}: closed-loop polynomial misses the requested one")


def ackermann(A, b, poles):
    """Gain k with eig(A + b k^T) = poles for a single-input pair (A, b)."""
    A = as_square_matrix(A)
    n = A.shape[0]
    b = np.asarray(b, dtype=float).ravel()
    poles, coeffs = _check_poles(poles, n)
    ctrb = controllability_matrix(A, b)
    if _rank(ctrb) < n or np.linalg.cond(ctrb) > _CTRB_COND_LIMIT:
        raise DesignInfeasibleError(f"pair is not controllable (rank {_rank(ctrb)} of {n})")
    pA = np.zeros_like(A)
    for c in coeffs:
        pA = pA @ A + c * np.eye(n)
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    row = np.linalg.solve(ctrb.T, e_n)
    return -(row @ pA)


def place_K(cfg: PlantConfig, ks: KernelSet, desired_poles=None):
    """K such that A + L2(1) K^T has the requested spectrum."""
    poles = default_poles_K(cfg.n) if desired_poles is None else desired_poles
    K = ackermann(cfg.A, ks.L2_at_1, poles)
    closed = cfg.A + np.outer(ks.L2_at_1, K)
    _match_spectrum(np.linalg.eigvals(closed), np.asarray(poles, dtype=complex), "place_K")
    return K


def place_H(A, C, desired_poles=None):
    """H (n x q) such that A + H C has the requested spectrum."""
    A = as_square_matrix(A)
    n = A.shape[0]
    C = np.array(C, dtype=float, ndmin=2)
    if C.shape[1] != n:
        raise InvalidInputError(f"C must have {n} columns, got shape {C.shape}")
    poles = default_poles_H(n) if desired_poles is None else desired_poles
    poles_arr, _ = _check_poles(poles, n)
    ro = _rank(observability_matrix(A, C))
    if ro < n:
        raise DesignInfeasibleError(f"(A, C) is not observable (rank {ro} of {n})")
    q = C.shape[0]
    if q == 1:
        H = ackermann(A.T, C[0], poles_arr)[:, None]
    else:
        # duality: eig(A^T - C^T G) placed by the multi-input routine, H = -G^T
        try:
            res = signal.place_poles(A.T, C.T, poles_arr)
        except ValueError as exc:
            raise DesignInfeasibleError(f"place_H: {exc}") from None
        H = -res.gain_matrix.T
    _match_spectrum(np.linalg.eigvals(A + H @ C), poles_arr, "place_H")
    return H


@dataclass
class GainSet:
    K: np.ndarray
    H: np.ndarray
    poles_K: list = field(default_factory=list)
    poles_H: list = field(default_factory=list)

    def to_dict(self):
        return {
            "K": np.asarray(self.K).tolist(),
            "H": np.asarray(self.H).tolist(),
            "poles_K": [_jsonable(p) for p in self.poles_K],
            "poles_H": [_jsonable(p) for p in self.poles_H],
        }


def _parse_poles(poles):
    """Accept numbers, [re, im] pairs or complex values."""
    if poles is None:
        return None
    out = []
    for p in poles:
        if isinstance(p, (list, tuple)):
            out.append(complex(p[0], p[1]))
        else:
            out.append(complex(p))
    return out


def design_gains(cfg: PlantConfig, ks: KernelSet, poles_K=None, poles_H=None,
                 K: Optional[np.ndarray] = None, H: Optional[np.ndarray] = None) -> GainSet:
    """Place both gains, or validate explicitly supplied ones."""
    n = cfg.n
    poles_K = _parse_poles(poles_K) or default_poles_K(n)
    poles_H = _parse_poles(poles_H) or default_poles_H(n)
    if K is None:
        K = place_K(cfg, ks, poles_K)
    else:
        K = np.asarray(K, dtype=float).ravel()
        if K.size != n:
            raise InvalidInputError(f"K must have {n} entries")
        poles_K = list(np.linalg.eigvals(cfg.A + np.outer(ks.L2_at_1, K)))
    if H is None:
        H = place_H(cfg.A, cfg.C, poles_H)
    else:
        H = np.array(H, dtype=float, ndmin=2).reshape(n, cfg.q)
        poles_H = list(np.linalg.eigvals(cfg.A + H @ cfg.C))
    for name, poles in (("A + L2(1) K^T", poles_K), ("A + H C", poles_H)):
        if max(complex(p).real for p in poles) >= 0:
            raise DesignInfeasibleError(f"{name} is not Hurwitz")
    return GainSet(K, H, list(poles_K), list(poles_H))
