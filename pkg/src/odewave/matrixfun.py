"""Hyperbolic matrix functions cosh(M), sinh(M) and G(M) = sinh(M) M^{-1}.

cosh and sinh are evaluated by scaling and squaring: the argument is scaled
by 2^-s until its 1-norm is below ``_THETA``, a short even/odd Taylor series
is summed, and the double-angle recurrences

    cosh(2X) = cosh(X)^2 + sinh(X)^2,    sinh(2X) = 2 sinh(X) cosh(X)

undo the scaling. Everything stays in real arithmetic, so complex eigenvalues
of the argument need no special treatment.

G is the entire function sinh(z)/z with G(0) = 1. For well-conditioned M it
is obtained from M X = sinh(M); near the removable singularity it is read off
the upper-right block of sinh([[M, I], [0, 0]]), which equals the divided
difference (sinh(M) - sinh(0)) M^{-1} analytically continued through
singular M.
"""

import math

import numpy as np

from .errors import InvalidInputError

_THETA = 0.25
_TAYLOR_TERMS = 10
_GFUN_COND_LIMIT = 1e8

# 1/(2j)! and 1/(2j+1)! for j = 0.._TAYLOR_TERMS-1
_COSH_COEF = np.array([1.0 / math.factorial(2 * j) for j in range(_TAYLOR_TERMS)])
_SINH_COEF = np.array([1.0 / math.factorial(2 * j + 1) for j in range(_TAYLOR_TERMS)])


def as_square_matrix(M):
    """Validate and return ``M`` as a finite float64 square matrix."""
    M = np.array(M, dtype=float, ndmin=2)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise InvalidInputError(f"expected a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix has non-finite entries")
    return M


def _horner(coef, X2, eye):
    acc = coef[-1] * eye
    for c in coef[-2::-1]:
        acc = X2 @ acc + c * eye
    return acc


def cosh_sinh(M):
    """Return ``(cosh(M), sinh(M))`` for a real square matrix."""
    M = as_square_matrix(M)
    n = M.shape[0]
    eye = np.eye(n)
    norm = np.linalg.norm(M, 1)
    s = 0
    if norm > _THETA:
        s = int(math.ceil(math.log2(norm / _THETA)))
    X = M / (2.0 ** s)
    X2 = X @ X
    C = _horner(_COSH_COEF, X2, eye)
    S = X @ _horner(_SINH_COEF, X2, eye)
    for _ in range(s):
        C, S = C @ C + S @ S, 2.0 * (S @ C)
    return C, S


def mat_cosh(M):
    """Matrix hyperbolic cosine, (e^M + e^-M)/2."""
    return cosh_sinh(M)[0]


def mat_sinh(M):
    """Matrix hyperbolic sine, (e^M - e^-M)/2."""
    return cosh_sinh(M)[1]


def mat_gfun(M):
    """G(M) = sinh(M) M^{-1}, continued analytically through singular M.

    >>> mat_gfun(np.zeros((2, 2)))
    array([[1., 0.],
           [0., 1.]])
    """
    M = as_square_matrix(M)
    n = M.shape[0]
    if np.linalg.cond(M) < _GFUN_COND_LIMIT:
        # M and sinh(M) commute, so M^{-1} sinh(M) = sinh(M) M^{-1}
        return np.linalg.solve(M, mat_sinh(M))
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = M
    block[:n, n:] = np.eye(n)
    return mat_sinh(block)[:n, n:]
