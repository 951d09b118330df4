"""Norms, energy functionals, decay-rate fits and tracking metrics."""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import FitFailedError, InvalidInputError
from .wavesolver import WaveGridState, simpson_weights


def _slope(s: WaveGridState):
    # second-order central differences, one-sided second order at the ends
    return np.gradient(s.disp, s.dx, edge_order=2)


def h1_norm(s: WaveGridState, alpha):
    """Squared energy norm int(w_x^2 + w_t^2) dx + alpha w(1)^2."""
    w = simpson_weights(s.N)
    return float(w @ (_slope(s) ** 2 + s.vel ** 2) + alpha * s.disp[-1] ** 2)


@dataclass
class EnergySample:
    E0: float
    rho: float
    E: float
    E2: float

    def __iter__(self):
        return iter((self.E0, self.rho, self.E, self.E2))


def energy_diagnostics(w_err: WaveGridState, p_err: WaveGridState, alpha, eps: Optional[WaveGridState] = None):
    """E0, rho, E and E2 for the observer-error field, the estimator error and their sum.

    ``eps`` defaults to ``w_err + p_err``.
    """
    if w_err.N != p_err.N:
        raise InvalidInputError("error fields live on different grids")
    wq = simpson_weights(w_err.N)
    wx, px = _slope(w_err), _slope(p_err)
    E2 = float(wq @ (px ** 2 + p_err.vel ** 2))
    E0 = float(wq @ (wx ** 2 + w_err.vel ** 2)) + E2 + alpha * w_err.disp[-1] ** 2
    rho = float(wq @ (w_err.x * w_err.vel * wx))
    if eps is None:
        E = float(wq @ ((wx + px) ** 2 + (w_err.vel + p_err.vel) ** 2)) + alpha * (w_err.disp[-1] + p_err.disp[-1]) ** 2
    else:
        E = h1_norm(eps, alpha)
    return EnergySample(E0, rho, E, E2)


@dataclass
class DecayFit:
    """Least-squares fit value ~ M exp(-gamma t); iterates as (M, gamma, residual)."""

    M: float
    gamma: float
    residual: float
    n_used: int
    dropped: int = 0

    def __iter__(self):
        return iter((self.M, self.gamma, self.residual))

    @property
    def flagged(self):
        return self.dropped > 0

    def to_dict(self):
        return asdict(self)


def fit_decay(t, values, window=0.5, floor=0.0, min_samples=10):
    """Fit log(value) = log(M) - gamma t over the trailing ``window`` fraction of the horizon.

    Samples that are not above ``floor`` (default: non-positive ones) are
    dropped and counted in ``dropped``.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise InvalidInputError("t and values must be 1-D arrays of equal length")
    if not 0.0 < window <= 1.0:
        raise InvalidInputError(f"window must be in (0, 1], got {window}")
    t0 = t[-1] - window * (t[-1] - t[0])
    sel = t >= t0 - 1e-12 * max(1.0, abs(t0))
    tt, vv = t[sel], v[sel]
    if tt.size < min_samples:
        raise FitFailedError(f"only {tt.size} samples in the fit window (need {min_samples})")
    keep = np.isfinite(vv) & (vv > max(floor, 0.0))
    dropped = int(tt.size - keep.sum())
    if keep.sum() < 2:
        raise FitFailedError("every sample in the fit window was dropped")
    tt, lv = tt[keep], np.log(vv[keep])
    slope, intercept = np.polyfit(tt, lv, 1)
    res = lv - (slope * tt + intercept)
    return DecayFit(float(math.exp(intercept)), float(-slope), float(np.sqrt(np.mean(res ** 2))), int(keep.sum()), dropped)


def tracking_error(F, Fhat, t=None, window=0.5):
    """RMS of F - Fhat over the trailing window, RMS of F, and their ratio (None if RMS F is 0)."""
    F = np.asarray(F, dtype=float)
    Fhat = np.asarray(Fhat, dtype=float)
    if F.shape != Fhat.shape:
        raise InvalidInputError("F and Fhat are not aligned")
    if t is None:
        t = np.arange(F.size, dtype=float)
    t = np.asarray(t, dtype=float)
    sel = t >= t[-1] - window * (t[-1] - t[0]) if t.size else np.zeros(0, bool)
    if not np.any(sel):
        raise InvalidInputError("empty tracking window")
    err = float(np.sqrt(np.mean((F[sel] - Fhat[sel]) ** 2)))
    rms = float(np.sqrt(np.mean(F[sel] ** 2)))
    return err, rms, (err / rms if rms > 0 else None)


def boundedness(t, values, growth_tol=1e-2):
    """True if the series is finite and its max over the last third does not exceed
    the max over the first two thirds by more than ``growth_tol`` (relative)."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        return False
    cut = t[0] + 2.0 * (t[-1] - t[0]) / 3.0
    early, late = v[t < cut], v[t >= cut]
    if early.size == 0 or late.size == 0:
        return True
    return bool(late.max() <= (1.0 + growth_tol) * early.max())


@dataclass
class SimReport:
    scenario: str
    fits: Dict[str, dict] = field(default_factory=dict)
    tracking: Optional[dict] = None
    bounded: Dict[str, bool] = field(default_factory=dict)
    final: Dict[str, float] = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)
