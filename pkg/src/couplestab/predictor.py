"""Short-window identification of a pair's power-angle curve.

Two models are fitted to (delta_ij, Pe_ij) samples taken right after
clearing:

* quadratic-sinusoidal: ``(q1 d^2 + q2 d + q3) sin d + h_cos cos d + h_cst``
* sinusoidal:           ``h_sin sin d + h_cos cos d + h_cst``

The first crossing of a fitted curve down through ``Pm_ij`` on
``[delta_c, pi]`` is the predicted liberation point (PCMDLP); the area
between the curve and ``Pm_ij`` up to that point is the predicted
deceleration area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pairs import PairSeries

DEFAULT_SIGMA = 0.5
DEFAULT_SCAN = 1000
MIN_SAMPLES = 5
RANK_TOL = 1e-12  # relative singular-value floor


class IdentificationError(ValueError):
    """The window cannot determine the model coefficients."""


@dataclass(frozen=True)
class SampleWindow:
    delta: np.ndarray
    pe: np.ndarray
    t: np.ndarray
    start: float
    spacing: float

    @property
    def count(self) -> int:
        return len(self.delta)

    def __post_init__(self):
        if len(self.delta) < MIN_SAMPLES:
            raise ValueError(f"a window needs at least {MIN_SAMPLES} samples")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("window samples must be strictly time-ordered")


def collect_window(ps: PairSeries, start: float, spacing: float = 0.01, count: int = 10) -> SampleWindow:
    """Samples at ``start + k * spacing`` for k = 1..count (nearest trajectory sample).

    The window spans ``[start, start + count * spacing]``; the first sample
    lies one spacing after ``start`` so that it is strictly post-clearing
    when ``start`` is the clearing time.
    """
    if count < MIN_SAMPLES:
        raise ValueError(f"count must be >= {MIN_SAMPLES}")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    dt = ps.t[1] - ps.t[0]
    times = start + spacing * np.arange(1, count + 1)
    idx = np.rint((times - ps.t[0]) / dt).astype(int)
    if idx[0] < 0 or idx[-1] >= len(ps.t):
        raise ValueError(f"window [{start:.3f}, {times[-1]:.3f}] s exceeds the trajectory")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("spacing is finer than the trajectory step")
    return SampleWindow(delta=ps.delta[idx].copy(), pe=ps.pe[idx].copy(), t=ps.t[idx].copy(),
                        start=float(start), spacing=float(spacing))


def _lstsq(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    # column scaling keeps the rank test meaningful for badly scaled regressors
    scale = np.linalg.norm(A, axis=0)
    if np.any(scale == 0):
        raise IdentificationError("a regressor column vanishes over the window")
    coef, _, rank, sv = np.linalg.lstsq(A / scale, y, rcond=None)
    if rank < A.shape[1] or sv[-1] < RANK_TOL * sv[0]:
        raise IdentificationError("rank-deficient regressors; the window does not excite the model")
    return coef / scale


@dataclass(frozen=True)
class SinFit:
    h_sin: float
    h_cos: float
    h_cst: float

    def __call__(self, delta):
        d = np.asarray(delta, dtype=float)
        return self.h_sin * np.sin(d) + self.h_cos * np.cos(d) + self.h_cst

    def as_dict(self) -> dict:
        return {"H_sin": self.h_sin, "H_cos": self.h_cos, "H_cst": self.h_cst}


@dataclass(frozen=True)
class QrFit:
    q1: float
    q2: float
    q3: float
    h_cos: float
    h_cst: float
    sigma: float = 1.0

    def __call__(self, delta):
        d = np.asarray(delta, dtype=float)
        return (self.q1 * d * d + self.q2 * d + self.q3) * np.sin(d) + self.h_cos * np.cos(d) + self.h_cst

    def as_dict(self) -> dict:
        return {"H_q1": self.q1, "H_q2": self.q2, "H_q3": self.q3, "H_cos": self.h_cos, "H_cst": self.h_cst,
                "sigma": self.sigma}


def sin_basis(d: np.ndarray) -> np.ndarray:
    return np.column_stack([np.sin(d), np.cos(d), np.ones_like(d)])


def qr_basis(d: np.ndarray) -> np.ndarray:
    s = np.sin(d)
    return np.column_stack([d * d * s, d * s, s, np.cos(d), np.ones_like(d)])


def fit_sin(w: SampleWindow) -> SinFit:
    return SinFit(*map(float, _lstsq(sin_basis(w.delta), w.pe)))


def fit_qr(w: SampleWindow, sigma: float = DEFAULT_SIGMA) -> QrFit:
    """Weighted three-step identification of the quadratic-sinusoidal model.

    1. free least squares on all five coefficients;
    2. shrink the two quadratic coefficients by ``sigma``;
    3. refit the remaining three with the shrunk ones held fixed.
    """
    if not 0 < sigma <= 1:
        raise ValueError("sigma must lie in (0, 1]")
    A = qr_basis(w.delta)
    q1, q2, *_ = _lstsq(A, w.pe)
    q1, q2 = sigma * q1, sigma * q2
    rest = _lstsq(A[:, 2:], w.pe - A[:, 0] * q1 - A[:, 1] * q2)
    return QrFit(float(q1), float(q2), *map(float, rest), sigma=float(sigma))


def window_rms(fit, w: SampleWindow) -> float:
    return float(np.sqrt(np.mean((fit(w.delta) - w.pe) ** 2)))


# --------------------------------------------------------------------------
# crossing and classification
# --------------------------------------------------------------------------

A1, A2, A3, A4 = "A-1", "A-2", "A-3", "A-4"


def scan_grid(delta_c: float, intervals: int = DEFAULT_SCAN) -> np.ndarray:
    return np.linspace(delta_c, math.pi, intervals + 1)


def first_crossing(fit, pm: float, delta_c: float, intervals: int = DEFAULT_SCAN) -> float | None:
    """Midpoint of the first grid cell where ``fit - pm`` goes from > 0 to < 0."""
    if delta_c >= math.pi:
        return None
    g = scan_grid(delta_c, intervals)
    r = fit(g) - pm
    hit = np.nonzero((r[:-1] > 0) & (r[1:] < 0))[0]
    if hit.size == 0:
        return None
    k = hit[0]
    return float(0.5 * (g[k] + g[k + 1]))


@dataclass(frozen=True)
class Prediction:
    kind: str
    pcmdlp: float
    source: str  # "qr", "sin" or "none"
    qr_crossing: float | None = None
    sin_crossing: float | None = None
    degenerate: bool = False  # clearing angle already at or beyond pi


def classify(qr: QrFit, sn: SinFit, pm: float, delta_c: float, intervals: int = DEFAULT_SCAN) -> Prediction:
    if delta_c >= math.pi:
        return Prediction(A1, float(delta_c), "none", degenerate=True)
    xq = first_crossing(qr, pm, delta_c, intervals)
    xs = first_crossing(sn, pm, delta_c, intervals)
    if xq is not None and xs is not None:
        return Prediction(A1, xq, "qr", xq, xs)
    if xq is not None:
        return Prediction(A2, xq, "qr", xq, xs)
    if xs is not None:
        return Prediction(A3, xs, "sin", xq, xs)
    return Prediction(A4, math.pi, "none", xq, xs)


def predicted_dec_area(fit, pm: float, delta_c: float, pcmdlp: float, intervals: int = DEFAULT_SCAN) -> float:
    """Trapezoidal integral of (fit - pm) from ``delta_c`` to ``pcmdlp``.

    Uses the uniform scan grid over ``[delta_c, pi]``; the last, partial
    cell ends at ``pcmdlp``.
    """
    if not pcmdlp > delta_c:
        raise ValueError("pcmdlp must exceed the clearing angle")
    if intervals < 100:
        raise ValueError("use at least 100 scan intervals")
    g = scan_grid(delta_c, intervals)
    g = np.append(g[g < pcmdlp], pcmdlp)
    y = fit(g) - pm
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(g)))


def curve_samples(fit, delta_c: float, upto: float = math.pi, count: int = 200) -> tuple[np.ndarray, np.ndarray]:
    d = np.linspace(delta_c, max(upto, delta_c), count)
    return d, fit(d)
