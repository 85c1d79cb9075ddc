"""Two-machine subsystems taken out of a multi-machine trajectory.

For machines ``i`` and ``j`` the weighted difference of their swing
equations is again a swing equation,

    d(d_ij)/dt = ws w_ij,   M_ij ws d(w_ij)/dt = Pm_ij - Pe_ij,

with ``M_ij = Mi Mj / (Mi + Mj)`` and the powers weighted by
``Mj / (Mi + Mj)`` and ``Mi / (Mi + Mj)``. No aggregation is involved, so the
equal-area balance holds exactly along the simulated trajectory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .netmodel import ReducedNetwork

CMDLP = "CMDLP"
CMDSP = "CMDSP"
CRITICAL = "CRITICAL"
NONE = "NONE"

CRITICAL_SPEED = 1e-4  # pu
CRITICAL_POWER = 1e-3  # pu


@dataclass(frozen=True)
class PairSeries:
    i: int
    j: int
    M: float  # M_ij
    Pm: float  # Pm_ij
    t: np.ndarray
    delta: np.ndarray
    omega: np.ndarray  # pu
    pe: np.ndarray
    clearing_index: int
    pe_clearing_fault: float  # fault-on Pe_ij at t_c (left limit)
    omega_base: float

    @property
    def name(self) -> str:
        return f"{self.i}_{self.j}"

    @property
    def delta_c(self) -> float:
        return float(self.delta[self.clearing_index])

    @property
    def omega_c(self) -> float:
        return float(self.omega[self.clearing_index])

    def kinetic(self, k) -> np.ndarray | float:
        """0.5 M_ij (ws w_ij)^2 at sample(s) ``k``, pu*rad."""
        w = self.omega_base * self.omega[k]
        return 0.5 * self.M * w * w

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# units: delta_ij rad, Pe_ij pu, Pm_ij pu, omega_ij pu, t s\n")
            w = csv.writer(fh)
            w.writerow(["delta_ij", "Pe_ij", "Pm_ij", "omega_ij", "t"])
            for k in range(len(self.t)):
                w.writerow([repr(float(self.delta[k])), repr(float(self.pe[k])), repr(self.Pm),
                            repr(float(self.omega[k])), repr(float(self.t[k]))])


def pair_weights(Mi: float, Mj: float) -> tuple[float, float, float]:
    """(M_ij, weight of machine i, weight of machine j)."""
    s = Mi + Mj
    return Mi * Mj / s, Mj / s, Mi / s


def pair_series(traj: Trajectory, i: int, j: int, M=None, Pm=None) -> PairSeries:
    """Angle-difference form of machines ``i`` and ``j`` (ids, not positions)."""
    if i == j:
        raise ValueError("a pair needs two different machines")
    a, b = traj.index_of(i), traj.index_of(j)
    M = traj.M if M is None else np.asarray(M, dtype=float)
    Pm = traj.Pm if Pm is None else np.asarray(Pm, dtype=float)
    Mij, wi, wj = pair_weights(M[a], M[b])
    return PairSeries(
        i=i, j=j, M=float(Mij),
        Pm=float(wi * Pm[a] - wj * Pm[b]),
        t=traj.t,
        delta=traj.delta[:, a] - traj.delta[:, b],
        omega=traj.omega[:, a] - traj.omega[:, b],
        pe=wi * traj.pe[:, a] - wj * traj.pe[:, b],
        clearing_index=traj.clearing_index,
        pe_clearing_fault=float(wi * traj.pe_clearing_fault[a] - wj * traj.pe_clearing_fault[b]),
        omega_base=traj.omega_base,
    )


def _trapz(y: np.ndarray, x: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def acceleration_area(ps: PairSeries) -> float:
    """Integral of (Pm_ij - Pe_ij) d(delta_ij) over the fault-on samples."""
    c = ps.clearing_index
    if c == 0:
        return 0.0
    x = ps.delta[: c + 1]
    y = np.append(ps.pe[:c], ps.pe_clearing_fault)
    return _trapz(ps.Pm - y, x)


@dataclass(frozen=True)
class SwingEvent:
    kind: str
    index: int  # left sample of the bracketing interval (-1 for NONE)
    delta: float  # delta_ij at that sample
    angle: float  # interpolated event angle
    fraction: float = 0.0  # position inside the bracket

    @property
    def found(self) -> bool:
        return self.kind != NONE


def _orientation(ps: PairSeries) -> float:
    # pairs swinging backwards are mirrored so the same rules apply
    return -1.0 if ps.omega_c < 0 else 1.0


def detect_events(ps: PairSeries) -> SwingEvent:
    """First post-clearing CMDLP / CMDSP / critical point of the pair."""
    s = _orientation(ps)
    c = ps.clearing_index
    w = s * ps.omega[c:]
    dec = s * (ps.pe[c:] - ps.Pm)  # deceleration power
    for k in range(len(w) - 1):
        if abs(w[k]) < CRITICAL_SPEED and abs(dec[k]) < CRITICAL_POWER:
            return SwingEvent(CRITICAL, c + k, float(ps.delta[c + k]), float(ps.delta[c + k]))
        liberation = w[k] > 0 and dec[k] > 0 and dec[k + 1] <= 0
        stationary = w[k] > 0 and w[k + 1] <= 0 and dec[k] > 0
        if not (liberation or stationary):
            continue
        if liberation and stationary:
            kind = CRITICAL
            frac = 0.5 * (dec[k] / (dec[k] - dec[k + 1]) + w[k] / (w[k] - w[k + 1]))
        elif liberation:
            kind = CMDLP
            frac = dec[k] / (dec[k] - dec[k + 1])
        else:
            kind = CMDSP
            frac = w[k] / (w[k] - w[k + 1])
        d0, d1 = ps.delta[c + k], ps.delta[c + k + 1]
        return SwingEvent(kind, c + k, float(d0), float(d0 + frac * (d1 - d0)), float(frac))
    return SwingEvent(NONE, -1, float("nan"), float("nan"))


def _post_integral(ps: PairSeries, upto: int, frac: float = 0.0) -> float:
    """Integral of (Pe_ij - Pm_ij) d(delta_ij) from clearing to sample ``upto`` (+ frac of the next step)."""
    c = ps.clearing_index
    x = ps.delta[c: upto + 1]
    y = ps.pe[c: upto + 1] - ps.Pm
    area = _trapz(y, x)
    if frac > 0:
        x1 = ps.delta[upto] + frac * (ps.delta[upto + 1] - ps.delta[upto])
        y1 = y[-1] + frac * (ps.pe[upto + 1] - ps.pe[upto])
        area += 0.5 * (y[-1] + y1) * (x1 - ps.delta[upto])
    return area


def deceleration_area_actual(ps: PairSeries, event: SwingEvent) -> float:
    """Integral of (Pe_ij - Pm_ij) from the clearing angle to the event angle."""
    if event.kind not in (CMDLP, CMDSP, CRITICAL):
        raise ValueError("deceleration area needs a CMDLP, CMDSP or critical event")
    return _post_integral(ps, event.index, event.fraction)


def eac_residual(ps: PairSeries, upto: int) -> float:
    """A_ACC - A_DEC(upto) - (kinetic(upto) - kinetic(0)).

    Zero up to integration error for any pair and any post-clearing sample.
    """
    c = ps.clearing_index
    if not c <= upto < len(ps.t):
        raise IndexError("sample index outside the post-fault part of the series")
    return acceleration_area(ps) - _post_integral(ps, upto) - (ps.kinetic(upto) - ps.kinetic(0))


def eac_residuals(ps: PairSeries, stop: int | None = None) -> np.ndarray:
    """Vectorised :func:`eac_residual` for samples clearing..stop (inclusive)."""
    c = ps.clearing_index
    stop = len(ps.t) - 1 if stop is None else stop
    x = ps.delta[c: stop + 1]
    y = ps.pe[c: stop + 1] - ps.Pm
    dec = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))])
    ke = ps.kinetic(slice(c, stop + 1)) - ps.kinetic(0)
    return acceleration_area(ps) - dec - ke


# --------------------------------------------------------------------------
# quasi-sinusoidal decomposition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuasiCoefficients:
    t: np.ndarray
    delta: np.ndarray  # delta_ij
    k_sin: np.ndarray
    k_cos: np.ndarray
    k_tail: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.k_sin * np.sin(self.delta) + self.k_cos * np.cos(self.delta) + self.k_tail


def quasi_coefficients(traj: Trajectory, net: ReducedNetwork, critical, noncritical, i: int, j: int,
                       samples=slice(None)) -> QuasiCoefficients:
    """Write Pe_ij = K_sin sin(d_ij) + K_cos cos(d_ij) + K_tail sample by sample.

    ``critical`` and ``noncritical`` partition the machine ids with
    ``i`` in the first and ``j`` in the second. The coefficients only depend
    on angle differences inside each set. ``net`` must be the network in
    force over ``samples``.
    """
    cr, ncr = set(critical), set(noncritical)
    ids = set(traj.machine_ids)
    if cr & ncr or (cr | ncr) != ids:
        raise ValueError("critical and non-critical sets must partition the machines")
    if i not in cr or j not in ncr:
        raise ValueError("i must be critical and j non-critical")
    a, b = traj.index_of(i), traj.index_of(j)
    cr_idx = np.array(sorted(traj.index_of(m) for m in cr))
    ncr_idx = np.array(sorted(traj.index_of(m) for m in ncr))
    _, wi, wj = pair_weights(traj.M[a], traj.M[b])

    d = traj.delta[samples]
    C, D = net.C, net.D
    # angle differences inside each set: d_jn = d_j - d_n, d_im = d_i - d_m
    d_jn = d[:, [b]] - d[:, ncr_idx]
    d_im = d[:, [a]] - d[:, cr_idx]
    Cin, Din = C[a, ncr_idx], D[a, ncr_idx]
    Cjm, Djm = C[b, cr_idx], D[b, cr_idx]
    k_sin = (wi * np.sum(Cin * np.cos(d_jn) - Din * np.sin(d_jn), axis=1)
             + wj * np.sum(Cjm * np.cos(d_im) - Djm * np.sin(d_im), axis=1))
    k_cos = (wi * np.sum(Cin * np.sin(d_jn) + Din * np.cos(d_jn), axis=1)
             - wj * np.sum(Cjm * np.sin(d_im) + Djm * np.cos(d_im), axis=1))
    Cim, Dim = C[a, cr_idx], D[a, cr_idx]
    Cjn, Djn = C[b, ncr_idx], D[b, ncr_idx]
    k_tail = (wi * (net.constant_power[a] + np.sum(Cim * np.sin(d_im) + Dim * np.cos(d_im), axis=1))
              - wj * (net.constant_power[b] + np.sum(Cjn * np.sin(d_jn) + Djn * np.cos(d_jn), axis=1)))
    return QuasiCoefficients(t=traj.t[samples], delta=d[:, a] - d[:, b], k_sin=k_sin, k_cos=k_cos, k_tail=k_tail)
