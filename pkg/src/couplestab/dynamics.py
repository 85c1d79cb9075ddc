"""Classical-model swing dynamics, centre-of-inertia and COI-relative views.

Speeds are deviations from synchronous speed in per unit, so the angle
equation reads ``d(delta)/dt = ws * omega`` and the rotor equation
``M ws d(omega)/dt = Pm - Pe`` with ``M = 2H / ws``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netmodel import FaultScenario, ReducedNetwork, SolvedCase, reduced_networks

FAULT_ON = "fault-on"
POST_FAULT = "postfault"


class SimulationError(RuntimeError):
    pass


def electrical_power(net: ReducedNetwork, delta: np.ndarray) -> np.ndarray:
    """Pe_i = E_i^2 G_ii + sum_j C_ij sin(d_ij) + D_ij cos(d_ij).

    ``delta`` may carry leading sample axes: shape (..., n).
    """
    d = np.asarray(delta, dtype=float)
    dij = d[..., :, None] - d[..., None, :]
    return net.constant_power + np.sum(net.C * np.sin(dij) + net.D * np.cos(dij), axis=-1)


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    delta: np.ndarray  # (samples, n), rad
    omega: np.ndarray  # (samples, n), pu
    pe: np.ndarray  # (samples, n), network in force at that sample
    stage: np.ndarray  # (samples,) of str
    clearing_index: int
    M: np.ndarray
    Pm: np.ndarray
    omega_base: float
    machine_ids: tuple[int, ...]
    dt: float
    pe_clearing_fault: np.ndarray  # fault-on Pe at the clearing instant (left limit)
    fault_net: ReducedNetwork = field(repr=False, default=None)
    post_net: ReducedNetwork = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.delta.shape[1]

    def __len__(self) -> int:
        return len(self.t)

    def index_of(self, machine_id: int) -> int:
        try:
            return self.machine_ids.index(machine_id)
        except ValueError:
            raise KeyError(f"no machine {machine_id}") from None

    def to_csv(self, path: str | Path) -> None:
        ids = self.machine_ids
        header = (["t"] + [f"delta_{i}" for i in ids] + [f"omega_{i}" for i in ids]
                  + [f"Pe_{i}" for i in ids] + ["stage"])
        with open(path, "w", newline="") as fh:
            fh.write("# units: t s, delta rad, omega pu, Pe pu\n")
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.t)):
                w.writerow([repr(float(self.t[k]))]
                           + [repr(float(x)) for x in self.delta[k]]
                           + [repr(float(x)) for x in self.omega[k]]
                           + [repr(float(x)) for x in self.pe[k]]
                           + [self.stage[k]])


def _rhs(net: ReducedNetwork, ws: float, delta: np.ndarray, omega: np.ndarray):
    acc = (net.Pm - electrical_power(net, delta)) / (net.M * ws)
    return ws * omega, acc


def _rk4_step(net, ws, delta, omega, h):
    k1d, k1w = _rhs(net, ws, delta, omega)
    k2d, k2w = _rhs(net, ws, delta + 0.5 * h * k1d, omega + 0.5 * h * k1w)
    k3d, k3w = _rhs(net, ws, delta + 0.5 * h * k2d, omega + 0.5 * h * k2w)
    k4d, k4w = _rhs(net, ws, delta + h * k3d, omega + h * k3w)
    return (delta + h / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d),
            omega + h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w))


def integrate(fault_net: ReducedNetwork, post_net: ReducedNetwork, delta0: np.ndarray, t_c: float,
              dt: float, t_end: float, omega_base: float, machine_ids=None) -> Trajectory:
    """Fixed-step RK4 through the fault-on and post-fault stages.

    The network switches at the first sample with ``t >= t_c``.
    """
    if not 0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01] s")
    if not t_end > t_c:
        raise ValueError("t_end must exceed the clearing time")
    steps = int(round(t_end / dt))
    clear = int(np.ceil(t_c / dt - 1e-9))
    n = len(delta0)
    t = np.arange(steps + 1) * dt
    delta = np.empty((steps + 1, n))
    omega = np.empty((steps + 1, n))
    delta[0] = delta0
    omega[0] = 0.0
    for k in range(steps):
        net = fault_net if k < clear else post_net
        d, w = _rk4_step(net, omega_base, delta[k], omega[k], dt)
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(w))):
            raise SimulationError(f"non-finite state at t = {t[k + 1]:.6f} s")
        delta[k + 1], omega[k + 1] = d, w

    stage = np.where(np.arange(steps + 1) < clear, FAULT_ON, POST_FAULT)
    pe = np.empty_like(delta)
    if clear > 0:
        pe[:clear] = electrical_power(fault_net, delta[:clear])
    pe[clear:] = electrical_power(post_net, delta[clear:])
    pe_cf = electrical_power(fault_net, delta[clear])
    ids = tuple(machine_ids) if machine_ids is not None else tuple(range(1, n + 1))
    return Trajectory(
        t=t, delta=delta, omega=omega, pe=pe, stage=stage, clearing_index=clear,
        M=post_net.M.copy(), Pm=post_net.Pm.copy(), omega_base=omega_base, machine_ids=ids, dt=dt,
        pe_clearing_fault=pe_cf, fault_net=fault_net, post_net=post_net,
    )


def simulate(solved: SolvedCase, scenario: FaultScenario, dt: float = 1e-3, t_end: float | None = None) -> Trajectory:
    """Simulate the scenario from the pre-fault equilibrium (delta0, omega = 0)."""
    if t_end is None:
        t_end = scenario.clearing_time + 2.0
    fault_net, post_net = reduced_networks(solved, scenario)
    return integrate(fault_net, post_net, solved.delta0, scenario.clearing_time, dt, t_end,
                     solved.omega_base, solved.machine_ids)


# --------------------------------------------------------------------------
# centre of inertia
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CoiTrajectory:
    t: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    power: np.ndarray  # P_COI = sum (Pm - Pe)
    M_T: float
    residual: np.ndarray  # M_T dw_COI/dt - P_COI, central differences (NaN at the ends)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# units: t s, delta_coi rad, omega_coi pu, P_coi pu\n")
            w = csv.writer(fh)
            w.writerow(["t", "delta_coi", "omega_coi", "P_coi"])
            for row in zip(self.t, self.delta, self.omega, self.power):
                w.writerow([repr(float(x)) for x in row])


def central_derivative(y: np.ndarray, t: np.ndarray, breaks=()) -> np.ndarray:
    """Central differences; NaN at the ends and at samples adjacent to ``breaks``."""
    out = np.full(y.shape, np.nan)
    span = t[2:] - t[:-2]
    if y.ndim > 1:
        span = span[:, None]
    out[1:-1] = (y[2:] - y[:-2]) / span
    for b in breaks:
        out[max(b - 1, 0): b + 1] = np.nan
    return out


def coi_trajectory(traj: Trajectory, M: np.ndarray | None = None) -> CoiTrajectory:
    M = traj.M if M is None else np.asarray(M, dtype=float)
    M_T = float(M.sum())
    d = traj.delta @ M / M_T
    w = traj.omega @ M / M_T
    p = np.sum(traj.Pm - traj.pe, axis=1)
    # the rotor equation carries ws because omega is stored in pu
    dw = central_derivative(w, traj.t, breaks=(traj.clearing_index,))
    residual = M_T * traj.omega_base * dw - p
    return CoiTrajectory(t=traj.t, delta=d, omega=w, power=p, M_T=M_T, residual=residual)


@dataclass(frozen=True)
class RelativeMotion:
    """Motion of one machine against the virtual COI machine."""

    t: np.ndarray
    theta: np.ndarray
    omega: np.ndarray  # pu
    f: np.ndarray  # Pm - Pe - (M_i / M_T) P_COI
    M: float


def svcs_relative(traj: Trajectory, machine_id: int) -> RelativeMotion:
    k = traj.index_of(machine_id)
    coi = coi_trajectory(traj)
    theta = traj.delta[:, k] - coi.delta
    w = traj.omega[:, k] - coi.omega
    f = traj.Pm[k] - traj.pe[:, k] - traj.M[k] / coi.M_T * coi.power
    return RelativeMotion(t=traj.t, theta=theta, omega=w, f=f, M=float(traj.M[k]))


def pair_diverged(traj: Trajectory, limit: float = 2 * np.pi) -> bool:
    """Time-domain instability test: some angle difference exceeds ``limit``."""
    spread = traj.delta.max(axis=1) - traj.delta.min(axis=1)
    return bool(np.any(spread > limit))
