"""Network cases, power flow and Kron-reduced internal-node networks.

Machines follow the classical model: a constant EMF behind the transient
reactance. Loads are turned into constant admittances at the solved
voltage, and every non-internal node is eliminated so that the electrical
power of machine ``i`` becomes

    Pe_i = E_i^2 G_ii + sum_j (C_ij sin(d_i - d_j) + D_ij cos(d_i - d_j))

with ``C_ij = E_i E_j B_ij`` and ``D_ij = E_i E_j G_ij``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy.sparse.csgraph import connected_components

BUS_TYPES = ("slack", "PV", "PQ")
STAGES = ("prefault", "fault-on", "postfault")
FAULT_SHUNT = 1e7  # pu admittance used for a metallic short


class CaseError(ValueError):
    """A case file or case object violates the schema or its invariants."""


class PowerFlowError(RuntimeError):
    """Newton-Raphson failed to converge."""


class TopologyError(RuntimeError):
    """The network splits into islands or the reduction is singular."""


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    v_set: float = 1.0
    p_load: float = 0.0
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0
    in_service: bool = True


@dataclass(frozen=True)
class Machine:
    bus: int
    M: float  # inertia coefficient 2H/ws, pu power * s^2 / rad
    xd_prime: float
    p_mech: float
    H: float | None = None


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    machines: tuple[Machine, ...]
    base_mva: float = 100.0
    frequency_hz: float = 60.0
    name: str = ""

    def __post_init__(self):
        validate_case(self)

    @property
    def n_machines(self) -> int:
        return len(self.machines)

    @property
    def omega_base(self) -> float:
        """Synchronous speed in rad/s."""
        return 2.0 * math.pi * self.frequency_hz

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def machine_buses(self) -> list[int]:
        return [m.bus for m in self.machines]

    def machine_position(self, machine_id: int) -> int:
        """Machines are addressed by the id of the bus they sit on."""
        try:
            return self.machine_buses.index(machine_id)
        except ValueError:
            raise KeyError(f"no machine at bus {machine_id}") from None

    def find_branch(self, from_bus: int, to_bus: int) -> int:
        for k, br in enumerate(self.branches):
            if {br.from_bus, br.to_bus} == {from_bus, to_bus}:
                return k
        raise CaseError(f"no branch between buses {from_bus} and {to_bus}")


def validate_case(case: NetworkCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise CaseError(f"buses: duplicate bus ids {dup}")
    for b in case.buses:
        if b.type not in BUS_TYPES:
            raise CaseError(f"buses[{b.id}].type: {b.type!r} not in {BUS_TYPES}")
    n_slack = sum(b.type == "slack" for b in case.buses)
    if n_slack != 1:
        raise CaseError(f"buses: need exactly one slack bus, found {n_slack}")
    known = set(ids)
    for k, br in enumerate(case.branches):
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseError(f"branches[{k}]: dangling reference to bus {br.from_bus}->{br.to_bus}")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branches[{k}]: endpoints must differ")
        if br.x <= 0:
            raise CaseError(f"branches[{k}].x: reactance must be > 0")
        if br.tap <= 0:
            raise CaseError(f"branches[{k}].tap: ratio must be > 0")
    if not case.machines:
        raise CaseError("machines: at least one machine required")
    seen = set()
    types = {b.id: b.type for b in case.buses}
    for k, m in enumerate(case.machines):
        if m.bus not in known:
            raise CaseError(f"machines[{k}].bus: dangling reference to bus {m.bus}")
        if m.bus in seen:
            raise CaseError(f"machines[{k}].bus: more than one machine on bus {m.bus}")
        seen.add(m.bus)
        if types[m.bus] == "PQ":
            raise CaseError(f"machines[{k}].bus: machine bus {m.bus} must be PV or slack")
        if m.xd_prime <= 0:
            raise CaseError(f"machines[{k}].xd_prime: reactance must be > 0")
        if m.M <= 0:
            raise CaseError(f"machines[{k}].M: inertia must be > 0")
    if case.base_mva <= 0 or case.frequency_hz <= 0:
        raise CaseError("base_mva and frequency_hz must be > 0")


def _require(rec: dict, key: str, where: str):
    if key not in rec:
        raise CaseError(f"{where}.{key}: missing required field")
    return rec[key]


def _number(rec: dict, key: str, where: str, default=None) -> float:
    val = rec.get(key, default)
    if val is None:
        raise CaseError(f"{where}.{key}: missing required field")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise CaseError(f"{where}.{key}: expected a number, got {val!r}")
    return float(val)


def case_from_dict(data: dict[str, Any]) -> NetworkCase:
    """Build a validated case from the JSON document layout."""
    if not isinstance(data, dict):
        raise CaseError("case: top level must be an object")
    for key in ("base_mva", "frequency_hz", "buses", "branches", "machines"):
        _require(data, key, "case")
    freq = _number(data, "frequency_hz", "case")
    ws = 2.0 * math.pi * freq

    buses = []
    for k, rec in enumerate(data["buses"]):
        where = f"buses[{k}]"
        bid = _require(rec, "id", where)
        if not isinstance(bid, int):
            raise CaseError(f"{where}.id: expected an integer")
        buses.append(Bus(
            id=bid,
            type=_require(rec, "type", where),
            v_set=_number(rec, "v_set", where, 1.0),
            p_load=_number(rec, "p_load", where, 0.0),
            q_load=_number(rec, "q_load", where, 0.0),
            g_shunt=_number(rec, "g_shunt", where, 0.0),
            b_shunt=_number(rec, "b_shunt", where, 0.0),
        ))

    branches = []
    for k, rec in enumerate(data["branches"]):
        where = f"branches[{k}]"
        branches.append(Branch(
            from_bus=_require(rec, "from", where),
            to_bus=_require(rec, "to", where),
            r=_number(rec, "r", where, 0.0),
            x=_number(rec, "x", where),
            b=_number(rec, "b", where, 0.0),
            tap=_number(rec, "tap", where, 1.0),
            in_service=bool(rec.get("in_service", True)),
        ))

    machines = []
    for k, rec in enumerate(data["machines"]):
        where = f"machines[{k}]"
        if "M" in rec:
            M, H = _number(rec, "M", where), None
        elif "H" in rec:
            H = _number(rec, "H", where)
            M = 2.0 * H / ws
        else:
            raise CaseError(f"{where}: one of M or H is required")
        machines.append(Machine(
            bus=_require(rec, "bus", where),
            M=M,
            H=H,
            xd_prime=_number(rec, "xd_prime", where),
            p_mech=_number(rec, "p_mech", where, 0.0),
        ))

    return NetworkCase(
        buses=tuple(buses),
        branches=tuple(branches),
        machines=tuple(machines),
        base_mva=_number(data, "base_mva", "case"),
        frequency_hz=freq,
        name=str(data.get("name", "")),
    )


def case_to_dict(case: NetworkCase) -> dict[str, Any]:
    out: dict[str, Any] = {"name": case.name, "base_mva": case.base_mva, "frequency_hz": case.frequency_hz}
    out["buses"] = []
    for b in case.buses:
        rec = {"id": b.id, "type": b.type, "v_set": b.v_set, "p_load": b.p_load, "q_load": b.q_load}
        if b.g_shunt or b.b_shunt:
            rec.update(g_shunt=b.g_shunt, b_shunt=b.b_shunt)
        out["buses"].append(rec)
    out["branches"] = []
    for br in case.branches:
        rec = {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b}
        if br.tap != 1.0:
            rec["tap"] = br.tap
        if not br.in_service:
            rec["in_service"] = False
        out["branches"].append(rec)
    out["machines"] = []
    for m in case.machines:
        rec = {"bus": m.bus}
        if m.H is not None:
            rec["H"] = m.H
        else:
            rec["M"] = m.M
        rec.update(xd_prime=m.xd_prime, p_mech=m.p_mech)
        out["machines"].append(rec)
    return out


def parse_case(path: str | Path) -> NetworkCase:
    """Read a JSON case file (see docs/case_schema.md)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: invalid JSON ({exc})") from exc
    return case_from_dict(data)


def bundled_case(name: str = "new_england_39") -> NetworkCase:
    return parse_case(Path(__file__).parent / "data" / f"{name}.json")


# --------------------------------------------------------------------------
# admittance matrices
# --------------------------------------------------------------------------

def _branch_stamp(Y: np.ndarray, f: int, t: int, br: Branch) -> None:
    ys = 1.0 / complex(br.r, br.x)
    bc = 1j * br.b / 2.0
    a = br.tap
    Y[f, f] += (ys + bc) / a**2
    Y[t, t] += ys + bc
    Y[f, t] -= ys / a
    Y[t, f] -= ys / a


def build_ybus(case: NetworkCase, skip: frozenset[int] = frozenset()) -> np.ndarray:
    """Bus admittance matrix with fixed shunts; taps sit on the from side."""
    idx = case.bus_index
    Y = np.zeros((len(case.buses), len(case.buses)), dtype=complex)
    for k, br in enumerate(case.branches):
        if br.in_service and k not in skip:
            _branch_stamp(Y, idx[br.from_bus], idx[br.to_bus], br)
    for b in case.buses:
        Y[idx[b.id], idx[b.id]] += complex(b.g_shunt, b.b_shunt)
    return Y


# --------------------------------------------------------------------------
# power flow
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SolvedCase:
    case: NetworkCase
    v: np.ndarray  # complex bus voltages, case.buses order
    E: np.ndarray  # internal EMF magnitudes
    delta0: np.ndarray  # initial rotor angles, rad
    p_mech: np.ndarray  # mechanical power per machine (slack machine from the solution)
    iterations: int = 0
    mismatch: float = 0.0

    @property
    def M(self) -> np.ndarray:
        return np.array([m.M for m in self.case.machines])

    @property
    def n(self) -> int:
        return self.case.n_machines

    @property
    def machine_ids(self) -> list[int]:
        return self.case.machine_buses

    @property
    def omega_base(self) -> float:
        return self.case.omega_base

    @property
    def s_injection(self) -> np.ndarray:
        """Net complex injection per bus at the solution."""
        Y = build_ybus(self.case)
        return self.v * np.conj(Y @ self.v)


def _mismatch(Y, v, p_spec, q_spec):
    s = v * np.conj(Y @ v)
    return p_spec - s.real, q_spec - s.imag


def solve_power_flow(case: NetworkCase, tol: float = 1e-10, max_iter: int = 50) -> SolvedCase:
    """Polar Newton-Raphson from a flat start (PV magnitudes at setpoint).

    Reactive limits are not enforced. The slack machine's mechanical power
    is replaced by the solved slack injection plus its local load.
    """
    idx = case.bus_index
    nb = len(case.buses)
    Y = build_ybus(case)
    gen_p = np.zeros(nb)
    for m in case.machines:
        gen_p[idx[m.bus]] += m.p_mech
    p_spec = gen_p - np.array([b.p_load for b in case.buses])
    q_spec = -np.array([b.q_load for b in case.buses])

    types = [b.type for b in case.buses]
    pv = [k for k, t in enumerate(types) if t == "PV"]
    pq = [k for k, t in enumerate(types) if t == "PQ"]
    slack = types.index("slack")
    ang = sorted(pv + pq)  # unknown angles
    mag = pq  # unknown magnitudes

    vm = np.ones(nb)
    for k, b in enumerate(case.buses):
        if b.type != "PQ":
            vm[k] = b.v_set
    va = np.zeros(nb)

    it = 0
    while True:
        v = vm * np.exp(1j * va)
        dp, dq = _mismatch(Y, v, p_spec, q_spec)
        F = np.concatenate([dp[ang], dq[mag]])
        norm = np.max(np.abs(F)) if F.size else 0.0
        if norm < tol:
            break
        if it >= max_iter or not np.isfinite(norm):
            raise PowerFlowError(f"power flow did not converge after {it} iterations (mismatch {norm:.3e} pu)")
        # complex derivatives (standard polar formulation)
        I = Y @ v
        dS_dva = 1j * np.diag(v) @ np.conj(np.diag(I) - Y @ np.diag(v))
        dS_dvm = np.diag(v) @ np.conj(Y @ np.diag(v / vm)) + np.diag(v / vm) @ np.diag(np.conj(I))
        J = np.block([
            [dS_dva.real[np.ix_(ang, ang)], dS_dvm.real[np.ix_(ang, mag)]],
            [dS_dva.imag[np.ix_(mag, ang)], dS_dvm.imag[np.ix_(mag, mag)]],
        ])
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular Jacobian at iteration {it}") from exc
        va[ang] += dx[: len(ang)]
        vm[mag] += dx[len(ang):]
        it += 1

    s_inj = v * np.conj(Y @ v)
    loads = np.array([complex(b.p_load, b.q_load) for b in case.buses])
    s_gen = s_inj + loads

    p_mech = np.array([m.p_mech for m in case.machines])
    E = np.zeros(case.n_machines)
    delta0 = np.zeros(case.n_machines)
    for k, m in enumerate(case.machines):
        b = idx[m.bus]
        if b == slack:
            p_mech[k] = s_gen[b].real
        current = np.conj(s_gen[b] / v[b])
        emf = v[b] + 1j * m.xd_prime * current
        E[k] = abs(emf)
        delta0[k] = np.angle(emf)
    return SolvedCase(case=case, v=v, E=E, delta0=delta0, p_mech=p_mech, iterations=it, mismatch=float(norm))


# --------------------------------------------------------------------------
# faults and reduction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FaultScenario:
    """Three-phase fault at t = 0 cleared at ``clearing_time``.

    Either ``bus`` is set (bus fault) or ``branch`` (index into the case's
    branch list) together with ``position`` in [0, 1] measured from the
    branch's from-bus. ``trip_branch`` opens that branch after clearing;
    ``None`` restores the pre-fault network.
    """

    clearing_time: float
    bus: int | None = None
    branch: int | None = None
    position: float = 0.5
    trip_branch: int | None = None

    def __post_init__(self):
        if not self.clearing_time >= 0 or not math.isfinite(self.clearing_time):
            raise ValueError("clearing_time must be a finite value >= 0")
        if (self.bus is None) == (self.branch is None):
            raise ValueError("give exactly one of bus or branch as fault location")
        if not 0.0 <= self.position <= 1.0:
            raise ValueError("position must lie in [0, 1]")

    def with_clearing(self, t_c: float) -> FaultScenario:
        return replace(self, clearing_time=t_c)

    def check(self, case: NetworkCase) -> None:
        if self.bus is not None and self.bus not in case.bus_index:
            raise CaseError(f"fault bus {self.bus} does not exist")
        nbr = len(case.branches)
        if self.branch is not None and not 0 <= self.branch < nbr:
            raise CaseError(f"fault branch index {self.branch} does not exist")
        if self.trip_branch is not None and not 0 <= self.trip_branch < nbr:
            raise CaseError(f"tripped branch index {self.trip_branch} does not exist")

    def describe(self) -> dict[str, Any]:
        out: dict[str, Any] = {"clearing_time": self.clearing_time}
        if self.bus is not None:
            out["bus"] = self.bus
        else:
            out.update(branch=self.branch, position=self.position)
        out["post_fault"] = "restore" if self.trip_branch is None else {"trip": self.trip_branch}
        return out


@dataclass(frozen=True)
class ReducedNetwork:
    C: np.ndarray
    D: np.ndarray
    G: np.ndarray  # driving-point conductances G_ii
    E: np.ndarray
    M: np.ndarray
    Pm: np.ndarray
    stage: str
    Y: np.ndarray = field(repr=False, default=None)  # reduced complex matrix

    @property
    def n(self) -> int:
        return len(self.E)

    @property
    def constant_power(self) -> np.ndarray:
        """E_i^2 G_ii."""
        return self.E**2 * self.G


def _load_admittance(solved: SolvedCase) -> np.ndarray:
    vm2 = np.abs(solved.v) ** 2
    s = np.array([complex(b.p_load, b.q_load) for b in solved.case.buses])
    return np.conj(s) / vm2


def _augmented_matrix(solved: SolvedCase, scenario: FaultScenario | None, stage: str) -> np.ndarray:
    """Bus + load + machine admittances; the last n rows/cols are internal nodes."""
    case = solved.case
    idx = case.bus_index
    nb = len(case.buses)
    n = case.n_machines

    skip: set[int] = set()
    extra_nodes = 0
    if stage == "fault-on" and scenario.branch is not None:
        skip.add(scenario.branch)
        extra_nodes = 1
    if stage == "postfault" and scenario.trip_branch is not None:
        skip.add(scenario.trip_branch)

    Ybus = build_ybus(case, frozenset(skip))
    Ybus[np.diag_indices(nb)] += _load_admittance(solved)

    size = nb + extra_nodes + n
    Y = np.zeros((size, size), dtype=complex)
    Y[:nb, :nb] = Ybus

    if stage == "fault-on":
        if scenario.bus is not None:
            f = idx[scenario.bus]
            Y[f, f] += FAULT_SHUNT
        else:
            br = case.branches[scenario.branch]
            lam = scenario.position
            f, t, mid = idx[br.from_bus], idx[br.to_bus], nb
            # split the branch at the fault point; the tap stays on the from side
            if lam > 0:
                _branch_stamp(Y, f, mid, Branch(br.from_bus, -1, br.r * lam, br.x * lam, br.b * lam, br.tap))
            else:
                Y[f, mid] -= FAULT_SHUNT
                Y[mid, f] -= FAULT_SHUNT
                Y[f, f] += FAULT_SHUNT
                Y[mid, mid] += FAULT_SHUNT
            if lam < 1:
                rest = 1.0 - lam
                _branch_stamp(Y, mid, t, Branch(-1, br.to_bus, br.r * rest, br.x * rest, br.b * rest))
            else:
                Y[t, mid] -= FAULT_SHUNT
                Y[mid, t] -= FAULT_SHUNT
                Y[t, t] += FAULT_SHUNT
                Y[mid, mid] += FAULT_SHUNT
            Y[mid, mid] += FAULT_SHUNT

    off = nb + extra_nodes
    for k, m in enumerate(case.machines):
        y = 1.0 / (1j * m.xd_prime)
        b = idx[m.bus]
        g = off + k
        Y[b, b] += y
        Y[g, g] += y
        Y[b, g] -= y
        Y[g, b] -= y
    return Y


def _check_connected(Y: np.ndarray) -> None:
    adj = (np.abs(Y) > 0).astype(int)
    np.fill_diagonal(adj, 0)
    count, _ = connected_components(adj, directed=False)
    if count > 1:
        raise TopologyError(f"network splits into {count} islands")


def build_reduced(solved: SolvedCase, scenario: FaultScenario | None, stage: str) -> ReducedNetwork:
    """Kron-reduce to the machine internal nodes for one network stage."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    if stage != "prefault":
        if scenario is None:
            raise ValueError(f"stage {stage!r} needs a fault scenario")
        scenario.check(solved.case)
    if stage == "postfault" and scenario.trip_branch is None:
        stage_key = "prefault"
    else:
        stage_key = stage

    Y = _augmented_matrix(solved, scenario, stage_key)
    _check_connected(Y)
    n = solved.n
    k = Y.shape[0] - n
    Ybb, Ybg, Ygb, Ygg = Y[:k, :k], Y[:k, k:], Y[k:, :k], Y[k:, k:]
    try:
        Yred = Ygg - Ygb @ np.linalg.solve(Ybb, Ybg)
    except np.linalg.LinAlgError as exc:
        raise TopologyError("singular reduction") from exc
    if not np.all(np.isfinite(Yred)):
        raise TopologyError("singular reduction")
    # reciprocal network: enforce exact symmetry lost to round-off
    Yred = 0.5 * (Yred + Yred.T)

    E = solved.E
    EE = np.outer(E, E)
    C = EE * Yred.imag
    D = EE * Yred.real
    np.fill_diagonal(C, 0.0)
    np.fill_diagonal(D, 0.0)
    return ReducedNetwork(
        C=C, D=D, G=np.diag(Yred).real.copy(), E=E.copy(), M=solved.M, Pm=solved.p_mech.copy(),
        stage=stage, Y=Yred,
    )


def reduced_networks(solved: SolvedCase, scenario: FaultScenario) -> tuple[ReducedNetwork, ReducedNetwork]:
    """(fault-on, post-fault) pair used by the simulator."""
    return build_reduced(solved, scenario, "fault-on"), build_reduced(solved, scenario, "postfault")


def electrical_distance(solved: SolvedCase, bus: int) -> np.ndarray:
    """Thevenin impedance magnitude between ``bus`` and each machine's internal node."""
    Y = _augmented_matrix(solved, None, "prefault")
    Z = np.linalg.inv(Y)
    nb = len(solved.case.buses)
    f = solved.case.bus_index[bus]
    g = nb + np.arange(solved.n)
    return np.abs(Z[f, f] + Z[g, g] - 2 * Z[f, g])
