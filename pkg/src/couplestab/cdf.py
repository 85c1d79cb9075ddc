"""Read-only converter from IEEE Common Data Format to a :class:`NetworkCase`.

CDF carries the load-flow data only, so machine dynamics (``H`` and
``xd_prime`` per generator bus) are supplied separately. Bus cards are read
by column for the number and name, then by whitespace, which tolerates the
small column drifts found in circulated files.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping

from .netmodel import Branch, Bus, CaseError, Machine, NetworkCase

CDF_BUS_TYPES = {0: "PQ", 1: "PQ", 2: "PV", 3: "slack"}


def _section(lines: list[str], start: int) -> tuple[list[str], int]:
    body = []
    k = start
    while k < len(lines):
        line = lines[k]
        if line.strip().startswith("-999"):
            return body, k + 1
        if line.strip():
            body.append(line)
        k += 1
    raise CaseError("CDF: section not terminated by -999")


def _find(lines: list[str], tag: str) -> int:
    for k, line in enumerate(lines):
        if line.upper().startswith(tag):
            return k
    raise CaseError(f"CDF: no '{tag}' section")


def read_cdf(text: str, machines: Mapping[int, Mapping[str, float]], frequency_hz: float = 60.0,
             name: str = "") -> NetworkCase:
    """Parse CDF ``text``; ``machines`` maps generator bus id to ``{"H": ..., "xd_prime": ...}``.

    Every PV and slack bus needs an entry. Mechanical power is the CDF
    generation MW over the base. Phase-shifting transformers are rejected.
    """
    lines = text.splitlines()
    if not lines:
        raise CaseError("CDF: empty input")
    try:
        base = float(lines[0][31:37])
    except ValueError:
        raise CaseError("CDF: cannot read the MVA base from the title card") from None
    if base <= 0:
        raise CaseError("CDF: MVA base must be positive")

    bus_cards, _ = _section(lines, _find(lines, "BUS DATA FOLLOWS") + 1)
    buses, gens = [], {}
    for card in bus_cards:
        try:
            bid = int(card[:4])
            f = card[18:].split()
            btype = int(f[2])
            v_final, pl, ql, pg = float(f[3]), float(f[5]), float(f[6]), float(f[7])
            v_des, g, b = float(f[10]), float(f[13]), float(f[14])
        except (ValueError, IndexError):
            raise CaseError(f"CDF: malformed bus card {card[:20]!r}") from None
        if btype not in CDF_BUS_TYPES:
            raise CaseError(f"CDF: bus {bid} has unknown type {btype}")
        kind = CDF_BUS_TYPES[btype]
        buses.append(Bus(id=bid, type=kind, v_set=v_des if v_des > 0 else v_final,
                         p_load=pl / base, q_load=ql / base, g_shunt=g, b_shunt=b))
        if kind != "PQ":
            gens[bid] = pg / base

    branch_cards, _ = _section(lines, _find(lines, "BRANCH DATA FOLLOWS") + 1)
    branches = []
    for card in branch_cards:
        f = card.split()
        try:
            fb, tb = int(f[0]), int(f[1])
            r, x, bc = float(f[6]), float(f[7]), float(f[8])
            ratio = float(f[14]) if len(f) > 14 else 0.0
            shift = float(f[15]) if len(f) > 15 else 0.0
        except (ValueError, IndexError):
            raise CaseError(f"CDF: malformed branch card {card[:20]!r}") from None
        if shift != 0.0:
            raise CaseError(f"CDF: branch {fb}-{tb} is phase shifting; not supported")
        branches.append(Branch(from_bus=fb, to_bus=tb, r=r, x=x, b=bc, tap=ratio if ratio > 0 else 1.0))

    ws = 2.0 * math.pi * frequency_hz
    machs = []
    for bid, pg in gens.items():
        if bid not in machines:
            raise CaseError(f"CDF: no machine data (H, xd_prime) for generator bus {bid}")
        rec = machines[bid]
        try:
            H, xd = float(rec["H"]), float(rec["xd_prime"])
        except KeyError as exc:
            raise CaseError(f"machine data for bus {bid}: missing {exc.args[0]}") from None
        machs.append(Machine(bus=bid, M=2.0 * H / ws, H=H, xd_prime=xd, p_mech=pg))
    extra = set(machines) - set(gens)
    if extra:
        raise CaseError(f"machine data given for non-generator buses {sorted(extra)}")

    return NetworkCase(buses=tuple(buses), branches=tuple(branches), machines=tuple(machs),
                       base_mva=base, frequency_hz=frequency_hz, name=name)


def parse_cdf(path: str | Path, machines: Mapping[int, Mapping[str, float]], frequency_hz: float = 60.0) -> NetworkCase:
    path = Path(path)
    return read_cdf(path.read_text(), machines, frequency_hz, name=path.stem)
