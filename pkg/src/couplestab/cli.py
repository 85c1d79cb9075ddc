"""Command-line front end.

    couplestab assess        --config case1.json
    couplestab cct           --bus 38 --t-lo 0.05 --t-hi 0.6 --method both
    couplestab export pair   --bus 34 --clearing-time 0.23 --pair 34_30
    couplestab validate-case my_case.json

Settings come from built-in defaults, then a JSON (or TOML) config file,
then command-line flags. Exit status of ``assess``: 0 stable or critical,
1 unstable, 2 error. ``cct`` exits 3 when the bracket does not straddle
the CCT.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from . import predictor as pred
from .assess import (PROPOSED, TIME_DOMAIN, UNSTABLE, AssessConfig, BracketError, analyse_couple, assess,
                     cct_search)
from .cdf import parse_cdf
from .dynamics import coi_trajectory, simulate
from .netmodel import FaultScenario, bundled_case, parse_case, solve_power_flow
from .pairs import pair_series

log = logging.getLogger("couplestab")

OUTPUT_ENV = "COUPLESTAB_OUTPUT_DIR"
EXIT_STABLE, EXIT_UNSTABLE, EXIT_ERROR, EXIT_BRACKET = 0, 1, 2, 3
BUNDLED_PREFIX = "bundled:"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    case: str = BUNDLED_PREFIX + "new_england_39"
    bus: int | None = None
    branch: int | None = None
    position: float = 0.5
    trip_branch: int | None = None
    clearing_time: float | None = None
    dt: float = 1e-3
    horizon: float = 2.0
    window_spacing: float = 0.01
    window_count: int = 10
    sigma: float = pred.DEFAULT_SIGMA
    scan_intervals: int = pred.DEFAULT_SCAN
    omega_cthr: float = 0.002
    omega_sethr: float = 0.004
    strategy: str = "auto"
    remote_machine: int | None = None
    output_dir: str | None = None
    formats: tuple[str, ...] = ("json", "csv")
    deterministic: bool = False
    t_lo: float = 0.05
    t_hi: float = 0.6
    resolution: float = 0.01
    method: str = PROPOSED

    def __post_init__(self):
        bad = set(self.formats) - {"json", "csv"}
        if bad:
            raise ConfigError(f"formats: unknown {sorted(bad)}")
        if self.method not in (PROPOSED, TIME_DOMAIN, "both"):
            raise ConfigError("method must be proposed, time-domain or both")
        if self.clearing_time is not None and not (math.isfinite(self.clearing_time) and self.clearing_time >= 0):
            raise ConfigError("clearing_time must be >= 0")
        try:
            self.assess_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def assess_config(self) -> AssessConfig:
        return AssessConfig(dt=self.dt, horizon=self.horizon, window_spacing=self.window_spacing,
                            window_count=self.window_count, sigma=self.sigma, scan_intervals=self.scan_intervals,
                            omega_cthr=self.omega_cthr, omega_sethr=self.omega_sethr, strategy=self.strategy,
                            remote_machine=self.remote_machine)

    def scenario(self, clearing_time: float | None = None) -> FaultScenario:
        t_c = self.clearing_time if clearing_time is None else clearing_time
        if t_c is None:
            raise ConfigError("clearing_time is required")
        if (self.bus is None) == (self.branch is None):
            raise ConfigError("give exactly one of bus or branch as the fault location")
        return FaultScenario(t_c, bus=self.bus, branch=self.branch, position=self.position,
                             trip_branch=self.trip_branch)

    def out_dir(self) -> Path:
        d = self.output_dir or os.environ.get(OUTPUT_ENV) or "."
        p = Path(d)
        p.mkdir(parents=True, exist_ok=True)
        return p


# config-file layout: flat keys plus a few nested groups
_NESTED = {
    "scenario": {"bus", "branch", "position", "trip_branch", "clearing_time"},
    "window": {"spacing": "window_spacing", "count": "window_count"},
    "thresholds": {"omega_cthr", "omega_sethr"},
    "cct": {"t_lo", "t_hi", "resolution", "method"},
}
_FIELDS = {f.name for f in fields(RunConfig)}


def _flatten(doc: dict[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, val in doc.items():
        if key in _NESTED:
            if not isinstance(val, dict):
                raise ConfigError(f"{key}: expected a table")
            names = _NESTED[key]
            for sub, v in val.items():
                if sub not in names:
                    raise ConfigError(f"{key}.{sub}: unknown key")
                out[names[sub] if isinstance(names, dict) else sub] = v
        elif key in _FIELDS:
            out[key] = val
        else:
            raise ConfigError(f"{key}: unknown key")
    if "formats" in out:
        out["formats"] = tuple(out["formats"])
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            try:
                import tomli as tomllib
            except ModuleNotFoundError:
                raise ConfigError("TOML configs need Python 3.11+ or the tomli package") from None
        doc = tomllib.loads(text)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    flat = _flatten(doc)
    # relative case paths are taken relative to the config file
    case = flat.get("case")
    if isinstance(case, str) and not case.startswith(BUNDLED_PREFIX) and not Path(case).is_absolute():
        flat["case"] = str(path.parent / case)
    return flat


def build_config(args: argparse.Namespace) -> RunConfig:
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None and v is not False:
            values[name] = v
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_solved(cfg: RunConfig):
    if cfg.case.startswith(BUNDLED_PREFIX):
        case = bundled_case(cfg.case[len(BUNDLED_PREFIX):])
    else:
        case = parse_case(cfg.case)
    return solve_power_flow(case)


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def write_json(path: Path, doc: dict, cfg: RunConfig) -> None:
    doc = dict(doc)
    if not cfg.deterministic:
        doc["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _stem(cfg: RunConfig, scenario: FaultScenario) -> str:
    loc = f"bus{scenario.bus}" if scenario.bus is not None else f"branch{scenario.branch}"
    return f"{loc}_tc{scenario.clearing_time:.3f}"


def _parse_pair(text: str) -> tuple[int, int]:
    try:
        i, j = (int(x) for x in text.split("_"))
    except ValueError:
        raise ConfigError(f"pair must look like 34_30, got {text!r}") from None
    return i, j


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_assess(cfg: RunConfig) -> int:
    solved = load_solved(cfg)
    sc = cfg.scenario()
    a = assess(solved, sc, cfg.assess_config())
    out = cfg.out_dir()
    stem = _stem(cfg, sc)
    report = a.report(with_timings=not cfg.deterministic)
    if "json" in cfg.formats:
        write_json(out / f"assess_{stem}.json", report, cfg)
    if "csv" in cfg.formats:
        for an in a.analyses:
            an.series.to_csv(out / f"kimbark_{stem}_{an.margin.name}.csv")
    print(f"verdict: {a.verdict}")
    if a.system.lead is not None:
        print(f"lead couple: {a.system.lead}  eta = {a.system.severity:.4g}")
    for an in a.analyses:
        m = an.margin
        print(f"  {m.name:>7}  {m.kind}  PCMDLP {math.degrees(m.pcmdlp):7.2f} deg  eta {m.eta:9.4g}  {m.verdict}")
    if a.couples.empty:
        print("no couples, system undisturbed")
    return EXIT_UNSTABLE if a.verdict == UNSTABLE else EXIT_STABLE


def cmd_cct(cfg: RunConfig) -> int:
    solved = load_solved(cfg)
    sc = cfg.scenario(clearing_time=cfg.t_lo)
    methods = (PROPOSED, TIME_DOMAIN) if cfg.method == "both" else (cfg.method,)
    acfg = cfg.assess_config()
    results = {}
    bracket_failed = False
    for m in methods:
        try:
            r = cct_search(solved, sc, cfg.t_lo, cfg.t_hi, cfg.resolution, m, acfg)
        except BracketError as exc:
            bracket_failed = True
            results[m] = {"error": "bracket", "message": str(exc)}
            print(f"{m}: bracket error: {exc}", file=sys.stderr)
            continue
        results[m] = r.report()
        print(f"{m}: CCT = {r.cct:.2f} s (unstable at {r.unstable:.2f} s)")
    loc = {k: v for k, v in sc.describe().items() if k != "clearing_time"}
    stem = f"bus{sc.bus}" if sc.bus is not None else f"branch{sc.branch}"
    if "json" in cfg.formats:
        write_json(cfg.out_dir() / f"cct_{stem}.json", {"fault": loc, "results": results}, cfg)
    return EXIT_BRACKET if bracket_failed else EXIT_STABLE


def cmd_export(cfg: RunConfig, what: str, pair: str | None) -> int:
    solved = load_solved(cfg)
    sc = cfg.scenario()
    acfg = cfg.assess_config()
    traj = simulate(solved, sc, acfg.dt, sc.clearing_time + acfg.horizon)
    out = cfg.out_dir()
    stem = _stem(cfg, sc)
    if what == "trajectory":
        path = out / f"trajectory_{stem}.csv"
        traj.to_csv(path)
    elif what == "coi":
        path = out / f"coi_{stem}.csv"
        coi_trajectory(traj).to_csv(path)
    elif what in ("pair", "fit"):
        if pair is None:
            raise ConfigError(f"export {what} needs --pair")
        i, j = _parse_pair(pair)
        if what == "pair":
            path = out / f"kimbark_{stem}_{i}_{j}.csv"
            pair_series(traj, i, j).to_csv(path)
        else:
            an = analyse_couple(traj, (i, j), acfg)
            path = out / f"fit_{stem}_{i}_{j}.json"
            write_json(path, fit_document(an), cfg)
    else:
        raise ConfigError(f"unknown export kind {what!r}")
    print(path)
    return EXIT_STABLE


def fit_document(an) -> dict:
    """Window samples next to both fitted curves, for overlay plots."""
    w, ps = an.window, an.series
    upto = max(math.pi, float(w.delta.max()))
    d, q = pred.curve_samples(an.qr, ps.delta_c, upto)
    _, s = pred.curve_samples(an.sin, ps.delta_c, upto)
    return {
        "couple": an.margin.name,
        "units": {"delta": "rad", "pe": "pu", "t": "s"},
        "Pm": ps.Pm,
        "delta_c": ps.delta_c,
        "window": {"t": w.t, "delta": w.delta, "pe": w.pe},
        "qr": {**an.qr.as_dict(), "rms": pred.window_rms(an.qr, w), "window_fit": an.qr(w.delta)},
        "sin": {**an.sin.as_dict(), "rms": pred.window_rms(an.sin, w), "window_fit": an.sin(w.delta)},
        "curve": {"delta": d, "qr": q, "sin": s},
        "class": an.margin.kind,
        "pcmdlp": an.margin.pcmdlp,
        "eta": an.margin.eta,
    }


def cmd_validate_case(path: str, machines: str | None, frequency: float) -> int:
    if machines is not None:
        data = json.loads(Path(machines).read_text())
        case = parse_cdf(path, {int(k): v for k, v in data.items()}, frequency)
    else:
        case = parse_case(path)
    solved = solve_power_flow(case)
    print(f"{case.name or path}: {len(case.buses)} buses, {len(case.branches)} branches, "
          f"{case.n_machines} machines")
    print(f"power flow converged in {solved.iterations} iterations (mismatch {solved.mismatch:.2e} pu)")
    for mid, d in zip(solved.machine_ids, solved.delta0):
        print(f"  machine {mid:>4}: delta0 = {math.degrees(d):8.3f} deg")
    return EXIT_STABLE


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or TOML run configuration")
    p.add_argument("--case", help="case file, or bundled:<name>")
    p.add_argument("--bus", type=int, help="faulted bus id")
    p.add_argument("--branch", type=int, help="faulted branch index")
    p.add_argument("--position", type=float, help="fault position along the branch, 0..1")
    p.add_argument("--trip-branch", dest="trip_branch", type=int, help="branch opened at clearing")
    p.add_argument("--clearing-time", dest="clearing_time", type=float, help="s")
    p.add_argument("--dt", type=float, help="integration step, s")
    p.add_argument("--horizon", type=float, help="simulated time after clearing, s")
    p.add_argument("--window-spacing", dest="window_spacing", type=float)
    p.add_argument("--window-count", dest="window_count", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--omega-cthr", dest="omega_cthr", type=float)
    p.add_argument("--omega-sethr", dest="omega_sethr", type=float)
    p.add_argument("--strategy", choices=("auto", "small", "large"))
    p.add_argument("--remote-machine", dest="remote_machine", type=int)
    p.add_argument("--output-dir", dest="output_dir", help=f"defaults to ${OUTPUT_ENV} or the cwd")
    p.add_argument("--deterministic", action="store_true", help="omit timestamps and timings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="couplestab", description="Couple-machine transient stability assessment")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assess", help="assess one fault scenario")
    _common(p)

    p = sub.add_parser("cct", help="critical clearing time by bisection")
    _common(p)
    p.add_argument("--t-lo", dest="t_lo", type=float)
    p.add_argument("--t-hi", dest="t_hi", type=float)
    p.add_argument("--resolution", type=float)
    p.add_argument("--method", choices=(PROPOSED, TIME_DOMAIN, "both"))

    p = sub.add_parser("export", help="write trajectory, pair, coi or fit data")
    p.add_argument("what", choices=("trajectory", "pair", "coi", "fit"))
    p.add_argument("--pair", help="couple as i_j, e.g. 34_30")
    _common(p)

    p = sub.add_parser("validate-case", help="check a case file and solve its power flow")
    p.add_argument("path")
    p.add_argument("--cdf-machines", dest="cdf_machines",
                   help="treat PATH as IEEE CDF; JSON file mapping bus id to {H, xd_prime}")
    p.add_argument("--frequency", type=float, default=60.0, help="Hz, for CDF input")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "validate-case":
            return cmd_validate_case(args.path, args.cdf_machines, args.frequency)
        cfg = build_config(args)
        if args.command == "assess":
            return cmd_assess(cfg)
        if args.command == "cct":
            return cmd_cct(cfg)
        return cmd_export(cfg, args.what, args.pair)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
