"""Couple identification, margins, end-to-end assessment and CCT search."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import predictor as pred
from .dynamics import Trajectory, pair_diverged, simulate
from .netmodel import FaultScenario, SolvedCase, electrical_distance
from .pairs import PairSeries, acceleration_area, pair_series

log = logging.getLogger(__name__)

STABLE, CRITICAL, UNSTABLE = "stable", "critical", "unstable"
CRITICAL_BAND = 1e-3
SMALL, LARGE = "small", "large"


class AssessmentError(RuntimeError):
    pass


class BracketError(AssessmentError):
    """Both ends of a CCT bracket give the same verdict."""


@dataclass(frozen=True)
class AssessConfig:
    dt: float = 1e-3
    horizon: float = 2.0  # simulated time after clearing, s
    window_spacing: float = 0.01
    window_count: int = 10
    sigma: float = pred.DEFAULT_SIGMA
    scan_intervals: int = pred.DEFAULT_SCAN
    omega_cthr: float = 0.002
    omega_sethr: float = 0.004
    strategy: str = "auto"  # "small", "large" or "auto"
    remote_machine: int | None = None
    small_system_limit: int = 30

    def __post_init__(self):
        if not 0 < self.dt <= 0.01:
            raise ValueError("dt must lie in (0, 0.01]")
        if self.horizon <= self.window_spacing * self.window_count:
            raise ValueError("horizon must cover the sampling window")
        if self.window_count < pred.MIN_SAMPLES:
            raise ValueError(f"window_count must be >= {pred.MIN_SAMPLES}")
        if not 0 < self.sigma <= 1:
            raise ValueError("sigma must lie in (0, 1]")
        if self.scan_intervals < 100:
            raise ValueError("scan_intervals must be >= 100")
        if self.strategy not in ("auto", SMALL, LARGE):
            raise ValueError("strategy must be auto, small or large")
        if self.omega_cthr <= 0 or self.omega_sethr <= 0:
            raise ValueError("thresholds must be positive")

    def resolve_strategy(self, n_machines: int) -> str:
        if self.strategy != "auto":
            return self.strategy
        return SMALL if n_machines <= self.small_system_limit else LARGE


# --------------------------------------------------------------------------
# couple identification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CoupleSet:
    candidates: tuple[tuple[int, int], ...]
    couples: tuple[tuple[int, int], ...]
    threshold: float
    strategy: str
    q: int = 0
    remote: int | None = None
    runaway: tuple[tuple[int, int], ...] = ()  # subset of couples still accelerating after clearing

    @property
    def empty(self) -> bool:
        return not self.couples

    @property
    def status(self) -> str:
        return "no couples" if self.empty else "ok"

    def names(self, which: str = "couples") -> list[str]:
        return [f"{i}_{j}" for i, j in getattr(self, which)]


def signature_ok(ps: PairSeries, window: pred.SampleWindow) -> bool:
    """Accelerating-then-decelerating check over the sampling window."""
    return ps.omega_c > 0 and float(np.mean(window.pe - ps.Pm)) > 0


def is_runaway(ps: PairSeries, window: pred.SampleWindow) -> bool:
    """Separating at clearing, net-accelerating over the window, and past the curve's peak.

    Pe_ij falling while delta_ij grows, or a clearing angle beyond pi, means the pair is already on the far
    side of its power-angle curve: there is no deceleration area left to
    predict, so the pair is kept as an unstable couple. Pairs still on the
    rising side fail the signature and are left out.
    """
    falling = window.delta[-1] > window.delta[0] and window.pe[-1] < window.pe[0]
    past = falling or ps.delta_c >= math.pi
    return (ps.omega_c > 0 and float(np.mean(window.pe - ps.Pm)) <= 0 and past
            and acceleration_area(ps) > 0)


def _window(ps: PairSeries, cfg: AssessConfig) -> pred.SampleWindow:
    return pred.collect_window(ps, float(ps.t[ps.clearing_index]), cfg.window_spacing, cfg.window_count)


def _filter(traj: Trajectory, candidates, cfg: AssessConfig):
    keep, runaway = [], []
    for i, j in candidates:
        ps = pair_series(traj, i, j)
        w = _window(ps, cfg)
        if signature_ok(ps, w):
            keep.append((i, j))
        elif is_runaway(ps, w):
            keep.append((i, j))
            runaway.append((i, j))
    return tuple(keep), tuple(runaway)


def leading_pair_count(speeds: Sequence[float], threshold: float) -> int:
    """Number q of leading test pairs (s_k, s_{N+1-k}) whose speed gap reaches ``threshold``.

    Speeds must already be sorted in descending order. Gaps shrink with k,
    so q is the last k whose gap is still >= threshold.
    """
    w = np.asarray(speeds, dtype=float)
    N = len(w)
    q = 0
    for k in range(N // 2):
        if w[k] - w[N - 1 - k] >= threshold:
            q = k + 1
        else:
            break
    return q


def identify_couples_small(traj: Trajectory, cfg: AssessConfig = AssessConfig()) -> CoupleSet:
    w = traj.omega[traj.clearing_index]
    order = sorted(range(traj.n), key=lambda k: (-w[k], k))
    q = leading_pair_count(w[order], cfg.omega_cthr)
    ids = traj.machine_ids
    top = [ids[k] for k in order[:q]]
    bottom = [ids[k] for k in order[len(order) - q:]][::-1]
    candidates = tuple((i, j) for i in top for j in bottom)
    couples, runaway = _filter(traj, candidates, cfg)
    return CoupleSet(candidates, couples, cfg.omega_cthr, SMALL, q=q, runaway=runaway)


def pick_remote_machine(traj: Trajectory, solved: SolvedCase, fault_bus: int) -> int:
    """Among the electrically farther half of machines, the one with the smallest |w| at clearing."""
    dist = electrical_distance(solved, fault_bus)
    far = np.argsort(-dist)[: max(1, math.ceil(traj.n / 2))]
    w = np.abs(traj.omega[traj.clearing_index])
    k = min(far, key=lambda m: (w[m], m))
    return traj.machine_ids[k]


def identify_couples_large(traj: Trajectory, cfg: AssessConfig = AssessConfig(), remote: int | None = None,
                           solved: SolvedCase | None = None, fault_bus: int | None = None) -> CoupleSet:
    w = traj.omega[traj.clearing_index]
    if remote is None:
        remote = cfg.remote_machine
    if remote is None:
        if solved is None or fault_bus is None:
            raise ValueError("a remote machine or the solved case and fault bus are required")
        remote = pick_remote_machine(traj, solved, fault_bus)
    r = traj.index_of(remote)
    if w[r] > cfg.omega_sethr:
        # it would belong to the disturbed set itself
        raise AssessmentError(f"remote machine {remote} is disturbed (w = {w[r]:.4g} pu)")
    disturbed = [traj.machine_ids[k] for k in np.argsort(-w, kind="stable")
                 if w[k] > cfg.omega_sethr and k != r]
    candidates = tuple((i, remote) for i in disturbed)
    couples, runaway = _filter(traj, candidates, cfg)
    return CoupleSet(candidates, couples, cfg.omega_sethr, LARGE, q=len(disturbed), remote=remote,
                     runaway=runaway)


# --------------------------------------------------------------------------
# margins
# --------------------------------------------------------------------------

def verdict_of(eta: float, band: float = CRITICAL_BAND) -> str:
    if abs(eta) <= band:
        return CRITICAL
    return STABLE if eta > 0 else UNSTABLE


@dataclass(frozen=True)
class CoupleMargin:
    pair: tuple[int, int]
    eta: float
    a_acc: float
    a_dec_pred: float
    kind: str
    pcmdlp: float
    verdict: str
    source: str = "qr"
    degenerate: bool = False

    @property
    def name(self) -> str:
        return f"{self.pair[0]}_{self.pair[1]}"


def couple_margin(pair: tuple[int, int], a_acc: float, a_dec_pred: float, prediction: pred.Prediction) -> CoupleMargin:
    if not a_acc > 0:
        raise AssessmentError(f"pair {pair[0]}_{pair[1]} never accelerated (A_ACC = {a_acc:.3g}); not a couple")
    eta = (a_dec_pred - a_acc) / a_acc
    if prediction.kind == pred.A4:
        eta = max(0.0, eta)
    return CoupleMargin(pair, float(eta), float(a_acc), float(a_dec_pred), prediction.kind, float(prediction.pcmdlp),
                        verdict_of(eta), prediction.source, prediction.degenerate)


@dataclass(frozen=True)
class CoupleAnalysis:
    """Everything computed for one couple."""

    margin: CoupleMargin
    window: pred.SampleWindow
    qr: pred.QrFit
    sin: pred.SinFit
    prediction: pred.Prediction
    series: PairSeries = field(repr=False)


def analyse_couple(traj: Trajectory, pair: tuple[int, int], cfg: AssessConfig = AssessConfig(),
                   runaway: bool = False) -> CoupleAnalysis:
    """Window fits, classification and margin of one couple.

    A runaway couple (see :func:`is_runaway`) is treated like a clearing
    angle beyond pi: no deceleration area is predicted and the margin is -1.
    """
    ps = pair_series(traj, *pair)
    w = _window(ps, cfg)
    qr = pred.fit_qr(w, cfg.sigma)
    sn = pred.fit_sin(w)
    if runaway:
        p = pred.Prediction(pred.A1, ps.delta_c, "runaway", degenerate=True)
    else:
        p = pred.classify(qr, sn, ps.Pm, ps.delta_c, cfg.scan_intervals)
    fit = sn if p.source == "sin" else qr
    if p.degenerate:
        a_dec = 0.0
    else:
        a_dec = pred.predicted_dec_area(fit, ps.Pm, ps.delta_c, p.pcmdlp, cfg.scan_intervals)
    m = couple_margin(pair, acceleration_area(ps), a_dec, p)
    return CoupleAnalysis(m, w, qr, sn, p, ps)


@dataclass(frozen=True)
class SystemMargin:
    margins: tuple[CoupleMargin, ...]
    verdict: str
    lead: str | None
    severity: float | None

    @property
    def vector(self) -> list[float]:
        return [m.eta for m in self.margins]


def system_margin(margins: Iterable[CoupleMargin], band: float = CRITICAL_BAND) -> SystemMargin:
    """Unstable if any couple is; critical if the worst sits in the band; stable otherwise.

    An empty margin list means no couples formed: the system is reported
    undisturbed (stable).
    """
    margins = tuple(margins)
    if not margins:
        return SystemMargin((), STABLE, None, None)
    lead = min(margins, key=lambda m: m.eta)
    if any(m.eta < -band for m in margins):
        verdict = UNSTABLE
    elif abs(lead.eta) <= band:
        verdict = CRITICAL
    else:
        verdict = STABLE
    return SystemMargin(margins, verdict, lead.name, lead.eta)


# --------------------------------------------------------------------------
# end-to-end
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Assessment:
    scenario: FaultScenario
    config: AssessConfig
    couples: CoupleSet
    analyses: tuple[CoupleAnalysis, ...]
    system: SystemMargin
    trajectory: Trajectory = field(repr=False)
    timings: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return self.system.verdict

    def margin(self, name: str) -> CoupleMargin:
        for a in self.analyses:
            if a.margin.name == name:
                return a.margin
        raise KeyError(name)

    def report(self, with_timings: bool = True) -> dict:
        out = {
            "scenario": self.scenario.describe(),
            "config": asdict(self.config),
            "couples": {
                "strategy": self.couples.strategy,
                "threshold": self.couples.threshold,
                "q": self.couples.q,
                "remote": self.couples.remote,
                "candidates": self.couples.names("candidates"),
                "confirmed": self.couples.names("couples"),
                "runaway": self.couples.names("runaway"),
                "status": self.couples.status,
            },
            "margins": [_margin_record(a) for a in self.analyses],
            "system": {
                "verdict": self.system.verdict,
                "lead_couple": self.system.lead,
                "severity": self.system.severity,
                "eta_sys": self.system.vector,
            },
            "units": {"angles": "rad", "areas": "pu*rad", "speeds": "pu", "time": "s"},
        }
        if with_timings:
            out["timings"] = dict(self.timings)
        return out


def _margin_record(a: CoupleAnalysis) -> dict:
    m = a.margin
    return {
        "couple": m.name,
        "class": m.kind,
        "pcmdlp": m.pcmdlp,
        "pcmdlp_source": m.source,
        "delta_c": a.series.delta_c,
        "A_acc": m.a_acc,
        "A_dec_pred": m.a_dec_pred,
        "eta": m.eta,
        "verdict": m.verdict,
        "degenerate": m.degenerate,
    }


def identify(traj: Trajectory, solved: SolvedCase, scenario: FaultScenario, cfg: AssessConfig) -> CoupleSet:
    if cfg.resolve_strategy(traj.n) == SMALL:
        return identify_couples_small(traj, cfg)
    fault_bus = scenario.bus
    if fault_bus is None:
        fault_bus = solved.case.branches[scenario.branch].from_bus
    return identify_couples_large(traj, cfg, solved=solved, fault_bus=fault_bus)


def assess(solved: SolvedCase, scenario: FaultScenario, cfg: AssessConfig = AssessConfig(),
           only_machine: int | None = None, traj: Trajectory | None = None) -> Assessment:
    """Simulate, pick couples, fit both curves per couple, and judge the system.

    ``only_machine`` keeps only couples containing that machine (lead-couple
    focus during CCT search); if none remain the full set is used.
    """
    timings = {}
    t0 = time.perf_counter()
    if traj is None:
        traj = simulate(solved, scenario, cfg.dt, scenario.clearing_time + cfg.horizon)
    timings["simulate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    couples = identify(traj, solved, scenario, cfg)
    if only_machine is not None:
        focused = tuple(p for p in couples.couples if only_machine in p)
        if focused:
            couples = replace(couples, couples=focused)
    timings["identify"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    analyses = tuple(analyse_couple(traj, p, cfg, p in couples.runaway) for p in couples.couples)
    system = system_margin(a.margin for a in analyses)
    timings["margins"] = time.perf_counter() - t0
    log.debug("t_c=%.3f couples=%s verdict=%s", scenario.clearing_time, couples.names(), system.verdict)
    return Assessment(scenario, cfg, couples, analyses, system, traj, timings)


# --------------------------------------------------------------------------
# critical clearing time
# --------------------------------------------------------------------------

PROPOSED, TIME_DOMAIN = "proposed", "time-domain"


@dataclass(frozen=True)
class CctResult:
    location: dict
    cct: float
    stable: float
    unstable: float
    method: str
    history: tuple[dict, ...]
    resolution: float

    def report(self) -> dict:
        return {
            "fault": self.location,
            "method": self.method,
            "cct": self.cct,
            "bracket": {"stable": self.stable, "unstable": self.unstable},
            "resolution": self.resolution,
            "history": list(self.history),
        }


def time_domain_verdict(solved: SolvedCase, scenario: FaultScenario, cfg: AssessConfig = AssessConfig()) -> str:
    traj = simulate(solved, scenario, cfg.dt, scenario.clearing_time + cfg.horizon)
    return UNSTABLE if pair_diverged(traj) else STABLE


def cct_search(solved: SolvedCase, scenario: FaultScenario, t_lo: float, t_hi: float, resolution: float = 0.01,
               method: str = PROPOSED, cfg: AssessConfig = AssessConfig(), full_iterations: int = 2) -> CctResult:
    """Bisection on the clearing time over the grid ``t_lo + k * resolution``.

    The reported CCT is the longest clearing time on the grid judged
    stable; the next grid point is unstable. With the proposed method the
    first ``full_iterations`` trials look at every couple, later ones only
    at couples containing the accelerating machine of the lead couple.
    """
    if method not in (PROPOSED, TIME_DOMAIN):
        raise ValueError(f"method must be {PROPOSED!r} or {TIME_DOMAIN!r}")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    steps = int(round((t_hi - t_lo) / resolution))
    if steps < 1:
        raise BracketError("degenerate bracket: t_hi must exceed t_lo by at least one resolution step")

    history: list[dict] = []
    focus: list[int | None] = [None]

    def stable_at(k: int) -> bool:
        t_c = round(t_lo + k * resolution, 10)
        sc = scenario.with_clearing(t_c)
        if method == TIME_DOMAIN:
            verdict = time_domain_verdict(solved, sc, cfg)
            history.append({"t_c": t_c, "verdict": verdict})
        else:
            use_focus = focus[0] if len(history) >= full_iterations else None
            a = assess(solved, sc, cfg, only_machine=use_focus)
            verdict = a.verdict
            if a.system.lead is not None and focus[0] is None and len(history) + 1 >= full_iterations:
                focus[0] = int(a.system.lead.split("_")[0])
            history.append({"t_c": t_c, "verdict": verdict, "lead": a.system.lead,
                            "eta": a.system.severity, "couples": a.couples.names()})
        return verdict != UNSTABLE

    lo_stable = stable_at(0)
    hi_stable = stable_at(steps)
    if lo_stable == hi_stable:
        state = "stable" if lo_stable else "unstable"
        raise BracketError(f"both ends of [{t_lo}, {t_hi}] s are {state}")
    if not lo_stable:
        raise BracketError(f"t_lo = {t_lo} s is unstable while t_hi = {t_hi} s is stable")
    lo, hi = 0, steps
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if stable_at(mid):
            lo = mid
        else:
            hi = mid
    t_stable = round(t_lo + lo * resolution, 10)
    t_unstable = round(t_lo + hi * resolution, 10)
    loc = {k: v for k, v in scenario.describe().items() if k != "clearing_time"}
    return CctResult(loc, t_stable, t_stable, t_unstable, method, tuple(history), resolution)
