"""Transient stability assessment from couple-machine power-angle curves."""

from .assess import AssessConfig, assess, cct_search
from .dynamics import simulate
from .netmodel import FaultScenario, bundled_case, parse_case, solve_power_flow

__all__ = ["AssessConfig", "FaultScenario", "assess", "bundled_case", "cct_search", "parse_case", "simulate",
           "solve_power_flow"]
__version__ = "0.1.0"
