"""Scenario runner: configuration, the four experiments, reports and the ``lab`` command."""

from .config import SCENARIOS, ScenarioConfig, load_scenario_config, rng_for
from .report import Assertion, Report, emit_report
from .scenarios import (run_closing_lemma, run_ergodic_gap, run_nonwandering, run_prohorov_bound,
                        run_scenario)

__all__ = [
    "SCENARIOS", "ScenarioConfig", "load_scenario_config", "rng_for", "Assertion", "Report",
    "emit_report", "run_closing_lemma", "run_ergodic_gap", "run_nonwandering",
    "run_prohorov_bound", "run_scenario",
]
