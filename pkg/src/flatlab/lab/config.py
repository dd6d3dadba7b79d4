"""Scenario configuration: defaults, range checks and seeded generators."""

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..surface import build_from_config, parse_config_text

SURFACE_KEYS = ("preset", "l", "h", "A", "B", "cut", "target_trace")

# parameter -> (default, lower bound, upper bound); bounds are inclusive
DEFAULTS = {
    "closing-lemma": {
        "eps": (0.05, 1e-6, 1.0),
        "theta": (0.2, 1e-6, math.pi / 2),
        "budget": (1e5, 10.0, 1e7),
        "T0": (10.0, 0.0, 1e6),
        "grid": (200, 2, 2000),
        "radius": (0.05, 1e-9, 1.0),
        "min_residual": (0.1, 0.0, 10.0),
        "start": ([0.1, 1.3, 0.7], None, None),
        "control_word": ("BAbA", None, None),
        "control_gap": (1e-3, 1e-9, 0.1),
        "control_eps": (1e-2, 1e-9, 1.0),
    },
    "ergodic-gap": {
        "eps": (0.05, 1e-6, 1.0),
        "theta": (0.2, 1e-6, math.pi / 2),
        "rho_A": (0.0, -1e9, 1e9),
        "n_starts": (100, 1, 100000),
        "T": ([1e2, 1e3, 1e4], 1e-3, 1e7),
        "radius": (1.5, 0.0, 10.0),
        "max_fraction": (0.5, 0.0, 1.0),
    },
    "prohorov-bound": {
        "d": (2.0, 1e-9, 1e9),
        "T": ([1e3, 1e4, 1e5], 1.0, 1e7),
        "dt": (0.1, 1e-4, 10.0),
        "atoms": (1024, 8, 1 << 20),
        "block": (4, 1, 1 << 16),
        "tol": (1e-6, 1e-12, 0.1),
        "slack_scale": (1.0, 0.0, 1e3),
        "radius": (1.5, 0.0, 10.0),
    },
    "nonwandering": {
        "rho": ([0.25, 1.0, 4.0], 0.0, 1e6),
        "n_phi": (4, 1, 1000),
        "n_alpha": (8, 1, 1000),
        "n_core": (8, 0, 10000),
        "horizon": (50.0, 1e-3, 1e5),
        "n_max": (8, 1, 12),
        "X": ("A", None, None),
        "decay_ratio": (0.05, 0.0, 1.0),
        "closure_tol": (1e-12, 0.0, 1.0),
    },
}
SCENARIOS = tuple(DEFAULTS)
PRESET_FOR = {"closing-lemma": "FlatCylinderTorus", "ergodic-gap": "FlatCylinderTorus",
              "prohorov-bound": "FlatCylinderTorus", "nonwandering": "FlatEndedTorus"}


def rng_for(seed: int, scenario: str, index: int = 0) -> np.random.Generator:
    """Generator seeded by ``(seed, scenario, index)``, independent of execution order."""
    return np.random.default_rng([int(seed), zlib.crc32(scenario.encode()), int(index)])


def _check_value(name, value, lo, hi):
    vals = value if isinstance(value, list) else [value]
    if lo is None:
        return
    for v in vals:
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise ConfigError(f"{name} must be numeric, got {v!r}")
        if not lo <= v <= hi:
            raise ConfigError(f"{name}={v} outside [{lo}, {hi}]")


@dataclass
class ScenarioConfig:
    scenario: str
    surface: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "lab-out"

    def __post_init__(self):
        if self.scenario not in DEFAULTS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        spec = DEFAULTS[self.scenario]
        unknown = set(self.params) - set(spec)
        if unknown:
            raise ConfigError(f"unknown parameters for {self.scenario}: {sorted(unknown)}")
        merged = {k: v[0] for k, v in spec.items()}
        merged.update(self.params)
        for k, (default, lo, hi) in spec.items():
            val = merged[k]
            if isinstance(default, list) and not isinstance(val, list):
                val = merged[k] = [val]
            if isinstance(default, int) and not isinstance(default, bool) and lo is not None:
                if isinstance(val, float) and val.is_integer():
                    val = merged[k] = int(val)
                if not isinstance(val, int):
                    raise ConfigError(f"{k} must be an integer")
            if isinstance(default, str):
                merged[k] = str(val)
            _check_value(k, val, lo, hi)
        self.params = merged
        surf = {"preset": PRESET_FOR[self.scenario]}
        surf.update(self.surface)
        if surf["preset"] != PRESET_FOR[self.scenario]:
            raise ConfigError(f"{self.scenario} needs {PRESET_FOR[self.scenario]}, got {surf['preset']}")
        self.surface = surf
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        p = self.params
        if self.scenario in ("closing-lemma", "ergodic-gap") and not p["theta"] < math.pi / 2:
            raise ConfigError("theta must be below pi/2")

    def model(self):
        try:
            return build_from_config({"surface": self.surface})
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def as_dict(self) -> dict:
        return {"scenario": self.scenario, "surface": self.surface, "params": self.params,
                "seed": self.seed}


def load_scenario_config(scenario: str, path=None, seed=None, out=None) -> ScenarioConfig:
    """Read a JSON or key/value file; surface keys go to ``surface``, the rest to ``params``."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
    data = dict(data)
    surface = dict(data.pop("surface", {}))
    for k in SURFACE_KEYS:
        if k in data:
            surface[k] = data.pop(k)
    name = data.pop("scenario", scenario)
    if name != scenario:
        raise ConfigError(f"config is for {name!r}, not {scenario!r}")
    params = dict(data.pop("params", {}))
    file_seed = data.pop("seed", 0)
    file_out = data.pop("out", "lab-out")
    params.update(data)
    if isinstance(file_seed, float) and file_seed.is_integer():
        file_seed = int(file_seed)
    return ScenarioConfig(scenario, surface, params, file_seed if seed is None else seed,
                          file_out if out is None else out)
