"""Run configuration files.

A config is one JSON object: the scenario fields at top level, plus the
optional sections ``solver`` (SolverOptions fields), ``online`` (MPC
options) and ``track`` (path of a ``t,a,b`` CSV, relative to the config
file). Without ``track`` the standard sinusoidal target is generated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .online import OnlineOptions, PredictorMode, TargetPredictor
from .pdcae import SolverOptions
from .scenario import ScenarioConfig, TargetTrack, generate_target_track, load_target_track

SECTIONS = ("solver", "online", "track")
ONLINE_KEYS = ("horizon", "predictor", "history_window", "margin_factor", "soft_weight", "mdr")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    online: dict = field(default_factory=dict)
    track_path: Path | None = None

    def track(self) -> TargetTrack:
        if self.track_path is None:
            return generate_target_track(self.scenario)
        return load_target_track(self.track_path, self.scenario.target_alt_H,
                                 expected_slots=self.scenario.n_slots)

    def online_options(self, track: TargetTrack) -> OnlineOptions:
        doc = dict(self.online)
        mode = PredictorMode(doc.pop("predictor", PredictorMode.CONSTANT_VELOCITY.value))
        window = doc.pop("history_window", 2)
        predictor = TargetPredictor(mode, window, track if mode is PredictorMode.ORACLE else None)
        return OnlineOptions(predictor=predictor, **doc)


def parse_config(doc: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    solver_doc = doc.pop("solver", {})
    online_doc = doc.pop("online", {})
    track = doc.pop("track", None)
    try:
        scenario = ScenarioConfig.from_dict(doc)
        solver = SolverOptions.from_dict(solver_doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    bad = set(online_doc) - set(ONLINE_KEYS)
    if bad:
        raise ConfigError(f"unknown online option(s): {sorted(bad)}")
    track_path = None
    if track is not None:
        track_path = Path(track)
        if not track_path.is_absolute() and base_dir is not None:
            track_path = base_dir / track_path
    return RunConfig(scenario, solver, dict(online_doc), track_path)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc, path.parent)
