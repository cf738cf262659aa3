"""Versioned YAML/JSON run configuration.

A config file is a tree with these top-level keys::

    schema_version: 1
    scenario: T1_RR60_N1000          # catalogue name, or a mapping of
                                     # ScenarioConfig fields, optionally with
                                     # ``base: <name>`` to override a preset
    design:                          # DesignConfig fields; alpha_2 may be a list
      alpha_2: [0.05, 0.1, 0.2]
    simulation: {design: caden, runs: 1000, seed: 1, parallel: 1, averaging: macro}
    data: {id: id, treatment: treatment, response: response}

Every section is optional. JSON is valid YAML, so either syntax loads.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .engine import DesignConfig
from .harness import DEFAULT_ALPHA_2, DESIGNS
from .simgen import ScenarioConfig, scenario_catalogue

SCHEMA_VERSION = 1
_TOP_KEYS = {"schema_version", "scenario", "design", "simulation", "data"}
_SIM_KEYS = {"design", "runs", "seed", "parallel", "averaging"}
_DESIGN_FIELDS = {f.name for f in dataclasses.fields(DesignConfig)}


class ConfigError(ValueError):
    """Invalid or unsupported configuration."""


@dataclass
class RunConfig:
    scenario: Optional[ScenarioConfig] = None
    design_overrides: dict = field(default_factory=dict)
    alpha_2_values: tuple = DEFAULT_ALPHA_2
    design: str = "caden"
    runs: int = 1000
    seed: int = 0
    parallel: int = 1
    averaging: str = "macro"
    data_schema: Optional[dict] = None

    def design_config(self, N1: int, N2: Optional[int] = None, alpha_2: Optional[float] = None) -> DesignConfig:
        """DesignConfig for given stage sizes; explicit N1/N2 in the file take precedence."""
        opts = dict(self.design_overrides)
        opts.setdefault("N1", N1)
        opts.setdefault("N2", N2 if N2 is not None else opts["N1"])
        opts["alpha_2"] = self.alpha_2_values[0] if alpha_2 is None else alpha_2
        try:
            return DesignConfig(**opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"design: {exc}") from None


def resolve_scenario(spec) -> ScenarioConfig:
    catalogue = scenario_catalogue()
    if isinstance(spec, str):
        if spec not in catalogue:
            raise ConfigError(f"unknown scenario {spec!r}; known: {', '.join(catalogue)}")
        return catalogue[spec]
    if not isinstance(spec, dict):
        raise ConfigError("scenario must be a catalogue name or a mapping")
    data = dict(spec)
    base = data.pop("base", None)
    try:
        if base is not None:
            return resolve_scenario(base).replace(**data)
        data.setdefault("name", "custom")
        return ScenarioConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from None


def parse_config(tree) -> RunConfig:
    if not isinstance(tree, dict):
        raise ConfigError("config must be a mapping at the top level")
    version = tree.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    unknown = set(tree) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    out = RunConfig()
    if tree.get("scenario") is not None:
        out.scenario = resolve_scenario(tree["scenario"])

    design = dict(tree.get("design") or {})
    bad = set(design) - _DESIGN_FIELDS
    if bad:
        raise ConfigError(f"unknown design fields: {sorted(bad)}")
    if "alpha_2" in design:
        a2 = design.pop("alpha_2")
        values = a2 if isinstance(a2, (list, tuple)) else [a2]
        try:
            out.alpha_2_values = tuple(float(v) for v in values)
        except (TypeError, ValueError):
            raise ConfigError(f"design.alpha_2 must be a number or list of numbers, got {a2!r}") from None
        if not out.alpha_2_values:
            raise ConfigError("design.alpha_2 is empty")
    if "contrast" in design:
        design["contrast"] = tuple(design["contrast"])
    out.design_overrides = design

    sim = dict(tree.get("simulation") or {})
    bad = set(sim) - _SIM_KEYS
    if bad:
        raise ConfigError(f"unknown simulation fields: {sorted(bad)}")
    for key in ("runs", "seed", "parallel"):
        if key in sim:
            if not isinstance(sim[key], int) or isinstance(sim[key], bool):
                raise ConfigError(f"simulation.{key} must be an integer")
            setattr(out, key, sim[key])
    if "design" in sim:
        if sim["design"] not in DESIGNS:
            raise ConfigError(f"simulation.design must be one of {DESIGNS}")
        out.design = sim["design"]
    if "averaging" in sim:
        if sim["averaging"] not in ("macro", "micro"):
            raise ConfigError("simulation.averaging must be 'macro' or 'micro'")
        out.averaging = sim["averaging"]
    if out.runs < 1 or out.parallel < 1:
        raise ConfigError("simulation.runs and simulation.parallel must be at least 1")

    data = tree.get("data")
    if data is not None:
        if not isinstance(data, dict) or set(data) - {"id", "treatment", "response", "delimiter"}:
            raise ConfigError("data must map id/treatment/response (and optionally delimiter) to column names")
        out.data_schema = dict(data)
    return out


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        tree = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from None
    return parse_config(tree)


def dump_config(cfg: RunConfig) -> str:
    tree = {"schema_version": SCHEMA_VERSION}
    if cfg.scenario is not None:
        tree["scenario"] = cfg.scenario.to_dict()
    design = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.design_overrides.items()}
    design["alpha_2"] = list(cfg.alpha_2_values)
    tree["design"] = design
    tree["simulation"] = {"design": cfg.design, "runs": cfg.runs, "seed": cfg.seed,
                          "parallel": cfg.parallel, "averaging": cfg.averaging}
    if cfg.data_schema is not None:
        tree["data"] = dict(cfg.data_schema)
    return yaml.safe_dump(tree, sort_keys=False)
