"""Run configuration: strict parsing, validation, canonical hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigurationError

EMIT_CHOICES = ("csv", "json", "binary", "plots")


@dataclass
class RunConfig:
    scenario: str = "lq_benchmark"
    n_modes: int = 16
    n_steps: int = 200
    n_paths: int = 10000
    seed: int = 20250801
    horizon: float = 1.0
    delta: float = 0.1
    picard_tol: float = 1e-8
    max_picard: int = 30
    regression_degree: int | None = None  # None: 1, or 2 for saturating scenarios
    out_dir: str = "out"
    emit: tuple = field(default_factory=lambda: ("csv", "json", "plots"))

    def to_dict(self):
        d = asdict(self)
        d["emit"] = list(self.emit)
        return d

    def resolved_degree(self, scenario):
        if self.regression_degree is not None:
            return self.regression_degree
        return 2 if scenario.gamma_kind == "saturating" else 1


def validate_config(cfg):
    """Collect every range violation before raising."""
    problems = []

    def check(cond, msg):
        if not cond:
            problems.append(msg)

    check(isinstance(cfg.scenario, str) and cfg.scenario, "scenario: must be a nonempty string")
    for name in ("n_modes", "n_steps", "n_paths", "max_picard"):
        v = getattr(cfg, name)
        check(isinstance(v, int) and v > 0, f"{name}: must be a positive integer, got {v!r}")
    check(isinstance(cfg.n_modes, int) and cfg.n_modes >= 2, "n_modes: must be >= 2")
    check(isinstance(cfg.seed, int) and 0 <= cfg.seed < 2**64,
          f"seed: must be a 64-bit nonnegative integer, got {cfg.seed!r}")
    check(isinstance(cfg.horizon, (int, float)) and cfg.horizon > 0,
          f"horizon: must be positive, got {cfg.horizon!r}")
    check(isinstance(cfg.delta, (int, float)) and 0 < cfg.delta <= 1,
          f"delta: must lie in (0, 1], got {cfg.delta!r}")
    check(isinstance(cfg.picard_tol, (int, float)) and cfg.picard_tol > 0,
          f"picard_tol: must be positive, got {cfg.picard_tol!r}")
    check(cfg.regression_degree in (None, 1, 2),
          f"regression_degree: must be 1, 2 or null, got {cfg.regression_degree!r}")
    check(isinstance(cfg.out_dir, str) and cfg.out_dir, "out_dir: must be a nonempty string")
    bad = [e for e in cfg.emit if e not in EMIT_CHOICES]
    check(not bad, f"emit: unknown flags {bad}; choices are {list(EMIT_CHOICES)}")
    if problems:
        raise ConfigurationError("invalid configuration: " + "; ".join(problems))
    return cfg


def parse_config(source=None, overrides=None):
    """Build a validated RunConfig from a JSON file, a dict, or defaults.

    Unknown keys are rejected outright (a silently ignored typo in a
    tolerance name would corrupt an acceptance run).  ``overrides`` applies
    command-line flags on top of the file.
    """
    data = {}
    if source is not None:
        if isinstance(source, dict):
            data = dict(source)
        else:
            try:
                with open(source) as fh:
                    data = json.load(fh)
            except FileNotFoundError:
                raise ConfigurationError(f"config file not found: {source}")
            except json.JSONDecodeError as exc:
                raise ConfigurationError(
                    f"config file {source}: JSON parse error at line {exc.lineno}, "
                    f"column {exc.colno}: {exc.msg}")
            if not isinstance(data, dict):
                raise ConfigurationError(f"config file {source}: top level must be an object")
    known = set(RunConfig().to_dict())
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(
            f"unknown config keys {unknown}; known keys: {sorted(known)}")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    if "emit" in data:
        data["emit"] = tuple(data["emit"])
    return validate_config(RunConfig(**data))


def config_hash(cfg):
    """Short stable digest of the canonical JSON form."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]
