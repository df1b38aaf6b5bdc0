"""Scalar configuration for the task world and both control layers.

Every tunable magnitude lives here so that experiments can override any of
them from a single place.  The ``SOC_LANDER_CONFIG`` environment variable may
point to a ``key=value`` file whose entries override individual fields; keys
use the flat field names below (e.g. ``descent_speed=0.4``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class WorldConfig:
    """Geometry and kinematics of the task world (one step = 50 ms)."""

    level_width: float = 40.0
    descent_speed: float = 0.5      # vertical units per step
    step_size: float = 1.0          # lateral units per steering input
    light_drift: float = 0.3        # units per step
    medium_drift: float = 0.7
    stochastic_sigma: float = 0.3
    ship_half_width: float = 1.0
    steps_per_second: int = 20


@dataclass(frozen=True)
class SclConfig:
    """Sensorimotor layer: motor plant, compensation and LL SoC scalars."""

    k_spring: float = 0.3
    c_damp: float = 1.2             # keeps c^2 >= 4k (no overshoot)
    likelihood_sigma: float = 0.5   # Gaussian width for movement likelihoods
    dead_zone: float = 0.15         # fraction of step_size below which no input is emitted
    max_step: float = 1.0           # plant saturation, in units of step_size
    initial_ll_soc: float = 0.5
    movement_half_states: int = 3   # movement domain is {-n..n} * step_size / n
    prior_forget: float = 0.1       # uniform mixing of the empirical prior per tick


@dataclass(frozen=True)
class CclConfig:
    """Cognitive layer: action-field selection and HL SoC monitoring scalars."""

    reliability_threshold: float = 0.5
    grace_steps: int = 6            # 300 ms with 50 ms steps
    initial_hl_tenths: int = 5      # HL SoC starts at 0.5
    goal_fraction: float = 1.0      # fraction of remaining distance per movement goal
    narrow_fraction: float = 0.45   # corridor narrower than this fraction of level width


@dataclass(frozen=True)
class Scalars:
    """Bundle of all scalar configuration used by an episode."""

    world: WorldConfig = WorldConfig()
    scl: SclConfig = SclConfig()
    ccl: CclConfig = CclConfig()

    def override(self, entries: dict[str, float]) -> "Scalars":
        """Return a copy with flat ``field=value`` overrides applied."""
        out = self
        for key, value in entries.items():
            placed = False
            for group_name in ("world", "scl", "ccl"):
                group = getattr(out, group_name)
                if any(f.name == key for f in fields(group)):
                    cast = int if isinstance(getattr(group, key), int) else float
                    out = replace(out, **{group_name: replace(group, **{key: cast(value)})})
                    placed = True
                    break
            if not placed:
                raise KeyError(f"unknown config scalar: {key}")
        return out

    def as_flat_dict(self) -> dict[str, float]:
        flat: dict[str, float] = {}
        for group_name in ("world", "scl", "ccl"):
            group = getattr(self, group_name)
            for f in fields(group):
                flat[f.name] = getattr(group, f.name)
        return flat


def parse_overrides(text: str) -> dict[str, float]:
    """Parse a ``key=value`` overrides file (``#`` comments, blank lines ok)."""
    entries: dict[str, float] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = float(value.strip())
    return entries


def load_scalars(env: dict[str, str] | None = None) -> Scalars:
    """Default scalars, with ``SOC_LANDER_CONFIG`` overrides when set."""
    env = os.environ if env is None else env
    scalars = Scalars()
    path = env.get("SOC_LANDER_CONFIG")
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            scalars = scalars.override(parse_overrides(fh.read()))
    return scalars
