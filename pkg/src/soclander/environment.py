"""The Moonlander task world.

Levels are vertical corridors the ship descends through at fixed speed, with
piecewise-linear borders, box obstacles and lateral drift zones.  Steering is
deliberately simple: one step moves the ship one ``step_size`` left or right,
immediately, with no inertia.  Drift adds to whatever was commanded, so a
zone is only inferable from the deviation between commanded and realized
movement unless it is marked.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .config import WorldConfig

MARKED_KINDS = ("marked_light", "marked_medium")
HIDDEN_KINDS = ("hidden_light", "hidden_medium")
ZONE_KINDS = MARKED_KINDS + ("stochastic",) + HIDDEN_KINDS

LEVEL_IDS = ("a", "b", "c", "d", "e", "f")

INPUTS = ("left", "right", "none")


class LevelParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class InvariantViolation(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class SteppedAfterDone(RuntimeError):
    pass


@dataclass(frozen=True)
class Ship:
    x: float
    y: float
    half_width: float = 1.0

    def __post_init__(self):
        if self.half_width <= 0:
            raise InvariantViolation("half_width", "must be positive")


@dataclass(frozen=True)
class DisturbanceZone:
    kind: str
    y_top: float
    y_bottom: float
    drift_per_step: float
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ZONE_KINDS:
            raise InvariantViolation("kind", f"unknown zone kind {self.kind!r}")
        if self.y_top <= self.y_bottom:
            raise InvariantViolation("y_top", "zone y_top must exceed y_bottom")
        if self.noise_sigma < 0:
            raise InvariantViolation("noise_sigma", "must be nonnegative")
        if self.noise_sigma > 0 and self.kind != "stochastic":
            raise InvariantViolation("noise_sigma", "only stochastic zones carry noise")

    @property
    def hidden(self) -> bool:
        return self.kind in HIDDEN_KINDS

    def contains(self, y: float) -> bool:
        return self.y_bottom < y <= self.y_top


@dataclass(frozen=True)
class Obstacle:
    x_left: float
    x_right: float
    y_top: float
    y_bottom: float

    def __post_init__(self):
        if self.x_left >= self.x_right:
            raise InvariantViolation("x_left", "obstacle x_left must be below x_right")
        if self.y_top <= self.y_bottom:
            raise InvariantViolation("y_top", "obstacle y_top must exceed y_bottom")

    @property
    def center_x(self) -> float:
        return 0.5 * (self.x_left + self.x_right)


@dataclass(frozen=True)
class Level:
    id: str
    width: float
    height: float
    border_profile: tuple[tuple[float, float, float], ...]
    obstacles: tuple[Obstacle, ...]
    zones: tuple[DisturbanceZone, ...]
    spawn: tuple[float, float]

    def __post_init__(self):
        if len(self.border_profile) < 2:
            raise InvariantViolation("border_profile", "need at least 2 breakpoints")
        ys = [y for y, _, _ in self.border_profile]
        if any(a <= b for a, b in zip(ys, ys[1:])):
            raise InvariantViolation("border_profile", "breakpoints must have strictly descending y")
        for y, left, right in self.border_profile:
            if left >= right:
                raise InvariantViolation("border_profile", f"left_x >= right_x at y={y}")
        left, right = self.border_at(self.spawn[1])
        if not (left < self.spawn[0] < right):
            raise InvariantViolation("spawn", "spawn point outside borders")

    def border_at(self, y: float) -> tuple[float, float]:
        """Interpolated (left_x, right_x) corridor at height y, clamped at the ends."""
        profile = self.border_profile
        if y >= profile[0][0]:
            return profile[0][1], profile[0][2]
        for (y_hi, l_hi, r_hi), (y_lo, l_lo, r_lo) in zip(profile, profile[1:]):
            if y >= y_lo:
                t = (y_hi - y) / (y_hi - y_lo)
                return l_hi + t * (l_lo - l_hi), r_hi + t * (r_lo - r_hi)
        return profile[-1][1], profile[-1][2]

    def zone_at(self, y: float) -> DisturbanceZone | None:
        for zone in self.zones:
            if zone.contains(y):
                return zone
        return None


@dataclass(frozen=True)
class WorldState:
    ship: Ship
    level: Level
    step: int
    crashed: bool
    done: bool
    rng_state: int      # episode seed; per-step noise derives from (seed, step)
    last_dx: float = 0.0

    @property
    def outcome(self) -> str:
        return "crashed" if self.crashed else "landed"


@dataclass(frozen=True)
class Observation:
    ship_x: float
    ship_y: float
    visible_borders: tuple[tuple[float, float, float], ...]
    visible_obstacles: tuple[Obstacle, ...]
    visible_zone_kind: str | None
    perceived_dx: float

    def border_at(self, y: float) -> tuple[float, float]:
        """Corridor interval at height y, interpolated over the visible breakpoints."""
        borders = self.visible_borders
        if y >= borders[0][0]:
            return borders[0][1], borders[0][2]
        for (y_hi, l_hi, r_hi), (y_lo, l_lo, r_lo) in zip(borders, borders[1:]):
            if y >= y_lo:
                t = (y_hi - y) / (y_hi - y_lo)
                return l_hi + t * (l_lo - l_hi), r_hi + t * (r_lo - r_hi)
        return borders[-1][1], borders[-1][2]


def load_level(text: str) -> Level:
    """Parse the line-based level format; see the packaged ``levels/*.lvl``."""
    level_id = None
    width = height = None
    borders: list[tuple[float, float, float]] = []
    obstacles: list[Obstacle] = []
    zones: list[DisturbanceZone] = []
    spawn = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        keyword, args = parts[0], parts[1:]
        try:
            if keyword == "level":
                if len(args) != 5 or args[1] != "width" or args[3] != "height":
                    raise ValueError("expected: level <id> width <w> height <h>")
                level_id, width, height = args[0], float(args[2]), float(args[4])
            elif keyword == "border":
                if len(args) != 3:
                    raise ValueError("expected: border <y> <left_x> <right_x>")
                borders.append((float(args[0]), float(args[1]), float(args[2])))
            elif keyword == "obstacle":
                if len(args) != 4:
                    raise ValueError("expected: obstacle <x_left> <x_right> <y_top> <y_bottom>")
                obstacles.append(Obstacle(*map(float, args)))
            elif keyword == "zone":
                if len(args) not in (4, 5):
                    raise ValueError("expected: zone <kind> <y_top> <y_bottom> <drift> [sigma]")
                sigma = float(args[4]) if len(args) == 5 else 0.0
                zones.append(DisturbanceZone(args[0], float(args[1]), float(args[2]),
                                             float(args[3]), sigma))
            elif keyword == "spawn":
                if len(args) != 2:
                    raise ValueError("expected: spawn <x> <y>")
                spawn = (float(args[0]), float(args[1]))
            else:
                raise ValueError(f"unknown keyword {keyword!r}")
        except InvariantViolation:
            raise
        except ValueError as exc:
            raise LevelParseError(line_no, str(exc)) from exc

    if level_id is None or width is None:
        raise LevelParseError(0, "missing level header line")
    if spawn is None:
        raise LevelParseError(0, "missing spawn line")
    return Level(
        id=level_id,
        width=width,
        height=height,
        border_profile=tuple(borders),
        obstacles=tuple(obstacles),
        zones=tuple(zones),
        spawn=spawn,
    )


def level_text(level_id: str) -> str:
    """Raw file content of a builtin level."""
    if level_id not in LEVEL_IDS:
        raise KeyError(f"no builtin level {level_id!r}")
    return resources.files("soclander").joinpath(f"levels/{level_id}.lvl").read_text("utf-8")


def builtin_levels() -> list[Level]:
    """The six evaluation situations, parsed from their packaged files."""
    return [load_level(level_text(level_id)) for level_id in LEVEL_IDS]


def make_world(level: Level, seed: int) -> WorldState:
    ship = Ship(x=level.spawn[0], y=level.spawn[1])
    return WorldState(ship=ship, level=level, step=0, crashed=False, done=False,
                      rng_state=int(seed))


def crash_check(ship: Ship, level: Level) -> bool:
    """True iff the ship box strictly exits the borders or overlaps an obstacle.

    Boundaries are open: exactly touching a border or obstacle edge does not
    crash, which keeps tests away from floating-point knife edges.
    """
    left, right = level.border_at(ship.y)
    if ship.x - ship.half_width < left or ship.x + ship.half_width > right:
        return True
    hw = ship.half_width
    for ob in level.obstacles:
        if (ship.x - hw < ob.x_right and ship.x + hw > ob.x_left
                and ship.y - hw < ob.y_top and ship.y + hw > ob.y_bottom):
            return True
    return False


def zone_noise(seed: int, step: int, sigma: float) -> float:
    """Per-step stochastic drift term, a pure function of (seed, step)."""
    return float(np.random.default_rng([seed, step]).normal(0.0, sigma))


def observe(w: WorldState, cfg: WorldConfig) -> Observation:
    """What the agent (or a human client) is allowed to see.

    Everything at or below the ship is visible except hidden zones, which
    never appear here; their drift shows up only in perceived_dx.
    """
    ship = w.ship
    left, right = w.level.border_at(ship.y)
    visible_borders = ((ship.y, left, right),) + tuple(
        bp for bp in w.level.border_profile if bp[0] < ship.y
    )
    visible_obstacles = tuple(ob for ob in w.level.obstacles if ob.y_bottom < ship.y)
    zone = w.level.zone_at(ship.y)
    zone_kind = zone.kind if zone is not None and not zone.hidden else None
    return Observation(
        ship_x=ship.x,
        ship_y=ship.y,
        visible_borders=visible_borders,
        visible_obstacles=visible_obstacles,
        visible_zone_kind=zone_kind,
        perceived_dx=w.last_dx,
    )


def env_step(w: WorldState, action: str, cfg: WorldConfig) -> tuple[WorldState, Observation]:
    """Advance the world one 50 ms tick with the given steering input.

    The drift zone is looked up at the pre-move height (the height the last
    observation described), so what the agent saw is what applies.
    """
    if w.done:
        raise SteppedAfterDone(f"episode already ended at step {w.step}")
    if action not in INPUTS:
        raise ValueError(f"unknown input {action!r}")

    input_dx = {"left": -cfg.step_size, "right": cfg.step_size, "none": 0.0}[action]
    dx = input_dx
    zone = w.level.zone_at(w.ship.y)
    if zone is not None:
        dx += zone.drift_per_step
        if zone.kind == "stochastic" and zone.noise_sigma > 0:
            dx += zone_noise(w.rng_state, w.step, zone.noise_sigma)

    ship = replace(w.ship, x=w.ship.x + dx, y=w.ship.y - cfg.descent_speed)
    if ship.y <= 0.0:
        crashed, done = False, True
    else:
        crashed = crash_check(ship, w.level)
        done = crashed
    new_state = WorldState(ship=ship, level=w.level, step=w.step + 1,
                           crashed=crashed, done=done, rng_state=w.rng_state,
                           last_dx=dx)
    return new_state, observe(new_state, cfg)
