"""Cognitive control layer.

Classifies the currently observed situation, keeps an ordered field of
action intentions for it, and monitors the high-level sense of control.
When HL SoC falls below the condition's threshold (outside the 300 ms grace
window that follows every selection) the next untried intention is taken;
a depleted field is simply regenerated from the same library, so the layer
can loop through the same strategies indefinitely.

HL SoC is held as integer tenths so its 1/10 quantization is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field, replace
from importlib import resources

from .config import CclConfig, Scalars
from .environment import MARKED_KINDS, Observation
from .scl import MovementGoal

TARGET_REGIONS = ("far_left", "left", "center", "right", "far_right")

REGION_FRACTION = {
    "far_left": 0.1,
    "left": 0.3,
    "center": 0.5,
    "right": 0.7,
    "far_right": 0.9,
}

DEFAULT_SITUATION_ID = "default"


@dataclass(frozen=True)
class Situation:
    zone_kind: str | None
    obstacle_ahead: str   # none | left | center | right | multiple
    corridor: str         # wide | narrow

    @property
    def id(self) -> str:
        return f"{self.zone_kind or 'none'}|{self.obstacle_ahead}|{self.corridor}"


@dataclass(frozen=True)
class ActionIntention:
    target_region: str
    compensation_bias: float = 0.0
    reliability: float = 1.0
    tried: bool = False

    def __post_init__(self):
        if self.target_region not in TARGET_REGIONS:
            raise ValueError(f"unknown target region {self.target_region!r}")
        if not 0.0 <= self.reliability <= 1.0:
            raise ValueError("reliability must be in [0, 1]")


@dataclass(frozen=True)
class ActionField:
    intentions: tuple[ActionIntention, ...]
    situation: Situation

    @property
    def depleted(self) -> bool:
        return all(i.tried for i in self.intentions)


class IntentionLibrary:
    """Mapping from situation ids to reliability-ranked intentions."""

    def __init__(self, entries: dict[str, list[ActionIntention]]):
        if DEFAULT_SITUATION_ID not in entries:
            raise ValueError("library must contain a 'default' entry")
        self._entries = {k: tuple(v) for k, v in entries.items()}

    def lookup(self, situation: Situation) -> tuple[ActionIntention, ...]:
        return self._entries.get(situation.id, self._entries[DEFAULT_SITUATION_ID])

    @property
    def situation_ids(self) -> tuple[str, ...]:
        return tuple(self._entries)


def load_intention_library(text: str) -> IntentionLibrary:
    """Parse ``intent <situation-id> <region> <reliability> [bias <b>]`` lines."""
    entries: dict[str, list[ActionIntention]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "intent" or len(parts) not in (4, 6):
            raise ValueError(f"line {line_no}: expected intent <sid> <region> <rel> [bias <b>]")
        bias = 0.0
        if len(parts) == 6:
            if parts[4] != "bias":
                raise ValueError(f"line {line_no}: expected 'bias' keyword")
            bias = float(parts[5])
        intention = ActionIntention(
            target_region=parts[2],
            compensation_bias=bias,
            reliability=float(parts[3]),
        )
        entries.setdefault(parts[1], []).append(intention)
    return IntentionLibrary(entries)


def default_intention_library() -> IntentionLibrary:
    text = resources.files("soclander").joinpath("data/default_intentions.txt").read_text("utf-8")
    return load_intention_library(text)


@dataclass(frozen=True)
class CclState:
    hl_tenths: int
    ccl_threshold: float
    library: IntentionLibrary
    field: ActionField | None = None
    current_intention: ActionIntention | None = None
    grace_until: int = 0
    selections: int = 0

    @property
    def hl_soc(self) -> float:
        return self.hl_tenths / 10.0


def new_ccl_state(library: IntentionLibrary, ccl_threshold: float, cfg: CclConfig) -> CclState:
    return CclState(hl_tenths=cfg.initial_hl_tenths, ccl_threshold=ccl_threshold, library=library)


def detect_situation(obs: Observation, scalars: Scalars) -> Situation:
    """Deterministic classification of what the observation shows."""
    zone_kind = obs.visible_zone_kind

    obstacles = obs.visible_obstacles
    if len(obstacles) >= 2:
        obstacle_ahead = "multiple"
    elif len(obstacles) == 1:
        ob = obstacles[0]
        left, right = obs.border_at(min(ob.y_top, obs.ship_y))
        third = (right - left) / 3.0
        if ob.center_x < left + third:
            obstacle_ahead = "left"
        elif ob.center_x < left + 2.0 * third:
            obstacle_ahead = "center"
        else:
            obstacle_ahead = "right"
    else:
        obstacle_ahead = "none"

    left, right = obs.border_at(obs.ship_y)
    narrow = (right - left) < scalars.ccl.narrow_fraction * scalars.world.level_width
    return Situation(zone_kind=zone_kind, obstacle_ahead=obstacle_ahead,
                     corridor="narrow" if narrow else "wide")


def generate_action_field(library: IntentionLibrary, situation: Situation,
                          reliability_threshold: float) -> ActionField:
    """Reliable intentions for the situation, best first, none tried yet."""
    admitted = [replace(i, tried=False) for i in library.lookup(situation)
                if i.reliability >= reliability_threshold]
    admitted.sort(key=lambda i: -i.reliability)
    return ActionField(intentions=tuple(admitted), situation=situation)


def keep_intention(field: ActionField, current: ActionIntention | None) -> ActionField | None:
    """Carry a still-admissible intention into a freshly generated field.

    When the situation changes but the current intention's region is still in
    the new field, the agent keeps pursuing it rather than churning; the
    matching entry is marked tried so a later trigger picks something else.
    Returns the adjusted field, or None when the intention is not admissible.
    """
    if current is None:
        return None
    for i, intent in enumerate(field.intentions):
        if intent.target_region == current.target_region:
            marked = tuple(replace(it, tried=True) if j == i else it
                           for j, it in enumerate(field.intentions))
            return ActionField(intentions=marked, situation=field.situation)
    return None


def select_action(state: CclState, now: int, scalars: Scalars) -> tuple[CclState, ActionIntention]:
    """Take the best untried intention; regenerate the field when depleted."""
    field = state.field
    if field is None:
        raise RuntimeError("select_action called before an action field exists")
    if field.depleted:
        field = generate_action_field(state.library, field.situation,
                                      scalars.ccl.reliability_threshold)
    if not field.intentions:
        # nothing passes the reliability threshold; fall back to the default entry
        field = generate_action_field(state.library,
                                      Situation(None, "none", "wide"),
                                      scalars.ccl.reliability_threshold)
    chosen_idx = next(i for i, intent in enumerate(field.intentions) if not intent.tried)
    chosen = field.intentions[chosen_idx]
    marked = tuple(replace(intent, tried=True) if i == chosen_idx else intent
                   for i, intent in enumerate(field.intentions))
    new_state = replace(
        state,
        field=ActionField(intentions=marked, situation=field.situation),
        current_intention=chosen,
        grace_until=now + scalars.ccl.grace_steps,
        selections=state.selections + 1,
    )
    return new_state, chosen


def hl_soc_update(state: CclState, ll_soc: float) -> CclState:
    """Step HL SoC one tenth toward LL SoC, with the asymmetric dead band."""
    tenths = state.hl_tenths
    if ll_soc > tenths / 10.0:
        tenths += 1
    elif ll_soc < (tenths - 1) / 10.0:
        tenths -= 1
    return replace(state, hl_tenths=min(10, max(0, tenths)))


def monitor_action(state: CclState, now: int) -> tuple[CclState, bool]:
    """Strategy-change trigger: HL SoC strictly below threshold, grace over."""
    trigger = state.hl_soc < state.ccl_threshold and now >= state.grace_until
    return state, trigger


def intention_to_goal(
    intention: ActionIntention,
    obs: Observation,
    scalars: Scalars,
) -> tuple[MovementGoal, float]:
    """Translate the symbolic intention into a per-step movement goal.

    The target region maps to a fixed fraction of the corridor at the ship's
    height; the goal is a clamped fraction of the remaining distance.  The
    compensation bias is forwarded only while a marked zone announces the
    drift it is meant to pre-empt.
    """
    left, right = obs.border_at(obs.ship_y)
    target_x = left + REGION_FRACTION[intention.target_region] * (right - left)
    dx = scalars.ccl.goal_fraction * (target_x - obs.ship_x)
    goal = MovementGoal.toward(dx, scalars.scl.max_step * scalars.world.step_size)
    bias = intention.compensation_bias if obs.visible_zone_kind in MARKED_KINDS else 0.0
    return goal, bias
