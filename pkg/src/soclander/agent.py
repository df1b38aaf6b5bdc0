"""Episode orchestration: the per-step exchange between CCL, SCL and world.

The layers never touch each other or the raw world state directly; all
cross-layer information flows through the situated state buffer.  The CCL
reads the buffered observation and sensorimotor feedback, decides on an
intention, and hands a movement goal (plus any marked-zone compensation
bias) down; the SCL turns that into a steering input and reports back.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import ccl as ccl_mod
from .ccl import ActionIntention, CclState, IntentionLibrary, default_intention_library
from .config import Scalars
from .environment import Level, Observation, WorldState, env_step, make_world, observe
from .scl import MovementGoal, SclFeedback, SclState, new_scl_state, scl_tick
from .traces import SCHEMA_VERSION, EpisodeTrace, TraceRecord, SchemaMismatch


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    fixed_k: float | None = None        # None means the dynamic gain of the belief update
    ccl_threshold: float = 0.5
    ccl_enabled: bool = True
    seed: int = 0
    scalars: Scalars = Scalars()

    def __post_init__(self):
        if self.fixed_k is not None and not 0.0 <= self.fixed_k <= 1.0:
            raise ConfigInvalid(f"fixed K {self.fixed_k!r} outside [0, 1]")
        if not 0.0 <= self.ccl_threshold <= 1.0:
            raise ConfigInvalid(f"CCL threshold {self.ccl_threshold!r} outside [0, 1]")

    @property
    def k_mode(self) -> str:
        return "dynamic" if self.fixed_k is None else repr(self.fixed_k)


@dataclass
class SituatedStateBuffer:
    """The only interface between the layers; every entry is step-stamped."""

    observation: Observation | None = None
    observation_step: int = -1
    feedback: SclFeedback | None = None
    feedback_step: int = -1
    goal: MovementGoal | None = None
    goal_step: int = -1
    intention: ActionIntention | None = None
    intention_step: int = -1
    step: int = 0

    def put_observation(self, obs: Observation, now: int) -> None:
        self.observation, self.observation_step, self.step = obs, now, now

    def put_feedback(self, fb: SclFeedback, now: int) -> None:
        self.feedback, self.feedback_step = fb, now

    def put_goal(self, goal: MovementGoal, now: int) -> None:
        self.goal, self.goal_step = goal, now

    def put_intention(self, intention: ActionIntention, now: int) -> None:
        self.intention, self.intention_step = intention, now


@dataclass(frozen=True)
class CclDecision:
    state: CclState
    goal: MovementGoal
    compensation_bias: float
    trigger: bool
    selected: bool


def ccl_decide(buffer: SituatedStateBuffer, state: CclState, scalars: Scalars, now: int) -> CclDecision:
    """One cognitive cycle over the buffer contents only.

    Order: situation detection, HL SoC update, then either a field refresh
    (situation changed), the monitor/select path, or plain monitoring.  The
    grace window gates every selection, including situation refreshes.
    """
    obs = buffer.observation
    if obs is None:
        raise ValueError("buffer holds no observation")
    ll_soc = buffer.feedback.ll_soc if buffer.feedback is not None else state.hl_soc

    situation = ccl_mod.detect_situation(obs, scalars)
    state = ccl_mod.hl_soc_update(state, ll_soc)

    trigger = False
    selected = False
    if state.field is None:
        state = replace(state, field=ccl_mod.generate_action_field(
            state.library, situation, scalars.ccl.reliability_threshold))
        state, _ = ccl_mod.select_action(state, now, scalars)
        selected = True
    elif situation.id != state.field.situation.id and now >= state.grace_until:
        field = ccl_mod.generate_action_field(
            state.library, situation, scalars.ccl.reliability_threshold)
        kept = ccl_mod.keep_intention(field, state.current_intention)
        if kept is not None:
            state = replace(state, field=kept, current_intention=state.current_intention)
        else:
            state = replace(state, field=field)
            state, _ = ccl_mod.select_action(state, now, scalars)
            selected = True
    else:
        state, trigger = ccl_mod.monitor_action(state, now)
        if trigger:
            state, _ = ccl_mod.select_action(state, now, scalars)
            selected = True

    goal, bias = ccl_mod.intention_to_goal(state.current_intention, obs, scalars)
    return CclDecision(state=state, goal=goal, compensation_bias=bias,
                       trigger=trigger, selected=selected)


def baseline_goal(obs: Observation, scalars: Scalars) -> MovementGoal:
    """SCL-only goal policy: hold the center of the visible corridor."""
    left, right = obs.border_at(obs.ship_y)
    dx = scalars.ccl.goal_fraction * (0.5 * (left + right) - obs.ship_x)
    return MovementGoal.toward(dx, scalars.scl.max_step * scalars.world.step_size)


class Episode:
    """Stepwise driver for one agent episode (also streamed by the service)."""

    def __init__(self, level: Level, config: AgentConfig,
                 library: IntentionLibrary | None = None):
        self.level = level
        self.config = config
        self.scalars = config.scalars
        self.world: WorldState = make_world(level, config.seed)
        self.obs: Observation = observe(self.world, self.scalars.world)
        self.buffer = SituatedStateBuffer()
        self.scl: SclState = new_scl_state(
            self.scalars, initial_gain=config.fixed_k if config.fixed_k is not None else 0.5)
        self.ccl: CclState | None = None
        if config.ccl_enabled:
            lib = library if library is not None else default_intention_library()
            self.ccl = ccl_mod.new_ccl_state(lib, config.ccl_threshold, self.scalars.ccl)
        self.records: list[TraceRecord] = []

    @property
    def done(self) -> bool:
        return self.world.done

    def tick(self) -> TraceRecord | None:
        """Advance one 50 ms step; returns the recorded row, or None when done."""
        if self.world.done:
            return None
        now = self.world.step
        self.buffer.put_observation(self.obs, now)

        trigger = False
        intention_id = None
        if self.ccl is not None:
            decision = ccl_decide(self.buffer, self.ccl, self.scalars, now)
            self.ccl = decision.state
            trigger = decision.trigger
            intention_id = decision.state.current_intention.target_region
            self.buffer.put_goal(decision.goal, now)
            self.buffer.put_intention(decision.state.current_intention, now)
            goal = decision.goal
            prior = -decision.compensation_bias if decision.compensation_bias != 0.0 else None
            self.scl = replace(self.scl, compensation_prior=prior)
        else:
            goal = baseline_goal(self.obs, self.scalars)
            self.buffer.put_goal(goal, now)
            self.scl = replace(self.scl, compensation_prior=None)

        self.scl, action, feedback = scl_tick(
            self.scl, goal, self.obs, self.scalars, fixed_gain=self.config.fixed_k)
        self.buffer.put_feedback(feedback, now)

        self.world, self.obs = env_step(self.world, action, self.scalars.world)
        record = TraceRecord(
            step=now,
            x=self.world.ship.x,
            y=self.world.ship.y,
            input=action,
            ll_soc=self.scl.ll_soc,
            hl_soc=self.ccl.hl_soc if self.ccl is not None else None,
            intention=intention_id,
            trigger=trigger,
            crashed=self.world.crashed,
        )
        self.records.append(record)
        return record

    def run(self) -> EpisodeTrace:
        while not self.world.done:
            self.tick()
        return self.to_trace()

    def to_trace(self) -> EpisodeTrace:
        meta = {
            "schema_version": SCHEMA_VERSION,
            "level": self.level.id,
            "seed": str(self.config.seed),
            "k_mode": self.config.k_mode,
            "ccl_threshold": repr(self.config.ccl_threshold),
            "ccl_enabled": str(int(self.config.ccl_enabled)),
            "outcome": self.world.outcome,
        }
        for key, value in self.scalars.as_flat_dict().items():
            meta[f"config.{key}"] = repr(value)
        return EpisodeTrace(records=list(self.records), outcome=self.world.outcome, meta=meta)


def run_episode(level: Level, config: AgentConfig,
                library: IntentionLibrary | None = None) -> EpisodeTrace:
    return Episode(level, config, library).run()


@dataclass(frozen=True)
class Divergence:
    step: int
    column: str
    recorded: float | bool
    replayed: float | bool


@dataclass
class ReplayReport:
    divergences: list[Divergence] = field(default_factory=list)
    steps_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.divergences

    @property
    def first(self) -> Divergence | None:
        return self.divergences[0] if self.divergences else None


def scalars_from_meta(meta: dict[str, str]) -> Scalars:
    overrides = {k[len("config."):]: float(v) for k, v in meta.items() if k.startswith("config.")}
    return Scalars().override(overrides) if overrides else Scalars()


def replay(trace: EpisodeTrace, level: Level) -> ReplayReport:
    """Re-simulate the environment from the recorded inputs and compare.

    Positions must match exactly (same seed, same noise, same arithmetic);
    the first mismatching step and column is what gets reported.
    """
    if trace.meta.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"trace schema {trace.meta.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
    seed = int(trace.meta.get("seed", "0"))
    scalars = scalars_from_meta(trace.meta)
    world = make_world(level, seed)
    report = ReplayReport()
    for record in trace.records:
        if world.done:
            report.divergences.append(Divergence(record.step, "done", False, True))
            break
        world, _ = env_step(world, record.input, scalars.world)
        for column, recorded, replayed in (
            ("x", record.x, world.ship.x),
            ("y", record.y, world.ship.y),
            ("crashed", record.crashed, world.crashed),
        ):
            if recorded != replayed:
                report.divergences.append(Divergence(record.step, column, recorded, replayed))
        report.steps_checked += 1
        if report.divergences:
            break
    return report
