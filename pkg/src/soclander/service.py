"""Live sessions of the task for human players and agent observation.

The protocol engine here is transport-free: it maps incoming protocol
messages to lists of outgoing messages, and a ``tick`` call advances the
world by one 50 ms step.  Real-time pacing, sockets and frame encoding live
in :mod:`soclander.server`.

Frames sent to clients carry only what a human player may see: borders,
obstacles and non-hidden zones.  Hidden zones never cross the wire; their
drift is only observable through the ship's movement.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentConfig, Episode
from .config import Scalars, load_scalars
from .environment import Level, WorldState, builtin_levels, env_step, make_world
from .traces import SCHEMA_VERSION, EpisodeTrace, TraceRecord, write_trace

PROTOCOL_VERSION = 1
PROBE_SCALE = (1, 7)
DEFAULT_PROBE_PERIOD = 200   # one self-report every 10 s of play

MODES = ("human", "agent-observe")


class SessionError(Exception):
    code = "session_error"


class UnknownLevel(SessionError):
    code = "unknown_level"


class SessionEnded(SessionError):
    code = "session_ended"


class InputAfterDone(SessionError):
    code = "input_after_done"


class SessionNotEnded(SessionError):
    code = "session_not_ended"


@dataclass
class Session:
    id: str
    mode: str
    level: Level
    seed: int
    scalars: Scalars
    probe_period: int = DEFAULT_PROBE_PERIOD
    world: WorldState | None = None
    episode: Episode | None = None          # agent-observe mode only
    pending_input: str | None = None
    pending_probe_step: int | None = None
    probes: list[tuple[int, int]] = field(default_factory=list)
    records: list[TraceRecord] = field(default_factory=list)
    ended: bool = False

    @property
    def step(self) -> int:
        return self.world.step if self.world is not None else self.episode.world.step

    @property
    def current_world(self) -> WorldState:
        return self.world if self.world is not None else self.episode.world

    @property
    def outcome(self) -> str:
        return "crashed" if self.current_world.crashed else "landed"

    def offer_input(self, direction: str) -> None:
        """Latch at most one input per step; later ones within a step drop."""
        if self.ended or self.current_world.done:
            raise InputAfterDone("session is over")
        if self.mode != "human":
            raise SessionError("inputs are only accepted in human mode")
        if self.pending_input is None:
            self.pending_input = direction

    def advance(self) -> TraceRecord:
        """Run one 50 ms step; human sessions consume the latched input."""
        if self.ended or self.current_world.done:
            raise SessionEnded("session is over")
        if self.mode == "human":
            action = self.pending_input or "none"
            self.pending_input = None
            self.world, _ = env_step(self.world, action, self.scalars.world)
            record = TraceRecord(
                step=self.world.step - 1,
                x=self.world.ship.x, y=self.world.ship.y,
                input=action, ll_soc=None, hl_soc=None, intention=None,
                trigger=False, crashed=self.world.crashed,
            )
            self.records.append(record)
        else:
            record = self.episode.tick()
            self.records.append(record)
        return record

    def probe_due(self, just_crashed: bool) -> bool:
        step = self.step
        if just_crashed:
            return True
        return self.probe_period > 0 and step > 0 and step % self.probe_period == 0

    def record_probe(self, value: int) -> None:
        if self.pending_probe_step is None:
            raise SessionError("no probe outstanding")
        if not PROBE_SCALE[0] <= value <= PROBE_SCALE[1]:
            raise SessionError(f"probe value must be in {PROBE_SCALE}")
        self.probes.append((self.pending_probe_step, value))
        self.pending_probe_step = None

    def finish(self) -> None:
        self.ended = True

    def to_trace(self) -> EpisodeTrace:
        if self.mode == "agent-observe":
            return self.episode.to_trace()
        meta = {
            "schema_version": SCHEMA_VERSION,
            "mode": "human",
            "level": self.level.id,
            "seed": str(self.seed),
            "ccl_enabled": "0",
            "outcome": self.outcome,
        }
        for key, value in self.scalars.as_flat_dict().items():
            meta[f"config.{key}"] = repr(value)
        return EpisodeTrace(records=list(self.records), outcome=self.outcome, meta=meta)

    def probes_csv(self) -> str:
        lines = ["step,value"] + [f"{step},{value}" for step, value in self.probes]
        return "\n".join(lines) + "\n"


class SessionManager:
    """Registry of live sessions plus export of finished ones."""

    def __init__(self, scalars: Scalars | None = None):
        self.scalars = scalars if scalars is not None else load_scalars()
        self.levels = {lvl.id: lvl for lvl in builtin_levels()}
        self.sessions: dict[str, Session] = {}
        self._counter = itertools.count(1)

    def create_session(self, level_id: str, mode: str, seed: int,
                       probe_period: int = DEFAULT_PROBE_PERIOD,
                       agent_config: dict | None = None) -> Session:
        if level_id not in self.levels:
            raise UnknownLevel(f"no level {level_id!r}")
        if mode not in MODES:
            raise SessionError(f"unknown mode {mode!r}")
        level = self.levels[level_id]
        session = Session(
            id=f"s{next(self._counter)}",
            mode=mode,
            level=level,
            seed=seed,
            scalars=self.scalars,
            probe_period=probe_period,
        )
        if mode == "human":
            session.world = make_world(level, seed)
        else:
            cfg = dict(agent_config or {})
            k = cfg.get("k", "dynamic")
            config = AgentConfig(
                fixed_k=None if k == "dynamic" else float(k),
                ccl_threshold=float(cfg.get("ccl_threshold", 0.5)),
                ccl_enabled=bool(cfg.get("ccl_enabled", True)),
                seed=seed,
                scalars=self.scalars,
            )
            session.episode = Episode(level, config)
        self.sessions[session.id] = session
        return session

    def export_session(self, session_id: str, out_dir: Path) -> tuple[Path, Path]:
        session = self.sessions[session_id]
        if not session.ended:
            raise SessionNotEnded("session still running")
        out_dir = Path(out_dir)
        trace_path = out_dir / f"{session.id}_{session.level.id}.csv"
        write_trace(session.to_trace(), trace_path)
        probes_path = out_dir / f"{session.id}_{session.level.id}_probes.csv"
        probes_path.write_text(session.probes_csv(), encoding="utf-8")
        return trace_path, probes_path


def frame_message(session: Session, probe: bool) -> dict:
    world = session.current_world
    level = session.level
    return {
        "type": "frame",
        "step": world.step,
        "ship": [world.ship.x, world.ship.y],
        "borders": [[y, l, r] for y, l, r in level.border_profile],
        "obstacles": [[o.x_left, o.x_right, o.y_top, o.y_bottom] for o in level.obstacles],
        "marked_zones": [[z.kind, z.y_top, z.y_bottom] for z in level.zones if not z.hidden],
        "done": world.done,
        "crashed": world.crashed,
        "probe": probe,
    }


def error_message(code: str, detail: str = "") -> dict:
    msg = {"type": "error", "code": code}
    if detail:
        msg["detail"] = detail
    return msg


class ProtocolConnection:
    """One client connection: hello, at most one session, frames out.

    ``handle_message`` reacts to client messages; ``tick`` is called by the
    transport's pacer to advance an active session one step.  Both return
    the messages to send back, in order.
    """

    def __init__(self, manager: SessionManager, export_dir: Path | None = None):
        self.manager = manager
        self.export_dir = Path(export_dir) if export_dir is not None else None
        self.greeted = False
        self.session: Session | None = None
        self.speed = 1.0

    @property
    def active(self) -> bool:
        return (self.session is not None and not self.session.ended
                and not self.session.current_world.done)

    def handle_message(self, msg: dict) -> list[dict]:
        if not isinstance(msg, dict) or "type" not in msg:
            return [error_message("bad_message", "missing type")]
        kind = msg["type"]
        try:
            if kind == "hello":
                if msg.get("proto") != PROTOCOL_VERSION:
                    return [error_message("unsupported_proto",
                                          f"server speaks proto {PROTOCOL_VERSION}")]
                self.greeted = True
                return [{"type": "hello", "proto": PROTOCOL_VERSION}]
            if not self.greeted:
                return [error_message("hello_required")]
            if kind == "create":
                if self.session is not None and not self.session.ended:
                    return [error_message("session_exists")]
                self.session = self.manager.create_session(
                    level_id=msg.get("level", "a"),
                    mode=msg.get("mode", "human"),
                    seed=int(msg.get("seed", 0)),
                    probe_period=int(msg.get("probe_period_steps", DEFAULT_PROBE_PERIOD)),
                    agent_config=msg.get("agent"),
                )
                self.speed = float(msg.get("speed", 1.0))
                return [frame_message(self.session, probe=False)]
            if self.session is None:
                return [error_message("no_session")]
            if kind == "input":
                direction = msg.get("dir", "none")
                if direction not in ("left", "right", "none"):
                    return [error_message("bad_input", f"unknown dir {direction!r}")]
                self.session.offer_input(direction)
                return []
            if kind == "probe_response":
                self.session.record_probe(int(msg.get("value", 0)))
                if self.session.ended and self.export_dir is not None:
                    # late answer to the post-crash probe; refresh the export
                    self.manager.export_session(self.session.id, self.export_dir)
                return []
            if kind == "end":
                return self._finish()
            return [error_message("unknown_type", str(kind))]
        except InputAfterDone as exc:
            return [error_message(exc.code, str(exc))]
        except SessionError as exc:
            return [error_message(exc.code, str(exc))]

    def tick(self) -> list[dict]:
        """Advance the active session one step and emit its frame."""
        if not self.active:
            return []
        session = self.session
        record = session.advance()
        probe = session.probe_due(just_crashed=record.crashed)
        if probe:
            session.pending_probe_step = session.step
        out = [frame_message(session, probe=probe)]
        if session.current_world.done:
            out.extend(self._finish())
        return out

    def _finish(self) -> list[dict]:
        session = self.session
        if session.ended:
            return [error_message(SessionEnded.code, "already ended")]
        session.finish()
        if self.export_dir is not None:
            self.manager.export_session(session.id, self.export_dir)
        return [{"type": "ended", "outcome": session.outcome}]
