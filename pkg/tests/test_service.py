"""Session service: protocol engine semantics and both network transports."""

import asyncio
import base64
import hashlib
import json
import os
import struct

import pytest

from soclander.agent import replay
from soclander.config import Scalars
from soclander.environment import builtin_levels
from soclander.server import WS_MAGIC, SessionServer
from soclander.service import (
    ProtocolConnection,
    SessionManager,
    SessionNotEnded,
    UnknownLevel,
)
from soclander.traces import read_trace

SC = Scalars()


def fresh(export_dir=None):
    manager = SessionManager(scalars=SC)
    return ProtocolConnection(manager, export_dir=export_dir)


def greet(conn):
    replies = conn.handle_message({"type": "hello", "proto": 1})
    assert replies == [{"type": "hello", "proto": 1}]


class TestHandshake:
    def test_hello_required_before_anything(self):
        conn = fresh()
        replies = conn.handle_message({"type": "create", "level": "a", "mode": "human"})
        assert replies[0]["type"] == "error" and replies[0]["code"] == "hello_required"

    def test_wrong_proto_rejected(self):
        conn = fresh()
        replies = conn.handle_message({"type": "hello", "proto": 2})
        assert replies[0]["code"] == "unsupported_proto"

    def test_unknown_fields_ignored(self):
        conn = fresh()
        replies = conn.handle_message({"type": "hello", "proto": 1, "extra": "stuff"})
        assert replies[0]["type"] == "hello"


class TestCreate:
    def test_create_returns_initial_frame(self):
        conn = fresh()
        greet(conn)
        replies = conn.handle_message({"type": "create", "level": "a", "mode": "human", "seed": 5})
        frame = replies[0]
        assert frame["type"] == "frame" and frame["step"] == 0
        assert frame["ship"] == [20.0, 100.0]
        assert frame["marked_zones"] == [["marked_light", 80.0, 50.0]]
        assert not frame["done"]

    def test_unknown_level(self):
        conn = fresh()
        greet(conn)
        replies = conn.handle_message({"type": "create", "level": "zz", "mode": "human"})
        assert replies[0]["code"] == "unknown_level"

    def test_manager_raises_unknown_level(self):
        with pytest.raises(UnknownLevel):
            SessionManager(scalars=SC).create_session("nope", "human", 0)

    def test_agent_observe_streams_episode(self):
        conn = fresh()
        greet(conn)
        conn.handle_message({"type": "create", "level": "a", "mode": "agent-observe",
                             "seed": 12345, "agent": {"k": 0.5, "ccl_threshold": 0.5}})
        frames = []
        while conn.active:
            frames.extend(conn.tick())
        assert frames[-1]["type"] == "ended"
        assert frames[-1]["outcome"] == "landed"
        assert len([f for f in frames if f["type"] == "frame"]) == 200

    def test_agent_observe_rejects_inputs(self):
        conn = fresh()
        greet(conn)
        conn.handle_message({"type": "create", "level": "a", "mode": "agent-observe", "seed": 1})
        replies = conn.handle_message({"type": "input", "dir": "left"})
        assert replies[0]["type"] == "error"


class TestHumanStepping:
    def _session(self, level="a", probe_period=0, export_dir=None):
        conn = fresh(export_dir)
        greet(conn)
        conn.handle_message({"type": "create", "level": level, "mode": "human",
                             "seed": 9, "probe_period_steps": probe_period})
        return conn

    def test_steer_left_moves_ship(self):
        conn = self._session()
        conn.handle_message({"type": "input", "dir": "left"})
        frame = conn.tick()[0]
        assert frame["ship"][0] == 19.0
        assert frame["ship"][1] == 99.5

    def test_one_input_per_step_earliest_wins(self):
        conn = self._session()
        conn.handle_message({"type": "input", "dir": "left"})
        conn.handle_message({"type": "input", "dir": "right"})   # late; dropped
        frame = conn.tick()[0]
        assert frame["ship"][0] == 19.0
        frame = conn.tick()[0]   # nothing latched now
        assert frame["ship"][0] == 19.0

    def test_bad_direction_rejected(self):
        conn = self._session()
        replies = conn.handle_message({"type": "input", "dir": "up"})
        assert replies[0]["code"] == "bad_input"

    def test_input_after_done_is_error(self):
        conn = self._session()
        while conn.active:
            conn.tick()
        replies = conn.handle_message({"type": "input", "dir": "left"})
        assert replies[0]["code"] == "input_after_done"

    def test_session_ends_with_outcome(self):
        conn = self._session()
        messages = []
        while conn.active:
            messages.extend(conn.tick())
        assert messages[-1]["type"] == "ended"
        assert messages[-1]["outcome"] in ("landed", "crashed")
        assert conn.tick() == []   # nothing more after the end

    def test_client_end_message(self):
        conn = self._session()
        conn.tick()
        replies = conn.handle_message({"type": "end"})
        assert replies[0]["type"] == "ended"


class TestProbes:
    def test_probe_requested_on_schedule(self):
        conn = fresh()
        greet(conn)
        conn.handle_message({"type": "create", "level": "a", "mode": "human",
                             "seed": 1, "probe_period_steps": 5})
        probe_steps = []
        for _ in range(12):
            for frame in conn.tick():
                if frame.get("probe"):
                    probe_steps.append(frame["step"])
        assert probe_steps == [5, 10]

    def test_response_recorded_with_request_step(self):
        conn = fresh()
        greet(conn)
        conn.handle_message({"type": "create", "level": "a", "mode": "human",
                             "seed": 1, "probe_period_steps": 5})
        for _ in range(5):
            conn.tick()
        assert conn.session.pending_probe_step == 5
        conn.tick()   # answer arrives a step late; still tied to step 5
        assert conn.handle_message({"type": "probe_response", "value": 6}) == []
        assert conn.session.probes == [(5, 6)]

    def test_out_of_scale_value_rejected(self):
        conn = fresh()
        greet(conn)
        conn.handle_message({"type": "create", "level": "a", "mode": "human",
                             "seed": 1, "probe_period_steps": 5})
        for _ in range(5):
            conn.tick()
        replies = conn.handle_message({"type": "probe_response", "value": 9})
        assert replies[0]["type"] == "error"

    def test_unsolicited_response_rejected(self):
        conn = fresh()
        greet(conn)
        conn.handle_message({"type": "create", "level": "a", "mode": "human", "seed": 1})
        replies = conn.handle_message({"type": "probe_response", "value": 3})
        assert replies[0]["type"] == "error"

    def test_probe_after_crash(self, tmp_path):
        conn = fresh(tmp_path)
        greet(conn)
        conn.handle_message({"type": "create", "level": "b", "mode": "human", "seed": 1})
        messages = []
        # steer hard left into the first obstacle of level b
        while conn.active:
            conn.handle_message({"type": "input", "dir": "left"})
            messages.extend(conn.tick())
        crash_frames = [m for m in messages if m["type"] == "frame" and m["crashed"]]
        assert crash_frames and crash_frames[-1]["probe"]
        conn.handle_message({"type": "probe_response", "value": 1})
        assert conn.session.probes[-1][1] == 1


class TestConfidentiality:
    def test_no_hidden_zone_bytes_in_any_frame(self):
        conn = fresh()
        greet(conn)
        conn.handle_message({"type": "create", "level": "d", "mode": "human", "seed": 3})
        payload = []
        while conn.active:
            conn.handle_message({"type": "input", "dir": "none"})
            payload.extend(json.dumps(m) for m in conn.tick())
        blob = "\n".join(payload)
        assert "hidden" not in blob
        for text in payload:
            msg = json.loads(text)
            if msg["type"] == "frame":
                assert msg["marked_zones"] == []

    def test_hidden_drift_still_moves_the_ship(self):
        conn = fresh()
        greet(conn)
        conn.handle_message({"type": "create", "level": "d", "mode": "human", "seed": 3})
        xs = []
        while conn.active:
            for frame in conn.tick():
                if frame["type"] == "frame":
                    xs.append(frame["ship"][0])
        assert len(set(xs)) > 1   # drift displaced the uncontrolled ship


class TestExport:
    def test_export_requires_ended(self, tmp_path):
        manager = SessionManager(scalars=SC)
        session = manager.create_session("a", "human", 4)
        with pytest.raises(SessionNotEnded):
            manager.export_session(session.id, tmp_path)

    def test_human_trace_exports_and_replays(self, tmp_path):
        conn = fresh(tmp_path)
        greet(conn)
        conn.handle_message({"type": "create", "level": "c", "mode": "human", "seed": 11})
        step = 0
        while conn.active:
            conn.handle_message({"type": "input", "dir": "left" if step % 3 == 0 else "none"})
            conn.tick()
            step += 1
        trace_path = tmp_path / f"{conn.session.id}_c.csv"
        trace = read_trace(trace_path)
        assert all(r.ll_soc is None and r.hl_soc is None for r in trace.records)
        level = {lvl.id: lvl for lvl in builtin_levels()}["c"]
        assert replay(trace, level).ok

    def test_probe_csv_rows(self, tmp_path):
        # level f is survivable without input: its drift bands cancel out
        conn = fresh(tmp_path)
        greet(conn)
        conn.handle_message({"type": "create", "level": "f", "mode": "human",
                             "seed": 2, "probe_period_steps": 50})
        step = 0
        while conn.active:
            if step < 6:   # steer from the off-center spawn to mid-corridor
                conn.handle_message({"type": "input", "dir": "right"})
            frames = conn.tick()
            step += 1
            if frames and frames[0].get("probe"):
                conn.handle_message({"type": "probe_response", "value": 4})
        assert conn.session.outcome == "landed"
        probes = (tmp_path / f"{conn.session.id}_f_probes.csv").read_text().strip().splitlines()
        assert probes[0] == "step,value"
        assert probes[1:] == ["50,4", "100,4", "150,4", "200,4"]


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------


async def _read_json_line(reader):
    line = await asyncio.wait_for(reader.readline(), timeout=5)
    return json.loads(line)


def test_tcp_transport_roundtrip(tmp_path):
    async def scenario():
        server = SessionServer(export_dir=tmp_path)
        tcp = await server.serve_tcp("127.0.0.1", 0)
        port = tcp.sockets[0].getsockname()[1]
        reader, writer = await asyncio.open_connection("127.0.0.1", port)

        def send(msg):
            writer.write((json.dumps(msg) + "\n").encode())

        send({"type": "hello", "proto": 1})
        assert (await _read_json_line(reader))["type"] == "hello"
        send({"type": "create", "level": "a", "mode": "human", "seed": 21})
        first = await _read_json_line(reader)
        assert first["type"] == "frame" and first["step"] == 0

        send({"type": "input", "dir": "right"})
        frame = await _read_json_line(reader)
        assert frame["step"] == 1 and frame["ship"][0] == 21.0

        send({"type": "end"})
        while True:
            msg = await _read_json_line(reader)
            if msg["type"] == "ended":
                break
        writer.close()
        tcp.close()
        await tcp.wait_closed()

    asyncio.run(scenario())


def _ws_client_frame(text: str) -> bytes:
    payload = bytearray(text.encode())
    mask = os.urandom(4)
    for i in range(len(payload)):
        payload[i] ^= mask[i % 4]
    header = bytearray([0x81])
    n = len(payload)
    if n < 126:
        header.append(0x80 | n)
    else:
        header.append(0x80 | 126)
        header.extend(struct.pack(">H", n))
    return bytes(header) + mask + bytes(payload)


async def _ws_read_text(reader):
    head = await asyncio.wait_for(reader.readexactly(2), timeout=5)
    length = head[1] & 0x7F
    if length == 126:
        length = struct.unpack(">H", await reader.readexactly(2))[0]
    elif length == 127:
        length = struct.unpack(">Q", await reader.readexactly(8))[0]
    payload = await reader.readexactly(length)
    return json.loads(payload.decode())


def test_websocket_transport_roundtrip(tmp_path):
    async def scenario():
        server = SessionServer(export_dir=tmp_path)
        ws = await server.serve_ws("127.0.0.1", 0)
        port = ws.sockets[0].getsockname()[1]
        reader, writer = await asyncio.open_connection("127.0.0.1", port)

        key = base64.b64encode(os.urandom(16)).decode()
        writer.write((
            f"GET / HTTP/1.1\r\nHost: localhost:{port}\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
        ).encode())
        response = await asyncio.wait_for(reader.readuntil(b"\r\n\r\n"), timeout=5)
        assert b"101 Switching Protocols" in response
        expected = base64.b64encode(
            hashlib.sha1((key + WS_MAGIC).encode()).digest()).decode()
        assert expected.encode() in response

        writer.write(_ws_client_frame(json.dumps({"type": "hello", "proto": 1})))
        assert (await _ws_read_text(reader))["type"] == "hello"
        writer.write(_ws_client_frame(json.dumps(
            {"type": "create", "level": "a", "mode": "human", "seed": 5})))
        frame = await _ws_read_text(reader)
        assert frame["type"] == "frame" and frame["ship"] == [20.0, 100.0]

        writer.write(_ws_client_frame(json.dumps({"type": "input", "dir": "left"})))
        moved = await _ws_read_text(reader)
        assert moved["ship"][0] == 19.0

        writer.close()
        ws.close()
        await ws.wait_closed()

    asyncio.run(scenario())


def test_human_mode_paces_in_real_time(tmp_path):
    async def scenario():
        server = SessionServer(export_dir=tmp_path)
        tcp = await server.serve_tcp("127.0.0.1", 0)
        port = tcp.sockets[0].getsockname()[1]
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        writer.write((json.dumps({"type": "hello", "proto": 1}) + "\n").encode())
        await _read_json_line(reader)
        writer.write((json.dumps({"type": "create", "level": "a", "mode": "human",
                                  "seed": 1}) + "\n").encode())
        await _read_json_line(reader)
        loop = asyncio.get_event_loop()
        t0 = loop.time()
        frames = 0
        while frames < 10:
            msg = await _read_json_line(reader)
            if msg["type"] == "frame":
                frames += 1
        elapsed = loop.time() - t0
        assert 0.3 <= elapsed <= 2.0   # ~0.5 s for 10 frames at 20 fps
        writer.close()
        tcp.close()
        await tcp.wait_closed()

    asyncio.run(scenario())
