"""Network transports for the session service.

Two endpoints share the same protocol engine:

* newline-delimited JSON over plain TCP, handy for scripts and tests;
* the same messages over WebSocket (RFC 6455, text frames) for browsers.

Human sessions are paced at 20 steps per second of wall time; late inputs
are dropped by the engine, never queued.  Agent-observe sessions honor the
``speed`` field of the create message (0 means unthrottled).
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import json
import struct
from pathlib import Path

from .config import load_scalars
from .service import ProtocolConnection, SessionManager

WS_MAGIC = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def _encode(msg: dict) -> str:
    return json.dumps(msg, separators=(",", ":"))


class _ConnectionDriver:
    """Pump one client: incoming messages, plus the real-time step ticker."""

    def __init__(self, engine: ProtocolConnection, send, step_seconds: float):
        self.engine = engine
        self.send = send
        self.step_seconds = step_seconds
        self.lock = asyncio.Lock()

    async def handle(self, msg: dict) -> None:
        async with self.lock:
            replies = self.engine.handle_message(msg)
        for reply in replies:
            await self.send(reply)

    async def run_ticker(self) -> None:
        while True:
            await asyncio.sleep(self._interval())
            async with self.lock:
                frames = self.engine.tick()
            for frame in frames:
                await self.send(frame)

    def _interval(self) -> float:
        if self.engine.session is not None and self.engine.session.mode == "agent-observe":
            if self.engine.speed <= 0:
                return 0.0
            return self.step_seconds / self.engine.speed
        return self.step_seconds


async def _drive(driver: _ConnectionDriver, incoming) -> None:
    ticker = asyncio.create_task(driver.run_ticker())
    try:
        async for raw in incoming:
            text = raw.strip()
            if not text:
                continue
            try:
                msg = json.loads(text)
            except json.JSONDecodeError:
                await driver.send({"type": "error", "code": "bad_json"})
                continue
            await driver.handle(msg)
    finally:
        ticker.cancel()


class SessionServer:
    """Owns the manager and serves both transports."""

    def __init__(self, export_dir: Path | None = None, scalars=None):
        self.manager = SessionManager(scalars=scalars if scalars is not None else load_scalars())
        self.export_dir = export_dir
        steps_per_second = self.manager.scalars.world.steps_per_second
        self.step_seconds = 1.0 / steps_per_second

    def _engine(self) -> ProtocolConnection:
        return ProtocolConnection(self.manager, export_dir=self.export_dir)

    # --- newline-delimited JSON over TCP -----------------------------------

    async def serve_tcp(self, host: str, port: int) -> asyncio.AbstractServer:
        return await asyncio.start_server(self._tcp_client, host, port)

    async def _tcp_client(self, reader: asyncio.StreamReader,
                          writer: asyncio.StreamWriter) -> None:
        async def send(msg: dict) -> None:
            writer.write((_encode(msg) + "\n").encode("utf-8"))
            await writer.drain()

        async def incoming():
            while True:
                line = await reader.readline()
                if not line:
                    return
                yield line.decode("utf-8")

        driver = _ConnectionDriver(self._engine(), send, self.step_seconds)
        try:
            await _drive(driver, incoming())
        except ConnectionResetError:
            pass
        finally:
            writer.close()

    # --- WebSocket ----------------------------------------------------------

    async def serve_ws(self, host: str, port: int) -> asyncio.AbstractServer:
        return await asyncio.start_server(self._ws_client, host, port)

    async def _ws_client(self, reader: asyncio.StreamReader,
                         writer: asyncio.StreamWriter) -> None:
        try:
            if not await self._ws_handshake(reader, writer):
                writer.close()
                return

            async def send(msg: dict) -> None:
                writer.write(_ws_frame(_encode(msg)))
                await writer.drain()

            async def incoming():
                while True:
                    frame = await _ws_read_frame(reader)
                    if frame is None:
                        return
                    opcode, payload = frame
                    if opcode == 0x8:        # close
                        writer.write(_ws_close_frame())
                        await writer.drain()
                        return
                    if opcode == 0x9:        # ping -> pong
                        writer.write(_ws_control_frame(0xA, payload))
                        await writer.drain()
                        continue
                    if opcode in (0x1, 0x2):
                        yield payload.decode("utf-8")

            driver = _ConnectionDriver(self._engine(), send, self.step_seconds)
            await _drive(driver, incoming())
        except (ConnectionResetError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    async def _ws_handshake(self, reader: asyncio.StreamReader,
                            writer: asyncio.StreamWriter) -> bool:
        request = await reader.readuntil(b"\r\n\r\n")
        headers = {}
        for line in request.decode("latin-1").split("\r\n")[1:]:
            if ":" in line:
                name, value = line.split(":", 1)
                headers[name.strip().lower()] = value.strip()
        key = headers.get("sec-websocket-key")
        if key is None or "websocket" not in headers.get("upgrade", "").lower():
            writer.write(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            await writer.drain()
            return False
        accept = base64.b64encode(
            hashlib.sha1((key + WS_MAGIC).encode("ascii")).digest()).decode("ascii")
        writer.write(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\n"
            b"Connection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept.encode("ascii") + b"\r\n\r\n")
        await writer.drain()
        return True


def _ws_frame(text: str) -> bytes:
    payload = text.encode("utf-8")
    header = bytearray([0x81])               # FIN + text opcode
    n = len(payload)
    if n < 126:
        header.append(n)
    elif n < 1 << 16:
        header.append(126)
        header.extend(struct.pack(">H", n))
    else:
        header.append(127)
        header.extend(struct.pack(">Q", n))
    return bytes(header) + payload


def _ws_control_frame(opcode: int, payload: bytes) -> bytes:
    return bytes([0x80 | opcode, len(payload)]) + payload


def _ws_close_frame() -> bytes:
    return _ws_control_frame(0x8, b"")


async def _ws_read_frame(reader: asyncio.StreamReader):
    """One frame from a client; returns (opcode, payload) or None at EOF."""
    try:
        head = await reader.readexactly(2)
    except (asyncio.IncompleteReadError, ConnectionResetError):
        return None
    opcode = head[0] & 0x0F
    masked = bool(head[1] & 0x80)
    length = head[1] & 0x7F
    if length == 126:
        length = struct.unpack(">H", await reader.readexactly(2))[0]
    elif length == 127:
        length = struct.unpack(">Q", await reader.readexactly(8))[0]
    mask = await reader.readexactly(4) if masked else b"\x00" * 4
    payload = bytearray(await reader.readexactly(length))
    if masked:
        for i in range(length):
            payload[i] ^= mask[i % 4]
    return opcode, bytes(payload)


def serve_forever(host: str = "127.0.0.1", tcp_port: int = 8765,
                  ws_port: int | None = None, export_dir: Path | None = None) -> None:
    """Run the service until interrupted; used by the CLI ``serve`` command."""

    async def main():
        server = SessionServer(export_dir=export_dir)
        tcp = await server.serve_tcp(host, tcp_port)
        notice = f"session service: ndjson tcp://{host}:{tcp_port}"
        if ws_port is not None:
            await server.serve_ws(host, ws_port)
            notice += f", ws://{host}:{ws_port}"
        if export_dir is not None:
            notice += f", exports -> {export_dir}"
        print(notice, flush=True)
        async with tcp:
            await asyncio.Event().wait()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
