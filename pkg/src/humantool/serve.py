"""Transport hosts for live sessions.

The socket transport serves one session per path ``/session/{id}``, speaking
one JSON text per socket message. The operator console drives it with
``session/start`` (subscribe, resuming from a sequence number),
``tools/respond``, ``tools/list``, and ``session/abort``; the host pushes
``tools/call`` and ``session/events`` notifications. Message handling within
a session is serialized; the host's clock is the only source of timeouts.

A synchronous stdio loop with length-prefixed frames covers the embedding
case; it serves the same methods over a pipe pair.
"""

from __future__ import annotations

import asyncio
import logging
from typing import Any, BinaryIO

from . import orchestrator as orch
from . import protocol
from .interaction import Stage, export_tables
from .planner import Planner, PlannerError
from .protocol import (
    Dispatcher,
    HumanToolResponse,
    MessageKind,
    ProtocolError,
    WireMessage,
)
from .schema import HumanToolProfile, render_tool_descriptor
from .store import SessionStore

logger = logging.getLogger(__name__)

_ORCHESTRATOR_ERROR_CODES = {
    orch.UnknownCallError: protocol.UNKNOWN_CALL,
    orch.DuplicateResponseError: protocol.DUPLICATE_RESPONSE,
    orch.PastDeadlineError: protocol.PAST_DEADLINE,
}


def _to_protocol_error(exc: Exception) -> ProtocolError:
    for err_type, code in _ORCHESTRATOR_ERROR_CODES.items():
        if isinstance(exc, err_type):
            return ProtocolError(code, str(exc))
    if isinstance(exc, ProtocolError):
        return exc
    return ProtocolError(protocol.INVALID_MESSAGE, str(exc))


class SessionHost:
    """Owns one live session: starts it on first subscription, serializes
    all mutations, announces calls, and streams log entries to subscribers."""

    def __init__(
        self,
        session_id: str,
        profile: HumanToolProfile,
        goal: str,
        planner: Planner,
        mode: orch.Mode = orch.Mode.HUMAN_TOOL,
        timeout_default: float = orch.DEFAULT_TIMEOUT_SECONDS,
        store: SessionStore | None = None,
    ):
        self.session_id = session_id
        self.profile = profile
        self.goal = goal
        self.planner = planner
        self.mode = mode
        self.timeout_default = timeout_default
        self.store = store
        self.session: orch.Session | None = None
        self.lock = asyncio.Lock()
        self.wake = asyncio.Event()
        self.clients: list[_Client] = []
        self._writer = None
        self._driver: asyncio.Task | None = None
        self._aborted = False

    # -- lifecycle ---------------------------------------------------------

    async def ensure_started(self) -> None:
        async with self.lock:
            if self.session is not None:
                return
            sink = None
            if self.store is not None:
                self._writer = self.store.open_writer(self.session_id)
                sink = self._writer.append
            self.session = orch.start_session(
                self.profile,
                self.goal,
                self.planner,
                mode=self.mode,
                session_id=self.session_id,
                clock=orch.SystemClock(),
                timeout_default=self.timeout_default,
                log_sink=sink,
            )
            self._driver = asyncio.create_task(self._drive(), name=f"drive-{self.session_id}")

    def _cancel_planner(self) -> None:
        # Planners with in-flight requests (the HTTP one) must be cancelled
        # on abort; scripted planners have nothing to cancel.
        cancel = getattr(self.planner, "abort", None)
        if callable(cancel):
            cancel()

    async def shutdown(self) -> None:
        """Graceful stop: abort an open session and let subscribers see it."""
        async with self.lock:
            session = self.session
            if session is not None and not self._aborted and not session.is_terminal:
                self._aborted = True
                orch.abort_session(session)
                self._cancel_planner()
        self.wake.set()
        await self._broadcast()
        if self._driver is not None:
            self._driver.cancel()
        await self._finalize()

    async def _finalize(self) -> None:
        if self.session is not None and self.store is not None:
            self.store.write_snapshot(self.session)
        if self._writer is not None:
            self._writer.close()
            self._writer = None
        if self.session is not None:
            # Post-terminal wire errors still append to the in-memory log,
            # but nothing may touch the closed file.
            self.session.log_sink = None

    # -- driver ------------------------------------------------------------

    async def _drive(self) -> None:
        try:
            while True:
                # Clear the wake flag before reading state so a response that
                # lands mid-iteration is never lost.
                self.wake.clear()
                async with self.lock:
                    session = self.session
                    assert session is not None
                    if session.is_terminal or self._aborted:
                        break
                    if session.pending_call is None:
                        orch.step(session, self.planner)
                        call = None
                        remaining = 0.0
                    else:
                        call = session.pending_call
                        remaining = (call.deadline - session.now()).total_seconds()
                await self._broadcast()
                if call is None:
                    continue
                if remaining > 0:
                    try:
                        await asyncio.wait_for(self.wake.wait(), timeout=remaining)
                        continue
                    except asyncio.TimeoutError:
                        pass
                async with self.lock:
                    pending = self.session.pending_call
                    if pending is not None and pending.call_id == call.call_id:
                        orch.handle_timeout(self.session, self.planner)
                await self._broadcast()
            await self._broadcast()
            await self._finalize()
        except asyncio.CancelledError:
            raise
        except Exception:
            logger.exception("session driver for %s crashed", self.session_id)

    # -- broadcasting --------------------------------------------------------

    async def _broadcast(self) -> None:
        async with self.lock:
            await self._broadcast_locked()

    async def _broadcast_locked(self) -> None:
        session = self.session
        if session is None:
            return
        entries = session.event_log
        stale: list[_Client] = []
        for client in self.clients:
            new_entries = [e.to_dict() for e in entries[client.cursor :]]
            frames: list[WireMessage] = []
            if new_entries:
                frames.append(
                    protocol.notification(
                        protocol.METHOD_SESSION_EVENTS,
                        {"session_id": self.session_id, "entries": new_entries},
                    )
                )
            pending = session.pending_call
            if pending is not None and pending.call_id not in client.announced:
                frames.append(protocol.notification(protocol.METHOD_TOOLS_CALL, pending.to_dict()))
            if not frames:
                continue
            try:
                async with client.send_lock:
                    for frame in frames:
                        await client.send(protocol.encode(frame).decode("utf-8"))
            except Exception:
                stale.append(client)
                continue
            client.cursor = len(entries)
            if pending is not None:
                client.announced.add(pending.call_id)
        for client in stale:
            if client in self.clients:
                self.clients.remove(client)

    # -- request handlers ----------------------------------------------------

    async def handle_session_start(self, client: "_Client", payload: dict[str, Any]) -> dict[str, Any]:
        last_seen = int(payload.get("last_seen_sequence", 0) or 0)
        await self.ensure_started()
        client.cursor = last_seen
        client.announced.clear()
        if client not in self.clients:
            self.clients.append(client)
        reply = {
            "session_id": self.session_id,
            "mode": self.mode.value,
            "goal": self.goal,
            "tables": export_tables(),
            "descriptor": render_tool_descriptor(self.profile).to_dict(),
        }
        return reply

    async def handle_tools_respond(self, payload: dict[str, Any]) -> dict[str, Any]:
        tool_response = HumanToolResponse.from_dict(payload, from_wire=True)
        async with self.lock:
            if self.session is None:
                raise ProtocolError(protocol.UNKNOWN_CALL, "session not started")
            try:
                orch.deliver_response(self.session, tool_response, self.planner)
            except (orch.OrchestrationError, ProtocolError) as exc:
                raise _to_protocol_error(exc) from exc
        self.wake.set()
        await self._broadcast()
        return {"status": "accepted", "call_id": tool_response.call_id}

    async def handle_abort(self) -> dict[str, Any]:
        async with self.lock:
            if self.session is not None and not self.session.is_terminal:
                self._aborted = True
                orch.abort_session(self.session)
                self._cancel_planner()
        self.wake.set()
        await self._broadcast()
        await self._finalize()
        return {"status": "aborted", "session_id": self.session_id}

    def descriptors(self) -> list[dict[str, Any]]:
        return [render_tool_descriptor(self.profile).to_dict()]


class _Client:
    def __init__(self, connection):
        self.connection = connection
        self.cursor = 0
        self.announced: set[str] = set()
        self.send_lock = asyncio.Lock()

    async def send(self, text: str) -> None:
        await self.connection.send(text)


class SocketServer:
    """Serves session hosts over the socket transport at /session/{id}."""

    def __init__(self, hosts: dict[str, SessionHost]):
        self.hosts = hosts
        self._server = None

    async def handle_connection(self, connection) -> None:
        path = connection.request.path
        if not path.startswith("/session/"):
            await connection.close(code=1008, reason="unknown path")
            return
        session_id = path[len("/session/") :]
        host = self.hosts.get(session_id)
        if host is None:
            frame = protocol.error_message(None, protocol.UNKNOWN_CALL, f"unknown session {session_id!r}")
            await connection.send(protocol.encode(frame).decode("utf-8"))
            await connection.close(code=1008, reason="unknown session")
            return
        client = _Client(connection)
        try:
            async for raw in connection:
                reply = await self._handle_message(host, client, raw)
                if reply is not None:
                    async with client.send_lock:
                        await connection.send(protocol.encode(reply).decode("utf-8"))
                await host._broadcast()
        finally:
            if client in host.clients:
                host.clients.remove(client)

    async def _handle_message(self, host: SessionHost, client: _Client, raw: str | bytes) -> WireMessage | None:
        try:
            message = protocol.decode(raw if isinstance(raw, (bytes, bytearray)) else raw.encode("utf-8"))
        except protocol.FrameError as exc:
            return protocol.error_message(None, protocol.INVALID_MESSAGE, str(exc))
        except ProtocolError as exc:
            return protocol.error_message(None, exc.code, exc.message, exc.data)

        if message.kind not in (MessageKind.REQUEST, MessageKind.NOTIFICATION):
            return protocol.error_message(
                message.id, protocol.INVALID_MESSAGE, f"cannot dispatch {message.kind.value} messages"
            )
        try:
            payload = message.payload or {}
            if message.method == protocol.METHOD_SESSION_START:
                result = await host.handle_session_start(client, payload)
            elif message.method == protocol.METHOD_TOOLS_RESPOND:
                result = await host.handle_tools_respond(payload)
            elif message.method == protocol.METHOD_TOOLS_LIST:
                result = {"tools": host.descriptors()}
            elif message.method == protocol.METHOD_SESSION_ABORT:
                result = await host.handle_abort()
            else:
                raise ProtocolError(protocol.UNKNOWN_METHOD, f"unknown method {message.method!r}")
        except ProtocolError as exc:
            return protocol.error_message(message.id, exc.code, exc.message, exc.data)
        except PlannerError as exc:
            return protocol.error_message(message.id, protocol.INVALID_MESSAGE, f"planner failure: {exc}")
        if message.kind is MessageKind.NOTIFICATION:
            return None
        return protocol.response(message.id, result)

    async def serve(self, host: str, port: int):
        from websockets.asyncio.server import serve as ws_serve

        self._server = await ws_serve(self.handle_connection, host, port)
        return self._server

    async def shutdown(self) -> None:
        for session_host in self.hosts.values():
            await session_host.shutdown()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()


async def run_socket_server(
    hosts: dict[str, SessionHost],
    host: str,
    port: int,
    ready: asyncio.Event | None = None,
    stop: asyncio.Event | None = None,
) -> None:
    server = SocketServer(hosts)
    await server.serve(host, port)
    logger.info("socket transport listening on ws://%s:%d", host, port)
    if ready is not None:
        ready.set()
    try:
        if stop is not None:
            await stop.wait()
        else:
            await asyncio.Future()
    except asyncio.CancelledError:
        pass
    finally:
        await server.shutdown()


# ---------------------------------------------------------------------------
# Stdio transport
# ---------------------------------------------------------------------------


class StdioServer:
    """Single-session server over length-prefixed frames on a stream pair.

    Deadlines are checked lazily before each incoming frame; responses for
    expired calls are rejected exactly as on the socket transport.
    """

    def __init__(self, host_session: orch.Session, planner: Planner):
        self.session = host_session
        self.planner = planner
        self.dispatcher = Dispatcher()
        self.dispatcher.register(protocol.METHOD_TOOLS_LIST, self._on_tools_list)
        self.dispatcher.register(protocol.METHOD_TOOLS_RESPOND, self._on_tools_respond)
        self.dispatcher.register(protocol.METHOD_SESSION_START, self._on_session_start)
        self.dispatcher.register(protocol.METHOD_SESSION_ABORT, self._on_session_abort)
        self._cursor = 0
        self._announced: set[str] = set()

    def _on_tools_list(self, message: WireMessage) -> dict[str, Any]:
        return {"tools": [render_tool_descriptor(self.session.profile).to_dict()]}

    def _on_session_start(self, message: WireMessage) -> dict[str, Any]:
        self._cursor = int((message.payload or {}).get("last_seen_sequence", 0) or 0)
        return {"session_id": self.session.session_id, "tables": export_tables()}

    def _on_session_abort(self, message: WireMessage) -> dict[str, Any]:
        if not self.session.is_terminal:
            orch.abort_session(self.session)
        return {"status": "aborted", "session_id": self.session.session_id}

    def _on_tools_respond(self, message: WireMessage) -> dict[str, Any]:
        tool_response = HumanToolResponse.from_dict(message.payload or {}, from_wire=True)
        try:
            orch.deliver_response(self.session, tool_response, self.planner)
        except (orch.OrchestrationError, ProtocolError) as exc:
            raise _to_protocol_error(exc) from exc
        return {"status": "accepted", "call_id": tool_response.call_id}

    def _check_deadline(self) -> None:
        pending = self.session.pending_call
        if pending is not None and self.session.now() >= pending.deadline:
            orch.handle_timeout(self.session, self.planner)

    def _advance(self) -> None:
        while self.session.pending_call is None and not self.session.is_terminal:
            if self.session.stage is Stage.DURING:
                orch.step(self.session, self.planner)
            else:
                break

    def pump(self, stdin: BinaryIO, stdout: BinaryIO) -> None:
        """Serve frames until EOF or the session is terminal."""
        self._advance()
        self._flush(stdout)
        while not self.session.is_terminal:
            message = protocol.read_frame(stdin)
            if message is None:
                break
            self._check_deadline()
            reply = self.dispatcher_dispatch(message)
            if reply is not None:
                protocol.write_frame(stdout, reply)
            self._advance()
            self._flush(stdout)
        self._flush(stdout)

    def dispatcher_dispatch(self, message: WireMessage) -> WireMessage | None:
        return self.dispatcher.dispatch(message)

    def _flush(self, stdout: BinaryIO) -> None:
        entries = self.session.event_log
        if self._cursor < len(entries):
            frame = protocol.notification(
                protocol.METHOD_SESSION_EVENTS,
                {
                    "session_id": self.session.session_id,
                    "entries": [e.to_dict() for e in entries[self._cursor :]],
                },
            )
            protocol.write_frame(stdout, frame)
            self._cursor = len(entries)
        pending = self.session.pending_call
        if pending is not None and pending.call_id not in self._announced:
            self._announced.add(pending.call_id)
            protocol.write_frame(stdout, protocol.notification(protocol.METHOD_TOOLS_CALL, pending.to_dict()))
