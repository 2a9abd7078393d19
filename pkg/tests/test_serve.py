"""Socket and stdio transport integration: subscribe, respond, resume,
abort, and error codes over a live server."""

from __future__ import annotations

import asyncio
import io
import json
from pathlib import Path

import pytest
from websockets.asyncio.client import connect

from humantool import orchestrator as orch
from humantool import protocol, store
from humantool.planner import ScriptedPlanner
from humantool.serve import SessionHost, SocketServer, StdioServer
from humantool.taskgraph import RequirementFlag, TaskNode

from conftest import leaf, make_profile, scripted_plan, tree_of

AUTH = {RequirementFlag.SAFETY_CRITICAL}


def approval_plan():
    tree = tree_of(
        TaskNode(id="root", description="book the trip", children=["prep", "confirm"]),
        leaf("prep", description="assemble options"),
        leaf("confirm", AUTH, description="final booking"),
    )
    return scripted_plan(tree, goal="book the trip")


class Client:
    """Test-side console: decodes frames and files them by kind."""

    def __init__(self, connection):
        self.connection = connection
        self.next_id = 1
        self.calls: list[dict] = []
        self.entries: dict[int, dict] = {}
        self.errors: list[dict] = []
        self._consumed_calls = 0

    async def request(self, method: str, payload=None, timeout: float = 5.0) -> protocol.WireMessage:
        msg_id = self.next_id
        self.next_id += 1
        frame = protocol.request(method, payload, id=msg_id)
        await self.connection.send(protocol.encode(frame).decode())
        deadline = asyncio.get_event_loop().time() + timeout
        while True:
            message = await self.recv(timeout=deadline - asyncio.get_event_loop().time())
            if message.kind in (protocol.MessageKind.RESPONSE, protocol.MessageKind.ERROR) and message.id == msg_id:
                return message

    async def recv(self, timeout: float = 5.0) -> protocol.WireMessage:
        raw = await asyncio.wait_for(self.connection.recv(), timeout=timeout)
        message = protocol.decode(raw if isinstance(raw, bytes) else raw.encode())
        if message.kind is protocol.MessageKind.NOTIFICATION:
            if message.method == protocol.METHOD_TOOLS_CALL:
                self.calls.append(message.payload)
            elif message.method == protocol.METHOD_SESSION_EVENTS:
                for entry in message.payload["entries"]:
                    self.entries[entry["sequence_number"]] = entry
        return message

    async def wait_for_call(self, timeout: float = 5.0) -> dict:
        """Next not-yet-consumed tools/call, receiving frames as needed."""
        deadline = asyncio.get_event_loop().time() + timeout
        while len(self.calls) <= self._consumed_calls:
            await self.recv(timeout=deadline - asyncio.get_event_loop().time())
        call = self.calls[self._consumed_calls]
        self._consumed_calls += 1
        return call

    async def respond(self, call: dict, outcome: dict) -> protocol.WireMessage:
        payload = {
            "call_id": call["call_id"],
            "outcome": outcome,
            "received_at": protocol.isoformat_utc(orch.SystemClock().now()),
        }
        return await self.request(protocol.METHOD_TOOLS_RESPOND, payload)


async def start_server(tmp_path, plan, mode=orch.Mode.HUMAN_TOOL, timeout=30.0):
    host = SessionHost(
        "s-live",
        make_profile(),
        plan.goal_pattern,
        ScriptedPlanner(plan),
        mode=mode,
        timeout_default=timeout,
        store=store.SessionStore(tmp_path),
    )
    server = SocketServer({"s-live": host})
    ws_server = await server.serve("127.0.0.1", 0)
    port = ws_server.sockets[0].getsockname()[1]
    return server, host, port


def test_full_session_over_socket(tmp_path):
    async def scenario():
        server, host, port = await start_server(tmp_path, approval_plan())
        try:
            async with connect(f"ws://127.0.0.1:{port}/session/s-live") as connection:
                client = Client(connection)
                reply = await client.request(protocol.METHOD_SESSION_START, {"last_seen_sequence": 0})
                assert reply.kind is protocol.MessageKind.RESPONSE
                assert reply.payload["tables"]["version"] == "interaction-tables/1"

                listed = await client.request(protocol.METHOD_TOOLS_LIST)
                assert len(listed.payload["tools"]) == 1
                assert listed.payload["tools"][0]["annotations"]["may_refuse"] is True

                prime = await client.wait_for_call()
                assert prime["behavior"] == "prime"
                ack = await client.respond(prime, {"kind": "answered", "payload": "ready"})
                assert ack.kind is protocol.MessageKind.RESPONSE

                approve = await client.wait_for_call()
                assert approve["behavior"] == "approve"
                assert approve["response_kind"] == "approval"
                await client.respond(approve, {"kind": "answered", "payload": True})

                closing = await client.wait_for_call()
                assert closing["stage"] == "ending"
                await client.respond(closing, {"kind": "answered", "payload": "thanks"})

                while host.session is None or not host.session.is_terminal:
                    await asyncio.sleep(0.02)
                # Drain remaining event notifications.
                try:
                    while True:
                        await client.recv(timeout=0.3)
                except (asyncio.TimeoutError, Exception):
                    pass
        finally:
            await server.shutdown()
        assert host.session.is_terminal
        census = {n.status.value for n in host.session.tree.leaves()}
        assert census == {"done"}
        # Persisted log matches what the subscriber saw, seq for seq.
        entries = store.read_log(tmp_path / "sessions" / "s-live" / "events.ndjson")
        assert entries

    asyncio.run(scenario())


def test_duplicate_and_unknown_respond_codes(tmp_path):
    async def scenario():
        server, host, port = await start_server(tmp_path, approval_plan())
        try:
            async with connect(f"ws://127.0.0.1:{port}/session/s-live") as connection:
                client = Client(connection)
                await client.request(protocol.METHOD_SESSION_START, {"last_seen_sequence": 0})

                unknown = await client.respond({"call_id": "nope"}, {"kind": "answered", "payload": "x"})
                assert unknown.kind is protocol.MessageKind.ERROR
                assert unknown.error["code"] == protocol.UNKNOWN_CALL

                prime = await client.wait_for_call()
                first = await client.respond(prime, {"kind": "answered", "payload": "ready"})
                assert first.kind is protocol.MessageKind.RESPONSE
                second = await client.respond(prime, {"kind": "answered", "payload": "again"})
                assert second.kind is protocol.MessageKind.ERROR
                assert second.error["code"] == protocol.DUPLICATE_RESPONSE

                forged = await client.respond(prime, {"kind": "timed_out"})
                assert forged.error["code"] == protocol.INVALID_MESSAGE
        finally:
            await server.shutdown()

    asyncio.run(scenario())


def test_reconnect_resumes_from_sequence(tmp_path):
    async def scenario():
        server, host, port = await start_server(tmp_path, approval_plan())
        try:
            async with connect(f"ws://127.0.0.1:{port}/session/s-live") as connection:
                client = Client(connection)
                await client.request(protocol.METHOD_SESSION_START, {"last_seen_sequence": 0})
                prime = await client.wait_for_call()
                await client.respond(prime, {"kind": "answered", "payload": "ready"})
                await client.wait_for_call()  # approve appears
            last_seen = max(client.entries)
            first_batch = dict(client.entries)

            async with connect(f"ws://127.0.0.1:{port}/session/s-live") as connection:
                client2 = Client(connection)
                await client2.request(protocol.METHOD_SESSION_START, {"last_seen_sequence": last_seen})
                approve = await client2.wait_for_call()  # pending call re-announced
                assert approve["behavior"] == "approve"
                await client2.respond(approve, {"kind": "answered", "payload": True})
                closing = await client2.wait_for_call()
                await client2.respond(closing, {"kind": "answered", "payload": "bye"})
                while host.session is None or not host.session.is_terminal:
                    await asyncio.sleep(0.02)
                try:
                    while True:
                        await client2.recv(timeout=0.3)
                except (asyncio.TimeoutError, Exception):
                    pass
            # No overlap: resumed entries start after last_seen.
            assert min(client2.entries) == last_seen + 1
            combined = first_batch | client2.entries
            log = store.read_log(tmp_path / "sessions" / "s-live" / "events.ndjson")
            assert sorted(combined) == [e.sequence_number for e in log]
        finally:
            await server.shutdown()

    asyncio.run(scenario())


def test_abort_mid_call_logs_session_aborted(tmp_path):
    async def scenario():
        server, host, port = await start_server(tmp_path, approval_plan())
        try:
            async with connect(f"ws://127.0.0.1:{port}/session/s-live") as connection:
                client = Client(connection)
                await client.request(protocol.METHOD_SESSION_START, {"last_seen_sequence": 0})
                await client.wait_for_call()  # prime pending
                reply = await client.request(protocol.METHOD_SESSION_ABORT, {})
                assert reply.payload["status"] == "aborted"
        finally:
            await server.shutdown()
        entries = store.read_log(tmp_path / "sessions" / "s-live" / "events.ndjson")
        stage_changes = [e for e in entries if e.kind is store.EventKind.STAGE_CHANGE]
        assert stage_changes[-1].body["event"] == "session_aborted"
        assert host.session.is_terminal

    asyncio.run(scenario())


def test_graceful_shutdown_aborts_open_session(tmp_path):
    async def scenario():
        server, host, port = await start_server(tmp_path, approval_plan())
        async with connect(f"ws://127.0.0.1:{port}/session/s-live") as connection:
            client = Client(connection)
            await client.request(protocol.METHOD_SESSION_START, {"last_seen_sequence": 0})
            prime = await client.wait_for_call()  # leave it unanswered
            assert prime["behavior"] == "prime"
        await server.shutdown()
        assert host.session is not None and host.session.is_terminal
        # The open call was resolved by the abort, never left dangling.
        assert all(state != "pending" for state in host.session._call_registry.values())
        entries = store.read_log(tmp_path / "sessions" / "s-live" / "events.ndjson")
        stage_changes = [e for e in entries if e.kind is store.EventKind.STAGE_CHANGE]
        assert stage_changes[-1].body["event"] == "session_aborted"
        outcomes = [
            e.body["record"]["outcome"] for e in entries if e.kind is store.EventKind.INVOCATION
        ]
        assert outcomes[-1] == "timed_out"

    asyncio.run(scenario())


def test_unknown_session_path_rejected(tmp_path):
    async def scenario():
        server, host, port = await start_server(tmp_path, approval_plan())
        try:
            async with connect(f"ws://127.0.0.1:{port}/session/ghost") as connection:
                raw = await asyncio.wait_for(connection.recv(), timeout=5)
                message = protocol.decode(raw.encode() if isinstance(raw, str) else raw)
                assert message.kind is protocol.MessageKind.ERROR
                assert message.error["code"] == protocol.UNKNOWN_CALL
        finally:
            await server.shutdown()

    asyncio.run(scenario())


def test_occupied_port_is_a_clear_error(tmp_path):
    async def scenario():
        server, host, port = await start_server(tmp_path, approval_plan())
        try:
            clash = SocketServer({})
            with pytest.raises(OSError):
                await clash.serve("127.0.0.1", port)
        finally:
            await server.shutdown()

    asyncio.run(scenario())


class TestStdioTransport:
    def test_pump_serves_a_session_over_pipes(self):
        plan = approval_plan()
        planner = ScriptedPlanner(plan)
        clock = orch.SimClock()
        session = orch.start_session(
            make_profile(), "book the trip", planner, session_id="s-stdio", clock=clock
        )
        server = StdioServer(session, planner)

        # Scripted client: answer the prime, then approve, then close out.
        def respond_to(call: dict, payload) -> bytes:
            response = {
                "call_id": call["call_id"],
                "outcome": {"kind": "answered", "payload": payload},
                "received_at": protocol.isoformat_utc(clock.now()),
            }
            return protocol.encode_frame(
                protocol.request(protocol.METHOD_TOOLS_RESPOND, response, id=call["call_id"])
            )

        stdout = io.BytesIO()
        server._advance()
        server._flush(stdout)
        for payload in ("ready", True, "bye"):
            frames = []
            buf = stdout.getvalue()
            while buf:
                message, used = protocol.decode_frame(buf)
                frames.append(message)
                buf = buf[used:]
            call = next(
                m.payload for m in reversed(frames) if m.method == protocol.METHOD_TOOLS_CALL
            )
            stdin = io.BytesIO(respond_to(call, payload))
            reply = server.dispatcher_dispatch(protocol.read_frame(stdin))
            assert reply.kind is protocol.MessageKind.RESPONSE
            server._advance()
            server._flush(stdout)
        assert session.is_terminal
        assert {n.status.value for n in session.tree.leaves()} == {"done"}

    def test_pump_loop_end_to_end(self):
        plan = approval_plan()
        planner = ScriptedPlanner(plan)
        clock = orch.SimClock()
        session = orch.start_session(
            make_profile(), "book the trip", planner, session_id="s-stdio2", clock=clock
        )
        server = StdioServer(session, planner)

        # Pre-script every inbound frame; the pump interleaves them with the
        # outbound calls it produces (call order is deterministic).
        session_peek = orch.start_session(
            make_profile(), "book the trip", ScriptedPlanner(plan), session_id="s-peek", clock=orch.SimClock()
        )
        assert session_peek.pending_call.behavior.value == "prime"

        def frame(call_id: str, payload) -> bytes:
            return protocol.encode_frame(
                protocol.request(
                    protocol.METHOD_TOOLS_RESPOND,
                    {
                        "call_id": call_id,
                        "outcome": {"kind": "answered", "payload": payload},
                        "received_at": protocol.isoformat_utc(clock.now()),
                    },
                    id=call_id,
                )
            )

        stdin = io.BytesIO(
            frame("s-stdio2-c001", "ready") + frame("s-stdio2-c002", True) + frame("s-stdio2-c003", "bye")
        )
        stdout = io.BytesIO()
        server.pump(stdin, stdout)
        assert session.is_terminal
        frames = []
        buf = stdout.getvalue()
        while buf:
            message, used = protocol.decode_frame(buf)
            frames.append(message)
            buf = buf[used:]
        behaviors = [
            m.payload["behavior"] for m in frames if m.method == protocol.METHOD_TOOLS_CALL
        ]
        assert behaviors == ["prime", "approve", "reflect"]
