"""Operator command line.

Subcommands: profile-init, profile-validate, run, serve, replay, report,
tables. Exit codes follow one contract everywhere: 0 success, 1 domain
failure (a session that ended with failed authority nodes), 2 usage or data
errors. Scripted runs are fully offline and use a simulated clock, so their
logs, summaries, and reports are deterministic byte for byte.
"""

from __future__ import annotations

import argparse
import asyncio
import hashlib
import json
import sys
from pathlib import Path
from typing import Any

from . import orchestrator as orch
from . import report as report_mod
from . import store as store_mod
from .interaction import export_tables
from .planner import LLMEndpointConfig, LLMPlanner, PlannerError, ScriptedPlan, ScriptedPlanner
from .schema import (
    Domain,
    HumanToolProfile,
    ProfileError,
    profile_from_questionnaire,
    validate_profile,
)
from .serve import SessionHost, StdioServer, run_socket_server

EXIT_OK = 0
EXIT_DOMAIN_FAILURE = 1
EXIT_USAGE = 2

_QUESTION_PROMPTS = (
    "creative judgment and original thinking",
    "hands-on skill in this domain",
    "ability to act on and gather from the outside world",
    "domain knowledge",
    "access to private or exclusive information",
    "clarity about personal preferences and constraints",
    "decision delegation (1 = keep every decision, 5 = hand them to the AI)",
    "information sharing authorization",
)


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = EXIT_USAGE):
        super().__init__(message)
        self.exit_code = exit_code


def _resolve(workdir: Path, path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    return p if p.is_absolute() else workdir / p


def _load_json(path: Path, what: str) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} is not valid JSON ({path}:{exc.lineno}): {exc.msg}") from None


def _load_profile(path: Path) -> HumanToolProfile:
    data = _load_json(path, "profile")
    try:
        profile = HumanToolProfile.from_dict(data)
    except ProfileError as exc:
        raise CliError(str(exc)) from None
    result = validate_profile(profile)
    if not result.ok:
        raise CliError("profile is invalid: " + "; ".join(str(v) for v in result.violations))
    return profile


def _emit(args: argparse.Namespace, text: str, payload: dict[str, Any] | None = None) -> None:
    if getattr(args, "json", False) and payload is not None:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


# ---------------------------------------------------------------------------
# profile-init / profile-validate
# ---------------------------------------------------------------------------


def _parse_answers(raw: str) -> list[int]:
    """Accept a JSON array ('[1,2,...]') or a comma/space separated list."""
    text = raw.strip()
    if text.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            raise CliError(f"answers are not a valid JSON array: {raw!r}") from None
        if not isinstance(data, list) or not all(isinstance(x, int) for x in data):
            raise CliError("answers JSON must be an array of integers")
        return data
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise CliError(f"answers must be integers, got {raw!r}") from None


def _prompt_answers() -> list[int]:
    print("Answer each item with the option number you chose (1-5; 1 is the first option).")
    answers = []
    for i, label in enumerate(_QUESTION_PROMPTS, start=1):
        raw = input(f"  Q{i} {label}: ").strip()
        answers.extend(_parse_answers(raw))
    return answers


def cmd_profile_init(args: argparse.Namespace, workdir: Path) -> int:
    answers = _parse_answers(args.answers) if args.answers else _prompt_answers()
    try:
        profile = profile_from_questionnaire(answers, args.domain, human_id=args.human_id)
    except ProfileError as exc:
        raise CliError(str(exc)) from None
    result = validate_profile(profile)
    if not result.ok:
        raise CliError("profile is invalid: " + "; ".join(str(v) for v in result.violations))
    out = _resolve(workdir, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(profile.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(args, f"wrote profile {profile.human_id} to {out}", {"path": str(out), "profile": profile.to_dict()})
    return EXIT_OK


def cmd_profile_validate(args: argparse.Namespace, workdir: Path) -> int:
    path = _resolve(workdir, args.profile)
    data = _load_json(path, "profile")
    try:
        profile = HumanToolProfile.from_dict(data)
    except ProfileError as exc:
        raise CliError(str(exc)) from None
    result = validate_profile(profile, max_preference_notes=args.max_notes)
    if result.ok:
        _emit(args, f"profile {profile.human_id}: ok", {"ok": True})
        return EXIT_OK
    lines = [str(v) for v in result.violations]
    _emit(args, "profile invalid:\n  " + "\n  ".join(lines), {"ok": False, "violations": lines})
    return EXIT_USAGE


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _derived_session_id(*parts: str) -> str:
    digest = hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()
    return f"run-{digest[:8]}"


def _summary_text(summary: orch.SessionSummary, report_path: Path | None) -> str:
    census = " ".join(f"{k}={v}" for k, v in summary.census.items())
    outcomes = " ".join(f"{k}={v}" for k, v in summary.outcome_counts.items() if k != "ai_executed")
    lines = [
        f"session {summary.session_id}: {summary.stage}",
        f"  leaves: {census}",
        f"  human calls: {summary.human_calls} ({outcomes})",
        f"  ai executed: {summary.ai_executed}",
        f"  failed authority nodes: {summary.failed_authority_nodes}",
        f"  tree hash: {summary.tree_hash}",
        f"  state hash: {summary.state_hash}",
    ]
    if report_path is not None:
        lines.append(f"  report: {report_path}")
    return "\n".join(lines)


def cmd_run(args: argparse.Namespace, workdir: Path) -> int:
    profile = _load_profile(_resolve(workdir, args.profile))
    mode = orch.Mode.AI_ONLY if args.mode == "ai-only" else orch.Mode.HUMAN_TOOL

    if args.planner == "llm":
        return _run_live(args, workdir, profile, mode)

    scenario_path = _resolve(workdir, args.scenario)
    if scenario_path is None:
        raise CliError("--scenario is required with the scripted planner")
    plan = ScriptedPlan.from_dict(_load_json(scenario_path, "scenario"))
    planner = ScriptedPlanner(plan)

    directives: list[orch.ResponseDirective] = []
    if args.responses:
        raw = _load_json(_resolve(workdir, args.responses), "responses script")
        directives = [orch.ResponseDirective.from_dict(d) for d in raw]

    session_id = args.session_id or _derived_session_id(
        json.dumps(profile.to_dict(), sort_keys=True), scenario_path.name, args.mode
    )
    session_store = store_mod.SessionStore(workdir)
    writer = session_store.open_writer(session_id)
    clock = orch.SimClock()
    try:
        session = orch.start_session(
            profile,
            plan.goal_pattern,
            planner,
            mode=mode,
            session_id=session_id,
            clock=clock,
            timeout_default=args.timeout,
            log_sink=writer.append,
        )
        responder = orch.ScriptedResponder(directives, clock)
        summary = orch.run_to_completion(session, planner, responder)
    except PlannerError as exc:
        raise CliError(f"planner failure: {exc}") from None
    finally:
        writer.close()
    session_store.write_snapshot(session)

    report = store_mod.activation_report(session.event_log)
    report_dir = session_store.session_dir(session_id)
    paths = report_mod.write_report_files(report, report_dir)

    _emit(
        args,
        _summary_text(summary, paths["json"]),
        {"summary": summary.to_dict(), "report_paths": {k: str(p) for k, p in paths.items()}},
    )
    return EXIT_OK if summary.failed_authority_nodes == 0 else EXIT_DOMAIN_FAILURE


def _run_live(args: argparse.Namespace, workdir: Path, profile: HumanToolProfile, mode: orch.Mode) -> int:
    config_path = _resolve(workdir, args.endpoint_config)
    if config_path is None:
        raise CliError("--endpoint-config is required with the llm planner")
    config = LLMEndpointConfig.from_dict(_load_json(config_path, "endpoint config"))
    planner = LLMPlanner(config)
    if not args.goal:
        raise CliError("--goal is required with the llm planner")
    session_id = args.session_id or _derived_session_id(profile.human_id, args.goal, args.mode)
    session_store = store_mod.SessionStore(workdir)
    host = SessionHost(
        session_id,
        profile,
        args.goal,
        planner,
        mode=mode,
        timeout_default=args.timeout,
        store=session_store,
    )

    async def main() -> int:
        stop = asyncio.Event()
        ready = asyncio.Event()
        server_task = asyncio.create_task(run_socket_server({session_id: host}, args.host, args.port, ready, stop))
        ready_task = asyncio.create_task(ready.wait())
        done, _ = await asyncio.wait({server_task, ready_task}, return_when=asyncio.FIRST_COMPLETED)
        if server_task in done:
            raise CliError(f"cannot bind {args.host}:{args.port}: {server_task.exception()}")
        print(f"session {session_id} at ws://{args.host}:{args.port}/session/{session_id}", flush=True)
        if mode is orch.Mode.AI_ONLY:
            await host.ensure_started()
        while host.session is None or not (host.session.is_terminal or host._aborted):
            await asyncio.sleep(0.2)
        stop.set()
        await server_task
        summary = orch.summarize(host.session)
        _emit(args, _summary_text(summary, None), {"summary": summary.to_dict()})
        return EXIT_OK if summary.failed_authority_nodes == 0 else EXIT_DOMAIN_FAILURE

    try:
        return asyncio.run(main())
    finally:
        planner.close()


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def cmd_serve(args: argparse.Namespace, workdir: Path) -> int:
    profile = _load_profile(_resolve(workdir, args.profile))
    mode = orch.Mode.AI_ONLY if args.mode == "ai-only" else orch.Mode.HUMAN_TOOL
    session_store = store_mod.SessionStore(workdir)

    if args.planner == "scripted":
        scenario_path = _resolve(workdir, args.scenario)
        if scenario_path is None:
            raise CliError("--scenario is required with the scripted planner")
        plan = ScriptedPlan.from_dict(_load_json(scenario_path, "scenario"))
        planner = ScriptedPlanner(plan)
        goal = plan.goal_pattern
    else:
        config_path = _resolve(workdir, args.endpoint_config)
        if config_path is None:
            raise CliError("--endpoint-config is required with the llm planner")
        planner = LLMPlanner(LLMEndpointConfig.from_dict(_load_json(config_path, "endpoint config")))
        if not args.goal:
            raise CliError("--goal is required with the llm planner")
        goal = args.goal

    session_id = args.session_id or _derived_session_id(profile.human_id, goal, args.mode)
    host = SessionHost(
        session_id, profile, goal, planner, mode=mode, timeout_default=args.timeout, store=session_store
    )

    if args.transport == "stdio":
        session = orch.start_session(
            profile,
            goal,
            planner,
            mode=mode,
            session_id=session_id,
            clock=orch.SystemClock(),
            timeout_default=args.timeout,
            log_sink=session_store.open_writer(session_id).append,
        )
        server = StdioServer(session, planner)
        server.pump(sys.stdin.buffer, sys.stdout.buffer)
        return EXIT_OK

    async def main() -> int:
        stop = asyncio.Event()
        ready = asyncio.Event()
        server_task = asyncio.create_task(
            run_socket_server({session_id: host}, args.host, args.port, ready, stop)
        )
        ready_task = asyncio.create_task(ready.wait())
        done, _ = await asyncio.wait({server_task, ready_task}, return_when=asyncio.FIRST_COMPLETED)
        if server_task in done:
            exc = server_task.exception()
            raise CliError(f"cannot bind {args.host}:{args.port}: {exc}")
        line = f"serving session {session_id} at ws://{args.host}:{args.port}/session/{session_id}"
        print(line, flush=True)
        try:
            await server_task
        except asyncio.CancelledError:
            pass
        return EXIT_OK

    try:
        return asyncio.run(main())
    except KeyboardInterrupt:
        return EXIT_OK


# ---------------------------------------------------------------------------
# replay / report / tables
# ---------------------------------------------------------------------------


def cmd_replay(args: argparse.Namespace, workdir: Path) -> int:
    path = _resolve(workdir, args.log)
    try:
        entries = store_mod.read_log(path)
        session = store_mod.replay(entries)
    except FileNotFoundError:
        raise CliError(f"log not found: {path}") from None
    except store_mod.LogError as exc:
        raise CliError(f"unusable log {path}: {exc}") from None
    if session is None:
        _emit(args, "empty log: no session state", {"empty": True})
        return EXIT_OK
    summary = orch.summarize(session)
    _emit(args, _summary_text(summary, None), {"summary": summary.to_dict()})
    return EXIT_OK


def cmd_report(args: argparse.Namespace, workdir: Path) -> int:
    logs = []
    for raw in args.logs:
        path = _resolve(workdir, raw)
        try:
            logs.append(store_mod.read_log(path))
        except FileNotFoundError:
            raise CliError(f"log not found: {path}") from None
        except store_mod.LogError as exc:
            raise CliError(f"unusable log {path}: {exc}") from None
    report = store_mod.activation_report(logs)
    if args.out_dir:
        out_dir = _resolve(workdir, args.out_dir)
        paths = report_mod.write_report_files(report, out_dir)
        _emit(
            args,
            report_mod.render_text(report) + "\nwritten: " + ", ".join(str(p) for p in paths.values()),
            {"report": report.to_dict(), "paths": {k: str(p) for k, p in paths.items()}},
        )
    else:
        _emit(args, report_mod.render_text(report), {"report": report.to_dict()})
    return EXIT_OK


def cmd_tables(args: argparse.Namespace, workdir: Path) -> int:
    print(json.dumps(export_tables(), indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="humantool",
        description="Run AI-led sessions that call a human collaborator as a tool.",
    )
    parser.add_argument("--workdir", default=".", help="base directory for relative paths and session logs")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile-init", help="build a profile from questionnaire answers")
    p.add_argument("--answers", help="eight option indices, e.g. '1,2,3,4,5,1,2,3'")
    p.add_argument("--domain", default="generic", choices=[d.value for d in Domain])
    p.add_argument("--human-id", default=None)
    p.add_argument("--out", required=True, help="profile JSON output path")
    p.set_defaults(func=cmd_profile_init)

    p = sub.add_parser("profile-validate", help="validate a profile file")
    p.add_argument("profile")
    p.add_argument("--max-notes", type=int, default=4096)
    p.set_defaults(func=cmd_profile_validate)

    p = sub.add_parser("run", help="run one session to completion")
    p.add_argument("--profile", required=True)
    p.add_argument("--scenario", help="scripted plan JSON (scripted planner)")
    p.add_argument("--responses", help="scripted responder JSON")
    p.add_argument("--mode", default="human-tool", choices=["human-tool", "ai-only"])
    p.add_argument("--planner", default="scripted", choices=["scripted", "llm"])
    p.add_argument("--endpoint-config", help="LLM endpoint config JSON (llm planner)")
    p.add_argument("--goal", help="goal text (llm planner)")
    p.add_argument("--session-id")
    p.add_argument("--timeout", type=float, default=300.0, help="per-call deadline in seconds")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="serve a session over a transport for a live console")
    p.add_argument("--profile", required=True)
    p.add_argument("--scenario")
    p.add_argument("--planner", default="scripted", choices=["scripted", "llm"])
    p.add_argument("--endpoint-config")
    p.add_argument("--goal")
    p.add_argument("--mode", default="human-tool", choices=["human-tool", "ai-only"])
    p.add_argument("--session-id")
    p.add_argument("--timeout", type=float, default=300.0)
    p.add_argument("--transport", default="socket", choices=["socket", "stdio"])
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="rebuild terminal state from an event log")
    p.add_argument("log")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="activation report over one or more event logs")
    p.add_argument("logs", nargs="*", default=[])
    p.add_argument("--out-dir", help="also write report.json/.txt/.csv/.png here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("tables", help="print the interaction legality tables as JSON")
    p.set_defaults(func=cmd_tables)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    workdir = Path(args.workdir).resolve()
    workdir.mkdir(parents=True, exist_ok=True)
    try:
        return args.func(args, workdir)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (orch.OrchestrationError, store_mod.LogError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
