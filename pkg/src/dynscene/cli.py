"""Command-line entry point for every pipeline stage and the demo loop.

Option values resolve from command-line flags, then ``DYNSCENE_<OPTION>``
environment variables, then the JSON file given with ``--config``, then
built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import urllib.request
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Optional

from . import __version__
from .agent import (
    DEFAULT_SKILLS,
    LlmEndpointConfig,
    LlmError,
    PlanExecutionError,
    PlanRejected,
    execute_plan,
    parse_plan,
    query_llm,
    render_prompt,
)
from .demo import remove_object, run_demo
from .dynamic_builder import DynamicConfig, read_stream, run_stream
from .evaluate import PipelineConfig, run_eval, write_csv
from .files import InputError, dumps, load_decoded, read_json, write_json, write_jsonl
from .fusion import FusionConfig, Fuser
from .model import DynamicSubgraph, GlobalGraph, UnifiedSnapshot
from .sim import bundled, check_scenario_file, simulate, write_outputs
from .static_builder import (
    StaticBuildConfig,
    build_static_from_files,
    load_static_classes,
)
from .store import GraphStore, make_server

logger = logging.getLogger("dynscene")

ENV_PREFIX = "DYNSCENE_"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse with usage errors reported as exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable = str
    default: Any = None
    required: bool = False
    help: str = ""
    multiple: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    @property
    def env(self) -> str:
        return ENV_PREFIX + self.name.upper()


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


SEED = Opt("seed", int, None, help="random seed (overrides the scenario's rng_seed)")

COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "build-static": ("build the global static graph from a posed scan", [
        Opt("frames", required=True, help="scan frames JSONL (box3 required)"),
        Opt("regions", required=True, help="regions JSON"),
        Opt("doorways", required=True, help="doorways JSON"),
        Opt("out", required=True, help="output static graph JSON"),
        Opt("vthr", float, 2.0, help="volume threshold in m^3"),
        Opt("classes", help="text file of designated static classes"),
    ]),
    "run-dynamic": ("build per-window dynamic subgraphs from camera streams", [
        Opt("stream", required=True, multiple=True, help="camera stream JSONL (repeatable)"),
        Opt("window", float, 10.0, help="window length in seconds"),
        Opt("hz", float, 5.0, help="frame rate"),
        Opt("top_k", int, 20, help="pair proposals per window"),
        Opt("out", required=True, help="output directory for dyn.<camera>.<tick>.json"),
    ]),
    "fuse": ("fuse dynamic subgraphs onto the static graph, one snapshot per tick", [
        Opt("static", required=True, help="static graph JSON"),
        Opt("dynamic", required=True, help="directory of dyn.<camera>.<tick>.json"),
        Opt("mode", str, "spatial", help="spatial or semantic"),
        Opt("bthr", float, 0.6, help="merge overlap threshold"),
        Opt("camera_region", help="JSON map camera id -> region id (semantic mode)"),
        Opt("out", required=True, help="output directory, or a path containing {tick}"),
    ]),
    "serve-store": ("serve committed snapshots over HTTP", [
        Opt("static", required=True, help="static graph JSON"),
        Opt("snapshots", help="directory of snap.<tick>.json to commit in tick order"),
        Opt("host", str, "127.0.0.1"),
        Opt("port", int, 8765),
        Opt("history", int, 8, help="snapshots kept in history"),
    ]),
    "agent": ("prompt the LLM with the latest snapshot and execute the plan", [
        Opt("store", required=True, help="store URL or directory of snap.<tick>.json"),
        Opt("skills", help="skill templates, one per line"),
        Opt("llm_endpoint", help="LLM endpoint URL (also DYNSCENE_LLM_URL)"),
        Opt("mock", help="mock reply script JSON"),
        Opt("start_region", help="robot start region"),
        Opt("max_retries", int, 2),
        Opt("timeout", float, 30.0),
        Opt("log", help="execution log JSONL"),
    ]),
    "simulate": ("simulate camera streams and ground truth for a scenario", [
        Opt("scenario", required=True, help="scenario JSON"),
        SEED,
        Opt("window", float, 10.0, help="ground-truth window length"),
        Opt("out", required=True, help="output directory"),
    ]),
    "eval": ("run the pipeline on a simulated scenario and score it", [
        Opt("scenario", required=True, help="scenario JSON"),
        SEED,
        Opt("report", required=True, help="report JSON"),
        Opt("csv", help="optional per-tick CSV"),
        Opt("dropout", float, help="override the scenario detection_dropout"),
    ]),
    "demo": ("closed-loop demo: simulate, fuse, prompt a mock LLM and run the plan", [
        Opt("scenario", str, None, help="scenario JSON (default: bundled cafeteria)"),
        SEED,
        Opt("mock", help="mock reply script (default: bundled)"),
        Opt("skills", help="skill templates, one per line"),
        Opt("mode", str, "spatial", help="fusion mode"),
        Opt("remove", help="object id to remove mid-run"),
        Opt("at", float, 95.0, help="removal time in seconds"),
        Opt("max_ticks", int, 30),
        Opt("start_region", help="robot start region"),
        Opt("log", help="execution log JSONL"),
    ]),
}


def build_parser() -> Parser:
    common = Parser(add_help=False)
    # SUPPRESS keeps subparser defaults from clobbering values given before the subcommand
    common.add_argument("--config", metavar="FILE", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--print-config", action="store_true", default=argparse.SUPPRESS,
                        help="print the resolved configuration and exit")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = Parser(prog="dynscene", description="Dynamic multi-room scene graphs for robot task planning.",
                    parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, parents=[common])
        for opt in opts:
            if opt.name == "seed":
                continue
            kwargs = {"dest": opt.name, "default": None, "help": opt.help or None}
            if opt.multiple:
                kwargs["action"] = "append"
            else:
                kwargs["type"] = opt.type
            p.add_argument(opt.flag, **kwargs)
    return parser


def resolve(command: str, args: argparse.Namespace, env=None) -> dict:
    """Merge flags, environment, config file and defaults into one flat mapping."""
    env = os.environ if env is None else env
    file_cfg = {}
    config_path = getattr(args, "config", None) or env.get(ENV_PREFIX + "CONFIG")
    if config_path:
        file_cfg = read_json(config_path)
        if not isinstance(file_cfg, dict):
            raise InputError(config_path, "config must be a JSON object")
    section = file_cfg.get(command, {})
    out: dict[str, Any] = {"command": command, "config": config_path}
    for opt in COMMANDS[command][1]:
        value = getattr(args, opt.name, None)
        if value is None and opt.env in env:
            raw = env[opt.env]
            value = raw.split(os.pathsep) if opt.multiple else opt.type(raw)
        if value is None:
            value = section.get(opt.name, file_cfg.get(opt.name))
            if value is not None and not opt.multiple:
                value = opt.type(value)
        if value is None:
            value = opt.default
        if value is None and opt.required:
            raise UsageError(f"missing required option {opt.flag}")
        out[opt.name] = value
    pipeline = {k: file_cfg[k] for k in ("dynamic", "fusion", "static", "eval") if k in file_cfg}
    out["pipeline"] = PipelineConfig.from_dict(pipeline).to_dict()
    return out


# -- subcommands -------------------------------------------------------------

def _pipeline(run: dict) -> PipelineConfig:
    return PipelineConfig.from_dict(run["pipeline"])


def _load_skills(path) -> list[str]:
    if not path:
        return list(DEFAULT_SKILLS)
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(path, str(exc)) from exc
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def cmd_build_static(run: dict) -> int:
    cfg = _pipeline(run).static
    cfg = replace(cfg, v_thr=run["vthr"])
    if run["classes"]:
        cfg = replace(cfg, static_classes=load_static_classes(run["classes"]))
    graph = build_static_from_files(run["frames"], run["regions"], run["doorways"], cfg)
    write_json(run["out"], graph.to_dict())
    print(f"wrote {run['out']}: {len(graph.regions)} regions, {len(graph.static_objects)} static objects, "
          f"{len(graph.static_edges)} edges")
    return EXIT_OK


def cmd_run_dynamic(run: dict) -> int:
    cfg = replace(_pipeline(run).dynamic, window_s=run["window"], frame_hz=run["hz"], top_k=run["top_k"])
    out = Path(run["out"])
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for path in run["stream"]:
        stream = read_stream(path)
        for tick_id, sub in run_stream(stream, cfg):
            write_json(out / f"dyn.{stream.camera_id}.{tick_id}.json", sub.to_dict())
            n += 1
    print(f"wrote {n} subgraph(s) to {out}")
    return EXIT_OK


_DYN_NAME = re.compile(r"^dyn\.(?P<camera>.+)\.(?P<tick>\d+)\.json$")
_SNAP_NAME = re.compile(r"^snap\.(?P<tick>\d+)\.json$")


def cmd_fuse(run: dict) -> int:
    base = load_decoded(run["static"], GlobalGraph.from_dict)
    camera_region = load_decoded(run["camera_region"], dict) if run["camera_region"] else {}
    cfg = replace(_pipeline(run).fusion, mode=run["mode"], b_thr=run["bthr"], camera_region=camera_region)
    by_tick: dict[int, list[DynamicSubgraph]] = {}
    src = Path(run["dynamic"])
    if not src.is_dir():
        raise InputError(src, "not a directory")
    for p in sorted(src.iterdir()):
        m = _DYN_NAME.match(p.name)
        if m:
            by_tick.setdefault(int(m["tick"]), []).append(load_decoded(p, DynamicSubgraph.from_dict))
    if not by_tick:
        raise InputError(src, "no dyn.<camera>.<tick>.json files found")
    fuser = Fuser(base, cfg)
    target = run["out"]
    for tick_id in sorted(by_tick):
        snap = fuser.tick(by_tick[tick_id], tick_id)
        if "{tick}" in target:
            path = Path(target.replace("{tick}", str(tick_id)))
        else:
            Path(target).mkdir(parents=True, exist_ok=True)
            path = Path(target) / f"snap.{tick_id}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_json(path, snap.to_dict())
    print(f"fused {len(by_tick)} tick(s)")
    return EXIT_OK


def _snapshots_in(directory) -> list[UnifiedSnapshot]:
    d = Path(directory)
    if not d.is_dir():
        raise InputError(d, "not a directory")
    found = []
    for p in d.iterdir():
        m = _SNAP_NAME.match(p.name)
        if m:
            found.append((int(m["tick"]), p))
    return [load_decoded(p, UnifiedSnapshot.from_dict) for _, p in sorted(found)]


def cmd_serve_store(run: dict) -> int:
    base = load_decoded(run["static"], GlobalGraph.from_dict)
    store = GraphStore(base, run["history"])
    if run["snapshots"]:
        for snap in _snapshots_in(run["snapshots"]):
            store.commit(snap)
    server = make_server(store, run["host"], run["port"])
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _store_from(source: str) -> GraphStore:
    if re.match(r"^https?://", source):
        url = source.rstrip("/") + "/snapshot/latest"
        try:
            with urllib.request.urlopen(url, timeout=30) as resp:
                snap = UnifiedSnapshot.from_dict(json.loads(resp.read().decode()))
        except OSError as exc:
            raise RuntimeError(f"cannot read snapshot from {url}: {exc}") from exc
        store = GraphStore(snap.base)
        store.commit(snap)
        return store
    snaps = _snapshots_in(source)
    if not snaps:
        raise InputError(source, "no snap.<tick>.json files found")
    store = GraphStore(snaps[-1].base, max(8, len(snaps)))
    for s in snaps:
        store.commit(s)
    return store


def cmd_agent(run: dict) -> int:
    store = _store_from(run["store"])
    snap = store.latest
    if not run["mock"] and not run["llm_endpoint"] and not os.environ.get("DYNSCENE_LLM_URL"):
        raise UsageError("one of --llm-endpoint or --mock is required")
    llm = LlmEndpointConfig(run["llm_endpoint"] or "", run["timeout"], run["max_retries"], 0.5, run["mock"])
    bundle = render_prompt(snap, _load_skills(run["skills"]))
    reply = query_llm(bundle, llm)
    records = [{"event": "prompt", "tick": snap.tick, "text": bundle.rendered}, {"event": "reply", "text": reply}]
    try:
        plan = parse_plan(reply, snap)
    except PlanRejected as exc:
        records.append({"event": "rejected", "reasons": exc.reasons})
        _emit(records, run["log"])
        print(f"plan rejected: {exc}")
        return EXIT_OK
    records.append({"event": "plan", **plan.to_dict()})
    log = execute_plan(plan, store, run["start_region"])
    for s in log.steps:
        records.append({"event": "step", **s.to_dict()})
    records.append({"event": "done", "success": log.success, "final_region": log.final_region,
                    "holding": log.holding})
    _emit(records, run["log"])
    for s in log.steps:
        print(f"step {s.index + 1}: {s.step.render()} ... {'ok' if s.ok else 'FAILED: ' + s.reason}")
    print("plan completed" if log.success else "plan halted")
    return EXIT_OK


def _emit(records, path) -> None:
    if path:
        write_jsonl(path, records)


def _scenario(run: dict):
    path = run["scenario"] or bundled("cafeteria.json")
    return check_scenario_file(path)


def cmd_simulate(run: dict) -> int:
    sc = _scenario(run)
    out = simulate(sc, run["seed"])
    files = write_outputs(out, run["out"], run["window"])
    print(f"wrote {len(files)} file(s) to {run['out']}")
    return EXIT_OK


def cmd_eval(run: dict) -> int:
    sc = _scenario(run)
    if run["dropout"] is not None:
        sc = sc.with_noise(detection_dropout=run["dropout"])
    report = run_eval(sc, _pipeline(run), run["seed"])
    write_json(run["report"], report)
    if run["csv"]:
        write_csv(report, run["csv"])
    summary = report["summary"]
    print(f"V.Acc {summary['v_acc_mean']}  E.Acc {summary['e_acc_mean']}  over {len(report['ticks'])} tick(s)")
    return EXIT_OK


def cmd_demo(run: dict) -> int:
    sc = _scenario(run)
    if run["remove"]:
        sc = remove_object(sc, run["remove"], run["at"])
    pipe = _pipeline(run)
    llm = LlmEndpointConfig(mock_script=str(run["mock"] or bundled("cafeteria_mock.json")))
    result = run_demo(
        sc, llm, seed=run["seed"], skills=_load_skills(run["skills"] or bundled("skills.txt")),
        dynamic=pipe.dynamic, fusion=replace(pipe.fusion, mode=run["mode"]), static=pipe.static,
        start_region=run["start_region"], max_ticks=run["max_ticks"],
    )
    for line in result.lines():
        print(line)
    if run["log"]:
        write_jsonl(run["log"], result.records)
    if result.plan is None:
        print("no plan was produced")
    return EXIT_OK


HANDLERS = {
    "build-static": cmd_build_static,
    "run-dynamic": cmd_run_dynamic,
    "fuse": cmd_fuse,
    "serve-store": cmd_serve_store,
    "agent": cmd_agent,
    "simulate": cmd_simulate,
    "eval": cmd_eval,
    "demo": cmd_demo,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0) or 0, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if not args.command:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: a command is required", file=sys.stderr)
        return EXIT_INVALID
    try:
        run = resolve(args.command, args)
        if getattr(args, "print_config", False):
            sys.stdout.write(dumps(run))
            return EXIT_OK
        return HANDLERS[args.command](run)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (InputError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (LlmError, PlanExecutionError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
