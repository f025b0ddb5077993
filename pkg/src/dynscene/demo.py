"""Closed tick loop: simulate, build, fuse, commit, prompt the agent and step the robot."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .agent import (
    DEFAULT_SKILLS,
    DEFAULT_SYSTEM_CONTEXT,
    Executor,
    LlmEndpointConfig,
    PlanRejected,
    parse_plan,
    query_llm,
    render_prompt,
)
from .dynamic_builder import DynamicConfig, build_subgraph
from .fusion import FusionConfig, Fuser
from .sim import Event, Scenario, camera_regions, simulate
from .static_builder import StaticBuildConfig, build_static_graph
from .store import GraphStore

logger = logging.getLogger(__name__)


def _n(count: int, noun: str) -> str:
    if count == 1:
        return f"1 {noun}"
    return f"{count} {noun[:-2] + 'ices' if noun.endswith('ex') else noun + 's'}"


@dataclass
class DemoResult:
    records: list = field(default_factory=list)
    plan: Optional[object] = None
    completed: bool = False
    failure: Optional[str] = None

    def lines(self) -> list[str]:
        out = []
        for r in self.records:
            kind = r["event"]
            if kind == "tick":
                out.append(f"[tick {r['tick']:>3}] snapshot committed: {_n(r['dynamic_vertices'], 'dynamic vertex')}, "
                           f"{_n(r['relation_edges'], 'relation edge')}")
            elif kind == "no_plan":
                out.append(f"[tick {r['tick']:>3}] agent idle: {r['reason']}")
            elif kind == "plan":
                out.append(f"[tick {r['tick']:>3}] plan accepted ({len(r['steps'])} steps)")
                out.extend(f"           {i}. {s}" for i, s in enumerate(r["steps"], 1))
            elif kind == "step":
                status = "ok" if r["ok"] else f"FAILED: {r['reason']}"
                route = f" via {' -> '.join(r['route'])}" if r["route"] else ""
                out.append(f"[tick {r['tick']:>3}] step {r['index'] + 1}: {r['text']}{route} ... {status}")
            elif kind == "done":
                verdict = "completed" if r["success"] else "halted"
                out.append(f"[tick {r['tick']:>3}] plan {verdict}; robot in {r['final_region']}, "
                           f"holding {r['holding'] or 'nothing'}")
        return out


def remove_object(scenario: Scenario, object_id: str, at: float) -> Scenario:
    """Scenario copy with an extra removal of ``object_id`` at time ``at``."""
    events = list(scenario.timeline) + [Event(float(at), "remove", {"id": object_id})]
    events.sort(key=lambda e: e.time)
    return replace(scenario, timeline=tuple(events))


def run_demo(
    scenario: Scenario,
    llm: LlmEndpointConfig,
    *,
    seed: Optional[int] = None,
    skills: Sequence[str] = DEFAULT_SKILLS,
    system_context: str = DEFAULT_SYSTEM_CONTEXT,
    dynamic: DynamicConfig = DynamicConfig(),
    fusion: FusionConfig = FusionConfig(),
    static: StaticBuildConfig = StaticBuildConfig(),
    start_region: Optional[str] = None,
    max_ticks: int = 30,
) -> DemoResult:
    """One plan at most: prompt every idle tick, then execute one step per tick until done."""
    scenario = replace(scenario, frame_hz=dynamic.frame_hz)
    horizon = min(max_ticks * dynamic.window_s, scenario.duration_s)
    sim = simulate(scenario, seed, windows=[(0.0, horizon)])
    base = build_static_graph(sim.scan, scenario.regions, [d for d, _ in scenario.doorways], static)
    if not fusion.camera_region:
        fusion = replace(fusion, camera_region=camera_regions(scenario))
    fuser = Fuser(base, fusion)
    store = GraphStore(base)
    start = start_region or scenario.robot_start or sorted(r.id for r in base.regions)[0]
    executor = Executor(store, start)
    result = DemoResult()
    cams = sorted(scenario.cameras, key=lambda c: c.id)

    k = 0
    while k < max_ticks:
        k += 1
        end = round(k * dynamic.window_s, 9)
        if end > scenario.duration_s + 1e-9:
            break
        subs = [build_subgraph(sim.frames(c.id), sim.candidates(c.id), c.id, dynamic, end) for c in cams]
        snap = fuser.tick(subs, k)
        store.commit(snap)
        dyn = sum(len(a.subgraph.vertices) for a in snap.anchored) - len(snap.merges)
        rels = sum(len(a.subgraph.edges) for a in snap.anchored)
        result.records.append({"event": "tick", "tick": k, "time": end, "dynamic_vertices": dyn, "relation_edges": rels})

        if result.plan is None:
            bundle = render_prompt(snap, skills, system_context)
            reply = query_llm(bundle, llm)
            try:
                plan = parse_plan(reply, snap)
            except PlanRejected as exc:
                result.records.append({"event": "no_plan", "tick": k, "reason": str(exc)})
                continue
            executor.start(plan)
            result.plan = plan
            result.records.append({"event": "plan", "tick": k, "steps": [s.render() for s in plan.steps]})
            continue

        res = executor.step()
        rec = res.to_dict()
        rec.update(event="step", text=res.step.render())
        result.records.append(rec)
        if executor.done:
            ok = not executor.halted
            result.completed = ok
            result.failure = None if ok else res.reason
            if not ok:
                logger.warning("plan halted at step %d (%s): %s", res.index + 1, res.step.render(), res.reason)
            result.records.append({
                "event": "done", "tick": k, "success": ok, "final_region": executor.region,
                "holding": executor.holding, "reason": "" if ok else res.reason,
            })
            break
    else:
        logger.info("demo stopped after %d ticks", max_ticks)
    return result
