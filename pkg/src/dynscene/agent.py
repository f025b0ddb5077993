"""LLM task agent: prompt rendering, endpoint client, plan parsing and a simulated executor."""

from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .files import read_json
from .model import CONNECTIVITY, SkillPrimitive, TaskPlan, UnifiedSnapshot
from .store import GraphStore, NoRouteError, find_object, plan_route

logger = logging.getLogger(__name__)

LLM_URL_ENV = "DYNSCENE_LLM_URL"

DEFAULT_SYSTEM_CONTEXT = (
    "You are a service robot working in a multi-room building. Read the scene "
    "structure and the ongoing relations, decide whether any of your skills can "
    "help with what is happening, and if so reply with one numbered instruction "
    "per line using only the listed skills."
)

DEFAULT_SKILLS = (
    "navigate to {object} in {region}",
    "pick {object} in {region}",
    "place {object} in {region}",
)


@dataclass(frozen=True)
class PromptBundle:
    system_context: str
    scene_structure: str
    ongoing_relations: str
    optional_skills: str
    rendered: str
    snapshot_tick: int


def _fmt_t(t: float) -> str:
    return f"{t:.1f}"


def render_prompt(
    snapshot: UnifiedSnapshot, skills: Sequence[str] = DEFAULT_SKILLS, system_context: str = DEFAULT_SYSTEM_CONTEXT
) -> PromptBundle:
    base = snapshot.base
    regions = sorted(base.regions, key=lambda r: r.id)
    lines = ["Regions: " + ", ".join(r.id for r in regions)]
    conn = sorted((e.a, e.b) for e in base.static_edges if e.kind == CONNECTIVITY)
    lines.append("Connectivity: " + ("; ".join(f"{a} <-> {b}" for a, b in conn) if conn else "none"))
    lines.append("Objects:")
    statics = sorted(base.static_objects, key=lambda o: (o.region_id, o.id))
    lines.extend(f"{o.class_label} in {o.region_id}" for o in statics)
    if not statics:
        lines.append("none")
    scene = "\n".join(lines)

    attach = snapshot.attachments()
    placed = []
    edges = []
    for entry in snapshot.anchored:
        sub = entry.subgraph
        cam = sub.camera_id
        for v in sub.vertices:
            found = attach.get((cam, v.track_id), [])
            if len(found) == 1 and found[0].kind != "merged":
                placed.append((found[0].region_id, cam, v.track_id, f"{v.class_label} in {found[0].region_id}"))
        for e in sub.edges:
            for ta, tb in e.spans:
                edges.append(((cam, e.subject_id, e.object_id, e.predicate, ta),
                              f"{e.subject_class} {e.predicate} {e.object_class} ({_fmt_t(ta)}–{_fmt_t(tb)})"))
    dyn_lines = [p[3] for p in sorted(placed)] + [t for _, t in sorted(edges)]
    ongoing = "\n".join(dyn_lines) if dyn_lines else "none"

    skill_text = "\n".join(f"- {s}" for s in skills) if skills else "none"
    rendered = (
        f"{system_context}\n\n"
        f"Scene structures:\n{scene}\n\n"
        f"Ongoing relations:\n{ongoing}\n\n"
        f"Optional skills:\n{skill_text}\n"
    )
    return PromptBundle(system_context, scene, ongoing, skill_text, rendered, snapshot.tick)


# -- endpoint ----------------------------------------------------------------

class LlmError(RuntimeError):
    def __init__(self, message: str, attempts: int, status: Optional[int] = None):
        super().__init__(f"{message} (attempts={attempts}" + (f", status={status})" if status else ")"))
        self.attempts = attempts
        self.status = status


@dataclass(frozen=True)
class LlmEndpointConfig:
    url: str = ""
    timeout_s: float = 30.0
    max_retries: int = 2
    backoff_s: float = 0.5
    mock_script: Optional[str] = None


def load_mock_script(path) -> dict:
    data = read_json(path)
    replies = data.get("replies", data) if isinstance(data, dict) else {}
    return {"replies": {str(k): v for k, v in replies.items()}, "default": data.get("default")}


def query_llm(bundle: PromptBundle, cfg: LlmEndpointConfig, sleep: Callable[[float], None] = time.sleep) -> str:
    """Model reply for a prompt; scripted by tick in mock mode, else POSTed to the endpoint."""
    if cfg.mock_script:
        script = load_mock_script(cfg.mock_script)
        reply = script["replies"].get(str(bundle.snapshot_tick), script["default"])
        if reply is None:
            raise LlmError(f"mock script has no reply for tick {bundle.snapshot_tick}", 1)
        return reply
    url = cfg.url or os.environ.get(LLM_URL_ENV, "")
    if not url:
        raise LlmError("no LLM endpoint configured", 0)
    body = json.dumps({"prompt": bundle.rendered}).encode()
    attempts = 0
    last_status = None
    last_msg = ""
    while attempts <= cfg.max_retries:
        if attempts:
            sleep(cfg.backoff_s * 2 ** (attempts - 1))
        attempts += 1
        req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=cfg.timeout_s) as resp:
                return json.loads(resp.read().decode())["text"]
        except urllib.error.HTTPError as exc:
            last_status, last_msg = exc.code, f"HTTP {exc.code}"
            if exc.code < 500 and exc.code != 429:
                raise LlmError(f"endpoint returned HTTP {exc.code}", attempts, exc.code) from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            last_status, last_msg = None, str(getattr(exc, "reason", exc))
        except (ValueError, KeyError) as exc:
            raise LlmError(f"malformed endpoint reply: {exc}", attempts) from exc
        logger.info("LLM attempt %d failed: %s", attempts, last_msg)
    raise LlmError(f"LLM endpoint failed: {last_msg}", attempts, last_status)


# -- plan parsing ------------------------------------------------------------

class PlanRejected(ValueError):
    def __init__(self, reasons: list[str]):
        super().__init__("; ".join(reasons))
        self.reasons = reasons


_STEP = re.compile(
    r"""^\s*
    (?:(?:[-*•>]|\(?\d+[.):]|step\s*\d+\s*[.):-]?)\s*)*
    (navigate\s+to|pick(?:\s+up)?|place)\s+
    (.+)\s+in\s+(.+?)
    [\s.;,!]*$""",
    re.IGNORECASE | re.VERBOSE,
)
_ARTICLE = re.compile(r"^(?:the|a|an)\s+", re.IGNORECASE)


def _clean(name: str) -> str:
    return _ARTICLE.sub("", name.strip().strip("`'\"*")).strip()


def _resolve_region(name: str, snapshot: UnifiedSnapshot) -> Optional[str]:
    want = name.strip().lower()
    for r in snapshot.base.regions:
        if r.id.lower() == want or r.name.lower() == want:
            return r.id
    return None


def parse_plan(raw: str, snapshot: UnifiedSnapshot) -> TaskPlan:
    """Extract and validate ``navigate to / pick / place <object> in <region>`` lines."""
    steps, reasons = [], []
    for n, line in enumerate(raw.splitlines(), 1):
        m = _STEP.match(line)
        if not m:
            continue
        verb = m.group(1).split()[0].lower()
        obj, region_name = _clean(m.group(2)), _clean(m.group(3))
        region = _resolve_region(region_name, snapshot)
        if region is None:
            reasons.append(f"line {n}: unknown region {region_name!r}")
            continue
        if verb in ("pick", "place") and not find_object(obj, snapshot):
            reasons.append(f"line {n}: unresolvable object {obj!r}")
            continue
        steps.append(SkillPrimitive(verb, obj, region))
    if not steps and not reasons:
        raise PlanRejected(["no actionable plan"])
    if reasons:
        raise PlanRejected(reasons)
    return TaskPlan(tuple(steps), snapshot.tick)


# -- simulated executor ------------------------------------------------------

@dataclass
class StepResult:
    index: int
    step: SkillPrimitive
    ok: bool
    reason: str = ""
    route: list = field(default_factory=list)
    tick: int = 0

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "verb": self.step.verb,
            "object": self.step.object,
            "region": self.step.region,
            "ok": self.ok,
            "reason": self.reason,
            "route": self.route,
            "tick": self.tick,
        }


class PlanExecutionError(RuntimeError):
    pass


class Executor:
    """Virtual robot that runs plan steps against the store's latest snapshot."""

    def __init__(self, store: GraphStore, start_region: str):
        self.store = store
        self.region = start_region
        self.holding: Optional[str] = None
        self.log: list[StepResult] = []

    def start(self, plan: TaskPlan) -> None:
        if not self.store.holds(plan.tick):
            raise PlanExecutionError(f"plan tick {plan.tick} is no longer in store history")
        self.plan = plan
        self.next_index = 0
        self.halted = False

    @property
    def done(self) -> bool:
        return self.halted or self.next_index >= len(self.plan.steps)

    def step(self) -> StepResult:
        step = self.plan.steps[self.next_index]
        snap = self.store.latest
        res = StepResult(self.next_index, step, True, tick=snap.tick)
        if step.verb == "navigate":
            try:
                res.route = plan_route(self.region, step.region, snap)
                self.region = step.region
            except (KeyError, NoRouteError) as exc:
                res.ok, res.reason = False, f"no route: {exc}"
        elif step.verb == "pick":
            hits = find_object(step.object, snap)
            if self.holding is not None:
                res.ok, res.reason = False, f"gripper full (holding {self.holding})"
            elif not hits:
                res.ok, res.reason = False, f"object missing: {step.object}"
            elif self.region != step.region or not any(h.region_id == self.region for h in hits):
                res.ok, res.reason = False, "not co-located"
            else:
                self.holding = step.object
        else:
            if self.holding is None:
                res.ok, res.reason = False, "gripper empty"
            elif self.holding.lower() != step.object.lower():
                res.ok, res.reason = False, f"holding {self.holding}, not {step.object}"
            elif self.region != step.region:
                res.ok, res.reason = False, "not co-located"
            else:
                self.holding = None
        self.log.append(res)
        self.next_index += 1
        if not res.ok:
            self.halted = True
        return res


@dataclass
class ExecutionLog:
    steps: list
    final_region: str
    holding: Optional[str]
    planned: int

    @property
    def success(self) -> bool:
        return len(self.steps) == self.planned and all(s.ok for s in self.steps)

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "final_region": self.final_region,
            "holding": self.holding,
            "success": self.success,
        }


def execute_plan(plan: TaskPlan, store: GraphStore, start_region: Optional[str] = None) -> ExecutionLog:
    """Run a plan to completion or first failure; the log records every attempted step."""
    if start_region is None:
        start_region = sorted(r.id for r in store.base.regions)[0]
    ex = Executor(store, start_region)
    ex.start(plan)
    while not ex.done:
        ex.step()
    return ExecutionLog(ex.log, ex.region, ex.holding, len(plan.steps))
