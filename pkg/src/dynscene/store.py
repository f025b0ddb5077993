"""Snapshot registry and the read-side query API used by the agent and planner.

A single writer commits snapshots; readers grab an immutable snapshot and
query it without taking the writer's lock.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import threading
from collections import deque
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlparse

from .model import GlobalGraph, RelationEdge, UnifiedSnapshot

logger = logging.getLogger(__name__)


class CommitRejected(ValueError):
    pass


class NoRouteError(LookupError):
    pass


class GraphStore:
    def __init__(self, base: GlobalGraph, history: int = 8):
        if history < 1:
            raise ValueError("history must hold at least one snapshot")
        self.base = base
        self._history: deque[UnifiedSnapshot] = deque(maxlen=history)
        self._latest: Optional[UnifiedSnapshot] = None
        self._lock = threading.Lock()

    @property
    def latest(self) -> Optional[UnifiedSnapshot]:
        return self._latest

    @property
    def history(self) -> list[UnifiedSnapshot]:
        return list(self._history)

    def commit(self, snapshot: UnifiedSnapshot) -> int:
        with self._lock:
            if self._latest is not None and snapshot.tick <= self._latest.tick:
                raise CommitRejected(
                    f"tick {snapshot.tick} does not advance past latest tick {self._latest.tick}"
                )
            self._history.append(snapshot)
            self._latest = snapshot
            return snapshot.tick

    def get(self, tick: int) -> UnifiedSnapshot:
        for snap in list(self._history):
            if snap.tick == tick:
                return snap
        raise KeyError(f"tick {tick} not in history")

    def holds(self, tick: int) -> bool:
        return any(s.tick == tick for s in list(self._history))


@dataclass(frozen=True)
class ObjectHit:
    vertex_id: str
    kind: str  # "static" | "dynamic"
    region_id: str
    position: Optional[tuple[float, float, float]]
    class_label: str

    def to_dict(self) -> dict:
        return {
            "vertex_id": self.vertex_id,
            "kind": self.kind,
            "region_id": self.region_id,
            "position": list(self.position) if self.position is not None else None,
            "class_label": self.class_label,
        }


def dynamic_vertex_id(camera_id: str, track_id: int) -> str:
    return f"{camera_id}/{track_id}"


def find_object(name: str, snapshot: UnifiedSnapshot) -> list[ObjectHit]:
    """Static and non-merged dynamic vertices whose label equals ``name`` (case-insensitive)."""
    want = name.strip().lower()
    hits = [
        ObjectHit(o.id, "static", o.region_id, o.box.center, o.class_label)
        for o in sorted(snapshot.base.static_objects, key=lambda o: o.id)
        if o.class_label.lower() == want
    ]
    attach = snapshot.attachments()
    dynamic = []
    for entry in snapshot.anchored:
        cam = entry.subgraph.camera_id
        for v in entry.subgraph.vertices:
            if v.class_label.lower() != want:
                continue
            found = attach.get((cam, v.track_id), [])
            if len(found) != 1 or found[0].kind == "merged":
                continue
            pos = v.box3.center if v.box3 is not None else None
            dynamic.append(((cam, v.track_id), ObjectHit(
                dynamic_vertex_id(cam, v.track_id), "dynamic", found[0].region_id, pos, v.class_label
            )))
    dynamic.sort(key=lambda x: x[0])
    return hits + [h for _, h in dynamic]


def plan_route(from_region: str, to_region: str, graph, weighted: bool = False) -> list[str]:
    """Shortest region sequence over connectivity edges.

    Hop count by default; ``weighted=True`` uses centroid distances. Among
    equally short routes the lexicographically smallest sequence is returned.
    """
    base = graph.base if isinstance(graph, UnifiedSnapshot) else graph
    for r in (from_region, to_region):
        if not base.has_region(r):
            raise KeyError(f"unknown region {r!r}")
    if from_region == to_region:
        return [from_region]
    if weighted:
        return _dijkstra(base, from_region, to_region)
    # distances to the target, then walk forward choosing the smallest id at each step
    dist = {to_region: 0}
    frontier = deque([to_region])
    while frontier:
        u = frontier.popleft()
        for w in base.neighbors(u):
            if w not in dist:
                dist[w] = dist[u] + 1
                frontier.append(w)
    if from_region not in dist:
        raise NoRouteError(f"no route from {from_region!r} to {to_region!r}")
    path = [from_region]
    while path[-1] != to_region:
        here = path[-1]
        path.append(min(w for w in base.neighbors(here) if dist.get(w) == dist[here] - 1))
    return path


def _dijkstra(base: GlobalGraph, src: str, dst: str) -> list[str]:
    cent = {r.id: r.centroid for r in base.regions}
    heap = [(0.0, (src,))]
    done = set()
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return list(path)
        for w in base.neighbors(u):
            if w not in done:
                heapq.heappush(heap, (round(d + math.dist(cent[u], cent[w]), 9), path + (w,)))
    raise NoRouteError(f"no route from {src!r} to {dst!r}")


def active_relations(snapshot: UnifiedSnapshot, at: Optional[float] = None) -> list[RelationEdge]:
    out = []
    for entry in snapshot.anchored:
        for e in entry.subgraph.edges:
            if at is None or e.active_at(at):
                out.append(e)
    return out


# -- HTTP service ------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    store: GraphStore

    def _send(self, status: int, payload) -> None:
        body = json.dumps(payload, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):  # noqa: N802
        url = urlparse(self.path)
        q = {k: v[0] for k, v in parse_qs(url.query).items()}
        snap = self.store.latest
        if snap is None:
            return self._send(404, {"error": "no snapshot committed"})
        if url.path == "/snapshot/latest":
            return self._send(200, snap.to_dict())
        if url.path == "/object":
            if "name" not in q:
                return self._send(400, {"error": "missing name"})
            return self._send(200, [h.to_dict() for h in find_object(q["name"], snap)])
        if url.path == "/route":
            if "from" not in q or "to" not in q:
                return self._send(400, {"error": "missing from/to"})
            try:
                return self._send(200, plan_route(q["from"], q["to"], snap))
            except KeyError as exc:
                return self._send(404, {"error": str(exc.args[0])})
            except NoRouteError as exc:
                return self._send(404, {"error": f"no route: {exc}"})
        return self._send(404, {"error": f"unknown path {url.path}"})

    def log_message(self, fmt, *args):
        logger.debug("store http: " + fmt, *args)


def make_server(store: GraphStore, host: str = "127.0.0.1", port: int = 8765) -> ThreadingHTTPServer:
    handler = type("StoreHandler", (_Handler,), {"store": store})
    return ThreadingHTTPServer((host, port), handler)
