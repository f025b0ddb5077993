"""Scripted multi-room scenario simulator producing camera streams and ground truth.

Objects follow a timeline of appear / move / remove events and relations are
switched on and off by events. Every frame each camera reports the present
objects whose centre lies in its region, with seeded detection noise. Noise
draws are taken for every (camera, frame, object) slot whatever the noise
levels, so runs that differ only in noise level share their random numbers.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from shapely.geometry import Point

from .files import InputError, load_decoded, write_json, write_jsonl
from .metrics import RELATION, EvalGraph, EvalVertex, edge
from .model import (
    BELONGING,
    CONNECTIVITY,
    Box3,
    Detection,
    Feature,
    FrameObservation,
    Pose,
    RegionVertex,
    RelationCandidate,
)
from .static_builder import Doorway, assign_region

logger = logging.getLogger(__name__)

EVENT_KINDS = ("appear", "move", "remove", "relation_start", "relation_stop")
SCAN_CAMERA = "scan"
# looking straight down: camera z points to world -z
OVERHEAD = (0.0, 1.0, 0.0, 0.0)
OVERHEAD_HEIGHT_M = 3.0
INTRINSICS = (525.0, 525.0, 320.0, 240.0)


@dataclass(frozen=True)
class Noise:
    detection_dropout: float = 0.0
    label_flip: float = 0.0
    box_jitter_m: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("detection_dropout", "label_flip"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.box_jitter_m < 0:
            raise ValueError("box_jitter_m must be non-negative")

    def to_dict(self) -> dict:
        return {
            "detection_dropout": self.detection_dropout,
            "label_flip": self.label_flip,
            "box_jitter_m": self.box_jitter_m,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Noise:
        return cls(
            float(d.get("detection_dropout", 0.0)), float(d.get("label_flip", 0.0)),
            float(d.get("box_jitter_m", 0.0)), int(d.get("rng_seed", 0)),
        )


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    label: str
    center: tuple
    size: tuple

    def to_dict(self) -> dict:
        return {"id": self.id, "label": self.label, "center": list(self.center), "size": list(self.size)}

    @classmethod
    def from_dict(cls, d: dict) -> ObjectSpec:
        center = tuple(float(v) for v in d["center"])
        size = tuple(float(v) for v in d["size"])
        if len(center) != 3 or len(size) != 3 or min(size) <= 0:
            raise ValueError(f"object {d.get('id')!r}: center and size need 3 components, size positive")
        return cls(d["id"], d["label"], center, size)


@dataclass(frozen=True)
class CameraSpec:
    id: str
    region: str
    pose: Optional[Pose] = None

    def to_dict(self) -> dict:
        return {"id": self.id, "region": self.region, "pose": self.pose.to_dict() if self.pose else None}

    @classmethod
    def from_dict(cls, d: dict) -> CameraSpec:
        pose = Pose.from_dict(d["pose"]) if d.get("pose") is not None else None
        return cls(d["id"], d["region"], pose)


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    params: dict

    def to_dict(self) -> dict:
        return {"time": self.time, "kind": self.kind, "params": self.params}

    @classmethod
    def from_dict(cls, d: dict) -> Event:
        if d["kind"] not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {d['kind']!r}")
        return cls(float(d["time"]), d["kind"], dict(d.get("params", {})))


@dataclass(frozen=True)
class Scenario:
    name: str
    duration_s: float
    regions: tuple
    doorways: tuple  # (Doorway, (region_a, region_b)) pairs
    objects: tuple
    cameras: tuple
    timeline: tuple = ()
    noise: Noise = Noise()
    frame_hz: float = 5.0
    feature_dim: int = 16
    relation_confidence: float = 0.9
    robot_start: Optional[str] = None

    def __post_init__(self):
        validate_scenario(self)

    def with_noise(self, **changes) -> Scenario:
        d = self.noise.to_dict()
        d.update(changes)
        return replace(self, noise=Noise.from_dict(d))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "duration_s": self.duration_s,
            "frame_hz": self.frame_hz,
            "feature_dim": self.feature_dim,
            "relation_confidence": self.relation_confidence,
            "regions": [r.to_dict() for r in self.regions],
            "doorways": [dict(door.to_dict(), connects=list(pair)) for door, pair in self.doorways],
            "objects": [o.to_dict() for o in self.objects],
            "cameras": [c.to_dict() for c in self.cameras],
            "timeline": [e.to_dict() for e in self.timeline],
            "noise": self.noise.to_dict(),
            "robot": {"start_region": self.robot_start},
        }

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        doors = []
        for x in d.get("doorways", ()):
            pair = tuple(x.get("connects", ()))
            if len(pair) != 2:
                raise ValueError(f"doorway {x.get('id')!r} must list the two regions it connects")
            doors.append((Doorway.from_dict(x), pair))
        return cls(
            d.get("name", "scenario"),
            float(d["duration_s"]),
            tuple(RegionVertex.from_dict(r) for r in d["regions"]),
            tuple(doors),
            tuple(ObjectSpec.from_dict(o) for o in d.get("objects", ())),
            tuple(CameraSpec.from_dict(c) for c in d.get("cameras", ())),
            tuple(Event.from_dict(e) for e in d.get("timeline", ())),
            Noise.from_dict(d.get("noise", {})),
            float(d.get("frame_hz", 5.0)),
            int(d.get("feature_dim", 16)),
            float(d.get("relation_confidence", 0.9)),
            (d.get("robot") or {}).get("start_region"),
        )


def validate_scenario(sc: Scenario) -> None:
    if not sc.duration_s > 0 or not sc.frame_hz > 0:
        raise ValueError("duration_s and frame_hz must be positive")
    if sc.feature_dim < 1:
        raise ValueError("feature_dim must be at least 1")
    region_ids = {r.id for r in sc.regions}
    if len(region_ids) != len(sc.regions):
        raise ValueError("duplicate region ids")
    for door, pair in sc.doorways:
        for rid in pair:
            if rid not in region_ids:
                raise ValueError(f"doorway {door.id!r} connects unknown region {rid!r}")
    for cam in sc.cameras:
        if cam.region not in region_ids:
            raise ValueError(f"camera {cam.id!r} watches unknown region {cam.region!r}")
    if len({c.id for c in sc.cameras}) != len(sc.cameras):
        raise ValueError("duplicate camera ids")
    defined = {o.id for o in sc.objects}
    if len(defined) != len(sc.objects):
        raise ValueError("duplicate object ids")
    prev = -math.inf
    for i, ev in enumerate(sc.timeline):
        if ev.time < prev:
            raise ValueError(f"timeline event {i} at t={ev.time} is out of order")
        prev = ev.time
        p = ev.params
        if ev.kind == "appear":
            spec = ObjectSpec.from_dict(p)
            if spec.id in defined:
                raise ValueError(f"event {i}: object {spec.id!r} already defined")
            defined.add(spec.id)
            continue
        refs = [p.get("subject"), p.get("object")] if ev.kind.startswith("relation") else [p.get("id")]
        for ref in refs:
            if ref not in defined:
                raise ValueError(f"event {i} ({ev.kind}) references undefined object {ref!r}")
        if ev.kind.startswith("relation") and not p.get("predicate"):
            raise ValueError(f"event {i}: relation needs a predicate")
        if ev.kind == "move":
            if len(p.get("to", ())) != 3 or float(p.get("duration", 0.0)) < 0:
                raise ValueError(f"event {i}: move needs a 3D 'to' and non-negative 'duration'")


def load_scenario(path) -> Scenario:
    return load_decoded(path, Scenario.from_dict)


# -- world state -------------------------------------------------------------

@dataclass
class _Track:
    spec: ObjectSpec
    appear: float
    remove: float = math.inf
    # (start, end, from, to) segments in time order
    moves: list = field(default_factory=list)


class World:
    """Object positions, presence and active relations as functions of time."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.objects: dict[str, _Track] = {o.id: _Track(o, 0.0) for o in scenario.objects}
        self.relations: list[tuple[str, str, str, float, float]] = []
        open_rel: dict[tuple, float] = {}
        for ev in scenario.timeline:
            p = ev.params
            if ev.kind == "appear":
                spec = ObjectSpec.from_dict(p)
                self.objects[spec.id] = _Track(spec, ev.time)
            elif ev.kind == "remove":
                tr = self.objects[p["id"]]
                tr.remove = min(tr.remove, ev.time)
            elif ev.kind == "move":
                tr = self.objects[p["id"]]
                start = ev.time
                if tr.moves and start < tr.moves[-1][1]:
                    raise ValueError(f"overlapping moves for {p['id']!r} at t={start}")
                frm = self.position(p["id"], start)
                to = tuple(float(v) for v in p["to"])
                tr.moves.append((start, start + float(p.get("duration", 0.0)), frm, to))
            elif ev.kind == "relation_start":
                key = (p["subject"], p["predicate"], p["object"])
                open_rel.setdefault(key, ev.time)
            else:
                key = (p["subject"], p["predicate"], p["object"])
                if key in open_rel:
                    self.relations.append((*key, open_rel.pop(key), ev.time))
        for key, start in open_rel.items():
            self.relations.append((*key, start, math.inf))
        self.relations.sort(key=lambda r: (r[3], r[0], r[1], r[2]))
        self.labels = sorted({t.spec.label for t in self.objects.values()})

    def present(self, oid: str, t: float) -> bool:
        tr = self.objects[oid]
        return tr.appear <= t < tr.remove

    def position(self, oid: str, t: float) -> tuple:
        tr = self.objects[oid]
        pos = tr.spec.center
        for start, end, frm, to in tr.moves:
            if t < start:
                break
            if t >= end:
                pos = to
            else:
                a = (t - start) / (end - start)
                pos = tuple(f + a * (g - f) for f, g in zip(frm, to))
                break
        return pos

    def box(self, oid: str, t: float) -> Box3:
        return Box3.from_center(self.position(oid, t), self.objects[oid].spec.size)

    def present_ids(self, t: float) -> list[str]:
        return sorted(oid for oid in self.objects if self.present(oid, t))

    def active_relations(self, t: float) -> list[tuple[str, str, str]]:
        return [
            (s, p, o) for s, p, o, a, b in self.relations
            if a <= t < b and self.present(s, t) and self.present(o, t)
        ]


def frame_times(duration_s: float, hz: float) -> list[float]:
    n = int(math.floor(duration_s * hz + 1e-9))
    return [round(k / hz, 6) for k in range(n)]


def object_feature(oid: str, dim: int) -> Feature:
    """Stable appearance vector per object, independent of the run seed."""
    v = np.random.default_rng(zlib.crc32(oid.encode())).standard_normal(dim)
    v = v / np.linalg.norm(v)
    return Feature(tuple(round(float(x), 6) for x in v))


def project_rect(box: Box3, pose: Pose, intrinsics=INTRINSICS) -> Optional[tuple]:
    """Weak-perspective image rectangle of a box: projected centre, extents scaled at centre depth."""
    fx, fy, cx, cy = intrinsics
    x, y, z = pose.to_camera(box.center)
    if z <= 1e-6:
        return None
    ext = box.extents
    # camera-frame half extents of the axis-aligned world box
    ax = [pose.inverse_rotate(tuple(1.0 if i == j else 0.0 for i in range(3))) for j in range(3)]
    hw = sum(abs(ax[j][0]) * ext[j] for j in range(3)) / 2.0
    hh = sum(abs(ax[j][1]) * ext[j] for j in range(3)) / 2.0
    u, v = fx * x / z + cx, fy * y / z + cy
    return tuple(round(c, 4) for c in (u - fx * hw / z, v - fy * hh / z, u + fx * hw / z, v + fy * hh / z))


def _virtual_pose(region: RegionVertex) -> Pose:
    cx, cy = region.centroid
    return Pose((cx, cy, OVERHEAD_HEIGHT_M), OVERHEAD)


def _round_box(box: Box3) -> Box3:
    return Box3(tuple(round(v, 6) for v in box.min_corner), tuple(round(v, 6) for v in box.max_corner))


# -- simulation --------------------------------------------------------------

@dataclass
class SimOutput:
    scenario: Scenario
    seed: int
    streams: dict  # camera id -> list of FrameObservation / RelationCandidate in emit order
    scan: list

    def frames(self, camera_id: str) -> list:
        return [r for r in self.streams[camera_id] if isinstance(r, FrameObservation)]

    def candidates(self, camera_id: str) -> list:
        return [r for r in self.streams[camera_id] if isinstance(r, RelationCandidate)]


def scan_frames(world: World) -> list[FrameObservation]:
    """Two noise-free posed sweeps at t=0 and t=1 over everything present at t=0."""
    pose = Pose((0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0))
    dim = world.scenario.feature_dim
    frames = []
    for t in (0.0, 1.0):
        dets = []
        for oid in world.present_ids(0.0):
            box = _round_box(world.box(oid, 0.0))
            dets.append(Detection(world.objects[oid].spec.label, 1.0, object_feature(oid, dim), (0, 0, 0, 0), None, box))
        frames.append(FrameObservation(SCAN_CAMERA, t, pose, tuple(dets)))
    return frames


def simulate(scenario: Scenario, seed: Optional[int] = None, windows=None) -> SimOutput:
    """Camera streams with seeded noise, for the whole run or only frames inside ``windows``.

    ``windows`` is an iterable of half-open ``(start, end)`` intervals.
    """
    seed = scenario.noise.rng_seed if seed is None else int(seed)
    noise = scenario.noise
    world = World(scenario)
    rng = np.random.default_rng(seed)
    regions = {r.id: r for r in scenario.regions}
    labels = world.labels
    features = {oid: object_feature(oid, scenario.feature_dim) for oid in world.objects}
    times = frame_times(scenario.duration_s, scenario.frame_hz)
    if windows is not None:
        spans = list(windows)
        times = [t for t in times if any(a - 1e-6 <= t < b - 1e-6 for a, b in spans)]
    streams = {c.id: [] for c in scenario.cameras}
    for t in times:
        present = world.present_ids(t)
        active = world.active_relations(t)
        for cam in sorted(scenario.cameras, key=lambda c: c.id):
            poly = regions[cam.region].polygon
            view_pose = cam.pose or _virtual_pose(regions[cam.region])
            dets, index = [], {}
            for oid in present:
                box = world.box(oid, t)
                cx, cy, _ = box.center
                if not poly.covers(Point(cx, cy)):
                    continue
                # fixed draw pattern per slot: dropout, flip, flip target, 3 jitter normals
                u_drop, u_flip = rng.random(2)
                flip_idx = int(rng.integers(0, max(len(labels) - 1, 1)))
                jit = rng.standard_normal(3)
                if u_drop < noise.detection_dropout:
                    continue
                label = world.objects[oid].spec.label
                if u_flip < noise.label_flip and len(labels) > 1:
                    others = [x for x in labels if x != label]
                    label = others[flip_idx % len(others)]
                if noise.box_jitter_m > 0:
                    box = Box3.from_center(
                        tuple(c + noise.box_jitter_m * j for c, j in zip(box.center, jit)), box.extents
                    )
                rect = project_rect(box, view_pose)
                if rect is None:
                    continue
                if cam.pose is not None:
                    depth = round(cam.pose.to_camera(box.center)[2], 6)
                    det = Detection(label, 1.0, features[oid], rect, depth, _round_box(box))
                else:
                    det = Detection(label, 1.0, features[oid], rect)
                index[oid] = len(dets)
                dets.append(det)
            out = streams[cam.id]
            out.append(FrameObservation(cam.id, t, cam.pose, tuple(dets)))
            for s, p, o in active:
                if s in index and o in index:
                    out.append(RelationCandidate(t, index[s], index[o], p, scenario.relation_confidence))
    return SimOutput(scenario, seed, streams, scan_frames(world))


# -- ground truth ------------------------------------------------------------

@dataclass(frozen=True)
class TickTruth:
    tick: int
    window: tuple
    graph: EvalGraph

    def to_dict(self) -> dict:
        return {"tick": self.tick, "window": list(self.window), **self.graph.to_dict()}


def ground_truth(world: World, window_end: float, window_s: float) -> EvalGraph:
    """Objects present during ``[window_end - window_s, window_end)`` with their last boxes, plus edges.

    Relation edges are those holding at some frame of the window.
    """
    sc = world.scenario
    start = window_end - window_s
    times = [t for t in frame_times(sc.duration_s, sc.frame_hz) if start - 1e-6 <= t < window_end - 1e-6]
    last_seen: dict[str, float] = {}
    rels = set()
    for t in times:
        for oid in world.present_ids(t):
            last_seen[oid] = t
        rels.update(world.active_relations(t))
    vertices, edges = [], set()
    for oid in sorted(last_seen):
        box = _round_box(world.box(oid, last_seen[oid]))
        region = assign_region(box, sc.regions)
        vertices.append(EvalVertex(oid, world.objects[oid].spec.label, box, region))
        edges.add(edge(BELONGING, oid, region))
    for _, (a, b) in sc.doorways:
        edges.add(edge(CONNECTIVITY, a, b))
    tuples = []
    for s, p, o in sorted(rels):
        edges.add(edge(RELATION, s, o, p))
        tuples.append((world.objects[s].spec.label, p, world.objects[o].spec.label))
    return EvalGraph(tuple(vertices), frozenset(edges), tuple(tuples), (), frozenset(r.id for r in sc.regions))


def ground_truth_series(scenario: Scenario, window_s: float, interval_s: Optional[float] = None) -> list[TickTruth]:
    """Ground truth at every multiple of ``interval_s`` (default: the window) up to the run end."""
    world = World(scenario)
    interval = interval_s or window_s
    out = []
    k = 1
    while k * interval <= scenario.duration_s + 1e-9:
        end = round(k * interval, 9)
        out.append(TickTruth(int(round(end / window_s)), (end - window_s, end), ground_truth(world, end, window_s)))
        k += 1
    return out


def camera_regions(scenario: Scenario) -> dict:
    return {c.id: c.region for c in scenario.cameras}


def write_outputs(out: SimOutput, directory, window_s: float = 10.0) -> list[Path]:
    """Write streams, scan, layout files and ground truth into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    sc = out.scenario
    written = []
    for cam, records in sorted(out.streams.items()):
        p = d / f"stream.{cam}.jsonl"
        write_jsonl(p, (r.to_dict() for r in records))
        written.append(p)
    files = {
        "frames.jsonl": None,
        "regions.json": [r.to_dict() for r in sc.regions],
        "doorways.json": [door.to_dict() for door, _ in sc.doorways],
        "camera_region.json": camera_regions(sc),
        "gt.json": {
            "scenario": sc.name,
            "seed": out.seed,
            "window_s": window_s,
            "ticks": [t.to_dict() for t in ground_truth_series(sc, window_s)],
        },
    }
    for name, payload in files.items():
        p = d / name
        if payload is None:
            write_jsonl(p, (f.to_dict() for f in out.scan))
        else:
            write_json(p, payload)
        written.append(p)
    return written


def check_scenario_file(path) -> Scenario:
    """Load a scenario, raising :class:`InputError` with the file name on any problem."""
    try:
        return load_scenario(path)
    except InputError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(path, str(exc)) from exc


def bundled(name: str) -> Path:
    return Path(__file__).parent / "data" / name
