"""Domain types shared by every stage of the pipeline, plus their JSON codec.

Every type is a frozen dataclass holding tuples, so values can be handed
between threads without copying. ``to_dict``/``from_dict`` give the canonical
JSON encoding (snake_case field names) used on every file and wire boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, NamedTuple, Optional

from shapely.geometry import Polygon

logger = logging.getLogger(__name__)

Vec2 = tuple[float, float]
Vec3 = tuple[float, float, float]
Rect = tuple[float, float, float, float]  # x1, y1, x2, y2 in pixels
Span = tuple[float, float]

CONNECTIVITY = "connectivity"
BELONGING = "belonging"


def _vec(values, n: int) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if len(out) != n:
        raise ValueError(f"expected {n} components, got {len(out)}")
    return out


@dataclass(frozen=True)
class Pose:
    position: Vec3
    orientation: tuple[float, float, float, float]  # w, x, y, z

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position, 3))
        object.__setattr__(self, "orientation", _vec(self.orientation, 4))
        norm = math.sqrt(sum(q * q for q in self.orientation))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"pose quaternion must be unit length, got norm {norm}")

    def rotate(self, v: Vec3) -> Vec3:
        w, x, y, z = self.orientation
        # v' = v + 2 q_vec x (q_vec x v + w v)
        tx = y * v[2] - z * v[1] + w * v[0]
        ty = z * v[0] - x * v[2] + w * v[1]
        tz = x * v[1] - y * v[0] + w * v[2]
        return (
            v[0] + 2.0 * (y * tz - z * ty),
            v[1] + 2.0 * (z * tx - x * tz),
            v[2] + 2.0 * (x * ty - y * tx),
        )

    def inverse_rotate(self, v: Vec3) -> Vec3:
        w, x, y, z = self.orientation
        return Pose(self.position, (w, -x, -y, -z)).rotate(v)

    def to_world(self, p: Vec3) -> Vec3:
        r = self.rotate(p)
        return (r[0] + self.position[0], r[1] + self.position[1], r[2] + self.position[2])

    def to_camera(self, p: Vec3) -> Vec3:
        d = (p[0] - self.position[0], p[1] - self.position[1], p[2] - self.position[2])
        return self.inverse_rotate(d)

    def to_dict(self) -> dict:
        return {"position": list(self.position), "orientation": list(self.orientation)}

    @classmethod
    def from_dict(cls, d: dict) -> Pose:
        return cls(tuple(d["position"]), tuple(d["orientation"]))


@dataclass(frozen=True)
class Box3:
    min_corner: Vec3
    max_corner: Vec3

    def __post_init__(self):
        lo = _vec(self.min_corner, 3)
        hi = _vec(self.max_corner, 3)
        if any(not math.isfinite(v) for v in lo + hi):
            raise ValueError("box corners must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"min_corner {lo} exceeds max_corner {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @classmethod
    def from_center(cls, center, size) -> Box3:
        c = _vec(center, 3)
        s = _vec(size, 3)
        return cls(
            tuple(ci - si / 2.0 for ci, si in zip(c, s)),
            tuple(ci + si / 2.0 for ci, si in zip(c, s)),
        )

    @property
    def extents(self) -> Vec3:
        return tuple(b - a for a, b in zip(self.min_corner, self.max_corner))

    @property
    def center(self) -> Vec3:
        return tuple((a + b) / 2.0 for a, b in zip(self.min_corner, self.max_corner))

    def volume(self) -> float:
        return box_volume(self)

    def envelope(self, other: Box3) -> Box3:
        return Box3(
            tuple(min(a, b) for a, b in zip(self.min_corner, other.min_corner)),
            tuple(max(a, b) for a, b in zip(self.max_corner, other.max_corner)),
        )

    def corners(self) -> list[Vec3]:
        xs, ys, zs = zip(self.min_corner, self.max_corner)
        return [(x, y, z) for x in xs for y in ys for z in zs]

    def to_dict(self) -> dict:
        return {"min_corner": list(self.min_corner), "max_corner": list(self.max_corner)}

    @classmethod
    def from_dict(cls, d: dict) -> Box3:
        return cls(tuple(d["min_corner"]), tuple(d["max_corner"]))


def box_volume(a: Box3) -> float:
    ex, ey, ez = a.extents
    return ex * ey * ez


class Overlap(NamedTuple):
    ratio: float
    degenerate: bool


def box_overlap(a: Box3, b: Box3, metric: str = "min") -> Overlap:
    """Overlap of two axis-aligned boxes.

    ``metric="min"`` divides the intersection by the smaller volume, so a small
    box lying fully inside a large one scores 1.0. ``metric="iou"`` gives
    intersection over union. Zero-volume inputs yield ``Overlap(0.0, True)``.
    """
    if metric not in ("min", "iou"):
        raise ValueError(f"unknown overlap metric {metric!r}")
    va, vb = box_volume(a), box_volume(b)
    if va <= 0.0 or vb <= 0.0:
        logger.debug("degenerate box in overlap: %s %s", a, b)
        return Overlap(0.0, True)
    inter = 1.0
    for lo_a, hi_a, lo_b, hi_b in zip(a.min_corner, a.max_corner, b.min_corner, b.max_corner):
        side = min(hi_a, hi_b) - max(lo_a, lo_b)
        if side <= 0.0:
            return Overlap(0.0, False)
        inter *= side
    denom = min(va, vb) if metric == "min" else va + vb - inter
    return Overlap(min(1.0, inter / denom), False)


def box_overlap_ratio(a: Box3, b: Box3, metric: str = "min") -> float:
    return box_overlap(a, b, metric).ratio


@dataclass(frozen=True)
class Feature:
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("feature entries must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return len(self.values)

    def cosine(self, other: Feature) -> float:
        if other.dim != self.dim:
            raise ValueError(f"feature dimension mismatch: {self.dim} vs {other.dim}")
        dot = sum(a * b for a, b in zip(self.values, other.values))
        na = math.sqrt(sum(a * a for a in self.values))
        nb = math.sqrt(sum(b * b for b in other.values))
        if na == 0.0 or nb == 0.0:
            return 0.0
        return dot / (na * nb)

    def to_dict(self) -> dict:
        return {"values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> Feature:
        return cls(tuple(d["values"]))


@dataclass(frozen=True)
class RegionVertex:
    id: str
    name: str
    footprint: tuple[Vec2, ...]
    centroid: Optional[Vec2] = None

    def __post_init__(self):
        pts = tuple(_vec(p, 2) for p in self.footprint)
        if len(pts) < 3:
            raise ValueError(f"region {self.id!r}: footprint needs at least 3 points")
        poly = Polygon(pts)
        if not poly.is_valid or not poly.exterior.is_simple or poly.area <= 0.0:
            raise ValueError(f"region {self.id!r}: footprint is not a simple polygon")
        if not poly.exterior.is_ccw:
            pts = tuple(reversed(pts))
        object.__setattr__(self, "footprint", pts)
        if self.centroid is None:
            c = poly.centroid
            object.__setattr__(self, "centroid", (c.x, c.y))
        else:
            object.__setattr__(self, "centroid", _vec(self.centroid, 2))

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.footprint)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "footprint": [list(p) for p in self.footprint],
            "centroid": list(self.centroid),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RegionVertex:
        return cls(
            d["id"],
            d.get("name", d["id"]),
            tuple(tuple(p) for p in d["footprint"]),
            tuple(d["centroid"]) if d.get("centroid") is not None else None,
        )


@dataclass(frozen=True)
class StaticObjectVertex:
    id: str
    class_label: str
    box: Box3
    region_id: str
    merged_from: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "class_label": self.class_label,
            "box": self.box.to_dict(),
            "region_id": self.region_id,
            "merged_from": list(self.merged_from),
        }

    @classmethod
    def from_dict(cls, d: dict) -> StaticObjectVertex:
        return cls(
            d["id"], d["class_label"], Box3.from_dict(d["box"]), d["region_id"],
            tuple(d.get("merged_from", ())),
        )


@dataclass(frozen=True)
class StaticEdge:
    kind: str
    a: str
    b: str

    def __post_init__(self):
        if self.kind not in (CONNECTIVITY, BELONGING):
            raise ValueError(f"unknown static edge kind {self.kind!r}")
        if self.a == self.b:
            raise ValueError(f"self edge on {self.a!r}")
        # connectivity is undirected: keep one canonical orientation
        if self.kind == CONNECTIVITY and self.b < self.a:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)

    def joins(self, u: str, v: str) -> bool:
        if self.kind == CONNECTIVITY:
            return {u, v} == {self.a, self.b}
        return (self.a, self.b) == (u, v)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, d: dict) -> StaticEdge:
        return cls(d["kind"], d["a"], d["b"])


@dataclass(frozen=True)
class InstanceVertex:
    track_id: int
    class_label: str
    feature: Feature
    last_footprint: Rect
    first_seen: float
    last_seen: float
    box3: Optional[Box3] = None

    def __post_init__(self):
        object.__setattr__(self, "last_footprint", _vec(self.last_footprint, 4))
        if self.first_seen > self.last_seen:
            raise ValueError("first_seen must not exceed last_seen")

    def to_dict(self) -> dict:
        return {
            "track_id": self.track_id,
            "class_label": self.class_label,
            "feature": self.feature.to_dict(),
            "last_footprint": list(self.last_footprint),
            "box3": self.box3.to_dict() if self.box3 is not None else None,
            "first_seen": self.first_seen,
            "last_seen": self.last_seen,
        }

    @classmethod
    def from_dict(cls, d: dict) -> InstanceVertex:
        return cls(
            int(d["track_id"]),
            d["class_label"],
            Feature.from_dict(d["feature"]),
            tuple(d["last_footprint"]),
            float(d["first_seen"]),
            float(d["last_seen"]),
            Box3.from_dict(d["box3"]) if d.get("box3") is not None else None,
        )


@dataclass(frozen=True)
class RelationEdge:
    subject_id: int
    subject_class: str
    object_id: int
    object_class: str
    predicate: str
    spans: tuple[Span, ...]
    confidence: float = 1.0

    def __post_init__(self):
        spans = tuple(_vec(s, 2) for s in self.spans)
        for ta, tb in spans:
            if not ta < tb:
                raise ValueError(f"span ({ta}, {tb}) is not increasing")
        for (_, prev_b), (next_a, _) in zip(spans, spans[1:]):
            if next_a <= prev_b:
                raise ValueError("spans must be sorted and pairwise disjoint")
        object.__setattr__(self, "spans", spans)

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.subject_id, self.object_id, self.predicate)

    def active_at(self, t: float) -> bool:
        return any(ta <= t <= tb for ta, tb in self.spans)

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "subject_class": self.subject_class,
            "object_id": self.object_id,
            "object_class": self.object_class,
            "predicate": self.predicate,
            "spans": [list(s) for s in self.spans],
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RelationEdge:
        return cls(
            int(d["subject_id"]), d["subject_class"], int(d["object_id"]), d["object_class"],
            d["predicate"], tuple(tuple(s) for s in d["spans"]), float(d.get("confidence", 1.0)),
        )


@dataclass(frozen=True)
class DynamicSubgraph:
    window_start: float
    window_end: float
    camera_id: str
    vertices: tuple[InstanceVertex, ...] = ()
    edges: tuple[RelationEdge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(self.edges))
        ids = {v.track_id for v in self.vertices}
        if len(ids) != len(self.vertices):
            raise ValueError("duplicate track id in subgraph")
        for e in self.edges:
            if e.subject_id not in ids or e.object_id not in ids:
                raise ValueError(f"edge {e.key} references a vertex outside the subgraph")

    def vertex(self, track_id: int) -> InstanceVertex:
        for v in self.vertices:
            if v.track_id == track_id:
                return v
        raise KeyError(track_id)

    def to_dict(self) -> dict:
        return {
            "window_start": self.window_start,
            "window_end": self.window_end,
            "camera_id": self.camera_id,
            "vertices": [v.to_dict() for v in self.vertices],
            "edges": [e.to_dict() for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> DynamicSubgraph:
        return cls(
            float(d["window_start"]), float(d["window_end"]), d["camera_id"],
            tuple(InstanceVertex.from_dict(v) for v in d["vertices"]),
            tuple(RelationEdge.from_dict(e) for e in d["edges"]),
        )


@dataclass(frozen=True)
class GlobalGraph:
    regions: tuple[RegionVertex, ...] = ()
    static_objects: tuple[StaticObjectVertex, ...] = ()
    static_edges: tuple[StaticEdge, ...] = ()
    version: int = 0

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "static_objects", tuple(self.static_objects))
        object.__setattr__(self, "static_edges", tuple(self.static_edges))
        region_ids = [r.id for r in self.regions]
        if len(set(region_ids)) != len(region_ids):
            raise ValueError("duplicate region id")
        object_ids = [o.id for o in self.static_objects]
        if len(set(object_ids)) != len(object_ids) or set(object_ids) & set(region_ids):
            raise ValueError("static object ids must be unique and distinct from region ids")
        if len(set(self.static_edges)) != len(self.static_edges):
            raise ValueError("duplicate static edge")
        known = set(region_ids)
        for o in self.static_objects:
            if o.region_id not in known:
                raise ValueError(f"object {o.id!r} references unknown region {o.region_id!r}")
        for e in self.static_edges:
            if e.kind == CONNECTIVITY and not (e.a in known and e.b in known):
                raise ValueError(f"connectivity edge {e.a}-{e.b} must join two regions")
            if e.kind == BELONGING and not (e.a in object_ids and e.b in known):
                raise ValueError(f"belonging edge {e.a}->{e.b} must join object to region")

    def region(self, region_id: str) -> RegionVertex:
        for r in self.regions:
            if r.id == region_id:
                return r
        raise KeyError(region_id)

    def has_region(self, region_id: str) -> bool:
        return any(r.id == region_id for r in self.regions)

    def static_object(self, object_id: str) -> StaticObjectVertex:
        for o in self.static_objects:
            if o.id == object_id:
                return o
        raise KeyError(object_id)

    def neighbors(self, region_id: str) -> list[str]:
        out = set()
        for e in self.static_edges:
            if e.kind != CONNECTIVITY:
                continue
            if e.a == region_id:
                out.add(e.b)
            elif e.b == region_id:
                out.add(e.a)
        return sorted(out)

    def to_dict(self) -> dict:
        return {
            "regions": [r.to_dict() for r in self.regions],
            "static_objects": [o.to_dict() for o in self.static_objects],
            "static_edges": [e.to_dict() for e in self.static_edges],
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GlobalGraph:
        return cls(
            tuple(RegionVertex.from_dict(r) for r in d["regions"]),
            tuple(StaticObjectVertex.from_dict(o) for o in d["static_objects"]),
            tuple(StaticEdge.from_dict(e) for e in d["static_edges"]),
            int(d.get("version", 0)),
        )


@dataclass(frozen=True)
class AnchorEdge:
    """Belonging edge from a dynamic instance to a region."""

    track_id: int
    region_id: str

    def to_dict(self) -> dict:
        return {"track_id": self.track_id, "region_id": self.region_id}

    @classmethod
    def from_dict(cls, d: dict) -> AnchorEdge:
        return cls(int(d["track_id"]), d["region_id"])


@dataclass(frozen=True)
class MergeRecord:
    camera_id: str
    track_id: int
    static_id: str

    def to_dict(self) -> dict:
        return {"camera_id": self.camera_id, "track_id": self.track_id, "static_id": self.static_id}

    @classmethod
    def from_dict(cls, d: dict) -> MergeRecord:
        return cls(d["camera_id"], int(d["track_id"]), d["static_id"])


@dataclass(frozen=True)
class AnchoredSubgraph:
    subgraph: DynamicSubgraph
    anchors: tuple[AnchorEdge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(self.anchors))

    def to_dict(self) -> dict:
        return {"subgraph": self.subgraph.to_dict(), "anchors": [a.to_dict() for a in self.anchors]}

    @classmethod
    def from_dict(cls, d: dict) -> AnchoredSubgraph:
        return cls(
            DynamicSubgraph.from_dict(d["subgraph"]),
            tuple(AnchorEdge.from_dict(a) for a in d["anchors"]),
        )


class Attachment(NamedTuple):
    """How one dynamic instance hangs off the static graph."""

    kind: str  # "merged" | "anchored" | "component"
    target: str  # static id when merged, else region id
    region_id: str


@dataclass(frozen=True)
class UnifiedSnapshot:
    base: GlobalGraph
    anchored: tuple[AnchoredSubgraph, ...] = ()
    merges: tuple[MergeRecord, ...] = ()
    tick: int = 0
    wall_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "anchored", tuple(self.anchored))
        object.__setattr__(self, "merges", tuple(self.merges))

    def merged_static(self, camera_id: str, track_id: int) -> Optional[str]:
        for m in self.merges:
            if m.camera_id == camera_id and m.track_id == track_id:
                return m.static_id
        return None

    def attachments(self) -> dict[tuple[str, int], list[Attachment]]:
        """Every way each instance is attached; a well-formed snapshot has exactly one each.

        Non-merged instances without a direct anchor edge attach through their
        relation component when that component carries anchors or merges that
        all resolve to a single region.
        """
        out: dict[tuple[str, int], list[Attachment]] = {}
        for entry in self.anchored:
            sub = entry.subgraph
            cam = sub.camera_id
            merged = {m.track_id: m.static_id for m in self.merges if m.camera_id == cam}
            anchored = {}
            for a in entry.anchors:
                anchored.setdefault(a.track_id, []).append(a.region_id)
            vertex_region: dict[int, set[str]] = {}
            for v in sub.vertices:
                regions = set(anchored.get(v.track_id, ()))
                if v.track_id in merged:
                    regions.add(self.base.static_object(merged[v.track_id]).region_id)
                vertex_region[v.track_id] = regions
            comp = connected_components(sub)
            for v in sub.vertices:
                found = []
                if v.track_id in merged:
                    sid = merged[v.track_id]
                    found.append(Attachment("merged", sid, self.base.static_object(sid).region_id))
                for rid in anchored.get(v.track_id, ()):
                    found.append(Attachment("anchored", rid, rid))
                if not found:
                    regions = set()
                    for member in comp[v.track_id]:
                        regions |= vertex_region[member]
                    for rid in sorted(regions):
                        found.append(Attachment("component", rid, rid))
                out[(cam, v.track_id)] = found
        return out

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "anchored": [a.to_dict() for a in self.anchored],
            "merges": [m.to_dict() for m in self.merges],
            "tick": self.tick,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> UnifiedSnapshot:
        return cls(
            GlobalGraph.from_dict(d["base"]),
            tuple(AnchoredSubgraph.from_dict(a) for a in d["anchored"]),
            tuple(MergeRecord.from_dict(m) for m in d["merges"]),
            int(d["tick"]),
            float(d["wall_time"]),
        )


def connected_components(sub: DynamicSubgraph) -> dict[int, frozenset[int]]:
    """Map each track id to the member set of its component; span timing is ignored."""
    parent = {v.track_id: v.track_id for v in sub.vertices}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in sub.edges:
        ra, rb = find(e.subject_id), find(e.object_id)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, set[int]] = {}
    for tid in parent:
        groups.setdefault(find(tid), set()).add(tid)
    return {tid: frozenset(groups[find(tid)]) for tid in parent}


@dataclass(frozen=True)
class Detection:
    label: str
    score: float
    feature: Feature
    rect: Rect
    depth_m: Optional[float] = None
    box3: Optional[Box3] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")
        object.__setattr__(self, "rect", _vec(self.rect, 4))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "score": self.score,
            "feature": self.feature.to_dict(),
            "rect": list(self.rect),
            "depth_m": self.depth_m,
            "box3": self.box3.to_dict() if self.box3 is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Detection:
        return cls(
            d["label"], float(d["score"]), Feature.from_dict(d["feature"]), tuple(d["rect"]),
            float(d["depth_m"]) if d.get("depth_m") is not None else None,
            Box3.from_dict(d["box3"]) if d.get("box3") is not None else None,
        )


@dataclass(frozen=True)
class FrameObservation:
    camera_id: str
    time: float
    pose: Optional[Pose] = None
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))

    def to_dict(self) -> dict:
        return {
            "kind": "frame",
            "camera_id": self.camera_id,
            "time": self.time,
            "pose": self.pose.to_dict() if self.pose is not None else None,
            "detections": [d.to_dict() for d in self.detections],
        }

    @classmethod
    def from_dict(cls, d: dict) -> FrameObservation:
        return cls(
            d["camera_id"], float(d["time"]),
            Pose.from_dict(d["pose"]) if d.get("pose") is not None else None,
            tuple(Detection.from_dict(x) for x in d.get("detections", ())),
        )


@dataclass(frozen=True)
class RelationCandidate:
    """A scored relation hit at one frame time.

    On the stream wire the two ids index the detections of the same camera's
    frame at ``time``; the dynamic builder rewrites them to window track ids
    before relation assembly.
    """

    time: float
    subject_track: int
    object_track: int
    predicate: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "kind": "relation",
            "time": self.time,
            "subject_track": self.subject_track,
            "object_track": self.object_track,
            "predicate": self.predicate,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RelationCandidate:
        return cls(
            float(d["time"]), int(d["subject_track"]), int(d["object_track"]),
            d["predicate"], float(d["confidence"]),
        )


VERBS = ("navigate", "pick", "place")


@dataclass(frozen=True)
class SkillPrimitive:
    verb: str
    object: str
    region: str

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ValueError(f"verb {self.verb!r} not in {VERBS}")

    def render(self) -> str:
        verb = "navigate to" if self.verb == "navigate" else self.verb
        return f"{verb} {self.object} in {self.region}"

    def to_dict(self) -> dict:
        return {"verb": self.verb, "object": self.object, "region": self.region}

    @classmethod
    def from_dict(cls, d: dict) -> SkillPrimitive:
        return cls(d["verb"], d["object"], d["region"])


@dataclass(frozen=True)
class TaskPlan:
    steps: tuple[SkillPrimitive, ...]
    tick: int

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def render(self) -> str:
        return "\n".join(f"{i}. {s.render()}" for i, s in enumerate(self.steps, 1))

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "tick": self.tick}

    @classmethod
    def from_dict(cls, d: dict) -> TaskPlan:
        return cls(tuple(SkillPrimitive.from_dict(s) for s in d["steps"]), int(d["tick"]))


def frame_or_candidate(d: dict[str, Any]):
    """Decode one stream line, discriminated by its ``kind`` field."""
    kind = d.get("kind", "frame")
    if kind == "frame":
        return FrameObservation.from_dict(d)
    if kind == "relation":
        return RelationCandidate.from_dict(d)
    raise ValueError(f"unknown stream record kind {kind!r}")
