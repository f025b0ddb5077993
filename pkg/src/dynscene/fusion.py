"""Anchoring dynamic subgraphs onto the global static graph."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .model import (
    AnchoredSubgraph,
    AnchorEdge,
    DynamicSubgraph,
    GlobalGraph,
    MergeRecord,
    UnifiedSnapshot,
    box_overlap_ratio,
    box_volume,
    connected_components,
)
from .static_builder import DEFAULT_STATIC_CLASSES, assign_region, normalize_label

logger = logging.getLogger(__name__)

SPATIAL = "spatial"
SEMANTIC = "semantic"


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    mode: str = SPATIAL
    b_thr: float = 0.6
    static_classes: frozenset = DEFAULT_STATIC_CLASSES
    camera_region: Mapping[str, str] = field(default_factory=dict)
    overlap_metric: str = "min"

    def __post_init__(self):
        if self.mode not in (SPATIAL, SEMANTIC):
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if not 0.0 < self.b_thr <= 1.0:
            raise ValueError("b_thr must lie in (0, 1]")
        object.__setattr__(
            self, "static_classes", frozenset(normalize_label(c) for c in self.static_classes)
        )
        object.__setattr__(self, "camera_region", dict(self.camera_region))


def anchor_spatial(base: GlobalGraph, sub: DynamicSubgraph, cfg: FusionConfig):
    """Merge instances that overlap a static vertex by at least ``b_thr``; anchor the rest.

    Among qualifying statics the highest overlap wins, then the larger static
    volume, then the smaller id.
    """
    anchors, merges = [], []
    for v in sorted(sub.vertices, key=lambda v: v.track_id):
        if v.box3 is None:
            raise FusionError("spatial fusion requires posed camera")
        best = None
        for s in base.static_objects:
            r = box_overlap_ratio(v.box3, s.box, cfg.overlap_metric)
            if r <= 0.0 or r < cfg.b_thr:
                continue
            key = (-r, -box_volume(s.box), s.id)
            if best is None or key < best[0]:
                best = (key, s.id)
        if best is not None:
            merges.append(MergeRecord(sub.camera_id, v.track_id, best[1]))
        else:
            anchors.append(AnchorEdge(v.track_id, assign_region(v.box3, base.regions)))
    return AnchoredSubgraph(sub, tuple(anchors)), merges


def anchor_semantic(base: GlobalGraph, sub: DynamicSubgraph, cfg: FusionConfig):
    """Attach each relation component through its designated-class vertices, or anchor it whole.

    A component vertex whose class is in the static class set merges with the
    same-class static vertex of the camera's region (smallest id on ties).
    Components with no such merge get one anchor edge from their lowest track
    id to the camera's region.
    """
    region = cfg.camera_region.get(sub.camera_id)
    if region is None:
        raise FusionError(f"unknown camera_id {sub.camera_id!r}: no camera_region entry")
    if not base.has_region(region):
        raise FusionError(f"camera {sub.camera_id!r} maps to unknown region {region!r}")
    statics_by_class: dict[str, list[str]] = {}
    for s in base.static_objects:
        if s.region_id == region:
            statics_by_class.setdefault(normalize_label(s.class_label), []).append(s.id)
    comps = connected_components(sub)
    seen = set()
    anchors, merges = [], []
    for v in sorted(sub.vertices, key=lambda v: v.track_id):
        members = comps[v.track_id]
        if members in seen:
            continue
        seen.add(members)
        merged_any = False
        for tid in sorted(members):
            label = normalize_label(sub.vertex(tid).class_label)
            if label in cfg.static_classes and label in statics_by_class:
                merges.append(MergeRecord(sub.camera_id, tid, min(statics_by_class[label])))
                merged_any = True
        if not merged_any:
            anchors.append(AnchorEdge(min(members), region))
    return AnchoredSubgraph(sub, tuple(anchors)), merges


def _anchor(base, sub, cfg):
    if cfg.mode == SPATIAL:
        return anchor_spatial(base, sub, cfg)
    return anchor_semantic(base, sub, cfg)


def fuse_spatial(base: GlobalGraph, sub: DynamicSubgraph, cfg: FusionConfig, tick_id: int = 0) -> UnifiedSnapshot:
    entry, merges = anchor_spatial(base, sub, cfg)
    return UnifiedSnapshot(base, (entry,), tuple(merges), tick_id, sub.window_end)


def fuse_semantic(base: GlobalGraph, sub: DynamicSubgraph, cfg: FusionConfig, tick_id: int = 0) -> UnifiedSnapshot:
    entry, merges = anchor_semantic(base, sub, cfg)
    return UnifiedSnapshot(base, (entry,), tuple(merges), tick_id, sub.window_end)


def tick(
    base: GlobalGraph,
    subgraphs: Sequence[DynamicSubgraph],
    cfg: FusionConfig,
    tick_id: int,
    wall_time: Optional[float] = None,
) -> UnifiedSnapshot:
    """Fuse one window's subgraphs into a fresh snapshot; nothing carries over from earlier ticks."""
    ends = {round(s.window_end, 9) for s in subgraphs}
    if len(ends) > 1:
        raise FusionError(f"subgraphs have mixed window ends: {sorted(ends)}")
    cameras = [s.camera_id for s in subgraphs]
    if len(set(cameras)) != len(cameras):
        raise FusionError("more than one subgraph per camera in a tick")
    anchored, merges = [], []
    for sub in sorted(subgraphs, key=lambda s: s.camera_id):
        entry, m = _anchor(base, sub, cfg)
        anchored.append(entry)
        merges.extend(m)
    if wall_time is None:
        wall_time = subgraphs[0].window_end if subgraphs else 0.0
    return UnifiedSnapshot(base, tuple(anchored), tuple(merges), tick_id, wall_time)


class Fuser:
    """Stateful tick loop: each call clears the previous dynamic layer and fuses anew."""

    def __init__(self, base: GlobalGraph, cfg: FusionConfig):
        self.base = base
        self.cfg = cfg
        self.current: Optional[UnifiedSnapshot] = None

    def tick(self, subgraphs: Iterable[DynamicSubgraph], tick_id: int, wall_time: Optional[float] = None):
        self.current = tick(self.base, list(subgraphs), self.cfg, tick_id, wall_time)
        return self.current


def check_snapshot(snap: UnifiedSnapshot) -> list[str]:
    """Invariant violations in a snapshot; empty when every instance is attached exactly once."""
    problems = []
    for (cam, tid), found in snap.attachments().items():
        kinds = sorted({a.kind for a in found})
        if not found:
            problems.append(f"{cam}/{tid}: neither merged nor anchored")
        elif "merged" in kinds and len(found) > 1:
            problems.append(f"{cam}/{tid}: merged and anchored")
        elif len(found) > 1:
            problems.append(f"{cam}/{tid}: attached {len(found)} ways ({', '.join(kinds)})")
    return problems


def snapshot_counts(snap: UnifiedSnapshot) -> dict:
    dyn_vertices = sum(len(a.subgraph.vertices) for a in snap.anchored)
    return {
        "regions": len(snap.base.regions),
        "static_objects": len(snap.base.static_objects),
        "static_edges": len(snap.base.static_edges),
        "dynamic_vertices": dyn_vertices - len(snap.merges),
        "merged_vertices": len(snap.merges),
        "relation_edges": sum(len(a.subgraph.edges) for a in snap.anchored),
        "anchor_edges": sum(len(a.anchors) for a in snap.anchored),
    }

