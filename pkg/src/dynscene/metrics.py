"""Graph accuracy and relation recall metrics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .model import BELONGING, CONNECTIVITY, Box3, UnifiedSnapshot, box_overlap_ratio
from .static_builder import normalize_label

RELATION = "relation"


@dataclass(frozen=True)
class EvalVertex:
    key: str
    label: str
    box: Optional[Box3]
    region_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "label": self.label,
            "box": self.box.to_dict() if self.box is not None else None,
            "region_id": self.region_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvalVertex:
        box = Box3.from_dict(d["box"]) if d.get("box") is not None else None
        return cls(d["key"], d["label"], box, d.get("region_id"))


@dataclass(frozen=True)
class EvalGraph:
    """Object vertices plus (kind, a, b, predicate) edges; region ids stand for themselves."""

    vertices: tuple[EvalVertex, ...] = ()
    edges: frozenset = frozenset()
    relations: tuple = ()  # (subject_label, predicate, object_label)
    scored_relations: tuple = ()  # (subject_label, predicate, object_label, score)
    regions: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {
            "vertices": [v.to_dict() for v in self.vertices],
            "edges": [list(e) for e in sorted(self.edges)],
            "relations": [list(r) for r in self.relations],
            "regions": sorted(self.regions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvalGraph:
        return cls(
            tuple(EvalVertex.from_dict(v) for v in d["vertices"]),
            frozenset(tuple(e) for e in d["edges"]),
            tuple(tuple(r) for r in d.get("relations", ())),
            (),
            frozenset(d.get("regions", ())),
        )


def edge(kind: str, a: str, b: str, predicate: str = "") -> tuple:
    if kind == CONNECTIVITY and b < a:
        a, b = b, a
    return (kind, a, b, predicate)


def snapshot_to_eval(snap: UnifiedSnapshot) -> EvalGraph:
    """Flatten a snapshot into the object-level graph that the metrics compare."""
    base = snap.base
    vertices = [EvalVertex(o.id, o.class_label, o.box, o.region_id) for o in base.static_objects]
    edges = set()
    for e in base.static_edges:
        edges.add(edge(e.kind, e.a, e.b))
    attach = snap.attachments()
    scored = []
    for entry in snap.anchored:
        sub = entry.subgraph
        cam = sub.camera_id
        keys = {}
        for v in sub.vertices:
            found = attach.get((cam, v.track_id), [])
            merged = snap.merged_static(cam, v.track_id)
            if merged is not None:
                keys[v.track_id] = merged
                continue
            key = f"{cam}/{v.track_id}"
            keys[v.track_id] = key
            region = found[0].region_id if len(found) == 1 else None
            vertices.append(EvalVertex(key, v.class_label, v.box3, region))
            if region is not None:
                edges.add(edge(BELONGING, key, region))
        for e in sub.edges:
            edges.add(edge(RELATION, keys[e.subject_id], keys[e.object_id], e.predicate))
            scored.append((e.subject_class, e.predicate, e.object_class, e.confidence))
    return EvalGraph(
        tuple(vertices), frozenset(edges), tuple((s, p, o) for s, p, o, _ in scored), tuple(scored),
        frozenset(r.id for r in base.regions),
    )


def match_vertices(pred: EvalGraph, gt: EvalGraph, threshold: float = 0.6, metric: str = "min") -> dict:
    """Greedy one-to-one matching on descending overlap among same-label pairs above ``threshold``.

    Ties are broken by ground-truth key and predicted geometry, never by
    predicted ids, so the result is stable under relabeling of predictions.
    """
    pairs = []
    for pv in pred.vertices:
        if pv.box is None:
            continue
        for gv in gt.vertices:
            if gv.box is None or normalize_label(pv.label) != normalize_label(gv.label):
                continue
            r = box_overlap_ratio(pv.box, gv.box, metric)
            if r > threshold:
                pairs.append((-r, gv.key, pv.box.min_corner, pv.box.max_corner, pv.key))
    pairs.sort(key=lambda p: p[:4])
    used_pred, used_gt, mapping = set(), set(), {}
    for _, gkey, _, _, pkey in pairs:
        if pkey in used_pred or gkey in used_gt:
            continue
        used_pred.add(pkey)
        used_gt.add(gkey)
        mapping[pkey] = gkey
    return mapping


def _as_eval(g) -> EvalGraph:
    return snapshot_to_eval(g) if isinstance(g, UnifiedSnapshot) else g


def vertex_accuracy(pred, gt: EvalGraph, threshold: float = 0.6, metric: str = "min") -> float:
    """Fraction of predicted object vertices matched to ground truth (label equal, overlap > threshold)."""
    pred = _as_eval(pred)
    if not pred.vertices:
        return 1.0 if not gt.vertices else 0.0
    return len(match_vertices(pred, gt, threshold, metric)) / len(pred.vertices)


def edge_accuracy(pred, gt: EvalGraph, mapping: Optional[Mapping] = None, threshold: float = 0.6,
                  metric: str = "min") -> float:
    """Fraction of predicted edges whose kind, mapped endpoints and predicate occur in ground truth.

    Both edge sets empty counts as 1.0.
    """
    pred = _as_eval(pred)
    if not pred.edges:
        return 1.0 if not gt.edges else 0.0
    if mapping is None:
        mapping = match_vertices(pred, gt, threshold, metric)
    regions = pred.regions | gt.regions

    def mapped(x):
        if x in mapping:
            return mapping[x]
        return x if x in regions else None

    hits = 0
    for kind, a, b, predicate in pred.edges:
        ma, mb = mapped(a), mapped(b)
        if ma is not None and mb is not None and edge(kind, ma, mb, predicate) in gt.edges:
            hits += 1
    return hits / len(pred.edges)


# -- relation recall ---------------------------------------------------------

@dataclass
class SynonymMap:
    """Equivalence classes of terms; each term canonicalizes to the smallest member of its class."""

    canon: dict = field(default_factory=dict)

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[str]]) -> SynonymMap:
        parent: dict[str, str] = {}

        def find(x):
            parent.setdefault(x, x)
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for group in groups:
            terms = [normalize_label(t) for t in group]
            for t in terms[1:]:
                ra, rb = find(terms[0]), find(t)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
            for t in terms:
                find(t)
        members: dict[str, list[str]] = {}
        for t in parent:
            members.setdefault(find(t), []).append(t)
        return cls({t: min(ms) for ms in members.values() for t in ms})

    @classmethod
    def from_mapping(cls, mapping) -> SynonymMap:
        """Accepts ``{term: [aliases...]}`` or a list of groups."""
        if isinstance(mapping, Mapping):
            return cls.from_groups([[k, *v] for k, v in mapping.items()])
        return cls.from_groups(mapping)

    def __call__(self, term: str) -> str:
        t = normalize_label(term)
        return self.canon.get(t, t)


def recall_at_k(
    pred_relations: Sequence[tuple],
    gt_relations: Sequence[tuple],
    k: int,
    mode: str = "plain",
    matching: str = "exact",
    synonyms: Optional[SynonymMap] = None,
) -> float:
    """R@K (``mode="plain"``) or mR@K (``mode="mean"``) over (subject, predicate, object) triples.

    Predictions are (subject, predicate, object, score) and are ranked by score,
    ties kept in input order. Each ground-truth triple is matched at most once.
    """
    if not gt_relations:
        raise ValueError("undefined recall")
    if mode not in ("plain", "mean"):
        raise ValueError(f"unknown recall mode {mode!r}")
    if matching == "synonym":
        canon = synonyms or SynonymMap()
    elif matching == "exact":
        canon = normalize_label
    else:
        raise ValueError(f"unknown matching {matching!r}")

    def key(t):
        return (canon(t[0]), canon(t[1]), canon(t[2]))

    ranked = sorted(enumerate(pred_relations), key=lambda x: (-x[1][3], x[0]))
    top = Counter(key(p) for _, p in ranked[:k])
    gt = Counter(key(g) for g in gt_relations)
    matched = {t: min(n, top[t]) for t, n in gt.items()}
    if mode == "plain":
        return sum(matched.values()) / sum(gt.values())
    per_pred_hit: Counter = Counter()
    per_pred_total: Counter = Counter()
    for t, n in gt.items():
        per_pred_total[t[1]] += n
        per_pred_hit[t[1]] += matched[t]
    return sum(per_pred_hit[p] / per_pred_total[p] for p in per_pred_total) / len(per_pred_total)
