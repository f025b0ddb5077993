"""Simulate, run the full pipeline tick by tick and score it against ground truth."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from statistics import fmean
from typing import Optional, Sequence

from .dynamic_builder import DynamicConfig, build_subgraph
from .files import load_decoded, read_json
from .fusion import FusionConfig, snapshot_counts, tick
from .metrics import SynonymMap, edge_accuracy, match_vertices, recall_at_k, snapshot_to_eval, vertex_accuracy
from .sim import Scenario, World, camera_regions, ground_truth, simulate
from .static_builder import StaticBuildConfig, build_static_graph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalConfig:
    interval_s: float = 60.0
    ks: tuple = (20, 50, 100)
    vertex_overlap: float = 0.6
    matching: str = "exact"
    # list of equivalence groups, or {term: [aliases]}
    synonyms: object = None

    def __post_init__(self):
        if not self.interval_s > 0:
            raise ValueError("interval_s must be positive")
        if self.matching not in ("exact", "synonym"):
            raise ValueError(f"unknown matching {self.matching!r}")
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))

    def synonym_map(self) -> Optional[SynonymMap]:
        if self.synonyms is None:
            return None
        data = read_json(self.synonyms) if isinstance(self.synonyms, (str, Path)) else self.synonyms
        if isinstance(data, dict) and "groups" in data:
            data = data["groups"]
        return SynonymMap.from_mapping(data)


def _section(cls, d: Optional[dict]):
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    for key in ("static_classes", "human_labels", "furniture_labels"):
        if key in d:
            d[key] = frozenset(d[key])
    for key in ("intrinsics", "ks"):
        if key in d:
            d[key] = tuple(d[key])
    return cls(**d)


def _plain(obj) -> dict:
    out = {}
    for k, v in asdict(obj).items():
        if isinstance(v, frozenset):
            v = sorted(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


@dataclass(frozen=True)
class PipelineConfig:
    dynamic: DynamicConfig = field(default_factory=DynamicConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    static: StaticBuildConfig = field(default_factory=StaticBuildConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        unknown = sorted(set(d) - {"dynamic", "fusion", "static", "eval"})
        if unknown:
            raise ValueError(f"unknown config sections: {', '.join(unknown)}")
        return cls(
            _section(DynamicConfig, d.get("dynamic")),
            _section(FusionConfig, d.get("fusion")),
            _section(StaticBuildConfig, d.get("static")),
            _section(EvalConfig, d.get("eval")),
        )

    def to_dict(self) -> dict:
        return {
            "dynamic": _plain(self.dynamic),
            "fusion": _plain(self.fusion),
            "static": _plain(self.static),
            "eval": _plain(self.eval),
        }


def load_pipeline_config(path) -> PipelineConfig:
    return load_decoded(path, PipelineConfig.from_dict)


def _r(x: Optional[float]) -> Optional[float]:
    return None if x is None else round(x, 6)


def eval_ticks(scenario: Scenario, interval_s: float) -> list[float]:
    out, k = [], 1
    while k * interval_s <= scenario.duration_s + 1e-9:
        out.append(round(k * interval_s, 9))
        k += 1
    return out


def run_eval(scenario: Scenario, cfg: PipelineConfig = PipelineConfig(), seed: Optional[int] = None) -> dict:
    """Per-interval V.Acc, E.Acc and R@K / mR@K for one seeded run of the whole pipeline."""
    dyn = cfg.dynamic
    scenario = replace(scenario, frame_hz=dyn.frame_hz)
    ends = eval_ticks(scenario, cfg.eval.interval_s)
    sim = simulate(scenario, seed, windows=[(t - dyn.window_s, t) for t in ends])
    base = build_static_graph(sim.scan, scenario.regions, [d for d, _ in scenario.doorways], cfg.static)
    fcfg = cfg.fusion
    if not fcfg.camera_region:
        fcfg = replace(fcfg, camera_region=camera_regions(scenario))
    world = World(scenario)
    synonyms = cfg.eval.synonym_map()
    rows = []
    for end in ends:
        subs = [
            build_subgraph(sim.frames(cam.id), sim.candidates(cam.id), cam.id, dyn, end)
            for cam in sorted(scenario.cameras, key=lambda c: c.id)
        ]
        tick_id = int(round(end / dyn.window_s))
        snap = tick(base, subs, fcfg, tick_id)
        pred = snapshot_to_eval(snap)
        gt = ground_truth(world, end, dyn.window_s)
        mapping = match_vertices(pred, gt, cfg.eval.vertex_overlap, fcfg.overlap_metric)
        row = {
            "tick": tick_id,
            "time": end,
            "v_acc": _r(vertex_accuracy(pred, gt, cfg.eval.vertex_overlap, fcfg.overlap_metric)),
            "e_acc": _r(edge_accuracy(pred, gt, mapping)),
        }
        for k in cfg.eval.ks:
            for mode, name in (("plain", "r"), ("mean", "mr")):
                value = None
                if gt.relations:
                    value = recall_at_k(pred.scored_relations, gt.relations, k, mode, cfg.eval.matching, synonyms)
                row[f"{name}@{k}"] = _r(value)
        row["counts"] = snapshot_counts(snap)
        row["gt_counts"] = {"vertices": len(gt.vertices), "edges": len(gt.edges), "relations": len(gt.relations)}
        rows.append(row)
    return {
        "scenario": scenario.name,
        "seed": sim.seed,
        "noise": scenario.noise.to_dict(),
        "config": cfg.to_dict(),
        "ticks": rows,
        "summary": summarize(rows),
    }


def summarize(rows: Sequence[dict]) -> dict:
    keys = [k for k in (rows[0] if rows else {}) if k not in ("tick", "time", "counts", "gt_counts")]
    out = {}
    for k in keys:
        vals = [r[k] for r in rows if r[k] is not None]
        out[f"{k}_mean"] = _r(fmean(vals)) if vals else None
    return out


def _run_one(args):
    scenario, cfg, seed = args
    return run_eval(scenario, cfg, seed)


def run_seeds(scenario: Scenario, cfg: PipelineConfig, seeds: Sequence[int], workers: int = 1) -> list[dict]:
    """Independent runs, one per seed; results come back in seed order whatever ``workers`` is."""
    jobs = [(scenario, cfg, s) for s in seeds]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def write_csv(report: dict, path) -> None:
    rows = report["ticks"]
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    count_keys = sorted(rows[0]["counts"])
    head = [k for k in rows[0] if k not in ("counts", "gt_counts")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head + count_keys + [f"gt_{k}" for k in sorted(rows[0]["gt_counts"])])
        for r in rows:
            w.writerow(
                ["" if r[k] is None else r[k] for k in head]
                + [r["counts"][k] for k in count_keys]
                + [r["gt_counts"][k] for k in sorted(r["gt_counts"])]
            )
