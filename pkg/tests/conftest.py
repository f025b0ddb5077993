from __future__ import annotations

import pytest

from dynscene.model import (
    BELONGING,
    CONNECTIVITY,
    Box3,
    Feature,
    GlobalGraph,
    InstanceVertex,
    RegionVertex,
    StaticEdge,
    StaticObjectVertex,
)


def square(rid, x0, y0, x1, y1, name=None):
    return RegionVertex(rid, name or rid, ((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


def three_rooms():
    return [
        square("laboratory", 0, 0, 10, 8),
        square("corridor", 10, 0, 14, 8),
        square("cafeteria", 14, 0, 30, 12),
    ]


def static_obj(oid, label, center, size, region):
    return StaticObjectVertex(oid, label, Box3.from_center(center, size), region)


def building(objects=None, edges=None):
    """Three rooms in a row with a counter, a table and a couch."""
    regions = three_rooms()
    if objects is None:
        objects = [
            static_obj("counter-1", "counter", (16, 2, 0.45), (4, 1, 0.9), "cafeteria"),
            static_obj("table-1", "table", (20, 6, 0.375), (1.6, 0.9, 0.75), "cafeteria"),
            static_obj("couch-1", "couch", (12, 6, 0.4), (1.8, 0.8, 0.8), "corridor"),
        ]
    if edges is None:
        edges = [StaticEdge(BELONGING, o.id, o.region_id) for o in objects]
        edges += [StaticEdge(CONNECTIVITY, "laboratory", "corridor"), StaticEdge(CONNECTIVITY, "corridor", "cafeteria")]
    return GlobalGraph(tuple(regions), tuple(objects), tuple(edges))


def vertex(tid, label, box=None, t0=0.0, t1=1.0, feature=(1.0, 0.0)):
    return InstanceVertex(tid, label, Feature(feature), (0, 0, 10, 10), t0, t1, box)


@pytest.fixture
def base():
    return building()


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")
