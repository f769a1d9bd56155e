"""Areas, coverage patterns, and schedule cost arithmetic.

An area is an axis-aligned square given by its four corners in SW, SE, NE,
NW order. A coverage pattern enters the square at one corner, sweeps it,
and leaves at a deterministic exit point:

* vertical zig-zag: k vertical lanes spaced side/(k-1) apart; the exit
  corner flips x always and flips y only when k is odd;
* horizontal zig-zag: the mirror image (flips y always, x when k is odd);
* spiral: an inward counter-clockwise rectangular spiral with gap side/k
  that terminates at the square's center.

Schedules chain (area, start corner, pattern) decisions; their cost is the
sum of exit-to-entry hops plus, optionally, the intra-area path lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .errors import InvalidSchedule, NonPositiveLength

# corner index layout, fixed for serialization stability
SW, SE, NE, NW = 0, 1, 2, 3
CORNER_NAMES = ("SW", "SE", "NE", "NW")
NUM_CORNERS = 4


class PatternKind(IntEnum):
    VERTICAL_ZIGZAG = 0
    HORIZONTAL_ZIGZAG = 1
    SPIRAL = 2


NUM_PATTERNS = len(PatternKind)


@dataclass(frozen=True)
class Pattern:
    """A coverage pattern: sweep style plus lane count k >= 2."""

    kind: PatternKind
    lanes: int = 5

    def __post_init__(self):
        if self.lanes < 2:
            raise ValueError(f"pattern needs at least 2 lanes, got {self.lanes}")


def default_patterns(lanes: int = 5) -> tuple[Pattern, Pattern, Pattern]:
    """The three selectable patterns, indexed by PatternKind value."""
    return tuple(Pattern(kind, lanes) for kind in PatternKind)


@dataclass(frozen=True)
class Area:
    """Axis-aligned square region.

    Attributes:
        corners: (4, 2) array in SW, SE, NE, NW order.
        center: (2,) array, mean of the corners.
        side: edge length (twice the generation radius).
    """

    corners: np.ndarray
    center: np.ndarray
    side: float

    @classmethod
    def from_center_radius(cls, cx: float, cy: float, r: float) -> "Area":
        if r <= 0.0:
            raise NonPositiveLength(f"area radius must be positive, got {r}")
        # route through from_corners so the stored center is always the
        # corner mean, bit-identical with an area reloaded from disk
        corners = [
            [cx - r, cy - r],
            [cx + r, cy - r],
            [cx + r, cy + r],
            [cx - r, cy + r],
        ]
        return cls.from_corners(corners)

    @classmethod
    def from_corners(cls, corners) -> "Area":
        c = np.asarray(corners, dtype=np.float64)
        if c.shape != (4, 2):
            raise ValueError(f"expected 4 corners, got shape {c.shape}")
        side = float(c[SE, 0] - c[SW, 0])
        height = float(c[NW, 1] - c[SW, 1])
        square = (
            c[SW, 0] == c[NW, 0]
            and c[SE, 0] == c[NE, 0]
            and c[SW, 1] == c[SE, 1]
            and c[NW, 1] == c[NE, 1]
            and abs(side - height) < 1e-12
        )
        if not square:
            raise ValueError("corners do not form an axis-aligned square in SW,SE,NE,NW order")
        if side <= 0.0:
            raise NonPositiveLength(f"area side must be positive, got {side}")
        return cls(corners=c, center=c.mean(axis=0), side=side)

    def corner(self, index: int) -> np.ndarray:
        return self.corners[index]


@dataclass(frozen=True)
class Decision:
    """One scheduling step: which area, entered at which corner, swept how."""

    area: int
    corner: int
    pattern: int


@dataclass(frozen=True)
class Schedule:
    """A full visit order with derived entry/exit points and total cost."""

    decisions: tuple[Decision, ...]
    entry_points: np.ndarray
    exit_points: np.ndarray
    total_cost: float
    closed: bool


# ---------------------------------------------------------------------------
# pattern geometry


def _corner_signs(index: int) -> tuple[int, int]:
    """(sx, sy) with -1 for the low side and +1 for the high side."""
    sx = -1 if index in (SW, NW) else 1
    sy = -1 if index in (SW, SE) else 1
    return sx, sy


def _corner_from_signs(area: Area, sx: int, sy: int) -> np.ndarray:
    half = area.side / 2.0
    return area.center + np.array([sx * half, sy * half])


def pattern_exit_point(area: Area, corner_index: int, pattern: Pattern) -> np.ndarray:
    """Exit location after sweeping `area` from the given start corner.

    Zig-zags leave at a corner determined by lane-count parity; the spiral
    always ends at the center.
    """
    if pattern.kind == PatternKind.SPIRAL:
        return area.center.copy()
    sx, sy = _corner_signs(corner_index)
    odd = pattern.lanes % 2 == 1
    if pattern.kind == PatternKind.VERTICAL_ZIGZAG:
        sx = -sx
        if odd:
            sy = -sy
    else:
        sy = -sy
        if odd:
            sx = -sx
    return _corner_from_signs(area, sx, sy)


def pattern_waypoints(area: Area, corner_index: int, pattern: Pattern) -> np.ndarray:
    """Full coverage polyline, starting at the entry corner.

    Zig-zags alternate full-length lanes with short transitions toward the
    far side. The spiral walks the boundary inward counter-clockwise,
    shrinking opposite segment pairs by the gap until the remaining extent
    drops below it, then hops to the center if not already there.
    """
    start = area.corner(corner_index).astype(np.float64).copy()
    k = pattern.lanes
    side = area.side
    sx, sy = _corner_signs(corner_index)

    if pattern.kind == PatternKind.SPIRAL:
        return _spiral_waypoints(area, start, sx, sy, k)

    spacing = side / (k - 1)
    pts = [start.copy()]
    pos = start.copy()
    if pattern.kind == PatternKind.VERTICAL_ZIGZAG:
        lane_dir = np.array([0.0, -sy * side])  # sweep away from the start edge
        step_dir = np.array([-sx * spacing, 0.0])
    else:
        lane_dir = np.array([-sx * side, 0.0])
        step_dir = np.array([0.0, -sy * spacing])
    for lane in range(k):
        pos = pos + (lane_dir if lane % 2 == 0 else -lane_dir)
        pts.append(pos.copy())
        if lane < k - 1:
            pos = pos + step_dir
            pts.append(pos.copy())
    return np.array(pts)


def _spiral_waypoints(area: Area, start: np.ndarray, sx: int, sy: int, k: int) -> np.ndarray:
    gap = area.side / k
    # counter-clockwise: rotate the inward-pointing corner signs
    # SW -> +x, SE -> +y, NE -> -x, NW -> -y
    if (sx, sy) == (-1, -1):
        d = np.array([1.0, 0.0])
    elif (sx, sy) == (1, -1):
        d = np.array([0.0, 1.0])
    elif (sx, sy) == (1, 1):
        d = np.array([-1.0, 0.0])
    else:
        d = np.array([0.0, -1.0])

    def turn_left(v: np.ndarray) -> np.ndarray:
        return np.array([-v[1], v[0]])

    pts = [start.copy()]
    pos = start.copy()
    length = area.side
    i = 0
    while length >= gap - 1e-12:
        pos = pos + d * length
        pts.append(pos.copy())
        d = turn_left(d)
        if i % 2 == 1:
            length -= gap
        i += 1
    if not np.allclose(pos, area.center, atol=1e-12):
        pts.append(area.center.copy())
    return np.array(pts)


def polyline_length(points: np.ndarray) -> float:
    diffs = np.diff(points, axis=0)
    return float(np.sqrt((diffs * diffs).sum(axis=1)).sum())


def pattern_path_length(area: Area, corner_index: int, pattern: Pattern) -> float:
    """Length of the coverage path from entry corner to exit point.

    Both zig-zags have the closed form (k+1)*side: k lanes of `side` plus
    k-1 transitions that jointly span one `side`. The spiral is measured on
    its constructed polyline.
    """
    if pattern.kind == PatternKind.SPIRAL:
        return polyline_length(pattern_waypoints(area, corner_index, pattern))
    return (pattern.lanes + 1) * area.side


# ---------------------------------------------------------------------------
# schedules


def inter_area_distance(exit_point, entry_point) -> float:
    """Euclidean hop between one area's exit and the next area's entry."""
    d = np.asarray(entry_point, dtype=np.float64) - np.asarray(exit_point, dtype=np.float64)
    return float(math.hypot(d[0], d[1]))


def _areas_of(area_map) -> Sequence[Area]:
    return area_map.areas if hasattr(area_map, "areas") else area_map


def validate_schedule(area_map, schedule: Schedule) -> list[str]:
    """All constraint violations of `schedule` against `area_map` (empty = ok)."""
    areas = _areas_of(area_map)
    n = len(areas)
    violations: list[str] = []
    if len(schedule.decisions) != n:
        violations.append(f"expected {n} decisions, got {len(schedule.decisions)}")
    seen: dict[int, int] = {}
    for d in schedule.decisions:
        if not 0 <= d.area < n:
            violations.append(f"area index out of range: {d.area}")
            continue
        seen[d.area] = seen.get(d.area, 0) + 1
    for a, count in sorted(seen.items()):
        if count > 1:
            violations.append(f"area {a} visited twice")
    for a in range(n):
        if a not in seen:
            violations.append(f"area {a} never visited")
    for d in schedule.decisions:
        if not 0 <= d.corner < NUM_CORNERS:
            violations.append(f"corner index out of range: {d.corner}")
        if not 0 <= d.pattern < NUM_PATTERNS:
            violations.append(f"pattern index out of range: {d.pattern}")
    return violations


def build_schedule(
    area_map,
    decisions: Sequence[Decision],
    lambda_intra: float = 0.0,
    closed: bool = True,
    patterns: Sequence[Pattern] | None = None,
) -> Schedule:
    """Materialize decisions into a Schedule with derived points and cost."""
    areas = _areas_of(area_map)
    patterns = default_patterns() if patterns is None else patterns
    decisions = tuple(decisions)
    entries = np.array([areas[d.area].corner(d.corner) for d in decisions])
    exits = np.array(
        [pattern_exit_point(areas[d.area], d.corner, patterns[d.pattern]) for d in decisions]
    )
    sched = Schedule(
        decisions=decisions,
        entry_points=entries,
        exit_points=exits,
        total_cost=0.0,
        closed=closed,
    )
    cost = schedule_cost(area_map, sched, lambda_intra=lambda_intra, closed=closed, patterns=patterns)
    return Schedule(decisions, entries, exits, cost, closed)


def schedule_cost(
    area_map,
    schedule: Schedule,
    lambda_intra: float = 0.0,
    closed: bool = True,
    patterns: Sequence[Pattern] | None = None,
) -> float:
    """Total travel cost of a schedule.

    Sums the exit-to-entry hops between consecutive visits, the closing hop
    from the last exit back to the first entry when `closed`, and
    `lambda_intra` times the intra-area coverage lengths. A closed
    single-area schedule costs exactly its own exit-to-entry hop.

    Raises:
        InvalidSchedule: if the decisions are not a valid permutation.
    """
    violations = validate_schedule(area_map, schedule)
    if violations:
        raise InvalidSchedule("; ".join(violations))
    areas = _areas_of(area_map)
    patterns = default_patterns() if patterns is None else patterns
    decisions = schedule.decisions
    entries = [areas[d.area].corner(d.corner) for d in decisions]
    exits = [
        pattern_exit_point(areas[d.area], d.corner, patterns[d.pattern]) for d in decisions
    ]
    cost = 0.0
    for t in range(len(decisions) - 1):
        cost += inter_area_distance(exits[t], entries[t + 1])
    if closed and decisions:
        cost += inter_area_distance(exits[-1], entries[0])
    if lambda_intra != 0.0:
        for d in decisions:
            cost += lambda_intra * pattern_path_length(
                areas[d.area], d.corner, patterns[d.pattern]
            )
    return cost
