"""Random map generation, normalization, and the JSON-lines map format.

A map is a set of non-overlapping axis-aligned squares inside the unit
square, together with the derived matrices the policy consumes: a complete
adjacency matrix, an n x 8 feature matrix of flattened corner coordinates,
and an n x 2 matrix of centers. Files store only ids and corners; all
derived fields are rebuilt on load.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import DegenerateMap, EmptyDataset, GenerationTimeout, ParseError
from .geometry import Area

REJECTION_LIMIT = 10_000


@dataclass(frozen=True)
class AreaMap:
    """A scheduling instance: areas plus derived graph matrices."""

    areas: tuple[Area, ...]
    adjacency: np.ndarray
    features: np.ndarray
    positions: np.ndarray
    map_id: int = 0

    @property
    def n(self) -> int:
        return len(self.areas)

    @classmethod
    def from_areas(cls, areas: Sequence[Area], map_id: int = 0) -> "AreaMap":
        areas = tuple(areas)
        n = len(areas)
        if n == 0:
            raise DegenerateMap("a map needs at least one area")
        adjacency = np.ones((n, n)) - np.eye(n)
        features = np.array([a.corners.reshape(-1) for a in areas])
        positions = np.array([a.center for a in areas])
        return cls(areas, adjacency, features, positions, map_id)

    def validate(self) -> list[str]:
        """Invariant violations: containment, overlap, derived-field drift."""
        out: list[str] = []
        if np.any(self.features < -1e-12) or np.any(self.features > 1.0 + 1e-12):
            out.append("corner coordinates outside the unit square")
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if _squares_overlap(self.areas[i], self.areas[j]):
                    out.append(f"areas {i} and {j} overlap")
        expect_adj = np.ones((self.n, self.n)) - np.eye(self.n)
        if not np.array_equal(self.adjacency, expect_adj):
            out.append("adjacency is not the complete graph")
        for i, a in enumerate(self.areas):
            if not np.array_equal(self.features[i], a.corners.reshape(-1)):
                out.append(f"feature row {i} does not match corners")
            if not np.array_equal(self.positions[i], a.center):
                out.append(f"position row {i} does not match center")
        return out


@dataclass(frozen=True)
class MapTransform:
    """Similarity transform p' = p * scale + offset used by normalization."""

    scale: float
    offset: np.ndarray

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.offset

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.offset) / self.scale


def _squares_overlap(a: Area, b: Area) -> bool:
    """Closed-rectangle intersection: boundary contact counts as overlap."""
    alo, ahi = a.corners.min(axis=0), a.corners.max(axis=0)
    blo, bhi = b.corners.min(axis=0), b.corners.max(axis=0)
    return bool(
        alo[0] <= bhi[0] and blo[0] <= ahi[0] and alo[1] <= bhi[1] and blo[1] <= ahi[1]
    )


def generate_map(
    n: int,
    radius_min: float = 0.01,
    radius_max: float = 0.03,
    rng: np.random.Generator | int | None = None,
    map_id: int = 0,
) -> AreaMap:
    """Sample `n` non-overlapping squares uniformly inside the unit square.

    Each candidate draws center x, center y, then a radius; candidates that
    leave the unit square or touch an accepted square are rejected and
    redrawn. Deterministic for a given seed.

    Raises:
        GenerationTimeout: after 10,000 consecutive rejections.
    """
    if n < 1:
        raise ValueError(f"need at least one area, got n={n}")
    if not 0.0 < radius_min <= radius_max:
        raise ValueError(f"invalid radius range [{radius_min}, {radius_max}]")
    if 2.0 * radius_max >= 0.5:
        raise ValueError(f"radius_max {radius_max} leaves no placement headroom")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    accepted: list[Area] = []
    rejections = 0
    while len(accepted) < n:
        cx = rng.uniform(0.0, 1.0)
        cy = rng.uniform(0.0, 1.0)
        r = rng.uniform(radius_min, radius_max)
        inside = cx - r >= 0.0 and cx + r <= 1.0 and cy - r >= 0.0 and cy + r <= 1.0
        candidate = Area.from_center_radius(cx, cy, r) if inside else None
        if candidate is not None and all(
            not _squares_overlap(candidate, a) for a in accepted
        ):
            accepted.append(candidate)
            rejections = 0
        else:
            rejections += 1
            if rejections >= REJECTION_LIMIT:
                raise GenerationTimeout(
                    f"{REJECTION_LIMIT} consecutive rejections placing area "
                    f"{len(accepted) + 1} of {n}"
                )
    return AreaMap.from_areas(accepted, map_id=map_id)


def generate_maps(
    count: int,
    n: int,
    radius_min: float = 0.01,
    radius_max: float = 0.03,
    seed: int = 0,
) -> list[AreaMap]:
    """`count` independent maps with per-instance seeds seed + index."""
    if count < 1:
        raise EmptyDataset(f"dataset needs at least one instance, got {count}")
    return [
        generate_map(n, radius_min, radius_max, rng=seed + i, map_id=i)
        for i in range(count)
    ]


def generate_dataset(
    count: int,
    n: int,
    radius_min: float = 0.01,
    radius_max: float = 0.03,
    seed: int = 0,
    sink: str | os.PathLike | IO[str] = "maps.jsonl",
) -> int:
    """Write `count` generated maps to `sink` as JSON lines.

    Returns the number of instances written. When `sink` is a path, a
    failure mid-write removes the partial file before re-raising.
    """
    maps = generate_maps(count, n, radius_min, radius_max, seed)
    if hasattr(sink, "write"):
        save_maps(maps, sink)
        return count
    path = os.fspath(sink)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            save_maps(maps, fh)
    except Exception:
        if os.path.exists(path):
            os.remove(path)
        raise
    return count


def normalize_map(areas: Sequence[Area]) -> tuple[AreaMap, MapTransform]:
    """Rescale arbitrary-coordinate areas into the unit square.

    Applies one uniform scale (aspect preserved) and an offset so the
    bounding box of all corners lands inside [0, 1]^2 anchored at the
    origin. The returned transform inverts back to the original frame.

    Raises:
        DegenerateMap: when the bounding box has zero extent.
    """
    if not areas:
        raise DegenerateMap("cannot normalize an empty area list")
    corners = np.concatenate([a.corners for a in areas], axis=0)
    if not np.all(np.isfinite(corners)):
        raise DegenerateMap("non-finite coordinates")
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise DegenerateMap("bounding box has zero extent")
    scale = 1.0 / extent
    transform = MapTransform(scale=scale, offset=-lo * scale)
    moved = [
        Area.from_center_radius(*transform.apply(a.center), a.side * scale / 2.0)
        for a in areas
    ]
    return AreaMap.from_areas(moved), transform


# ---------------------------------------------------------------------------
# file format


def _map_to_record(m: AreaMap) -> dict:
    return {
        "id": int(m.map_id),
        "n": m.n,
        "areas": [{"corners": a.corners.tolist()} for a in m.areas],
    }


def _record_to_map(rec: dict, line_no: int) -> AreaMap:
    try:
        areas_field = rec["areas"]
    except (KeyError, TypeError):
        raise ParseError(line_no, "missing 'areas' field") from None
    areas = []
    for idx, entry in enumerate(areas_field):
        corners = entry.get("corners") if isinstance(entry, dict) else None
        if corners is None:
            raise ParseError(line_no, f"area {idx} missing 'corners'")
        if len(corners) != 4:
            raise ParseError(line_no, f"area {idx} has {len(corners)} corners, expected 4")
        try:
            areas.append(Area.from_corners(corners))
        except ValueError as exc:
            raise ParseError(line_no, f"area {idx}: {exc}") from None
    declared_n = rec.get("n", len(areas))
    if declared_n != len(areas):
        raise ParseError(line_no, f"declared n={declared_n} but found {len(areas)} areas")
    return AreaMap.from_areas(areas, map_id=int(rec.get("id", 0)))


def save_maps(maps: Iterable[AreaMap], sink: str | os.PathLike | IO[str]) -> None:
    """Serialize maps as one JSON object per line."""
    if hasattr(sink, "write"):
        for m in maps:
            sink.write(json.dumps(_map_to_record(m)) + "\n")
        return
    with open(os.fspath(sink), "w", encoding="utf-8") as fh:
        save_maps(maps, fh)


def load_maps(source: str | os.PathLike | IO[str]) -> list[AreaMap]:
    """Parse a JSON-lines map file; blank lines are skipped.

    Raises:
        ParseError: naming the 1-based line and what is wrong with it.
    """
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(os.fspath(source), "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    maps: list[AreaMap] = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(i, f"invalid JSON: {exc.msg}") from None
        maps.append(_record_to_map(rec, i))
    return maps
