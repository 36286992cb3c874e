"""Map definition, validation, and the JSON map file format (format version 1).

A map is a rectangular arena containing convex polygonal obstacles with a
height in meters, plus a set of axis-aligned spawn regions.  Every spawn
region must contain cover: episode spawns rely on an obstacle sitting inside
the region so the two combatants never start with a clear line of sight.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import geometry

MAP_FORMAT_VERSION = 1
DEFAULT_WALKABLE_MARGIN = 0.35  # combatant body radius, meters


class MapError(ValueError):
    """Raised when a map file fails parsing or invariant validation."""


@dataclass(frozen=True)
class Obstacle:
    vertices: tuple[geometry.Vec2, ...]
    height: float

    @property
    def area(self) -> float:
        return geometry.poly_area(self.vertices)


@dataclass(frozen=True)
class SpawnRegion:
    x: float
    y: float
    w: float
    h: float

    @property
    def rect(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    def contains(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x + self.w and self.y <= py <= self.y + self.h


@dataclass(frozen=True)
class MapDef:
    width: float
    height: float
    obstacles: tuple[Obstacle, ...]
    spawn_regions: tuple[SpawnRegion, ...]
    walkable_margin: float = DEFAULT_WALKABLE_MARGIN
    name: str = "unnamed"

    def in_bounds(self, px: float, py: float) -> bool:
        return 0.0 <= px <= self.width and 0.0 <= py <= self.height

    def point_blocked(self, px: float, py: float) -> bool:
        """True when the point lies inside any obstacle polygon."""
        return any(geometry.point_in_convex(px, py, o.vertices) for o in self.obstacles)


def _regions_overlap(a: SpawnRegion, b: SpawnRegion) -> bool:
    ax0, ay0, ax1, ay1 = a.rect
    bx0, by0, bx1, by1 = b.rect
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def validate_map(m: MapDef) -> MapDef:
    """Check every MapDef invariant, raising MapError naming the failed check."""
    if m.width <= 0 or m.height <= 0:
        raise MapError("bounds: width and height must be positive")
    for i, obs in enumerate(m.obstacles):
        if len(obs.vertices) < 3:
            raise MapError(f"obstacle {i}: fewer than 3 vertices")
        if not geometry.is_convex(obs.vertices):
            raise MapError(f"obstacle {i}: polygon is not convex")
        if obs.height <= 0:
            raise MapError(f"obstacle {i}: non-positive height")
        for (vx, vy) in obs.vertices:
            if not m.in_bounds(vx, vy):
                raise MapError(f"obstacle {i}: vertex ({vx}, {vy}) outside map bounds")
    if not m.spawn_regions:
        raise MapError("spawn regions: at least one region required")
    for i, reg in enumerate(m.spawn_regions):
        if reg.w <= 0 or reg.h <= 0:
            raise MapError(f"spawn region {i}: non-positive size")
        x0, y0, x1, y1 = reg.rect
        if x0 < 0 or y0 < 0 or x1 > m.width or y1 > m.height:
            raise MapError(f"spawn region {i}: outside map bounds")
    for i in range(len(m.spawn_regions)):
        for j in range(i + 1, len(m.spawn_regions)):
            if _regions_overlap(m.spawn_regions[i], m.spawn_regions[j]):
                raise MapError(f"spawn regions {i} and {j}: not disjoint")
    for i, reg in enumerate(m.spawn_regions):
        x0, y0, x1, y1 = reg.rect
        covered = 0.0
        has_cover = False
        for obs in m.obstacles:
            clipped = geometry.clip_polygon_to_rect(obs.vertices, x0, y0, x1, y1)
            if len(clipped) >= 3:
                area = abs(geometry.poly_area(clipped))
                covered += area
                if area > 1e-9:
                    has_cover = True
        if not has_cover:
            raise MapError(f"spawn region {i}: cover in spawn region missing")
        if covered > 0.75 * reg.w * reg.h:
            raise MapError(f"spawn region {i}: not walkable (obstacles cover >75%)")
    return m


def _map_from_dict(data: dict, name: str) -> MapDef:
    if data.get("format") != MAP_FORMAT_VERSION:
        raise MapError(f"format: expected {MAP_FORMAT_VERSION}, got {data.get('format')!r}")
    try:
        obstacles = tuple(
            Obstacle(
                vertices=geometry.ensure_ccw([(float(x), float(y)) for x, y in o["vertices"]]),
                height=float(o["height"]),
            )
            for o in data["obstacles"]
        )
        regions = tuple(
            SpawnRegion(float(r["x"]), float(r["y"]), float(r["w"]), float(r["h"]))
            for r in data["spawn_regions"]
        )
        m = MapDef(
            width=float(data["width"]),
            height=float(data["height"]),
            obstacles=obstacles,
            spawn_regions=regions,
            walkable_margin=float(data.get("walkable_margin", DEFAULT_WALKABLE_MARGIN)),
            name=name,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MapError(f"parse: {exc}") from exc
    return validate_map(m)


def load_map(path: str | Path) -> MapDef:
    """Load and validate a map from a JSON file (or a bundled map name)."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        return load_bundled(str(path))
    try:
        data = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MapError(f"parse: {exc}") from exc
    return _map_from_dict(data, name=p.stem)


def load_bundled(name: str) -> MapDef:
    """Load one of the maps shipped inside the package (e.g. ``farm_small``)."""
    ref = resources.files("skirmish").joinpath(f"maps/{name}.json")
    try:
        data = json.loads(ref.read_text())
    except FileNotFoundError as exc:
        raise MapError(f"parse: no bundled map named {name!r}") from exc
    return _map_from_dict(data, name=name)


def map_to_dict(m: MapDef) -> dict:
    return {
        "format": MAP_FORMAT_VERSION,
        "width": m.width,
        "height": m.height,
        "walkable_margin": m.walkable_margin,
        "obstacles": [
            {"vertices": [[x, y] for x, y in o.vertices], "height": o.height}
            for o in m.obstacles
        ],
        "spawn_regions": [{"x": r.x, "y": r.y, "w": r.w, "h": r.h} for r in m.spawn_regions],
    }


def save_map(m: MapDef, path: str | Path) -> None:
    Path(path).write_text(json.dumps(map_to_dict(m), indent=2))


def _rect_obstacle(cx: float, cy: float, w: float, h: float, height: float) -> Obstacle:
    return Obstacle(
        vertices=(
            (cx - w / 2, cy - h / 2),
            (cx + w / 2, cy - h / 2),
            (cx + w / 2, cy + h / 2),
            (cx - w / 2, cy + h / 2),
        ),
        height=height,
    )


def random_map(
    rng: np.random.Generator,
    width: float = 40.0,
    height: float = 20.0,
    n_regions: int = 2,
    extra_obstacles: int = 4,
) -> MapDef:
    """Generate a small valid random map (used by tests and benchmarks).

    Regions are laid out on a grid; each gets one tall cover block inside it,
    then ``extra_obstacles`` random blocks are scattered across the map.
    """
    cols = max(1, int(round(math.sqrt(n_regions * width / height))))
    rows = max(1, math.ceil(n_regions / cols))
    cell_w, cell_h = width / cols, height / rows
    regions = []
    obstacles = []
    count = 0
    for r in range(rows):
        for c in range(cols):
            if count >= n_regions:
                break
            margin_x, margin_y = 0.15 * cell_w, 0.15 * cell_h
            reg = SpawnRegion(
                x=c * cell_w + margin_x,
                y=r * cell_h + margin_y,
                w=cell_w - 2 * margin_x,
                h=cell_h - 2 * margin_y,
            )
            regions.append(reg)
            bw = min(4.0, 0.3 * reg.w)
            bh = min(2.0, 0.3 * reg.h)
            cx = reg.x + reg.w * rng.uniform(0.35, 0.65)
            cy = reg.y + reg.h * rng.uniform(0.35, 0.65)
            obstacles.append(_rect_obstacle(cx, cy, bw, bh, height=2.2))
            count += 1
    def bbox(obs: Obstacle) -> tuple[float, float, float, float]:
        xs = [v[0] for v in obs.vertices]
        ys = [v[1] for v in obs.vertices]
        return (min(xs), min(ys), max(xs), max(ys))

    def too_close(cand: Obstacle, clearance: float = 1.4) -> bool:
        cx0, cy0, cx1, cy1 = bbox(cand)
        for other in obstacles:
            ox0, oy0, ox1, oy1 = bbox(other)
            if (
                cx0 - clearance < ox1
                and ox0 - clearance < cx1
                and cy0 - clearance < oy1
                and oy0 - clearance < cy1
            ):
                return True
        return False

    placed = 0
    attempts = 0
    # Keep corridors walkable: obstacles are rejected rather than allowed to
    # pinch passages narrower than the clearance.
    while placed < extra_obstacles and attempts < 40 * extra_obstacles:
        attempts += 1
        w_o = rng.uniform(1.0, 0.12 * width)
        h_o = rng.uniform(1.0, 0.12 * height)
        cx = rng.uniform(w_o / 2 + 0.5, width - w_o / 2 - 0.5)
        cy = rng.uniform(h_o / 2 + 0.5, height - h_o / 2 - 0.5)
        cand = _rect_obstacle(cx, cy, w_o, h_o, height=float(rng.uniform(0.6, 3.0)))
        if too_close(cand):
            continue
        obstacles.append(cand)
        placed += 1
    m = MapDef(
        width=width,
        height=height,
        obstacles=tuple(obstacles),
        spawn_regions=tuple(regions),
        name="random",
    )
    return validate_map(m)
