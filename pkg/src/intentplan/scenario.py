"""Intersection scenario geometry: reference paths, stop line, polygon."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from shapely.geometry import LineString, Point, Polygon

from .geometry import (ConflictGeometry, ReferencePath, build_reference_path,
                       find_conflict_point, path_from_curvature)

DEFAULT_SCENARIO = {
    "left_path": {
        "start": [-60.0, -1.75],
        "heading": 0.0,
        "step": 0.1,
        # approach, clothoid in, arc (R = 12 m), clothoid out, exit
        "segments": [[60.0, 0.0, 0.0], [6.0, 0.0, 1 / 12], [12.8496, 1 / 12, 1 / 12],
                     [6.0, 1 / 12, 0.0], [60.0, 0.0, 0.0]],
    },
    "straight_path": {"waypoints": [[250.0, 1.75], [-450.0, 1.75]], "step": 0.5},
    "stop_line_s": 60.0,
    "intersection": [[0.0, -14.0], [28.0, -14.0], [28.0, 14.0], [0.0, 14.0]],
    "onset_radius": 50.0,
    "exit_margin": 10.0,
}


def _build_path(layout: dict, name: str) -> ReferencePath:
    if "segments" in layout:
        return path_from_curvature(layout["start"], layout.get("heading", 0.0), layout["segments"],
                                   layout.get("step", 0.1), name=name)
    return build_reference_path(layout["waypoints"], layout.get("step", 0.5), name=name)


@dataclass
class Scenario:
    left_path: ReferencePath
    straight_path: ReferencePath
    stop_line_s: float
    intersection: np.ndarray
    onset_radius: float = 50.0
    exit_margin: float = 10.0
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        self.intersection = np.asarray(self.intersection, dtype=float)
        if not 0.0 < self.stop_line_s < self.left_path.total_length:
            raise ValueError("stop line must lie on the left-turn path")

    @cached_property
    def conflict(self) -> ConflictGeometry:
        return find_conflict_point(self.left_path, self.straight_path)

    @cached_property
    def polygon(self) -> Polygon:
        return Polygon(self.intersection)

    @cached_property
    def s_exit(self) -> float:
        """Arc length where the left-turn path leaves the intersection polygon."""
        line = LineString(self.left_path.xy)
        inside = line.intersection(self.polygon)
        ends = []
        for part in getattr(inside, "geoms", [inside]):
            ends.extend(line.project(p) for p in _endpoints(part))
        return float(max(ends)) if ends else float(self.left_path.total_length)

    @property
    def s_end(self) -> float:
        """Rollouts stop here: past the exit by ``exit_margin``."""
        return min(self.s_exit + self.exit_margin, self.left_path.total_length)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        merged = dict(DEFAULT_SCENARIO)
        merged.update(d or {})
        return cls(
            left_path=_build_path(merged["left_path"], "left"),
            straight_path=_build_path(merged["straight_path"], "straight"),
            stop_line_s=float(merged["stop_line_s"]),
            intersection=merged["intersection"],
            onset_radius=float(merged["onset_radius"]),
            exit_margin=float(merged["exit_margin"]),
            layout=merged,
        )

    def to_dict(self) -> dict:
        return dict(self.layout)


def _endpoints(geom):
    if geom.is_empty:
        return []
    coords = list(geom.coords)
    return [Point(coords[0]), Point(coords[-1])]


def default_scenario() -> Scenario:
    return Scenario.from_dict(DEFAULT_SCENARIO)
