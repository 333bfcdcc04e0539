"""Find fixed-object interaction areas from where hands linger.

Wrist positions are density-filtered with DBSCAN, binned into a grid heatmap,
and the hottest 4-connected cell groups become interaction boxes.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import InputError
from .graph import MAX_AREAS
from .pose_data import LEFT_WRIST, RIGHT_WRIST, PoseFrame, group_tracks

log = logging.getLogger(__name__)

DEFAULT_EPS = 15.0
DEFAULT_MIN_PTS = 20
DEFAULT_CELL = 10.0
DEFAULT_THRESHOLD = 0.5


@dataclass
class WristPointSet:
    points: np.ndarray  # [N, 2] pixels
    side: str = "right"
    num_frames: int = 0


@dataclass
class ClusterLabeling:
    labels: np.ndarray  # -1 noise, 0..k-1 clusters
    eps: float
    min_pts: int

    @property
    def num_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


@dataclass
class Heatmap:
    cell_size: float
    width: float
    height: float
    grid: np.ndarray  # [ceil(h/cell), ceil(w/cell)] counts, row per y-cell
    skipped: int = 0


@dataclass
class InteractionArea:
    id: int
    x1: float
    y1: float
    x2: float
    y2: float
    mass: int = 0

    @property
    def upper_left(self) -> tuple[float, float]:
        return (self.x1, self.y1)

    @property
    def lower_right(self) -> tuple[float, float]:
        return (self.x2, self.y2)

    def contains(self, x: float, y: float) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2


def _as_points(points) -> np.ndarray:
    arr = points.points if isinstance(points, WristPointSet) else points
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 2)
    if not np.isfinite(arr).all():
        raise InputError("wrist points must be finite")
    return arr


def dbscan_cluster(points, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS) -> ClusterLabeling:
    """DBSCAN with inclusive eps-neighborhoods (a point counts as its own neighbor).

    Clusters are seeded from core points in ascending index order, so a border
    point reachable from two clusters joins the one discovered first.
    """
    if not eps > 0 or min_pts < 1:
        raise InputError(f"need eps > 0 and min_pts >= 1, got eps={eps}, min_pts={min_pts}")
    pts = _as_points(points)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return ClusterLabeling(labels, eps, min_pts)
    neighbors = cKDTree(pts).query_ball_point(pts, r=eps)
    core = np.fromiter((len(nb) >= min_pts for nb in neighbors), dtype=bool, count=n)
    cluster = 0
    for seed in range(n):
        if labels[seed] != -1 or not core[seed]:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for q in sorted(neighbors[p]):
                if labels[q] == -1:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return ClusterLabeling(labels, eps, min_pts)


def build_heatmap(points, cell_size: float = DEFAULT_CELL, frame=(640, 360)) -> Heatmap:
    if not cell_size > 0:
        raise InputError(f"cell size must be positive, got {cell_size}")
    width, height = frame
    pts = _as_points(points)
    nx, ny = math.ceil(width / cell_size), math.ceil(height / cell_size)
    grid = np.zeros((ny, nx), dtype=np.int64)
    inside = (pts[:, 0] >= 0) & (pts[:, 0] <= width) & (pts[:, 1] >= 0) & (pts[:, 1] <= height)
    skipped = int((~inside).sum())
    if skipped:
        log.warning("heatmap: skipped %d points outside the %sx%s frame", skipped, width, height)
    cx = np.minimum((pts[inside, 0] // cell_size).astype(np.int64), nx - 1)
    cy = np.minimum((pts[inside, 1] // cell_size).astype(np.int64), ny - 1)
    np.add.at(grid, (cy, cx), 1)
    return Heatmap(cell_size, width, height, grid, skipped)


def extract_hotspot_areas(h: Heatmap, threshold_frac: float = DEFAULT_THRESHOLD,
                          max_areas: int = MAX_AREAS) -> list[InteractionArea]:
    if not 0 < threshold_frac <= 1:
        raise InputError(f"threshold fraction must be in (0, 1], got {threshold_frac}")
    peak = h.grid.max() if h.grid.size else 0
    if peak <= 0:
        return []
    hot = h.grid >= threshold_frac * peak
    components, count = ndimage.label(hot)  # default structure is 4-connected
    candidates = []
    for idx, sl in enumerate(ndimage.find_objects(components), start=1):
        rows, cols = sl
        mass = int(h.grid[sl][components[sl] == idx].sum())
        x1, y1 = cols.start * h.cell_size, rows.start * h.cell_size
        x2 = min(cols.stop * h.cell_size, h.width)
        y2 = min(rows.stop * h.cell_size, h.height)
        candidates.append((mass, y1, x1, x2, y2))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    return [InteractionArea(k, float(x1), float(y1), float(x2), float(y2), mass)
            for k, (mass, y1, x1, x2, y2) in enumerate(candidates[:max_areas])]


def wrist_points(frames: Sequence[PoseFrame], side: str = "right") -> WristPointSet:
    joints = {"right": (RIGHT_WRIST,), "left": (LEFT_WRIST,), "both": (RIGHT_WRIST, LEFT_WRIST)}
    if side not in joints:
        raise InputError(f"side must be right, left or both, got {side!r}")
    pts = [f.keypoints[j] for f in frames for j in joints[side]]
    pts = [p for p in pts if not np.isnan(p).any()]
    arr = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    return WristPointSet(arr, side, len(frames))


def mine_interaction_areas(
    frames: Sequence[PoseFrame],
    eps: float = DEFAULT_EPS,
    min_pts: int = DEFAULT_MIN_PTS,
    cell_size: float = DEFAULT_CELL,
    threshold_frac: float = DEFAULT_THRESHOLD,
    side: str = "right",
    frame_size: tuple[float, float] | None = None,
    max_areas: int = MAX_AREAS,
) -> tuple[list[InteractionArea], Heatmap | None]:
    """Wrist extraction -> DBSCAN noise removal -> heatmap -> hotspot boxes."""
    wrists = wrist_points(frames, side)
    if frame_size is None:
        frame_size = (frames[0].width, frames[0].height) if frames else (640, 360)
    if len(wrists.points) < min_pts:
        log.warning("only %d wrist points (< min_pts=%d); no areas mined", len(wrists.points), min_pts)
        return [], None
    labeling = dbscan_cluster(wrists, eps, min_pts)
    kept = wrists.points[labeling.labels >= 0]
    heat = build_heatmap(kept, cell_size, frame_size)
    return extract_hotspot_areas(heat, threshold_frac, max_areas), heat


def mine_areas_by_video(frames: Sequence[PoseFrame], **params) -> tuple[dict, dict]:
    """Mine each video separately; results keyed by sorted video id."""
    by_video: dict[str, list[PoseFrame]] = {}
    for (video, _), track in group_tracks(frames).items():
        by_video.setdefault(video, []).extend(track)
    areas, heatmaps = {}, {}
    for video in sorted(by_video):
        areas[video], heatmaps[video] = mine_interaction_areas(by_video[video], **params)
    return areas, heatmaps


# ---------------------------------------------------------------------- io


def areas_to_json(areas: Mapping[str, Sequence[InteractionArea]]) -> str:
    doc = {video: [asdict(a) for a in sorted(lst, key=lambda a: a.id)] for video, lst in sorted(areas.items())}
    return json.dumps(doc, indent=1, sort_keys=True)


ANY_VIDEO = "*"


def read_areas_json(path: str | Path) -> dict[str, list[InteractionArea]]:
    """Per-video areas; a bare list applies to every video and is stored under ``ANY_VIDEO``."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, list):
        doc = {ANY_VIDEO: doc}
    if not isinstance(doc, dict):
        raise InputError("areas JSON must be a list of areas or an object keyed by video id")
    out = {}
    for video, lst in doc.items():
        areas = [InteractionArea(int(a["id"]), float(a["x1"]), float(a["y1"]),
                                 float(a["x2"]), float(a["y2"]), int(a.get("mass", 0))) for a in lst]
        if len(areas) > MAX_AREAS:
            raise InputError(f"video {video!r} has {len(areas)} areas (max {MAX_AREAS})")
        out[video] = areas
    return out


def areas_for(areas: Mapping[str, Sequence[InteractionArea]], video_id: str) -> list[InteractionArea]:
    if video_id in areas:
        return list(areas[video_id])
    return list(areas.get(ANY_VIDEO, []))


def write_heatmap_csv(h: Heatmap, fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    for row in h.grid:
        writer.writerow(row.tolist())
