"""Skeleton + interaction-area graph: adjacency, normalization, sample assembly.

Node order is fixed: skeleton keypoints 0..13, then area corners 14..21 as
(area0 upper-left, area0 lower-right, area1 upper-left, ...).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import GraphSpecError, ParseError, ShapeError
from .pose_data import (
    FRAME_RANGE,
    LEFT_WRIST,
    NUM_KEYPOINTS,
    RIGHT_WRIST,
    PoseWindow,
    derive_group_label,
)

SKELETON_BONES = (
    (0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7),
    (1, 8), (8, 9), (9, 10), (1, 11), (11, 12), (12, 13),
)
MAX_AREAS = 4
NUM_AREA_NODES = 2 * MAX_AREAS
LINK_MODES = ("bones_only", "wrist_links", "full_links")


@dataclass(frozen=True)
class GraphSpec:
    with_objects: bool = True
    link_mode: str = "full_links"

    def __post_init__(self):
        if self.link_mode not in LINK_MODES:
            raise GraphSpecError(f"unknown link mode {self.link_mode!r}")
        if not self.with_objects and self.link_mode != "bones_only":
            raise GraphSpecError(f"link mode {self.link_mode!r} needs area nodes (with_objects=True)")

    @classmethod
    def make(cls, with_objects: bool, link_mode: str = "full_links") -> "GraphSpec":
        """Like the constructor, but falls back to bones_only when there are no area nodes."""
        return cls(with_objects, link_mode if with_objects else "bones_only")

    @property
    def num_area_nodes(self) -> int:
        return NUM_AREA_NODES if self.with_objects else 0

    @property
    def num_nodes(self) -> int:
        return NUM_KEYPOINTS + self.num_area_nodes


@dataclass
class Adjacency:
    matrix: np.ndarray
    normalized: bool = False

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]


@dataclass
class GraphSample:
    nodes: np.ndarray  # [20, V, 2]
    action_label: int | None
    group_label: int | None
    id: str = ""


def build_adjacency(spec: GraphSpec, topology: Sequence[tuple[int, int]] = SKELETON_BONES) -> Adjacency:
    v = spec.num_nodes
    a = np.zeros((v, v))

    def link(i, j):
        a[i, j] = a[j, i] = 1.0

    for i, j in topology:
        link(i, j)
    if spec.with_objects:
        area_nodes = range(NUM_KEYPOINTS, NUM_KEYPOINTS + NUM_AREA_NODES)
        if spec.link_mode == "wrist_links":
            sources = (RIGHT_WRIST, LEFT_WRIST)
        elif spec.link_mode == "full_links":
            sources = range(NUM_KEYPOINTS)
        else:
            sources = ()
        for s in sources:
            for n in area_nodes:
                link(s, n)
        for k in range(MAX_AREAS):
            link(NUM_KEYPOINTS + 2 * k, NUM_KEYPOINTS + 2 * k + 1)
    return Adjacency(a, normalized=False)


def normalize_adjacency(adj: Adjacency) -> Adjacency:
    """Symmetric GCN normalization ``D^-1/2 (A + I) D^-1/2``."""
    a = np.asarray(adj.matrix, dtype=np.float64)
    if adj.normalized:
        raise GraphSpecError("adjacency is already normalized")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T) or np.any(np.diag(a) != 0) or not np.isin(a, (0.0, 1.0)).all():
        raise GraphSpecError("expected a symmetric 0/1 matrix with zero diagonal")
    a_hat = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a_hat.sum(axis=1))
    m = a_hat * d[:, None] * d[None, :]
    return Adjacency(m, normalized=True)


def model_adjacency(spec: GraphSpec) -> Adjacency:
    return normalize_adjacency(build_adjacency(spec))


def area_nodes(areas: Sequence, frame_range=FRAME_RANGE) -> np.ndarray:
    """Normalized ``[8, 2]`` corner block, zero-filled for missing areas."""
    if len(areas) > MAX_AREAS:
        raise GraphSpecError(f"at most {MAX_AREAS} interaction areas, got {len(areas)}")
    width, height = frame_range
    block = np.zeros((NUM_AREA_NODES, 2))
    for k, area in enumerate(sorted(areas, key=lambda a: a.id)):
        block[2 * k] = (area.x1 / width, area.y1 / height)
        block[2 * k + 1] = (area.x2 / width, area.y2 / height)
    return np.clip(block, 0.0, 1.0)


def assemble_graph_sample(window: PoseWindow, areas: Sequence, spec: GraphSpec,
                          frame_range=FRAME_RANGE) -> GraphSample:
    skeleton = np.asarray(window.frames, dtype=np.float64)
    if spec.with_objects:
        block = area_nodes(areas, frame_range)
        t = skeleton.shape[0]
        nodes = np.concatenate([skeleton, np.broadcast_to(block, (t,) + block.shape)], axis=1)
    else:
        if len(areas) > MAX_AREAS:
            raise GraphSpecError(f"at most {MAX_AREAS} interaction areas, got {len(areas)}")
        nodes = skeleton.copy()
    sid = f"{window.video_id}/{window.person_id}/{window.start_frame}"
    return GraphSample(nodes, window.action_label, window.group_label, sid)


def drop_area_nodes(samples: Iterable[GraphSample]) -> list[GraphSample]:
    return [GraphSample(s.nodes[:, :NUM_KEYPOINTS].copy(), s.action_label, s.group_label, s.id)
            for s in samples]


def to_batch(samples: Sequence[GraphSample], dtype=np.float64) -> np.ndarray:
    """Stack samples into the model layout ``[B, 2, T, V]``."""
    return np.stack([s.nodes for s in samples]).transpose(0, 3, 1, 2).astype(dtype)


# ---------------------------------------------------------------- dataset io


def write_dataset_jsonl(samples: Iterable[GraphSample], fh: IO[str]) -> None:
    for s in samples:
        rec = {"id": s.id, "label": s.action_label, "group": s.group_label, "nodes": s.nodes.tolist()}
        fh.write(json.dumps(rec) + "\n")


def read_dataset_jsonl(path: str | Path) -> list[GraphSample]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                nodes = np.asarray(rec["nodes"], dtype=np.float64)
                label, group = int(rec["label"]), int(rec["group"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise ParseError("malformed dataset record", lineno) from None
            if nodes.ndim != 3 or nodes.shape[2] != 2 or nodes.shape[1] not in (NUM_KEYPOINTS, NUM_KEYPOINTS + NUM_AREA_NODES):
                raise ParseError(f"nodes must be [T, 14 or 22, 2], got {nodes.shape}", lineno)
            if derive_group_label(label) != group:
                raise ParseError(f"group {group} inconsistent with label {label}", lineno)
            out.append(GraphSample(nodes, label, group, str(rec.get("id", ""))))
    return out
