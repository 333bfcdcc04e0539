"""Pose stream ingestion, normalization, windowing, labels and splits."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import DuplicateFrameError, InputError, LabelError, ParseError

KEYPOINT_NAMES = (
    "nose", "neck",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
)
NUM_KEYPOINTS = len(KEYPOINT_NAMES)
NOSE, NECK = 0, 1
RIGHT_SHOULDER, RIGHT_ELBOW, RIGHT_WRIST = 2, 3, 4
LEFT_SHOULDER, LEFT_ELBOW, LEFT_WRIST = 5, 6, 7
RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE = 8, 9, 10
LEFT_HIP, LEFT_KNEE, LEFT_ANKLE = 11, 12, 13

WINDOW_LEN = 20
FRAME_RANGE = (640.0, 360.0)
ACTION_NAMES = {1: "standing", 2: "walking", 3: "checkin", 4: "atm"}


@dataclass
class PoseFrame:
    video_id: str
    frame_index: int
    person_id: int
    keypoints: np.ndarray  # [14, 2] pixels, NaN rows for absent keypoints
    width: int = 640
    height: int = 360


@dataclass
class PoseWindow:
    frames: np.ndarray  # [20, 14, 2] normalized, absent -> (0, 0)
    video_id: str
    person_id: int
    start_frame: int
    action_label: int | None = None
    group_label: int | None = None

    @property
    def source(self) -> tuple[str, int, int]:
        return (self.video_id, self.person_id, self.start_frame)


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    seed: int
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class LabelInterval:
    video_id: str
    person_id: int
    start_frame: int
    end_frame: int  # inclusive
    action_label: int


# ------------------------------------------------------------------ parsing


def _lines(source) -> Iterable[str]:
    if isinstance(source, (bytes, bytearray)):
        source = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        source = io.StringIO(source)
    for line in source:
        yield line.decode("utf-8") if isinstance(line, bytes) else line


def _parse_record(text: str, lineno: int) -> PoseFrame:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
    if not isinstance(rec, dict):
        raise ParseError("record is not an object", lineno)
    missing = {"video_id", "frame_index", "person_id", "width", "height", "keypoints"} - rec.keys()
    if missing:
        raise ParseError(f"missing fields {sorted(missing)}", lineno)
    fi, pid, w, h = rec["frame_index"], rec["person_id"], rec["width"], rec["height"]
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in (fi, pid, w, h)):
        raise ParseError("frame_index, person_id, width and height must be integers", lineno)
    if fi < 0 or w <= 0 or h <= 0:
        raise ParseError("frame_index must be >= 0 and frame size positive", lineno)
    kps = rec["keypoints"]
    if not isinstance(kps, list) or len(kps) != NUM_KEYPOINTS:
        raise ParseError(f"keypoints must be a list of {NUM_KEYPOINTS} entries", lineno)
    arr = np.full((NUM_KEYPOINTS, 2), np.nan)
    for j, kp in enumerate(kps):
        if kp is None:
            continue
        if not (isinstance(kp, list) and len(kp) == 2 and all(isinstance(c, (int, float)) for c in kp)):
            raise ParseError(f"keypoint {j} must be [x, y] or null", lineno)
        x, y = float(kp[0]), float(kp[1])
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError(f"keypoint {j} is not finite", lineno)
        if not (0 <= x <= w and 0 <= y <= h):
            raise ParseError(f"keypoint {j} ({x}, {y}) outside the {w}x{h} frame", lineno)
        arr[j] = (x, y)
    return PoseFrame(str(rec["video_id"]), fi, pid, arr, w, h)


def parse_pose_stream(source: bytes | str | IO) -> list[PoseFrame]:
    """Parse pose JSONL into frames grouped by (video, person), in frame order."""
    seen: dict[tuple[str, int, int], int] = {}
    frames = []
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        frame = _parse_record(line, lineno)
        key = (frame.video_id, frame.person_id, frame.frame_index)
        if key in seen:
            raise DuplicateFrameError(f"duplicate frame {key} (first seen on line {seen[key]})", lineno)
        seen[key] = lineno
        frames.append(frame)
    frames.sort(key=lambda f: (f.video_id, f.person_id, f.frame_index))
    return frames


def read_pose_file(path: str | Path) -> list[PoseFrame]:
    with open(path, "rb") as fh:
        return parse_pose_stream(fh)


def frame_to_record(frame: PoseFrame) -> dict:
    kps = [None if np.isnan(p).any() else [float(p[0]), float(p[1])] for p in frame.keypoints]
    return {"video_id": frame.video_id, "frame_index": frame.frame_index, "person_id": frame.person_id,
            "width": frame.width, "height": frame.height, "keypoints": kps}


def write_pose_jsonl(frames: Iterable[PoseFrame], fh: IO[str]) -> None:
    for frame in frames:
        fh.write(json.dumps(frame_to_record(frame)) + "\n")


# ------------------------------------------------------------ normalization


def normalize_coords(p, frame_range=FRAME_RANGE) -> tuple[float, float]:
    width, height = frame_range
    if not (width > 0 and height > 0):
        raise InputError(f"frame range must be positive, got {frame_range}")
    if p is None:
        return (0.0, 0.0)
    x, y = float(p[0]), float(p[1])
    if math.isnan(x) and math.isnan(y):
        return (0.0, 0.0)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InputError(f"non-finite coordinate {p}")
    return (min(max(x / width, 0.0), 1.0), min(max(y / height, 0.0), 1.0))


def denormalize_coords(p, frame_range=FRAME_RANGE) -> tuple[float, float]:
    return (float(p[0]) * frame_range[0], float(p[1]) * frame_range[1])


def normalize_keypoints(kps: np.ndarray, frame_range=FRAME_RANGE) -> np.ndarray:
    """Vectorized :func:`normalize_coords` for any ``[..., 2]`` array; NaN rows become 0."""
    width, height = frame_range
    if not (width > 0 and height > 0):
        raise InputError(f"frame range must be positive, got {frame_range}")
    kps = np.asarray(kps, dtype=np.float64)
    absent = np.isnan(kps).all(axis=-1)
    if np.isinf(kps).any() or np.isnan(kps[~absent]).any():
        raise InputError("non-finite keypoint coordinate")
    out = np.clip(kps / np.array([width, height]), 0.0, 1.0)
    out[absent] = 0.0
    return out


# ---------------------------------------------------------------- windowing


def group_tracks(frames: Sequence[PoseFrame]) -> dict[tuple[str, int], list[PoseFrame]]:
    tracks: dict[tuple[str, int], list[PoseFrame]] = defaultdict(list)
    for frame in frames:
        tracks[(frame.video_id, frame.person_id)].append(frame)
    for track in tracks.values():
        track.sort(key=lambda f: f.frame_index)
    return dict(sorted(tracks.items()))


def split_on_gaps(track: Sequence[PoseFrame]) -> list[list[PoseFrame]]:
    pieces: list[list[PoseFrame]] = []
    for frame in track:
        if pieces and frame.frame_index == pieces[-1][-1].frame_index + 1:
            pieces[-1].append(frame)
        else:
            pieces.append([frame])
    return pieces


def make_windows(track: Sequence[PoseFrame], window_len: int = WINDOW_LEN,
                 frame_range=FRAME_RANGE) -> list[PoseWindow]:
    """Cut non-overlapping windows; gaps split the track, remainders are dropped."""
    windows = []
    for piece in split_on_gaps(track):
        for start in range(0, len(piece) - window_len + 1, window_len):
            chunk = piece[start:start + window_len]
            kps = np.stack([f.keypoints for f in chunk])
            windows.append(PoseWindow(
                frames=normalize_keypoints(kps, frame_range),
                video_id=chunk[0].video_id,
                person_id=chunk[0].person_id,
                start_frame=chunk[0].frame_index,
            ))
    return windows


# ------------------------------------------------------------------- labels


def derive_group_label(action_label: int) -> int:
    if action_label in (1, 2):
        return 0
    if action_label in (3, 4):
        return 1
    raise LabelError(f"action label must be 1..4, got {action_label!r}")


def read_labels_csv(source: str | Path | IO[str]) -> list[LabelInterval]:
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_labels_csv(fh)
    reader = csv.DictReader(source)
    expected = ["video_id", "person_id", "start_frame", "end_frame", "action_label"]
    if reader.fieldnames != expected:
        raise ParseError(f"labels header must be {','.join(expected)}", 1)
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            interval = LabelInterval(row["video_id"], int(row["person_id"]), int(row["start_frame"]),
                                     int(row["end_frame"]), int(row["action_label"]))
        except (TypeError, ValueError):
            raise ParseError("malformed label row", lineno) from None
        derive_group_label(interval.action_label)
        if interval.end_frame < interval.start_frame:
            raise ParseError("end_frame before start_frame", lineno)
        out.append(interval)
    return out


def write_labels_csv(intervals: Iterable[LabelInterval], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["video_id", "person_id", "start_frame", "end_frame", "action_label"])
    for it in intervals:
        writer.writerow([it.video_id, it.person_id, it.start_frame, it.end_frame, it.action_label])


def label_windows(windows: Iterable[PoseWindow], intervals: Sequence[LabelInterval]) -> list[PoseWindow]:
    """Attach labels to windows lying wholly inside one labeled interval; others are dropped."""
    by_track: dict[tuple[str, int], list[LabelInterval]] = defaultdict(list)
    for it in intervals:
        by_track[(it.video_id, it.person_id)].append(it)
    labeled = []
    for w in windows:
        end = w.start_frame + len(w.frames) - 1
        for it in by_track.get((w.video_id, w.person_id), ()):
            if it.start_frame <= w.start_frame and end <= it.end_frame:
                w.action_label = it.action_label
                w.group_label = derive_group_label(it.action_label)
                labeled.append(w)
                break
    return labeled


# ------------------------------------------------------------------- splits


def split_dataset(samples: Sequence, seed: int) -> DatasetSplit:
    """Stratified 80/10/10 split; val and test get ``floor(n/10)`` each per class."""
    by_class: dict[int, list] = defaultdict(list)
    for s in samples:
        if s.action_label is None:
            raise LabelError("split_dataset needs labeled samples")
        by_class[s.action_label].append(s)
    rng = np.random.default_rng(seed)
    split = DatasetSplit([], [], [], seed)
    for label in sorted(by_class):
        members = by_class[label]
        order = rng.permutation(len(members))
        members = [members[i] for i in order]
        n = len(members)
        if n < 10:
            msg = f"class {label} has only {n} samples; all assigned to train"
            warnings.warn(msg, stacklevel=2)
            split.warnings.append(msg)
            split.train.extend(members)
            continue
        k = n // 10
        split.val.extend(members[:k])
        split.test.extend(members[k:2 * k])
        split.train.extend(members[2 * k:])
    return split


def balance_classes(samples: Sequence, seed: int) -> list:
    """Sub-sample every class down to the smallest class count."""
    by_class: dict[int, list] = defaultdict(list)
    for s in samples:
        by_class[s.action_label].append(s)
    if not by_class:
        return []
    n = min(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    out = []
    for label in sorted(by_class):
        members = by_class[label]
        keep = np.sort(rng.choice(len(members), size=n, replace=False))
        out.extend(members[i] for i in keep)
    return out
