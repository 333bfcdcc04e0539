"""Deterministic synthetic desk-scale scenes: labeled pose windows plus ground-truth areas.

Bodies are 2D stick figures with per-sample bone scale. Interaction classes put
the right wrist inside an area box; check-in reaches with a nearly straight
arm, ATM works with a sharply bent elbow and dwells on a few key points.
Ambiguous standing copies those arm motions but aims them away from a nearby
box, so without the area nodes they look like interactions.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .graph import MAX_AREAS
from .pose_data import (
    LEFT_ANKLE, LEFT_ELBOW, LEFT_HIP, LEFT_KNEE, LEFT_SHOULDER, LEFT_WRIST, NECK, NOSE, NUM_KEYPOINTS,
    RIGHT_ANKLE, RIGHT_ELBOW, RIGHT_HIP, RIGHT_KNEE, RIGHT_SHOULDER, RIGHT_WRIST, WINDOW_LEN,
    LabelInterval, PoseFrame, PoseWindow, derive_group_label, normalize_keypoints, write_labels_csv,
    write_pose_jsonl,
)
from .scene_mining import InteractionArea, areas_to_json

# base bone lengths in pixels, scaled per sample
HEAD = 24.0
SHOULDER = 22.0
UPPER_ARM = 28.0
FOREARM = 26.0
TORSO = 58.0
HIP = 12.0
THIGH = 38.0
SHIN = 38.0
SCALE_RANGE = (0.93, 1.07)

CHECKIN_REACH = (0.72, 0.82)  # shoulder-to-wrist distance over arm length
ATM_REACH = (0.45, 0.58)
MAX_TRIES = 500


@dataclass(frozen=True)
class ScenarioConfig:
    frame: tuple[int, int] = (640, 360)
    num_areas: int = 2
    samples_per_class: int = 200
    seed: int = 0
    ambiguity: float = 0.8
    noise_px: float = 1.0
    num_scenes: int = 8

    def __post_init__(self):
        if not 0 <= self.num_areas <= MAX_AREAS:
            raise ConfigError(f"num_areas must be in 0..{MAX_AREAS}, got {self.num_areas}")
        if not 0.0 <= self.ambiguity <= 1.0:
            raise ConfigError(f"ambiguity must be in [0, 1], got {self.ambiguity}")
        if self.samples_per_class < 0 or self.num_scenes < 1 or self.noise_px < 0:
            raise ConfigError("samples_per_class >= 0, num_scenes >= 1 and noise_px >= 0 required")


@dataclass
class SyntheticDataset:
    windows: list[PoseWindow]
    areas: dict[str, list[InteractionArea]]
    pixels: list[np.ndarray] = field(default_factory=list)  # [20, 14, 2] per window, in pixels
    config: ScenarioConfig | None = None


def scene_id(k: int) -> str:
    return f"scene{k:02d}"


# ------------------------------------------------------------------ areas


def generate_areas(cfg: ScenarioConfig, rng: np.random.Generator) -> list[InteractionArea]:
    """Equal-sized, non-overlapping boxes at reaching height, at least 60 px apart.

    One size per scene keeps the wrist density comparable across boxes.
    """
    width, height = cfg.frame
    boxes: list[InteractionArea] = []
    w, h = rng.uniform(44, 64), rng.uniform(32, 44)
    for attempt in range(MAX_TRIES * 10):
        if len(boxes) == cfg.num_areas:
            break
        if attempt % 50 == 49:
            boxes = []  # dead end: start the layout over
        x1 = rng.uniform(90, width - 90 - w)
        # the whole box must be reachable at about neck height by a person who fits in frame
        y1 = rng.uniform(40, height - 140 - h)
        cand = InteractionArea(len(boxes), round(x1, 1), round(y1, 1), round(x1 + w, 1), round(y1 + h, 1))
        if all(_gap(cand, b) >= 60 for b in boxes):
            boxes.append(cand)
    if len(boxes) < cfg.num_areas:
        raise ConfigError(f"could not place {cfg.num_areas} areas in a {width}x{height} frame")
    return boxes


def _gap(a: InteractionArea, b: InteractionArea) -> float:
    dx = max(b.x1 - a.x2, a.x1 - b.x2, 0.0)
    dy = max(b.y1 - a.y2, a.y1 - b.y2, 0.0)
    return math.hypot(dx, dy)


def designated_areas(areas, label: int) -> list[InteractionArea]:
    """Even-indexed areas host check-in, odd ones ATM; a lone area hosts both."""
    ordered = sorted(areas, key=lambda a: a.id)
    if len(ordered) == 1:
        return ordered
    return [a for k, a in enumerate(ordered) if k % 2 == (0 if label == 3 else 1)]


# --------------------------------------------------------------- kinematics


def _limb(origin, length, angle):
    """Point at ``length`` from ``origin``; angle 0 points straight down the image."""
    return origin + length * np.array([math.sin(angle), math.cos(angle)])


def _two_link(shoulder, target, a, b):
    """Elbow and wrist for a two-segment arm reaching ``target``; the elbow bends downward."""
    v = target - shoulder
    d = float(np.hypot(*v))
    d = min(max(d, abs(a - b) + 1e-6), 0.995 * (a + b))
    u = v / max(np.hypot(*v), 1e-9)
    cos_s = (a * a + d * d - b * b) / (2 * a * d)
    ang = math.acos(max(-1.0, min(1.0, cos_s)))
    cands = []
    for sgn in (1, -1):
        c, s = math.cos(sgn * ang), math.sin(sgn * ang)
        cands.append(shoulder + a * np.array([c * u[0] - s * u[1], s * u[0] + c * u[1]]))
    elbow = max(cands, key=lambda e: e[1])
    wrist = shoulder + d * u
    return elbow, wrist


@dataclass
class _Body:
    neck: np.ndarray
    k: float  # bone scale
    side: int  # +1: the right arm is on the image-left

    def joints(self, arm_r=(0.15, 0.05), arm_l=(0.15, 0.05), leg_r=(0.05, 0.0), leg_l=(0.05, 0.0)):
        k, s, n = self.k, self.side, self.neck
        p = np.zeros((NUM_KEYPOINTS, 2))
        p[NECK] = n
        p[NOSE] = n + (0.0, -HEAD * k)
        p[RIGHT_SHOULDER] = n + (-s * SHOULDER * k, 3.0)
        p[LEFT_SHOULDER] = n + (s * SHOULDER * k, 3.0)
        for sh, el, wr, (up, lo), sign in ((RIGHT_SHOULDER, RIGHT_ELBOW, RIGHT_WRIST, arm_r, -s),
                                           (LEFT_SHOULDER, LEFT_ELBOW, LEFT_WRIST, arm_l, s)):
            p[el] = _limb(p[sh], UPPER_ARM * k, sign * up)
            p[wr] = _limb(p[el], FOREARM * k, sign * lo)
        for hip, knee, ankle, (up, lo), sign in ((RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE, leg_r, -s),
                                                 (LEFT_HIP, LEFT_KNEE, LEFT_ANKLE, leg_l, s)):
            p[hip] = n + (sign * HIP * k, TORSO * k)
            p[knee] = _limb(p[hip], THIGH * k, sign * up)
            p[ankle] = _limb(p[knee], SHIN * k, sign * lo)
        return p


def _jitter(rng, shape, radius):
    """Offsets drawn uniformly from a disk of ``radius`` pixels."""
    if radius <= 0:
        return np.zeros(shape + (2,))
    r = radius * np.sqrt(rng.random(shape))
    th = rng.uniform(0, 2 * math.pi, shape)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)


def _extent(k):
    """Offsets of the body bounding box around the neck: (left, right, up, down)."""
    reach = SHOULDER * k + UPPER_ARM * k + FOREARM * k
    return reach, reach, HEAD * k, TORSO * k + (THIGH + SHIN) * k


def _fits(frames: np.ndarray, cfg: ScenarioConfig, margin: float = 1.0) -> bool:
    w, h = cfg.frame
    return bool(np.all(frames[..., 0] >= margin) and np.all(frames[..., 0] <= w - margin)
                and np.all(frames[..., 1] >= margin) and np.all(frames[..., 1] <= h - margin))


def _wrist_targets(kind: int, box, base, rng) -> np.ndarray:
    """Per-frame wrist targets around ``base``, kept inside ``box`` (x1, y1, x2, y2)."""
    x1, y1, x2, y2 = box
    lo, hi = np.array([x1 + 1, y1 + 1]), np.array([x2 - 1, y2 - 1])
    if kind == 3:
        pts = base + rng.uniform((-8, -6), (8, 6), size=(WINDOW_LEN, 2))
    else:
        keys = base + rng.uniform((-8, -7), (8, 7), size=(4, 2))
        pts = np.repeat(keys, WINDOW_LEN // 4, axis=0) + rng.uniform(-1.5, 1.5, size=(WINDOW_LEN, 2))
    return np.clip(pts, lo, hi)


def _reach(kind: int, box, base, neck, side: int, k: float, cfg: ScenarioConfig, rng) -> np.ndarray:
    """Fixed body at ``neck`` whose right wrist works targets around ``base``; [20, 14, 2] pixels."""
    targets = _wrist_targets(kind, box, base, rng)
    rest = _Body(neck, k, side).joints(arm_l=(rng.uniform(0.05, 0.25), rng.uniform(0.0, 0.15)))
    jit = _jitter(rng, (WINDOW_LEN, NUM_KEYPOINTS), cfg.noise_px)
    frames = np.empty((WINDOW_LEN, NUM_KEYPOINTS, 2))
    for t in range(WINDOW_LEN):
        p = rest + jit[t]
        p[RIGHT_ELBOW], p[RIGHT_WRIST] = _two_link(p[RIGHT_SHOULDER], targets[t], UPPER_ARM * k, FOREARM * k)
        frames[t] = p
    return frames


def _arm_vector(kind: int, k: float, rng) -> tuple[float, float]:
    """Shoulder-to-wrist distance and downward elevation angle of a working arm."""
    lo, hi = CHECKIN_REACH if kind == 3 else ATM_REACH
    d = rng.uniform(lo, hi) * (UPPER_ARM + FOREARM) * k
    return d, rng.uniform(math.radians(-30), math.radians(15))


def spread_point(j: int) -> np.ndarray:
    """j-th point of the R2 low-discrepancy sequence in the unit square."""
    return np.array([(0.5 + 0.7548776662466927 * j) % 1.0, (0.5 + 0.5698402909980532 * j) % 1.0])


def _interaction(kind: int, area: InteractionArea, cfg: ScenarioConfig, rng, k,
                 frac: np.ndarray | None = None) -> np.ndarray:
    box = (area.x1, area.y1, area.x2, area.y2)
    lo, hi = np.array([area.x1 + 1, area.y1 + 1]), np.array([area.x2 - 1, area.y2 - 1])
    base = lo + (rng.random(2) if frac is None else frac) * (hi - lo)
    pos = 1 if rng.random() < 0.5 else -1  # +1: person stands right of the box
    d, phi = _arm_vector(kind, k, rng)
    # the working arm is on the box side
    shoulder = base + d * np.array([pos * math.cos(phi), -math.sin(phi)])
    neck = shoulder + np.array([pos * SHOULDER * k, -3.0])
    return _reach(kind, box, base, neck, pos, k, cfg, rng)


def _standing(cfg: ScenarioConfig, rng, k) -> np.ndarray:
    w, h = cfg.frame
    left, right, up, down = _extent(k)
    neck = np.array([rng.uniform(left + 5, w - right - 5), rng.uniform(up + 5, h - down - 5)])
    body = _Body(neck, k, 1)
    rest = body.joints(arm_r=(rng.uniform(0.05, 0.3), rng.uniform(0.0, 0.2)),
                       arm_l=(rng.uniform(0.05, 0.3), rng.uniform(0.0, 0.2)),
                       leg_r=(rng.uniform(0.0, 0.12), 0.0), leg_l=(rng.uniform(0.0, 0.12), 0.0))
    return rest[None] + _jitter(rng, (WINDOW_LEN, NUM_KEYPOINTS), cfg.noise_px)


def _ambiguous_standing(areas, cfg: ScenarioConfig, rng, k) -> np.ndarray:
    """Stand beside a real box and mimic an interaction aimed away from it."""
    area = areas[int(rng.integers(len(areas)))]
    kind = 3 if rng.random() < 0.5 else 4
    pos = 1 if rng.random() < 0.5 else -1  # +1: person right of the box
    # neck within 30 px of the box: horizontal gap <= 24, vertical overhang <= 15
    neck = np.array([area.x2 + rng.uniform(4, 24) if pos == 1 else area.x1 - rng.uniform(4, 24),
                     rng.uniform(area.y1 - 15, area.y2 + 15)])
    side = -pos  # the working arm is on the far side from the box
    d, phi = _arm_vector(kind, k, rng)
    shoulder = neck + np.array([pos * SHOULDER * k, 3.0])
    base = shoulder + d * np.array([pos * math.cos(phi), math.sin(phi)])
    # a virtual box the size of the real one, centered on the mimicked work point
    hw, hh = (area.x2 - area.x1) / 2, (area.y2 - area.y1) / 2
    box = (base[0] - hw, base[1] - hh, base[0] + hw, base[1] + hh)
    return _reach(kind, box, base, neck, side, k, cfg, rng)


def _walking(cfg: ScenarioConfig, rng, k) -> np.ndarray:
    w, h = cfg.frame
    left, right, up, down = _extent(k)
    speed = rng.uniform(5.6, 8.0)
    direction = 1 if rng.random() < 0.5 else -1
    travel = speed * (WINDOW_LEN - 1)
    x_lo, x_hi = left + 5, w - right - 5 - travel
    x0 = rng.uniform(x_lo, x_hi)
    if direction < 0:
        x0 += travel
    y0 = rng.uniform(up + 8, h - down - 8)
    phase, period = rng.uniform(0, 2 * math.pi), rng.uniform(8, 12)
    amp_leg, amp_arm = rng.uniform(0.3, 0.45), rng.uniform(0.25, 0.4)
    jit = _jitter(rng, (WINDOW_LEN, NUM_KEYPOINTS), cfg.noise_px)
    frames = np.empty((WINDOW_LEN, NUM_KEYPOINTS, 2))
    side = 1 if direction > 0 else -1
    for t in range(WINDOW_LEN):
        ang = phase + 2 * math.pi * t / period
        swing = math.sin(ang)
        neck = np.array([x0 + direction * speed * t, y0 - 2.0 * abs(math.cos(ang))])
        body = _Body(neck, k, side)
        frames[t] = body.joints(arm_r=(-side * amp_arm * swing, -side * 0.3 * amp_arm * swing),
                                arm_l=(side * amp_arm * swing, side * 0.3 * amp_arm * swing),
                                leg_r=(side * amp_leg * swing, 0.0),
                                leg_l=(-side * amp_leg * swing, 0.0)) + jit[t]
    return frames


def _wrist_in_any(frames: np.ndarray, areas) -> bool:
    for a in areas:
        wr = frames[:, RIGHT_WRIST]
        wl = frames[:, LEFT_WRIST]
        for pts in (wr, wl):
            if np.any((pts[:, 0] >= a.x1) & (pts[:, 0] <= a.x2) & (pts[:, 1] >= a.y1) & (pts[:, 1] <= a.y2)):
                return True
    return False


def generate_pixels(label: int, areas, cfg: ScenarioConfig, rng: np.random.Generator,
                    host: int | None = None) -> np.ndarray:
    """Pixel keypoints [20, 14, 2] for one window of class ``label``.

    ``host`` picks among the areas designated for an interaction class
    (modulo their count) and also indexes a low-discrepancy placement of the
    work point inside the box, so a batch of samples covers boxes evenly;
    by default both are random.
    """
    if label not in (1, 2, 3, 4):
        raise ConfigError(f"class must be 1..4, got {label}")
    if label in (3, 4) and not areas:
        raise ConfigError("interaction classes need at least one area")
    k = rng.uniform(*SCALE_RANGE)
    ambiguous = label == 1 and bool(areas) and rng.random() < cfg.ambiguity
    for _ in range(MAX_TRIES):
        if label == 1:
            frames = _ambiguous_standing(areas, cfg, rng, k) if ambiguous else _standing(cfg, rng, k)
            if _wrist_in_any(frames, areas):
                continue
        elif label == 2:
            frames = _walking(cfg, rng, k)
        else:
            hosts = designated_areas(areas, label)
            if host is None:
                area, frac = hosts[int(rng.integers(len(hosts)))], None
            else:
                area, frac = hosts[host % len(hosts)], spread_point(host // len(hosts))
            frames = _interaction(label, area, cfg, rng, k, frac)
            others = [a for a in areas if a.id != area.id]
            if others and _wrist_in_any(frames, others):
                continue
            wr = frames[:, RIGHT_WRIST]
            inside = (wr[:, 0] >= area.x1) & (wr[:, 0] <= area.x2) & (wr[:, 1] >= area.y1) & (wr[:, 1] <= area.y2)
            if inside.mean() < 0.8 or np.any(wr[:, 1] > frames[:, NECK, 1] + 20):
                continue
        if _fits(frames, cfg):
            return frames
    raise ConfigError(f"could not place a class-{label} sample in the frame")


def generate_sample(label: int, areas, cfg: ScenarioConfig, rng: np.random.Generator,
                    video_id: str = "scene00", person_id: int = 0, start_frame: int = 0):
    """One labeled window (normalized coordinates) and the areas it was generated against."""
    px = generate_pixels(label, areas, cfg, rng)
    window = PoseWindow(normalize_keypoints(px, cfg.frame), video_id, person_id, start_frame,
                        label, derive_group_label(label))
    return window, list(areas)


def generate_dataset(cfg: ScenarioConfig) -> SyntheticDataset:
    """``samples_per_class`` windows per class, dealt round-robin over the scenes."""
    areas = {}
    for s in range(cfg.num_scenes):
        areas[scene_id(s)] = generate_areas(cfg, np.random.default_rng([cfg.seed, 1000 + s]))
    next_person = {vid: 0 for vid in areas}
    windows, pixels = [], []
    for label in (1, 2, 3, 4):
        for i in range(cfg.samples_per_class):
            vid = scene_id(i % cfg.num_scenes)
            rng = np.random.default_rng([cfg.seed, label, i])
            px = generate_pixels(label, areas[vid], cfg, rng, host=i // cfg.num_scenes)
            px = np.round(px, 2)
            pid = next_person[vid]
            next_person[vid] += 1
            windows.append(PoseWindow(normalize_keypoints(px, cfg.frame), vid, pid, pid * WINDOW_LEN,
                                      label, derive_group_label(label)))
            pixels.append(px)
    return SyntheticDataset(windows, areas, pixels, cfg)


# ---------------------------------------------------------------------- io


def dataset_frames(ds: SyntheticDataset) -> list[PoseFrame]:
    width, height = ds.config.frame if ds.config else (640, 360)
    frames = []
    for w, px in zip(ds.windows, ds.pixels):
        for t in range(len(px)):
            frames.append(PoseFrame(w.video_id, w.start_frame + t, w.person_id, px[t], width, height))
    frames.sort(key=lambda f: (f.video_id, f.person_id, f.frame_index))
    return frames


def dataset_labels(ds: SyntheticDataset) -> list[LabelInterval]:
    out = [LabelInterval(w.video_id, w.person_id, w.start_frame, w.start_frame + len(w.frames) - 1,
                         w.action_label) for w in ds.windows]
    return sorted(out, key=lambda it: (it.video_id, it.person_id, it.start_frame))


def write_synthetic(ds: SyntheticDataset, out_dir: str | Path) -> dict[str, Path]:
    """Write poses.jsonl, labels.csv and areas.json; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"poses": out / "poses.jsonl", "labels": out / "labels.csv", "areas": out / "areas.json"}
    buf = io.StringIO()
    write_pose_jsonl(dataset_frames(ds), buf)
    paths["poses"].write_text(buf.getvalue())
    buf = io.StringIO()
    write_labels_csv(dataset_labels(ds), buf)
    paths["labels"].write_text(buf.getvalue())
    paths["areas"].write_text(areas_to_json(ds.areas) + "\n")
    return paths
