import numpy as np
import pytest

from hoigcn.pose_data import NUM_KEYPOINTS, PoseFrame


def ring_adjacency(v: int = 6) -> np.ndarray:
    """Normalized adjacency of a small ring with one chord, for downsized models."""
    a = np.zeros((v, v))
    for i in range(v):
        a[i, (i + 1) % v] = a[(i + 1) % v, i] = 1.0
    a[1, v - 2] = a[v - 2, 1] = 1.0
    a += np.eye(v)
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


def make_track(video: str, person: int, frames, rng=None, width=640, height=360, start=0):
    """A track of pose frames with random in-frame keypoints."""
    rng = rng or np.random.default_rng(0)
    out = []
    for k in range(frames):
        kps = np.column_stack([rng.uniform(0, width, NUM_KEYPOINTS), rng.uniform(0, height, NUM_KEYPOINTS)])
        out.append(PoseFrame(video, start + k, person, kps, width, height))
    return out


@pytest.fixture
def adjacency6():
    return ring_adjacency(6)
