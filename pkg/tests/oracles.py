"""Independent slow reference implementations used as test oracles."""
from collections import deque

import numpy as np


def naive_dbscan(points, eps, min_pts):
    """Textbook DBSCAN over an explicit distance matrix, ascending seed order."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    labels = [-1] * n
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    nbrs = [[j for j in range(n) if dist[i, j] <= eps] for i in range(n)]
    core = [len(nb) >= min_pts for nb in nbrs]
    cid = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cid
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in nbrs[p]:
                if labels[q] == -1:
                    labels[q] = cid
                    if core[q]:
                        queue.append(q)
        cid += 1
    return np.array(labels), core


def partition(labels):
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(i)
    noise = groups.pop(-1, set())
    return sorted(map(frozenset, groups.values()), key=min), noise


def bfs_components(mask):
    """4-connected components of a boolean grid as sets of (row, col)."""
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for r0, c0 in zip(*np.nonzero(mask)):
        if seen[r0, c0]:
            continue
        comp, queue = set(), deque([(r0, c0)])
        seen[r0, c0] = True
        while queue:
            r, c = queue.popleft()
            comp.add((int(r), int(c)))
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < mask.shape[0] and 0 <= cc < mask.shape[1] and mask[rr, cc] and not seen[rr, cc]:
                    seen[rr, cc] = True
                    queue.append((rr, cc))
        comps.append(comp)
    return comps
