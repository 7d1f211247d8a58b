"""Brute-force reference: explicit enumeration of up-right paths.

Exponential in the window size; only meant for windows of a few sites, as an
oracle that shares no code with the dynamic programme.
"""

from itertools import combinations

import numpy as np

from .env import weight_at


def all_paths(p, q):
    """Every up-right lattice path from p to q, as vertex lists."""
    dx, dy = q[0] - p[0], q[1] - p[1]
    if dx < 0 or dy < 0:
        return []
    paths = []
    for rights in combinations(range(dx + dy), dx):
        x, y = p
        verts = [(x, y)]
        rset = set(rights)
        for step in range(dx + dy):
            if step in rset:
                x += 1
            else:
                y += 1
            verts.append((x, y))
        paths.append(verts)
    return paths


def path_sum(env, verts):
    return sum(weight_at(env, v) for v in verts)


def brute_passage(env, p, q):
    paths = all_paths(p, q)
    if not paths:
        return -np.inf
    return max(path_sum(env, v) for v in paths)


def brute_geodesic(env, p, q):
    """Maximising path; ``None`` if the maximum is attained twice."""
    paths = all_paths(p, q)
    sums = [path_sum(env, v) for v in paths]
    best = max(sums)
    if sums.count(best) > 1:
        return None
    return paths[sums.index(best)]
