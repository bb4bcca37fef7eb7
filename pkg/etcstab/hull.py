"""
hull.py - Distance to the Leaders' Convex Hull

Solves min |V^T t - x| over the probability simplex, where the rows of V are
the leader states. Up to three leaders the minimum is found exactly by
enumerating faces (point, segment, triangle); larger sets use projected
gradient onto the simplex.
"""
from itertools import combinations
from typing import Tuple

import numpy as np

from .debug_logger import NULL_LOGGER
from .errors import ValidationError

EXACT_LEADER_LIMIT = 3
STATIONARITY_TOL = 1e-10
MAX_ITERATIONS = 20000
_FEASIBILITY_TOL = 1e-12


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {t >= 0, sum t = 1} (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _face_projection(vertices: np.ndarray, point: np.ndarray) -> Tuple[bool, float]:
    """Projection onto the affine hull of `vertices`; feasible when it lies inside the face."""
    base = vertices[0]
    if len(vertices) == 1:
        return True, float(np.linalg.norm(point - base))
    D = (vertices[1:] - base).T
    s, *_ = np.linalg.lstsq(D, point - base, rcond=None)
    weights = np.concatenate([[1.0 - s.sum()], s])
    if np.any(weights < -_FEASIBILITY_TOL):
        return False, np.inf
    return True, float(np.linalg.norm(base + D @ s - point))


def _exact_distance(point: np.ndarray, vertices: np.ndarray) -> float:
    best = np.inf
    for size in range(1, len(vertices) + 1):
        for face in combinations(range(len(vertices)), size):
            feasible, dist = _face_projection(vertices[list(face)], point)
            if feasible:
                best = min(best, dist)
    return best


def _projected_gradient_distance(point: np.ndarray, vertices: np.ndarray) -> float:
    V = vertices.T
    lipschitz = 2.0 * np.linalg.norm(V, 2) ** 2
    if lipschitz == 0.0:
        return float(np.linalg.norm(point - vertices[0]))
    step = 1.0 / lipschitz
    t = np.full(vertices.shape[0], 1.0 / vertices.shape[0])
    for _ in range(MAX_ITERATIONS):
        grad = 2.0 * V.T @ (V @ t - point)
        t_prev, t = t, project_to_simplex(t - step * grad)
        if np.linalg.norm(t - t_prev) <= STATIONARITY_TOL:
            break
    else:
        NULL_LOGGER.warn(f"hull distance: projected gradient not stationary after {MAX_ITERATIONS} steps, "
                         f"last move {np.linalg.norm(t - t_prev):.3e}")
    return float(np.linalg.norm(V @ t - point))


def distance_to_hull(point: np.ndarray, vertices: np.ndarray) -> float:
    """
    Euclidean distance from `point` to conv(rows of `vertices`).

    Args:
        point: (n,) query point.
        vertices: (L, n) hull generators, L >= 1.
    """
    point = np.asarray(point, dtype=float)
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    if vertices.shape[0] == 0:
        raise ValidationError("the hull needs at least one leader")
    if len(vertices) <= EXACT_LEADER_LIMIT:
        return _exact_distance(point, vertices)
    return _projected_gradient_distance(point, vertices)


def hull_residual(followers: np.ndarray, leaders: np.ndarray) -> np.ndarray:
    """Distance of every follower (rows) to the leaders' convex hull."""
    followers = np.atleast_2d(np.asarray(followers, dtype=float))
    return np.array([distance_to_hull(x, leaders) for x in followers])
