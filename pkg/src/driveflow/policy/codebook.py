"""Motion-primitive codebook: k-means over half-second displacement segments.

Each primitive is a (dx, dy, dheading) displacement expressed in the frame of
the segment start. Trajectories tokenize segment-by-segment to the nearest
centroid and detokenize by chaining centroids forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from driveflow.microworld.world import Trajectory, wrap_angle


@dataclass
class ActionCodebook:
    centroids: np.ndarray  # (k, 3): dx, dy, dheading per 0.5 s segment
    seed: int
    heading_weight: float = 2.0

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.shape[0] < 2:
            raise ValueError("codebook needs at least 2 primitives")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("non-finite centroid")
        norms = np.linalg.norm(self.centroids, axis=1)
        if norms.min() > 0:
            raise ValueError("codebook must contain the exact zero-motion primitive")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def nearest(self, segments: np.ndarray) -> np.ndarray:
        return _nearest_centroid(segments, self.centroids, self.heading_weight)


def _scaled(points: np.ndarray, heading_weight: float) -> np.ndarray:
    out = points.copy()
    out[:, 2] *= heading_weight
    return out


def _nearest_centroid(points, centroids, heading_weight) -> np.ndarray:
    p = _scaled(np.atleast_2d(points), heading_weight)
    c = _scaled(centroids, heading_weight)
    d2 = ((p[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def fit_codebook(
    motions,
    k: int,
    seed: int,
    heading_weight: float = 2.0,
    iters: int = 60,
) -> ActionCodebook:
    """Lloyd's k-means with seeded farthest-point-flavoured init; the centroid
    closest to rest is snapped to the exact zero motion afterwards."""
    motions = np.asarray(motions, dtype=np.float64)
    if motions.ndim != 2 or motions.shape[1] != 3:
        raise ValueError(f"motions must be (n, 3), got {motions.shape}")
    distinct = np.unique(motions, axis=0)
    if distinct.shape[0] < k:
        raise ValueError(f"need at least {k} distinct motions, got {distinct.shape[0]}")

    rng = np.random.default_rng(seed)
    scaled = _scaled(motions, heading_weight)
    # k-means++ style seeding
    centers = [scaled[rng.integers(len(scaled))]]
    for _ in range(k - 1):
        d2 = np.min(
            ((scaled[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(axis=2),
            axis=1,
        )
        total = d2.sum()
        if total <= 0:
            centers.append(scaled[rng.integers(len(scaled))])
            continue
        centers.append(scaled[rng.choice(len(scaled), p=d2 / total)])
    centers = np.asarray(centers)

    for _ in range(iters):
        d2 = ((scaled[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = scaled[assign == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
        if np.allclose(new_centers, centers, atol=1e-12):
            centers = new_centers
            break
        centers = new_centers

    centroids = centers.copy()
    centroids[:, 2] /= heading_weight
    zero_idx = int(np.linalg.norm(centroids, axis=1).argmin())
    centroids[zero_idx] = 0.0
    return ActionCodebook(centroids=centroids, seed=int(seed), heading_weight=heading_weight)


def segments_of(traj: Trajectory) -> np.ndarray:
    """Per-segment (dx, dy, dheading) in the frame of each segment start."""
    wp = traj.waypoints
    if wp.shape[0] < 2:
        raise ValueError("need at least 2 waypoints to segment")
    out = np.empty((wp.shape[0] - 1, 3))
    for i in range(wp.shape[0] - 1):
        x0, y0, h0 = wp[i]
        x1, y1, h1 = wp[i + 1]
        c, s = math.cos(-h0), math.sin(-h0)
        dx, dy = x1 - x0, y1 - y0
        out[i, 0] = c * dx - s * dy
        out[i, 1] = s * dx + c * dy
        out[i, 2] = wrap_angle(h1 - h0)
    return out


def tokenize(traj: Trajectory, codebook: ActionCodebook) -> list:
    """Map each half-second segment to its nearest primitive index."""
    return [int(i) for i in codebook.nearest(segments_of(traj))]


def detokenize(
    tokens,
    codebook: ActionCodebook,
    start_pose=(0.0, 0.0, 0.0),
    dt: float = 0.5,
    t0: int = 0,
) -> Trajectory:
    """Chain primitives forward from a start pose; the returned trajectory
    includes the start pose as its first waypoint."""
    x, y, h = (float(v) for v in start_pose)
    wp = np.empty((len(tokens) + 1, 3))
    wp[0] = (x, y, h)
    for i, tok in enumerate(tokens):
        dx, dy, dh = codebook.centroids[int(tok)]
        c, s = math.cos(h), math.sin(h)
        x += c * dx - s * dy
        y += s * dx + c * dy
        h = wrap_angle(h + dh)
        wp[i + 1] = (x, y, h)
    return Trajectory(wp, dt=dt, t0=t0)


def coverage_motions(rng: np.random.Generator, n: int, dt: float = 0.5) -> np.ndarray:
    """Synthetic single-step motions spanning the reachable envelope, used to
    pad the k-means fit beyond the segments harvested from references."""
    speeds = rng.uniform(0.0, 12.0, size=n)
    yaw_rates = rng.uniform(-0.5, 0.5, size=n)
    out = np.empty((n, 3))
    out[:, 0] = speeds * dt
    out[:, 1] = 0.0
    out[:, 2] = yaw_rates * dt
    # a stationary motion is always present so the zero primitive has support
    out[0] = 0.0
    return out
