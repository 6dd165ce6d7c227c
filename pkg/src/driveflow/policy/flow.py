"""Flow-matching plumbing: the interpolation path, the shifted-normal time
sampler, sparse layer selection, and the Euler sampler."""

from __future__ import annotations

import math

import numpy as np

from driveflow.nnkit import add, scale, value_of


def sample_tau(rng: np.random.Generator, shift: float = 0.0) -> float:
    """Flow time drawn as sigmoid(z + shift), z ~ N(0, 1); always in (0, 1)."""
    z = rng.standard_normal() + shift
    return 1.0 / (1.0 + math.exp(-z))


def fm_interpolate(tape, a, a_his, tau: float):
    """Displacement-path interpolation tau * a + (1 - tau) * a_his."""
    av, hv = value_of(a), value_of(a_his)
    if av.shape != hv.shape:
        raise ValueError(f"shape mismatch {av.shape} vs {hv.shape}")
    return add(tape, scale(tape, a, tau), scale(tape, a_his, 1.0 - tau))


def select_sparse_layers(n_layers: int, interval: int) -> list:
    """0-based encoder layer indices {interval-1, 2*interval-1, ...} with the
    final layer always included; sorted and deduplicated."""
    if not 1 <= interval <= n_layers:
        raise ValueError(f"interval {interval} out of range for {n_layers} layers")
    idx = set(range(interval - 1, n_layers, interval))
    idx.add(n_layers - 1)
    return sorted(idx)


def euler_flow(field_fn, a0: np.ndarray, steps: int):
    """Integrate da/dtau = field(a, tau) from tau=0 to 1 with fixed-step Euler.

    Returns None when an intermediate state goes non-finite (an aborted,
    invalid plan)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    a = np.array(a0, dtype=np.float64, copy=True)
    d_tau = 1.0 / steps
    for k in range(steps):
        v = field_fn(a, k / steps)
        a = a + d_tau * v
        if not np.all(np.isfinite(a)):
            return None
    return a


def time_features(tau: float, n_freq: int = 8) -> np.ndarray:
    """Sinusoidal embedding of the flow time (geometric frequency ladder)."""
    freqs = 2.0 ** np.arange(n_freq)
    ang = tau * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def waypoint_positions(t_f: int, width: int) -> np.ndarray:
    """Fixed sinusoidal position table over the future-waypoint axis."""
    pos = np.arange(t_f)[:, None]
    i = np.arange(width)[None, :]
    denom = 10_000.0 ** (2 * (i // 2) / width)
    table = pos / denom
    out = np.empty((t_f, width))
    out[:, 0::2] = np.sin(table[:, 0::2])
    out[:, 1::2] = np.cos(table[:, 1::2])
    return out
