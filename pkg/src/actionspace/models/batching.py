"""Turning snippets into arrays: ego-frame states, contexts and per-sample geometry."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kinematics import wrap_angle
from ..raster import feature_vector_context, rasterize
from .config import ModelConfig


def to_ego(states, pose):
    """States (..., 4) in the world frame -> frame with ``pose`` (x, y, theta) at the origin facing +x."""
    states = np.asarray(states, dtype=float)
    c, s = np.cos(pose[2]), np.sin(pose[2])
    dx, dy = states[..., 0] - pose[0], states[..., 1] - pose[1]
    return np.stack([c * dx + s * dy, -s * dx + c * dy, wrap_angle(states[..., 2] - pose[2]), states[..., 3]], axis=-1)


def positions_to_world(positions, pose):
    """Inverse of the positional part of :func:`to_ego`; ``pose`` broadcast over leading axes."""
    positions = np.asarray(positions, dtype=float)
    pose = np.asarray(pose, dtype=float)
    c, s = np.cos(pose[..., 2]), np.sin(pose[..., 2])
    x, y = positions[..., 0], positions[..., 1]
    return np.stack([c * x - s * y + pose[..., 0], s * x + c * y + pose[..., 1]], axis=-1)


@dataclass
class BatchGeometry:
    """Per-sample axle distances shaped (B, 1) so they broadcast over modes."""

    l_f: np.ndarray
    l_r: np.ndarray

    @property
    def wheelbase(self):
        return self.l_f + self.l_r


@dataclass
class Batch:
    snippets: list
    contexts: list            # contexts[k]: observation at the end of interval k, (B, *shape)
    past_actions: np.ndarray  # (B, T, 2) physical
    past_states: np.ndarray   # (B, T + 1, 4) ego frame
    future_states: np.ndarray  # (B, segments * T, 4) ego frame
    future_actions: np.ndarray  # (B, segments * T, 2)
    poses: np.ndarray         # (B, 3) world pose at the present
    geometry: BatchGeometry

    def __len__(self):
        return len(self.snippets)

    @property
    def s0(self):
        return self.past_states[:, -1]


class ContextCache:
    """Memoised context rendering keyed by (snippet key, time index)."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.raster_cfg = cfg.raster
        self._store = {}

    def get(self, snippet, t_index):
        key = (snippet.key, t_index)
        if key not in self._store:
            if self.cfg.encoder == "tiny_conv":
                self._store[key] = rasterize(snippet, t_index, self.raster_cfg)
            else:
                self._store[key] = feature_vector_context(snippet, t_index)
        return self._store[key]

    def __len__(self):
        return len(self._store)


def make_batch(snippets, cfg: ModelConfig, cache: ContextCache | None = None, intervals: int = 1,
               segments: int | None = None) -> Batch:
    """Stack snippets; ``intervals`` contexts are rendered (at the end of tau0, tau1, ...)."""
    cache = cache or ContextCache(cfg)
    T = cfg.T
    segments = segments or cfg.segments
    poses, past_s, fut_s, past_a, fut_a, lf, lr = [], [], [], [], [], [], []
    contexts = [[] for _ in range(intervals)]
    for sn in snippets:
        pose = sn.states[T, :3]
        poses.append(pose)
        ego = to_ego(sn.states, pose)
        past_s.append(ego[:T + 1])
        fut_s.append(ego[T + 1:(1 + segments) * T + 1])
        past_a.append(sn.actions[:T])
        fut_a.append(sn.actions[T:(1 + segments) * T])
        lf.append(sn.geometry.l_f)
        lr.append(sn.geometry.l_r)
        for k in range(intervals):
            contexts[k].append(cache.get(sn, T * (k + 1)))
    shape = (0,) + tuple(cfg.context_shape)
    return Batch(
        list(snippets),
        [np.stack(c) if c else np.zeros(shape) for c in contexts],
        np.array(past_a).reshape(-1, T, 2),
        np.array(past_s).reshape(-1, T + 1, 4),
        np.array(fut_s).reshape(-1, segments * T, 4),
        np.array(fut_a).reshape(-1, segments * T, 2),
        np.array(poses).reshape(-1, 3),
        BatchGeometry(np.array(lf, dtype=float).reshape(-1, 1), np.array(lr, dtype=float).reshape(-1, 1)),
    )
