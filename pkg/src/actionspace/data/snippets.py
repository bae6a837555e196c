"""Snippet extraction: aligned past/future windows for one ego agent."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ContractError, DataError
from ..kinematics import DEFAULT_DT, DEFAULT_STEPS, VehicleGeometry, inverse_array, rollout_array, wrap_angle
from ..numeric.checkpoint import read_container, write_container
from .tracks import AGENT_CLASSES, SceneMap, Track, interpolate_states, resample

log = logging.getLogger(__name__)

CLASS_GEOMETRY = {cls: VehicleGeometry() for cls in AGENT_CLASSES}

CACHE_MAGIC = b"ASPSNIP\0"
CACHE_VERSION = 1


@dataclass
class Snippet:
    """Window of ``(1 + segments) * T + 1`` states around the present time ``t0``.

    Index ``T`` of ``states`` is the present. ``actions[k]`` carries
    ``states[k]`` to ``states[k + 1]``. Neighbor states are NaN where the
    neighbor is not tracked.
    """

    recording_id: str
    track_id: int
    agent_class: str
    t0: float
    dt: float
    T: int
    segments: int
    states: np.ndarray
    actions: np.ndarray
    length: float
    width: float
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)
    neighbor_ids: list = field(default_factory=list)
    neighbor_states: np.ndarray = None
    neighbor_sizes: np.ndarray = None
    scene_map: SceneMap | None = None

    def __post_init__(self):
        L = (1 + self.segments) * self.T + 1
        if self.states.shape != (L, 4) or self.actions.shape != (L - 1, 2):
            raise DataError(f"snippet arrays have shapes {self.states.shape}, {self.actions.shape}; expected ({L}, 4)")
        if self.neighbor_states is None:
            self.neighbor_states = np.zeros((0, L, 4))
            self.neighbor_sizes = np.zeros((0, 2))

    @property
    def key(self):
        return (self.recording_id, self.track_id, round(self.t0, 6))

    @property
    def times(self):
        return self.t0 + self.dt * (np.arange(len(self.states)) - self.T)

    @property
    def past_states(self):
        return self.states[:self.T + 1]

    @property
    def past_actions(self):
        return self.actions[:self.T]

    @property
    def current_state(self):
        return self.states[self.T]

    def future_states(self, segment: int = 1):
        T = self.T
        return self.states[segment * T + 1:(segment + 1) * T + 1]

    def future_actions(self, segment: int = 1):
        T = self.T
        return self.actions[segment * T:(segment + 1) * T]

    @property
    def future_states_1(self):
        return self.future_states(1)

    @property
    def future_actions_1(self):
        return self.future_actions(1)

    @property
    def future_states_2(self):
        return self.future_states(2) if self.segments >= 2 else None

    @property
    def future_actions_2(self):
        return self.future_actions(2) if self.segments >= 2 else None


def derive_actions(track: Track, g: VehicleGeometry | None = None, speed: str = "start"):
    """Actions between consecutive samples and a per-step infeasible-turn flag."""
    g = g or CLASS_GEOMETRY[track.agent_class]
    actions, flags = inverse_array(track.states, g, track.spacing, speed)
    return actions, flags


def _geometry_for(cls, geometry):
    if geometry is None:
        return CLASS_GEOMETRY[cls]
    if isinstance(geometry, VehicleGeometry):
        return geometry
    return geometry.get(cls, CLASS_GEOMETRY[cls])


def _map_for(rid, maps):
    if maps is None or isinstance(maps, SceneMap):
        return maps
    return maps.get(rid)


def consistency_error(states, actions, g, dt):
    """Max heading/speed and position deviation of ``rollout(actions)`` from ``states``."""
    rolled = rollout_array(states[0], actions, g, dt)
    ref = states[1:]
    dyn = max(np.abs(wrap_angle(rolled[:, 2] - ref[:, 2])).max(), np.abs(rolled[:, 3] - ref[:, 3]).max())
    pos = np.hypot(rolled[:, 0] - ref[:, 0], rolled[:, 1] - ref[:, 1]).max()
    return float(dyn), float(pos)


def extract_snippets(tracks, segments: int = 1, spacing: float = 0.6, dt: float = DEFAULT_DT,
                     T: int = DEFAULT_STEPS, geometry=None, maps=None, position_tol: float = 1.0,
                     report: dict | None = None) -> list[Snippet]:
    """Cut past/future windows anchored every ``spacing`` seconds along each track.

    Tracks are resampled to ``dt``. Windows whose derived actions contain an
    infeasible turn are dropped, as are windows where rolling out the derived
    past actions misses the recorded heading/speed by more than 1e-6 or the
    positions by more than ``position_tol`` meters. Drop counts are written to
    ``report`` when given.
    """
    if spacing <= 0:
        raise ContractError("spacing must be positive")
    if segments not in (1, 2):
        raise ContractError(f"segments must be 1 or 2, got {segments}")
    stride = int(round(spacing / dt))
    if stride < 1 or abs(stride * dt - spacing) > 1e-9:
        raise ContractError(f"spacing {spacing} is not a multiple of dt {dt}")

    by_recording: dict = {}
    for t in tracks:
        by_recording.setdefault(t.recording_id, []).append(t)

    counts = {"snippets": 0, "dropped_infeasible": 0, "dropped_inconsistent": 0, "short_tracks": 0}
    snippets = []
    for rid in sorted(by_recording):
        group = sorted(by_recording[rid], key=lambda t: t.track_id)
        scene = _map_for(rid, maps)
        for track in group:
            if len(track) < 2:
                counts["short_tracks"] += 1
                continue
            rs = track if np.all(np.abs(np.diff(track.times) - dt) < 1e-9) else resample(track, dt)
            n = len(rs)
            if n < (1 + segments) * T + 1:
                counts["short_tracks"] += 1
                continue
            g = _geometry_for(track.agent_class, geometry)
            actions, flags = inverse_array(rs.states, g, dt)
            for i0 in range(T, n - segments * T, stride):
                lo, hi = i0 - T, i0 + segments * T
                if flags[lo:hi].any():
                    counts["dropped_infeasible"] += 1
                    continue
                dyn, pos = consistency_error(rs.states[lo:i0 + 1], actions[lo:i0], g, dt)
                if dyn > 1e-6 or pos > position_tol:
                    counts["dropped_inconsistent"] += 1
                    continue
                t0 = float(rs.times[i0])
                window_times = rs.times[lo:hi + 1]
                nb_ids, nb_states, nb_sizes = [], [], []
                for other in group:
                    if other is track or len(other) < 2:
                        continue
                    if other.times[-1] < window_times[0] or other.times[0] > window_times[-1]:
                        continue
                    s = interpolate_states(other, window_times)
                    if np.isfinite(s[:, 0]).any():
                        nb_ids.append(other.track_id)
                        nb_states.append(s)
                        nb_sizes.append((other.length, other.width))
                L = hi - lo + 1
                snippets.append(Snippet(
                    rid, track.track_id, track.agent_class, t0, dt, T, segments,
                    rs.states[lo:hi + 1].copy(), actions[lo:hi].copy(), track.length, track.width, g,
                    nb_ids,
                    np.array(nb_states).reshape(-1, L, 4),
                    np.array(nb_sizes, dtype=float).reshape(-1, 2),
                    scene,
                ))
    counts["snippets"] = len(snippets)
    if counts["dropped_infeasible"] or counts["dropped_inconsistent"]:
        log.info("dropped %d infeasible and %d inconsistent windows",
                 counts["dropped_infeasible"], counts["dropped_inconsistent"])
    if report is not None:
        report.update(counts)
    return snippets


def split_recordings(recordings, ratios=(8, 1, 1), seed: int | None = 0):
    """Partition recording ids 8:1:1 by largest-remainder apportionment.

    Validation and test each receive at least one recording. The sorted ids
    are permuted with ``seed`` (``None`` keeps sorted order) and assigned in
    order: the first block to train, then validation, then test.
    """
    ids = sorted(set(recordings))
    if seed is not None:
        ids = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
    n = len(ids)
    if n < 3:
        raise ConfigurationError(f"need at least 3 recordings to split, got {n}")
    total = sum(ratios)
    quotas = [n * r / total for r in ratios]
    sizes = [int(np.floor(q)) for q in quotas]
    order = sorted(range(3), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:n - sum(sizes)]:
        sizes[i] += 1
    for i in (1, 2):
        if sizes[i] == 0:
            sizes[i] = 1
            sizes[0] -= 1
    a, b = sizes[0], sizes[0] + sizes[1]
    return sorted(ids[:a]), sorted(ids[a:b]), sorted(ids[b:])


def split_snippets(snippets, split):
    """Group snippets by the (train, val, test) recording partition."""
    members = [set(part) for part in split]
    return tuple([s for s in snippets if s.recording_id in m] for m in members)


# ------------------------------------------------------------------ cache

def save_snippet_cache(path, snippets, extra: dict | None = None):
    """Pack snippets into a versioned binary container.

    Header: dt, T, segments, per-snippet metadata (ids, t0, sizes, geometry),
    the distinct scene maps; body: stacked ego and neighbor arrays.
    """
    if not snippets:
        raise DataError("refusing to write an empty snippet cache")
    first = snippets[0]
    maps, map_index = [], {}
    meta = []
    for s in snippets:
        if (s.dt, s.T, s.segments) != (first.dt, first.T, first.segments):
            raise DataError("snippets in one cache must share dt, T and segments")
        mi = None
        if s.scene_map is not None:
            if id(s.scene_map) not in map_index:
                map_index[id(s.scene_map)] = len(maps)
                maps.append(s.scene_map.to_json())
            mi = map_index[id(s.scene_map)]
        meta.append({"recording_id": s.recording_id, "track_id": s.track_id, "agent_class": s.agent_class,
                     "t0": s.t0, "length": s.length, "width": s.width,
                     "geometry": [s.geometry.l_f, s.geometry.l_r],
                     "neighbor_ids": list(s.neighbor_ids), "map": mi})
    header = {"format_version": CACHE_VERSION, "dt": first.dt, "T": first.T, "segments": first.segments,
              "snippets": meta, "maps": maps, "extra": extra or {}}
    L = len(first.states)
    arrays = {
        "states": np.stack([s.states for s in snippets]),
        "actions": np.stack([s.actions for s in snippets]),
        "neighbor_states": np.concatenate([s.neighbor_states for s in snippets]).reshape(-1, L, 4),
        "neighbor_sizes": np.concatenate([s.neighbor_sizes for s in snippets]).reshape(-1, 2),
    }
    return write_container(path, CACHE_MAGIC, header, arrays)


def load_snippet_cache(path):
    """Returns ``(snippets, header)``."""
    arrays, header = read_container(path, CACHE_MAGIC, CACHE_VERSION)
    maps = [SceneMap.from_json(m) for m in header["maps"]]
    snippets, k = [], 0
    for i, m in enumerate(header["snippets"]):
        nk = len(m["neighbor_ids"])
        snippets.append(Snippet(
            m["recording_id"], m["track_id"], m["agent_class"], m["t0"], header["dt"], header["T"],
            header["segments"], arrays["states"][i], arrays["actions"][i], m["length"], m["width"],
            VehicleGeometry(*m["geometry"]), list(m["neighbor_ids"]),
            arrays["neighbor_states"][k:k + nk], arrays["neighbor_sizes"][k:k + nk],
            maps[m["map"]] if m["map"] is not None else None,
        ))
        k += nk
    return snippets, header
