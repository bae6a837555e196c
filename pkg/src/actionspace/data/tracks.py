"""Drone-recorded track tables in the inD/rounD column layout."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ContractError, DataError, SchemaError
from ..kinematics import State, wrap_angle

REQUIRED_COLUMNS = ("recordingId", "trackId", "frame", "xCenter", "yCenter",
                    "heading", "xVelocity", "yVelocity")

AGENT_CLASSES = ("car", "truck_bus", "motorcycle", "other")
EXCLUDED_CLASSES = {"pedestrian", "bicycle", "cyclist"}
_CLASS_ALIASES = {
    "car": "car", "van": "car",
    "truck": "truck_bus", "bus": "truck_bus", "truck_bus": "truck_bus", "trailer": "truck_bus",
    "motorcycle": "motorcycle",
}


def normalize_class(name: str) -> str | None:
    """Map a dataset class label onto the supported set; None if excluded."""
    key = str(name).strip().lower()
    if key in EXCLUDED_CLASSES:
        return None
    return _CLASS_ALIASES.get(key, "other")


@dataclass
class Track:
    recording_id: str
    track_id: int
    agent_class: str
    times: np.ndarray          # (n,)
    states: np.ndarray         # (n, 4) x, y, theta, v
    length: float = 4.5
    width: float = 1.8

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 4)
        if len(self.times) != len(self.states):
            raise DataError(f"track {self.track_id}: {len(self.times)} times but {len(self.states)} states")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise DataError(f"track {self.track_id}: timestamps not strictly increasing")
        if self.agent_class not in AGENT_CLASSES:
            raise DataError(f"track {self.track_id}: unsupported agent class {self.agent_class!r}")

    def __len__(self):
        return len(self.times)

    @property
    def samples(self):
        return [(float(t), State.from_array(s)) for t, s in zip(self.times, self.states)]

    @property
    def duration(self):
        return float(self.times[-1] - self.times[0]) if len(self.times) else 0.0

    @property
    def spacing(self):
        return float(np.median(np.diff(self.times))) if len(self.times) > 1 else float("nan")


@dataclass
class SceneMap:
    """Road boundary polylines and drivable-area polygons, in meters."""

    boundaries: list = field(default_factory=list)
    drivable: list = field(default_factory=list)

    def __post_init__(self):
        self.boundaries = [np.asarray(p, dtype=float).reshape(-1, 2) for p in self.boundaries]
        self.drivable = [np.asarray(p, dtype=float).reshape(-1, 2) for p in self.drivable]
        for kind, items, least in (("boundary", self.boundaries, 2), ("drivable area", self.drivable, 3)):
            for i, p in enumerate(items):
                if len(p) < least:
                    raise DataError(f"{kind} {i} has {len(p)} points, needs at least {least}")
                if not np.isfinite(p).all():
                    raise DataError(f"{kind} {i} has non-finite coordinates")

    def to_json(self):
        return {"boundaries": [p.tolist() for p in self.boundaries],
                "drivable": [p.tolist() for p in self.drivable]}

    @classmethod
    def from_json(cls, obj):
        return cls(obj.get("boundaries", []), obj.get("drivable", []))


def load_scene_map(path) -> SceneMap:
    return SceneMap.from_json(json.loads(Path(path).read_text()))


def save_scene_map(scene_map: SceneMap, path):
    Path(path).write_text(json.dumps(scene_map.to_json()))


def _load_meta(meta_file):
    meta = json.loads(Path(meta_file).read_text())
    recordings = meta.get("recordings", meta)
    return {str(rid): info for rid, info in recordings.items()}


def load_tracks(track_file, meta_file) -> list[Track]:
    """Read a track CSV plus a JSON meta file.

    The meta file maps recording ids to ``frame_rate`` and per-track
    ``class``/``length``/``width``::

        {"recordings": {"00": {"frame_rate": 25,
                               "tracks": {"1": {"class": "car", "length": 4.6, "width": 1.9}}}}}

    Headings are read in degrees. Pedestrians and cyclists are dropped.
    """
    meta = _load_meta(meta_file)
    with open(track_file, newline="") as fh:
        reader = csv.DictReader(fh)
        columns = reader.fieldnames or []
        for col in REQUIRED_COLUMNS:
            if col not in columns:
                raise SchemaError(f"missing column {col!r}", column=col)
        groups: dict = {}
        for row in reader:
            key = (str(row["recordingId"]).strip(), int(row["trackId"]))
            groups.setdefault(key, []).append(row)

    tracks = []
    for (rid, tid), rows in groups.items():
        rec = meta.get(rid)
        if rec is None:
            raise DataError(f"recording {rid!r} missing from meta file")
        info = rec.get("tracks", {}).get(str(tid), {})
        cls = normalize_class(info.get("class", "car"))
        if cls is None:
            continue
        frames = np.array([int(r["frame"]) for r in rows])
        if np.any(np.diff(frames) <= 0):
            raise DataError(f"recording {rid} track {tid}: frames not strictly increasing")
        cols = {c: np.array([float(r[c]) for r in rows]) for c in REQUIRED_COLUMNS[3:]}
        v = np.hypot(cols["xVelocity"], cols["yVelocity"])
        theta = wrap_angle(np.deg2rad(cols["heading"]))
        states = np.stack([cols["xCenter"], cols["yCenter"], theta, v], axis=1)
        length = info.get("length", float(rows[0]["length"]) if rows[0].get("length") else 4.5)
        width = info.get("width", float(rows[0]["width"]) if rows[0].get("width") else 1.8)
        tracks.append(Track(rid, tid, cls, frames / float(rec["frame_rate"]), states,
                            float(length), float(width)))
    return tracks


def write_tracks(tracks, track_file, meta_file, frame_rates: dict | None = None):
    """Write tracks in the layout read by :func:`load_tracks`.

    ``frame_rates`` maps recording ids to frame rates; by default each
    recording uses the inverse of its first track's sample spacing.
    """
    frame_rates = dict(frame_rates or {})
    meta: dict = {}
    for t in tracks:
        if t.recording_id not in frame_rates:
            frame_rates[t.recording_id] = 1.0 / t.spacing
        rec = meta.setdefault(t.recording_id, {"frame_rate": frame_rates[t.recording_id], "tracks": {}})
        rec["tracks"][str(t.track_id)] = {"class": t.agent_class, "length": t.length, "width": t.width}
    with open(track_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(REQUIRED_COLUMNS) + ["width", "length"])
        for t in tracks:
            fr = frame_rates[t.recording_id]
            frames = np.rint(t.times * fr).astype(int)
            for f, (x, y, th, v) in zip(frames, t.states):
                w.writerow([t.recording_id, t.track_id, int(f), repr(float(x)), repr(float(y)),
                            repr(float(np.rad2deg(th))), repr(float(v * np.cos(th))),
                            repr(float(v * np.sin(th))), t.width, t.length])
    Path(meta_file).write_text(json.dumps({"recordings": meta}, indent=1, sort_keys=True))


def interpolate_states(track: Track, times) -> np.ndarray:
    """Linear interpolation of x, y, v and shortest-arc interpolation of theta.

    Times outside the track's span yield NaN rows.
    """
    times = np.asarray(times, dtype=float)
    if len(track) < 2:
        raise DataError(f"track {track.track_id}: need at least two samples to interpolate")
    s = track.states
    theta = np.unwrap(s[:, 2])
    out = np.stack([
        np.interp(times, track.times, s[:, 0]),
        np.interp(times, track.times, s[:, 1]),
        wrap_angle(np.interp(times, track.times, theta)),
        np.interp(times, track.times, s[:, 3]),
    ], axis=-1)
    outside = (times < track.times[0] - 1e-9) | (times > track.times[-1] + 1e-9)
    out[outside] = np.nan
    return out


def resample(track: Track, dt: float) -> Track:
    """Resample onto a uniform grid of spacing ``dt`` starting at the first sample."""
    if len(track) < 2:
        raise DataError(f"track {track.track_id}: need at least two samples to resample")
    diffs = np.diff(track.times)
    native = float(diffs.min())
    if dt < native - 1e-9:
        raise ContractError(f"dt={dt} is finer than the native spacing {native}")
    if np.all(np.abs(diffs - dt) < 1e-9):
        return replace(track, times=track.times.copy(), states=track.states.copy())
    n = int(np.floor(track.duration / dt + 1e-9)) + 1
    times = track.times[0] + dt * np.arange(n)
    return replace(track, times=times, states=interpolate_states(track, times))
