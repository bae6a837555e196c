"""Ego-centred bird's-eye-view rasters.

Two variants are rendered:

``chauffeurnet``
    Sparse binary channels: road boundaries, ego box, ego history polyline,
    then one channel per history snapshot holding all neighbor boxes.
``mtp``
    One RGB image with semantic colours, drawn in the order drivable area,
    boundaries, neighbors, ego (later layers overwrite earlier ones).

The ego sits at ``ego_anchor`` (column, row) with its heading pointing up
the image. Geometry outside the canvas is clipped.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage.draw import line as draw_line
from skimage.draw import polygon as draw_polygon

from .errors import ConfigurationError
from .data.tracks import SceneMap

# MTP colours (RGB in [0, 1])
BACKGROUND = (0.0, 0.0, 0.0)
DRIVABLE = (0.3, 0.3, 0.3)
BOUNDARY = (1.0, 1.0, 1.0)
NEIGHBOR = (0.0, 0.4, 1.0)
EGO = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class RasterConfig:
    variant: str = "chauffeurnet"
    width: int = 64
    height: int = 64
    meters_per_pixel: float = 0.5
    history_snapshots: int = 4
    ego_anchor: tuple | None = None  # (column, row); default centre column, 3/4 down

    def __post_init__(self):
        if self.variant not in ("chauffeurnet", "mtp"):
            raise ConfigurationError(f"unknown raster variant {self.variant!r}")
        if not self.meters_per_pixel > 0:
            raise ConfigurationError("meters_per_pixel must be positive")
        if self.width < 1 or self.height < 1 or self.history_snapshots < 1:
            raise ConfigurationError("raster sizes and snapshot count must be positive")

    @property
    def channels(self):
        return 3 + self.history_snapshots if self.variant == "chauffeurnet" else 3

    @property
    def anchor(self):
        if self.ego_anchor is not None:
            return tuple(float(a) for a in self.ego_anchor)
        return (self.width / 2.0, self.height * 0.75)

    @classmethod
    def full_scale(cls, variant="chauffeurnet"):
        """Full-size settings: 12-channel 360x240 or 3-channel 360x360."""
        if variant == "chauffeurnet":
            return cls("chauffeurnet", width=240, height=360, meters_per_pixel=0.2, history_snapshots=9)
        return cls("mtp", width=360, height=360, meters_per_pixel=0.1)


def ego_frame(scene, ego_pose):
    """Express world geometry in the ego frame (x forward, y left, meters).

    ``scene`` is an array of points (..., 2) or a :class:`SceneMap`;
    ``ego_pose`` is ``(x, y, theta)``.
    """
    x, y, th = (float(v) for v in ego_pose[:3])
    c, s = np.cos(th), np.sin(th)
    rot = np.array([[c, s], [-s, c]])  # R(-theta)

    def tf(p):
        p = np.asarray(p, dtype=float)
        return (p - np.array([x, y])) @ rot.T

    if isinstance(scene, SceneMap):
        return SceneMap([tf(p) for p in scene.boundaries], [tf(p) for p in scene.drivable])
    return tf(scene)


def _pixels(points, cfg: RasterConfig):
    """Ego-frame meters -> (rows, cols) float pixel coordinates."""
    ac, ar = cfg.anchor
    pts = np.asarray(points, dtype=float)
    return ar - pts[..., 0] / cfg.meters_per_pixel, ac - pts[..., 1] / cfg.meters_per_pixel


def _box_corners(cx, cy, heading, length, width):
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    return local @ np.array([[c, s], [-s, c]]) + np.array([cx, cy])


def _fill_polygon(canvas, poly_ego, cfg, value):
    rows, cols = _pixels(poly_ego, cfg)
    rr, cc = draw_polygon(rows, cols, shape=canvas.shape[-2:])
    canvas[..., rr, cc] = np.asarray(value).reshape(-1, 1) if canvas.ndim == 3 else value


def _draw_polyline(canvas, line_ego, cfg, value):
    rows, cols = _pixels(line_ego, cfg)
    H, W = canvas.shape[-2:]
    limit = 4 * (H + W)
    for r0, c0, r1, c1 in zip(rows[:-1], cols[:-1], rows[1:], cols[1:]):
        if r0 == r1 and c0 == c1:
            continue
        if max(r0, r1) < 0 or min(r0, r1) > H - 1 or max(c0, c1) < 0 or min(c0, c1) > W - 1:
            continue
        # keep the segment short before handing it to the line drawer
        r0c, c0c, r1c, c1c = _clip_segment(r0, c0, r1, c1, -limit, limit)
        rr, cc = draw_line(int(round(r0c)), int(round(c0c)), int(round(r1c)), int(round(c1c)))
        keep = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
        if canvas.ndim == 3:
            canvas[:, rr[keep], cc[keep]] = np.asarray(value).reshape(-1, 1)
        else:
            canvas[rr[keep], cc[keep]] = value


def _clip_segment(r0, c0, r1, c1, lo, hi):
    t0, t1 = 0.0, 1.0
    dr, dc = r1 - r0, c1 - c0
    for p, q in ((-dr, r0 - lo), (dr, hi - r0), (-dc, c0 - lo), (dc, hi - c0)):
        if p == 0:
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
    return r0 + t0 * dr, c0 + t0 * dc, r0 + t1 * dr, c0 + t1 * dc


def _pose(snippet, index):
    return snippet.states[index, :3]


def _neighbor_boxes(snippet, index, pose):
    boxes = []
    for s, (length, width) in zip(snippet.neighbor_states, snippet.neighbor_sizes):
        if not np.isfinite(s[index]).all():
            continue
        p = ego_frame(s[index, :2], pose)
        boxes.append(_box_corners(p[0], p[1], s[index, 2] - pose[2], length, width))
    return boxes


def snapshot_indices(t_index, T, count):
    """Window indices of the history snapshots, evenly spread over the last T steps."""
    if count == 1:
        return [t_index]
    return [t_index - T + int(round(j * T / (count - 1))) for j in range(count)]


def rasterize_chauffeurnet(snippet, t_index, cfg: RasterConfig):
    """Binary channels for the window index ``t_index`` (``snippet.T`` is the present)."""
    if cfg.variant != "chauffeurnet":
        raise ConfigurationError("rasterize_chauffeurnet needs a chauffeurnet config")
    out = np.zeros((cfg.channels, cfg.height, cfg.width))
    pose = _pose(snippet, t_index)
    if snippet.scene_map is not None:
        for line in ego_frame(snippet.scene_map, pose).boundaries:
            _draw_polyline(out[0], line, cfg, 1.0)
    _fill_polygon(out[1], _box_corners(0.0, 0.0, 0.0, snippet.length, snippet.width), cfg, 1.0)
    history = snippet.states[max(0, t_index - snippet.T):t_index + 1, :2]
    _draw_polyline(out[2], ego_frame(history, pose), cfg, 1.0)
    for ch, idx in enumerate(snapshot_indices(t_index, snippet.T, cfg.history_snapshots)):
        for box in _neighbor_boxes(snippet, idx, pose):
            _fill_polygon(out[3 + ch], box, cfg, 1.0)
    return out


def rasterize_mtp(snippet, t_index, cfg: RasterConfig):
    """RGB image with the colour constants defined in this module."""
    if cfg.variant != "mtp":
        raise ConfigurationError("rasterize_mtp needs an mtp config")
    out = np.empty((3, cfg.height, cfg.width))
    out[:] = np.asarray(BACKGROUND).reshape(3, 1, 1)
    pose = _pose(snippet, t_index)
    if snippet.scene_map is not None:
        local = ego_frame(snippet.scene_map, pose)
        for poly in local.drivable:
            _fill_polygon(out, poly, cfg, DRIVABLE)
        for line in local.boundaries:
            _draw_polyline(out, line, cfg, BOUNDARY)
    for box in _neighbor_boxes(snippet, t_index, pose):
        _fill_polygon(out, box, cfg, NEIGHBOR)
    if snippet.length > 0 and snippet.width > 0:
        _fill_polygon(out, _box_corners(0.0, 0.0, 0.0, snippet.length, snippet.width), cfg, EGO)
    return out


def rasterize(snippet, t_index, cfg: RasterConfig):
    if cfg.variant == "chauffeurnet":
        return rasterize_chauffeurnet(snippet, t_index, cfg)
    return rasterize_mtp(snippet, t_index, cfg)


def _ray_distances(scene_local: SceneMap | None, n_rays, max_range):
    dist = np.full(n_rays, max_range)
    if scene_local is None or not scene_local.boundaries:
        return dist
    segs = np.concatenate([np.stack([p[:-1], p[1:]], axis=1) for p in scene_local.boundaries])
    a, b = segs[:, 0], segs[:, 1]
    e = b - a
    for k, ang in enumerate(np.linspace(-np.pi, np.pi, n_rays, endpoint=False)):
        d = np.array([np.cos(ang), np.sin(ang)])
        den = d[0] * e[:, 1] - d[1] * e[:, 0]
        ok = np.abs(den) > 1e-12
        den = np.where(ok, den, 1.0)
        t = (a[:, 0] * e[:, 1] - a[:, 1] * e[:, 0]) / den        # distance along ray
        u = (a[:, 0] * d[1] - a[:, 1] * d[0]) / den              # position along segment
        hit = ok & (t >= 0) & (u >= 0) & (u <= 1)
        if hit.any():
            dist[k] = min(max_range, t[hit].min())
    return dist


def feature_vector_context(snippet, t_index, k_neighbors: int = 4, n_rays: int = 8, max_range: float = 30.0):
    """Raster-free context: a small hand-packed summary of the ego's surroundings.

    Layout: ego speed, ego heading change and displacement over the last T
    steps, then ``k_neighbors`` x (present flag, x, y, relative heading, speed)
    for the nearest neighbors, then ``n_rays`` boundary distances. Lengths are
    divided by ``max_range``, speeds by 10 m/s.
    """
    pose = _pose(snippet, t_index)
    start = snippet.states[max(0, t_index - snippet.T)]
    disp = ego_frame(start[:2], pose)
    feats = [snippet.states[t_index, 3] / 10.0,
             float(np.angle(np.exp(1j * (pose[2] - start[2])))),
             disp[0] / max_range, disp[1] / max_range]
    nb = []
    for s in snippet.neighbor_states:
        if np.isfinite(s[t_index]).all():
            p = ego_frame(s[t_index, :2], pose)
            nb.append((np.hypot(*p), p, s[t_index, 2] - pose[2], s[t_index, 3]))
    nb.sort(key=lambda item: item[0])
    for k in range(k_neighbors):
        if k < len(nb) and nb[k][0] <= max_range:
            _, p, dth, v = nb[k]
            feats += [1.0, p[0] / max_range, p[1] / max_range, float(np.angle(np.exp(1j * dth))), v / 10.0]
        else:
            feats += [0.0] * 5
    local = ego_frame(snippet.scene_map, pose) if snippet.scene_map is not None else None
    feats += list(_ray_distances(local, n_rays, max_range) / max_range)
    return np.array(feats)


def feature_vector_size(k_neighbors: int = 4, n_rays: int = 8):
    return 4 + 5 * k_neighbors + n_rays


def save_png(context, path, variant: str):
    """Write a context tensor as PNG: one file per channel for chauffeurnet, RGB for mtp.

    Returns the list of written paths.
    """
    from PIL import Image

    path = Path(path)
    img = np.clip(np.rint(np.asarray(context) * 255), 0, 255).astype(np.uint8)
    if variant == "mtp":
        Image.fromarray(np.transpose(img, (1, 2, 0)), mode="RGB").save(path)
        return [path]
    written = []
    for k, ch in enumerate(img):
        p = path.with_name(f"{path.stem}_ch{k:02d}{path.suffix or '.png'}")
        Image.fromarray(ch, mode="L").save(p)
        written.append(p)
    return written
