import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actionspace.data import SceneMap, Snippet, extract_snippets, synth_dataset
from actionspace.errors import ConfigurationError
from actionspace.kinematics import VehicleGeometry
from actionspace.raster import (EGO, NEIGHBOR, RasterConfig, ego_frame, feature_vector_context,
                                feature_vector_size, rasterize, rasterize_chauffeurnet, rasterize_mtp, save_png)

T = 10


def make_snippet(v=0.0, theta=0.0, offset=(0.0, 0.0), neighbor=None, scene_map=None, length=4.5, width=1.8):
    """Ego moving at constant ``v``; ``neighbor`` is a fixed (x, y, theta) relative to the present pose origin."""
    L = 2 * T + 1
    t = (np.arange(L) - T) * 0.3
    ox, oy = offset
    states = np.stack([ox + v * t * np.cos(theta), oy + v * t * np.sin(theta),
                       np.full(L, theta), np.full(L, v)], axis=1)
    nb_states, nb_sizes, ids = np.zeros((0, L, 4)), np.zeros((0, 2)), []
    if neighbor is not None:
        nx, ny, nth = neighbor
        nb_states = np.tile([ox + nx, oy + ny, nth, 0.0], (1, L, 1))
        nb_sizes, ids = np.array([[4.0, 2.0]]), [2]
    if scene_map is not None:
        scene_map = SceneMap([np.asarray(b) + offset for b in scene_map.boundaries],
                             [np.asarray(d) + offset for d in scene_map.drivable])
    return Snippet("00", 1, "car", 0.0, 0.3, T, 1, states, np.zeros((L - 1, 2)), length, width,
                   VehicleGeometry(), ids, nb_states, nb_sizes, scene_map)


def test_channel_counts():
    assert RasterConfig("chauffeurnet", history_snapshots=4).channels == 7
    assert RasterConfig("mtp").channels == 3
    assert RasterConfig.full_scale().channels == 12


def test_config_validation():
    with pytest.raises(ConfigurationError):
        RasterConfig("lidar")
    with pytest.raises(ConfigurationError):
        RasterConfig(meters_per_pixel=0.0)


def test_ego_frame_identity():
    pts = np.array([[1.0, 2.0], [-3.0, 0.5]])
    np.testing.assert_allclose(ego_frame(pts, (0.0, 0.0, 0.0)), pts)


@settings(max_examples=50)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-np.pi, np.pi))
def test_ego_frame_isometry(x, y, theta):
    pts = np.array([[0.0, 0.0], [3.0, 4.0]])
    out = ego_frame(pts, (x, y, theta))
    assert np.linalg.norm(out[1] - out[0]) == pytest.approx(5.0, abs=1e-9)


def test_ego_frame_quarter_turn():
    # ego facing +y: a point 5 m north is 5 m ahead, a point 2 m east is 2 m to the right
    out = ego_frame(np.array([[0.0, 5.0], [2.0, 0.0]]), (0.0, 0.0, np.pi / 2))
    np.testing.assert_allclose(out, [[5.0, 0.0], [0.0, -2.0]], atol=1e-12)


def test_ego_frame_scene_map():
    m = SceneMap([[[0.0, 1.0], [0.0, 2.0]]], [[[0, 0], [1, 0], [1, 1]]])
    out = ego_frame(m, (0.0, 0.0, np.pi / 2))
    np.testing.assert_allclose(out.boundaries[0], [[1.0, 0.0], [2.0, 0.0]], atol=1e-12)


def test_empty_scene_only_ego_channel():
    cfg = RasterConfig("chauffeurnet")
    out = rasterize_chauffeurnet(make_snippet(v=0.0), T, cfg)
    assert out.shape == (7, 64, 64)
    assert out[1].sum() > 0
    assert out[0].sum() == 0 and out[2].sum() == 0 and out[3:].sum() == 0


def test_ego_box_area():
    cfg = RasterConfig("chauffeurnet", width=96, height=96, meters_per_pixel=0.25)
    out = rasterize_chauffeurnet(make_snippet(length=4.5, width=1.8), T, cfg)
    expected = 4.5 * 1.8 / 0.25 ** 2
    assert abs(out[1].sum() - expected) <= 0.2 * expected


def test_ego_box_points_up():
    out = rasterize_chauffeurnet(make_snippet(length=6.0, width=2.0), T, RasterConfig())
    rows, cols = np.nonzero(out[1])
    assert np.ptp(rows) > 2 * np.ptp(cols)


def test_static_neighbor_same_in_every_snapshot():
    out = rasterize_chauffeurnet(make_snippet(neighbor=(6.0, 3.0, 0.3)), T, RasterConfig())
    assert out[3].sum() > 0
    for ch in range(4, 7):
        np.testing.assert_array_equal(out[ch], out[3])


def test_history_channel_follows_motion():
    out = rasterize_chauffeurnet(make_snippet(v=5.0), T, RasterConfig())
    rows, cols = np.nonzero(out[2])
    # 15 m of history runs straight down from the anchor and is clipped at the bottom edge
    assert set(cols) == {32}
    assert rows.min() == 48 and rows.max() == 63


def test_boundaries_drawn():
    road = SceneMap([[[-50.0, 4.0], [50.0, 4.0]], [[-50.0, -4.0], [50.0, -4.0]]])
    out = rasterize_chauffeurnet(make_snippet(scene_map=road), T, RasterConfig())
    cols = np.nonzero(out[0])[1]
    assert set(np.unique(cols)) == {32 - 8, 32 + 8}


def test_mtp_empty_scene_background():
    snippet = make_snippet(length=0.0, width=0.0)
    out = rasterize_mtp(snippet, T, RasterConfig("mtp"))
    assert np.all(out == 0.0)


def test_mtp_ego_only_single_region():
    out = rasterize_mtp(make_snippet(), T, RasterConfig("mtp"))
    colored = np.any(out != 0, axis=0)
    ego = np.all(out == np.reshape(EGO, (3, 1, 1)), axis=0)
    np.testing.assert_array_equal(colored, ego)
    rows, cols = np.nonzero(ego)
    assert len(rows) == (np.ptp(rows) + 1) * (np.ptp(cols) + 1)  # one solid box


def test_mtp_ego_wins_overlap():
    out = rasterize_mtp(make_snippet(neighbor=(1.0, 0.0, 0.0)), T, RasterConfig("mtp"))
    r, c = 48, 32
    np.testing.assert_array_equal(out[:, r, c], EGO)
    assert np.any(np.all(out == np.reshape(NEIGHBOR, (3, 1, 1)), axis=0))


def test_values_in_unit_interval_and_deterministic():
    tracks, maps = synth_dataset(["roundabout_arc", "straight"], 2, seed=0, gap=1.5)
    snippets = extract_snippets(tracks, maps=maps)[:6]
    for variant in ("chauffeurnet", "mtp"):
        cfg = RasterConfig(variant)
        for s in snippets:
            a, b = rasterize(s, T, cfg), rasterize(s, T, cfg)
            assert a.shape == (cfg.channels, cfg.height, cfg.width)
            assert np.isfinite(a).all() and a.min() >= 0 and a.max() <= 1
            assert a.tobytes() == b.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.floats(-200, 200), st.floats(-200, 200), st.sampled_from(["chauffeurnet", "mtp"]))
def test_translation_equivariance(dx, dy, variant):
    road = SceneMap([[[-40.0, 4.0], [40.0, 4.0]]], [[[-40.0, -4.0], [40.0, -4.0], [40.0, 4.0], [-40.0, 4.0]]])
    cfg = RasterConfig(variant)
    base = rasterize(make_snippet(v=4.0, theta=0.3, neighbor=(7.0, 2.0, 0.1), scene_map=road), T, cfg)
    moved = rasterize(make_snippet(v=4.0, theta=0.3, neighbor=(7.0, 2.0, 0.1), scene_map=road, offset=(dx, dy)),
                      T, cfg)
    # sub-pixel rounding may move isolated edge pixels
    assert np.mean(base != moved) < 0.01


def test_feature_vector_context():
    road = SceneMap([[[-50.0, 4.0], [50.0, 4.0]], [[-50.0, -4.0], [50.0, -4.0]]])
    f = feature_vector_context(make_snippet(v=5.0, neighbor=(6.0, 0.0, 0.0), scene_map=road), T)
    assert f.shape == (feature_vector_size(),)
    assert f[0] == pytest.approx(0.5)
    assert f[4] == 1.0 and f[5] == pytest.approx(6.0 / 30.0)
    rays = f[-8:] * 30.0
    assert rays.min() == pytest.approx(4.0)


def test_png_export(tmp_path):
    s = make_snippet(neighbor=(6.0, 3.0, 0.0))
    paths = save_png(rasterize(s, T, RasterConfig()), tmp_path / "c.png", "chauffeurnet")
    assert len(paths) == 7 and all(p.exists() for p in paths)
    (rgb,) = save_png(rasterize(s, T, RasterConfig("mtp")), tmp_path / "m.png", "mtp")
    from PIL import Image

    with Image.open(rgb) as img:
        assert img.size == (64, 64) and img.mode == "RGB"
