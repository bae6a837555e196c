import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actionspace.data import (Snippet, SceneMap, Track, derive_actions, extract_snippets, load_snippet_cache,
                              load_tracks, resample, save_snippet_cache, split_recordings, split_snippets,
                              synth_dataset, synth_generate, write_tracks)
from actionspace.data.snippets import consistency_error
from actionspace.errors import ConfigurationError, ContractError, DataError, SchemaError
from actionspace.kinematics import VehicleGeometry, wrap_angle

HEADER = "recordingId,trackId,frame,xCenter,yCenter,heading,xVelocity,yVelocity\n"


def straight_track(duration, rate=25.0, v=8.0, rid="00", tid=1, theta=0.0):
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    states = np.stack([v * t * np.cos(theta), v * t * np.sin(theta), np.full(n, theta), np.full(n, v)], axis=1)
    return Track(rid, tid, "car", t, states)


def write_meta(path, rate=25, tracks=None):
    path.write_text(json.dumps({"recordings": {"00": {"frame_rate": rate, "tracks": tracks or {}}}}))


def test_load_empty_file(tmp_path):
    (tmp_path / "t.csv").write_text(HEADER)
    write_meta(tmp_path / "m.json")
    assert load_tracks(tmp_path / "t.csv", tmp_path / "m.json") == []


def test_load_two_row_track(tmp_path):
    (tmp_path / "t.csv").write_text(HEADER + "00,1,0,0.0,0.0,90.0,0.0,2.0\n00,1,1,0.0,0.08,90.0,0.0,2.0\n")
    write_meta(tmp_path / "m.json")
    (track,) = load_tracks(tmp_path / "t.csv", tmp_path / "m.json")
    assert len(track) == 2
    assert track.spacing == pytest.approx(0.04)
    assert track.states[0, 2] == pytest.approx(np.pi / 2)
    assert track.states[0, 3] == pytest.approx(2.0)


def test_missing_column_is_named(tmp_path):
    (tmp_path / "t.csv").write_text(HEADER.replace(",yVelocity", "") + "00,1,0,0,0,0,0\n")
    write_meta(tmp_path / "m.json")
    with pytest.raises(SchemaError) as info:
        load_tracks(tmp_path / "t.csv", tmp_path / "m.json")
    assert info.value.column == "yVelocity"


def test_non_monotone_frames(tmp_path):
    (tmp_path / "t.csv").write_text(HEADER + "00,1,1,0,0,0,1,0\n00,1,0,0,0,0,1,0\n")
    write_meta(tmp_path / "m.json")
    with pytest.raises(DataError):
        load_tracks(tmp_path / "t.csv", tmp_path / "m.json")


def test_excluded_classes_dropped(tmp_path):
    rows = "00,1,0,0,0,0,1,0\n00,1,1,0.04,0,0,1,0\n00,2,0,0,0,0,1,0\n00,2,1,0.04,0,0,1,0\n"
    (tmp_path / "t.csv").write_text(HEADER + rows)
    write_meta(tmp_path / "m.json", tracks={"1": {"class": "pedestrian"}, "2": {"class": "truck"}})
    (track,) = load_tracks(tmp_path / "t.csv", tmp_path / "m.json")
    assert track.track_id == 2 and track.agent_class == "truck_bus"


def test_synth_write_read_round_trip(tmp_path):
    tracks, _ = synth_dataset(["left_turn", "stop_and_go"], 3, seed=4)
    write_tracks(tracks, tmp_path / "t.csv", tmp_path / "m.json")
    loaded = load_tracks(tmp_path / "t.csv", tmp_path / "m.json")
    key = lambda t: (t.recording_id, t.track_id)  # noqa: E731
    assert sorted(map(key, loaded)) == sorted(map(key, tracks))
    by_key = {key(t): t for t in loaded}
    for t in tracks:
        other = by_key[key(t)]
        np.testing.assert_allclose(other.times, t.times, atol=1e-9)
        np.testing.assert_allclose(other.states[:, [0, 1, 3]], t.states[:, [0, 1, 3]], atol=1e-9)
        np.testing.assert_allclose(wrap_angle(other.states[:, 2] - t.states[:, 2]), 0.0, atol=1e-9)


def test_track_rejects_bad_times():
    with pytest.raises(DataError):
        Track("00", 1, "car", [0.0, 0.0], np.zeros((2, 4)))


def test_scene_map_validation():
    with pytest.raises(DataError):
        SceneMap(boundaries=[[[0.0, 0.0]]])
    with pytest.raises(DataError):
        SceneMap(boundaries=[[[0.0, 0.0], [np.nan, 1.0]]])


def test_resample_identity():
    track = straight_track(2.0, rate=1 / 0.3)
    out = resample(track, 0.3)
    np.testing.assert_array_equal(out.states, track.states)


def test_resample_straight_line_exact():
    out = resample(straight_track(5.0, v=7.0, theta=0.4), 0.3)
    np.testing.assert_allclose(np.diff(out.times), 0.3, atol=1e-12)
    # points stay on the line through the origin with heading 0.4
    np.testing.assert_allclose(out.states[:, 1] * np.cos(0.4) - out.states[:, 0] * np.sin(0.4), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.states[:, 0], 7.0 * out.times * np.cos(0.4), atol=1e-12)


def test_resample_circular_arc_heading():
    r, w = 15.0, 0.5
    t = np.arange(0, 6.0 + 1e-9, 0.04)
    phi = w * t - np.pi / 2
    states = np.stack([r * np.cos(phi), r * np.sin(phi), wrap_angle(w * t), np.full_like(t, r * w)], axis=1)
    out = resample(Track("00", 1, "car", t, states), 0.3)
    np.testing.assert_allclose(wrap_angle(out.states[:, 2] - w * out.times), 0.0, atol=1e-3)


def test_resample_errors():
    with pytest.raises(DataError):
        resample(Track("00", 1, "car", [0.0], np.zeros((1, 4))), 0.3)
    with pytest.raises(ContractError):
        resample(straight_track(1.0, rate=2.0), 0.3)


def test_resample_heading_across_pi():
    t = np.array([0.0, 0.2, 0.4, 0.6])
    heading = wrap_angle(np.pi + np.array([-0.15, -0.05, 0.05, 0.15]))
    states = np.stack([t * 5, np.zeros(4), heading, np.full(4, 5.0)], axis=1)
    out = resample(Track("00", 1, "car", t, states), 0.3)
    assert out.states[1, 2] == pytest.approx(np.pi)


def test_derive_actions_flags_infeasible():
    t = np.array([0.0, 0.3, 0.6])
    states = np.array([[0, 0, 0, 1], [0.3, 0, 0, 1], [0.6, 0, 1.5, 1]])
    actions, flags = derive_actions(Track("00", 1, "car", t, states))
    assert flags.tolist() == [False, True]
    assert actions[0].tolist() == [0.0, 0.0]


@pytest.mark.parametrize("duration, segments, expected", [(5.9, 1, 0), (6.0, 1, 1), (12.0, 2, 6)])
def test_snippet_anchor_counts(duration, segments, expected):
    snippets = extract_snippets([straight_track(duration)], segments=segments, spacing=0.6)
    assert len(snippets) == expected


def test_snippet_anchor_count_brute_force():
    snippets = extract_snippets([straight_track(12.0)], segments=2, spacing=0.6)
    anchors = [t0 for t0 in np.arange(0, 12.0 + 1e-9, 0.6) if t0 - 3.0 >= -1e-9 and t0 + 6.0 <= 12.0 + 1e-9]
    np.testing.assert_allclose([s.t0 for s in snippets], anchors, atol=1e-9)


def test_snippet_windows_contiguous():
    (s,) = extract_snippets([straight_track(9.0)], segments=2, spacing=0.6)[:1]
    T = s.T
    np.testing.assert_array_equal(s.past_states[-1], s.current_state)
    np.testing.assert_array_equal(np.vstack([s.past_states, s.future_states_1, s.future_states_2]), s.states)
    assert len(s.past_actions) == len(s.future_actions_1) == len(s.future_actions_2) == T
    np.testing.assert_allclose(np.diff(s.times), s.dt, atol=1e-12)


def test_snippet_argument_checks():
    with pytest.raises(ContractError):
        extract_snippets([], spacing=0.0)
    with pytest.raises(ContractError):
        extract_snippets([], segments=3)


def test_snippets_are_kinematically_consistent():
    tracks, maps = synth_dataset(["left_turn", "roundabout_arc", "stop_and_go"], 4, seed=2, noise=0.3)
    snippets = extract_snippets(tracks, segments=2, maps=maps)
    assert snippets
    for s in snippets:
        dyn, pos = consistency_error(s.past_states, s.past_actions, s.geometry, s.dt)
        assert dyn <= 1e-6 and pos <= 1e-6


def test_snippets_count_deterministic():
    tracks, maps = synth_dataset(["straight", "bimodal_fork"], 4, seed=5)
    a = extract_snippets(tracks, segments=1, maps=maps)
    b = extract_snippets(tracks, segments=1, maps=maps)
    assert [s.key for s in a] == [s.key for s in b]


def test_neighbors_clipped_to_window():
    tracks, maps = synth_dataset(["straight"], 2, seed=0, gap=1.5)
    snippets = extract_snippets(tracks, maps=maps)
    with_nb = [s for s in snippets if s.neighbor_ids]
    assert with_nb
    for s in with_nb:
        assert s.neighbor_states.shape[1:] == s.states.shape


@pytest.mark.parametrize("n, sizes", [(10, (8, 1, 1)), (3, (1, 1, 1)), (33, (27, 3, 3))])
def test_split_sizes(n, sizes):
    parts = split_recordings([f"r{i:02d}" for i in range(n)])
    assert tuple(map(len, parts)) == sizes
    assert set().union(*parts) == {f"r{i:02d}" for i in range(n)}


def test_split_needs_three_recordings():
    with pytest.raises(ConfigurationError):
        split_recordings(["a", "b"])


@settings(max_examples=30)
@given(st.integers(3, 60), st.one_of(st.none(), st.integers(0, 1000)))
def test_split_is_partition(n, seed):
    ids = [f"r{i}" for i in range(n)]
    train, val, test = split_recordings(ids, seed=seed)
    assert not (set(train) & set(val)) and not (set(train) & set(test)) and not (set(val) & set(test))
    assert len(train) + len(val) + len(test) == n
    assert val and test
    assert split_recordings(ids, seed=seed) == (train, val, test)


def test_split_snippets_disjoint():
    tracks, maps = synth_dataset(["straight", "left_turn", "right_turn"], 8, seed=0)
    snippets = extract_snippets(tracks, maps=maps)
    parts = split_snippets(snippets, split_recordings([s.recording_id for s in snippets]))
    keys = [{s.key for s in p} for p in parts]
    recs = [{s.recording_id for s in p} for p in parts]
    for i in range(3):
        for j in range(i + 1, 3):
            assert not keys[i] & keys[j]
            assert not recs[i] & recs[j]
    assert sum(map(len, parts)) == len(snippets)


def test_synth_straight_zero_actions():
    tracks, _ = synth_generate("straight", 3, seed=0)
    for t in tracks:
        actions, flags = derive_actions(t)
        assert not flags.any()
        np.testing.assert_allclose(actions, 0.0, atol=1e-9)


def test_synth_deterministic(tmp_path):
    for k in range(2):
        tracks, _ = synth_dataset(["straight", "bimodal_fork", "stop_and_go"], 3, seed=7, noise=0.2)
        write_tracks(tracks, tmp_path / f"t{k}.csv", tmp_path / f"m{k}.json")
    assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()


def test_synth_left_turn_heading():
    tracks, _ = synth_generate("left_turn", 4, seed=1)
    for t in tracks:
        assert wrap_angle(t.states[-1, 2] - t.states[0, 2]) == pytest.approx(np.pi / 2, abs=0.05)


def test_synth_bimodal_pairs():
    tracks, _ = synth_generate("bimodal_fork", 4, seed=2)
    pre = int(round(3.0 / 0.3))
    for a, b in zip(tracks[::2], tracks[1::2]):
        assert a.recording_id == b.recording_id
        np.testing.assert_array_equal(a.states[:pre + 1], b.states[:pre + 1])
        assert a.states[-1, 1] - a.states[pre, 1] > 5 and b.states[-1, 1] - b.states[pre, 1] < -5
        assert a.times[-1] < b.times[0]


def test_synth_unknown_scenario():
    with pytest.raises(ContractError):
        synth_generate("figure_eight", 1)


def test_snippet_cache_round_trip(tmp_path):
    tracks, maps = synth_dataset(["straight", "left_turn"], 2, seed=0, gap=1.5)
    snippets = extract_snippets(tracks, segments=2, maps=maps)
    save_snippet_cache(tmp_path / "c.bin", snippets, extra={"k": 1})
    loaded, header = load_snippet_cache(tmp_path / "c.bin")
    assert header["extra"] == {"k": 1} and header["segments"] == 2
    assert [s.key for s in loaded] == [s.key for s in snippets]
    for a, b in zip(loaded, snippets):
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.neighbor_states, b.neighbor_states)
        assert a.neighbor_ids == b.neighbor_ids
        assert (a.scene_map is None) == (b.scene_map is None)


def test_snippet_cache_rejects_other_files(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a cache")
    with pytest.raises(DataError):
        load_snippet_cache(tmp_path / "x.bin")


def test_snippet_shape_validation():
    with pytest.raises(DataError):
        Snippet("00", 1, "car", 0.0, 0.3, 10, 1, np.zeros((5, 4)), np.zeros((4, 2)), 4.5, 1.8,
                VehicleGeometry())
