"""Synthetic, kinematically exact traffic scenes.

Every track is the bicycle-model rollout of a scripted action profile, so
actions derived from the states reproduce them exactly. Each scenario has a
fixed road layout (returned as a :class:`SceneMap`); speeds, start positions
and timings are drawn from the seeded generator.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError
from ..kinematics import DEFAULT_DT, VehicleGeometry, rollout_array
from .tracks import SceneMap, Track

SCENARIOS = ("straight", "left_turn", "right_turn", "roundabout_arc", "stop_and_go", "bimodal_fork")

ROAD_HALF_WIDTH = 4.0
TURN_RADIUS = 10.0
ROUNDABOUT_RADIUS = 12.0
_FAR = 150.0


def _arc(center, radius, start, stop, n=24):
    ang = np.linspace(start, stop, n)
    return np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1)


def _turn_map(sign):
    """Approach along +x, quarter turn of radius TURN_RADIUS; ``sign`` +1 left, -1 right."""
    w, R = ROAD_HALF_WIDTH, TURN_RADIUS
    c = (0.0, sign * R)
    outer_r, inner_r = R + w, R - w
    a0 = -math.pi / 2 if sign > 0 else math.pi / 2
    outer = np.vstack([[[-_FAR, -sign * w]], _arc(c, outer_r, a0, 0.0), [[outer_r, sign * _FAR]]])
    inner = np.vstack([[[-_FAR, sign * w]], _arc(c, inner_r, a0, 0.0), [[inner_r, sign * _FAR]]])
    return SceneMap([outer, inner], [np.vstack([outer, inner[::-1]])])


def scene_map_for(scenario: str) -> SceneMap:
    w, R = ROAD_HALF_WIDTH, TURN_RADIUS
    if scenario == "left_turn":
        return _turn_map(+1)
    if scenario == "right_turn":
        return _turn_map(-1)
    if scenario == "roundabout_arc":
        Rr = ROUNDABOUT_RADIUS
        c = (0.0, Rr)
        island = _arc(c, Rr - w, 0, 2 * math.pi, 48)
        outer = _arc(c, Rr + w, -math.pi / 2, 3 * math.pi / 2, 48)
        approach = [np.array([[-_FAR, -w], [0, -w]]), np.array([[-_FAR, w], [-w, w]])]
        exit_ = [np.array([[0, 2 * Rr + w], [-_FAR, 2 * Rr + w]]), np.array([[-w, 2 * Rr - w], [-_FAR, 2 * Rr - w]])]
        drivable = [np.array([[-_FAR, -w], [0, -w], [0, w], [-_FAR, w]]),
                    np.array([[-_FAR, 2 * Rr - w], [0, 2 * Rr - w], [0, 2 * Rr + w], [-_FAR, 2 * Rr + w]]),
                    outer]
        return SceneMap([island, outer] + approach + exit_, drivable)
    if scenario == "bimodal_fork":
        return SceneMap(
            [np.array([[-_FAR, -w], [R - w, -w], [R - w, -_FAR]]),
             np.array([[-_FAR, w], [R - w, w], [R - w, _FAR]]),
             np.array([[R + w, -_FAR], [R + w, _FAR]])],
            [np.array([[-_FAR, -w], [R - w, -w], [R - w, -_FAR], [R + w, -_FAR],
                       [R + w, _FAR], [R - w, _FAR], [R - w, w], [-_FAR, w]])])
    straight = SceneMap([np.array([[-_FAR, -w], [_FAR, -w]]), np.array([[-_FAR, w], [_FAR, w]])],
                        [np.array([[-_FAR, -w], [_FAR, -w], [_FAR, w], [-_FAR, w]])])
    if scenario == "stop_and_go":
        straight.boundaries.append(np.array([[0.0, -w], [0.0, w]]))
    return straight


def _steering_for(heading_change, arc_length, v, g, dt):
    """Constant steering angle and step count turning by ``heading_change`` over ~``arc_length``."""
    n = max(1, int(round(abs(arc_length) / (v * dt))))
    sin_beta = heading_change * g.l_r / (n * v * dt)
    if abs(sin_beta) >= 1:
        raise ContractError("turn too sharp for the vehicle geometry")
    beta = math.asin(sin_beta)
    return math.atan(math.tan(beta) * g.wheelbase / g.l_r), n


def _profile(scenario, n_steps, rng, g, dt):
    """Returns (initial state, actions (n_steps, 2))."""
    actions = np.zeros((n_steps, 2))
    y0 = rng.uniform(-0.3, 0.3)
    if scenario == "straight":
        v = rng.uniform(5.0, 12.0)
        return np.array([rng.uniform(-60, 0), y0, 0.0, v]), actions
    if scenario in ("left_turn", "right_turn"):
        v = rng.uniform(5.0, 10.0)
        pre = int(math.ceil(rng.uniform(2.0, 6.0) / dt))
        sign = 1 if scenario == "left_turn" else -1
        return np.array([-v * pre * dt, y0, 0.0, v]), _turn_actions(v, pre, sign, n_steps, g, dt)
    if scenario == "roundabout_arc":
        v = rng.uniform(5.0, 8.0)
        lead = rng.uniform(1.0, 3.0)
        pre = int(math.ceil(lead / dt))
        delta, n = _steering_for(math.pi, math.pi * ROUNDABOUT_RADIUS, v, g, dt)
        actions[pre:pre + n, 1] = delta
        return np.array([-v * pre * dt, y0, 0.0, v]), actions
    if scenario == "stop_and_go":
        v = rng.uniform(6.0, 10.0)
        brake_dist = rng.uniform(12.0, 20.0)
        pre = int(math.ceil(rng.uniform(1.0, 3.0) / dt))
        n_brake = max(1, int(round(2 * brake_dist / (v * dt))))
        wait = int(round(rng.uniform(1.0, 2.0) / dt))
        actions[pre:pre + n_brake, 0] = -v / (n_brake * dt)
        actions[pre + n_brake + wait:, 0] = 1.5
        # the discrete brake distance differs slightly from brake_dist; place the stop at x = 0
        x_brake = v * n_brake * dt + 0.5 * (-v / (n_brake * dt)) * dt * dt * n_brake * (n_brake - 1)
        return np.array([-v * pre * dt - x_brake, y0, 0.0, v]), actions
    raise ContractError(f"unknown scenario {scenario!r}")


def _turn_actions(v, pre, sign, n_steps, g, dt):
    actions = np.zeros((n_steps, 2))
    delta, n = _steering_for(sign * math.pi / 2, math.pi / 2 * TURN_RADIUS, v, g, dt)
    actions[pre:pre + n, 1] = delta
    return actions


def synth_generate(scenario: str, count: int, seed: int = 0, dt: float = DEFAULT_DT,
                   duration: float = 12.0, noise: float = 0.0, per_recording: int = 2,
                   gap: float = 3.0, fork_time: float = 3.0,
                   geometry: VehicleGeometry | None = None):
    """Generate ``count`` tracks for one scenario.

    Returns ``(tracks, scene_map)``. Tracks in the same recording start
    ``gap`` seconds apart and share the road. ``bimodal_fork`` emits pairs
    with identical states up to ``fork_time`` seconds, after which one mate
    turns left and the other right; the two mates of a pair never overlap in
    time, and an odd ``count`` is rounded up to whole pairs. ``noise``
    scales i.i.d. Gaussian action noise (``noise`` m/s^2 on acceleration,
    ``0.02 * noise`` rad on steering).
    """
    if scenario not in SCENARIOS:
        raise ContractError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if count < 1:
        raise ContractError("count must be at least 1")
    g = geometry or VehicleGeometry()
    rng = np.random.default_rng(seed)
    n_steps = int(round(duration / dt))
    gap_steps = int(round(gap / dt))
    scene = scene_map_for(scenario)
    tracks = []

    def make(rid, tid, start_step, s0, actions):
        if noise > 0:
            actions = actions + rng.normal(size=actions.shape) * np.array([noise, 0.02 * noise])
        states = np.vstack([s0, rollout_array(s0, actions, g, dt)])
        times = (start_step + np.arange(n_steps + 1)) * dt
        tracks.append(Track(rid, tid, "car", times, states, 4.5, 1.8))

    if scenario == "bimodal_fork":
        pre = int(round(fork_time / dt))
        for p in range((count + 1) // 2):
            v = rng.uniform(6.0, 9.0)
            s0 = np.array([-v * pre * dt, rng.uniform(-0.3, 0.3), 0.0, v])
            shared = rng.normal(size=(n_steps, 2)) * np.array([noise, 0.02 * noise]) if noise > 0 else 0.0
            for mate, sign in enumerate((+1, -1)):
                actions = _turn_actions(v, pre, sign, n_steps, g, dt) + shared
                states = np.vstack([s0, rollout_array(s0, actions, g, dt)])
                times = (mate * (n_steps + gap_steps) + np.arange(n_steps + 1)) * dt
                tracks.append(Track(f"{scenario}-{p:03d}", mate, "car", times, states, 4.5, 1.8))
        return tracks, scene

    for k in range(count):
        s0, actions = _profile(scenario, n_steps, rng, g, dt)
        make(f"{scenario}-{k // per_recording:03d}", k % per_recording, (k % per_recording) * gap_steps, s0, actions)
    return tracks, scene


def synth_dataset(scenarios, count: int, seed: int = 0, **kwargs):
    """Several scenarios at once; returns ``(tracks, maps)`` with one map per recording."""
    tracks, maps = [], {}
    for i, name in enumerate(scenarios):
        sub_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        ts, scene = synth_generate(name, count, seed=sub_seed, **kwargs)
        tracks.extend(ts)
        for t in ts:
            maps[t.recording_id] = scene
    return tracks, maps
