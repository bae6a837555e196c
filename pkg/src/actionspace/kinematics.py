"""Kinematic bicycle model: forward propagation and its inverse.

States are ``[x, y, theta, v]`` and actions ``[a, delta]`` (acceleration and
steering angle). The slip angle is ``beta = atan(l_r / (l_f + l_r) * tan(delta))``
and one step of length ``dt`` is an explicit Euler update using the speed at
the start of the step.

The inverse recovers the action from two consecutive states through the
heading change. The turning radius is estimated as ``v * dt / dtheta``. With
``speed="start"`` (the default) ``v`` is the speed at the start of the step,
which makes :func:`inverse_step` the exact inverse of :func:`step`. With
``speed="mean"`` the mid-step speed ``(v_t + v_{t+1}) / 2`` is used instead,
which is only approximate when the acceleration is non-zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, InfeasibleTurnError, NumericError
from .numeric import tensor as ad

STRAIGHT_EPS = 1e-9  # heading changes below this are treated as straight motion
DEFAULT_DT = 0.3
DEFAULT_STEPS = 10


def wrap_angle(theta):
    """Wrap to the half-open interval (-pi, pi]."""
    return theta - 2 * np.pi * np.ceil((theta - np.pi) / (2 * np.pi))


@dataclass(frozen=True)
class State:
    x: float
    y: float
    theta: float
    v: float

    def as_array(self):
        return np.array([self.x, self.y, self.theta, self.v])

    @classmethod
    def from_array(cls, a):
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class Action:
    a: float
    delta: float

    def as_array(self):
        return np.array([self.a, self.delta])

    @classmethod
    def from_array(cls, a):
        return cls(float(a[0]), float(a[1]))


@dataclass(frozen=True)
class VehicleGeometry:
    l_f: float = 1.3
    l_r: float = 1.3

    def __post_init__(self):
        if not (self.l_f > 0 and self.l_r > 0):
            raise ContractError(f"axle distances must be positive, got l_f={self.l_f}, l_r={self.l_r}")

    @property
    def wheelbase(self):
        return self.l_f + self.l_r


DEFAULT_GEOMETRY = VehicleGeometry()


def slip_angle(delta, g: VehicleGeometry):
    return np.arctan(g.l_r / (g.l_f + g.l_r) * np.tan(delta))


def step(s: State, u: Action, g: VehicleGeometry = DEFAULT_GEOMETRY, dt: float = DEFAULT_DT) -> State:
    if not dt > 0:
        raise ContractError("dt must be positive")
    beta = math.atan(g.l_r / (g.l_f + g.l_r) * math.tan(u.delta))
    fields = {
        "x": s.x + s.v * math.cos(s.theta + beta) * dt,
        "y": s.y + s.v * math.sin(s.theta + beta) * dt,
        "theta": float(wrap_angle(s.theta + s.v / g.l_r * math.sin(beta) * dt)),
        "v": s.v + u.a * dt,
    }
    for name, value in fields.items():
        if not math.isfinite(value):
            raise NumericError(f"step produced non-finite {name}", field=name)
    return State(**fields)


def rollout(s0: State, actions: Sequence[Action], g: VehicleGeometry = DEFAULT_GEOMETRY,
            dt: float = DEFAULT_DT) -> list[State]:
    """States after each action; ``states[k]`` results from ``actions[k]``."""
    if len(actions) < 1:
        raise ContractError("rollout needs at least one action")
    states, s = [], s0
    for k, u in enumerate(actions):
        try:
            s = step(s, u, g, dt)
        except NumericError as exc:
            raise NumericError(f"step {k}: {exc}", field=exc.field) from exc
        states.append(s)
    return states


def inverse_step(s_t: State, s_t1: State, g: VehicleGeometry = DEFAULT_GEOMETRY,
                 dt: float = DEFAULT_DT, speed: str = "start") -> Action:
    """Action that carries ``s_t`` to ``s_t1``."""
    actions, infeasible = inverse_array(np.stack([s_t.as_array(), s_t1.as_array()]), g, dt, speed)
    if infeasible[0]:
        raise InfeasibleTurnError("heading change too sharp for the vehicle geometry", step=0)
    return Action.from_array(actions[0])


def actions_from_states(states: Sequence[State], g: VehicleGeometry = DEFAULT_GEOMETRY,
                        dt: float = DEFAULT_DT, speed: str = "start") -> list[Action]:
    if len(states) < 2:
        raise ContractError("need at least two states")
    arr = np.stack([s.as_array() for s in states])
    actions, infeasible = inverse_array(arr, g, dt, speed)
    if infeasible.any():
        k = int(np.argmax(infeasible))
        raise InfeasibleTurnError(f"step {k}: heading change too sharp for the vehicle geometry", step=k)
    return [Action.from_array(a) for a in actions]


# ---------------------------------------------------------------- arrays

def _geometry_arrays(g):
    return np.asarray(g.l_f, dtype=float), np.asarray(g.l_r, dtype=float)


def step_array(states, actions, g: VehicleGeometry = DEFAULT_GEOMETRY, dt: float = DEFAULT_DT):
    """Vectorised :func:`step` over leading dimensions of ``(..., 4)`` / ``(..., 2)``."""
    lf, lr = _geometry_arrays(g)
    x, y, th, v = np.moveaxis(np.asarray(states, dtype=float), -1, 0)
    a, d = np.moveaxis(np.asarray(actions, dtype=float), -1, 0)
    beta = np.arctan(lr / (lf + lr) * np.tan(d))
    out = np.stack([
        x + v * np.cos(th + beta) * dt,
        y + v * np.sin(th + beta) * dt,
        wrap_angle(th + v / lr * np.sin(beta) * dt),
        v + a * dt,
    ], axis=-1)
    return out


def rollout_array(s0, actions, g: VehicleGeometry = DEFAULT_GEOMETRY, dt: float = DEFAULT_DT):
    """``s0`` (..., 4), ``actions`` (..., T, 2) -> states (..., T, 4)."""
    actions = np.asarray(actions, dtype=float)
    s = np.asarray(s0, dtype=float)
    out = []
    for k in range(actions.shape[-2]):
        s = step_array(s, actions[..., k, :], g, dt)
        out.append(s)
    states = np.stack(out, axis=-2)
    if not np.isfinite(states).all():
        bad = np.argwhere(~np.isfinite(states))[0]
        raise NumericError(f"rollout produced non-finite {'x y theta v'.split()[bad[-1]]} at step {bad[-2]}",
                           field="x y theta v".split()[bad[-1]])
    return states


def inverse_array(states, g: VehicleGeometry = DEFAULT_GEOMETRY, dt: float = DEFAULT_DT,
                  speed: str = "start"):
    """Actions between consecutive states along axis -2.

    Returns ``(actions (..., T, 2), infeasible (..., T))``. Infeasible steps
    (turn tighter than the geometry allows) get ``delta = nan``.
    """
    if not dt > 0:
        raise ContractError("dt must be positive")
    if speed not in ("start", "mean"):
        raise ContractError(f"speed must be 'start' or 'mean', got {speed!r}")
    lf, lr = _geometry_arrays(g)
    states = np.asarray(states, dtype=float)
    s0, s1 = states[..., :-1, :], states[..., 1:, :]
    a = (s1[..., 3] - s0[..., 3]) / dt
    v_ref = s0[..., 3] if speed == "start" else 0.5 * (s0[..., 3] + s1[..., 3])
    dth = wrap_angle(s1[..., 2] - s0[..., 2])
    turning = np.abs(dth) >= STRAIGHT_EPS
    safe_dth = np.where(turning, dth, 1.0)
    radius = v_ref * dt / safe_dth
    radicand = radius ** 2 - lr ** 2
    infeasible = turning & (radicand <= 0)
    ok = turning & ~infeasible
    root = np.sqrt(np.where(ok, radicand, 1.0))
    delta = np.where(ok, np.sign(safe_dth * v_ref) * np.arctan((lf + lr) / root), 0.0)
    delta = np.where(infeasible, np.nan, delta)
    return np.stack([a, delta], axis=-1), infeasible


def is_feasible(states, bounds, g: VehicleGeometry = DEFAULT_GEOMETRY, dt: float = DEFAULT_DT,
                tol: float = 2e-2) -> bool:
    """Re-derive actions from ``states`` (T+1, 4) and test them against ``bounds``.

    ``bounds`` is ``((a_min, a_max), (delta_min, delta_max))``.
    """
    actions, infeasible = inverse_array(states, g, dt)
    if infeasible.any() or not np.isfinite(actions).all():
        return False
    (a_lo, a_hi), (d_lo, d_hi) = bounds
    a, d = actions[..., 0], actions[..., 1]
    return bool(np.all(a >= a_lo - tol) and np.all(a <= a_hi + tol)
                and np.all(d >= d_lo - tol) and np.all(d <= d_hi + tol))


# -------------------------------------------------------- differentiable

def differentiable_rollout(s0, actions, g: VehicleGeometry = DEFAULT_GEOMETRY, dt: float = DEFAULT_DT,
                           return_states: bool = False):
    """Bicycle-model rollout on autodiff tensors.

    ``s0`` is (..., 4) (array or tensor), ``actions`` a tensor (..., T, 2).
    Returns positions (..., T, 2), plus states (..., T, 4) when requested.
    """
    actions = ad.as_tensor(actions)
    s0 = ad.as_tensor(s0)
    lf, lr = _geometry_arrays(g)
    ratio = lr / (lf + lr)
    x, y, th, v = (s0[..., i] for i in range(4))
    positions, states = [], []
    for k in range(actions.shape[-2]):
        a = actions[..., k, 0]
        d = actions[..., k, 1]
        beta = ad.atan(ratio * ad.tan(d))
        heading = th + beta
        x = x + v * ad.cos(heading) * dt
        y = y + v * ad.sin(heading) * dt
        th = th + v / lr * ad.sin(beta) * dt
        th = th - (th.data - wrap_angle(th.data))
        v = v + a * dt
        positions.append(ad.stack([x, y], axis=-1))
        if return_states:
            states.append(ad.stack([x, y, th, v], axis=-1))
    pos = ad.stack(positions, axis=-2)
    if not np.isfinite(pos.data).all():
        raise NumericError("differentiable rollout produced non-finite positions", field="x")
    if return_states:
        return pos, ad.stack(states, axis=-2)
    return pos
