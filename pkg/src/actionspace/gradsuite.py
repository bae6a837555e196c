"""Finite-difference gradient checks for every primitive and for the end-to-end losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import Action, State, VehicleGeometry, differentiable_rollout
from .numeric import tensor as ad
from .numeric.gradcheck import grad_check, grad_check_parameters

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} max_rel_error={self.error:.3e} tol={self.tolerance:.0e}"


def _away_from(x, points, gap=1e-2):
    """Nudge entries of ``x`` that sit within ``gap`` of any kink in ``points``."""
    x = x.copy()
    for p in points:
        close = np.abs(x - p) < gap
        x[close] = p + np.where(x[close] >= p, gap, -gap)
    return x


def _unary_cases(rng):
    """(name, function of x, input transform) for elementwise primitives."""
    return [
        ("neg", ad.neg, None),
        ("tanh", ad.tanh, None),
        ("sigmoid", ad.sigmoid, None),
        ("relu", ad.relu, lambda x: _away_from(x, [0.0])),
        ("sin", ad.sin, None),
        ("cos", ad.cos, None),
        ("tan", ad.tan, lambda x: x * 0.7),
        ("atan", ad.atan, None),
        ("sqrt", ad.sqrt, lambda x: np.abs(x) + 0.1),
        ("exp", ad.exp, None),
        ("log", ad.log, lambda x: np.abs(x) + 0.1),
        ("abs", ad.abs_, lambda x: _away_from(x, [0.0])),
        ("clamp", lambda t: ad.clamp(t, -1.0, 1.0), lambda x: _away_from(x, [-1.0, 1.0])),
        ("huber", lambda t: ad.huber(t, 1.0), None),
        ("sum", lambda t: ad.sum_(t, axis=0, keepdims=True), None),
        ("mean", lambda t: ad.mean(t, axis=0, keepdims=True), None),
        ("softmax", lambda t: ad.softmax(t), None),
        ("log_softmax", lambda t: ad.log_softmax(t), None),
        ("reshape", lambda t: ad.reshape(t, (-1,)), None),
        ("transpose", ad.transpose, None),
        ("slice", lambda t: t[1:, ::2], None),
    ]


def _binary_cases():
    return [
        ("add", ad.add, None),
        ("sub", ad.sub, None),
        ("mul", ad.mul, None),
        ("div", ad.div, lambda b: np.sign(b + 1e-12) * (np.abs(b) + 0.5)),
        ("atan2", ad.atan2, lambda b: np.sign(b + 1e-12) * (np.abs(b) + 0.5)),
        ("concat", lambda a, b: ad.concat([a, b], axis=1), None),
        ("stack", lambda a, b: ad.stack([a, b], axis=0), None),
    ]


def _weighted(fn, weights_for):
    """Scalarise an op's output with fixed random weights so every output entry matters."""
    def f(*xs):
        y = fn(*xs)
        return ad.sum_(y * weights_for(y.shape))
    return f


def primitive_checks(seed: int = 0, trials: int = 100, shape=(3, 4)) -> list[CheckResult]:
    """Max error per primitive over ``trials`` random inputs in [-2, 2]."""
    rng = np.random.default_rng(seed)
    cache = {}

    def weights_for(s):
        if s not in cache:
            cache[s] = rng.uniform(0.5, 1.5, size=s)
        return cache[s]

    results = []
    for name, fn, prep in _unary_cases(rng):
        worst = 0.0
        for _ in range(trials):
            x = rng.uniform(-2, 2, size=shape)
            x = prep(x) if prep else x
            worst = max(worst, grad_check(_weighted(fn, weights_for), x))
        results.append(CheckResult(name, worst))
    for name, fn, prep in _binary_cases():
        worst = 0.0
        for _ in range(trials):
            a = rng.uniform(-2, 2, size=shape)
            b = rng.uniform(-2, 2, size=shape)
            b = prep(b) if prep else b
            worst = max(worst, grad_check(_weighted(fn, weights_for), [a, b]))
        results.append(CheckResult(name, worst))
    worst = 0.0
    for _ in range(trials):
        a, b = rng.uniform(-2, 2, size=(3, 4)), rng.uniform(-2, 2, size=(4, 2))
        worst = max(worst, grad_check(_weighted(ad.matmul, weights_for), [a, b]))
    results.append(CheckResult("matmul", worst))
    worst = 0.0
    for _ in range(max(1, trials // 10)):
        x = rng.uniform(-2, 2, size=(2, 2, 5, 5))
        w = rng.uniform(-2, 2, size=(3, 2, 3, 3))
        bias = rng.uniform(-2, 2, size=(3,))
        conv = lambda x_, w_, b_: ad.conv2d(x_, w_, b_, stride=2, padding=1)  # noqa: E731
        worst = max(worst, grad_check(_weighted(conv, weights_for), [x, w, bias]))
    results.append(CheckResult("conv2d", worst))
    return results


def kinematic_checks(seed: int = 0) -> list[CheckResult]:
    """Bicycle step x-coordinate w.r.t. steering, and a short rollout w.r.t. all actions."""
    rng = np.random.default_rng(seed)
    g = VehicleGeometry(1.2, 1.4)
    s0 = State(0.0, 0.0, 0.0, 10.0).as_array()

    def step_x(delta):
        actions = ad.stack([ad.as_tensor(np.array([1.0])), delta], axis=-1).reshape(1, 2)
        return differentiable_rollout(s0, actions, g, 0.3)[0, 0]

    results = [CheckResult("bicycle_step_x_wrt_delta", grad_check(step_x, np.array([Action(1.0, 0.1).delta])),
                           1e-5)]
    actions = np.stack([rng.uniform(-3, 3, 6), rng.uniform(-0.4, 0.4, 6)], axis=1)
    w = rng.uniform(0.5, 1.5, size=(6, 2))
    results.append(CheckResult(
        "rollout_positions",
        grad_check(lambda a: ad.sum_(differentiable_rollout(s0, a, g, 0.3) * w), actions)))
    return results


def _tiny_problem(seed, architecture="ffw"):
    from .data import extract_snippets, synth_dataset
    from .models.asp import build_model
    from .models.batching import make_batch
    from .models.config import LossConfig, ModelConfig
    from .models.training import scaling_from_snippets

    T = 4
    tracks, maps = synth_dataset(["left_turn", "right_turn"], 3, seed=seed, duration=4.0, gap=0.0)
    snippets = extract_snippets(tracks, segments=1 if architecture == "ffw" else 2, T=T, maps=maps)
    picks = np.random.default_rng(seed).choice(len(snippets), size=2, replace=False)
    snippets = [snippets[i] for i in sorted(picks)]
    cfg = ModelConfig(architecture=architecture, feature_size=8, hidden_size=8, layers=1, T=T,
                      reconstructor_sizes=(8,), conv_widths=(2, 2, 2), raster_size=16, meters_per_pixel=2.0,
                      history_snapshots=2, segments=1 if architecture == "ffw" else 2,
                      scaling=scaling_from_snippets(snippets))
    model = build_model(cfg, LossConfig(M=2), seed=seed)
    batch = make_batch(snippets, cfg, intervals=1 if architecture == "ffw" else 3)
    return model, batch


def model_checks(seed: int = 0, max_coordinates: int = 6) -> list[CheckResult]:
    """End-to-end loss gradients (F=8, T=4, M=2, batch of 2) against finite differences."""
    results = []
    for arch in ("ffw", "ssp"):
        model, batch = _tiny_problem(seed, arch)
        params = model.parameters()
        err = grad_check_parameters(lambda: model.loss(batch)[0], params, max_coordinates=max_coordinates,
                                    seed=seed)
        results.append(CheckResult(f"{arch}_loss_all_parameters", err))
    return results


def run_suite(seed: int = 0, trials: int = 100) -> list[CheckResult]:
    return primitive_checks(seed, trials) + kinematic_checks(seed) + model_checks(seed)
