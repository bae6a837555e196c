"""Central finite-difference checks for the autodiff primitives and models."""
from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .tensor import Graph, Tensor, backward


def _scalar(value) -> float:
    v = value.data if isinstance(value, Tensor) else np.asarray(value)
    if v.size != 1:
        raise NumericError(f"function must return a scalar, got shape {v.shape}")
    v = float(v.reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError(f"function value is not finite: {v}")
    return v


def _relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))


def grad_check(function, point, epsilon: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``point`` is an array or a sequence of arrays; ``function`` receives one
    tensor per array and must return a scalar tensor. The error per coordinate
    is ``|analytic - fd| / max(1, |fd|)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    single = isinstance(point, (np.ndarray, float, int)) or (
        isinstance(point, (list, tuple)) and point and np.isscalar(point[0]))
    arrays = [np.array(point, dtype=np.float64)] if single else [np.array(p, dtype=np.float64) for p in point]

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Graph() as graph:
        out = function(*leaves)
        _scalar(out)
        if out in graph:
            backward(graph, out)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros(leaf.shape) for leaf in leaves]

    worst = 0.0
    for k, base in enumerate(arrays):
        for idx in np.ndindex(base.shape):
            shifted = [a.copy() for a in arrays]
            shifted[k][idx] = base[idx] + epsilon
            f_plus = _scalar(function(*[Tensor(a) for a in shifted]))
            shifted[k][idx] = base[idx] - epsilon
            f_minus = _scalar(function(*[Tensor(a) for a in shifted]))
            fd = (f_plus - f_minus) / (2 * epsilon)
            worst = max(worst, float(_relative_error(analytic[k][idx], fd)))
    return worst


def grad_check_parameters(loss_fn, parameters, epsilon: float = 1e-5,
                          max_coordinates: int | None = None, seed: int = 0) -> float:
    """Finite-difference check of ``loss_fn()`` against named parameter tensors.

    Parameters are perturbed in place and restored. ``max_coordinates`` caps
    the number of checked coordinates per parameter (sampled with ``seed``).
    """
    params = dict(parameters)
    for p in params.values():
        p.grad = None
    with Graph() as graph:
        out = loss_fn()
        _scalar(out)
        backward(graph, out)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        flat = list(np.ndindex(p.shape))
        if max_coordinates is not None and len(flat) > max_coordinates:
            picks = rng.choice(len(flat), size=max_coordinates, replace=False)
            flat = [flat[i] for i in sorted(picks)]
        for idx in flat:
            orig = p.data[idx]
            p.data[idx] = orig + epsilon
            f_plus = _scalar(loss_fn())
            p.data[idx] = orig - epsilon
            f_minus = _scalar(loss_fn())
            p.data[idx] = orig
            fd = (f_plus - f_minus) / (2 * epsilon)
            worst = max(worst, float(_relative_error(analytic[idx], fd)))
    return worst
