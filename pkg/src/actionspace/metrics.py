"""Displacement metrics over position trajectories (..., T, 2)."""
from __future__ import annotations

import numpy as np

from .errors import ContractError


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape[-2:] != gt.shape[-2:] or pred.shape[-1] != 2:
        raise ContractError(f"trajectory shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def mae(pred, gt) -> float:
    """Mean over steps (and samples) of the per-step L1 distance |dx| + |dy|."""
    pred, gt = _pair(pred, gt)
    return float(np.abs(pred - gt).sum(axis=-1).mean())


def mse(pred, gt) -> float:
    """Mean over steps (and samples) of the squared Euclidean distance, in m^2."""
    pred, gt = _pair(pred, gt)
    return float(((pred - gt) ** 2).sum(axis=-1).mean())


def fde(pred, gt) -> float:
    """Euclidean distance at the final step, averaged over samples."""
    pred, gt = _pair(pred, gt)
    return float(np.linalg.norm(pred[..., -1, :] - gt[..., -1, :], axis=-1).mean())


def per_sample(pred, gt):
    """Per-trajectory (mae, mse, fde) arrays over the leading axes."""
    pred, gt = _pair(pred, gt)
    d = pred - gt
    return (np.abs(d).sum(axis=-1).mean(axis=-1),
            (d ** 2).sum(axis=-1).mean(axis=-1),
            np.linalg.norm(d[..., -1, :], axis=-1))
