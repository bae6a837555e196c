"""Huber regression, winner-takes-all mode selection and the two training losses."""
from __future__ import annotations

import math

import numpy as np

from ..kinematics import differentiable_rollout, wrap_angle
from ..numeric import tensor as ad
from .config import LossConfig


def huber_value(delta, h: float = 1.0):
    """Plain-number Huber penalty."""
    d = np.abs(np.asarray(delta, dtype=float))
    return np.where(d < h, 0.5 * d * d, h * (d - 0.5 * h))


def huber_term(residual, h: float = 1.0):
    """Per-coordinate Huber summed over all non-batch axes, averaged over the batch."""
    residual = ad.as_tensor(residual)
    B = residual.shape[0]
    return ad.huber(residual, h).reshape(B, -1).sum(axis=1).mean()


def mode_select(mode_positions, gt_positions, origin=(0.0, 0.0), angle_gate_deg: float = 45.0) -> int:
    """Index of the mode closest to the ground truth.

    Candidates are modes whose final point, seen from ``origin``, lies within
    ``angle_gate_deg`` of the ground-truth final point; among them (or among
    all modes if none passes) the smallest mean pointwise L2 distance wins.
    Ties go to the lowest index.
    """
    modes = np.asarray(mode_positions, dtype=float)
    gt = np.asarray(gt_positions, dtype=float)
    origin = np.asarray(origin, dtype=float)
    dist = np.linalg.norm(modes - gt, axis=-1).mean(axis=-1)
    end = modes[:, -1] - origin
    gt_end = gt[-1] - origin
    diff = np.abs(wrap_angle(np.arctan2(end[:, 1], end[:, 0]) - math.atan2(gt_end[1], gt_end[0])))
    passing = np.flatnonzero(diff < math.radians(angle_gate_deg))
    candidates = passing if len(passing) else np.arange(len(modes))
    return int(candidates[np.argmin(dist[candidates])])


def mode_select_batch(mode_positions, gt_positions, origins=None, angle_gate_deg: float = 45.0):
    """Row-wise :func:`mode_select` over (B, M, T, 2) / (B, T, 2)."""
    mode_positions = np.asarray(mode_positions)
    if origins is None:
        origins = np.zeros((len(mode_positions), 2))
    return np.array([mode_select(m, g, o, angle_gate_deg)
                     for m, g, o in zip(mode_positions, gt_positions, origins)], dtype=np.intp)


def regression_term(outputs, targets, selected, h: float = 1.0):
    """Huber on the selected mode: ``outputs`` (B, M, T, D), ``targets`` (B, T, D)."""
    B = outputs.shape[0]
    chosen = outputs[np.arange(B), np.asarray(selected, dtype=np.intp)]
    return huber_term(chosen - targets, h)


def classification_term(logits, selected):
    """Cross-entropy of the selected mode: mean of ``-log softmax(logits)[m]``."""
    B = logits.shape[0]
    return -(ad.log_softmax(logits, axis=-1)[np.arange(B), np.asarray(selected, dtype=np.intp)].mean())


def multimodal_terms(positions, logits, gt_positions, cfg: LossConfig, origins=None,
                     outputs=None, targets=None):
    """(regression, classification, selected modes) for one prediction pass.

    Modes are matched on positions; regression uses ``outputs``/``targets``
    when given (full states) and positions otherwise.
    """
    selected = mode_select_batch(positions.data, gt_positions, origins, cfg.angle_gate_deg)
    if outputs is None:
        outputs, targets = positions, gt_positions
    reg = regression_term(outputs, targets, selected, cfg.h)
    cls = classification_term(logits, selected)
    return reg, cls, selected


def loss_ffw(actions, logits, gt_positions, s0, g, dt, cfg: LossConfig):
    """Multi-modal loss on physical actions (B, M, T, 2) rolled out from ``s0`` (B, 4).

    Returns ``(total, components)``.
    """
    M = actions.shape[1]
    s0 = np.repeat(np.asarray(s0, dtype=float)[:, None, :], M, axis=1)
    positions = differentiable_rollout(s0, actions, g, dt)
    reg, cls, selected = multimodal_terms(positions, logits, gt_positions, cfg)
    return reg + cls, {"regression": reg.item(), "classification": cls.item(), "selected": selected}


def loss_ssp_total(reconstruction, feature, regressions, classifications, cfg: LossConfig):
    """Weighted sum of the four self-supervised terms; the last two are averaged over passes."""
    reg = regressions[0]
    for r in regressions[1:]:
        reg = reg + r
    cls = classifications[0]
    for c in classifications[1:]:
        cls = cls + c
    n = len(regressions)
    return (cfg.w1 * reconstruction + cfg.w2 * feature
            + cfg.w3 * (reg * (1.0 / n)) + cfg.w4 * (cls * (1.0 / n)))
