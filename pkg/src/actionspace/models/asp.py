"""Feed-forward and self-supervised action-space predictors.

Both models work in the ego frame at the present time (ego at the origin
facing +x). Network outputs are raw values in [-1, 1]; for the kinematic
mappings they are scaled to physical actions and rolled out through the
differentiable bicycle model, for the state mappings they are scaled to
positions (and heading/speed) directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ContractError
from ..kinematics import VehicleGeometry, differentiable_rollout, is_feasible
from ..numeric import tensor as ad
from ..numeric.tensor import Tensor
from .batching import Batch
from .config import POSITION_SCALE, SPEED_SCALE, LossConfig, ModelConfig
from .layers import Module
from .losses import huber_term, mode_select_batch, multimodal_terms
from .networks import ActionPredictor, ActionReconstructor, FeaturePredictor, ModeSet, build_encoder, encode

# direct-regression outputs are bounded by this speed times the horizon
OUTPUT_SPEED = 20.0
POLICIES = ("highest_prob", "label_match")


@dataclass
class Prediction:
    """Inference output in the ego frame.

    ``positions`` (B, K, steps, 2) are complete trajectories over all
    requested segments with probabilities (B, K); ``states`` are present for
    the kinematic mappings. ``mode_sets`` holds the per-segment network
    outputs and ``chained`` the segment-1 mode fed into segment 2.
    """

    positions: np.ndarray
    probabilities: np.ndarray
    states: np.ndarray | None
    mode_sets: list = field(default_factory=list)
    chained: np.ndarray | None = None

    @property
    def best_index(self):
        return np.argmax(self.probabilities, axis=1)


def chain_policy(mode_set: ModeSet, policy: str = "highest_prob", positions=None, gt_positions=None,
                 origins=None, training: bool = False, angle_gate_deg: float = 45.0):
    """Pick one mode per sample to feed the next segment; returns indices (B,)."""
    if policy == "highest_prob":
        return np.argmax(mode_set.logits.data, axis=-1)
    if policy == "label_match":
        if not training or gt_positions is None:
            raise ContractError("label_match needs ground truth and is only available during training")
        return mode_select_batch(positions, gt_positions, origins, angle_gate_deg)
    raise ContractError(f"unknown chaining policy {policy!r}; expected one of {POLICIES}")


def _gather(t: Tensor, index):
    return t[np.arange(t.shape[0]), np.asarray(index, dtype=np.intp)]


class ASPModel(Module):
    """Shared plumbing: encoder, input history and output decoding."""

    def __init__(self, cfg: ModelConfig, loss: LossConfig | None = None, seed: int = 0):
        self.cfg = cfg
        self.loss_cfg = loss or LossConfig()
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.encoder = build_encoder(cfg, self.rng)

    # ---------------------------------------------------------------- io
    @property
    def mapping(self):
        return self.loss_cfg.mapping

    @property
    def kinematic(self):
        return self.loss_cfg.uses_kinematics

    @property
    def hist_dim(self):
        return 2 if self.mapping == "action_to_action" else 4

    @property
    def out_dim(self):
        return {"state_to_position": 2, "state_to_state": 4}.get(self.mapping, 2)

    def history_input(self, batch: Batch):
        if self.mapping == "action_to_action":
            hist = self.cfg.scaling.to_raw(batch.past_actions)
        else:
            s = batch.past_states
            hist = np.stack([s[..., 0] / POSITION_SCALE, s[..., 1] / POSITION_SCALE,
                             s[..., 2], s[..., 3] / SPEED_SCALE], axis=-1)
        if not self.cfg.use_action_history:
            hist = np.zeros_like(hist)
        return hist

    def decode(self, mode_set: ModeSet, s0, geometry):
        """Raw mode outputs -> (positions, states or None, regression outputs)."""
        raw = mode_set.raw
        B, M, steps, _ = raw.shape
        if self.kinematic:
            sc = self.cfg.scaling
            actions = raw * sc.half_span + sc.centre
            s0 = ad.as_tensor(s0)
            s0m = ad.stack([s0] * M, axis=1) if s0.ndim == 2 else s0
            pos, states = differentiable_rollout(s0m, actions, geometry, self.cfg.dt, return_states=True)
            return pos, states, pos
        span = OUTPUT_SPEED * steps * self.cfg.dt
        if self.mapping == "state_to_position":
            pos = raw * span
            return pos, None, pos
        states = raw * np.array([span, span, math.pi, OUTPUT_SPEED])
        return states[..., :2], states, states

    def regression_targets(self, gt_states):
        return gt_states if self.mapping == "state_to_state" else gt_states[..., :2]

    def to_physical(self, raw):
        return self.cfg.scaling.to_physical(raw)


class FFWASP(ASPModel):
    """Encoder plus one recurrent action predictor over the whole horizon."""

    def __init__(self, cfg: ModelConfig, loss: LossConfig | None = None, seed: int = 0):
        super().__init__(cfg, loss, seed)
        self.gamma = ActionPredictor(cfg.feature_size, self.hist_dim, self.out_dim, self.loss_cfg.M,
                                     cfg.hidden_size, cfg.layers, self.rng, cfg.inject_every_step)

    def forward(self, batch: Batch, segments: int | None = None):
        segments = segments or self.cfg.segments
        z = encode(self.encoder, batch.contexts[0])
        ms = self.gamma(z.value, self.history_input(batch), segments * self.cfg.T)
        pos, states, outputs = self.decode(ms, batch.s0, batch.geometry)
        return ms, pos, states, outputs

    def loss(self, batch: Batch):
        """Regression plus classification on the selected mode; returns (total, components)."""
        ms, pos, _, outputs = self.forward(batch)
        gt = batch.future_states[:, :self.cfg.segments * self.cfg.T]
        reg, cls, _ = multimodal_terms(pos, ms.logits, gt[..., :2], self.loss_cfg,
                                       outputs=outputs, targets=self.regression_targets(gt))
        total = reg + cls
        return total, {"total": total.item(), "regression": reg.item(), "classification": cls.item()}

    def infer(self, batch: Batch, segments: int = 1, policy: str = "highest_prob") -> Prediction:
        ms, pos, states, _ = self.forward(batch, segments)
        return Prediction(pos.data, ms.probabilities, None if states is None else states.data,
                          [ms.detach()])


class SSPASP(ASPModel):
    """Self-supervised predictor with forward (psi) and inverse (xi) feature models."""

    def __init__(self, cfg: ModelConfig, loss: LossConfig | None = None, seed: int = 0):
        super().__init__(cfg, loss, seed)
        if self.mapping != "action_to_action":
            raise ConfigurationError("the self-supervised model supports only the action_to_action mapping")
        F = cfg.feature_size
        self.psi = FeaturePredictor(F, 2, cfg.hidden_size, cfg.layers, self.rng)
        self.xi = ActionReconstructor(F, cfg.reconstructor_sizes, cfg.T, self.rng)
        self.gamma = ActionPredictor(2 * F, 2, 2, self.loss_cfg.M, cfg.hidden_size, cfg.layers,
                                     self.rng, cfg.inject_every_step)

    def _predict(self, z_a, z_b, hist, s0, geometry):
        ms = self.gamma(ad.concat([z_a, z_b], axis=1), hist, self.cfg.T)
        pos, states, _ = self.decode(ms, s0, geometry)
        return ms, pos, states

    def _segment_loss(self, z_a, z_a_hat, z_b, hist, target_actions, s0, gt_states, geometry,
                      origins, pretrain):
        """Terms for one interval; ``z_a_hat`` is the predicted counterpart of ``z_a`` (or z_a itself)."""
        cfg = self.loss_cfg
        rec = huber_term(self.xi(z_a, z_b) - target_actions, cfg.h)
        z_b_hat = self.psi(z_a_hat, hist).value
        feat = huber_term(z_b - z_b_hat, cfg.h)
        parts = {"reconstruction": rec, "feature": feat}
        if pretrain:
            return cfg.w1 * rec + cfg.w2 * feat, parts, z_b_hat, None
        gt_pos = gt_states[..., :2]
        ms_e, pos_e, _ = self._predict(z_a, z_b, hist, s0, geometry)
        ms_p, pos_p, st_p = self._predict(z_a_hat, z_b_hat, hist, s0, geometry)
        reg_e, cls_e, _ = multimodal_terms(pos_e, ms_e.logits, gt_pos, cfg, origins)
        reg_p, cls_p, sel_p = multimodal_terms(pos_p, ms_p.logits, gt_pos, cfg, origins)
        reg = (reg_e + reg_p) * 0.5
        cls = (cls_e + cls_p) * 0.5
        total = cfg.w1 * rec + cfg.w2 * feat + cfg.w3 * reg + cfg.w4 * cls
        parts.update(regression=reg, classification=cls)
        return total, parts, z_b_hat, (ms_p, st_p, sel_p)

    def loss(self, batch: Batch, pretrain: bool = False):
        """Self-supervised loss over ``cfg.segments`` intervals; ``pretrain`` keeps only w1/w2 terms."""
        T = self.cfg.T
        sc = self.cfg.scaling
        z = [encode(self.encoder, c).value for c in batch.contexts[:self.cfg.segments + 1]]
        hist = self.history_input(batch)
        total, parts, z1_hat, pred = self._segment_loss(
            z[0], z[0], z[1], hist, hist, batch.s0, batch.future_states[:, :T], batch.geometry, None, pretrain)
        comps = {k: v.item() for k, v in parts.items()}
        if self.cfg.segments == 2:
            if pretrain:
                chained = sc.to_raw(batch.future_actions[:, :T])
                s1 = batch.future_states[:, T - 1]
            else:
                ms_p, st_p, sel = pred
                chained = _gather(ms_p.raw, sel)
                s1 = _gather(st_p, sel)[:, T - 1]
            origins = s1.data[:, :2] if isinstance(s1, Tensor) else s1[:, :2]
            total2, parts2, _, _ = self._segment_loss(
                z[1], z1_hat, z[2], chained, sc.to_raw(batch.future_actions[:, :T]), s1,
                batch.future_states[:, T:2 * T], batch.geometry, origins, pretrain)
            total = total + total2
            for k, v in parts2.items():
                comps[k] += v.item()
        comps["total"] = total.item()
        return total, comps

    def infer(self, batch: Batch, segments: int = 1, policy: str = "highest_prob",
              features: str = "predicted") -> Prediction:
        """Alternate psi and gamma over ``segments`` intervals.

        ``features='encoded'`` substitutes encoded future features (a
        diagnostic needing contexts for every interval).
        """
        if policy != "highest_prob":
            raise ContractError("inference chains segments with the highest_prob policy only")
        if features not in ("predicted", "encoded"):
            raise ContractError(f"features must be 'predicted' or 'encoded', got {features!r}")
        z0 = encode(self.encoder, batch.contexts[0]).value
        hist = self.history_input(batch)
        z1 = (encode(self.encoder, batch.contexts[1]).value if features == "encoded"
              else self.psi(z0, hist).value)
        ms1, pos1, st1 = self._predict(z0, z1, hist, batch.s0, batch.geometry)
        if segments == 1:
            return Prediction(pos1.data, ms1.probabilities, st1.data, [ms1.detach()])
        B, M = pos1.shape[:2]
        if self.cfg.expand_chained_modes:
            return self._infer_expanded(batch, z1, ms1, pos1, st1, features)
        pick = chain_policy(ms1, "highest_prob")
        a1 = _gather(ms1.raw, pick)
        s1 = _gather(st1, pick)[:, -1]
        z2 = (encode(self.encoder, batch.contexts[2]).value if features == "encoded"
              else self.psi(z1, a1).value)
        ms2, pos2, st2 = self._predict(z1, z2, a1, s1, batch.geometry)
        head_pos = np.repeat(pos1.data[np.arange(B), pick][:, None], M, axis=1)
        head_st = np.repeat(st1.data[np.arange(B), pick][:, None], M, axis=1)
        return Prediction(np.concatenate([head_pos, pos2.data], axis=2), ms2.probabilities,
                          np.concatenate([head_st, st2.data], axis=2), [ms1.detach(), ms2.detach()], pick)

    def _infer_expanded(self, batch, z1, ms1, pos1, st1, features):
        """All M x M chained trajectories with probabilities p(m1) p(m2 | m1)."""
        B, M = pos1.shape[:2]
        p1 = ms1.probabilities
        out_pos, out_st, out_p, sets = [], [], [], [ms1.detach()]
        for m in range(M):
            pick = np.full(B, m)
            a1 = _gather(ms1.raw, pick)
            s1 = _gather(st1, pick)[:, -1]
            z2 = (encode(self.encoder, batch.contexts[2]).value if features == "encoded"
                  else self.psi(z1, a1).value)
            ms2, pos2, st2 = self._predict(z1, z2, a1, s1, batch.geometry)
            sets.append(ms2.detach())
            head_pos = np.repeat(pos1.data[:, m][:, None], M, axis=1)
            head_st = np.repeat(st1.data[:, m][:, None], M, axis=1)
            out_pos.append(np.concatenate([head_pos, pos2.data], axis=2))
            out_st.append(np.concatenate([head_st, st2.data], axis=2))
            out_p.append(p1[:, m:m + 1] * ms2.probabilities)
        return Prediction(np.concatenate(out_pos, axis=1), np.concatenate(out_p, axis=1),
                          np.concatenate(out_st, axis=1), sets, None)


def build_model(cfg: ModelConfig, loss: LossConfig | None = None, seed: int = 0) -> ASPModel:
    cls = FFWASP if cfg.architecture == "ffw" else SSPASP
    return cls(cfg, loss, seed)


def infer(model: ASPModel, batch: Batch, segments: int = 1, policy: str = "highest_prob", **kwargs) -> Prediction:
    """Run a model without recording gradients."""
    if segments not in (1, 2):
        raise ContractError("segments must be 1 or 2")
    if policy not in POLICIES:
        raise ContractError(f"unknown chaining policy {policy!r}")
    if policy == "label_match":
        raise ContractError("label_match is a training-time policy and needs ground truth")
    return model.infer(batch, segments, policy, **kwargs)


def trajectory_states(prediction: Prediction, batch: Batch, dt: float):
    """States (B, K, steps + 1, 4) for the feasibility check, including the start state.

    Position-only predictions get heading and speed from finite differences.
    """
    B, K, steps, _ = prediction.positions.shape
    s0 = np.repeat(batch.s0[:, None, None, :], K, axis=1)
    if prediction.states is not None and prediction.states.shape[-1] == 4:
        return np.concatenate([s0, prediction.states], axis=2)
    pos = np.concatenate([s0[..., :2], prediction.positions], axis=2)
    d = np.diff(pos, axis=2)
    theta = np.arctan2(d[..., 1], d[..., 0])
    theta = np.concatenate([s0[..., 2], theta], axis=2)
    speed = np.concatenate([s0[..., 3], np.hypot(d[..., 0], d[..., 1]) / dt], axis=2)
    return np.concatenate([pos, theta[..., None], speed[..., None]], axis=-1)


def feasibility_flags(prediction: Prediction, batch: Batch, scaling, dt: float, tol: float = 2e-2):
    """Boolean (B, K): does each predicted trajectory pass the inverse-model check?"""
    states = trajectory_states(prediction, batch, dt)
    B, K = states.shape[:2]
    out = np.zeros((B, K), dtype=bool)
    for b in range(B):
        g = VehicleGeometry(float(batch.geometry.l_f[b, 0]), float(batch.geometry.l_r[b, 0]))
        for k in range(K):
            out[b, k] = is_feasible(states[b, k], scaling.bounds, g, dt, tol)
    return out
