"""The four learned maps: encoder, action predictor, feature predictor, action reconstructor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..numeric import tensor as ad
from ..numeric.tensor import Tensor
from .config import ModelConfig
from .layers import GRU, MLP, Conv2d, Linear, Module


@dataclass
class Features:
    """Latent features for one interval, tagged ``encoded`` or ``predicted``."""

    value: Tensor
    provenance: str

    def __post_init__(self):
        if self.provenance not in ("encoded", "predicted"):
            raise ValueError(f"bad provenance {self.provenance!r}")


@dataclass
class ModeSet:
    """M candidate output sequences with unnormalised scores.

    ``raw`` is (B, M, steps, D) with entries in [-1, 1]; ``logits`` is (B, M).
    """

    raw: Tensor
    logits: Tensor

    @property
    def M(self):
        return self.logits.shape[-1]

    @property
    def probabilities(self):
        return ad.softmax(self.logits.detach(), axis=-1).data

    def detach(self):
        return ModeSet(self.raw.detach(), self.logits.detach())


def _conv_out(n):
    return (n + 2 - 3) // 2 + 1


class ConvEncoder(Module):
    """Three stride-2 3x3 convolutions, then a linear map to F with tanh."""

    def __init__(self, shape, widths, F, rng):
        c, h, w = shape
        self.input_shape = tuple(shape)
        self.convs = []
        for width in widths:
            self.convs.append(Conv2d(c, width, 3, rng, stride=2, padding=1))
            c, h, w = width, _conv_out(h), _conv_out(w)
        self.flat = c * h * w
        self.out = Linear(self.flat, F, rng)

    def __call__(self, x):
        for conv in self.convs:
            x = ad.relu(conv(x))
        return ad.tanh(self.out(x.reshape(x.shape[0], self.flat)))


class VectorEncoder(Module):
    """MLP encoder for the hand-packed feature-vector context."""

    def __init__(self, shape, hidden, F, rng):
        self.input_shape = tuple(shape)
        self.mlp = MLP([shape[0], *hidden, F], rng, out_activation=ad.tanh)

    def __call__(self, x):
        return self.mlp(x)


def build_encoder(cfg: ModelConfig, rng):
    if cfg.encoder == "tiny_conv":
        return ConvEncoder(cfg.context_shape, cfg.conv_widths, cfg.feature_size, rng)
    return VectorEncoder(cfg.context_shape, cfg.encoder_hidden, cfg.feature_size, rng)


def encode(encoder, context) -> Features:
    """Apply the encoder to a batch of contexts (B, *context_shape)."""
    context = ad.as_tensor(context)
    if tuple(context.shape[1:]) != encoder.input_shape:
        raise ConfigurationError(
            f"context shape {tuple(context.shape[1:])} does not match encoder input {encoder.input_shape}")
    return Features(encoder(context), "encoded")


class ActionPredictor(Module):
    """Recurrent decoder from (context features, input history) to M output sequences.

    A history GRU reads the input sequence; its final state initialises an
    autoregressive decoder GRU that feeds back all M previous outputs. With
    ``inject`` the context vector is concatenated to every step's input,
    otherwise it only sets the initial hidden state.
    """

    def __init__(self, ctx_dim, hist_dim, out_dim, M, hidden, layers, rng, inject=True):
        self.ctx_dim, self.hist_dim, self.out_dim, self.M = ctx_dim, hist_dim, out_dim, M
        self.inject = inject
        extra = ctx_dim if inject else 0
        self.history = GRU(hist_dim + extra, hidden, layers, rng)
        self.init = None if inject else Linear(ctx_dim, hidden * layers, rng)
        self.decoder = GRU(M * out_dim + extra, hidden, layers, rng)
        self.head = Linear(hidden, M * out_dim, rng)
        self.score = Linear(hidden + ctx_dim, M, rng)

    def _initial(self, ctx, batch):
        if self.inject:
            return self.history.initial_state(batch)
        h0 = ad.tanh(self.init(ctx))
        H = self.history.hidden
        return [h0[:, i * H:(i + 1) * H] for i in range(len(self.history.cells))]

    def __call__(self, ctx, history, horizon) -> ModeSet:
        ctx = ad.as_tensor(ctx)
        history = ad.as_tensor(history)
        B, steps = history.shape[0], history.shape[1]
        hs = self._initial(ctx, B)
        top = hs[-1]
        for t in range(steps):
            x = history[:, t]
            top, hs = self.history.step(ad.concat([x, ctx], axis=1) if self.inject else x, hs)
        logits = self.score(ad.concat([top, ctx], axis=1))
        if self.hist_dim == self.out_dim and steps:
            prev = ad.concat([history[:, steps - 1]] * self.M, axis=1)
        else:
            prev = Tensor._wrap(np.zeros((B, self.M * self.out_dim)))
        outs = []
        for _ in range(horizon):
            top, hs = self.decoder.step(ad.concat([prev, ctx], axis=1) if self.inject else prev, hs)
            prev = ad.tanh(self.head(top))
            outs.append(prev)
        raw = ad.stack(outs, axis=1).reshape(B, horizon, self.M, self.out_dim).transpose(0, 2, 1, 3)
        return ModeSet(raw, logits)


class FeaturePredictor(Module):
    """Forward model: GRU over an action sequence conditioned on the current features."""

    def __init__(self, F, action_dim, hidden, layers, rng):
        self.gru = GRU(action_dim + F, hidden, layers, rng)
        self.out = Linear(hidden, F, rng)

    def __call__(self, z, actions) -> Features:
        z = ad.as_tensor(z)
        actions = ad.as_tensor(actions)
        hs = self.gru.initial_state(z.shape[0])
        top = hs[-1]
        for t in range(actions.shape[1]):
            top, hs = self.gru.step(ad.concat([actions[:, t], z], axis=1), hs)
        return Features(ad.tanh(self.out(top)), "predicted")


class ActionReconstructor(Module):
    """Inverse model: MLP from two consecutive feature vectors to T raw actions."""

    def __init__(self, F, sizes, T, rng):
        self.T = T
        self.mlp = MLP([2 * F, *sizes, 2 * T], rng, out_activation=ad.tanh)

    def __call__(self, z_a, z_b):
        out = self.mlp(ad.concat([ad.as_tensor(z_a), ad.as_tensor(z_b)], axis=1))
        return out.reshape(out.shape[0], self.T, 2)
