"""Model, loss and action-scaling configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigurationError
from ..kinematics import DEFAULT_DT, DEFAULT_STEPS
from ..raster import RasterConfig, feature_vector_size

MAPPINGS = ("action_to_action", "state_to_action", "state_to_position", "state_to_state")
ENCODERS = ("tiny_conv", "mlp_on_feature_vector")
ARCHITECTURES = ("ffw", "ssp")

# fixed normalisers for state inputs/outputs
POSITION_SCALE = 30.0
SPEED_SCALE = 10.0


@dataclass
class LossConfig:
    h: float = 1.0
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    w4: float = 1.0
    M: int = 3
    mapping: str = "action_to_action"
    angle_gate_deg: float = 45.0

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigurationError("Huber cutoff h must be positive")
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if int(self.M) < 1:
            raise ConfigurationError("mode count M must be at least 1")
        self.M = int(self.M)
        if self.mapping not in MAPPINGS:
            raise ConfigurationError(f"unknown mapping {self.mapping!r}; expected one of {MAPPINGS}")

    @property
    def uses_kinematics(self):
        return self.mapping in ("action_to_action", "state_to_action")


@dataclass
class ActionScaling:
    """Affine map between raw network outputs in [-1, 1] and physical actions."""

    a_min: float = -3.0
    a_max: float = 3.0
    delta_min: float = -0.5
    delta_max: float = 0.5

    def __post_init__(self):
        vals = [self.a_min, self.a_max, self.delta_min, self.delta_max]
        if not np.isfinite(vals).all() or not (self.a_min < self.a_max and self.delta_min < self.delta_max):
            raise ConfigurationError("action scaling ranges must be finite with min < max")

    @classmethod
    def from_actions(cls, actions, margin: float = 0.05, min_span=(0.5, 0.05)):
        """Ranges observed in ``actions`` (..., 2), widened by ``margin`` and to a minimum span."""
        flat = np.asarray(actions, dtype=float).reshape(-1, 2)
        if len(flat) == 0:
            return cls()
        # keep zero inside the range so straight, constant-speed motion is always representable
        lo, hi = np.minimum(flat.min(axis=0), 0.0), np.maximum(flat.max(axis=0), 0.0)
        out = []
        for k in range(2):
            centre, half = (lo[k] + hi[k]) / 2, (hi[k] - lo[k]) / 2 * (1 + margin)
            half = max(half, min_span[k] / 2)
            out += [centre - half, centre + half]
        return cls(*(float(v) for v in out))

    @property
    def centre(self):
        return np.array([(self.a_min + self.a_max) / 2, (self.delta_min + self.delta_max) / 2])

    @property
    def half_span(self):
        return np.array([(self.a_max - self.a_min) / 2, (self.delta_max - self.delta_min) / 2])

    @property
    def bounds(self):
        return (self.a_min, self.a_max), (self.delta_min, self.delta_max)

    def to_physical(self, raw):
        return raw * self.half_span + self.centre

    def to_raw(self, actions):
        return (np.asarray(actions, dtype=float) - self.centre) / self.half_span


@dataclass
class ModelConfig:
    architecture: str = "ffw"
    feature_size: int = 64
    hidden_size: int = 64
    layers: int = 2
    reconstructor_sizes: tuple = (32, 16)
    encoder: str = "tiny_conv"
    conv_widths: tuple = (8, 16, 16)
    encoder_hidden: tuple = (64,)
    raster_variant: str = "chauffeurnet"
    raster_size: int = 64
    meters_per_pixel: float = 0.5
    history_snapshots: int = 4
    dt: float = DEFAULT_DT
    T: int = DEFAULT_STEPS
    segments: int = 1
    inject_every_step: bool = True
    use_action_history: bool = True
    expand_chained_modes: bool = False
    scaling: ActionScaling = field(default_factory=ActionScaling)

    def __post_init__(self):
        if isinstance(self.scaling, dict):
            self.scaling = ActionScaling(**self.scaling)
        self.reconstructor_sizes = tuple(int(s) for s in self.reconstructor_sizes)
        self.conv_widths = tuple(int(s) for s in self.conv_widths)
        self.encoder_hidden = tuple(int(s) for s in self.encoder_hidden)
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.architecture!r}")
        if self.encoder not in ENCODERS:
            raise ConfigurationError(f"unknown encoder {self.encoder!r}; expected one of {ENCODERS}")
        sizes = [self.feature_size, self.hidden_size, self.layers, self.T, self.raster_size,
                 *self.reconstructor_sizes, *self.conv_widths]
        if min(sizes) < 1 or not self.dt > 0:
            raise ConfigurationError("model sizes, T and dt must be positive")
        if self.segments not in (1, 2):
            raise ConfigurationError("segments must be 1 or 2")

    @property
    def raster(self) -> RasterConfig:
        return RasterConfig(self.raster_variant, self.raster_size, self.raster_size,
                            self.meters_per_pixel, self.history_snapshots)

    @property
    def context_shape(self):
        if self.encoder == "tiny_conv":
            r = self.raster
            return (r.channels, r.height, r.width)
        return (feature_vector_size(),)

    def to_dict(self):
        d = asdict(self)
        d["reconstructor_sizes"] = list(self.reconstructor_sizes)
        d["conv_widths"] = list(self.conv_widths)
        d["encoder_hidden"] = list(self.encoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def full_scale(cls, **overrides):
        """Full-size layer widths (encoder stays the small convolution)."""
        base = dict(feature_size=512, hidden_size=512, layers=2, reconstructor_sizes=(256, 128, 64))
        base.update(overrides)
        return cls(**base)
