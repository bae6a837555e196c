"""Model evaluation: MAE/MSE/FDE for the most probable mode and best-of-M, plus feasibility counts.

Metrics are computed in the world frame. Best-of-M takes the per-sample
minimum of each metric over the modes separately, so every best-of-M value
is at most its highest-probability counterpart.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .metrics import per_sample
from .models.asp import ASPModel, feasibility_flags, infer
from .models.batching import ContextCache, make_batch, positions_to_world

METRIC_NAMES = ("mae", "mse", "fde")


def dataset_fingerprint(snippets) -> str:
    """Short hash of snippet keys and state arrays."""
    h = hashlib.sha256()
    for s in snippets:
        h.update(repr(s.key).encode())
        h.update(np.ascontiguousarray(s.states, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def check_compatible(model: ASPModel, snippets, segments: int):
    cfg = model.cfg
    bad = []
    for s in snippets[:1]:
        if abs(s.dt - cfg.dt) > 1e-12:
            bad.append(f"dt (model {cfg.dt}, data {s.dt})")
        if s.T != cfg.T:
            bad.append(f"T (model {cfg.T}, data {s.T})")
        if s.segments < segments:
            bad.append(f"segments (requested {segments}, data {s.segments})")
    if bad:
        raise ConfigurationError("model and dataset are incompatible: " + ", ".join(bad))


def predict_world(model: ASPModel, snippets, segments: int = 1, batch_size: int = 64,
                  cache: ContextCache | None = None, features: str = "predicted"):
    """Yield ``(batch, prediction, world positions (B, K, steps, 2))`` per batch."""
    cache = cache or ContextCache(model.cfg)
    intervals = segments + 1 if features == "encoded" else 1
    kwargs = {"features": features} if features != "predicted" else {}
    for i in range(0, len(snippets), batch_size):
        part = snippets[i:i + batch_size]
        batch = make_batch(part, model.cfg, cache, intervals, segments=segments)
        pred = infer(model, batch, segments, **kwargs)
        world = positions_to_world(pred.positions, batch.poses[:, None, None, :])
        yield batch, pred, world


def evaluate_model(model: ASPModel, snippets, segments: int = 1, batch_size: int = 64,
                   cache: ContextCache | None = None, features: str = "predicted",
                   check_feasibility: bool = True) -> dict:
    """Metrics for one split as a plain dict."""
    out = {"count": len(snippets), "highest_prob": dict.fromkeys(METRIC_NAMES),
           "best_of_m": dict.fromkeys(METRIC_NAMES),
           "feasibility": {"checked": 0, "failed": 0, "failure_rate": None}}
    if not snippets:
        return out
    check_compatible(model, snippets, segments)
    T = model.cfg.T
    hp, best = [], []
    checked = failed = 0
    for batch, pred, world in predict_world(model, snippets, segments, batch_size, cache, features):
        gt = np.stack([s.states[T + 1:(1 + segments) * T + 1, :2] for s in batch.snippets])
        per = np.stack(per_sample(world, gt[:, None]), axis=-1)  # (B, K, 3)
        idx = pred.best_index
        hp.append(per[np.arange(len(idx)), idx])
        best.append(per.min(axis=1))
        if check_feasibility:
            flags = feasibility_flags(pred, batch, model.cfg.scaling, model.cfg.dt)
            checked += flags.size
            failed += int((~flags).sum())
    hp, best = np.concatenate(hp).mean(axis=0), np.concatenate(best).mean(axis=0)
    out["highest_prob"] = {k: float(v) for k, v in zip(METRIC_NAMES, hp)}
    out["best_of_m"] = {k: float(v) for k, v in zip(METRIC_NAMES, best)}
    if check_feasibility:
        out["feasibility"] = {"checked": checked, "failed": failed, "failure_rate": failed / checked}
    return out


@dataclass
class EvalReport:
    config_hash: str
    dataset_fingerprint: str
    seed: int
    segments: int
    mapping: str
    splits: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")
        return Path(path)


def evaluate(model_or_checkpoint, splits: dict, segments: int = 1, batch_size: int = 64,
             features: str = "predicted", run=None) -> EvalReport:
    """Evaluate a model (or checkpoint path) on named snippet splits.

    ``run`` supplies the config hash for a model passed directly.
    """
    from .models.training import RunConfig, load_model

    if isinstance(model_or_checkpoint, ASPModel):
        model = model_or_checkpoint
        run = run or RunConfig(model.cfg, model.loss_cfg)
    else:
        model, run, _ = load_model(model_or_checkpoint)
    all_snippets = [s for name in sorted(splits) for s in splits[name]]
    cache = ContextCache(model.cfg)
    report = EvalReport(run.hash, dataset_fingerprint(all_snippets), model.seed, segments, model.mapping)
    for name in sorted(splits):
        report.splits[name] = evaluate_model(model, list(splits[name]), segments, batch_size, cache, features)
    return report
