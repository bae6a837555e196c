"""Run configuration, data preparation, the training loop and checkpoints."""
from __future__ import annotations

import ast
import configparser
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..data import extract_snippets, load_snippet_cache, split_recordings, split_snippets, synth_dataset
from ..errors import ConfigurationError, DataError, NumericError
from ..numeric import Adam, Graph, ReduceOnPlateau, backward, config_hash, load_checkpoint, save_checkpoint
from .asp import ASPModel, build_model
from .batching import ContextCache, make_batch
from .config import ActionScaling, LossConfig, ModelConfig

log = logging.getLogger(__name__)


@dataclass
class DatasetConfig:
    """Either a snippet cache file or a synthetic recipe."""

    cache: str = ""
    scenarios: tuple = ("straight", "left_turn", "right_turn", "roundabout_arc", "stop_and_go")
    count: int = 8
    synth_seed: int = 0
    noise: float = 0.0
    duration: float = 12.0
    segments: int = 1
    spacing: float = 0.6

    def __post_init__(self):
        if isinstance(self.scenarios, str):
            self.scenarios = tuple(s.strip() for s in self.scenarios.split(",") if s.strip())
        self.scenarios = tuple(self.scenarios)


@dataclass
class ScheduleConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-4
    lr_factor: float = 0.2
    patience: int = 3
    pretrain_epochs: int = 0
    seed: int = 0
    warm_start: str = ""
    train_metrics: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0 or self.pretrain_epochs < 0:
            raise ConfigurationError("epochs/pretrain_epochs must be >= 0, batch_size >= 1 and lr > 0")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def to_dict(self):
        return {"model": self.model.to_dict(), "loss": asdict(self.loss),
                "dataset": {**asdict(self.dataset), "scenarios": list(self.dataset.scenarios)},
                "schedule": asdict(self.schedule)}

    @classmethod
    def from_dict(cls, d):
        return cls(ModelConfig.from_dict(dict(d.get("model", {}))), LossConfig(**d.get("loss", {})),
                   DatasetConfig(**d.get("dataset", {})), ScheduleConfig(**d.get("schedule", {})))

    @property
    def hash(self):
        return config_hash(self.to_dict())


_SECTIONS = {"model": ModelConfig, "loss": LossConfig, "dataset": DatasetConfig, "schedule": ScheduleConfig}
_SCALING_KEYS = {f.name for f in fields(ActionScaling)}


def _parse_value(text):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        lowered = text.strip().lower()
        if lowered in ("true", "yes", "on"):
            return True
        if lowered in ("false", "no", "off"):
            return False
        return text.strip()


def load_run_config(path) -> RunConfig:
    """Read an INI file with [model], [loss], [dataset] and [schedule] sections.

    Values are Python literals where they parse as such; ``a_min`` etc. in
    [model] set the action scaling explicitly. A relative dataset cache path
    is resolved against the config file's directory.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigurationError(f"cannot read run config {path}")
    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    d = {}
    for name, cls in _SECTIONS.items():
        values = {k: _parse_value(v) for k, v in parser[name].items()} if parser.has_section(name) else {}
        allowed = {f.name for f in fields(cls)} | (_SCALING_KEYS if name == "model" else set())
        bad = set(values) - allowed
        if bad:
            raise ConfigurationError(f"unknown keys in [{name}]: {sorted(bad)}")
        d[name] = values
    scaling = {k: d["model"].pop(k) for k in list(d["model"]) if k in _SCALING_KEYS}
    if scaling:
        d["model"]["scaling"] = ActionScaling(**{**asdict(ActionScaling()), **scaling})
    if d["dataset"].get("cache"):
        cache = Path(d["dataset"]["cache"])
        if not cache.is_absolute():
            d["dataset"]["cache"] = str(Path(path).parent / cache)
    try:
        return RunConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def save_run_config(run: RunConfig, path):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    d = run.to_dict()
    scaling = d["model"].pop("scaling")
    d["model"].update(scaling)
    for name in _SECTIONS:
        parser[name] = {k: repr(v) if not isinstance(v, str) else v for k, v in d[name].items()}
    with open(path, "w") as fh:
        parser.write(fh)


def prepare_data(run: RunConfig):
    """Returns ``(train, val, test)`` snippet lists split by recording."""
    ds = run.dataset
    if ds.cache:
        snippets, header = load_snippet_cache(ds.cache)
        if abs(header["dt"] - run.model.dt) > 1e-12 or header["T"] != run.model.T:
            raise ConfigurationError(
                f"cache dt/T ({header['dt']}, {header['T']}) differ from model ({run.model.dt}, {run.model.T})")
    else:
        tracks, maps = synth_dataset(ds.scenarios, ds.count, seed=ds.synth_seed, dt=run.model.dt,
                                     duration=ds.duration, noise=ds.noise)
        snippets = extract_snippets(tracks, segments=ds.segments, spacing=ds.spacing, dt=run.model.dt,
                                    T=run.model.T, maps=maps)
    if not snippets:
        raise DataError("dataset produced no snippets")
    split = split_recordings([s.recording_id for s in snippets])
    return split_snippets(snippets, split)


def scaling_from_snippets(snippets) -> ActionScaling:
    return ActionScaling.from_actions(np.concatenate([s.actions for s in snippets]))


@dataclass
class TrainResult:
    model: ASPModel
    records: list
    checkpoints: list


def _intervals(model: ASPModel):
    return 1 if model.cfg.architecture == "ffw" else model.cfg.segments + 1


def _dump_nonfinite(out_dir, epoch, step, batch, comps, model):
    info = {"epoch": epoch, "step": step, "snippets": [list(s.key) for s in batch.snippets],
            "components": {k: float(v) for k, v in comps.items()},
            "parameter_norms": {k: float(np.linalg.norm(p.data)) for k, p in model.named_parameters()}}
    if out_dir is not None:
        path = Path(out_dir) / "nonfinite_batch.json"
        path.write_text(json.dumps(info, indent=1, sort_keys=True))
        return path
    log.error("non-finite loss: %s", json.dumps(info, sort_keys=True))
    return None


def save_model(model: ASPModel, path, run: RunConfig | None = None, extra: dict | None = None):
    run = run or RunConfig(model.cfg, model.loss_cfg)
    return save_checkpoint(path, model.state_dict(), run.to_dict(), {"seed": model.seed, **(extra or {})})


def load_model(path):
    """Returns ``(model, run_config, header)``."""
    arrays, header = load_checkpoint(path)
    run = RunConfig.from_dict(header["config"])
    model = build_model(run.model, run.loss, seed=header["extra"].get("seed", 0))
    model.load_state_dict(arrays)
    return model, run, header


def train(run: RunConfig, train_snippets, val_snippets=(), out_dir=None, seed: int | None = None) -> TrainResult:
    """Adam with plateau decay; one checkpoint and one log record per epoch.

    The action scaling is taken from the training snippets unless the run
    config fixes it. Self-supervised models first run
    ``schedule.pretrain_epochs`` epochs on the reconstruction and feature
    terms only. With ``out_dir`` set, ``metrics.jsonl`` and
    ``epoch_XXX.ckpt`` files are written there.
    """
    from ..evaluation import evaluate_model

    run = RunConfig.from_dict(run.to_dict())
    sched = run.schedule
    seed = sched.seed if seed is None else seed
    if not train_snippets:
        raise DataError("no training snippets")
    if sched.pretrain_epochs and run.model.architecture != "ssp":
        raise ConfigurationError("pretrain_epochs applies to the self-supervised architecture only")
    if run.model.scaling == ActionScaling():
        run.model.scaling = scaling_from_snippets(train_snippets)
    sched.seed = seed
    model = build_model(run.model, run.loss, seed=seed)
    if sched.warm_start:
        arrays, _ = load_checkpoint(sched.warm_start)
        loaded = model.load_state_dict(arrays, strict=False)
        log.info("warm start: %d of %d parameters loaded", len(loaded), len(model.parameters()))
    rng = np.random.default_rng(seed)
    params = list(model.parameters().values())
    opt = Adam(params, lr=sched.lr)
    plateau = ReduceOnPlateau(opt, factor=sched.lr_factor, patience=sched.patience)
    cache = ContextCache(run.model)
    intervals = _intervals(model)
    chash = run.hash

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.jsonl"
        log_path.write_text("")
    records, checkpoints = [], []

    def emit(record):
        record = {"config_hash": chash, "seed": seed, **record}
        records.append(record)
        if out is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def checkpoint(epoch):
        if out is not None:
            checkpoints.append(save_model(model, out / f"epoch_{epoch:03d}.ckpt", run, {"epoch": epoch}))

    def mean_loss(snippets, pretrain):
        total, n = {}, 0
        for i in range(0, len(snippets), sched.batch_size):
            part = snippets[i:i + sched.batch_size]
            _, comps = model.loss(make_batch(part, run.model, cache, intervals), **(
                {"pretrain": True} if pretrain else {}))
            for k, v in comps.items():
                total[k] = total.get(k, 0.0) + v * len(part)
            n += len(part)
        return {k: v / n for k, v in total.items()}

    checkpoint(0)
    phases = ["pretrain"] * sched.pretrain_epochs + ["train"] * sched.epochs
    step = 0
    for epoch, phase in enumerate(phases, start=1):
        pretrain = phase == "pretrain"
        order = rng.permutation(len(train_snippets))
        sums, count = {}, 0
        for i in range(0, len(order), sched.batch_size):
            part = [train_snippets[j] for j in order[i:i + sched.batch_size]]
            batch = make_batch(part, run.model, cache, intervals)
            comps = {}
            try:
                with Graph() as graph:
                    loss, comps = model.loss(batch, pretrain=True) if pretrain else model.loss(batch)
                if not np.isfinite(loss.item()):
                    raise NumericError("loss is not finite", field="loss")
            except NumericError as exc:
                where = _dump_nonfinite(out, epoch, step, batch, comps, model)
                raise NumericError(f"non-finite loss at epoch {epoch} step {step} ({exc})"
                                   + (f"; batch dumped to {where}" if where else ""), field="loss") from exc
            opt.zero_grad()
            backward(graph, loss)
            opt.step()
            step += 1
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v * len(part)
            count += len(part)
        train_loss = {k: v / count for k, v in sums.items()}
        emit({"epoch": epoch, "phase": phase, "split": "train", "lr": opt.lr, "steps": step, "loss": train_loss,
              **({"metrics": evaluate_model(model, train_snippets, cache=cache)} if sched.train_metrics else {})})
        if val_snippets:
            val_loss = mean_loss(val_snippets, pretrain)
            emit({"epoch": epoch, "phase": phase, "split": "val", "lr": opt.lr, "loss": val_loss,
                  "metrics": evaluate_model(model, val_snippets, cache=cache)})
        else:
            val_loss = train_loss
        if not pretrain:
            plateau.step(val_loss["total"])
        checkpoint(epoch)
    return TrainResult(model, records, checkpoints)


def train_steps(model: ASPModel, snippets, steps: int, lr: float = 3e-3, batch_size: int = 32, seed: int = 0,
                pretrain_steps: int = 0, cache: ContextCache | None = None, callback=None):
    """Plain optimisation loop over shuffled batches; returns the per-step loss components."""
    rng = np.random.default_rng(seed)
    cache = cache or ContextCache(model.cfg)
    intervals = _intervals(model)
    opt = Adam(list(model.parameters().values()), lr=lr)
    history, order, pos = [], rng.permutation(len(snippets)), 0
    for k in range(pretrain_steps + steps):
        if pos >= len(order):
            order, pos = rng.permutation(len(snippets)), 0
        part = [snippets[j] for j in order[pos:pos + batch_size]]
        pos += batch_size
        batch = make_batch(part, model.cfg, cache, intervals)
        with Graph() as graph:
            loss, comps = model.loss(batch, pretrain=True) if k < pretrain_steps else model.loss(batch)
        if not np.isfinite(loss.item()):
            raise NumericError(f"non-finite loss at step {k}", field="loss")
        opt.zero_grad()
        backward(graph, loss)
        opt.step()
        history.append(comps)
        if callback is not None:
            callback(k, comps)
    return history
