import json

import numpy as np
import pytest

from conftest import small_config, snippets_for
from actionspace.errors import ConfigurationError, NumericError
from actionspace.models import (LossConfig, RunConfig, ScheduleConfig, build_model, infer, load_model,
                                load_run_config, make_batch, save_model, save_run_config, scaling_from_snippets,
                                train, train_steps)
from actionspace.models import training as training_mod
from actionspace.numeric import Adam, Graph, backward


def tiny_run(architecture="ffw", epochs=2, **sched):
    return RunConfig(model=small_config(architecture), loss=LossConfig(M=2),
                     schedule=ScheduleConfig(epochs=epochs, batch_size=4, lr=1e-3, **sched))


def test_zero_epochs_checkpoint_is_initialisation(snippets1, tmp_path):
    result = train(tiny_run(epochs=0), snippets1[:6], out_dir=tmp_path)
    assert [p.name for p in result.checkpoints] == ["epoch_000.ckpt"]
    model, run, header = load_model(result.checkpoints[0])
    fresh = build_model(run.model, run.loss, seed=0)
    for name, p in fresh.named_parameters():
        np.testing.assert_array_equal(dict(model.named_parameters())[name].data, p.data)


def test_training_is_deterministic(snippets1, tmp_path):
    for d in ("a", "b"):
        train(tiny_run(), snippets1[:8], snippets1[8:12], out_dir=tmp_path / d)
    a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    records = [json.loads(line) for line in a.decode().splitlines()]
    assert {r["split"] for r in records} == {"train", "val"}
    assert all("config_hash" in r and r["seed"] == 0 for r in records)
    assert (tmp_path / "a" / "epoch_002.ckpt").exists()


def test_ssp_pretraining_phase(snippets2, tmp_path):
    run = RunConfig(model=small_config("ssp", 2), loss=LossConfig(M=2),
                    schedule=ScheduleConfig(epochs=1, pretrain_epochs=1, batch_size=4, lr=1e-3))
    result = train(run, snippets2[:4])
    assert [r["phase"] for r in result.records] == ["pretrain", "train"]
    assert set(result.records[0]["loss"]) == {"reconstruction", "feature", "total"}


def test_pretraining_rejected_for_ffw(snippets1):
    with pytest.raises(ConfigurationError):
        train(tiny_run(pretrain_epochs=1), snippets1[:4])


def test_nonfinite_loss_dumps_batch(snippets1, tmp_path, monkeypatch):
    real = training_mod.build_model

    def poisoned(*args, **kwargs):
        model = real(*args, **kwargs)
        next(iter(model.parameters().values())).data[...] = np.nan
        return model

    monkeypatch.setattr(training_mod, "build_model", poisoned)
    with pytest.raises(NumericError, match="non-finite"):
        train(tiny_run(), snippets1[:4], out_dir=tmp_path)
    dump = json.loads((tmp_path / "nonfinite_batch.json").read_text())
    assert dump["epoch"] == 1 and dump["step"] == 0 and len(dump["snippets"]) == 4


def test_run_config_round_trip(tmp_path):
    run = tiny_run("ssp")
    path = tmp_path / "run.ini"
    save_run_config(run, path)
    again = load_run_config(path)
    assert again.hash == run.hash
    assert again.model.scaling == run.model.scaling


def test_run_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[model]\nfeature_size = 8\nwidth_multiplier = 2\n")
    with pytest.raises(ConfigurationError, match="width_multiplier"):
        load_run_config(path)
    path.write_text("[optimizer]\nlr = 1\n")
    with pytest.raises(ConfigurationError):
        load_run_config(path)


@pytest.mark.parametrize("architecture, segments", [("ffw", 1), ("ssp", 2)])
def test_checkpoint_round_trip_predictions(architecture, segments, snippets1, snippets2, tmp_path):
    snippets = snippets1 if segments == 1 else snippets2
    cfg = small_config(architecture, segments, scaling=scaling_from_snippets(snippets))
    model = build_model(cfg, LossConfig(M=2), seed=4)
    train_steps(model, snippets[:4], 2, lr=1e-3, batch_size=4)
    save_model(model, tmp_path / "m.ckpt")
    loaded, _, _ = load_model(tmp_path / "m.ckpt")
    batch = make_batch(snippets[:3], cfg, intervals=1 if architecture == "ffw" else 3)
    a, b = infer(model, batch, segments), infer(loaded, batch, segments)
    assert a.positions.tobytes() == b.positions.tobytes()


def test_train_steps_reduces_loss(snippets1):
    cfg = small_config(scaling=scaling_from_snippets(snippets1))
    model = build_model(cfg, LossConfig(M=1), seed=0)
    history = train_steps(model, snippets1[:8], 60, lr=3e-3, batch_size=8)
    assert history[-1]["total"] < 0.5 * history[0]["total"]


@pytest.mark.slow
@pytest.mark.parametrize("scenario", ["roundabout_arc", "left_turn"])
def test_action_predictor_overfits_one_snippet(scenario):
    """gamma alone, trained on one snippet, reproduces its future actions to MAE < 0.05 (raw units)."""
    scaling = scaling_from_snippets(
        snippets_for(1, ("straight", "left_turn", "right_turn", "roundabout_arc", "stop_and_go"), 4))
    snippet = snippets_for(1, (scenario,), 1)[0]
    cfg = small_config(scaling=scaling, feature_size=16, hidden_size=64)
    model = build_model(cfg, LossConfig(M=1), seed=0)
    batch = make_batch([snippet], cfg)
    opt = Adam(list(model.parameters().values()), lr=3e-3)
    steps = 1000
    for k in range(steps):
        if k == steps * 6 // 10:
            opt.lr *= 0.2
        with Graph() as g:
            loss, _ = model.loss(batch)
        opt.zero_grad()
        backward(g, loss)
        opt.step()
    raw = infer(model, batch).mode_sets[0].raw.data[0, 0]
    assert np.abs(raw - cfg.scaling.to_raw(batch.future_actions[0])).mean() < 0.05
