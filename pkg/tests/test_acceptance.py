"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The learning experiments use the setups recorded in the decisions ledger.
Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also written to the terminal when output is captured.
"""
import time

import numpy as np
import pytest

from actionspace.data import extract_snippets, split_recordings, split_snippets, synth_dataset, synth_generate
from actionspace.evaluation import evaluate_model
from actionspace.gradsuite import run_suite
from actionspace.kinematics import Action, State, VehicleGeometry, actions_from_states, rollout
from actionspace.models import (ActionScaling, ContextCache, LossConfig, ModelConfig, RunConfig, ScheduleConfig,
                                build_model, feasibility_flags, infer, make_batch, scaling_from_snippets, train,
                                train_steps)
from actionspace.models.losses import huber_term, huber_value, multimodal_terms
from actionspace.models.networks import encode
from actionspace.numeric import Adam, Graph, backward

from conftest import small_config, snippets_for
from test_data import straight_track

SCENARIOS = ("straight", "left_turn", "right_turn", "roundabout_arc", "stop_and_go")


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{criterion}] {detail}")
        assert ok, detail
    return emit


def test_kinematic_round_trip(report):
    rng = np.random.default_rng(0)
    g, dt = VehicleGeometry(1.3, 1.3), 0.3
    worst_a = worst_d = worst_zero = 0.0
    start = time.perf_counter()
    for i in range(10_000):
        zero = i % 10 == 0
        a = np.zeros(10) if zero else rng.uniform(-3, 3, 10)
        d = rng.uniform(-0.4, 0.4, 10)
        s0 = State(0.0, 0.0, rng.uniform(-np.pi, np.pi), rng.uniform(1, 15))
        actions = [Action(x, y) for x, y in zip(a, d)]
        rec = actions_from_states([s0] + rollout(s0, actions, g, dt), g, dt)
        ea = max(abs(u.a - x) for u, x in zip(rec, a))
        ed = max(abs(u.delta - y) for u, y in zip(rec, d))
        worst_a = max(worst_a, ea)
        if zero:
            worst_zero = max(worst_zero, ed)
        else:
            worst_d = max(worst_d, ed)
    elapsed = time.perf_counter() - start
    ok = worst_a <= 1e-9 and worst_d <= 2e-2 and worst_zero <= 1e-9 and elapsed < 10
    report("kinematic round trip", ok, f"10000 sequences: max|da|={worst_a:.1e} max|dd|={worst_d:.1e} "
                                       f"max|dd| (a=0)={worst_zero:.1e} time={elapsed:.1f}s")


def test_gradient_integrity(report):
    start = time.perf_counter()
    results = run_suite(seed=0, trials=100)
    elapsed = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed]
    worst = max(r.error for r in results)
    names = {r.name for r in results}
    ok = not failed and "ffw_loss_all_parameters" in names and elapsed < 60
    report("gradient integrity", ok, f"{len(results)} checks, failed={failed}, worst rel err={worst:.1e}, "
                                     f"time={elapsed:.1f}s")


def test_loss_formula_oracles(report):
    huber = [float(huber_value(d, 1.0)) for d in (0.0, 0.5, 2.0)]
    weights = dict(w1=0.7, w2=1.3, w3=0.4, w4=2.1)
    snippets = snippets_for(1)
    cfg = small_config("ssp", scaling=scaling_from_snippets(snippets))
    model = build_model(cfg, LossConfig(M=3, **weights), seed=7)
    batch = make_batch(snippets[:3], cfg, intervals=2)
    total, _ = model.loss(batch)
    z0 = encode(model.encoder, batch.contexts[0]).value
    z1 = encode(model.encoder, batch.contexts[1]).value
    hist = model.history_input(batch)
    rec = huber_term(model.xi(z0, z1) - hist).item()
    z1_hat = model.psi(z0, hist).value
    feat = huber_term(z1 - z1_hat).item()
    regs, clss = [], []
    for zb in (z1, z1_hat):
        ms, pos, _ = model._predict(z0, zb, hist, batch.s0, batch.geometry)
        r, c, _ = multimodal_terms(pos, ms.logits, batch.future_states[:, :cfg.T, :2], model.loss_cfg)
        regs.append(r.item())
        clss.append(c.item())
    hand = (weights["w1"] * rec + weights["w2"] * feat + weights["w3"] * sum(regs) / 2
            + weights["w4"] * sum(clss) / 2)
    diff = abs(total.item() - hand)
    ok = huber == [0.0, 0.125, 1.5] and diff <= 1e-12
    report("loss formula oracles", ok, f"huber={huber} total-loss vs hand sum diff={diff:.1e}")


@pytest.mark.slow
def test_overfit_sanity(report):
    tracks, maps = synth_dataset(list(SCENARIOS), 4, seed=0)
    snippets = extract_snippets(tracks, segments=1, maps=maps)
    rng = np.random.default_rng(0)
    snippets = [snippets[i] for i in rng.choice(len(snippets), 32, replace=False)]
    cfg = ModelConfig(encoder="tiny_conv", raster_size=64, scaling=scaling_from_snippets(snippets))
    model = build_model(cfg, LossConfig(M=3), seed=0)
    batch = make_batch(snippets, cfg, ContextCache(cfg))
    opt = Adam(list(model.parameters().values()), lr=3e-3)
    start = time.perf_counter()
    for _ in range(300):
        with Graph() as g:
            loss, _ = model.loss(batch)
        opt.zero_grad()
        backward(g, loss)
        opt.step()
    elapsed = time.perf_counter() - start
    pred = infer(model, batch)
    gt = batch.future_states[:, -1, :2]
    fde = float(np.linalg.norm(pred.positions[np.arange(32), pred.best_index, -1] - gt, axis=-1).mean())
    ok = fde < 0.15 and elapsed < 180
    report("overfit sanity", ok, f"train FDE={fde:.3f} m after 300 steps, time={elapsed:.0f}s")


@pytest.mark.slow
def test_self_supervision_value(report):
    tracks, maps = synth_dataset(list(SCENARIOS), 8, seed=1)
    snippets = extract_snippets(tracks, segments=1, maps=maps)
    train_s, val_s, test_s = split_snippets(snippets, split_recordings([s.recording_id for s in snippets]))
    held_out = test_s + val_s
    cfg = ModelConfig(architecture="ssp", encoder="tiny_conv", scaling=scaling_from_snippets(train_s))
    model = build_model(cfg, LossConfig(M=3), seed=0)
    train_steps(model, train_s, 400, lr=3e-3)
    pred = evaluate_model(model, held_out, features="predicted", check_feasibility=False)
    enc = evaluate_model(model, held_out, features="encoded", check_feasibility=False)
    p, e = pred["highest_prob"]["fde"], enc["highest_prob"]["fde"]
    report("self-supervision value", p <= 2 * e,
           f"held-out FDE predicted={p:.3f} m encoded={e:.3f} m ratio={p / e:.3f} (limit 2)")


@pytest.mark.slow
def test_multimodality(report):
    tracks, scene = synth_generate("bimodal_fork", 48, seed=3, duration=6.0)
    snippets = extract_snippets(tracks, segments=1, maps=scene)
    held = set(sorted({s.recording_id for s in snippets})[-8:])
    train_s = [s for s in snippets if s.recording_id not in held]
    test_s = [s for s in snippets if s.recording_id in held]
    scaling = scaling_from_snippets(train_s)
    fde, worst_sum = {}, 0.0
    for M in (1, 2):
        cfg = ModelConfig(encoder="tiny_conv", scaling=scaling)
        model = build_model(cfg, LossConfig(M=M), seed=0)
        train_steps(model, train_s, 300, lr=3e-3)
        fde[M] = evaluate_model(model, test_s, check_feasibility=False)["best_of_m"]["fde"]
        pred = infer(model, make_batch(test_s, cfg))
        worst_sum = max(worst_sum, float(np.abs(pred.probabilities.sum(axis=1) - 1).max()))
    ratio = fde[2] / fde[1]
    report("multi-modality", ratio <= 0.5 and worst_sum <= 1e-12,
           f"best-of-2 FDE={fde[2]:.3f} m, M=1 FDE={fde[1]:.3f} m, ratio={ratio:.3f} (limit 0.5), "
           f"max |sum p - 1|={worst_sum:.1e}")


def test_chaining(report):
    snippets = snippets_for(2)
    worst_c0 = worst_prefix = 0.0
    for arch in ("ffw", "ssp"):
        cfg = small_config(arch, 2, scaling=scaling_from_snippets(snippets))
        model = build_model(cfg, LossConfig(M=3), seed=2)
        batch = make_batch(snippets[:8], cfg, intervals=1 if arch == "ffw" else 3)
        one, two = infer(model, batch, 1), infer(model, batch, 2)
        T = cfg.T
        head = one.positions if two.chained is None else one.positions[np.arange(8), two.chained][:, None]
        worst_prefix = max(worst_prefix, float(np.abs(two.positions[:, :, :T] - head).max()))
        # C0: every second-segment mode starts from the end state of the chained first segment
        if two.chained is not None:
            ends = one.states[np.arange(8), two.chained, T - 1]
            worst_c0 = max(worst_c0, float(np.abs(two.states[:, :, T - 1] - ends[:, None]).max()))
            acts = cfg.scaling.to_physical(two.mode_sets[1].raw.data)
            for b in range(8):
                g = VehicleGeometry(float(batch.geometry.l_f[b, 0]), float(batch.geometry.l_r[b, 0]))
                s = State(*ends[b])
                for m in range(3):
                    first = rollout(s, [Action(*u) for u in acts[b, m, :1]], g, cfg.dt)[0]
                    worst_c0 = max(worst_c0, float(np.abs(two.positions[b, m, T] - [first.x, first.y]).max()))
    report("chaining", worst_c0 <= 1e-12 and worst_prefix <= 1e-12,
           f"max C0 gap={worst_c0:.1e}, max prefix difference={worst_prefix:.1e}")


def test_feasibility_guarantee(report):
    snippets = snippets_for(2, count=3)
    rates = {}
    for arch, mapping in (("ffw", "action_to_action"), ("ffw", "state_to_action"), ("ssp", "action_to_action"),
                          ("ffw", "state_to_position")):
        cfg = small_config(arch, 2, scaling=scaling_from_snippets(snippets))
        model = build_model(cfg, LossConfig(M=3, mapping=mapping), seed=0)
        batch = make_batch(snippets, cfg, intervals=1 if arch == "ffw" else 3)
        flags = np.concatenate([feasibility_flags(infer(model, batch, k), batch, cfg.scaling, cfg.dt).ravel()
                                for k in (1, 2)])
        rates[f"{arch}/{mapping}"] = float(flags.mean())
    kinematic = [v for k, v in rates.items() if "position" not in k]
    report("feasibility guarantee", all(v == 1.0 for v in kinematic),
           "pass rates " + ", ".join(f"{k}={v:.3f}" for k, v in rates.items())
           + f" (state_to_position failure rate {1 - rates['ffw/state_to_position']:.3f}, reported only)")


def test_determinism(report, tmp_path):
    snippets = snippets_for(1, count=3)
    train_s, val_s, _ = split_snippets(snippets, split_recordings([s.recording_id for s in snippets]))
    run = RunConfig(model=small_config(encoder="tiny_conv"), loss=LossConfig(M=2),
                    schedule=ScheduleConfig(epochs=2, batch_size=8, lr=1e-3, seed=5))
    logs = []
    for name in ("a", "b"):
        train(run, train_s, val_s, out_dir=tmp_path / name)
        logs.append((tmp_path / name / "metrics.jsonl").read_bytes())
    report("determinism", logs[0] == logs[1] and len(logs[0]) > 0,
           f"two fixed-seed train+eval runs, metrics.jsonl identical={logs[0] == logs[1]} ({len(logs[0])} bytes)")


def test_data_pipeline(report):
    counts = [len(extract_snippets([straight_track(d)], segments=k, spacing=0.6))
              for d, k in ((5.9, 1), (6.0, 1), (12.0, 2))]
    snippets = snippets_for(1, SCENARIOS, count=4)
    parts = split_snippets(snippets, split_recordings([s.recording_id for s in snippets]))
    rids = [{s.recording_id for s in p} for p in parts]
    disjoint = not (rids[0] & rids[1] or rids[0] & rids[2] or rids[1] & rids[2])
    covered = sum(map(len, parts)) == len(snippets)
    report("data pipeline", counts == [0, 1, 6] and disjoint and covered,
           f"anchor counts {counts} (expected [0, 1, 6]); splits disjoint by recording={disjoint}, "
           f"cover all snippets={covered}")
