"""End-to-end walkthrough: synthetic tracks to a trained two-mode predictor.

Run from the repository root:

    python3 demos/walkthrough.py [out_dir]

Writes rasters, an SVG of one prediction and the training log to ``out_dir``
(default ``demo_out``). Takes a few seconds on one CPU core.
"""
import sys
from pathlib import Path

import numpy as np

from actionspace.data import extract_snippets, split_recordings, split_snippets, synth_dataset
from actionspace.evaluation import evaluate_model, predict_world
from actionspace.kinematics import Action, State, VehicleGeometry, actions_from_states, rollout
from actionspace.models import LossConfig, ModelConfig, RunConfig, ScheduleConfig, train
from actionspace.plotting import plot_trajectories
from actionspace.raster import RasterConfig, rasterize, save_png

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# 1. The bicycle model and its inverse.
g = VehicleGeometry(1.3, 1.3)
s0 = State(0.0, 0.0, 0.0, 8.0)
actions = [Action(0.5, 0.1)] * 5
states = rollout(s0, actions, g, 0.3)
recovered = actions_from_states([s0] + states, g, 0.3)
print("final state:", states[-1])
print("recovered first action:", recovered[0])

# 2. Synthetic tracks cut into 3 s past / 3 s future snippets, split by recording.
tracks, maps = synth_dataset(["straight", "left_turn", "right_turn", "roundabout_arc"], 4, seed=0)
snippets = extract_snippets(tracks, segments=1, maps=maps)
train_s, val_s, test_s = split_snippets(snippets, split_recordings([s.recording_id for s in snippets]))
print(f"{len(tracks)} tracks -> {len(snippets)} snippets ({len(train_s)}/{len(val_s)}/{len(test_s)})")

# 3. Bird's-eye rasters of one scene.
paths = save_png(rasterize(test_s[0], test_s[0].T, RasterConfig("mtp")), out / "scene.png", "mtp")
print("raster:", paths[0])

# 4. Train a small feed-forward model with two modes.
run = RunConfig(model=ModelConfig(encoder="tiny_conv"), loss=LossConfig(M=2),
                schedule=ScheduleConfig(epochs=3, batch_size=16, lr=3e-3))
result = train(run, train_s, val_s, out_dir=out / "run")
model = result.model
print("last train loss:", round(result.records[-2]["loss"]["total"], 4))

# 5. Evaluate on held-out recordings; every prediction is kinematically feasible.
metrics = evaluate_model(model, test_s)
print("test FDE (highest prob / best of 2):", round(metrics["highest_prob"]["fde"], 3),
      round(metrics["best_of_m"]["fde"], 3))
print("feasibility failures:", metrics["feasibility"]["failed"], "of", metrics["feasibility"]["checked"])

# 6. Plot one prediction.
batch, pred, world = next(predict_world(model, test_s[:1]))
svg = plot_trajectories(test_s[0], world[0], out / "prediction.svg", pred.probabilities[0])
print("plot:", svg, "probabilities", np.round(pred.probabilities[0], 3))
