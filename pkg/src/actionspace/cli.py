"""Command-line interface: ingest, synth, train, eval, predict, plot, gradcheck.

Every command prints one JSON line on success. Failures print a single
``error: <Type>: <message>`` line to stderr and exit with status 1; usage
errors exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ActionSpaceError
from .numeric import config_hash


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def cmd_synth(args):
    from .data import SCENARIOS, synth_dataset, write_tracks

    scenarios = [s.strip() for s in args.scenarios.split(",")] if args.scenarios else list(SCENARIOS)
    params = {"scenarios": scenarios, "count": args.count, "seed": args.seed, "noise": args.noise,
              "duration": args.duration, "dt": args.dt}
    tracks, maps = synth_dataset(scenarios, args.count, seed=args.seed, noise=args.noise,
                                 duration=args.duration, dt=args.dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tracks(tracks, out / "tracks.csv", out / "meta.json")
    (out / "maps.json").write_text(json.dumps({rid: m.to_json() for rid, m in sorted(maps.items())}))
    provenance = {"command": "synth", "config_hash": config_hash(params), "seed": args.seed, "params": params}
    (out / "provenance.json").write_text(json.dumps(provenance, indent=1, sort_keys=True))
    _emit({**provenance, "tracks": len(tracks), "recordings": len(maps), "out": str(out)})


def cmd_ingest(args):
    from .data import SceneMap, extract_snippets, load_tracks, save_snippet_cache

    tracks = load_tracks(args.tracks, args.meta)
    maps = None
    if args.maps:
        maps = {rid: SceneMap.from_json(m) for rid, m in json.loads(Path(args.maps).read_text()).items()}
    report = {}
    snippets = extract_snippets(tracks, segments=args.segments, spacing=args.spacing, dt=args.dt, T=args.T,
                                maps=maps, report=report)
    params = {"tracks": str(args.tracks), "segments": args.segments, "spacing": args.spacing, "dt": args.dt,
              "T": args.T}
    provenance = {"command": "ingest", "config_hash": config_hash(params), "seed": None}
    save_snippet_cache(args.out, snippets, extra={**provenance, "report": report})
    _emit({**provenance, **report, "out": str(args.out)})


def cmd_train(args):
    from .models.training import load_run_config, prepare_data, train

    run = load_run_config(args.config)
    seed = run.schedule.seed if args.seed is None else args.seed
    train_s, val_s, test_s = prepare_data(run)
    result = train(run, train_s, val_s, out_dir=args.out, seed=seed)
    final = result.checkpoints[-1] if result.checkpoints else None
    _emit({"command": "train", "config_hash": result.records[0]["config_hash"] if result.records else None,
           "seed": seed, "epochs": len([r for r in result.records if r["split"] == "train"]),
           "checkpoint": str(final), "metrics_log": str(Path(args.out) / "metrics.jsonl"),
           "snippets": {"train": len(train_s), "val": len(val_s), "test": len(test_s)}})


def _load_splits(run, cache):
    from .data import load_snippet_cache, split_recordings, split_snippets
    from .models.training import prepare_data

    if cache:
        snippets, _ = load_snippet_cache(cache)
        parts = split_snippets(snippets, split_recordings([s.recording_id for s in snippets]))
    else:
        parts = prepare_data(run)
    return dict(zip(("train", "val", "test"), parts))


def cmd_eval(args):
    from .evaluation import evaluate
    from .models.training import load_model

    model, run, _ = load_model(args.checkpoint)
    splits = _load_splits(run, args.cache)
    if args.split != "all":
        splits = {args.split: splits[args.split]}
    report = evaluate(model, splits, segments=args.segments, features=args.features, run=run)
    if args.out:
        report.save(args.out)
    _emit(json.loads(report.to_json()))


def _predict_one(args):
    from .evaluation import predict_world
    from .models.training import load_model

    model, run, _ = load_model(args.checkpoint)
    snippets = _load_splits(run, args.cache)[args.split]
    if not 0 <= args.index < len(snippets):
        raise ActionSpaceError(f"index {args.index} out of range for split {args.split} ({len(snippets)} snippets)")
    snippet = snippets[args.index]
    batch, pred, world = next(predict_world(model, [snippet], args.segments))
    return model, run, snippet, pred, world[0]


def cmd_predict(args):
    model, run, snippet, pred, world = _predict_one(args)
    result = {"command": "predict", "config_hash": run.hash, "seed": model.seed, "snippet": list(snippet.key),
              "segments": args.segments, "probabilities": pred.probabilities[0].round(12).tolist(),
              "positions": np.round(world, 6).tolist()}
    if args.out:
        Path(args.out).write_text(json.dumps(result, sort_keys=True) + "\n")
    _emit(result)


def cmd_plot(args):
    from .plotting import plot_trajectories

    model, run, snippet, pred, world = _predict_one(args)
    path = plot_trajectories(snippet, world, args.out, pred.probabilities[0], segments=args.segments,
                             comment=f"config_hash={run.hash} seed={model.seed}")
    _emit({"command": "plot", "config_hash": run.hash, "seed": model.seed, "out": str(path)})


def cmd_gradcheck(args):
    from .gradsuite import run_suite

    results = run_suite(args.seed, trials=args.trials)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    _emit({"command": "gradcheck", "seed": args.seed, "config_hash": config_hash({"trials": args.trials}),
           "checks": len(results), "failed": failed})
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="actionspace", description="Action-space trajectory prediction toolkit.")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic track dataset")
    s.add_argument("--scenarios", default="", help="comma-separated scenario names (default: all)")
    s.add_argument("--count", type=int, default=8, help="tracks per scenario")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--duration", type=float, default=12.0)
    s.add_argument("--dt", type=float, default=0.3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="build a snippet cache from track files")
    s.add_argument("--tracks", required=True)
    s.add_argument("--meta", required=True)
    s.add_argument("--maps", default="", help="JSON object mapping recording ids to scene maps")
    s.add_argument("--out", required=True)
    s.add_argument("--segments", type=int, default=1, choices=(1, 2))
    s.add_argument("--spacing", type=float, default=0.6)
    s.add_argument("--dt", type=float, default=0.3)
    s.add_argument("--T", type=int, default=10)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train a model from a run config")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default="run")
    s.set_defaults(func=cmd_train)

    for name, func, help_text in (("eval", cmd_eval, "evaluate a checkpoint"),
                                  ("predict", cmd_predict, "predict one snippet"),
                                  ("plot", cmd_plot, "plot one snippet's prediction as SVG")):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--cache", default="", help="snippet cache (default: the checkpoint's dataset recipe)")
        s.add_argument("--segments", type=int, default=1, choices=(1, 2))
        if name == "eval":
            s.add_argument("--split", default="all", choices=("all", "train", "val", "test"))
            s.add_argument("--features", default="predicted", choices=("predicted", "encoded"))
            s.add_argument("--out", default="")
        else:
            s.add_argument("--split", default="test", choices=("train", "val", "test"))
            s.add_argument("--index", type=int, default=0)
            s.add_argument("--out", default="" if name == "predict" else None, required=name == "plot")
        s.set_defaults(func=func)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=100)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    try:
        code = args.func(args)
    except (ActionSpaceError, OSError, ValueError, KeyError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
