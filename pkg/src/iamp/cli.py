"""Command-line entry point: ``iamp <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .accel_ar import ARModel, TrainConfig, profile_to_distributions, read_dataset, train, write_dataset, infer
from .map_model import load_map, save_map
from .markov import Discretization, TransitionMatrices, compute_transition_matrices
from .pipeline import (MODES, PredictConfig, build_training_set, config_dict, read_metrics, run_prediction,
                       write_report)
from .scenarios import SCENARIOS, generate_scenario
from .tracks import TrackDataset, ingest_tracks, write_tracks

log = logging.getLogger("iamp")


def _parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"1,4,9"`` or ``"100-111"``."""
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _load_inputs(args):
    if args.scenario:
        return generate_scenario(args.scenario, args.scenario_seed)
    if not (args.map and args.tracks):
        raise SystemExit("either --scenario or both --map and --tracks are required")
    return load_map(args.map), ingest_tracks(args.tracks)


def _matrices(path) -> TransitionMatrices:
    if path:
        return TransitionMatrices.load(path)
    log.info("no --matrices given; computing the default discretization")
    return compute_transition_matrices()


# --------------------------------------------------------------------------
# subcommands


def cmd_precompute(args) -> int:
    disc = Discretization()
    if args.disc:
        disc = Discretization.from_dict(json.loads(Path(args.disc).read_text()))
    mats = compute_transition_matrices(disc, samples_per_cell=args.samples)
    mats.save(args.output)
    print(f"wrote {args.output}: {disc.size} states, {mats.step.nnz} step / {mats.interval.nnz} interval non-zeros")
    return 0


def cmd_make_dataset(args) -> int:
    Xs, Ys = [], []
    if args.map and args.tracks:
        X, Y = build_training_set(load_map(args.map), ingest_tracks(args.tracks))
        Xs.append(X)
        Ys.append(Y)
    else:
        for name in args.scenarios.split(","):
            for seed in _parse_seeds(args.seeds):
                lmap, ds = generate_scenario(name, seed)
                X, Y = build_training_set(lmap, ds)
                Xs.append(X)
                Ys.append(Y)
    X, Y = np.vstack(Xs), np.vstack(Ys)
    write_dataset(args.output, X, Y)
    print(f"wrote {args.output}: {len(X)} samples")
    return 0


def cmd_train(args) -> int:
    X, Y = read_dataset(args.data)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    model = train(X, Y, cfg)
    model.save(args.output)
    losses = model.meta.get("losses", [])
    tail = f", final epoch loss {losses[-1]:.5f}" if losses else ""
    print(f"wrote {args.output}: trained on {len(X)} samples for {args.epochs} epochs{tail}")
    return 0


def cmd_infer(args) -> int:
    model = ARModel.load(args.model)
    X, _ = read_dataset(args.data)
    profiles = infer(model, X)
    header = ",".join(f"a_{i}" for i in range(profiles.shape[1]))
    np.savetxt(args.output, profiles, delimiter=",", header=header, comments="", fmt="%.9g")
    print(f"wrote {args.output}: {len(profiles)} profiles")
    return 0


def cmd_predict(args) -> int:
    lmap, dataset = _load_inputs(args)
    mats = _matrices(args.matrices)
    modes = list(MODES) if args.mode == "both" else [args.mode]
    model = ARModel.load(args.model) if args.model else None
    if "hybrid" in modes and model is None:
        raise SystemExit("hybrid mode requires --model")
    out = Path(args.output)
    want_grids = bool(args.svg or args.grids)
    reports = []
    for mode in modes:
        cfg = PredictConfig(mode=mode, seed=args.seed, repeats=args.repeats, t_gap=args.t_gap,
                            lane_changes=not args.no_lane_changes, joint_min=args.joint_min,
                            collect_grids=want_grids)
        rep = run_prediction(lmap, dataset, mats, cfg, model)
        reports.append(rep)
        log.info("%s: %d scored rows, %.4f s per prediction step", mode, len(rep.rows),
                 np.mean(rep.step_times) if rep.step_times else 0.0)
    extra = {"config": {r.mode: config_dict(PredictConfig(mode=r.mode, seed=args.seed, repeats=args.repeats,
                                                           t_gap=args.t_gap,
                                                           lane_changes=not args.no_lane_changes,
                                                           joint_min=args.joint_min))
                        for r in reports}}
    summary = write_report(reports, out, extra)
    if args.grids:
        _write_grids(reports, out / "grids.csv")
    if args.svg:
        _write_figures(lmap, dataset, reports, mats, model, summary, out)
    print(format_table(summary))
    return 0


def _write_grids(reports, path) -> None:
    from .fusion import write_grids_csv

    first = True
    for rep in reports:
        for repeat, t, vid, grids in rep.grids:
            write_grids_csv(grids, path, append=not first,
                            extra={"mode": rep.mode, "repeat": repeat, "time": f"{t:.1f}"})
            first = False


def _write_figures(lmap, dataset: TrackDataset, reports, mats, model, summary, out: Path) -> None:
    from . import plotting

    plotting.plot_summary(summary, out / "summary.svg")
    rec = dataset.recordings[0]
    for rep in reports:
        first = [g for g in rep.grids if g[0] == 0]
        if not first:
            continue
        by_time: dict[float, list] = {}
        for _, t, vid, grids in first:
            by_time.setdefault(t, []).append((vid, grids))
        t = max(sorted(by_time), key=lambda tt: len(by_time[tt]))
        grids, gt = [], {}
        times = t + mats.disc.tau * np.arange(0, 11)
        for vid, g in by_time[t]:
            grids.extend(g)
            smp = rec.tracks[vid].sample(times)
            gt[vid] = np.column_stack([smp["x"], smp["y"]])
        plotting.plot_motion_grid(lmap, grids, gt, out / f"grid_{rep.mode}.svg",
                                  title=f"{rep.mode}, t = {t:.1f} s, 4 s horizon")
    if model is not None:
        rng = np.random.default_rng(0)
        x = model.x_min + (model.x_max - model.x_min) * rng.random(len(model.x_min))
        dist = profile_to_distributions(infer(model, x), mats.disc)
        plotting.plot_accel_distributions(dist, mats.disc.accel_edges, out / "accel_distributions.svg",
                                          title="input distributions for a random feature vector")


def format_table(summary: dict) -> str:
    lines = [f"{'mode':<10}{'time/step [s]':>15}{'mADE [m]':>11}{'mFDE [m]':>11}{'rows':>7}"]
    for mode in MODES:
        s = summary.get(mode)
        if not s:
            continue
        lines.append(f"{mode:<10}{s['time_per_step']:>15.4f}{s.get('mADE', float('nan')):>11.3f}"
                     f"{s.get('mFDE', float('nan')):>11.3f}{s['n_rows']:>7d}")
    if "speedup" in summary:
        lines.append(f"baseline/hybrid time ratio: {summary['speedup']:.2f}")
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    report = Path(args.report)
    summary = json.loads((report / "summary.json").read_text())
    rows = read_metrics(report / "metrics.csv")
    for mode in MODES:
        sel = [r for r in rows if r["mode"] == mode]
        if sel and mode in summary:
            made = float(np.mean([r["mADE"] for r in sel]))
            if abs(made - summary[mode]["mADE"]) > 1e-5:
                print(f"warning: {mode} mADE in summary.json does not match metrics.csv", file=sys.stderr)
    print(format_table(summary))
    return 0


def cmd_scenario_gen(args) -> int:
    lmap, ds = generate_scenario(args.name, args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_map(lmap, out / "map.json")
    write_tracks(ds, out / "tracks.csv")
    n = sum(len(r.tracks) for r in ds.recordings)
    print(f"wrote {out / 'map.json'} and {out / 'tracks.csv'} ({n} vehicles)")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iamp", description="Hybrid interaction-aware motion prediction.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("precompute", help="compute and store the Markov transition matrices")
    q.add_argument("--disc", help="JSON file with discretization overrides")
    q.add_argument("--samples", type=int, default=100, help="samples per cell")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_precompute)

    q = sub.add_parser("make-dataset", help="build an AR training CSV from scenarios or recordings")
    q.add_argument("--scenarios", default="four_arm,t_junction,roundabout,queue,straight,fork")
    q.add_argument("--seeds", default="100-111")
    q.add_argument("--map")
    q.add_argument("--tracks")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_make_dataset)

    q = sub.add_parser("train", help="train the autoregressive acceleration model")
    q.add_argument("--data", required=True)
    q.add_argument("--epochs", type=int, default=60)
    q.add_argument("--batch-size", type=int, default=64)
    q.add_argument("--lr", type=float, default=0.01)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("infer", help="write the acceleration profiles a model predicts for a dataset CSV")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True, help="dataset CSV; the target columns are ignored")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_infer)

    q = sub.add_parser("predict", help="run prediction and scoring")
    q.add_argument("--map")
    q.add_argument("--tracks")
    q.add_argument("--scenario", choices=SCENARIOS)
    q.add_argument("--scenario-seed", type=int, default=0)
    q.add_argument("--mode", choices=(*MODES, "both"), default="baseline")
    q.add_argument("--model")
    q.add_argument("--matrices")
    q.add_argument("--repeats", type=int, default=3)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--t-gap", type=float, default=3.0, help="threat horizon of the blocking vehicle [s]")
    q.add_argument("--joint-min", action="store_true", help="report the FDE of the min-ADE corridor")
    q.add_argument("--no-lane-changes", action="store_true")
    q.add_argument("--svg", action="store_true", help="render SVG figures into the report directory")
    q.add_argument("--grids", action="store_true", help="write fused motion grids to grids.csv")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_predict)

    q = sub.add_parser("evaluate", help="print the result table of a report directory")
    q.add_argument("--report", required=True)
    q.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("scenario-gen", help="write a synthetic map and recording")
    q.add_argument("--name", required=True, choices=SCENARIOS)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_scenario_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
