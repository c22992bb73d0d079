"""Command line entry point: run, compare, render, boxes, graph.

Every subcommand writes its files under ``--out`` and prints a short CSV
summary on stdout. Failures print one ``rliac: error: ...`` line on stderr
and exit nonzero.
"""

import argparse
import csv
import math
from pathlib import Path
import sys

import numpy as np

from . import features, harness, mapping, plots, proposals, saliency, segmentation
from .learner import Forest
from .pnm import read_pnm, write_pgm
from .synthworld import CameraPose, export_frame, random_free_pose, render_frame


def _config(args, **extra):
    over = dict(seed=args.seed, iterations=args.iterations, out=getattr(args, "out", None), **extra)
    if getattr(args, "strategy", None) and "," not in args.strategy:
        over["strategy"] = args.strategy
    if getattr(args, "world", None):
        over["world"] = args.world
    if args.config:
        return harness.load_config(args.config, **over)
    return harness.ExperimentConfig(**{k: v for k, v in over.items() if v is not None})


def _emit(header, rows):
    wr = csv.writer(sys.stdout, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r])


def _outdir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- run ------------------------------------------------------------------

def cmd_run(args):
    out = _outdir(args, "run-out")
    args.out = str(out)
    cfg = _config(args)
    ex = harness.run_experiment(cfg, keep=True)
    rows = ex.rows
    t, e = harness.error_series(rows)
    axis = t if len(t) else np.zeros(1)
    result = {"axis": axis, "aggregate": {cfg.strategy: (e, np.zeros_like(e), 1)}}
    plots.error_curves(result, out / "error.png", cfg.error_threshold)
    starts, names, fracs = harness.time_allocation(rows)
    plots.time_allocation(starts, names, fracs, out / "allocation.png", title=cfg.strategy)
    plots.navigation_graph(ex.grid, ex.graph, out / "graph.png")
    _emit(["strategy", "seed", "iterations", "sim_time_s", "final_err", "time_to_threshold_s"],
          [[cfg.strategy, cfg.seed, len(rows), rows[-1]["sim_time_s"], float(e[-1]),
            harness.time_to_threshold(rows, cfg.error_threshold)]])
    return 0


# -- compare --------------------------------------------------------------

def cmd_compare(args):
    out = _outdir(args, "compare-out")
    strategies = args.strategy.split(",") if args.strategy else list(harness.STRATEGIES)
    base = _config(argparse.Namespace(**{**vars(args), "out": None, "strategy": None}))
    world = harness.open_world(base.world)
    first = base.seed
    configs = [harness.ExperimentConfig(**{**vars(base), "strategy": s, "seed": first + k, "out": None})
               for s in strategies for k in range(args.seeds)]
    result = harness.compare(configs, world, out=out)
    plots.error_curves(result, out / "error.png", base.error_threshold)
    summary = []
    for s in strategies:
        runs = [(c, rows) for c, rows in result["runs"] if c.strategy == s]
        if not runs:
            continue
        ttt = [harness.time_to_threshold(rows, base.error_threshold) for _, rows in runs]
        c0, rows0 = min(runs, key=lambda cr: cr[0].seed)
        starts, names, fracs = harness.time_allocation(rows0)
        plots.time_allocation(starts, names, fracs, out / f"allocation_{s}.png", title=f"{s}, seed {c0.seed}")
        summary.append([s, len(runs), float(np.median(ttt)), float(np.mean([r[-1]["overall_err"] for _, r in runs]))])
    _emit(["strategy", "runs", "median_time_to_threshold_s", "mean_final_err"], summary)
    for c, err in result["failures"]:
        print(f"rliac: warning: {c.strategy} seed {c.seed} failed: {err}", file=sys.stderr)
    return 1 if result["failures"] and not result["runs"] else 0


# -- render ---------------------------------------------------------------

def _read_poses(path):
    poses = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            poses.append(CameraPose(float(r["x"]), float(r["y"]), math.radians(float(r["heading_deg"]))))
    if not poses:
        raise ValueError(f"{path}: no poses")
    return poses


def cmd_render(args):
    out = _outdir(args, "render-out")
    cfg = _config(args)
    world = harness.open_world(cfg.world)
    rng = np.random.default_rng(cfg.seed)
    poses = _read_poses(args.poses) if args.poses else [random_free_pose(world, rng) for _ in range(args.count)]
    forest = Forest.load(args.forest) if args.forest else None
    tracker = segmentation.PlaneTracker()
    seg_cfg = segmentation.SegmentationConfig(**cfg.segmentation)
    grid = mapping.OccupancyGrid.for_world(world, cfg.cell)
    summary = []
    for k, pose in enumerate(poses):
        frame = render_frame(world, pose, rng, float(k))
        prefix = out / f"frame_{k:03d}"
        export_frame(frame, prefix)
        write_pgm(out / f"frame_{k:03d}_gt.pgm", frame.gt_mask.astype(np.uint8) * 255)
        labels, _ = segmentation.segment(frame, tracker, rng, seg_cfg)
        segmentation.export_labels(out / f"frame_{k:03d}_labels.pgm", labels)
        if forest is not None:
            smap = saliency.predict_map(forest, features.extract(frame))
            saliency.export_saliency(out / f"frame_{k:03d}_saliency.pgm", smap)
        mapping.update_grid(grid, frame, tracker.reference, seg_cfg.inlier_threshold, cfg.near_field)
        summary.append([k, pose.x, pose.y, math.degrees(pose.heading), float(frame.gt_mask.mean()),
                        int((labels == segmentation.Label.SALIENT).sum())])
    grid.export_pgm(out / "grid.pgm")
    _emit(["frame", "x", "y", "heading_deg", "object_fraction", "salient_pixels"], summary)
    return 0


# -- boxes ----------------------------------------------------------------

def cmd_boxes(args):
    out = _outdir(args, "boxes-out")
    smap = read_pnm(args.saliency)
    if smap.ndim != 2:
        raise ValueError(f"{args.saliency}: saliency map must be a grayscale PGM")
    values = smap.astype(float) / (65535.0 if smap.dtype == np.uint16 else 255.0)
    boxes = proposals.read_proposals(args.proposals)
    ranked = proposals.rank_external(boxes, values, args.threshold)
    proposals.write_proposals(out / "ranked.csv", ranked)
    _emit(["proposals_in", "proposals_kept", "top_final_score"],
          [[len(boxes), len(ranked), ranked[0].final_score if ranked else 0.0]])
    return 0


# -- graph ----------------------------------------------------------------

def cmd_graph(args):
    out = _outdir(args, "graph-out")
    args.strategy = args.strategy or "random"
    cfg = _config(argparse.Namespace(**{**vars(args), "out": None}))
    ex = harness.run_experiment(cfg, keep=True)
    ex.grid.export_pgm(out / "grid.pgm")
    mapping.write_graph(ex.regions, ex.graph, out / "nodes.csv", out / "edges.csv")
    plots.navigation_graph(ex.grid, ex.graph, out / "graph.png", title=f"{cfg.strategy}, {cfg.iterations} iterations")
    areas = harness.region_areas(ex.world, ex.regions)
    _emit(["region", "cx_m", "cy_m", "area"],
          [[rid, float(x), float(y), areas.get(rid) or ""] for rid, (x, y) in sorted(ex.graph.nodes.items())])
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="rliac", description="Curiosity-driven saliency learning in a simulated world.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, strategy=True, iterations=True):
        sp.add_argument("--config", help="experiment INI file")
        sp.add_argument("--world", help="bundled world name or .world file (overrides the config)")
        sp.add_argument("--seed", type=int, help="master seed")
        if strategy:
            sp.add_argument("--strategy", help="|".join(harness.STRATEGIES))
        if iterations:
            sp.add_argument("--iterations", type=int, help="exploration iterations")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("run", help="one experiment")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="strategies x seeds grid")
    common(sp)
    sp.add_argument("--seeds", type=int, default=10, help="seeds per strategy, counted up from --seed")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("render", help="dump frames, masks and the grid for a pose list")
    common(sp, strategy=False, iterations=False)
    sp.add_argument("--poses", help="CSV with x,y,heading_deg columns")
    sp.add_argument("--count", type=int, default=5, help="random poses when --poses is absent")
    sp.add_argument("--forest", help="forest checkpoint for saliency maps")
    sp.set_defaults(func=cmd_render, iterations=None)

    sp = sub.add_parser("boxes", help="re-rank a proposals CSV with a saliency map")
    sp.add_argument("--proposals", required=True, help="CSV x,y,w,h,ext_score")
    sp.add_argument("--saliency", required=True, help="full-resolution saliency PGM")
    sp.add_argument("--threshold", type=float, default=0.01)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_boxes)

    sp = sub.add_parser("graph", help="explore, then export regions and the navigation graph")
    common(sp)
    sp.set_defaults(func=cmd_graph)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "strategy", None):
        bad = [s for s in args.strategy.split(",") if s not in harness.STRATEGIES]
        if args.command != "compare" and "," in args.strategy:
            bad = [args.strategy]
        if bad:
            print(f"rliac: error: unknown strategy {bad[0]!r}", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, LookupError, RuntimeError) as exc:
        print(f"rliac: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
