"""Exploration loop under a simulated clock, strategies, extrinsic metrics and experiment grids.

One iteration: render and segment the frame at the current pose, grow the
map, score the current model on the frame; pick the next region; sample a
pose there; move while the learner trains on the frame; advance the clock by
the overhead plus the longer of the move and the update.
"""

import configparser
import csv
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
import math
from pathlib import Path
import time

import numpy as np

from . import features, learner, mapping, metalearner, planner, saliency, segmentation
from .synthworld import CameraPose, UnreachableRegion, build_world, render_frame, random_free_pose
from .synthworld import sample_pose_in_region
from .worldfile import load_world

STRATEGIES = ("rl-iac", "uniform", "schmidhuber", "random")
METRIC_FIELDS = ("sim_time_s", "iteration", "strategy", "seed", "region", "area", "frame_err", "region_lp",
                 "overall_err", "displacement_m", "learner_update_s")


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    world: str = "corridor"
    strategy: str = "rl-iac"
    iterations: int = 3000
    seed: int = 0
    out: str | None = None
    # extrinsic evaluation
    holdout: int = 20
    holdout_min_object_fraction: float = 0.02
    eval_every: int = 10
    error_threshold: float = 0.2
    # clock
    speed: float = 0.5
    timing: str = "model"           # "model" or "wall"
    overhead_s: float = 0.4
    update_base_s: float = 0.023
    update_per_sample_s: float = 1.35e-4
    # learner
    n_trees: int = 50
    trees_per_update: int = 4
    subsample: float = 0.7
    with_replacement: bool = False
    max_depth: int = 12
    min_leaf: int = 5
    store_cap: int = 100_000
    samples_per_frame: int = 500
    # meta-learner
    tau: int = 10
    interpolate_window: bool = True
    # planner
    gamma: float = 0.9
    episodes: int = 1000
    budget: str = "auto"
    sim_epsilon: float = 0.1
    random_rate: float = 0.1
    reward_on_arrival: bool = False
    schmidhuber_epsilon: float = 0.5
    # mapping
    cell: float = 0.1
    proto_size: float = 5.0
    near_field: float = 1.2
    map_range: float = 4.0
    pose_clearance: float = 0.25
    # segmentation overrides, key -> value
    segmentation: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {', '.join(STRATEGIES)}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.timing not in ("model", "wall"):
            raise ValueError("timing must be 'model' or 'wall'")
        if self.holdout < 1 or self.eval_every < 1:
            raise ValueError("holdout and eval_every must be >= 1")


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name, text):
    default = _FIELDS[name].default
    if isinstance(default, bool):
        return configparser.ConfigParser.BOOLEAN_STATES[text.strip().lower()]
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def load_config(path, **overrides) -> ExperimentConfig:
    """INI file; section names only group keys. ``[segmentation]`` keys go to the segmenter."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    kw, seg = {}, {}
    base = Path(path).resolve().parent
    for section in cp.sections():
        for key, value in cp.items(section):
            if section == "segmentation":
                seg[key] = type(getattr(segmentation.SegmentationConfig(), key))(value)
            elif key in _FIELDS and key != "segmentation":
                kw[key] = _coerce(key, value)
            else:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
    if "world" in kw and not _is_bundled(kw["world"]):
        kw["world"] = str((base / kw["world"]).resolve())
    kw["segmentation"] = seg
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kw)


def _is_bundled(name):
    return resources.files("rliac").joinpath("worlds", f"{name}.world").is_file()


def resolve_world(name):
    if _is_bundled(name):
        return resources.files("rliac").joinpath("worlds", f"{name}.world")
    p = Path(name)
    if not p.is_file():
        raise FileNotFoundError(f"world {name!r} is neither a bundled world nor a file")
    return p


def open_world(name):
    return build_world(load_world(resolve_world(name)))


class SimClock:
    def __init__(self, speed: float = 0.5):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.speed = speed
        self.now = 0.0

    def advance(self, overhead, displacement_m, update_s):
        step = overhead + max(displacement_m / self.speed, update_s)
        self.now += step
        return step


@dataclass
class HoldoutSet:
    grids: list       # FeatureGrid per frame
    truth: list       # boolean cell masks (majority vote of gt pixels)
    poses: list

    def __len__(self):
        return len(self.grids)


def gt_cells(gt_mask, factor):
    h, w = gt_mask.shape
    frac = gt_mask.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return frac > 0.5


def holdout_areas(world):
    areas = world.spec.areas
    flagged = [a for a in areas if a.holdout]
    if flagged:
        return flagged
    picked = [a for a in areas if a.holdout is None and a.mode == "informative"]
    return picked or [None]


def make_holdout(world, n, rng, min_object_fraction=0.02, max_tries=2000) -> HoldoutSet:
    """Frames from the holdout areas showing at least ``min_object_fraction`` object pixels."""
    areas = holdout_areas(world)
    f = world.spec.camera.feature_factor
    out = HoldoutSet([], [], [])
    for _ in range(max_tries):
        if len(out) >= n:
            break
        area = areas[int(rng.integers(len(areas)))]
        pose = random_free_pose(world, rng, None if area is None else area.rect)
        frame = render_frame(world, pose, rng)
        if frame.gt_mask.mean() < min_object_fraction:
            continue
        out.grids.append(features.extract(frame))
        out.truth.append(gt_cells(frame.gt_mask, f))
        out.poses.append(pose)
    if not len(out):
        raise ExperimentError("could not draw any holdout frame with visible objects")
    return out


def overall_error(forest, holdout) -> float:
    """Mean per-frame F1 error of binarized predictions against ground-truth cells."""
    if isinstance(holdout, HoldoutSet):
        pairs = list(zip(holdout.grids, holdout.truth))
    else:
        pairs = [(features.extract(fr), gt_cells(fr.gt_mask, fr.camera.feature_factor)) for fr in holdout]
    if not pairs:
        raise ValueError("empty holdout set")
    probs = forest.predict(np.concatenate([g.flat() for g, _ in pairs]))
    errs = []
    start = 0
    for _, truth in pairs:
        pred = metalearner.binarize(probs[start:start + truth.size]).reshape(truth.shape)
        start += truth.size
        errs.append(metalearner.f1_error(*metalearner.confusion(truth, pred)))
    return float(np.mean(errs))


def region_areas(world, regions) -> dict:
    """Area name of every region (majority of its cells; None outside all areas)."""
    out = {}
    for rid, reg in regions.regions.items():
        if reg.n_cells == 0:
            continue
        cells = regions.cells(rid)
        x = (cells[:, 0] + 0.5) * regions.cell
        y = (cells[:, 1] + 0.5) * regions.cell
        idx = np.bincount(world.area_index(x, y), minlength=len(world.spec.areas) + 1)
        k = int(np.argmax(idx))
        out[rid] = world.spec.areas[k].name if k < len(world.spec.areas) else None
    return out


class Explorer:
    """State of one experiment; ``step()`` runs one iteration and returns its metrics row."""

    def __init__(self, cfg: ExperimentConfig, world=None):
        self.cfg = cfg
        self.world = world if world is not None else open_world(cfg.world)
        ss = np.random.SeedSequence(cfg.seed)
        names = ("render", "segment", "learn", "plan", "pose", "holdout")
        self.rngs = dict(zip(names, (np.random.default_rng(s) for s in ss.spawn(len(names)))))
        self.seg_cfg = segmentation.SegmentationConfig(**cfg.segmentation)
        self.tracker = segmentation.PlaneTracker()
        self.grid = mapping.OccupancyGrid.for_world(self.world, cfg.cell)
        self.regions = mapping.RegionMap(self.grid.shape, cfg.cell, cfg.proto_size)
        self.graph = mapping.NavGraph({})
        self.history = metalearner.ErrorHistory(cfg.tau, interpolate=cfg.interpolate_window)
        self.store = learner.SampleStore(features.N_FEATURES, cfg.store_cap)
        self.forest = learner.Forest(cfg.n_trees, cfg.trees_per_update, cfg.subsample, cfg.with_replacement,
                                     cfg.max_depth, cfg.min_leaf)
        self.sim = planner.SimParams(cfg.episodes, cfg.budget if cfg.budget == "auto" else float(cfg.budget),
                                     cfg.sim_epsilon, cfg.random_rate, cfg.gamma, cfg.reward_on_arrival)
        self.clock = SimClock(cfg.speed)
        self.holdout = make_holdout(self.world, cfg.holdout, self.rngs["holdout"], cfg.holdout_min_object_fraction)
        self.pose = CameraPose(*self.world.spec.start)
        self.iteration = 0
        self.q = planner.QTable(gamma=cfg.gamma)
        self.previous = None
        self.tour = []
        self.tour_key = None
        self.rows = []
        self.last = {}

    # -- strategy ---------------------------------------------------------
    def _choose(self, current, rewards):
        cfg, rng, g = self.cfg, self.rngs["plan"], self.graph
        if cfg.strategy == "uniform":
            key = tuple(sorted(g.nodes))
            if key != self.tour_key or current not in self.tour:
                self.tour = planner.uniform_tour(g, within=current)
                self.tour_key = key
            if len(self.tour) < 2:
                return current, None
            return self.tour[(self.tour.index(current) + 1) % len(self.tour)], None
        if not g.actions(current):
            return current, None
        if cfg.strategy == "random":
            action = planner.random_action(g, current, rng)
        elif cfg.strategy == "schmidhuber":
            self.q.sync(g)
            action = planner.schmidhuber_step(self.q, g, rewards, current, rng, self.previous,
                                              cfg.schmidhuber_epsilon, cfg.reward_on_arrival)
            self.previous = (current, action)
        else:
            self.q = planner.train_q(g, rewards, current, self.sim, rng)
            action = planner.next_action(self.q, current, rng, cfg.random_rate)
        return g.neighbour(current, action)[0], action

    def _target_pose(self, target, current):
        rng = self.rngs["pose"]
        for rid in (target, current):
            try:
                return rid, sample_pose_in_region(self.world, self.regions.cells(rid), rng, self.cfg.cell,
                                                  self.cfg.pose_clearance)
            except UnreachableRegion:
                continue
        raise ExperimentError(f"no reachable pose in region {target} nor in current region {current}")

    # -- one iteration ------------------------------------------------------
    def step(self) -> dict:
        cfg = self.cfg
        t0 = time.perf_counter()
        # 1. perceive, map, score
        frame = render_frame(self.world, self.pose, self.rngs["render"], self.clock.now)
        grid = features.extract(frame)
        labels, candidates = segmentation.segment(frame, self.tracker, self.rngs["segment"], self.seg_cfg)
        visible = mapping.update_grid(self.grid, frame, self.tracker.reference, self.seg_cfg.inlier_threshold,
                                      cfg.near_field, cfg.map_range)
        for entry in self.regions.update(visible):
            if entry[0] == "merge":
                for parent in entry[2]:
                    self.history.kill(parent)
        self.graph = mapping.rebuild_graph(self.regions)
        current = self.regions.locate(self.pose)
        lowres = saliency.predict_map(self.forest, grid)
        err = metalearner.frame_error(labels, lowres)
        self.history.record(current, err, self.clock.now)
        lp = self.history.progress(current)
        # 2. next region
        rewards = self.history.rewards(self.graph.nodes)
        target, _ = self._choose(current, rewards)
        # 3-4. target pose and displacement
        target, pose = self._target_pose(target, current)
        dist = math.hypot(pose.x - self.pose.x, pose.y - self.pose.y)
        overhead = time.perf_counter() - t0
        # 5. learner update
        t1 = time.perf_counter()
        learner.ingest_frame(self.store, grid, labels, self.rngs["learn"], cfg.samples_per_frame)
        self.forest.update(self.store, self.rngs["learn"])
        update_wall = time.perf_counter() - t1
        if cfg.timing == "model":
            overhead = cfg.overhead_s
            update_s = cfg.update_base_s + cfg.update_per_sample_s * len(self.store)
        else:
            update_s = update_wall
        # 6. clock
        self.clock.advance(overhead, dist, update_s)
        overall = None
        if self.iteration % cfg.eval_every == 0 or self.iteration == cfg.iterations - 1:
            overall = overall_error(self.forest, self.holdout)
        row = {
            "sim_time_s": self.clock.now, "iteration": self.iteration, "strategy": cfg.strategy,
            "seed": cfg.seed, "region": current, "area": self.world.area_name(self.pose.x, self.pose.y) or "",
            "frame_err": err, "region_lp": lp, "overall_err": overall, "displacement_m": dist,
            "learner_update_s": update_s,
        }
        self.rows.append(row)
        self.last = {"frame": frame, "labels": labels, "candidates": candidates, "grid": grid, "lowres": lowres}
        self.pose = pose
        self.iteration += 1
        return row

    def run(self):
        while self.iteration < self.cfg.iterations:
            self.step()
        return self.rows

    # -- artifacts ----------------------------------------------------------
    def write_artifacts(self, out):
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(out / "metrics.csv", self.rows)
        self.history.write_csv(out / "history.csv")
        self.forest.save(out / "forest.bin")
        self.grid.export_pgm(out / "grid.pgm")
        mapping.write_graph(self.regions, self.graph, out / "nodes.csv", out / "edges.csv")
        if self.cfg.strategy in ("rl-iac", "schmidhuber"):
            self.q.write_csv(out / "q.csv")
        if self.cfg.strategy == "uniform":
            planner.write_tour(out / "tour.csv", self.tour)
        if self.last:
            segmentation.export_labels(out / "last_mask.pgm", self.last["labels"])
            saliency.export_saliency(out / "last_saliency.pgm", self.last["lowres"])
        return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(METRIC_FIELDS)
        for r in rows:
            wr.writerow([_fmt(r[k]) for k in METRIC_FIELDS])


def read_metrics(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({
                "sim_time_s": float(r["sim_time_s"]), "iteration": int(r["iteration"]), "strategy": r["strategy"],
                "seed": int(r["seed"]), "region": int(r["region"]), "area": r["area"],
                "frame_err": float(r["frame_err"]), "region_lp": float(r["region_lp"]),
                "overall_err": float(r["overall_err"]) if r["overall_err"] else None,
                "displacement_m": float(r["displacement_m"]), "learner_update_s": float(r["learner_update_s"]),
            })
    return rows


def run_experiment(cfg: ExperimentConfig, world=None, keep=False):
    """Run one experiment; writes artifacts when ``cfg.out`` is set. Returns the rows (or the Explorer)."""
    ex = Explorer(cfg, world)
    ex.run()
    if cfg.out:
        ex.write_artifacts(cfg.out)
    return ex if keep else ex.rows


def error_series(rows):
    pts = [(r["sim_time_s"], r["overall_err"]) for r in rows if r["overall_err"] is not None]
    return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])


def time_to_threshold(rows, threshold=0.2) -> float:
    """First simulated time at which the overall error is <= threshold (inf if never)."""
    t, e = error_series(rows)
    hit = np.flatnonzero(e <= threshold)
    return float(t[hit[0]]) if len(hit) else math.inf


def _cell(cfg, world):
    try:
        return cfg, run_experiment(cfg, world), None
    except Exception as exc:  # one failing cell must not abort its siblings
        return cfg, None, f"{type(exc).__name__}: {exc}"


def compare(configs, world=None, n_points: int = 200, out=None) -> dict:
    """Run every config; aggregate overall error per strategy on a shared simulated-time axis."""
    configs = list(configs)
    if not configs:
        raise ValueError("compare needs at least one config")
    results = [_cell(c, world) for c in configs]
    ok = [(c, rows) for c, rows, e in results if rows is not None]
    failures = [(c, e) for c, rows, e in results if e is not None]
    t_end = max((rows[-1]["sim_time_s"] for _, rows in ok), default=0.0)
    axis = np.linspace(0.0, t_end, n_points)
    aggregate = {}
    for strat in sorted({c.strategy for c, _ in ok}):
        curves = []
        for c, rows in sorted(((c, r) for c, r in ok if c.strategy == strat), key=lambda cr: cr[0].seed):
            t, e = error_series(rows)
            curves.append(np.interp(axis, t, e))
        curves = np.array(curves)
        aggregate[strat] = (curves.mean(axis=0), curves.var(axis=0), len(curves))
    result = {"axis": axis, "aggregate": aggregate, "runs": ok, "failures": failures}
    if out is not None:
        write_compare(out, result)
    return result


def write_compare(out, result, threshold=0.2):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "long.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(METRIC_FIELDS)
        for _, rows in sorted(result["runs"], key=lambda cr: (cr[0].strategy, cr[0].seed)):
            for r in rows:
                wr.writerow([_fmt(r[k]) for k in METRIC_FIELDS])
    with open(out / "aggregate.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["strategy", "sim_time_s", "mean_err", "var_err", "n_runs"])
        for strat, (mean, var, n) in result["aggregate"].items():
            for t, m, v in zip(result["axis"], mean, var):
                wr.writerow([strat, _fmt(float(t)), _fmt(float(m)), _fmt(float(v)), n])
    with open(out / "time_to_threshold.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["strategy", "seed", "time_to_threshold_s"])
        for c, rows in sorted(result["runs"], key=lambda cr: (cr[0].strategy, cr[0].seed)):
            wr.writerow([c.strategy, c.seed, _fmt(time_to_threshold(rows, threshold))])
    with open(out / "failures.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["strategy", "seed", "error"])
        for c, e in result["failures"]:
            wr.writerow([c.strategy, c.seed, e])
    return out


def time_allocation(rows, areas=None, window_s: float = 500.0, step_s: float | None = None):
    """Sliding-window fraction of frames per area.

    ``areas`` maps region id to area name; without it the row's own area is
    used. Returns (window starts, area names, fractions array windows x areas).
    """
    if not rows:
        return np.zeros(0), [], np.zeros((0, 0))
    if areas is not None:
        missing = {r["region"] for r in rows} - set(areas)
        if missing:
            raise KeyError(f"regions without an area: {sorted(missing)}")
        labels = [areas[r["region"]] or "" for r in rows]
    else:
        labels = [r["area"] for r in rows]
    names = sorted(set(labels))
    times = np.array([r["sim_time_s"] for r in rows])
    code = np.array([names.index(a) for a in labels])
    step_s = step_s or window_s / 10.0
    last = max(times[-1] - window_s, 0.0)
    starts = np.arange(0.0, last + step_s * 0.5, step_s)
    fracs = []
    kept = []
    for s in starts:
        m = (times >= s) & (times <= s + window_s)
        if not m.any():
            continue
        fracs.append(np.bincount(code[m], minlength=len(names)) / m.sum())
        kept.append(s)
    return np.array(kept), names, np.array(fracs)
