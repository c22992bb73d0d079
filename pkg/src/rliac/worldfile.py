"""Reader/writer for the sectioned world description format.

Grammar (one item per line, ``#`` starts a comment)::

    [world]              key = value pairs: width, depth, floor_z, appearance_seed,
                         noise_sigma, dropout, min_diag, max_diag
    [camera]             height, tilt_deg, hfov_deg, width_px, height_px,
                         feature_factor, max_range
    [start]              x, y, heading_deg
    [walls]              rows "x0, y0, x1, y1, height"
    [objects]            rows "x0, y0, x1, y1, height, class_id"
    [classes]            "class_id = r, g, b" palette overrides
    [area <name>]        mode (informative|empty|noisy), rect = x0, y0, x1, y1,
                         holdout (true|false), floor_color, wall_color

Lengths are meters, colors are floats in [0, 1].
"""

import math
from pathlib import Path

from .synthworld import Area, CameraSpec, WallSpec, ObjectSpec, WorldSpec, WorldError

_ROW_SECTIONS = {"walls", "objects"}


def _floats(text):
    return [float(v) for v in text.split(",")]


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise WorldError(f"not a boolean: {text!r}")


def parse_world(text: str) -> WorldSpec:
    sections = {}
    rows = {"walls": [], "objects": []}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise WorldError(f"line {lineno}: malformed section header")
            current = " ".join(line[1:-1].split())
            sections.setdefault(current, {})
            continue
        if current is None:
            raise WorldError(f"line {lineno}: content before any section")
        if current in _ROW_SECTIONS:
            try:
                rows[current].append((lineno, _floats(line)))
            except ValueError:
                raise WorldError(f"line {lineno}: expected comma-separated numbers") from None
            continue
        if "=" not in line:
            raise WorldError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        sections[current][key] = value

    try:
        return _build_spec(sections, rows)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, WorldError):
            raise
        raise WorldError(f"bad world description: {exc}") from None


def _build_spec(sections, rows):
    w = sections.get("world", {})
    c = sections.get("camera", {})
    camera = CameraSpec(
        height=float(c.get("height", 1.0)),
        tilt=math.radians(float(c.get("tilt_deg", 20.0))),
        hfov=math.radians(float(c.get("hfov_deg", 60.0))),
        width=int(c.get("width_px", 160)),
        height_px=int(c.get("height_px", 120)),
        feature_factor=int(c.get("feature_factor", 8)),
        max_range=float(c.get("max_range", 6.0)),
    )
    walls = []
    for lineno, vals in rows["walls"]:
        if len(vals) != 5:
            raise WorldError(f"line {lineno}: a wall needs x0, y0, x1, y1, height")
        walls.append(WallSpec(*vals))
    objects = []
    for lineno, vals in rows["objects"]:
        if len(vals) != 6:
            raise WorldError(f"line {lineno}: an object needs x0, y0, x1, y1, height, class_id")
        objects.append(ObjectSpec(*vals[:5], class_id=int(vals[5])))
    areas = []
    for name, kv in sections.items():
        if not name.startswith("area "):
            continue
        areas.append(Area(
            name=name[5:].strip(),
            mode=kv.get("mode", "informative"),
            rect=tuple(_floats(kv["rect"])),
            holdout=_bool(kv["holdout"]) if "holdout" in kv else None,
            floor_color=tuple(_floats(kv["floor_color"])) if "floor_color" in kv else None,
            wall_color=tuple(_floats(kv["wall_color"])) if "wall_color" in kv else None,
        ))
    palette = {int(k): tuple(_floats(v)) for k, v in sections.get("classes", {}).items()}
    s = sections.get("start", {})
    return WorldSpec(
        width=float(w["width"]),
        depth=float(w["depth"]),
        floor_z=float(w.get("floor_z", 0.0)),
        walls=tuple(walls),
        objects=tuple(objects),
        areas=tuple(areas),
        appearance_seed=int(w.get("appearance_seed", 0)),
        camera=camera,
        noise_sigma=float(w.get("noise_sigma", 0.05)),
        dropout=float(w.get("dropout", 0.10)),
        min_diag=float(w.get("min_diag", 0.10)),
        max_diag=float(w.get("max_diag", 1.80)),
        palette=palette,
        start=(float(s.get("x", 0.5)), float(s.get("y", 0.5)), math.radians(float(s.get("heading_deg", 0.0)))),
    )


def load_world(path) -> WorldSpec:
    return parse_world(Path(path).read_text())


def _fmt(values):
    return ", ".join(f"{v:.6g}" for v in values)


def dump_world(spec: WorldSpec) -> str:
    cam = spec.camera
    out = [
        "[world]",
        f"width = {spec.width:.6g}",
        f"depth = {spec.depth:.6g}",
        f"floor_z = {spec.floor_z:.6g}",
        f"appearance_seed = {spec.appearance_seed}",
        f"noise_sigma = {spec.noise_sigma:.6g}",
        f"dropout = {spec.dropout:.6g}",
        f"min_diag = {spec.min_diag:.6g}",
        f"max_diag = {spec.max_diag:.6g}",
        "",
        "[camera]",
        f"height = {cam.height:.6g}",
        f"tilt_deg = {math.degrees(cam.tilt):.6g}",
        f"hfov_deg = {math.degrees(cam.hfov):.6g}",
        f"width_px = {cam.width}",
        f"height_px = {cam.height_px}",
        f"feature_factor = {cam.feature_factor}",
        f"max_range = {cam.max_range:.6g}",
        "",
        "[start]",
        f"x = {spec.start[0]:.6g}",
        f"y = {spec.start[1]:.6g}",
        f"heading_deg = {math.degrees(spec.start[2]):.6g}",
        "",
        "[walls]",
    ]
    out += [_fmt((w.x0, w.y0, w.x1, w.y1, w.height)) for w in spec.walls]
    out += ["", "[objects]"]
    out += [_fmt((o.x0, o.y0, o.x1, o.y1, o.height)) + f", {o.class_id}" for o in spec.objects]
    if spec.palette:
        out += ["", "[classes]"]
        out += [f"{k} = {_fmt(v)}" for k, v in sorted(spec.palette.items())]
    for a in spec.areas:
        out += ["", f"[area {a.name}]", f"mode = {a.mode}", f"rect = {_fmt(a.rect)}"]
        if a.holdout is not None:
            out.append(f"holdout = {'true' if a.holdout else 'false'}")
        if a.floor_color is not None:
            out.append(f"floor_color = {_fmt(a.floor_color)}")
        if a.wall_color is not None:
            out.append(f"wall_color = {_fmt(a.wall_color)}")
    return "\n".join(out) + "\n"
