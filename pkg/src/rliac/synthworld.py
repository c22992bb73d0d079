"""Procedural indoor worlds and a pinhole RGB-D raycaster.

A world is a floor plane, axis-aligned vertical wall slabs and axis-aligned
boxes resting on the floor. Frames are produced by casting one ray per pixel
from a camera mounted at a fixed height and tilt on the robot.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math
from pathlib import Path

import numpy as np
from numba import njit

from .pnm import write_pgm, write_ppm

MODES = ("informative", "empty", "noisy")
DEPTH_SENTINEL = 0.0

# brightness per hit face axis (x, y, z) so box edges carry gradients
_SHADING = np.array([0.85, 0.7, 1.0])
_SKY = np.array([0.5, 0.5, 0.5])


class WorldError(ValueError):
    """Invalid world description."""


class UnreachableRegion(RuntimeError):
    """No collision-free pose could be drawn inside a region."""


@dataclass(frozen=True)
class CameraSpec:
    height: float = 1.0
    tilt: float = math.radians(20.0)
    hfov: float = math.radians(60.0)
    width: int = 160
    height_px: int = 120
    feature_factor: int = 8
    max_range: float = 6.0

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / math.tan(self.hfov / 2.0)

    @cached_property
    def rays(self) -> np.ndarray:
        """Unit ray directions in the camera frame (x right, y down, z forward), H x W x 3."""
        f = self.focal
        u = (np.arange(self.width) + 0.5 - self.width / 2.0) / f
        v = (np.arange(self.height_px) + 0.5 - self.height_px / 2.0) / f
        uu, vv = np.meshgrid(u, v)
        d = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    @property
    def up(self) -> np.ndarray:
        """World up direction expressed in camera coordinates."""
        return np.array([0.0, -math.cos(self.tilt), -math.sin(self.tilt)])


@dataclass(frozen=True)
class WallSpec:
    x0: float
    y0: float
    x1: float
    y1: float
    height: float


@dataclass(frozen=True)
class ObjectSpec:
    x0: float
    y0: float
    x1: float
    y1: float
    height: float
    class_id: int = 0

    @property
    def diagonal(self) -> float:
        return math.sqrt((self.x1 - self.x0) ** 2 + (self.y1 - self.y0) ** 2 + self.height ** 2)

    @property
    def center(self):
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)


@dataclass(frozen=True)
class Area:
    name: str
    mode: str
    rect: tuple
    holdout: bool | None = None
    floor_color: tuple | None = None
    wall_color: tuple | None = None

    def contains(self, x, y):
        x0, y0, x1, y1 = self.rect
        return (x >= x0) & (x < x1) & (y >= y0) & (y < y1)


@dataclass(frozen=True)
class WorldSpec:
    width: float
    depth: float
    floor_z: float = 0.0
    walls: tuple = ()
    objects: tuple = ()
    areas: tuple = ()
    appearance_seed: int = 0
    camera: CameraSpec = field(default_factory=CameraSpec)
    noise_sigma: float = 0.05
    dropout: float = 0.10
    min_diag: float = 0.10
    max_diag: float = 1.80
    palette: dict = field(default_factory=dict)
    start: tuple = (0.5, 0.5, 0.0)


@dataclass(frozen=True)
class CameraPose:
    x: float
    y: float
    heading: float


@dataclass
class Frame:
    depth: np.ndarray
    appearance: np.ndarray
    gt_mask: np.ndarray
    object_ids: np.ndarray
    pose: CameraPose
    camera: CameraSpec
    timestamp: float = 0.0

    @property
    def valid(self) -> np.ndarray:
        return self.depth > DEPTH_SENTINEL

    def points(self) -> np.ndarray:
        """Back-projected camera-frame points, H x W x 3 (NaN where depth is unavailable)."""
        pts = self.camera.rays * self.depth[..., None]
        pts[~self.valid] = np.nan
        return pts


def camera_rotation(pose: CameraPose, camera: CameraSpec) -> np.ndarray:
    """Columns are the camera right, down and forward axes in world coordinates."""
    ch, sh = math.cos(pose.heading), math.sin(pose.heading)
    ct, st = math.cos(camera.tilt), math.sin(camera.tilt)
    forward = np.array([ch * ct, sh * ct, -st])
    right = np.array([sh, -ch, 0.0])
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def _overlap(a, b, eps=1e-9):
    return a[0] < b[2] - eps and b[0] < a[2] - eps and a[1] < b[3] - eps and b[1] < a[3] - eps


def _color(seed, key, lo, hi):
    return np.random.default_rng([seed, key]).uniform(lo, hi, 3)


class World:
    """Immutable, validated world ready for rendering."""

    def __init__(self, spec: WorldSpec):
        self.spec = spec
        walls, objects = spec.walls, spec.objects
        fz = spec.floor_z
        self.n_walls = len(walls)
        lo = [(w.x0, w.y0, fz) for w in walls] + [(o.x0, o.y0, fz) for o in objects]
        hi = [(w.x1, w.y1, fz + w.height) for w in walls] + [(o.x1, o.y1, fz + o.height) for o in objects]
        self.box_lo = np.array(lo, dtype=float).reshape(-1, 3)
        self.box_hi = np.array(hi, dtype=float).reshape(-1, 3)
        self.footprints = np.concatenate([self.box_lo[:, :2], self.box_hi[:, :2]], axis=1)

        seed = spec.appearance_seed
        classes = sorted({o.class_id for o in objects})
        self.class_colors = {
            c: np.asarray(spec.palette[c], float) if c in spec.palette else _color(seed, c, 0.05, 0.95)
            for c in classes
        }
        n_areas = len(spec.areas)
        self.floor_colors = np.empty((n_areas + 1, 3))
        self.wall_colors = np.empty((n_areas + 1, 3))
        for i, a in enumerate(spec.areas):
            self.floor_colors[i] = a.floor_color if a.floor_color is not None else _color(seed, 10_000 + i, 0.2, 0.8)
            self.wall_colors[i] = a.wall_color if a.wall_color is not None else _color(seed, 20_000 + i, 0.2, 0.8)
        self.floor_colors[n_areas] = _color(seed, 30_000, 0.2, 0.8)
        self.wall_colors[n_areas] = _color(seed, 40_000, 0.2, 0.8)

        self.object_area = np.array([self.area_index(*o.center) for o in objects], dtype=int)
        noisy = {i for i, a in enumerate(spec.areas) if a.mode == "noisy"}
        self.noisy_objects = np.array([a in noisy for a in self.object_area], dtype=bool)
        self.object_colors = np.array([self.class_colors[o.class_id] for o in objects]).reshape(-1, 3)

    @property
    def objects(self):
        return self.spec.objects

    def area_index(self, x, y):
        """Index of the area containing (x, y); len(areas) when none does. Works on arrays."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, len(self.spec.areas), dtype=int)
        for i in reversed(range(len(self.spec.areas))):
            out[self.spec.areas[i].contains(x, y)] = i
        return out if out.ndim else int(out)

    def area_name(self, x, y):
        i = self.area_index(x, y)
        return self.spec.areas[i].name if i < len(self.spec.areas) else None

    def clearance(self, x, y) -> float:
        """Distance from (x, y) to the nearest wall/object footprint or world boundary."""
        s = self.spec
        d_bound = min(x, y, s.width - x, s.depth - y)
        if not len(self.footprints):
            return d_bound
        fp = self.footprints
        dx = np.maximum(np.maximum(fp[:, 0] - x, x - fp[:, 2]), 0.0)
        dy = np.maximum(np.maximum(fp[:, 1] - y, y - fp[:, 3]), 0.0)
        return float(min(d_bound, np.hypot(dx, dy).min()))

    def is_free(self, x, y, clearance=0.25) -> bool:
        return self.clearance(x, y) > clearance


def build_world(spec: WorldSpec) -> World:
    cam = spec.camera
    f = cam.feature_factor
    if f < 1 or cam.width % f or cam.height_px % f:
        raise WorldError(f"image {cam.width}x{cam.height_px} not divisible by feature factor {f}")
    if spec.width <= 0 or spec.depth <= 0:
        raise WorldError("world extent must be positive")
    for a in spec.areas:
        if a.mode not in MODES:
            raise WorldError(f"area {a.name!r}: unknown mode {a.mode!r}")
        if len(a.rect) != 4 or a.rect[0] >= a.rect[2] or a.rect[1] >= a.rect[3]:
            raise WorldError(f"area {a.name!r}: bad rect {a.rect}")
    for w in spec.walls:
        if w.x0 >= w.x1 or w.y0 >= w.y1 or w.height <= 0:
            raise WorldError(f"degenerate wall {w}")
    rects = []
    for i, o in enumerate(spec.objects):
        if o.x0 >= o.x1 or o.y0 >= o.y1 or o.height <= 0:
            raise WorldError(f"object {i}: degenerate box")
        if not spec.min_diag <= o.diagonal <= spec.max_diag:
            raise WorldError(
                f"object {i}: diagonal {o.diagonal:.3f} m outside [{spec.min_diag}, {spec.max_diag}]"
            )
        r = (o.x0, o.y0, o.x1, o.y1)
        for j, other in enumerate(rects):
            if _overlap(r, other):
                raise WorldError(f"objects {j} and {i} overlap")
        for w in spec.walls:
            if _overlap(r, (w.x0, w.y0, w.x1, w.y1)):
                raise WorldError(f"object {i} is embedded in a wall")
        for a in spec.areas:
            if a.mode == "empty" and a.contains(*o.center):
                raise WorldError(f"object {i} lies in empty area {a.name!r}")
        rects.append(r)
    return World(spec)


@njit(cache=True)
def _nearest_boxes(origin, dirs, lo, hi, best, kind, index, axis, n_walls):
    """Slab test of every ray against every box, keeping hits nearer than ``best``."""
    for i in range(dirs.shape[0]):
        for b in range(lo.shape[0]):
            tmin = -np.inf
            tmax = np.inf
            ax = 0
            for k in range(3):
                d = dirs[i, k]
                if abs(d) < 1e-12:
                    if origin[k] < lo[b, k] or origin[k] > hi[b, k]:
                        tmin = np.inf
                        break
                    continue
                t1 = (lo[b, k] - origin[k]) / d
                t2 = (hi[b, k] - origin[k]) / d
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                    ax = k
                if t2 < tmax:
                    tmax = t2
            if tmax >= tmin and tmin > 0.0 and tmin < best[i]:
                best[i] = tmin
                axis[i] = ax
                if b < n_walls:
                    kind[i] = 2
                    index[i] = b
                else:
                    kind[i] = 3
                    index[i] = b - n_walls


def cast_rays(world: World, pose: CameraPose):
    """Nearest hit per pixel.

    Returns (t, kind, index, axis, hit_xy) with kind 0 = nothing, 1 = floor,
    2 = wall, 3 = object and index the wall/object number.
    """
    cam = world.spec.camera
    R = camera_rotation(pose, cam)
    dirs = np.ascontiguousarray(cam.rays.reshape(-1, 3) @ R.T)
    origin = np.array([pose.x, pose.y, world.spec.floor_z + cam.height])
    n = len(dirs)

    best = np.full(n, np.inf)
    kind = np.zeros(n, dtype=np.int8)
    index = np.full(n, -1, dtype=np.int32)
    axis = np.full(n, 2, dtype=np.int8)

    down = dirs[:, 2] < -1e-12
    t_floor = np.where(down, (world.spec.floor_z - origin[2]) / np.where(down, dirs[:, 2], -1.0), np.inf)
    sel = t_floor < best
    best[sel], kind[sel] = t_floor[sel], 1

    if len(world.box_lo):
        _nearest_boxes(origin, dirs, world.box_lo, world.box_hi, best, kind, index, axis, world.n_walls)
    hit_xy = origin[:2] + dirs[:, :2] * np.where(np.isfinite(best), best, 0.0)[:, None]
    return best, kind, index, axis, hit_xy


def render_frame(world: World, pose: CameraPose, rng: np.random.Generator, timestamp: float = 0.0) -> Frame:
    spec = world.spec
    cam = spec.camera
    h, w = cam.height_px, cam.width
    t, kind, index, axis, hit_xy = cast_rays(world, pose)

    obj_colors = world.object_colors.copy()
    if world.noisy_objects.any():
        obj_colors[world.noisy_objects] = rng.uniform(0.0, 1.0, (int(world.noisy_objects.sum()), 3))

    area = world.area_index(hit_xy[:, 0], hit_xy[:, 1])
    color = np.tile(_SKY, (len(t), 1))
    m = kind == 1
    color[m] = world.floor_colors[area[m]]
    m = kind == 2
    color[m] = world.wall_colors[area[m]] * _SHADING[axis[m]][:, None]
    m = kind == 3
    color[m] = obj_colors[index[m]] * _SHADING[axis[m]][:, None]
    if spec.noise_sigma > 0:
        color = color + rng.normal(0.0, spec.noise_sigma, color.shape)
    color = np.clip(color, 0.0, 1.0)

    is_obj = kind == 3
    depth = np.where((kind > 0) & (t <= cam.max_range), t, DEPTH_SENTINEL)
    if spec.dropout > 0:
        drop = is_obj & (rng.random(len(t)) < spec.dropout)
        depth[drop] = DEPTH_SENTINEL

    return Frame(
        depth=depth.reshape(h, w),
        appearance=color.reshape(h, w, 3),
        gt_mask=is_obj.reshape(h, w),
        object_ids=np.where(is_obj, index, -1).reshape(h, w),
        pose=pose,
        camera=cam,
        timestamp=timestamp,
    )


def sample_pose_in_region(world: World, cells, rng: np.random.Generator, cell_size: float = 0.1,
                          clearance: float = 0.25, retries: int = 200) -> CameraPose:
    """Uniform collision-free pose over a region's cells, given as a (K, 2) array of (ix, iy)."""
    cells = np.asarray(cells).reshape(-1, 2)
    if not len(cells):
        raise UnreachableRegion("region has no cells")
    for _ in range(retries):
        ix, iy = cells[rng.integers(len(cells))]
        x = (ix + rng.random()) * cell_size
        y = (iy + rng.random()) * cell_size
        heading = rng.uniform(0.0, 2.0 * math.pi)
        if world.is_free(x, y, clearance):
            return CameraPose(float(x), float(y), float(heading))
    raise UnreachableRegion(f"no free pose after {retries} draws")


def random_free_pose(world: World, rng: np.random.Generator, rect=None, clearance=0.25, retries=1000) -> CameraPose:
    """Uniform collision-free pose inside rect (defaults to the whole world)."""
    x0, y0, x1, y1 = rect if rect is not None else (0.0, 0.0, world.spec.width, world.spec.depth)
    for _ in range(retries):
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        if world.is_free(x, y, clearance):
            return CameraPose(float(x), float(y), float(heading))
    raise UnreachableRegion(f"no free pose in {rect}")


def export_frame(frame: Frame, prefix) -> list:
    """Write ``<prefix>_depth.pgm`` (16-bit millimeters) and ``<prefix>_rgb.ppm``."""
    prefix = Path(prefix)
    depth_mm = np.clip(np.round(frame.depth * 1000.0), 0, 65535).astype(np.uint16)
    paths = [prefix.with_name(prefix.name + "_depth.pgm"), prefix.with_name(prefix.name + "_rgb.ppm")]
    write_pgm(paths[0], depth_mm)
    write_ppm(paths[1], frame.appearance)
    return paths
