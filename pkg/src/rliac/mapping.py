"""Occupancy grid, proto-region partition into regions, and the navigation graph.

Cells are indexed (iy, ix) with x to the right and y up. Proto-regions are
fixed squares of ``proto_cells`` cells; regions are 4-connected sets of
observed Free cells inside one proto-region.
"""

import csv
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .synthworld import camera_rotation
from .pnm import write_pgm

ACTIONS = ("Up", "Down", "Left", "Right")
UP, DOWN, LEFT, RIGHT = range(4)
_FOUR = ndimage.generate_binary_structure(2, 1)


class Cell(IntEnum):
    UNEXPLORED = 0
    FREE = 1
    OCCUPIED = 2


class UnassignedCell(LookupError):
    pass


class OccupancyGrid:
    def __init__(self, width_m: float, depth_m: float, cell: float = 0.1, blocked=None):
        self.cell = cell
        self.nx = int(np.ceil(width_m / cell - 1e-9))
        self.ny = int(np.ceil(depth_m / cell - 1e-9))
        self.state = np.zeros((self.ny, self.nx), dtype=np.uint8)
        # static obstacle raster used only by the near-field sweep
        self.blocked = np.zeros((self.ny, self.nx), bool) if blocked is None else blocked

    @classmethod
    def for_world(cls, world, cell: float = 0.1):
        g = cls(world.spec.width, world.spec.depth, cell)
        cx = (np.arange(g.nx) + 0.5) * cell
        cy = (np.arange(g.ny) + 0.5) * cell
        for x0, y0, x1, y1 in world.footprints:
            g.blocked[np.ix_((cy >= y0) & (cy <= y1), (cx >= x0) & (cx <= x1))] = True
        return g

    @property
    def shape(self):
        return self.state.shape

    def cell_of(self, x, y):
        return int(np.floor(y / self.cell)), int(np.floor(x / self.cell))

    def inside(self, iy, ix):
        return 0 <= iy < self.ny and 0 <= ix < self.nx

    def export_pgm(self, path):
        gray = np.array([128, 255, 0], dtype=np.uint8)[self.state]
        write_pgm(path, gray[::-1])  # north up


def world_points(frame):
    """World-frame (x, y, height above floor) of every valid depth pixel."""
    pts = frame.points().reshape(-1, 3)
    pts = pts[np.isfinite(pts[:, 0])]
    R = camera_rotation(frame.pose, frame.camera)
    out = pts @ R.T
    out[:, 0] += frame.pose.x
    out[:, 1] += frame.pose.y
    out[:, 2] += frame.camera.height
    return out, pts


def update_grid(grid: OccupancyGrid, frame, plane=None, floor_tol: float = 0.02, near_field: float = 1.2,
                map_range: float = 4.0, close: bool = True):
    """Write one frame into the grid; returns the Free cells seen this frame as an (K, 2) (iy, ix) array.

    Floor returns (within ``floor_tol`` of the tracked plane, or of the floor
    height when no plane is given) closer than ``map_range`` mark cells Free,
    other returns Occupied. One-cell gaps between floor cells of the same
    frame are closed. Cells within ``near_field`` metres of the robot,
    reachable without crossing a static obstacle, are also marked Free.
    """
    touched_free = np.zeros(grid.shape, bool)
    iy0, ix0 = grid.cell_of(frame.pose.x, frame.pose.y)
    if near_field > 0 and grid.inside(iy0, ix0) and not grid.blocked[iy0, ix0]:
        r = int(np.ceil(near_field / grid.cell))
        ys = slice(max(0, iy0 - r), min(grid.ny, iy0 + r + 1))
        xs = slice(max(0, ix0 - r), min(grid.nx, ix0 + r + 1))
        yy, xx = np.mgrid[ys, xs]
        disk = (np.hypot((yy + 0.5) * grid.cell - frame.pose.y, (xx + 0.5) * grid.cell - frame.pose.x)
                <= near_field) & ~grid.blocked[ys, xs]
        lab, _ = ndimage.label(disk, _FOUR)
        near = lab == lab[iy0 - ys.start, ix0 - xs.start]
        touched_free[ys, xs] |= near

    wp, cam_pts = world_points(frame)
    occupied = np.zeros(grid.shape, bool)
    if len(wp):
        floor = (plane.distance(cam_pts) <= floor_tol) if plane is not None else (np.abs(wp[:, 2]) <= floor_tol)
        iy = np.floor(wp[:, 1] / grid.cell).astype(int)
        ix = np.floor(wp[:, 0] / grid.cell).astype(int)
        ok = (iy >= 0) & (iy < grid.ny) & (ix >= 0) & (ix < grid.nx)
        ok &= np.linalg.norm(cam_pts, axis=1) <= map_range
        seen = np.zeros(grid.shape, bool)
        seen[iy[ok & floor], ix[ok & floor]] = True
        if close:
            seen = ndimage.binary_closing(seen, np.ones((3, 3), bool), border_value=0) | seen
        touched_free |= seen
        occupied[iy[ok & ~floor], ix[ok & ~floor]] = True
    free = touched_free & ~occupied
    grid.state[free] = Cell.FREE
    grid.state[occupied] = Cell.OCCUPIED
    return np.argwhere(free)


@dataclass
class Region:
    id: int
    proto: int
    n_cells: int = 0
    sum_iy: float = 0.0
    sum_ix: float = 0.0
    alive: bool = True

    def centroid(self, cell):
        return ((self.sum_ix / self.n_cells + 0.5) * cell, (self.sum_iy / self.n_cells + 0.5) * cell)


class RegionMap:
    """Region partition of observed Free cells, one proto-region at a time."""

    def __init__(self, shape, cell: float = 0.1, proto_size: float = 5.0):
        self.ny, self.nx = shape
        self.cell = cell
        self.proto_cells = max(1, int(round(proto_size / cell)))
        self.npx = -(-self.nx // self.proto_cells)
        self.npy = -(-self.ny // self.proto_cells)
        self.owner = np.full(shape, -1, dtype=np.int32)
        self.regions: dict[int, Region] = {}
        self._next_id = 0

    def proto_of(self, iy, ix):
        return (iy // self.proto_cells) * self.npx + ix // self.proto_cells

    def proto_slices(self, p):
        py, px = divmod(p, self.npx)
        s = self.proto_cells
        return slice(py * s, min(self.ny, (py + 1) * s)), slice(px * s, min(self.nx, (px + 1) * s))

    @property
    def live(self):
        return [r for r in self.regions.values() if r.alive]

    def live_ids(self):
        return sorted(r.id for r in self.regions.values() if r.alive)

    def cells(self, rid):
        """(K, 2) array of (ix, iy) cells of a region."""
        iy, ix = np.nonzero(self.owner == rid)
        return np.stack([ix, iy], axis=1)

    def centroid(self, rid):
        return self.regions[rid].centroid(self.cell)

    def _new(self, proto):
        r = Region(self._next_id, proto)
        self.regions[r.id] = r
        self._next_id += 1
        return r

    def _assign(self, region, ys, xs, comp_mask):
        sub_iy, sub_ix = np.nonzero(comp_mask)
        self.owner[sub_iy + ys.start, sub_ix + xs.start] = region.id
        region.n_cells = len(sub_iy)
        region.sum_iy = float((sub_iy + ys.start).sum())
        region.sum_ix = float((sub_ix + xs.start).sum())

    def update(self, visible) -> list:
        """Absorb the visible Free cells ((K, 2) of (iy, ix)); returns a change log.

        Per proto-region, every 4-connected component of (existing region
        cells plus new visible cells) that contains a visible cell becomes
        one region: a fresh one when it holds no old region, the same one
        when it holds exactly one, and a fresh merged one when it holds
        several (which die). Log entries: ("new", id), ("grow", id),
        ("merge", id, parents).
        """
        visible = np.asarray(visible, dtype=int).reshape(-1, 2)
        log = []
        if not len(visible):
            return log
        protos = np.unique(self.proto_of(visible[:, 0], visible[:, 1]))
        vmask = np.zeros((self.ny, self.nx), bool)
        vmask[visible[:, 0], visible[:, 1]] = True
        for p in protos.tolist():
            ys, xs = self.proto_slices(p)
            own = self.owner[ys, xs]
            vis = vmask[ys, xs]
            lab, n = ndimage.label((own >= 0) | vis, _FOUR)
            for c in range(1, n + 1):
                comp = lab == c
                new_cells = comp & vis & (own < 0)
                if not new_cells.any():
                    continue
                parents = np.unique(own[comp & (own >= 0)]).tolist()
                if len(parents) == 1:
                    region = self.regions[parents[0]]
                    log.append(("grow", region.id))
                else:
                    region = self._new(p)
                    for q in parents:
                        self.regions[q].alive = False
                        self.regions[q].n_cells = 0
                    log.append(("merge", region.id, parents) if parents else ("new", region.id))
                self._assign(region, ys, xs, comp)
        return log

    def locate(self, pose) -> int:
        iy, ix = int(np.floor(pose.y / self.cell)), int(np.floor(pose.x / self.cell))
        if not (0 <= iy < self.ny and 0 <= ix < self.nx) or self.owner[iy, ix] < 0:
            raise UnassignedCell(f"pose ({pose.x:.2f}, {pose.y:.2f}) is in no region")
        return int(self.owner[iy, ix])


def update_regions(regions: RegionMap, visible) -> list:
    return regions.update(visible)


def locate(regions: RegionMap, pose) -> int:
    return regions.locate(pose)


@dataclass
class NavGraph:
    nodes: dict                                 # id -> (cx, cy)
    edges: dict = field(default_factory=dict)   # id -> {action: (neighbour, weight)}

    def actions(self, rid):
        return sorted(self.edges.get(rid, {}))

    def neighbour(self, rid, action):
        return self.edges[rid][action]

    def undirected(self):
        """{(a, b): weight} with a < b over every labelled edge."""
        out = {}
        for a, slots in self.edges.items():
            for b, w in slots.values():
                out[(min(a, b), max(a, b))] = w
        return out

    def edge_rows(self):
        return [(a, b, ACTIONS[act], w) for a in sorted(self.edges) for act, (b, w) in sorted(self.edges[a].items())]


def adjacent_pairs(regions: RegionMap):
    """Set of (a, b) region pairs (both orders) sharing a cell border across a proto boundary."""
    o = regions.owner
    pairs = set()
    for a, b in ((o[:, :-1], o[:, 1:]), (o[:-1, :], o[1:, :])):
        m = (a >= 0) & (b >= 0) & (a != b)
        for u, v in set(zip(a[m].tolist(), b[m].tolist())):
            pairs.add((u, v))
            pairs.add((v, u))
    return pairs


def _direction(regions, pa, pb):
    ay, ax = divmod(pa, regions.npx)
    by, bx = divmod(pb, regions.npx)
    if (ay, ax + 1) == (by, bx):
        return RIGHT
    if (ay, ax - 1) == (by, bx):
        return LEFT
    if (ay + 1, ax) == (by, bx):
        return UP
    if (ay - 1, ax) == (by, bx):
        return DOWN
    return None


def rebuild_graph(regions: RegionMap) -> NavGraph:
    nodes = {r.id: r.centroid(regions.cell) for r in regions.live}
    edges: dict = {}
    for a, b in sorted(adjacent_pairs(regions)):
        act = _direction(regions, regions.regions[a].proto, regions.regions[b].proto)
        if act is None:
            continue
        w = float(np.hypot(nodes[a][0] - nodes[b][0], nodes[a][1] - nodes[b][1]))
        w = max(w, 1e-6)
        slots = edges.setdefault(a, {})
        if act not in slots or w < slots[act][1]:
            slots[act] = (b, w)
    return NavGraph(nodes, edges)


def write_graph(regions: RegionMap, graph: NavGraph, nodes_path, edges_path):
    with open(nodes_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["region", "cx_m", "cy_m", "proto", "area_cells"])
        for rid in sorted(graph.nodes):
            cx, cy = graph.nodes[rid]
            wr.writerow([rid, f"{cx:.6g}", f"{cy:.6g}", regions.regions[rid].proto, regions.regions[rid].n_cells])
    with open(edges_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["region_a", "region_b", "action", "weight_m"])
        for a, b, act, w in graph.edge_rows():
            wr.writerow([a, b, act, f"{w:.6g}"])
