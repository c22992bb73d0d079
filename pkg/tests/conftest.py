import math

import numpy as np
import pytest

from rliac.synthworld import Area, CameraSpec, ObjectSpec, WallSpec, WorldSpec, build_world


def small_camera(**kw):
    base = dict(height=1.0, tilt=math.radians(20.0), hfov=math.radians(60.0), width=64, height_px=48,
                feature_factor=8, max_range=6.0)
    base.update(kw)
    return CameraSpec(**base)


def make_world(objects=(), walls=(), areas=(), camera=None, width=10.0, depth=10.0, **kw):
    spec = WorldSpec(width=width, depth=depth, walls=tuple(walls), objects=tuple(objects), areas=tuple(areas),
                     camera=camera or small_camera(), appearance_seed=3, **kw)
    return build_world(spec)


def shell(width, depth, h=2.0, t=0.1):
    return [WallSpec(0, 0, width, t, h), WallSpec(0, depth - t, width, depth, h),
            WallSpec(0, t, t, depth - t, h), WallSpec(width - t, t, width, depth - t, h)]


def cube(cx, cy, size=0.5, height=None, cls=1):
    h = size if height is None else height
    return ObjectSpec(cx - size / 2, cy - size / 2, cx + size / 2, cy + size / 2, h, cls)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def room():
    """10 x 10 m walled room with a few objects."""
    objs = [cube(3.0, 5.0), cube(6.0, 3.0, 0.6, 0.8, 2), cube(7.0, 7.0, 0.4, 0.5, 3)]
    return make_world(objs, shell(10, 10))


__all__ = ["small_camera", "make_world", "shell", "cube", "Area", "ObjectSpec", "WallSpec"]


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
