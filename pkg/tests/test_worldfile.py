import pytest

from rliac.harness import open_world, resolve_world
from rliac.synthworld import WorldError
from rliac.worldfile import dump_world, load_world, parse_world

MINI = """
[world]
width = 6
depth = 4
appearance_seed = 5

[camera]
width_px = 64
height_px = 48

[walls]
0, 0, 6, 0.1, 2

[objects]
2, 2, 2.5, 2.5, 0.5, 4   # a box

[classes]
4 = 0.9, 0.1, 0.1

[area left]
mode = informative
rect = 0, 0, 3, 4
holdout = true

[area right]
mode = empty
rect = 3, 0, 6, 4
"""


def test_parse_fields():
    spec = parse_world(MINI)
    assert spec.width == 6 and spec.camera.width == 64
    assert spec.objects[0].class_id == 4
    assert spec.palette[4] == (0.9, 0.1, 0.1)
    assert [a.name for a in spec.areas] == ["left", "right"]
    assert spec.areas[0].holdout is True and spec.areas[1].holdout is None


def test_dump_parse_roundtrip():
    spec = parse_world(MINI)
    assert parse_world(dump_world(spec)) == spec


def test_bundled_world_roundtrip():
    spec = load_world(resolve_world("corridor"))
    assert parse_world(dump_world(spec)) == spec
    w = open_world("corridor")
    assert {a.mode for a in w.spec.areas} == {"informative", "empty", "noisy"}


@pytest.mark.parametrize("bad", [
    "width = 3",                                    # before a section
    "[world]\nwidth = 3\ndepth = 3\n[walls]\n1, 2, 3",  # short wall row
    "[world]\nwidth = 3\ndepth = 3\n[objects]\n1, a, 3, 4, 5, 6",
    "[world\nwidth = 3",
    "[world]\ndepth = 3",                           # missing width
])
def test_malformed_inputs(bad):
    with pytest.raises(WorldError):
        parse_world(bad)
