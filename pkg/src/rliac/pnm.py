"""Binary PGM/PPM (P5/P6) readers and writers used for every image dump."""

from pathlib import Path

import numpy as np


def write_pgm(path, image):
    """Write a 2-D integer array as P5. uint16 data is stored big-endian as the format requires."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    if image.dtype == np.uint16:
        maxval, payload = 65535, image.astype(">u2").tobytes()
    else:
        if image.min(initial=0) < 0 or image.max(initial=0) > 255:
            raise ValueError("8-bit PGM values must lie in [0, 255]")
        maxval, payload = 255, image.astype(np.uint8).tobytes()
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n%d\n" % (w, h, maxval) + payload)


def write_ppm(path, rgb):
    """Write an H x W x 3 array of floats in [0, 1] as an 8-bit P6 file."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM needs an H x W x 3 array")
    data = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = data.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + data.tobytes())


def _read_header(raw):
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    return fields, pos + 1


def read_pnm(path):
    """Read a P5 or P6 file. Returns uint8/uint16 for P5 and an H x W x 3 uint8 array for P6."""
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _read_header(raw)
    w, h, maxval = int(w), int(h), int(maxval)
    if magic == b"P5":
        dtype = ">u2" if maxval > 255 else np.uint8
        return np.frombuffer(raw, dtype=dtype, count=w * h, offset=offset).reshape(h, w).astype(
            np.uint16 if maxval > 255 else np.uint8
        )
    if magic == b"P6":
        return np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=offset).reshape(h, w, 3).copy()
    raise ValueError(f"unsupported PNM magic {magic!r}")
