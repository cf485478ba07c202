"""Scanline rasterization of compact glyphs and image metrics.

Images are square float arrays, row-major with the origin at the top-left,
intensities in [0, 1] (1 = ink).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .bezier import flatten
from .glyph_ir import CommandType, Glyph, RepKind, RepresentationError

NONZERO = "nonzero"
EVENODD = "evenodd"


class RasterError(ValueError):
    pass


def outline_polylines(g: Glyph, tol: float) -> list[np.ndarray]:
    """One closed polyline per subpath, in canvas units."""
    if g.rep_kind != RepKind.COMPACT:
        raise RepresentationError("rasterize expects a compact glyph")
    polys = []
    for path in g.subpaths():
        pen = np.array(path[0].end)
        pts = [pen]
        for c in path[1:]:
            if c.cmd == CommandType.LINE:
                pen = np.array(c.end)
                pts.append(pen)
            elif c.cmd == CommandType.CURVE:
                seg = flatten([pen, c.c1, c.c2, c.end], tol)
                pts.extend(seg[1:])
                pen = seg[-1]
        polys.append(np.array(pts))
    return polys


def _edges(polys: list[np.ndarray], res: int) -> np.ndarray:
    segs = []
    for p in polys:
        if len(p) < 2:
            continue
        q = p * res
        closed = np.vstack([q, q[:1]])
        segs.append(np.hstack([closed[:-1], closed[1:]]))
    if not segs:
        return np.zeros((0, 4))
    e = np.vstack(segs)
    return e[e[:, 1] != e[:, 3]]


def _coverage(edges: np.ndarray, n: int, fill_rule: str) -> np.ndarray:
    """Binary fill sampled at the centres of an n x n grid (pixel units)."""
    if len(edges) == 0:
        return np.zeros((n, n))
    x0, y0, x1, y1 = edges.T
    centers = np.arange(n) + 0.5
    yc = centers[:, None]
    lo, hi = np.minimum(y0, y1), np.maximum(y0, y1)
    active = (yc >= lo) & (yc < hi)  # (rows, edges)
    t = (yc - y0) / (y1 - y0)
    xcross = np.where(active, x0 + t * (x1 - x0), np.inf)
    direction = np.where(y1 > y0, 1, -1)
    left = xcross[:, None, :] < centers[None, :, None]  # (rows, cols, edges)
    if fill_rule == NONZERO:
        winding = (left * direction).sum(axis=-1)
        return (winding != 0).astype(float)
    if fill_rule == EVENODD:
        return (left.sum(axis=-1) % 2 == 1).astype(float)
    raise RasterError(f"unknown fill rule {fill_rule!r}")


def rasterize(g: Glyph, resolution: int = 64, fill_rule: str = NONZERO, supersample: int = 1) -> np.ndarray:
    """Binary image of ``g`` sampled at pixel centres.

    ``supersample > 1`` averages an ``s x s`` sub-grid per pixel; meant for
    export only, the metric path stays binary.
    """
    if resolution <= 0:
        raise RasterError("resolution must be positive")
    n = resolution * supersample
    polys = outline_polylines(g, tol=0.25 / n)
    img = _coverage(_edges(polys, n), n, fill_rule)
    if supersample > 1:
        img = img.reshape(resolution, supersample, resolution, supersample).mean(axis=(1, 3))
    return img


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise RasterError(f"image shapes differ or are not square: {a.shape} vs {b.shape}")


def l1_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _check_pair(a, b)
    return float(np.abs(a - b).mean())


def iou(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _check_pair(a, b)
    if not 0.0 < threshold < 1.0:
        raise RasterError("threshold must lie in (0, 1)")
    fa, fb = a > threshold, b > threshold
    union = np.logical_or(fa, fb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(fa, fb).sum() / union)


def fill_ratio(img: np.ndarray) -> float:
    return float(np.asarray(img).mean())


# -- image files ---------------------------------------------------------------

def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=float)
    data = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(Path(path), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise RasterError(f"{path}: only binary PGM (P5) is supported")
    w, h, maxval = (int(f) for f in fields[1:])
    pos += 1
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return data.astype(float) / maxval


def write_png(path, img: np.ndarray) -> None:
    from PIL import Image

    data = np.clip(np.rint(np.asarray(img, dtype=float) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(Path(path))
