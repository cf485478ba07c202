"""Drawing-command glyph model, SVG path subset I/O, and relaxed/compact conversion.

Coordinates live on the unit square with the origin at the top-left and y
growing downward.  Each command stores four coordinate pairs in the slot
order ``start, control1, control2, end`` (flattened as ``x1 y1 .. x4 y4``)
plus a mask of the eight used arguments.

* Compact form (SVG-like): the start point is implied by the pen, so Move
  and Line use only the end slot and Curve uses control1, control2, end.
* Relaxed form: every Move/Line also stores its start, every Curve all four
  pairs.  A relaxed Move starts where the pen was (the first Move starts on
  its own end point).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_ARGS = 8
_COORD_TOL = 1e-9


class CommandType(IntEnum):
    MOVE = 0
    LINE = 1
    CURVE = 2
    EOS = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> CommandType:
        try:
            return _FROM_LABEL[label]
        except KeyError:
            raise GlyphError(f"unknown command label {label!r}") from None


_LABELS = {
    CommandType.MOVE: "MoveFromTo",
    CommandType.LINE: "LineFromTo",
    CommandType.CURVE: "CurveFromTo",
    CommandType.EOS: "EOS",
}
_FROM_LABEL = {v: k for k, v in _LABELS.items()}


class RepKind(str, Enum):
    COMPACT = "Compact"
    RELAXED = "Relaxed"


# used-argument patterns, indexed by CommandType
RELAXED_MASKS = np.array([
    [1, 1, 0, 0, 0, 0, 1, 1],
    [1, 1, 0, 0, 0, 0, 1, 1],
    [1, 1, 1, 1, 1, 1, 1, 1],
    [0, 0, 0, 0, 0, 0, 0, 0],
], dtype=bool)
COMPACT_MASKS = np.array([
    [0, 0, 0, 0, 0, 0, 1, 1],
    [0, 0, 0, 0, 0, 0, 1, 1],
    [0, 0, 1, 1, 1, 1, 1, 1],
    [0, 0, 0, 0, 0, 0, 0, 0],
], dtype=bool)


def masks_for(rep: RepKind) -> np.ndarray:
    return RELAXED_MASKS if rep == RepKind.RELAXED else COMPACT_MASKS


class GlyphError(ValueError):
    pass


class GlyphParseError(GlyphError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class UnsupportedCommandError(GlyphError):
    def __init__(self, command: str, offset: int | None = None):
        where = "" if offset is None else f" at byte {offset}"
        super().__init__(f"unsupported path command {command!r}{where}")
        self.command = command
        self.offset = offset


class StructureError(GlyphError):
    pass


class RepresentationError(GlyphError):
    pass


class LengthError(GlyphError):
    pass


Point = tuple[float, float]


@dataclass(frozen=True)
class DrawCommand:
    cmd: CommandType
    pts: tuple[float, ...] = (0.0,) * N_ARGS
    mask: tuple[bool, ...] = (False,) * N_ARGS

    def __post_init__(self):
        object.__setattr__(self, "cmd", CommandType(self.cmd))
        pts = tuple(float(v) for v in self.pts)
        mask = tuple(bool(m) for m in self.mask)
        if len(pts) != N_ARGS or len(mask) != N_ARGS:
            raise GlyphError("a command carries exactly 8 coordinates and 8 mask bits")
        pts = tuple(v if m else 0.0 for v, m in zip(pts, mask))
        object.__setattr__(self, "pts", pts)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def make(cls, cmd: CommandType, rep: RepKind, start=None, c1=None, c2=None, end=None):
        slots = (start, c1, c2, end)
        mask = masks_for(rep)[cmd]
        pts = []
        for k, p in enumerate(slots):
            if mask[2 * k]:
                if p is None:
                    raise GlyphError(f"{CommandType(cmd).label} needs slot {k + 1} in {rep.value} form")
                pts.extend((float(p[0]), float(p[1])))
            else:
                pts.extend((0.0, 0.0))
        return cls(cmd, tuple(pts), tuple(mask))

    @classmethod
    def eos(cls) -> DrawCommand:
        return cls(CommandType.EOS)

    def slot(self, k: int) -> Point:
        return (self.pts[2 * k], self.pts[2 * k + 1])

    @property
    def start(self) -> Point:
        return self.slot(0)

    @property
    def c1(self) -> Point:
        return self.slot(1)

    @property
    def c2(self) -> Point:
        return self.slot(2)

    @property
    def end(self) -> Point:
        return self.slot(3)

    @property
    def is_eos(self) -> bool:
        return self.cmd == CommandType.EOS


@dataclass(frozen=True)
class Glyph:
    commands: tuple[DrawCommand, ...]
    char_class: int = 0
    rep_kind: RepKind = RepKind.COMPACT
    style_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "commands", tuple(self.commands))
        object.__setattr__(self, "rep_kind", RepKind(self.rep_kind))
        if self.char_class < 0:
            raise GlyphError("char_class must be non-negative")
        masks = masks_for(self.rep_kind)
        seen_eos = False
        for i, c in enumerate(self.commands):
            if c.is_eos:
                seen_eos = True
            elif seen_eos:
                raise StructureError(f"command {i} follows EOS; EOS may only pad the tail")
            if not np.array_equal(np.array(c.mask), masks[c.cmd]):
                raise GlyphError(f"command {i}: mask does not match {c.cmd.label} in {self.rep_kind.value} form")
            for v, m in zip(c.pts, c.mask):
                if m and not (-_COORD_TOL <= v <= 1 + _COORD_TOL) or not math.isfinite(v):
                    raise GlyphError(f"command {i}: coordinate {v} outside the unit canvas")
        if self.commands and not self.commands[0].is_eos and self.commands[0].cmd != CommandType.MOVE:
            raise StructureError("a glyph must start with MoveFromTo")

    # -- derived quantities -------------------------------------------------
    @property
    def n_commands(self) -> int:
        """Number of drawing commands before any EOS padding."""
        n = 0
        for c in self.commands:
            if c.is_eos:
                break
            n += 1
        return n

    @property
    def drawing(self) -> tuple[DrawCommand, ...]:
        return self.commands[: self.n_commands]

    def outline_points(self) -> np.ndarray:
        """All used points except relaxed Move starts, shape (K, 2)."""
        pts = []
        for c in self.drawing:
            for k in range(4):
                if not c.mask[2 * k]:
                    continue
                if k == 0 and c.cmd == CommandType.MOVE:
                    continue
                pts.append(c.slot(k))
        return np.array(pts, dtype=float).reshape(-1, 2)

    @property
    def width(self) -> float:
        p = self.outline_points()
        return float(p[:, 0].max() - p[:, 0].min()) if len(p) else 0.0

    @property
    def height(self) -> float:
        p = self.outline_points()
        return float(p[:, 1].max() - p[:, 1].min()) if len(p) else 0.0

    def padded(self, n_max: int) -> Glyph:
        n = self.n_commands
        if n > n_max:
            raise LengthError(f"glyph has {n} commands, more than N_max={n_max}")
        cmds = self.drawing + (DrawCommand.eos(),) * (n_max - n)
        return Glyph(cmds, self.char_class, self.rep_kind, self.style_id)

    def stripped(self) -> Glyph:
        return Glyph(self.drawing, self.char_class, self.rep_kind, self.style_id)

    def subpaths(self) -> list[tuple[DrawCommand, ...]]:
        paths: list[list[DrawCommand]] = []
        for c in self.drawing:
            if c.cmd == CommandType.MOVE or not paths:
                paths.append([])
            paths[-1].append(c)
        return [tuple(p) for p in paths]

    def geometry_equal(self, other: Glyph, tol: float = 0.0) -> bool:
        a, b = self.drawing, other.drawing
        if len(a) != len(b) or self.rep_kind != other.rep_kind:
            return False
        for ca, cb in zip(a, b):
            if ca.cmd != cb.cmd:
                return False
            if max(abs(u - v) for u, v in zip(ca.pts, cb.pts)) > tol:
                return False
        return True

    # -- JSON ---------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "style_id": self.style_id,
            "char_class": self.char_class,
            "rep_kind": self.rep_kind.value,
            "commands": [
                {"cmd": c.cmd.label, "pts": list(c.pts), "mask": list(c.mask)}
                for c in self.commands
            ],
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Glyph:
        cmds = [DrawCommand(CommandType.from_label(c["cmd"]), c["pts"], c["mask"]) for c in d["commands"]]
        return cls(tuple(cmds), int(d["char_class"]), RepKind(d["rep_kind"]), str(d.get("style_id", "")))


@dataclass(frozen=True)
class Font:
    glyphs: tuple[Glyph, ...]
    style_id: str = ""
    n_char: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "glyphs", tuple(self.glyphs))
        if self.n_char is not None and len(self.glyphs) != self.n_char:
            raise GlyphError(f"font {self.style_id!r} has {len(self.glyphs)} glyphs, alphabet needs {self.n_char}")

    def __getitem__(self, char_class: int) -> Glyph:
        return self.glyphs[char_class]

    def __len__(self) -> int:
        return len(self.glyphs)


# -- SVG path subset ------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<sep>[\s,]+)"
    r"|(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<cmd>[A-Za-z])"
)
_ARITY = {"M": 2, "L": 2, "C": 6, "Z": 0}


def _tokenize(text: str):
    pos = 0
    byte_of = _byte_offsets(text)
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise GlyphParseError(f"malformed token {text[pos]!r}", byte_of(pos))
        if m.lastgroup != "sep":
            yield m.lastgroup, m.group(), byte_of(pos)
        pos = m.end()


def _byte_offsets(text: str):
    if text.isascii():
        return lambda i: i
    return lambda i: len(text[:i].encode("utf-8"))


def parse_svg_path(path_text: str, canvas_size: float = 1.0, char_class: int = 0, style_id: str = "") -> Glyph:
    """Parse absolute ``M``/``L``/``C``/``Z`` path data into a compact glyph.

    Coordinates are divided by ``canvas_size``.  ``Z`` emits an explicit
    closing line when the pen is away from the subpath start.  Subpaths are
    reordered by their Move point, smallest ``(y, x)`` first.
    """
    if canvas_size <= 0:
        raise GlyphError("canvas_size must be positive")
    tokens = list(_tokenize(path_text))
    paths: list[list[DrawCommand]] = []
    pen: Point | None = None
    start: Point | None = None
    i = 0
    op = None
    after_close = False
    while i < len(tokens):
        kind, text, off = tokens[i]
        if kind == "cmd":
            if text not in _ARITY:
                raise UnsupportedCommandError(text, off)
            op = text
            i += 1
            if op == "Z":
                if start is not None and pen is not None and pen != start:
                    paths[-1].append(DrawCommand.make(CommandType.LINE, RepKind.COMPACT, end=start))
                pen = start
                op = None
                after_close = True
                continue
        elif op is None:
            raise GlyphParseError("number without a preceding command", off)
        n = _ARITY[op]
        vals = []
        for _ in range(n):
            if i >= len(tokens) or tokens[i][0] != "num":
                where = tokens[i][2] if i < len(tokens) else len(path_text.encode("utf-8"))
                raise GlyphParseError(f"command {op} expects {n} numbers", where)
            vals.append(float(tokens[i][1]) / canvas_size)
            i += 1
        for v in vals:
            if not (-_COORD_TOL <= v <= 1 + _COORD_TOL):
                raise GlyphError(f"coordinate {v * canvas_size} outside canvas [0, {canvas_size}]")
        vals = [min(max(v, 0.0), 1.0) for v in vals]
        pts = [(vals[k], vals[k + 1]) for k in range(0, n, 2)]
        if op == "M":
            paths.append([DrawCommand.make(CommandType.MOVE, RepKind.COMPACT, end=pts[0])])
            pen = start = pts[0]
            op = "L"  # further pairs after M are implicit lines
            after_close = False
            continue
        if pen is None:
            raise GlyphParseError(f"command {op} before any M", off)
        if after_close:
            # drawing after Z opens a new subpath at the closed one's start
            paths.append([DrawCommand.make(CommandType.MOVE, RepKind.COMPACT, end=pen)])
            after_close = False
        if op == "L":
            paths[-1].append(DrawCommand.make(CommandType.LINE, RepKind.COMPACT, end=pts[0]))
            pen = pts[0]
        else:
            paths[-1].append(DrawCommand.make(CommandType.CURVE, RepKind.COMPACT, c1=pts[0], c2=pts[1], end=pts[2]))
            pen = pts[2]
    paths.sort(key=lambda p: (p[0].end[1], p[0].end[0]))
    cmds = tuple(c for p in paths for c in p)
    return Glyph(cmds, char_class, RepKind.COMPACT, style_id)


def serialize_svg(g: Glyph, canvas_size: float = 1.0) -> str:
    """Absolute ``M``/``L``/``C`` path data, six decimals, scaled by ``canvas_size``."""
    if g.rep_kind != RepKind.COMPACT:
        raise RepresentationError("serialize_svg expects a compact glyph")
    out = []
    for c in g.drawing:
        if c.cmd == CommandType.MOVE:
            slots, letter = (3,), "M"
        elif c.cmd == CommandType.LINE:
            slots, letter = (3,), "L"
        else:
            slots, letter = (1, 2, 3), "C"
        nums = " ".join(f"{v * canvas_size:.6f}" for k in slots for v in c.slot(k))
        out.append(f"{letter} {nums}")
    return " ".join(out)


# -- relaxed <-> compact ----------------------------------------------------------

def to_relaxed(g: Glyph) -> Glyph:
    """Give every command an explicit start copied from the previous end."""
    if g.rep_kind != RepKind.COMPACT:
        raise RepresentationError("to_relaxed expects a compact glyph")
    drawing = g.drawing
    if drawing and drawing[0].cmd != CommandType.MOVE:
        raise StructureError("compact glyph must start with MoveFromTo")
    out = []
    pen: Point | None = None
    for c in drawing:
        start = pen if pen is not None else c.end
        if c.cmd == CommandType.CURVE:
            out.append(DrawCommand.make(c.cmd, RepKind.RELAXED, start, c.c1, c.c2, c.end))
        else:
            out.append(DrawCommand.make(c.cmd, RepKind.RELAXED, start=start, end=c.end))
        pen = c.end
    out.extend(DrawCommand.eos() for _ in g.commands[len(drawing):])
    return Glyph(tuple(out), g.char_class, RepKind.RELAXED, g.style_id)


def is_junction(prev: DrawCommand, cur: DrawCommand) -> bool:
    """``cur`` continues the subpath drawn by ``prev``."""
    return cur.cmd in (CommandType.LINE, CommandType.CURVE) and prev.cmd != CommandType.EOS


def junction_gaps(g: Glyph) -> np.ndarray:
    """Euclidean distance between end(j-1) and start(j) at every junction."""
    if g.rep_kind != RepKind.RELAXED:
        raise RepresentationError("junction_gaps expects a relaxed glyph")
    d = g.drawing
    gaps = [math.dist(d[j - 1].end, d[j].start) for j in range(1, len(d)) if is_junction(d[j - 1], d[j])]
    return np.array(gaps, dtype=float)


def merge_relaxed(g: Glyph, mode: str = "average") -> Glyph:
    """Collapse each junction to the mean of end(j-1) and start(j)."""
    if g.rep_kind != RepKind.RELAXED:
        raise RepresentationError("merge_relaxed expects a relaxed glyph")
    if mode != "average":
        raise ValueError(f"unknown merge mode {mode!r}")
    d = g.drawing
    ends = [c.end for c in d]
    for j in range(1, len(d)):
        if is_junction(d[j - 1], d[j]):
            (ex, ey), (sx, sy) = d[j - 1].end, d[j].start
            ends[j - 1] = ((ex + sx) / 2, (ey + sy) / 2)
    out = []
    for c, end in zip(d, ends):
        if c.cmd == CommandType.CURVE:
            out.append(DrawCommand.make(c.cmd, RepKind.COMPACT, c1=c.c1, c2=c.c2, end=end))
        else:
            out.append(DrawCommand.make(c.cmd, RepKind.COMPACT, end=end))
    out.extend(DrawCommand.eos() for _ in g.commands[len(d):])
    return Glyph(tuple(out), g.char_class, RepKind.COMPACT, g.style_id)


# -- JSON-lines ------------------------------------------------------------------

def write_jsonl(path, glyphs: Iterable[Glyph]) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for g in glyphs:
            fh.write(json.dumps(g.to_dict(), sort_keys=True) + "\n")


def read_jsonl(path) -> list[Glyph]:
    out = []
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Glyph.from_dict(json.loads(line)))
    return out


def group_fonts(glyphs: Sequence[Glyph], n_char: int | None = None) -> list[Font]:
    """Group glyphs by ``style_id`` (first-seen order), sorted by class."""
    by_style: dict[str, list[Glyph]] = {}
    for g in glyphs:
        by_style.setdefault(g.style_id, []).append(g)
    return [Font(tuple(sorted(gs, key=lambda g: g.char_class)), sid, n_char) for sid, gs in by_style.items()]
