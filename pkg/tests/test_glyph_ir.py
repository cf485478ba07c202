import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import merge_bruteforce, random_compact_glyph, random_relaxed_glyph
from vecfont.glyph_ir import (
    COMPACT_MASKS,
    RELAXED_MASKS,
    CommandType,
    DrawCommand,
    Font,
    Glyph,
    GlyphError,
    GlyphParseError,
    LengthError,
    RepKind,
    RepresentationError,
    StructureError,
    UnsupportedCommandError,
    group_fonts,
    is_junction,
    junction_gaps,
    merge_relaxed,
    parse_svg_path,
    read_jsonl,
    serialize_svg,
    to_relaxed,
    write_jsonl,
)

UNIT_SQUARE = "M 0 0 L 64 0 L 64 64 L 0 64 Z"


def line(end, rep=RepKind.COMPACT, start=None):
    return DrawCommand.make(CommandType.LINE, rep, start=start, end=end)


def move(end, rep=RepKind.COMPACT, start=None):
    return DrawCommand.make(CommandType.MOVE, rep, start=start, end=end)


def seeds(n=25):
    return st.integers(0, 2**31 - 1)


class TestCommandModel:
    def test_four_command_types(self):
        assert [c.label for c in CommandType] == ["MoveFromTo", "LineFromTo", "CurveFromTo", "EOS"]

    def test_relaxed_masks(self):
        assert RELAXED_MASKS[CommandType.MOVE].tolist() == [1, 1, 0, 0, 0, 0, 1, 1]
        assert RELAXED_MASKS[CommandType.LINE].tolist() == [1, 1, 0, 0, 0, 0, 1, 1]
        assert RELAXED_MASKS[CommandType.CURVE].all()
        assert not RELAXED_MASKS[CommandType.EOS].any()

    def test_compact_masks(self):
        assert COMPACT_MASKS[CommandType.LINE].tolist() == [0, 0, 0, 0, 0, 0, 1, 1]
        assert COMPACT_MASKS[CommandType.CURVE].tolist() == [0, 0, 1, 1, 1, 1, 1, 1]

    def test_unused_coordinates_stored_as_zero(self):
        c = DrawCommand.make(CommandType.LINE, RepKind.COMPACT, end=(0.3, 0.4))
        assert c.pts == (0, 0, 0, 0, 0, 0, 0.3, 0.4)

    def test_mask_must_match_command(self):
        bad = DrawCommand(CommandType.LINE, (0,) * 6 + (0.5, 0.5), (False,) * 6 + (True, True))
        with pytest.raises(GlyphError):
            Glyph((move((0.1, 0.1)), DrawCommand(CommandType.LINE, bad.pts, (True,) * 8)))

    def test_out_of_canvas_rejected(self):
        with pytest.raises(GlyphError):
            Glyph((move((1.5, 0.1)),))

    def test_first_command_must_be_move(self):
        with pytest.raises(StructureError):
            Glyph((line((0.5, 0.5)),))

    def test_eos_only_as_suffix(self):
        with pytest.raises(StructureError):
            Glyph((move((0.1, 0.1)), DrawCommand.eos(), line((0.2, 0.2))))

    def test_width_height(self):
        g = parse_svg_path("M 0.1 0.2 L 0.7 0.2 C 0.9 0.3 0.9 0.8 0.3 0.6")
        assert g.width == pytest.approx(0.8)
        assert g.height == pytest.approx(0.6)

    def test_padding(self):
        g = parse_svg_path(UNIT_SQUARE, 64).padded(8)
        assert len(g.commands) == 8 and g.n_commands == 5
        with pytest.raises(LengthError):
            parse_svg_path(UNIT_SQUARE, 64).padded(3)

    def test_font_size_checked(self):
        g = parse_svg_path(UNIT_SQUARE, 64)
        with pytest.raises(GlyphError):
            Font((g, g), "x", n_char=3)


class TestParse:
    def test_unit_square(self):
        g = parse_svg_path(UNIT_SQUARE, 64)
        assert [c.cmd for c in g.drawing] == [CommandType.MOVE] + [CommandType.LINE] * 4
        coords = {v for c in g.drawing for v, m in zip(c.pts, c.mask) if m}
        assert coords <= {0.0, 1.0}
        assert g.drawing[-1].end == (0.0, 0.0)

    def test_z_at_start_adds_nothing(self):
        g = parse_svg_path("M 0 0 L 1 0 L 1 1 L 0 0 Z")
        assert g.n_commands == 4

    def test_empty_input(self):
        g = parse_svg_path("")
        assert g.n_commands == 0
        assert g.padded(4).commands == (DrawCommand.eos(),) * 4

    def test_subpaths_sorted_top_left_first(self):
        g = parse_svg_path("M 0.5 0.5 L 0.6 0.5 M 0.1 0.1 L 0.2 0.1")
        assert g.drawing[0].end == (0.1, 0.1)
        assert serialize_svg(g).startswith("M 0.100000 0.100000")

    def test_sort_matches_oracle(self):
        rng = np.random.default_rng(3)
        starts = [tuple(np.round(rng.random(2), 3)) for _ in range(6)]
        text = " ".join(f"M {x} {y} L 0.5 0.5" for x, y in starts)
        g = parse_svg_path(text)
        got = [p[0].end for p in g.subpaths()]
        assert got == sorted(starts, key=lambda p: (p[1], p[0]))

    def test_comma_separated(self):
        g = parse_svg_path("M0,0L1,0C1,1,0,1,0,0")
        assert [c.cmd for c in g.drawing] == [CommandType.MOVE, CommandType.LINE, CommandType.CURVE]

    def test_implicit_lineto_after_move(self):
        g = parse_svg_path("M 0 0 1 0 1 1")
        assert [c.cmd for c in g.drawing] == [CommandType.MOVE, CommandType.LINE, CommandType.LINE]

    def test_draw_after_close_opens_subpath(self):
        g = parse_svg_path("M 0.1 0.1 L 0.5 0.1 L 0.5 0.5 Z L 0.9 0.9")
        assert [c.cmd for c in g.drawing].count(CommandType.MOVE) == 2

    @pytest.mark.parametrize("cmd", ["Q", "A", "H", "V", "l", "m"])
    def test_unsupported_command_named(self, cmd):
        with pytest.raises(UnsupportedCommandError) as e:
            parse_svg_path(f"M 0 0 {cmd} 1 1")
        assert e.value.command == cmd
        assert cmd in str(e.value)

    def test_malformed_token_offset(self):
        with pytest.raises(GlyphParseError) as e:
            parse_svg_path("M 0 0 L 1 # 1")
        assert e.value.offset == 10

    def test_missing_numbers(self):
        with pytest.raises(GlyphParseError):
            parse_svg_path("M 0 0 C 1 1 1")

    def test_coordinate_outside_canvas(self):
        with pytest.raises(GlyphError):
            parse_svg_path("M 0 0 L 65 0", 64)


class TestSerialize:
    def test_unit_square_text(self):
        text = serialize_svg(parse_svg_path(UNIT_SQUARE, 64), 64)
        assert text.startswith("M 0.000000 0.000000 L 64.000000 0.000000")

    def test_relaxed_rejected(self):
        with pytest.raises(RepresentationError):
            serialize_svg(to_relaxed(parse_svg_path(UNIT_SQUARE, 64)))

    @given(seeds())
    @settings(max_examples=100, deadline=None)
    def test_round_trip_within_text_precision(self, seed):
        g = random_compact_glyph(np.random.default_rng(seed))
        for canvas in (1.0, 64.0, 1000.0):
            back = parse_svg_path(serialize_svg(g, canvas), canvas, g.char_class)
            assert back.geometry_equal(g, tol=1e-5)


class TestRelaxed:
    def test_copy_rule(self):
        g = Glyph((move((0.1, 0.1)), line((0.5, 0.1))))
        r = to_relaxed(g)
        assert r.drawing[1].start == (0.1, 0.1)
        assert r.drawing[1].end == (0.5, 0.1)

    def test_first_move_starts_on_itself(self):
        r = to_relaxed(parse_svg_path("M 0.2 0.3 L 0.4 0.4"))
        assert r.drawing[0].start == (0.2, 0.3)

    def test_curve_chain_scan(self):
        g = parse_svg_path("M 0.1 0.1 C 0.2 0.0 0.3 0.0 0.4 0.1 C 0.5 0.2 0.5 0.3 0.4 0.4 C 0.3 0.5 0.2 0.5 0.1 0.4")
        d = to_relaxed(g).drawing
        for j in (2, 3):
            assert d[j].start == d[j - 1].end

    def test_structure_error(self):
        bad = Glyph.__new__(Glyph)
        object.__setattr__(bad, "commands", (line((0.5, 0.5)),))
        object.__setattr__(bad, "rep_kind", RepKind.COMPACT)
        object.__setattr__(bad, "char_class", 0)
        object.__setattr__(bad, "style_id", "")
        with pytest.raises(StructureError):
            to_relaxed(bad)

    def test_requires_compact(self):
        with pytest.raises(RepresentationError):
            to_relaxed(to_relaxed(parse_svg_path(UNIT_SQUARE, 64)))

    @given(seeds())
    @settings(max_examples=200, deadline=None)
    def test_same_length_and_types(self, seed):
        g = random_compact_glyph(np.random.default_rng(seed)).padded(24)
        r = to_relaxed(g)
        assert r.n_commands == g.n_commands
        assert [c.cmd for c in r.commands] == [c.cmd for c in g.commands]
        assert all(np.array_equal(c.mask, RELAXED_MASKS[c.cmd]) for c in r.commands)

    @given(seeds())
    @settings(max_examples=200, deadline=None)
    def test_ground_truth_relaxed_is_consistent(self, seed):
        r = to_relaxed(random_compact_glyph(np.random.default_rng(seed)))
        assert np.all(junction_gaps(r) == 0.0)


class TestMerge:
    def test_midpoint(self):
        r = Glyph((
            move((0.1, 0.1), RepKind.RELAXED, start=(0.1, 0.1)),
            line((0.4, 0.4), RepKind.RELAXED, start=(0.1, 0.1)),
            line((0.9, 0.9), RepKind.RELAXED, start=(0.6, 0.6)),
        ), rep_kind=RepKind.RELAXED)
        m = merge_relaxed(r)
        assert m.drawing[1].end == pytest.approx((0.5, 0.5))
        assert m.rep_kind == RepKind.COMPACT

    def test_move_is_not_a_junction_target(self):
        a = move((0.2, 0.2), RepKind.RELAXED, start=(0.2, 0.2))
        b = move((0.8, 0.8), RepKind.RELAXED, start=(0.3, 0.3))
        assert not is_junction(a, b)
        m = merge_relaxed(Glyph((a, b), rep_kind=RepKind.RELAXED))
        assert m.drawing[0].end == (0.2, 0.2)

    @given(seeds())
    @settings(max_examples=300, deadline=None)
    def test_round_trip_identity(self, seed):
        g = random_compact_glyph(np.random.default_rng(seed)).padded(24)
        assert merge_relaxed(to_relaxed(g)) == g

    @given(seeds())
    @settings(max_examples=200, deadline=None)
    def test_matches_bruteforce(self, seed):
        r = random_relaxed_glyph(np.random.default_rng(seed))
        m = merge_relaxed(r)
        expect = merge_bruteforce(r)
        got = [(int(c.cmd), (c.c1, c.c2, c.end) if c.cmd == CommandType.CURVE else (c.end,)) for c in m.drawing]
        assert got == expect

    @given(seeds())
    @settings(max_examples=200, deadline=None)
    def test_residual_gap_zero(self, seed):
        r = random_relaxed_glyph(np.random.default_rng(seed))
        assert np.all(junction_gaps(to_relaxed(merge_relaxed(r))) == 0.0)

    def test_requires_relaxed(self):
        with pytest.raises(RepresentationError):
            merge_relaxed(parse_svg_path(UNIT_SQUARE, 64))


class TestJsonl:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        glyphs = [random_compact_glyph(rng, style_id=f"s{i % 2}") for i in range(6)]
        glyphs.append(to_relaxed(glyphs[0]).padded(30))
        write_jsonl(tmp_path / "g.jsonl", glyphs)
        assert read_jsonl(tmp_path / "g.jsonl") == glyphs

    def test_record_schema(self, tmp_path):
        write_jsonl(tmp_path / "g.jsonl", [parse_svg_path(UNIT_SQUARE, 64, char_class=2, style_id="a")])
        rec = json.loads((tmp_path / "g.jsonl").read_text())
        assert set(rec) == {"style_id", "char_class", "rep_kind", "commands", "width", "height"}
        assert rec["commands"][0]["cmd"] == "MoveFromTo"
        assert len(rec["commands"][0]["pts"]) == 8 and len(rec["commands"][0]["mask"]) == 8

    def test_group_fonts(self):
        a = parse_svg_path(UNIT_SQUARE, 64, char_class=1, style_id="a")
        b = parse_svg_path(UNIT_SQUARE, 64, char_class=0, style_id="a")
        fonts = group_fonts([a, b], n_char=2)
        assert [g.char_class for g in fonts[0].glyphs] == [0, 1]
