"""Command-line interface.

Machine-readable results go to stdout as JSON, logs go to stderr.  Exit
codes: 0 success, 2 usage, 3 parse, 4 numeric, 5 io.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC, EXIT_IO = 2, 3, 4, 5

log = logging.getLogger("vecfont")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class UsageError(Exception):
    pass


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _switches(text: str) -> list[bool]:
    table = {"on": True, "off": False}
    vals = [t.strip().lower() for t in text.split(",") if t.strip()]
    if not vals or any(v not in table for v in vals):
        raise argparse.ArgumentTypeError(f"expected a list of on/off, got {text!r}")
    return [table[v] for v in vals]


# -- file helpers ------------------------------------------------------------------

_D_ATTR = re.compile(r"""\bd\s*=\s*(["'])(.*?)\1""", re.S)


def read_glyphs(path: Path, canvas: float = 1.0):
    """Glyphs from ``.jsonl`` (one glyph per line) or SVG path data.

    An SVG file contributes one glyph per ``d="..."`` attribute; any other
    text file is read as one path per non-empty line.
    """
    from .glyph_ir import parse_svg_path, read_jsonl

    if path.suffix == ".jsonl":
        return read_jsonl(path)
    text = path.read_text(encoding="utf-8")
    paths = [m.group(2) for m in _D_ATTR.finditer(text)] if "<" in text else \
        [ln for ln in text.splitlines() if ln.strip()]
    return [parse_svg_path(p, canvas, char_class=i) for i, p in enumerate(paths)]


def write_glyphs(path: Path, glyphs, canvas: float = 1.0) -> None:
    from .glyph_ir import RepKind, merge_relaxed, serialize_svg, write_jsonl

    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".jsonl":
        write_jsonl(path, glyphs)
        return
    compact = [merge_relaxed(g) if g.rep_kind == RepKind.RELAXED else g for g in glyphs]
    if path.suffix == ".svg":
        body = "\n".join(f'  <path d="{serialize_svg(g, canvas)}" fill="black" fill-rule="nonzero"/>'
                         for g in compact)
        path.write_text(f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {canvas:g} {canvas:g}">\n'
                        f"{body}\n</svg>\n", encoding="utf-8")
    else:
        path.write_text("".join(serialize_svg(g, canvas) + "\n" for g in compact), encoding="utf-8")


def read_image(path: Path):
    import numpy as np

    from .raster import read_pgm

    if path.suffix == ".pgm":
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=float) / 255.0


def write_image(path: Path, img) -> None:
    from .raster import write_pgm, write_png

    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".png":
        write_png(path, img)
    elif path.suffix == ".pgm":
        write_pgm(path, img)
    else:
        raise UsageError(f"unknown image format {path.suffix!r} (use .pgm or .png)")


def _load_as_image(path: Path, resolution: int):
    from .raster import rasterize

    if path.suffix in (".pgm", ".png"):
        return read_image(path)
    glyphs = read_glyphs(path)
    if len(glyphs) != 1:
        raise UsageError(f"{path}: expected exactly one glyph, found {len(glyphs)}")
    return rasterize(glyphs[0], resolution)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _load_table(data_dir: Path, split: str, n_max: int, resolution: int):
    from .data import build_table
    from .glyph_ir import group_fonts

    fonts = group_fonts(_read_jsonl(data_dir / f"{split}.jsonl"))
    if not fonts:
        raise UsageError(f"{data_dir / f'{split}.jsonl'} holds no glyphs")
    return build_table(fonts, n_max, resolution)


def _read_jsonl(path: Path):
    from .glyph_ir import read_jsonl

    return read_jsonl(path)


def _model_config(a):
    from .net import ModelConfig

    return ModelConfig(d_model=a.d_model, n_heads=a.heads, dec_layers=a.dec_layers, resolution=a.resolution,
                       n_refs=a.refs)


# -- subcommands ---------------------------------------------------------------------

def cmd_convert(a) -> int:
    from .glyph_ir import RepKind, merge_relaxed, to_relaxed

    glyphs = read_glyphs(a.input, a.canvas)
    if a.to == "relaxed":
        glyphs = [g if g.rep_kind == RepKind.RELAXED else to_relaxed(g) for g in glyphs]
    elif a.to == "compact":
        glyphs = [merge_relaxed(g) if g.rep_kind == RepKind.RELAXED else g for g in glyphs]
    write_glyphs(a.output, glyphs, a.canvas)
    log.info("wrote %d glyphs to %s", len(glyphs), a.output)
    return 0


def cmd_render(a) -> int:
    from .glyph_ir import RepKind, merge_relaxed
    from .raster import rasterize

    glyphs = read_glyphs(a.input)
    if not 0 <= a.index < len(glyphs):
        raise UsageError(f"glyph index {a.index} out of range ({len(glyphs)} glyphs)")
    g = glyphs[a.index]
    if a.output.suffix in (".svg", ".txt", ".jsonl"):
        write_glyphs(a.output, [g])
    else:
        if g.rep_kind == RepKind.RELAXED:
            g = merge_relaxed(g)
        write_image(a.output, rasterize(g, a.resolution, fill_rule=a.fill_rule, supersample=a.supersample))
    return 0


def cmd_score(a) -> int:
    from .raster import iou, l1_error

    x, y = _load_as_image(a.a, a.resolution), _load_as_image(a.b, a.resolution)
    _emit({"l1": l1_error(x, y), "iou": iou(x, y, a.threshold)})
    return 0


def cmd_gen_data(a) -> int:
    from .data import gen_dataset, gen_fonts, spec_dict, write_dataset

    train, test = gen_dataset(a.seed, a.fonts)
    write_dataset(a.output, train, test, a.resolution)
    _, specs = gen_fonts(a.seed, a.fonts)
    meta = {"seed": a.seed, "fonts": a.fonts, "resolution": a.resolution,
            "specs": [{"style_id": f.style_id, **spec_dict(s)} for f, s in zip(train + test, specs)]}
    (a.output / "specs.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    log.info("%d train / %d test fonts in %s", len(train), len(test), a.output)
    return 0


def cmd_train(a) -> int:
    from .pipeline import TrainConfig, train

    m = _model_config(a)
    cfg = TrainConfig(model=m, batch_size=a.batch_size, steps=a.steps, lr=a.lr, seed=a.seed, aux_count=a.aux,
                      refine=not a.no_refine, checkpoint_every=a.checkpoint_every)
    table = _load_table(a.data, "train", m.n_max, m.resolution)
    res = train(cfg, table, out_dir=a.output, log_path=a.output / "log.jsonl")
    last = res.log[-1] if res.log else {}
    _emit({"checkpoint": str(res.checkpoint), "steps": cfg.steps, "final": last})
    return 0


def _refs(path: Path, cfg):
    from .pipeline import References

    glyphs = read_glyphs(path)
    if len(glyphs) != cfg.n_refs:
        raise UsageError(f"{path}: the model expects {cfg.n_refs} reference glyphs, found {len(glyphs)}")
    return References.from_glyphs(glyphs, cfg)


def cmd_synth(a) -> int:
    from .pipeline import load_checkpoint, synthesize

    P, tc, _ = load_checkpoint(a.checkpoint)
    res = synthesize(P, tc.model, _refs(a.refs, tc.model), a.target, n_samples=a.samples, seed=a.seed,
                     use_refine=not a.no_refine)
    write_glyphs(a.output, [res.glyph])
    if a.image is not None:
        write_image(a.image, res.image)
    _emit({"index": res.index, "ious": res.ious, "empty": res.empty, "n_commands": res.glyph.n_commands,
           "max_gap": float(res.gaps.max()) if res.gaps.size else 0.0})
    return 0


def cmd_interp(a) -> int:
    from .pipeline import DomainError, interpolate, load_checkpoint

    P, tc, _ = load_checkpoint(a.checkpoint)
    classes = a.classes if a.classes is not None else list(range(tc.model.n_char))
    try:
        res = interpolate(P, tc.model, _refs(a.refs_a, tc.model), _refs(a.refs_b, tc.model), a.lam, classes,
                          use_refine=not a.no_refine)
    except DomainError as e:
        raise UsageError(str(e)) from e
    write_glyphs(a.output, res.glyphs)
    _emit({"lambda": a.lam, "classes": classes, "n_commands": [g.n_commands for g in res.glyphs]})
    return 0


def cmd_grad_check(a) -> int:
    from .checks import check_model, check_ops
    from .net import ModelConfig

    results = check_ops(a.seed)
    if a.tiny:
        results += check_model(ModelConfig.tiny(), a.seed)
    worst = max(results, key=lambda r: r.error)
    ok = worst.error < a.tol
    _emit({"max_rel_error": worst.error, "worst": worst.name, "checked": len(results), "tiny_model": a.tiny,
           "pass": ok})
    return 0 if ok else EXIT_NUMERIC


def cmd_ablate(a) -> int:
    from .data import build_table, gen_dataset
    from .pipeline import Arm, TrainConfig, ablate

    m = _model_config(a)
    if a.data is not None:
        train_t = _load_table(a.data, "train", m.n_max, m.resolution)
        test_t = _load_table(a.data, "test", m.n_max, m.resolution)
    else:
        tr, te = gen_dataset(a.data_seed, a.fonts)
        train_t, test_t = build_table(tr, m.n_max, m.resolution), build_table(te, m.n_max, m.resolution)
    # one factor at a time: the aux sweep with refinement on, the refinement sweep at the largest aux
    pairs = [(k, True) for k in a.aux] + [(max(a.aux), r) for r in a.refine]
    pairs = list(dict.fromkeys(pairs))
    arms = [Arm(f"aux{k}_{'refine' if r else 'norefine'}", k, r) for k, r in pairs]
    base = TrainConfig(model=m, batch_size=a.batch_size, steps=a.steps, lr=a.lr)
    seeds = a.seeds if a.seeds is not None else [a.seed]
    _emit(ablate(base, train_t, test_t, arms, seeds, out_dir=a.output))
    return 0


# -- parser --------------------------------------------------------------------------

def _model_flags(p, steps: int) -> None:
    p.add_argument("--d-model", type=int, default=64, help="model width (default 64)")
    p.add_argument("--heads", type=int, default=4, help="attention heads (default 4)")
    p.add_argument("--dec-layers", type=int, default=2, help="sequence decoder depth (default 2)")
    p.add_argument("--resolution", type=int, default=64, help="raster resolution (default 64)")
    p.add_argument("--refs", type=int, default=4, help="reference glyphs per style (default 4)")
    p.add_argument("--batch-size", type=int, default=8, help="batch size (default 8)")
    p.add_argument("--steps", type=int, default=steps, help=f"optimizer steps (default {steps})")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default 1e-3)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw (default 0)")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, for reproducibility)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    ap = argparse.ArgumentParser(prog="vecfont", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("convert", parents=[common], help="svg <-> glyph JSON-lines, compact <-> relaxed")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path, help=".jsonl, .svg, or a text file of path data")
    p.add_argument("--to", choices=["keep", "compact", "relaxed"], default="keep",
                   help="representation to write (default keep)")
    p.add_argument("--canvas", type=float, default=1.0, help="SVG canvas size (default 1.0)")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("render", parents=[common], help="glyph -> PGM, PNG or SVG")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--index", type=int, default=0, help="which glyph of the input file (default 0)")
    p.add_argument("--resolution", type=int, default=64, help="raster size (default 64)")
    p.add_argument("--fill-rule", choices=["nonzero", "evenodd"], default="nonzero", help="(default nonzero)")
    p.add_argument("--supersample", type=int, default=1, help="samples per pixel axis (default 1)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("score", parents=[common], help="L1 and IOU between two images or glyphs")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    p.add_argument("--resolution", type=int, default=64, help="raster size for glyph inputs (default 64)")
    p.add_argument("--threshold", type=float, default=0.5, help="IOU binarisation threshold (default 0.5)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gen-data", parents=[common], help="write a seeded toy font dataset")
    p.add_argument("output", type=Path)
    p.add_argument("--fonts", type=int, default=40, help="number of fonts (default 40)")
    p.add_argument("--resolution", type=int, default=64, help="image size (default 64)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train on a gen-data directory")
    p.add_argument("data", type=Path)
    p.add_argument("output", type=Path, help="directory for model.ckpt and log.jsonl")
    _model_flags(p, 2000)
    p.add_argument("--aux", type=int, default=3, help="auxiliary points per curve (default 3)")
    p.add_argument("--no-refine", action="store_true", help="train without the refinement decoder")
    p.add_argument("--checkpoint-every", type=int, default=0, help="steps between checkpoints (default 0: end only)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", parents=[common], help="few-shot synthesis of one glyph")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("refs", type=Path, help="reference glyphs (.jsonl or .svg)")
    p.add_argument("output", type=Path)
    p.add_argument("--target", type=int, required=True, help="character class to synthesise")
    p.add_argument("--samples", type=int, default=1, help="candidates N_s (default 1)")
    p.add_argument("--image", type=Path, default=None, help="also write the synthesised raster")
    p.add_argument("--no-refine", action="store_true", help="skip the refinement decoder")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("interp", parents=[common], help="blend two styles")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("refs_a", type=Path)
    p.add_argument("refs_b", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--lam", type=float, default=0.5, help="blend weight in [0, 1] (default 0.5)")
    p.add_argument("--classes", type=_ints, default=None, help="comma-separated classes (default all)")
    p.add_argument("--no-refine", action="store_true", help="skip the refinement decoder")
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference check of every op")
    p.add_argument("--tiny", action="store_true", help="also check the full tiny model")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error (default 1e-4)")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("ablate", parents=[common], help="sweep aux points / refinement, JSON results")
    p.add_argument("--data", type=Path, default=None, help="gen-data directory (default: generate toy data)")
    p.add_argument("--fonts", type=int, default=40, help="toy fonts when generating (default 40)")
    p.add_argument("--data-seed", type=int, default=0, help="toy data seed (default 0)")
    p.add_argument("--aux", type=_ints, default=[0, 3], help="aux-point counts (default 0,3)")
    p.add_argument("--refine", type=_switches, default=[True], help="refinement on/off list (default on)")
    p.add_argument("--seeds", type=_ints, default=None, help="training seeds (default: --seed)")
    p.add_argument("--output", type=Path, default=None, help="keep per-run checkpoints and logs here")
    _model_flags(p, 2000)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if a.threads < 1:
        ap.error("--threads must be >= 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(a.threads)

    from .autodiff import CheckpointError
    from .glyph_ir import GlyphError
    from .objective import NumericError
    from .pipeline import DomainError, TrainingAborted
    from .raster import RasterError

    try:
        return a.func(a)
    except (UsageError, DomainError) as e:
        log.error("%s", e)
        return EXIT_USAGE
    except (GlyphError, RasterError, CheckpointError, json.JSONDecodeError, KeyError) as e:
        log.error("parse error: %s", e)
        return EXIT_PARSE
    except (NumericError, TrainingAborted, FloatingPointError) as e:
        log.error("numeric error: %s", e)
        return EXIT_NUMERIC
    except OSError as e:
        log.error("io error: %s", e)
        return EXIT_IO
    except ValueError as e:
        log.error("%s", e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
