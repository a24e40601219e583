"""Command line interface.

Exit codes: 0 success, 1 input error, 2 pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import ProjectConfig
from .errors import InputError, PlanetexError
from .geometry import PlaneGrid
from .io import load_cameras, load_mesh, polygons_to_dict, quantize, read_image, read_mask, write_json, write_png
from .metrics import ssim

log = logging.getLogger("planetex")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _config(path) -> ProjectConfig:
    return ProjectConfig.load(path) if path else ProjectConfig()


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def cmd_segment(args) -> int:
    mesh = load_mesh(args.mesh)
    cfg = ProjectConfig()
    cfg.segmentation.angle_tol = args.angle_tol
    cfg.segmentation.dist_tol = args.dist_tol
    polygons = pipeline.segment(mesh, cfg)
    write_json(args.out, {"mesh": str(Path(args.mesh).resolve()), "planes": polygons_to_dict(polygons)})
    print(f"{len(polygons)} planes -> {args.out}")
    return 0


def cmd_select(args) -> int:
    cfg = _config(args.config)
    mesh = load_mesh(args.mesh)
    polygon = pipeline.find_polygon(pipeline.segment(mesh, cfg), args.plane)
    state, grid = pipeline.select(mesh, load_cameras(args.cameras), polygon, cfg)
    write_json(args.out, pipeline.selection_record(state, grid, polygon, args.mesh, args.cameras, cfg))
    print(f"plane {polygon.id}: views {state.view_ids}, uncovered {state.uncovered_fraction:.4f}")
    return 0


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def cmd_stitch(args) -> int:
    sel = _read_json(args.selection)
    if sel.get("plane") != args.plane:
        raise InputError(f"selection file is for plane {sel.get('plane')}, not {args.plane}")
    cfg = ProjectConfig.from_dict(sel["config"])
    mesh = load_mesh(sel["mesh"])
    polygon = pipeline.find_polygon(pipeline.segment(mesh, cfg), args.plane)
    grid = PlaneGrid(**sel["grid"])
    pt = pipeline.stitch(mesh, load_cameras(sel["cameras"]), polygon, grid, sel["views"], cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_png(out, pt.image8)
    write_png(_sibling(out, "_mask.png"), pt.holes)
    write_json(_sibling(out, "_lol2.json"), pt.lol2)
    write_json(_sibling(out, "_stitch.json"), pt.record)
    if args.dump_lols and pt.result is not None:
        d = Path(args.dump_lols)
        d.mkdir(parents=True, exist_ok=True)
        for vid, lols in pt.result.lolsets.items():
            write_json(d / f"view_{vid:03d}.json", lols.to_dict())
    print(f"plane {polygon.id}: stitched views {pt.record.get('selected_views')} -> {out}")
    return 0


def cmd_inpaint(args) -> int:
    cfg = _config(args.config)
    texture = Path(args.texture)
    image = read_image(texture)
    holes = read_mask(args.mask)
    lol2 = _read_json(args.lol2) if args.lol2 else []
    choice = args.backend or cfg.inpaint.backend
    if choice in ("builtin", "external"):
        backend = pipeline.resolve_backend(choice, cfg.inpaint.url, cfg.inpaint.timeout)
    else:
        backend = pipeline.resolve_backend("external", choice, cfg.inpaint.timeout)
    result, meta = pipeline.inpaint_image(quantize(image), holes, lol2, backend, args.seed, cfg)
    out = Path(args.out) if args.out else _sibling(texture, "_inpainted.png")
    write_png(out, result)
    print(f"filled {meta.get('masked_pixels', 0)} pixels -> {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args.config)
    manifest = pipeline.run(args.mesh, args.cameras, cfg, args.out, jobs=args.jobs)
    for p in manifest.polygons:
        print(f"plane {p['id']}: views {p.get('selected_views', [])} -> {p['texture']}")
    return 0


def cmd_eval(args) -> int:
    a = read_image(args.rendered)
    b = read_image(args.reference)
    mask = read_mask(args.mask) if args.mask else None
    try:
        value = ssim(a, b, mask=mask)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    print(f"{value:.6f}")
    return 0


def cmd_synth(args) -> int:
    from .synth import SceneSpec, generate_scene, write_scene

    spec = SceneSpec.from_dict(_read_json(args.spec)) if args.spec else SceneSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    scene = generate_scene(spec)
    files = write_scene(scene, args.out)
    ProjectConfig().save(Path(args.out) / "config.json")
    print(f"scene with {len(files['images'])} views -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="planetex", description="Plane-oriented texture mapping for piecewise-planar models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("segment", help="split a mesh into planar polygons")
    s.add_argument("--mesh", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--angle-tol", type=float, default=2.0)
    s.add_argument("--dist-tol", type=float, default=None)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("select", help="choose views for one plane")
    s.add_argument("--mesh", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--plane", type=int, required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("stitch", help="align and composite the selected views")
    s.add_argument("--plane", type=int, required=True)
    s.add_argument("--selection", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dump-lols", default=None)
    s.set_defaults(func=cmd_stitch)

    s = sub.add_parser("inpaint", help="fill the unobserved part of a texture")
    s.add_argument("--texture", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--lol2", default=None)
    s.add_argument("--backend", help="builtin, external or the URL of an inpainting service (default from config)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_inpaint)

    s = sub.add_parser("run", help="texture every plane of a model")
    s.add_argument("--mesh", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=None)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="SSIM between two images")
    s.add_argument("--rendered", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--mask", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic planar scene")
    s.add_argument("--spec", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except InputError as exc:
        print(f"planetex: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"planetex: input error: {exc}", file=sys.stderr)
        return 1
    except PlanetexError as exc:
        print(f"planetex: pipeline failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surfaced as a pipeline failure with its type
        log.debug("unhandled error", exc_info=True)
        print(f"planetex: pipeline failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
