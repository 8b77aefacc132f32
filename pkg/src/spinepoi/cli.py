"""Command-line orchestration.

Subcommands: extract, orient-eval, phantom, convert, bench. Results go to
files (bench prints its measurement to stdout); diagnostics go to stderr.
Exit codes: 0 success, 1 completed with recorded per-item skips, 2 fatal.
The SPINEPOI_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import phantom as ph
from .anatomy import assemble_spine
from .errors import SpinePoiError
from .grid import Convention
from .io import (
    default_dictionary,
    export_slicer,
    read_label_dictionary,
    read_label_volume,
    write_label_volume,
    compose_instance_volume,
    read_poi_json,
    write_poi_json,
)
from .io.poi_json import truth_document
from .labels import LabelDictionary
from .orientation import OrientationMethod, evaluate_orientation, report_csv, report_json
from .poi import BisectionConfig, ExtractConfig, RayConfig, extract_all, retarget

log = logging.getLogger("spinepoi")

_METHODS = {m.value: m for m in OrientationMethod}


@dataclass(frozen=True)
class RunConfig:
    input: Path
    out: Path
    labels: Path | None = None
    instances: Path | None = None
    method: OrientationMethod = OrientationMethod.PROJECTION_2D
    cfgs: ExtractConfig = ExtractConfig()
    convention: Convention = Convention.RAS
    threads: int = 1
    slicer_out: Path | None = None


def _setup_logging() -> None:
    level = os.environ.get("SPINEPOI_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _extract_config(args) -> ExtractConfig:
    return ExtractConfig(
        ray=RayConfig(march_step_mm=args.step_mm),
        bisection=BisectionConfig(precision_mm=args.precision_mm,
                                  initial_step_mm=args.initial_step_mm),
        shift_mode=args.shift_mode,
    )


def _load_dictionary(path) -> LabelDictionary:
    return read_label_dictionary(path) if path else default_dictionary()


def _cmd_extract(args) -> int:
    cfg = RunConfig(
        input=Path(args.input), out=Path(args.out),
        labels=Path(args.labels) if args.labels else None,
        instances=Path(args.instances) if args.instances else None,
        method=_METHODS[args.method], cfgs=_extract_config(args),
        convention=Convention(args.convention.upper()), threads=args.threads,
        slicer_out=Path(args.slicer_out) if args.slicer_out else None,
    )
    dictionary = _load_dictionary(cfg.labels)
    vol = read_label_volume(cfg.input)
    if cfg.instances is not None:
        vol = compose_instance_volume(vol, read_label_volume(cfg.instances), dictionary)
    spine = assemble_spine(vol, dictionary)
    log.info("assembled %d vertebra(e) from %s", len(spine), cfg.input)
    pois = extract_all(spine, cfg.method, cfg.cfgs, threads=cfg.threads)
    pois = retarget(pois, cfg.convention)
    write_poi_json(pois, cfg.out)
    log.info("wrote %d landmarks to %s (%d skips)", len(pois), cfg.out, len(pois.skips))
    if cfg.slicer_out is not None:
        export_slicer(pois, cfg.slicer_out)
        log.info("wrote Slicer markups to %s", cfg.slicer_out)
    for s in pois.skips:
        log.warning("skip v_id=%d %s: %s", s.v_id, s.name, s.reason)
    return 1 if pois.skips else 0


def _cmd_orient_eval(args) -> int:
    cases = ph.orientation_suite(count=args.count, seed=args.seed)
    stats = [evaluate_orientation(cases, m) for m in
             (OrientationMethod.CMS3D_ALL, OrientationMethod.CMS3D_ARCSPIN,
              OrientationMethod.PROJECTION_2D)]
    if args.out:
        Path(args.out).write_text(report_csv(stats), encoding="utf-8")
        log.info("wrote %s", args.out)
    if args.json_out:
        Path(args.json_out).write_text(report_json(stats), encoding="utf-8")
        log.info("wrote %s", args.json_out)
    if not args.out and not args.json_out:
        log.error("orient-eval needs --out and/or --json-out")
        return 2
    for s in stats:
        log.info("%s: mean=%.3f std=%.3f <=3deg %.2f <=10deg %.2f n=%d",
                 s.method, s.mean_deg, s.std_deg, s.frac_le_3, s.frac_le_10, s.n)
    return 0


def _cmd_phantom(args) -> int:
    if args.spec:
        doc = ph.read_phantom_spec(args.spec)
    elif args.preset == "spine24":
        doc = {"kind": "spine", "curvature_deg": args.curvature_deg,
               "spacing": _parse_spacing(args.spacing)}
    else:
        doc = {"kind": "vertebra", "levels": ["L3"],
               "spacing": _parse_spacing(args.spacing)}
    vol, truth = ph.materialize_phantom(doc)
    write_label_volume(vol, args.out)
    log.info("wrote %s (dims %s)", args.out, vol.dims)
    if args.truth_out:
        Path(args.truth_out).write_text(
            json.dumps(truth_document(truth), indent=2) + "\n", encoding="utf-8")
        log.info("wrote %s", args.truth_out)
    return 0


def _cmd_convert(args) -> int:
    pois = read_poi_json(args.input)
    if args.to_grid:
        target_vol = read_label_volume(args.to_grid)
        pois = retarget(pois, target_vol.frame)
    if args.convention:
        pois = retarget(pois, Convention(args.convention.upper()))
    if args.out:
        write_poi_json(pois, args.out)
        log.info("wrote %s", args.out)
    if args.slicer_out:
        export_slicer(pois, args.slicer_out)
        log.info("wrote %s", args.slicer_out)
    return 0


def _parse_spacing(text: str) -> tuple:
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise SpinePoiError(f"spacing needs 1 or 3 comma-separated values, got {text!r}")
    return tuple(parts)


def _cmd_bench(args) -> int:
    spacing = _parse_spacing(args.spacing)
    shapes = ph.default_spine_spec(n_levels=args.levels)
    t0 = time.perf_counter()
    vol, _ = ph.generate_spine(shapes, curvature_deg=args.curvature_deg,
                               spacing=spacing)
    gen_s = time.perf_counter() - t0
    spine = assemble_spine(vol, default_dictionary())
    t0 = time.perf_counter()
    pois = extract_all(spine, OrientationMethod.PROJECTION_2D, ExtractConfig(),
                       threads=args.threads)
    extract_s = time.perf_counter() - t0
    print(f"levels={args.levels} dims={'x'.join(str(d) for d in vol.dims)} "
          f"spacing={','.join(str(s) for s in spacing)} "
          f"landmarks={len(pois)} skips={len(pois.skips)} "
          f"generate_wall_s={gen_s:.2f} extract_wall_s={extract_s:.2f} "
          f"threads={args.threads}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinepoi",
        description="Vertebra coordinate frames and sub-voxel landmarks from "
                    "subregion label volumes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="label volume -> POI JSON")
    p.add_argument("--input", required=True, help="NIfTI-1 label volume (.nii/.nii.gz)")
    p.add_argument("--labels", help="label dictionary JSON (default: block coding)")
    p.add_argument("--instances", help="optional instance-map NIfTI to compose "
                                       "with a shared-code subregion volume")
    p.add_argument("--out", required=True, help="output POI JSON path")
    p.add_argument("--method", choices=sorted(_METHODS), default="proj2d")
    p.add_argument("--precision-mm", type=float, default=0.05)
    p.add_argument("--step-mm", type=float, default=0.25,
                   help="ray march step in mm")
    p.add_argument("--initial-step-mm", type=float, default=4.0)
    p.add_argument("--convention", choices=("ras", "lps"), default="ras")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--slicer-out", help="also write a 3D Slicer .mkr.json")
    p.add_argument("--shift-mode", choices=("divide", "multiply"), default="divide")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("orient-eval", help="phantom suite -> method comparison table")
    p.add_argument("--count", type=int, default=90)
    p.add_argument("--seed", type=int, default=ph.SUITE_SEED)
    p.add_argument("--out", help="CSV report path")
    p.add_argument("--json-out", help="JSON report path")
    p.set_defaults(func=_cmd_orient_eval)

    p = sub.add_parser("phantom", help="phantom spec -> label volume + truth")
    p.add_argument("--spec", help="phantom spec JSON")
    p.add_argument("--preset", choices=("vertebra", "spine24"), default="vertebra")
    p.add_argument("--spacing", default="1", help="voxel spacing, mm (a or a,b,c)")
    p.add_argument("--curvature-deg", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output volume (.nii/.nii.gz)")
    p.add_argument("--truth-out", help="output ground-truth JSON")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("convert", help="retarget / re-export a POI JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--convention", choices=("ras", "lps"))
    p.add_argument("--to-grid", help="NIfTI whose voxel space to retarget into")
    p.add_argument("--slicer-out")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("bench", help="timed extraction on a generated spine")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--levels", type=int, default=24)
    p.add_argument("--spacing", default="0.8,0.8,3.3")
    p.add_argument("--curvature-deg", type=float, default=12.0)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpinePoiError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
