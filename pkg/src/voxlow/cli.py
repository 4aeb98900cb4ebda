"""Command line interface: ``voxlow compile|infer|eval|bench|iou|synth``.

Exit codes: 0 success, 2 validation or verification failure, 3 I/O or
parse error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import kernels
from .config import ConfigError, PipelineCfg, load_config
from .evaluation import RecordFileError, evaluate
from .geometry import Box3D, RotatedBox2D, iou_3d, rotated_iou_bev
from .graph import GraphError, GraphFormatError, load_graph, read_tensors, save_graph, validate
from .lowering import LoweringError, check_rank4, lower, verify_equivalence
from .pipeline import MODES, SEQUENTIAL, RankViolation, StageTiming, bench, run_pipeline
from .postproc import write_detections
from .tensor import fold_depth
from .voxelize import PointFileError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3

log = logging.getLogger("voxlow")


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=False)
    sys.stdout.write("\n")


def _load_graph(path):
    try:
        return load_graph(path)
    except (OSError, GraphFormatError) as exc:
        raise CliError(str(exc), EXIT_IO) from None


def _load_cfg(path) -> PipelineCfg:
    if path is None:
        return PipelineCfg()
    try:
        return load_config(path)
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_IO) from None


def _frames(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"{d}: not a directory", EXIT_IO)
    return sorted(d.glob("*.csv"))


def _calibration_sets(directory, g4) -> list[dict]:
    sets = []
    for path in sorted(Path(directory).glob("*.vxw")):
        try:
            tensors = read_tensors(path)
        except (OSError, GraphFormatError) as exc:
            raise CliError(str(exc), EXIT_IO) from None
        sets.append({k: fold_depth(v) if v.ndim == 5 else v for k, v in tensors.items() if k in g4.inputs})
    if not sets:
        raise CliError(f"{directory}: no .vxw calibration files", EXIT_IO)
    return sets


def cmd_compile(args) -> int:
    g5 = _load_graph(args.inp)
    problems = validate(g5)
    if problems:
        _emit({"valid": False, "violations": problems})
        return EXIT_INVALID
    try:
        g4, rep = lower(g5)
    except LoweringError as exc:
        _emit({"valid": False, "error": str(exc)})
        return EXIT_INVALID
    out = {"lowering": rep.to_dict(), "rank4_violations": check_rank4(g4)}
    code = EXIT_OK
    if args.verify_trials > 0:
        eq = verify_equivalence(g5, g4, args.verify_trials, args.tol, args.seed)
        out["verification"] = eq.to_dict()
        if not eq.passed:
            code = EXIT_INVALID
    if args.quantize:
        from .quant import quantize

        g4, qrep = quantize(g4, _calibration_sets(args.quantize, g4))
        out["quantization"] = qrep.to_dict()
    if out["rank4_violations"]:
        code = EXIT_INVALID
    try:
        save_graph(g4, args.out)
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    out["output"] = str(args.out)
    _emit(out)
    return code


def cmd_infer(args) -> int:
    g4 = _load_graph(args.graph)
    cfg = _load_cfg(args.cfg)
    try:
        dets, rep = run_pipeline(_frames(args.frames), g4, cfg, args.mode)
    except RankViolation as exc:
        _emit({"refused": True, "rank4_violations": exc.violations})
        return EXIT_INVALID
    except PointFileError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    write_detections(args.out, dets, cfg.anchors.class_names)
    _emit({"detections": len(dets), "output": str(args.out), "report": rep.to_dict()})
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args.cfg)
    try:
        report = evaluate(
            args.dets, args.gt, cfg.eval.thresholds(cfg.anchors.class_names) or cfg.eval.default_iou,
            classes=None, n_points=cfg.eval.n_points,
        )
    except (OSError, RecordFileError) as exc:
        raise CliError(str(exc), EXIT_IO) from None
    _emit(report)
    return EXIT_OK


def _parse_floats(text: str, n: int, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"{what}: expected {n} comma-separated numbers, got {text!r}", EXIT_INVALID) from None
    if len(vals) != n:
        raise CliError(f"{what}: expected {n} values, got {len(vals)}", EXIT_INVALID)
    return vals


def cmd_bench(args) -> int:
    if args.simulate:
        timing = StageTiming(*_parse_floats(args.simulate, 4, "--simulate"))
        rep = bench([], None, None, args.repeats, args.mode, simulate=timing, sim_frames=args.sim_frames)
    else:
        if not (args.graph and args.frames):
            raise CliError("bench needs --graph and --frames unless --simulate is given", EXIT_INVALID)
        g4 = _load_graph(args.graph)
        cfg = _load_cfg(args.cfg)
        try:
            rep = bench(_frames(args.frames), g4, cfg, args.repeats, args.mode)
        except RankViolation as exc:
            _emit({"refused": True, "rank4_violations": exc.violations})
            return EXIT_INVALID
    out = rep.to_dict()
    out["kernel_backend"] = kernels.BACKEND
    _emit(out)
    return EXIT_OK


def cmd_iou(args) -> int:
    try:
        if args.mode == "bev":
            a = RotatedBox2D(*_parse_floats(args.a, 5, "--a"))
            b = RotatedBox2D(*_parse_floats(args.b, 5, "--b"))
            val = rotated_iou_bev(a, b)
        else:
            a = Box3D(*_parse_floats(args.a, 7, "--a"))
            b = Box3D(*_parse_floats(args.b, 7, "--b"))
            val = iou_3d(a, b)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    print(f"{val:.6f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import write_scenario

    paths = write_scenario(args.out, args.frames, args.seed)
    _emit({k: str(v) for k, v in paths.items()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxlow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="lower a rank-5 graph to a rank-4 graph")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--verify-trials", type=int, default=20)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--quantize", metavar="CALIB_DIR", help="directory of .vxw input tensors")
    c.set_defaults(fn=cmd_compile)

    i = sub.add_parser("infer", help="run the pipeline over a directory of point files")
    i.add_argument("--graph", required=True)
    i.add_argument("--frames", required=True)
    i.add_argument("--cfg")
    i.add_argument("--out", required=True)
    i.add_argument("--mode", choices=MODES, default=SEQUENTIAL)
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="AP_3D / AP_BEV of a detections file")
    e.add_argument("--dets", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--cfg")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="stage timings and frame rates")
    b.add_argument("--graph")
    b.add_argument("--frames")
    b.add_argument("--cfg")
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--simulate", metavar="PRE,NET,POST,OVERHEAD")
    b.add_argument("--sim-frames", type=int, default=20)
    b.add_argument("--mode", choices=MODES, default=SEQUENTIAL)
    b.set_defaults(fn=cmd_bench)

    o = sub.add_parser("iou", help="IoU of two boxes")
    o.add_argument("--a", required=True, help="cx,cy,w,l,yaw (bev) or cx,cy,z,w,l,h,yaw (3d)")
    o.add_argument("--b", required=True)
    o.add_argument("--mode", choices=("bev", "3d"), default="bev")
    o.set_defaults(fn=cmd_iou)

    s = sub.add_parser("synth", help="write a seeded synthetic scenario and toy detector")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"voxlow: {exc}", file=sys.stderr)
        return exc.code
    except GraphError as exc:
        print(f"voxlow: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
