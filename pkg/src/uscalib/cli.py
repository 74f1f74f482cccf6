"""Command-line interface.

Exit codes: 0 success, 2 usage, 3 unreadable or invalid input, 4 solver failure.
The default seed is read from ``USCALIB_SEED`` (0 when unset).
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import CalibrationError, ParseError
from .geometry import Similarity, similarity_errors
from .robust import residuals
from .sim import (
    METHODS,
    SimConfig,
    calibrate,
    generate_scene,
    medians,
    pra,
    run_experiment,
)

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_SOLVER = 0, 2, 3, 4
SEED_ENV = "USCALIB_SEED"


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_calibrate(args) -> int:
    f = io.load_acquisitions(args.input)
    if f.probe_kind != args.mode:
        raise UsageError(f"--mode {args.mode} does not match the {f.probe_kind} input file")
    if args.solver == "minimal-general" and args.mode != "2d":
        raise UsageError("minimal-general is a 2d solver")
    acqs = io.ingest(f)
    seed = _default_seed() if args.seed is None else args.seed
    A, res = calibrate(acqs, args.mode, args.solver, args.ransac_threshold_mm, seed,
                       args.max_iterations)
    doc = io.calibration_document(A, args.mode, args.solver, res.inlier_mask, residuals(A, acqs),
                                  args.ransac_threshold_mm, seed, res.iterations_used)
    _write(args.output, io.format_calibration(doc))
    print(f"inliers {res.n_inliers}/{len(acqs)}, scale {A.scale:.6g}, "
          f"median residual {doc['residual_stats_mm']['all_median']:.3f} mm", file=sys.stderr)
    return EXIT_OK


def _fmt(x) -> str:
    return repr(float(x))


def cmd_simulate(args) -> int:
    d = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            raise ParseError(f"{args.config}: {e}") from None
        if not isinstance(d, dict):
            raise ParseError(f"{args.config}: config must be an object")
    if args.seed is not None:
        d["rng_seed"] = args.seed
    elif "rng_seed" not in d:
        d["rng_seed"] = _default_seed()
    if args.trials is not None:
        d["trials_per_n"] = args.trials
    try:
        cfg = SimConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise ParseError(f"invalid config: {e}") from None
    reports = run_experiment(cfg)

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "N", "trial", "rot_err_rad", "trans_err_mm", "scale_err", "failed"])
    for r in reports:
        w.writerow([r.method, r.n_used, r.trial, _fmt(r.rot_err_rad), _fmt(r.trans_err_mm),
                    _fmt(r.scale_err), int(r.failed)])
    _write(args.output, buf.getvalue())

    print(f"{'method':<18} {'N':>3} {'rot deg':>9} {'trans mm':>9} {'scale':>9}", file=sys.stderr)
    for m in cfg.methods:
        lo, hi = cfg.n_range_3d if METHODS[m][0] == "3d" else cfg.n_range_2d
        for n in range(lo, hi + 1):
            rot, tr, sc = medians(reports, m, n)
            print(f"{m:<18} {n:>3} {math.degrees(rot):>9.3f} {tr:>9.3f} {sc:>9.5f}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    A = io.load_calibration(args.calibration)
    records = io.load_phantom(args.phantom)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record", "pra_mm"])
    values = []
    for i, r in enumerate(records):
        v = pra(A, r.us_point, r.pose.to_marker(r.tracked_point_O))
        values.append(v)
        w.writerow([i, _fmt(v)])
    _write(args.output, buf.getvalue())
    print(f"PRA median {np.median(values):.3f} mm over {len(values)} records", file=sys.stderr)
    return EXIT_OK


def selftest(n_instances: int = 20, seed: int = 0) -> list[tuple[str, bool, float]]:
    """Noise-free recovery check of every solver. Returns ``(name, passed, worst_error)``."""
    from .calib2d import solve_linear_2d, solve_minimal_2d, solve_minimal_2d_general
    from .calib3d import solve_linear_3d, solve_minimal_3d

    cases = [
        ("linear3d", solve_linear_3d, "3d", 3),
        ("minimal3d", solve_minimal_3d, "3d", 2),
        ("linear2d", solve_linear_2d, "2d", 5),
        ("minimal2d", solve_minimal_2d, "2d", 4),
        ("minimal2d_general", solve_minimal_2d_general, "2d", 4),
    ]
    out = []
    for name, fn, mode, n in cases:
        rng = np.random.default_rng(seed)
        worst, ok = 0.0, True
        for _ in range(n_instances):
            cfg = SimConfig(n_lines=n, noise_us_sigma=0.0, noise_track_sigma_mm=0.0)
            scene = generate_scene(cfg, rng)
            acqs = scene.pool3d if mode == "3d" else scene.pool2d
            try:
                cands = fn(acqs)
            except CalibrationError:
                ok = False
                continue
            cands = [cands] if isinstance(cands, Similarity) else list(cands)
            err = min(max(e[0] / 1e-6, e[1] / 1e-5, e[2] / 1e-8)
                      for e in (similarity_errors(c, scene.A_gt) for c in cands))
            worst = max(worst, err)
        out.append((name, ok and worst < 1.0, worst))
    return out


def cmd_selftest(args) -> int:
    results = selftest(args.instances, _default_seed() if args.seed is None else args.seed)
    for name, ok, worst in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} (worst error {worst:.2e} of tolerance)")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uscalib", description="Ultrasound probe calibration from tracked needles.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="RANSAC + refinement on an acquisition file")
    c.add_argument("--input", required=True)
    c.add_argument("--mode", choices=["2d", "3d"], required=True)
    c.add_argument("--solver", choices=["linear", "minimal", "minimal-general"], default="minimal")
    c.add_argument("--ransac-threshold-mm", type=float, default=5.0)
    c.add_argument("--max-iterations", type=int, default=500)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--output", default="-")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", help="synthetic accuracy experiment, CSV out")
    s.add_argument("--config", default=None, help="JSON object of simulation settings")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--trials", type=int, default=None, help="override trials per N")
    s.add_argument("--output", default="-")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("validate", help="point reconstruction accuracy on a phantom file")
    v.add_argument("--calibration", required=True)
    v.add_argument("--phantom", required=True)
    v.add_argument("--output", default="-")
    v.set_defaults(func=cmd_validate)

    t = sub.add_parser("selftest", help="noise-free recovery check of every solver")
    t.add_argument("--instances", type=int, default=20)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except CalibrationError as e:
        print(f"solver error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
