"""Command line entry point.

Exit codes: 0 on success, 2 on invalid input, 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness as hn
from . import io as sio
from .errors import NumericalError, ValidationError
from .geometry import Pose
from .micronav import EstimationOptions
from .scene import save_grid

log = logging.getLogger("sasnav")

EXIT_OK, EXIT_FAILURE, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3


def _config(args, dataset: hn.Dataset | None = None) -> hn.RunConfig:
    if args.config is not None:
        config = hn.RunConfig.load(args.config)
        if dataset is not None:
            # physics comes from the dataset, solver knobs from the file
            config = replace(dataset.config, solver=config.solver)
    elif dataset is not None:
        config = dataset.config
    else:
        config = hn.RunConfig()
    return hn.with_overrides(config, seed=getattr(args, "seed", None), truncation=getattr(args, "truncation", None))


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _options(config: hn.RunConfig) -> EstimationOptions:
    return config.solver.options()


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def _pose(p: Pose | None):
    return None if p is None else [p.x, p.y, p.theta]


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    config = _config(args)
    out = Path(args.out or config.output_dir)
    config = replace(config, output_dir=str(out))
    sim = hn.simulate(config)
    hn.write_dataset(out, config, sim.records, sim.true_poses, sim.scene)
    log.info("wrote %d pings to %s", len(sim.records), out)
    if args.figures:
        from . import plotting
        (out / "figures").mkdir(exist_ok=True)
        plotting.plot_magnitude(sim.scene, out / "figures" / "scene.png", title="scene")
        plotting.plot_trajectory(out / "figures" / "trajectory.png", truth=sim.true_poses, nominal=sim.nominal_poses)
    return EXIT_OK


def _pair_summary(res: hn.PairResult) -> dict:
    est = res.estimate
    return {
        "p": res.p, "q": res.q,
        "sigma": _pose(est.sigma), "zeta_stage_sigma": _pose(est.zeta_sigma),
        "truth": _pose(res.truth), "error": _pose(res.error),
        "zeta": est.zeta_value, "eta": est.eta_value, "evaluations": est.evaluations,
    }


def _scan_pair(dataset, p, q, opts, base, out: Path, figures: bool, steps: int = 41) -> None:
    ranges = {"surge": (-0.2, 0.2), "sway": (-0.1, 0.1), "yaw": (-0.1, 0.1)}
    problem = hn.PairProblem(dataset.record(p), dataset.record(q), dataset.cfg, opts)
    for axis, (lo, hi) in ranges.items():
        v, z, e = hn.scan_axis(None, None, axis, lo, hi, steps, base, problem=problem)
        stem = f"scan_{p:03d}_{q:03d}_{axis}"
        sio.write_scan_csv(out / f"{stem}.csv", v, z, e)
        if figures:
            from . import plotting
            truth = getattr(base, {"surge": "x", "sway": "y", "yaw": "theta"}[axis])
            plotting.plot_scan(out / f"{stem}.png", v, z, e, axis, truth)


def cmd_estimate(args) -> int:
    dataset = hn.load_dataset(args.dataset)
    config = _config(args, dataset)
    opts = _options(config)
    out = _out(args, str(Path(args.dataset) / "estimate"))
    (out / "traces").mkdir(exist_ok=True)

    if args.pair is not None:
        if args.phase is not None and args.k is None:
            raise ValidationError("--phase needs --k")
        sub = hn.select(dataset, args.k, args.phase, args.rx)
        p, q = args.pair
        res = hn.estimate_pair(sub, p, q, opts)
        sio.write_trace_csv(out / "traces" / f"pair_{p:03d}_{q:03d}.csv", res.estimate.stage_trace)
        _write_json(out / "summary.json", {"pairs": [_pair_summary(res)]})
        if args.figures:
            from . import plotting
            plotting.plot_trace(out / "traces" / f"pair_{p:03d}_{q:03d}.png", res.estimate.stage_trace, res.truth)
        if args.scans:
            base = res.truth if res.truth is not None else res.estimate.sigma
            _scan_pair(sub, p, q, opts, base, out, args.figures)
        log.info("pair %d-%d: sigma=%s error=%s", p, q, _pose(res.estimate.sigma), _pose(res.error))
        return EXIT_OK

    if args.k is not None and args.phase is None:
        res = hn.estimate_interlaced(dataset, args.k, opts, args.rx)
    else:
        res = hn.estimate_dataset(hn.select(dataset, args.k, args.phase, args.rx), opts)
    hn.write_pose_table(out / "trajectory.csv", res.indices,
                        [dataset.record(i).geometry.pca for i in res.indices], res.poses)
    for pr in res.pairs:
        sio.write_trace_csv(out / "traces" / f"pair_{pr.p:03d}_{pr.q:03d}.csv", pr.estimate.stage_trace)
    summary = {"pings": res.indices, "pairs": [_pair_summary(pr) for pr in res.pairs],
               "rotation_correction_rad": res.estimate.rotation_correction,
               "wavelength_m": dataset.cfg.wavelength}
    errs = res.errors()
    if errs is not None:
        summary["final_error"] = _pose(errs[-1])
        summary["final_sway_error_m"] = errs[-1].y
        summary["max_abs_sway_error_m"] = max(abs(e.y) for e in errs)
        log.info("final sway error %.3e m (lambda/8 = %.3e m)", errs[-1].y, dataset.cfg.wavelength / 8)
    _write_json(out / "summary.json", summary)
    if args.figures:
        from . import plotting
        nominal = [dataset.record(i).geometry.pca for i in res.indices]
        plotting.plot_trajectory(out / "trajectory.png", res.poses, res.truth, nominal)
    return EXIT_OK


def cmd_scan(args) -> int:
    dataset = hn.load_dataset(args.dataset)
    config = _config(args, dataset)
    sub = hn.select(dataset, args.k, args.phase, args.rx)
    p, q = args.pair
    if args.base is not None:
        base = Pose(*args.base)
    else:
        base = sub.true_sigma(p, q) or Pose()
    lo, hi = args.range
    v, z, e = hn.scan_axis(sub.record(p), sub.record(q), args.axis, lo, hi, args.steps, base,
                           _options(config), sub.cfg)
    out = _out(args, str(Path(args.dataset) / "scans"))
    stem = f"scan_{p:03d}_{q:03d}_{args.axis}"
    sio.write_scan_csv(out / f"{stem}.csv", v, z, e)
    if args.figures:
        from . import plotting
        plotting.plot_scan(out / f"{stem}.png", v, z, e, args.axis,
                           getattr(base, {"surge": "x", "sway": "y", "yaw": "theta"}[args.axis]))
    return EXIT_OK


def _trajectory(dataset: hn.Dataset, spec: str, records) -> list:
    if spec == "nominal":
        return [r.geometry.pca for r in records]
    if spec == "true":
        if dataset.truth is None:
            raise ValidationError("dataset has no true trajectory")
        return [dataset.true_pose(r.meta["index"]) for r in records]
    idx, poses, _ = sio.read_trajectory_csv(spec)
    by_index = dict(zip(idx, poses))
    missing = [r.meta["index"] for r in records if r.meta["index"] not in by_index]
    if missing:
        raise ValidationError(f"trajectory {spec} lacks pings {missing}")
    return [by_index[r.meta["index"]] for r in records]


def cmd_image(args) -> int:
    dataset = hn.load_dataset(args.dataset)
    sub = hn.select(dataset, args.k, args.phase, args.rx)
    poses = _trajectory(dataset, args.trajectory, sub.records)
    grid = hn.image_grid(dataset.config, args.extent, args.center)
    image = hn.form_image(sub.records, poses, grid, dataset.cfg)
    out = _out(args, str(Path(args.dataset) / "image"))
    name = Path(args.trajectory).stem if args.trajectory not in ("true", "nominal") else args.trajectory
    save_grid(out / f"image_{name}.sasg", image)
    sio.write_pgm(out / f"image_{name}.pgm", image, args.scale)
    report = {"trajectory": args.trajectory}
    phantom = hn.phantom_spec(dataset.config)
    if phantom is not None:
        report["contrast_db"] = hn.phantom_contrast(image, phantom)
        log.info("phantom contrast %.2f dB", report["contrast_db"])
    _write_json(out / f"image_{name}.json", report)
    if args.figures:
        from . import plotting
        plotting.plot_magnitude(image, out / f"image_{name}.png", scale="db" if args.scale == "db" else "linear",
                                title=f"{name} trajectory")
    return EXIT_OK


def cmd_rearrange(args) -> int:
    if args.k is None and args.rx is None:
        raise ValidationError("rearrange needs --k (with --phase) and/or --rx")
    dataset = hn.load_dataset(args.dataset)
    sub = hn.select(dataset, args.k, args.phase, args.rx)
    config = dataset.config
    if args.rx is not None:
        # single-receiver pings: shrink the array accordingly
        config = replace(config, system=replace(config.system, N=1, K=0))
    out = Path(args.out or f"{args.dataset}_k{args.k}_p{args.phase or 0}")
    hn.write_dataset(out, config, sub.records, sub.truth)
    log.info("wrote %d pings to %s", len(sub.records), out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sasnav", description="SAS micronavigation by subspace intersection")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        if dataset:
            p.add_argument("dataset", help="dataset directory written by 'simulate'")
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--no-figures", dest="figures", action="store_false", help="skip PNG figures")

    def selection(p):
        p.add_argument("--k", type=int, help="superimposed phase centers of the sub-sampled arrangement")
        p.add_argument("--phase", type=int, help="first ping of the sub-sampled arrangement")
        p.add_argument("--rx", type=int, help="keep only this receiver (single-receiver pings)")

    p = sub.add_parser("simulate", help="synthesize a ping dataset")
    common(p, dataset=False)
    p.add_argument("--seed", type=int, help="override the configuration seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the trajectory (or one pair)")
    common(p)
    selection(p)
    p.add_argument("--pair", type=int, nargs=2, metavar=("P", "Q"), help="estimate a single pair")
    p.add_argument("--scans", action="store_true", help="with --pair: also scan surge, sway and yaw")
    p.add_argument("--truncation", type=int, nargs=2, metavar=("INNER", "OUTER"))
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("scan", help="1-D scan of both error functions")
    common(p)
    selection(p)
    p.add_argument("--pair", type=int, nargs=2, metavar=("P", "Q"), required=True)
    p.add_argument("--axis", choices=hn.AXES, required=True)
    p.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"), required=True)
    p.add_argument("--steps", type=int, default=41)
    p.add_argument("--base", type=float, nargs=3, metavar=("X", "Y", "THETA"),
                   help="other components (default: the true motion error if known, else zero)")
    p.add_argument("--truncation", type=int, nargs=2, metavar=("INNER", "OUTER"))
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("image", help="backprojection image along a trajectory")
    common(p)
    selection(p)
    p.add_argument("--trajectory", default="true", help="'true', 'nominal' or a trajectory CSV")
    p.add_argument("--scale", choices=("linear", "db"), default="db", help="PGM gray scale")
    p.add_argument("--extent", type=float, nargs=2, metavar=("EX", "EY"))
    p.add_argument("--center", type=float, nargs=2, metavar=("CX", "CY"))
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("rearrange", help="write a sub-sampled or single-receiver dataset")
    common(p)
    selection(p)
    p.set_defaults(func=cmd_rearrange)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
