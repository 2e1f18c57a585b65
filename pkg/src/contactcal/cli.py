"""Command-line entry point: ``contactcal <command> ...``.

Exit codes: 0 success, 1 error (including usage errors), 2 degenerate data.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationProblem, calibrate
from .config import CALIBRATION_KEYS, Settings, calibration_config, icp_config, read_config
from .errors import ContactCalError, DegenerateProblem, ParseError
from .kinematics import contact_points, generic_six_axis, read_chain, read_joint_log, write_chain, write_joint_log
from .pointcloud import PointCloud, estimate_normals, read_cloud, write_cloud
from .registration import depth_index, find_correspondences, register
from .reports import (
    RunManifest,
    calibration_report,
    cost_history_csv,
    downsample_csv,
    registration_report,
    sampling_csv,
    spectrum_csv,
    write_text,
)
from .se3 import ExtrinsicParams, RigidTransform, extrinsic_to_transform, transform_error, transform_to_extrinsic
from .simulator import (
    DEFAULT_EXTRINSIC,
    ContactScanConfig,
    DepthScanConfig,
    generate_dataset,
    make_benchmark_scene,
    read_patches,
    write_patches,
)
from .stability import SamplingRow, analyze, hessian_from_pairs, mask_members
from .studies import downsample_study, perturb

log = logging.getLogger("contactcal")

EXIT_OK, EXIT_ERROR, EXIT_DEGENERATE = 0, 1, 2


class UsageError(ContactCalError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments, which is reserved for degenerate data
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# -- helpers ----------------------------------------------------------------

def _read_transform(path) -> RigidTransform:
    """Six numbers (extrinsic vector) or twelve (row-major rotation + translation)."""
    text = " ".join(line.split("#", 1)[0] for line in Path(path).read_text().splitlines())
    n = len(text.split())
    try:
        if n == 6:
            return extrinsic_to_transform(ExtrinsicParams.from_line(text))
        if n == 12:
            return RigidTransform.from_line(text)
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from None
    raise ParseError(f"expected 6 or 12 numbers, found {n}", path=path)


def _read_biases(path) -> np.ndarray:
    rows = Path(path).read_text().split("\n")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if row.strip():
            try:
                values.append(float(row.split(",")[1]))
            except (IndexError, ValueError):
                raise ParseError(f"bad bias row {row!r}", lineno, path) from None
    return np.array(values)


def _write_biases(biases, path):
    lines = ["joint,bias_rad"] + [f"{k + 1},{b:.17g}" for k, b in enumerate(biases)]
    write_text(path, "\n".join(lines) + "\n")


def _depth_with_normals(path, viewpoint, cfg):
    depth = read_cloud(path)
    if depth.normals is None:
        if viewpoint is None:
            raise UsageError(f"{path} has no normals; pass --viewpoint X Y Z (camera frame)")
        depth = estimate_normals(depth, cfg.normal_k, viewpoint, workers=cfg.workers)
    return depth


# -- simulate ---------------------------------------------------------------

SIMULATE_KEYS = (
    "preset", "patches", "seed", "point_density", "depth_sigma", "bow_amplitude",
    "estimate_normals", "normal_k", "raster_spacing", "contact_sigma", "selected_patches",
    "force_setpoint", "force_min", "force_max", "force_sigma", "tool_tilt_max_deg",
    "seed_jitter", "fixed_wrist", "visible_only", "chain", "true_translation",
    "true_angles_deg", "true_biases_deg", "initial_offset_m", "initial_offset_deg",
)


def cmd_simulate(args) -> int:
    settings = read_config(args.config)
    settings.check_known(SIMULATE_KEYS)
    seed = args.seed if args.seed is not None else settings.get_int("seed", 0)
    out = Path(args.out)
    t0 = time.perf_counter()

    if "patches" in settings:
        scene = read_patches(settings["patches"])
    else:
        scene = make_benchmark_scene(settings.get_str("preset", "two_prisms_table"))
    chain = read_chain(settings["chain"]) if "chain" in settings else generic_six_axis()

    translation = settings.get_floats("true_translation", 3, list(DEFAULT_EXTRINSIC.translation))
    angles = settings.get_floats("true_angles_deg", 3, list(np.degrees(DEFAULT_EXTRINSIC.angles)))
    truth = ExtrinsicParams(*translation, *np.radians(angles))
    biases = np.radians(settings.get_floats("true_biases_deg", chain.dof, [0.0] * chain.dof))

    if "selected_patches" in settings:
        selected = settings.get_list("selected_patches")
    else:
        selected = list(dict.fromkeys(label.split(".")[0] for label in scene.labels))
    if not selected:
        raise UsageError("selected_patches is empty")
    depth_cfg = DepthScanConfig(
        point_density=settings.get_float("point_density", 50_000.0),
        gaussian_sigma=settings.get_float("depth_sigma", 0.0),
        bow_amplitude=settings.get_float("bow_amplitude", 0.0),
        seed=seed,
    )
    contact_cfg = ContactScanConfig(
        selected_patches=tuple(selected),
        raster_spacing=settings.get_float("raster_spacing", 0.02),
        contact_noise_sigma=settings.get_float("contact_sigma", 0.001),
        force_setpoint=settings.get_float("force_setpoint", -4.0),
        force_min=settings.get_float("force_min", -3.0),
        force_max=settings.get_float("force_max", -15.0),
        force_sigma=settings.get_float("force_sigma", 1.0),
        tool_tilt_max=math.radians(settings.get_float("tool_tilt_max_deg", 0.0)),
        seed_jitter=settings.get_float("seed_jitter", 0.0),
        fixed_wrist=settings.get_bool("fixed_wrist", False),
        visible_only=settings.get_bool("visible_only", True),
        seed=seed,
    )
    ds = generate_dataset(scene, depth_cfg, contact_cfg, chain, truth, biases)
    depth = ds.depth
    if settings.get_bool("estimate_normals", False):
        depth = estimate_normals(PointCloud(depth.points), settings.get_int("normal_k", 12),
                                 np.zeros(3), workers=args.threads)

    guess_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    initial = perturb(extrinsic_to_transform(truth), guess_rng,
                      settings.get_float("initial_offset_m", 0.05),
                      math.radians(settings.get_float("initial_offset_deg", 5.0)))

    out.mkdir(parents=True, exist_ok=True)
    write_cloud(depth, out / "depth.ply")
    write_joint_log(ds.joint_logs, out / "joints.csv")
    write_chain(chain, out / "chain.txt")
    write_text(out / "initial_guess.txt", transform_to_extrinsic(initial).to_line() + "\n")
    gt = out / "ground_truth"
    gt.mkdir(exist_ok=True)
    write_text(gt / "extrinsic.txt", truth.to_line() + "\n")
    _write_biases(biases, gt / "biases.csv")
    write_patches(ds.truth.scene, gt / "patches.txt")
    write_text(gt / "contact_labels.txt", "\n".join(ds.truth.labels.tolist()) + "\n")

    RunManifest("simulate", str(args.config), {}, str(out), seed, __version__, {
        "contacts": int(len(ds.joint_logs)), "depth_points": int(len(depth)),
        "wall_seconds": round(time.perf_counter() - t0, 3),
    }).write(out / "manifest.json")
    print(f"wrote {len(ds.joint_logs)} contacts and {len(depth)} depth points to {out}")
    return EXIT_OK


# -- calibrate --------------------------------------------------------------

def cmd_calibrate(args) -> int:
    settings = read_config(args.config) if args.config else Settings()
    settings.check_known(CALIBRATION_KEYS)
    icp = icp_config(settings, workers=args.threads)
    out = Path(args.out)
    t0 = time.perf_counter()

    chain = read_chain(args.chain)
    logs = read_joint_log(args.joints, chain.dof)
    depth = _depth_with_normals(args.depth, args.viewpoint, icp)
    if args.initial:
        initial = _read_transform(args.initial)
    elif "initial_extrinsic" in settings:
        initial = extrinsic_to_transform(ExtrinsicParams.from_array(settings.get_floats("initial_extrinsic", 6)))
    else:
        raise UsageError("no initial guess: pass --initial FILE or set initial_extrinsic")

    contact = PointCloud(contact_points(chain.nominal(), logs))
    rigid = register(contact, depth, initial, icp)
    raw = analyze(rigid.hessian)
    corr = find_correspondences(contact, depth, depth_index(depth), rigid.transform, icp).only_active()
    p = rigid.transform.apply(contact.points[corr.source_index])
    centered = analyze(hessian_from_pairs(p, corr.normal, p.mean(axis=0)))
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "registration.txt", registration_report(rigid, raw, centered))
    write_text(out / "registration_cost.csv", cost_history_csv(rigid.history))

    metrics = {"rigid_iterations": rigid.iterations, "rigid_cost": rigid.final_cost,
               "rigid_rank": raw.numeric_rank}
    code = EXIT_OK
    result = None
    if raw.numeric_rank < 6:
        labels = ", ".join(label for _, label in raw.null_directions)
        print(f"degenerate: rank {raw.numeric_rank} ({labels})", file=sys.stderr)
        code = EXIT_DEGENERATE
    elif not rigid.converged:
        print(f"rigid registration did not converge in {rigid.iterations} iterations", file=sys.stderr)
        code = EXIT_ERROR
    elif settings.get_bool("solve_biases", False):
        problem = CalibrationProblem(chain, logs, depth, transform_to_extrinsic(initial),
                                     config=calibration_config(settings, workers=args.threads))
        try:
            result = calibrate(problem)
        except DegenerateProblem as exc:
            print(f"degenerate: {exc}", file=sys.stderr)
            code = EXIT_DEGENERATE
        else:
            write_text(out / "calibration.txt", calibration_report(result))
            write_text(out / "calibration_cost.csv", cost_history_csv(result.history))
            if result.spectrum is not None:
                write_text(out / "calibration_spectrum.csv", spectrum_csv(result.spectrum))
            metrics.update(lm_iterations=result.iterations, lm_cost=result.final_cost)
            print(result.verdict)
            if result.degeneracy is not None:
                code = EXIT_DEGENERATE
            elif not result.converged:
                code = EXIT_ERROR

    if args.ground_truth:
        gt = Path(args.ground_truth)
        truth = extrinsic_to_transform(ExtrinsicParams.from_line((gt / "extrinsic.txt").read_text()))
        T = result.transform if result is not None else rigid.transform
        dt, ang = transform_error(T, truth)
        lines = [f"translation_error_m {' '.join(f'{v:.17g}' for v in dt)}",
                 f"translation_error_norm_m {np.linalg.norm(dt):.17g}",
                 f"rotation_error_rad {ang:.17g}"]
        if result is not None and (gt / "biases.csv").exists():
            err = result.joint_biases - _read_biases(gt / "biases.csv")
            lines.append(f"bias_error_deg {' '.join(f'{v:.17g}' for v in np.degrees(err))}")
        write_text(out / "evaluation.txt", "\n".join(lines) + "\n")

    metrics["wall_seconds"] = round(time.perf_counter() - t0, 3)
    RunManifest("calibrate", args.config and str(args.config),
                {"depth": str(args.depth), "joints": str(args.joints), "chain": str(args.chain),
                 "initial": args.initial and str(args.initial)},
                str(out), None, __version__, metrics).write(out / "manifest.json")
    final = result.extrinsic if result is not None else transform_to_extrinsic(rigid.transform)
    print(f"extrinsic {final.to_line()}")
    return code


# -- stability --------------------------------------------------------------

def _parse_masks(items):
    masks = {}
    for item in items or []:
        name, sep, labels = item.partition("=")
        if not sep or not name.strip():
            raise UsageError(f"mask must look like NAME=label,label: {item!r}")
        masks[name.strip()] = [x.strip() for x in labels.split(",") if x.strip()]
    return masks


def cmd_stability(args) -> int:
    if args.self_test:
        rep = analyze(np.eye(6))
        print(f"condition_number {rep.condition_number:g} rank {rep.numeric_rank}")
        return EXIT_OK
    missing = [n for n in ("depth", "joints", "chain", "extrinsic") if getattr(args, n) is None]
    if missing:
        raise UsageError("missing inputs: " + ", ".join(missing))
    icp = icp_config(Settings(), workers=args.threads)
    chain = read_chain(args.chain)
    logs = read_joint_log(args.joints, chain.dof)
    depth = _depth_with_normals(args.depth, args.viewpoint, icp)
    T = _read_transform(args.extrinsic)
    base = contact_points(chain.nominal(), logs)
    contact = PointCloud(base)
    corr = find_correspondences(contact, depth, depth_index(depth), T, icp).only_active()

    masks = _parse_masks(args.mask)
    if masks and not args.patches:
        raise UsageError("--mask needs --patches to label contact points")
    if masks:
        scene = read_patches(args.patches)
        labels, _ = scene.nearest_patch(base)
    else:
        masks = {"all": []}
        labels = None

    rows = []
    for name, selection in masks.items():
        keep = np.ones(len(corr), dtype=bool) if labels is None else mask_members(
            labels[corr.source_index], selection)
        if not np.any(keep):
            raise UsageError(f"mask {name!r} selects no paired contact points")
        p = T.apply(base[corr.source_index[keep]])
        rep = analyze(hessian_from_pairs(p, corr.normal[keep], p.mean(axis=0)))
        rows.append(SamplingRow(name, int(keep.sum()), rep.numeric_rank, rep.eigenvalues, rep.condition_number))
    text = sampling_csv(rows)
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- downsample study -------------------------------------------------------

def cmd_downsample_study(args) -> int:
    data = Path(args.dataset)
    icp = icp_config(read_config(args.config) if args.config else Settings(), workers=args.threads)
    chain = read_chain(data / "chain.txt")
    logs = read_joint_log(data / "joints.csv", chain.dof)
    depth = _depth_with_normals(data / "depth.ply", args.viewpoint, icp)
    gt = Path(args.ground_truth) if args.ground_truth else data / "ground_truth"
    truth = extrinsic_to_transform(ExtrinsicParams.from_line((gt / "extrinsic.txt").read_text()))
    contact = PointCloud(contact_points(chain.nominal(), logs))
    counts = []
    for item in args.counts.split(","):
        item = item.strip()
        counts.append(len(contact) if item == "all" else int(item))
    too_big = [c for c in counts if c > len(contact) or c < 1]
    if too_big:
        raise UsageError(f"counts {too_big} outside 1..{len(contact)} (contact cloud size)")
    initial = _read_transform(args.initial) if args.initial else None
    rows = downsample_study(contact, depth, truth, counts, trials=args.trials, seed=args.seed,
                            initial=initial, cfg=icp, max_translation=args.perturb_translation,
                            max_rotation=math.radians(args.perturb_rotation_deg))
    text = downsample_csv(rows)
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- wiring -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contactcal", description="Contact-based camera/arm self-calibration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads for neighbour queries")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    p.add_argument("config", help="key = value simulation settings")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common], help="register contacts to depth, optionally solve joint biases")
    p.add_argument("depth", help="depth cloud (.ply or .csv, camera frame)")
    p.add_argument("joints", help="joint log CSV")
    p.add_argument("chain", help="DH chain file")
    p.add_argument("--config", help="key = value solver settings")
    p.add_argument("--initial", help="initial extrinsic (6 numbers) or transform (12 numbers)")
    p.add_argument("--viewpoint", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="camera position for orienting estimated normals")
    p.add_argument("--ground-truth", help="ground-truth directory, only used to write evaluation.txt")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("stability", parents=[common], help="condition-number table per sampling mask")
    p.add_argument("depth", nargs="?")
    p.add_argument("joints", nargs="?")
    p.add_argument("chain", nargs="?")
    p.add_argument("extrinsic", nargs="?", help="6-number extrinsic or 12-number transform file")
    p.add_argument("--patches", help="patch list used to label contact points")
    p.add_argument("--mask", action="append", help="NAME=label,label (repeatable)")
    p.add_argument("--viewpoint", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--self-test", action="store_true", help="analyse the identity hessian and exit")
    p.add_argument("-o", "--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("downsample-study", parents=[common], help="registration error versus contact count")
    p.add_argument("dataset", help="directory written by 'simulate'")
    p.add_argument("--counts", default="all,5000,500,100,25", help="comma list; 'all' is the full cloud")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key = value ICP settings")
    p.add_argument("--initial", help="fixed initial guess instead of per-trial perturbations")
    p.add_argument("--perturb-translation", type=float, default=0.05, help="metres per axis")
    p.add_argument("--perturb-rotation-deg", type=float, default=5.0, help="degrees per axis")
    p.add_argument("--ground-truth", help="defaults to DATASET/ground_truth")
    p.add_argument("--viewpoint", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("-o", "--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_downsample_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ContactCalError, OSError, ValueError) as exc:
        print(f"contactcal {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
