"""Command-line entry point exposing the pipeline as composable subcommands.

Commands communicate through .prosper.json documents on disk.  Exit codes:
0 success, 1 validation failure, 2 infeasibility, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import calib, config as cfgmod, io as docio, register as regmod, shape as shapemod
from .dose import plan_seeds
from .errors import (
    InfeasibleNoTrajectories,
    ProsperError,
    TargetOutsideWorkspace,
    UnknownScenario,
)
from .geom import RigidTransform
from .scenarios import load_scenario, scenario_from_payload, scenario_payload
from .sim import execute_plan

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INFEASIBLE = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="prosper",
                     description="planning and simulation for robot-guided brachytherapy")
    parser.add_argument("--config", help="JSON file overriding module defaults")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("scenario", help="write a bundled scenario document")
    p.add_argument("name")
    p.add_argument("--out", required=True, help="output file or directory")

    p = sub.add_parser("calibrate", help="simulate a water-phantom calibration and solve it")
    p.add_argument("--n", type=int, default=8, help="number of insertions")
    p.add_argument("--noise", type=float, default=0.2, help="tip detection sigma, mm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-shape", help="fit the shape model to user points")
    p.add_argument("--points", required=True, help="JSON file: [[x,y,z], ...]")
    p.add_argument("--model", help="shape model document (default: bundled atlas)")
    p.add_argument("--out", required=True, help="fitted surface mesh document")

    p = sub.add_parser("register", help="elastic source-to-target surface registration")
    p.add_argument("--source", required=True, help="mesh file (document, bare JSON, or PLY)")
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="deformation field document")

    p = sub.add_parser("plan", help="plan seed placement")
    p.add_argument("--scenario", help="scenario document supplying target/arch")
    p.add_argument("--target", help="target mesh file (alternative to --scenario)")
    p.add_argument("--arch", help="arch mesh file")
    p.add_argument("--mode", choices=("grid", "oblique"), default="grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="execute a plan on the deformable phantom")
    p.add_argument("--plan", required=True)
    p.add_argument("--phantom", help="phantom document")
    p.add_argument("--scenario", help="scenario document supplying the phantom")
    p.add_argument("--spin", type=float, default=0.0, help="needle spin rate, rad/s")
    p.add_argument("--seed", type=int, help="override the phantom rng seed")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="aggregate pipeline outputs into one summary")
    p.add_argument("--calibration")
    p.add_argument("--field")
    p.add_argument("--plan")
    p.add_argument("--trial")
    p.add_argument("--format", choices=("human", "machine"), default="human")
    p.add_argument("--out")

    p = sub.add_parser("serve", help="run the interactive planning service")
    p.add_argument("--bind", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8470)

    p = sub.add_parser("validate", help="validate any .prosper.json document")
    p.add_argument("paths", nargs="+")
    return parser


def _write(doc, out_path: str) -> Path:
    path = Path(out_path)
    if not str(path).endswith(docio.FILE_SUFFIX) and path.suffix != ".json":
        path = path.with_name(path.name + docio.FILE_SUFFIX)
    path.parent.mkdir(parents=True, exist_ok=True)
    return docio.save_document(doc, path)


def _cmd_scenario(args, cfg, chash) -> int:
    bundle = load_scenario(args.name)
    payload = scenario_payload(bundle)
    out = Path(args.out)
    if out.is_dir() or not out.suffix:
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"{args.name}{docio.FILE_SUFFIX}"
    path = docio.save_document(docio.make_document("scenario", payload, chash), out)
    print(f"wrote scenario '{args.name}' to {path}")
    return EXIT_OK


def _cmd_calibrate(args, cfg, chash) -> int:
    rng = np.random.default_rng(args.seed)
    true_transform = RigidTransform.random(rng, max_translation=60.0)
    configs = calib.calibration_configs(args.n)
    observations = calib.simulate_water_phantom(true_transform, configs,
                                                noise_sigma=args.noise,
                                                rng_seed=args.seed + 1)
    result = calib.solve_calibration(observations)
    worst = calib.workspace_prediction_error(true_transform, result.us_from_robot)
    meta = {"method": "svd-absolute-orientation", "n": args.n,
            "noise_sigma_mm": args.noise, "seed": args.seed,
            "workspace_error_mm": worst}
    payload = docio.calibration_payload(observations, result, meta)
    path = _write(docio.make_document("calibration", payload, chash), args.out)
    print(f"rms residual {result.rms_residual:.4f} mm, "
          f"worst workspace error {worst:.4f} mm -> {path}")
    return EXIT_OK


def _cmd_fit_shape(args, cfg, chash) -> int:
    points = np.asarray(json.loads(Path(args.points).read_text()), float)
    if args.model:
        model = docio.shape_model_from_payload(docio.load_document(args.model).payload)
    else:
        model = shapemod.default_shape_model()
    fit = shapemod.fit_to_points(model, points, beta=cfg["shape"]["beta"])
    fitted = shapemod.synthesize(model, fit.coeffs, fit.pose)
    path = _write(docio.make_document("mesh", docio.mesh_payload(fitted), chash), args.out)
    print(json.dumps({"rms_mm": fit.rms, "iterations": fit.iterations,
                      "coefficients": fit.coeffs.b.tolist(), "out": str(path)}))
    return EXIT_OK


def _cmd_register(args, cfg, chash) -> int:
    source = docio.load_mesh_file(args.source)
    target = docio.load_mesh_file(args.target)
    result = regmod.elastic_register(source, target, cfgmod.registration_params(cfg))
    path = _write(docio.make_document("field", docio.field_payload(result), chash), args.out)
    print(f"surface rms {result.surface_rms:.4f} mm, "
          f"volume error {result.volume_error * 100:.2f} %, "
          f"{result.iterations} iterations -> {path}")
    return EXIT_OK


def _cmd_plan(args, cfg, chash) -> int:
    if args.scenario:
        bundle = scenario_from_payload(docio.load_document(args.scenario).payload)
        target, arch, params = bundle.target, bundle.arch, bundle.dose_params
    elif args.target:
        target = docio.load_mesh_file(args.target)
        arch = docio.load_mesh_file(args.arch) if args.arch else None
        params = cfgmod.dose_params(cfg)
    else:
        print("error: provide --scenario or --target", file=sys.stderr)
        return EXIT_USAGE
    plan = plan_seeds(target, arch, params, mode=args.mode,
                      constraints=cfgmod.plan_constraints(cfg), rng_seed=args.seed)
    payload = docio.plan_payload(plan, params, mode=args.mode,
                                 extras={"rng_seed": args.seed,
                                         "objective": "greedy v100 stand-in"})
    path = _write(docio.make_document("plan", payload, chash), args.out)
    print(f"{plan.metrics.seed_count} seeds on {len(plan.trajectories)} needles, "
          f"v100 {plan.metrics.v100:.3f}, d90 {plan.metrics.d90:.1f} Gy -> {path}")
    return EXIT_OK


def _cmd_simulate(args, cfg, chash) -> int:
    plan, _ = docio.plan_from_payload(docio.load_document(args.plan).payload)
    if args.phantom:
        phantom = docio.phantom_from_payload(docio.load_document(args.phantom).payload)
    elif args.scenario:
        phantom = scenario_from_payload(docio.load_document(args.scenario).payload).phantom
    else:
        print("error: provide --phantom or --scenario", file=sys.stderr)
        return EXIT_USAGE
    phantom = cfgmod.apply_phantom_overrides(phantom, cfg, rng_seed=args.seed)
    params = cfgmod.insertion_params(cfg, spin_rate=args.spin)
    trial = execute_plan(plan, phantom, params)
    path = _write(docio.make_document("trial", docio.trial_payload(trial), chash), args.out)
    print(f"mean error {trial.mean_error:.3f} mm, max {trial.max_error:.3f} mm, "
          f"peak displacement {trial.peak_prostate_displacement:.3f} mm -> {path}")
    return EXIT_OK


def _cmd_report(args, cfg, chash) -> int:
    summary: dict = {"config_hash": chash}
    if args.calibration:
        p = docio.load_document(args.calibration).payload
        summary["calibration"] = {"rms_residual_mm": p["rms_residual"],
                                  "n_observations": len(p["observations"]),
                                  **{k: v for k, v in p["solver"].items()
                                     if k != "method"}}
    if args.field:
        p = docio.load_document(args.field).payload
        summary["registration"] = p["diagnostics"]
    if args.plan:
        p = docio.load_document(args.plan).payload
        summary["plan"] = {**p["metrics"], "mode": p["params"].get("mode", ""),
                           "objective": p["params"].get("objective", "")}
    if args.trial:
        p = docio.load_document(args.trial).payload
        summary["trial"] = {"mean_error_mm": p["mean_error"],
                            "max_error_mm": p["max_error"],
                            "peak_prostate_displacement_mm":
                                p["peak_prostate_displacement"],
                            "n_seeds": len(p["per_seed_error"]),
                            "n_events": len(p["events"])}
    if args.format == "machine":
        text = json.dumps(summary, indent=1)
    else:
        lines = [f"prosper report (config {chash})"]
        if "calibration" in summary:
            c = summary["calibration"]
            lines.append(f"  calibration: rms {c['rms_residual_mm']:.4f} mm over "
                         f"{c['n_observations']} insertions"
                         + (f", worst workspace error {c['workspace_error_mm']:.4f} mm"
                            if "workspace_error_mm" in c else ""))
        if "registration" in summary:
            r = summary["registration"]
            lines.append(f"  registration: surface rms {r['surface_rms']:.4f} mm, "
                         f"volume error {r['volume_error'] * 100:.2f} %, "
                         f"{r['iterations']} iterations")
        if "plan" in summary:
            pl = summary["plan"]
            lines.append(f"  plan ({pl['mode']}): {pl['seed_count']} seeds, "
                         f"v100 {pl['v100']:.3f}, d90 {pl['d90']:.1f} Gy "
                         f"[{pl['objective']}]")
        if "trial" in summary:
            t = summary["trial"]
            lines.append(f"  trial: mean seed error {t['mean_error_mm']:.3f} mm, "
                         f"max {t['max_error_mm']:.3f} mm, peak gland displacement "
                         f"{t['peak_prostate_displacement_mm']:.3f} mm")
        text = "\n".join(lines)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _cmd_validate(args, cfg, chash) -> int:
    bad = 0
    for path in args.paths:
        try:
            doc = docio.load_document(path)
            violations = docio.validate(doc)
        except ProsperError as exc:
            violations = [str(exc)]
        except Exception as exc:
            violations = [f"{type(exc).__name__}: {exc}"]
        if violations:
            bad += 1
            print(f"{path}: INVALID")
            for v in violations:
                print(f"  - {v}")
        else:
            print(f"{path}: ok")
    return EXIT_VALIDATION if bad else EXIT_OK


def _cmd_serve(args, cfg, chash) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.bind, port=args.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "scenario": _cmd_scenario,
    "calibrate": _cmd_calibrate,
    "fit-shape": _cmd_fit_shape,
    "register": _cmd_register,
    "plan": _cmd_plan,
    "simulate": _cmd_simulate,
    "report": _cmd_report,
    "serve": _cmd_serve,
    "validate": _cmd_validate,
}


def run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = cfgmod.load_config(args.config)
    except Exception as exc:
        print(f"error loading config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    chash = cfgmod.config_hash(cfg)
    try:
        return _COMMANDS[args.command](args, cfg, chash)
    except (InfeasibleNoTrajectories, TargetOutsideWorkspace) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except UnknownScenario as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ProsperError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
