"""Command-line front end.

Subcommands: quantize, characterize, eval, inject, dse, pareto. Every
command that takes --out writes a `run.json` manifest with the resolved
parameters and sha256 hashes of all input and output files, and no
timestamps or thread counts, so a rerun with the same seed produces
byte-identical artifacts.

Seed convention: --seed 0 (the default) draws a fresh 64-bit seed from OS
entropy; the drawn value is printed and recorded in run.json. Pass any
nonzero seed for reproducible runs.

Exit codes: 0 success, 2 usage error, 3 validation/format error, 4 I/O error.
Errors print a single `error: ...` line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import secrets
import sys
from pathlib import Path

from . import __version__
from .dse import (
    DEFAULT_OBJECTIVES,
    CSV_HEADER,
    enumerate_configs,
    parse_objectives,
    pareto_frontier,
    point_row,
    read_points_csv,
    run_dse,
    sample_configs,
    trend_violations,
    write_points_csv,
)
from .engine import ApproxConfig, Evaluator
from .errors import UsageError, ValidationError
from .faultsim import (
    CampaignPlan,
    calibrate_repetitions,
    run_campaign,
    statistical_sample_size,
    write_campaign_csv,
    write_campaign_json,
)
from .model import _write_canonical_json, fault_site_count, load_dataset, load_model, save_dataset, save_model
from .multipliers import characterize, resolve_multiplier
from .quantize import (
    load_float_dataset,
    load_float_model,
    quantize_dataset,
    quantize_model,
)


def _resolve_seed(seed: int) -> int:
    return seed if seed else secrets.randbits(64)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


def _referenced_files(path: Path) -> list:
    """The file plus everything its manifest references (blob 'file' fields, LUT sidecars)."""
    files = [path]
    if path.suffix == ".json":
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            return files

        def walk(node):
            if isinstance(node, dict):
                for key, value in node.items():
                    if key == "file" and isinstance(value, str):
                        files.append(path.parent / value)
                    else:
                        walk(value)
            elif isinstance(node, list):
                for item in node:
                    walk(item)

        walk(doc)
    elif path.suffix == ".mul8s" and path.with_suffix(".json").is_file():
        files.append(path.with_suffix(".json"))
    return files


def _write_run_manifest(out_dir: Path, command: str, inputs, params: dict, outputs) -> Path:
    doc = {
        "format": "axdse-run-1",
        "tool": "axdse",
        "version": __version__,
        "command": command,
        "params": params,
        "inputs": {str(p): _sha256(Path(p)) for src in inputs for p in _referenced_files(Path(src))},
        "outputs": {Path(p).name: _sha256(Path(p)) for p in outputs},
    }
    path = out_dir / "run.json"
    _write_canonical_json(doc, path)
    return path


def _print_table(header, rows) -> None:
    table = [list(header)] + [list(r) for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    for row in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())


def _build_config(model, mult_specs, mask):
    specs = mult_specs or ["exact"]
    if len(specs) > 1:
        raise UsageError("this command takes a single --mult")
    mult = resolve_multiplier(specs[0])
    if mask is not None:
        return ApproxConfig.from_mask(model, mask, mult)
    if mult.kind == "Exact":
        return ApproxConfig.all_exact(model)
    return ApproxConfig.uniform(model, mult)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_quantize(args) -> None:
    float_model = load_float_model(args.model)
    calib = load_float_dataset(args.data)
    images = calib.images if args.calib <= 0 else calib.images[: args.calib]
    if len(images) == 0:
        raise UsageError("calibration set is empty")
    model = quantize_model(float_model, images, name=args.name)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    model_path = save_model(model, out_dir / "model.json")
    outputs += _referenced_files(model_path)
    data_path = save_dataset(quantize_dataset(calib, model.input_qparams), out_dir / "data.json")
    outputs += _referenced_files(data_path)
    inputs = [args.model, args.data]
    if args.test:
        test = load_float_dataset(args.test)
        test_path = save_dataset(quantize_dataset(test, model.input_qparams), out_dir / "test.json")
        outputs += _referenced_files(test_path)
        inputs.append(args.test)
    _write_run_manifest(
        out_dir,
        "quantize",
        inputs,
        {"calib": args.calib, "name": model.name},
        outputs,
    )
    print(f"model {model.name}")
    print(f"layers {len(model.layers)}")
    print(f"calibration images {len(images)}")
    print(f"input scale {model.input_qparams.scale!r}")
    print(f"input zero_point {model.input_qparams.zero_point}")
    print(f"wrote {model_path}")


def cmd_characterize(args) -> None:
    specs = args.mult or ["exact"]
    profiles = [characterize(resolve_multiplier(spec)) for spec in specs]
    rows = []
    for p in profiles:
        rows.append(
            [
                p.id,
                f"{p.mae_pct:.4f}",
                f"{p.wce_pct:.4f}",
                f"{p.mre_pct:.4f}",
                f"{p.ep_pct:.4f}",
                "-" if p.power_mw is None else f"{p.power_mw:.4f}",
                "-" if p.area_um2 is None else f"{p.area_um2:.4f}",
            ]
        )
    _print_table(["multiplier", "mae_pct", "wce_pct", "mre_pct", "ep_pct", "power_mw", "area_um2"], rows)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs = []
        for p in profiles:
            path = out_dir / f"profile_{p.id}.json"
            _write_canonical_json({"format": "axdse-profile-1", **p.to_dict()}, path)
            outputs.append(path)
        lut_inputs = [s for s in specs if s.endswith(".mul8s")]
        _write_run_manifest(out_dir, "characterize", lut_inputs, {"mult": specs}, outputs)


def cmd_eval(args) -> None:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    cfg = _build_config(model, args.mult, args.mask)
    evaluator = Evaluator(model, cfg)
    correct = evaluator.correct_count(dataset)
    accuracy = correct / len(dataset)
    print(f"model {model.name}")
    print(f"mask {cfg.mask(model)}")
    print(f"multipliers {','.join(cfg.multiplier_ids())}")
    print(f"images {len(dataset)}")
    print(f"correct {correct}")
    print(f"accuracy {accuracy:.6f}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        report = out_dir / "eval.json"
        _write_canonical_json(
            {
                "format": "axdse-eval-1",
                "model": model.name,
                "mask": cfg.mask(model),
                "multipliers": list(cfg.multiplier_ids()),
                "images": len(dataset),
                "correct": correct,
                "accuracy": accuracy,
            },
            report,
        )
        _write_run_manifest(
            out_dir,
            "eval",
            [args.model, args.data] + [s for s in (args.mult or []) if s.endswith(".mul8s")],
            {"mult": args.mult or ["exact"], "mask": args.mask},
            [report],
        )


def cmd_inject(args) -> None:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    cfg = _build_config(model, args.mult, args.mask)
    population = fault_site_count(model)
    reps = args.reps if args.reps else statistical_sample_size(population, args.confidence, args.margin)
    seed = _resolve_seed(args.seed)
    plan = CampaignPlan(reps, seed, args.confidence, args.margin)
    result = run_campaign(model, dataset, cfg, plan, threads=args.threads or None)
    print(f"site population {population}")
    print(f"repetitions {plan.repetitions}")
    print(f"seed {seed}")
    print(f"baseline accuracy {result.baseline_accuracy:.6f}")
    print(f"mean faulty accuracy {result.mean_faulty_accuracy:.6f}")
    print(f"std faulty accuracy {result.std_faulty_accuracy:.6f}")
    print(f"vulnerability pct {result.vulnerability_pct:.4f}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = write_campaign_json(result, out_dir / "campaign.json")
        csv_path = write_campaign_csv(result, out_dir / "campaign.csv")
        _write_run_manifest(
            out_dir,
            "inject",
            [args.model, args.data] + [s for s in (args.mult or []) if s.endswith(".mul8s")],
            {
                "mult": args.mult or ["exact"],
                "mask": args.mask,
                "reps": plan.repetitions,
                "seed": seed,
                "confidence": plan.confidence,
                "margin": plan.margin,
            },
            [json_path, csv_path],
        )


def cmd_dse(args) -> None:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    if not args.mult:
        raise UsageError("dse needs at least one --mult")
    multipliers = [resolve_multiplier(spec) for spec in args.mult]
    objectives = parse_objectives(args.objectives) if args.objectives else DEFAULT_OBJECTIVES
    seed = _resolve_seed(args.seed)
    population = fault_site_count(model)
    statistical_reps = statistical_sample_size(population, args.confidence, args.margin)
    if args.reps:
        reps = args.reps
    elif args.calibrate:
        reference = CampaignPlan(statistical_reps, seed, args.confidence, args.margin)
        reps = calibrate_repetitions(
            model, dataset, ApproxConfig.all_exact(model), reference,
            tolerance=args.tolerance, threads=args.threads or None,
        )
    else:
        reps = statistical_reps
    plan = CampaignPlan(reps, seed, args.confidence, args.margin)
    if args.sample:
        configs = sample_configs(model, multipliers, args.sample, seed)
    else:
        configs = enumerate_configs(model, multipliers)
    points = run_dse(model, dataset, multipliers, plan, threads=args.threads or None, configs=configs)
    frontier = pareto_frontier(points, objectives)
    violations = trend_violations(points)
    print(f"site population {population}")
    print(f"repetitions {plan.repetitions}")
    print(f"seed {seed}")
    print(f"points {len(points)}")
    print(f"frontier {len(frontier)}")
    print(f"trend violations {len(violations)}")
    _print_table(CSV_HEADER, [point_row(p) for p in points])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    points_path = write_points_csv(points, out_dir / "points.csv")
    pareto_path = write_points_csv(frontier, out_dir / "pareto.csv")
    _write_run_manifest(
        out_dir,
        "dse",
        [args.model, args.data] + [s for s in args.mult if s.endswith(".mul8s")],
        {
            "mult": args.mult,
            "reps": plan.repetitions,
            "seed": seed,
            "confidence": plan.confidence,
            "margin": plan.margin,
            "objectives": [f"{f}:{d}" for f, d in objectives],
            "sample": args.sample,
            "calibrated": bool(args.calibrate and not args.reps),
        },
        [points_path, pareto_path],
    )


def cmd_pareto(args) -> None:
    points = read_points_csv(args.points)
    objectives = parse_objectives(args.objectives) if args.objectives else DEFAULT_OBJECTIVES
    frontier = pareto_frontier(points, objectives)
    _print_table(CSV_HEADER, [point_row(p) for p in frontier])
    if args.out:
        out = Path(args.out)
        if out.suffix != ".csv":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "pareto.csv"
        write_points_csv(frontier, out)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="axdse",
        description="Accuracy / fault-resiliency / hardware-cost exploration "
        "of 8-bit networks on approximate multipliers.",
    )
    parser.add_argument("--version", action="version", version=f"axdse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True, data=True):
        if model:
            p.add_argument("--model", required=True, help="model manifest (model.json)")
        if data:
            p.add_argument("--data", required=True, help="dataset manifest (data.json)")

    def campaign_flags(p):
        p.add_argument("--reps", type=int, default=0, help="repetitions (default: statistical sample size)")
        p.add_argument("--seed", type=int, default=0, help="master seed (0 = draw from entropy and record)")
        p.add_argument("--confidence", type=float, default=0.95)
        p.add_argument("--margin", type=float, default=0.01)
        p.add_argument("--threads", type=int, default=0, help="worker threads (0 = all cores); never affects results")

    p = sub.add_parser("quantize", help="quantize a float model + dataset to the 8-bit format")
    common(p)
    p.add_argument("--test", help="additional float dataset to quantize with the model's input qparams")
    p.add_argument("--calib", type=int, default=0, help="use only the first N calibration images (0 = all)")
    p.add_argument("--name", help="name for the quantized model (default: source name)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("characterize", help="exhaustive error metrics of multipliers")
    p.add_argument("--mult", action="append", help="builtin name or .mul8s path (repeatable)")
    p.add_argument("--out", help="directory for profile JSON files")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("eval", help="fault-free accuracy of a configuration")
    common(p)
    p.add_argument("--mult", action="append", help="multiplier for approximated layers (default exact)")
    p.add_argument("--mask", help="layer mask, e.g. 1-1--111 ('1' approx, '0' exact, '-' non-computational)")
    p.add_argument("--out", help="optional report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inject", help="statistical fault-injection campaign")
    common(p)
    p.add_argument("--mult", action="append", help="multiplier for approximated layers (default exact)")
    p.add_argument("--mask", help="layer mask")
    campaign_flags(p)
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("dse", help="enumerate configurations, evaluate, extract the Pareto frontier")
    common(p)
    p.add_argument("--mult", action="append", help="approximate multiplier (repeatable)")
    campaign_flags(p)
    p.add_argument("--calibrate", action="store_true", help="calibrate repetitions against the statistical bound")
    p.add_argument("--tolerance", type=float, default=0.1, help="calibration tolerance in percentage points")
    p.add_argument("--sample", type=int, default=0, help="sample N random configs instead of enumerating")
    p.add_argument("--objectives", help="e.g. area_proxy:min,fi_drop_pct:min")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_dse)

    p = sub.add_parser("pareto", help="re-extract a frontier from an existing points.csv")
    p.add_argument("--points", required=True, help="points.csv from a dse run")
    p.add_argument("--objectives", help="e.g. area_proxy:min,fi_drop_pct:min")
    p.add_argument("--out", help="output csv path or directory")
    p.set_defaults(func=cmd_pareto)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
