"""Command-line surface: generate, preprocess, unmix, evaluate, benchmark,
profile, plot.

Config precedence is CLI flags > config file > defaults. Every command writes
a manifest.json capturing the resolved configuration, seed, and tool version;
manifests (which carry timestamps) are the only outputs exempt from the
byte-identical rerun guarantee.

Exit codes: 0 success, 2 configuration/schema error, 3 I/O or format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import metadata, resources
from pathlib import Path

import numpy as np

from . import evalbench, plots, preprocess
from .core import validate_dataset
from .formats import (
    FormatError,
    load_abundances_csv,
    load_dataset,
    load_endmembers_csv,
    load_ground_truth,
    save_abundances_csv,
    save_dataset,
    save_endmembers_csv,
    save_ground_truth,
)
from .nnet import NumericalError
from .synth import DatasetSpec, generate_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class ConfigError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("ramanmix")
    except metadata.PackageNotFoundError:
        return "0.1.0"


def load_schema(name: str) -> dict:
    ref = resources.files("ramanmix").joinpath(f"schemas/{name}")
    return json.loads(ref.read_text(encoding="utf-8"))


def _validator(schema: dict):
    import jsonschema
    from referencing import Registry, Resource

    registry = Registry()
    for fname in ("synthspec.schema.json", "method.schema.json",
                  "pipeline.schema.json", "benchgrid.schema.json"):
        doc = load_schema(fname)
        registry = registry.with_resource(doc["$id"], Resource.from_contents(doc))
    return jsonschema.Draft202012Validator(schema, registry=registry)


def validate_config(instance, schema_name: str) -> None:
    import jsonschema

    validator = _validator(load_schema(schema_name))
    errors = sorted(validator.iter_errors(instance), key=lambda e: e.json_path)
    if errors:
        lines = [f"{e.json_path}: {e.message}" for e in errors[:10]]
        raise ConfigError(
            f"config does not match {schema_name}:\n  " + "\n  ".join(lines))


def _read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def write_manifest(out_dir: Path, command: str, config: dict,
                   written: list, wall_time: float) -> None:
    # one manifest per command so chained runs in a shared directory do not
    # clobber each other's provenance
    manifest = {
        "tool": "ramanmix",
        "version": _version(),
        "command": command,
        "config": config,
        "written": [str(p) for p in written],
        "wall_time_s": wall_time,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with open(out_dir / f"{command}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args) -> None:
    spec_doc = _read_json(args.spec)
    validate_config(spec_doc, "synthspec.schema.json")
    if args.seed is not None:
        spec_doc["seed"] = args.seed
    try:
        spec = DatasetSpec.from_dict(spec_doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(args)
    start = time.perf_counter()
    data, gt = generate_dataset(spec)
    violations = validate_dataset(data)
    if violations:
        raise NumericalError("generated dataset failed validation: "
                             + "; ".join(violations))
    ext = args.format
    data_path = out / f"data.{ext}"
    gt_path = out / "data.gt.bin"
    save_dataset(data, data_path, format=ext)
    save_ground_truth(gt, gt_path)
    write_manifest(out, "generate", spec.to_dict(), [data_path, gt_path],
                   time.perf_counter() - start)
    print(f"wrote {data_path} ({data.n_spectra} spectra x {data.n_bands} bands) "
          f"and {gt_path}")


def cmd_preprocess(args) -> None:
    data = load_dataset(args.data)
    if args.preset:
        pipeline_doc = {"preset": args.preset}
    elif args.pipeline:
        pipeline_doc = _read_json(args.pipeline)
    else:
        raise ConfigError("pass --preset or --pipeline")
    validate_config(pipeline_doc, "pipeline.schema.json")
    steps = (preprocess.preset_steps(pipeline_doc["preset"])
             if "preset" in pipeline_doc else pipeline_doc["steps"])
    out = _out_dir(args)
    start = time.perf_counter()
    try:
        processed = preprocess.run_pipeline(data, steps)
    except ValueError as exc:
        raise NumericalError(str(exc)) from exc
    ext = Path(args.data).suffix.lstrip(".") or "bin"
    out_path = out / f"processed.{ext}"
    save_dataset(processed, out_path, format=ext)
    write_manifest(out, "preprocess", {"data": str(args.data), "steps": steps},
                   [out_path], time.perf_counter() - start)
    print(f"wrote {out_path}")


def _resolve_method_args(args) -> dict:
    if args.config:
        doc = _read_json(args.config)
        validate_config(doc, "method.schema.json")
        cfg = doc
    elif args.method:
        cfg = args.method
    else:
        raise ConfigError("pass --method or --config")
    try:
        cfg = evalbench.resolve_method(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.latent is not None:
        cfg["latent"] = args.latent
    if args.epochs is not None and cfg.get("kind") == "ae":
        cfg["epochs"] = args.epochs
    return cfg


def cmd_unmix(args) -> None:
    data = load_dataset(args.data)
    cfg = _resolve_method_args(args)
    out = _out_dir(args)
    start = time.perf_counter()
    info: dict = {}
    M, ab, seconds = evalbench.run_method(cfg, data, args.n, args.seed,
                                          latent=cfg.get("latent"), info=info)
    end_path = out / "endmembers.csv"
    ab_path = out / "abundances.csv"
    if hasattr(M, "signatures"):
        save_endmembers_csv(M, end_path)
    asc = getattr(ab, "asc_enforced", False)
    save_abundances_csv(ab, ab_path, asc_enforced=asc)
    config = dict(cfg)
    config.update(n=args.n, seed=args.seed, data=str(args.data),
                  method_info=info, method_seconds=seconds)
    if data.shape is not None:
        config["dataset_shape"] = list(data.shape)
    write_manifest(out, "unmix", config, [end_path, ab_path],
                   time.perf_counter() - start)
    print(f"unmixed {data.n_spectra} spectra with {cfg['name']} "
          f"in {seconds:.2f}s; wrote {end_path} and {ab_path}")


def cmd_evaluate(args) -> None:
    gt = load_ground_truth(args.gt)
    result_dir = Path(args.results)
    M = load_endmembers_csv(result_dir / "endmembers.csv", clip_negative=True)
    ab_path = result_dir / "abundances.csv"
    ab = load_abundances_csv(ab_path) if ab_path.exists() else None
    start = time.perf_counter()
    report = evalbench.evaluate((M, ab), gt, literal_norm=args.literal_norm)
    out = _out_dir(args) if args.out else result_dir
    metrics_path = out / "metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    write_manifest(out, "evaluate",
                   {"results": str(result_dir), "gt": str(args.gt),
                    "literal_norm": args.literal_norm},
                   [metrics_path], time.perf_counter() - start)
    print(json.dumps({k: v for k, v in report.to_dict().items()
                      if k != "detail"}, indent=2))


def _grid_from_doc(doc: dict) -> evalbench.BenchmarkGrid:
    variants = []
    for v in doc["variants"]:
        try:
            variants.append((v["name"], DatasetSpec.from_dict(v["spec"])))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"variant {v.get('name')!r}: {exc}") from exc
    return evalbench.BenchmarkGrid(
        variants=variants,
        methods=doc["methods"],
        datasets_per_variant=doc.get("datasets_per_variant", 5),
        seeds_per_dataset=doc.get("seeds_per_dataset", 5),
        base_seed=doc.get("base_seed", 0),
    )


def cmd_benchmark(args) -> None:
    doc = _read_json(args.grid)
    validate_config(doc, "benchgrid.schema.json")
    grid = _grid_from_doc(doc)
    out = _out_dir(args)
    start = time.perf_counter()

    def progress(task, row):
        status = f"sad={row.get('sad', float('nan')):.3f}" if "sad" in row \
            else f"ERROR: {row.get('error', '?')[:60]}"
        print(f"  [{row['variant']} / {row['method']} / ds{row['dataset_seed']} "
              f"/ seed{row['model_seed']}] {status}", flush=True)

    result = evalbench.run_benchmark(grid, out_dir=out, jobs=args.jobs,
                                     progress=progress if args.verbose else None)
    write_manifest(out, "benchmark", doc,
                   [out / "bench_results.csv", out / "bench_results.json"],
                   time.perf_counter() - start)
    n_err = sum(1 for r in result["replicates"] if "error" in r)
    print(f"wrote {out / 'bench_results.csv'} "
          f"({len(result['replicates'])} replicates, {n_err} failed)")


def cmd_profile(args) -> None:
    sizes = sorted(int(s) for s in args.sizes.split(","))
    methods = [m.strip() for m in args.methods.split(",")]
    out = _out_dir(args)
    start = time.perf_counter()
    rows = evalbench.profile_scaling(
        sizes, methods, n_endmembers=args.n, bands=args.bands, runs=args.runs,
        base_seed=args.seed or 0, cell_timeout=args.timeout,
        out_path=out / "scaling.csv",
        progress=(lambda row: print(f"  {row['method']} N={row['N']} "
                                    f"run={row['run']}: {row['seconds']:.2f}s",
                                    flush=True)) if args.verbose else None)
    write_manifest(out, "profile",
                   {"sizes": sizes, "methods": methods, "runs": args.runs,
                    "bands": args.bands, "n": args.n},
                   [out / "scaling.csv"], time.perf_counter() - start)
    print(f"wrote {out / 'scaling.csv'} ({len(rows)} rows)")


def cmd_plot(args) -> None:
    target = Path(args.results)
    out = _out_dir(args)
    written = []
    start = time.perf_counter()
    if target.is_dir():
        M = load_endmembers_csv(target / "endmembers.csv", clip_negative=True)
        written += plots.plot_endmembers(M.signatures, M.axis.values, out)
        shape = None
        if args.shape:
            shape = tuple(int(s) for s in args.shape.split(","))
        else:
            manifest_path = target / "unmix.manifest.json"
            if manifest_path.exists():
                shape = _read_json(manifest_path).get("config", {}).get("dataset_shape")
        ab_path = target / "abundances.csv"
        if ab_path.exists() and shape:
            values = load_abundances_csv(ab_path)
            written += plots.plot_abundance_maps(values, shape, out)
            if len(shape) == 2:
                written.append(plots.plot_unmix_overview(
                    M.signatures, M.axis.values, values, shape,
                    out / "overview.svg"))
        elif ab_path.exists():
            print("no scene shape available; skipping abundance heatmaps",
                  file=sys.stderr)
    elif target.name == "scaling.csv":
        import csv as csv_mod
        with open(target, newline="") as fh:
            rows = list(csv_mod.DictReader(fh))
        written.append(plots.plot_scaling(rows, out / "scaling.svg"))
    elif target.name == "bench_results.csv":
        import csv as csv_mod
        with open(target, newline="") as fh:
            rows = [{**r, "mean": float(r["mean"]), "std": float(r["std"])}
                    for r in csv_mod.DictReader(fh)]
        written.append(plots.plot_benchmark_summary(rows, out / "benchmark.svg"))
    else:
        raise ConfigError(
            f"cannot plot {target}: expected a result directory, scaling.csv "
            "or bench_results.csv")
    write_manifest(out, "plot", {"results": str(target)}, written,
                   time.perf_counter() - start)
    print(f"wrote {len(written)} figure(s) to {out}")


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ramanmix",
        description="Hyperspectral unmixing toolkit for Raman-like spectra.")
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seed_default=None):
        p.add_argument("--seed", type=int, default=seed_default,
                       help="global random seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel benchmark cells")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("spec", help="dataset spec JSON (synthspec.schema.json)")
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="run a preprocessing pipeline")
    p.add_argument("data", help="dataset file (csv or bin)")
    p.add_argument("--preset", choices=sorted(preprocess.PRESETS))
    p.add_argument("--pipeline", help="pipeline JSON (pipeline.schema.json)")
    add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("unmix", help="run one unmixing method")
    p.add_argument("data", help="dataset file (csv or bin)")
    p.add_argument("--n", type=int, required=True, help="endmembers to extract")
    p.add_argument("--method", help="method shorthand, e.g. vca+fcls, dense-ae")
    p.add_argument("--config", help="method config JSON (method.schema.json)")
    p.add_argument("--latent", type=int, help="latent dimension override (AE)")
    p.add_argument("--epochs", type=int, help="training epochs override (AE)")
    add_common(p, seed_default=0)
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("evaluate", help="score a result directory against ground truth")
    p.add_argument("results", help="directory with endmembers.csv/abundances.csv")
    p.add_argument("--gt", required=True, help="ground truth .gt.bin file")
    p.add_argument("--literal-norm", action="store_true",
                   help="use the unsquared abundance error variant")
    add_common(p)
    p.set_defaults(func=cmd_evaluate, out=None)

    p = sub.add_parser("benchmark", help="run a benchmark grid")
    p.add_argument("grid", help="grid JSON (benchgrid.schema.json)")
    add_common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("profile", help="wall-time scaling study")
    p.add_argument("--sizes", required=True, help="comma list, e.g. 2500,10000")
    p.add_argument("--methods", required=True, help="comma list of methods")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--bands", type=int, default=1000)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--timeout", type=float, default=None,
                   help="skip a method at larger sizes once one run exceeds this")
    add_common(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("plot", help="render SVG figures from results")
    p.add_argument("results", help="result dir, scaling.csv, or bench_results.csv")
    p.add_argument("--shape", help="scene shape override, e.g. 100,100")
    add_common(p)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
