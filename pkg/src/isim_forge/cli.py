"""``isim-forge`` command line: fit | generate | validate | fidelity | inspect.

Exit codes: 0 success, 1 validation failure, 2 usage error, 3 IO/parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
from pathlib import Path

from . import __version__, _canon
from .bundle import BundleError, find_bundles, generate_bundles, load_layouts, verify_bundle
from .dataset import IngestError, load_json_labels, load_voc_xml
from .fidelity import (
    FACTORS,
    FidelityError,
    ablate,
    evaluate_fidelity,
    format_ablation_table,
    format_report,
    run_ablation_grid,
)
from .isim import gray_table
from .sampler import SamplerConfig, SamplerError, sample_batch
from .scdkg import FitConfig, Scdkg, ScdkgError, fit_scdkg, load_scdkg, save_scdkg

log = logging.getLogger("isim_forge")

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
JOBS_ENV = "ISIM_FORGE_JOBS"
HEAT_RAMP = " .:-=+*#%@"


class UsageError(Exception):
    pass


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(_canon.dumps(payload, indent=1))
    else:
        print(text)


def _run_log(seed: int | None, config: dict, scdkg_digest: str) -> None:
    log.info(
        "isim-forge %s seed=%s config=%s scdkg=%s",
        __version__,
        seed,
        _canon.digest(config)[:16],
        scdkg_digest[:16],
    )


def _load_graph(path: str) -> Scdkg:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"knowledge graph not found: {p}")
    return load_scdkg(p)


def _sampler_cfg(args) -> SamplerConfig:
    cfg = SamplerConfig(max_objects=args.max_objects, max_iou=args.max_iou, max_retries=args.max_retries)
    try:
        cfg.validate()
    except SamplerError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(63)
        log.info("no --seed given; using %d", args.seed)
    if args.seed < 0:
        raise UsageError("--seed must be nonnegative")
    return args.seed


# -- subcommands ----------------------------------------------------------------------


def cmd_fit(args) -> int:
    src = Path(args.annotations)
    if not src.exists():
        raise FileNotFoundError(f"annotations not found: {src}")
    fmt = args.format
    if fmt == "auto":
        if src.is_file() or not any(src.rglob("*.xml")):
            fmt = "json"
        else:
            fmt = "voc"
    ds = load_voc_xml(src, jobs=args.jobs) if fmt == "voc" else load_json_labels(src)
    cfg = FitConfig(
        bins_1d=args.bins,
        bins_2d=tuple(args.bins_2d),
        min_samples=args.min_samples,
        alpha=args.alpha,
        beta=args.beta,
    )
    _run_log(None, cfg.to_dict(), ds.digest())
    g = fit_scdkg(ds, cfg)
    save_scdkg(g, args.out)
    payload = {
        "scdkg": str(args.out),
        "digest": g.digest,
        "classes": g.M,
        "images": len(ds.images),
        "annotations": ds.n_annotations,
        "errors": list(ds.errors),
        "warnings": len(ds.warnings),
    }
    text = (
        f"fitted {g.M} classes from {ds.n_annotations} annotations in {len(ds.images)} images"
        f" -> {args.out}\ndigest {g.digest}"
    )
    if ds.errors:
        text += f"\n{len(ds.errors)} file(s) skipped:\n  " + "\n  ".join(ds.errors)
    _emit(args, payload, text)
    return EXIT_OK


def cmd_generate(args) -> int:
    g = _load_graph(args.scdkg)
    cfg = _sampler_cfg(args)
    seed = _seed(args)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if min(args.image_size) < 32:
        raise UsageError("--image-size sides must be >= 32")
    _run_log(seed, {"sampler": cfg.to_dict(), "image_size": args.image_size, "count": args.count}, g.digest)
    manifest = generate_bundles(
        g,
        args.out_dir,
        count=args.count,
        base_seed=seed,
        image_size=tuple(args.image_size),
        cfg=cfg,
        jobs=args.jobs,
        overwrite=args.overwrite,
        resume=args.resume,
    )
    n = len(manifest["bundles"])
    _emit(
        args,
        {"out_dir": str(args.out_dir), "bundles": n, "seed": seed, "scdkg_digest": g.digest},
        f"{n} bundles in {args.out_dir} (seed {seed})",
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    root = Path(args.bundle_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"bundle directory not found: {root}")
    bundles = find_bundles(root)
    if not bundles:
        raise BundleError(f"no bundles found in {root}")
    results = []
    for b in bundles:
        try:
            results.append(verify_bundle(b, floor=args.floor).to_dict())
        except BundleError as exc:
            results.append(
                {
                    "bundle_id": b.bundle_id,
                    "acc_c": 0.0,
                    "acc_n": 0.0,
                    "sodi_consistent": False,
                    "passed": False,
                    "violations": [f"unreadable: {exc}"],
                    "notes": [],
                }
            )
    failed = [r for r in results if not r["passed"]]
    lines = []
    for r in results:
        status = "ok  " if r["passed"] else "FAIL"
        lines.append(f"{status} {r['bundle_id']}  acc_c={r['acc_c']:.3f} acc_n={r['acc_n']:.3f}")
        lines.extend(f"     - {v}" for v in r["violations"])
    lines.append(f"{len(results) - len(failed)}/{len(results)} bundles passed")
    _emit(args, {"bundles": results, "failed": len(failed)}, "\n".join(lines))
    return EXIT_INVALID if failed else EXIT_OK


def _factors(spec: str | None) -> set[str]:
    if not spec:
        return set()
    out = {f.strip() for f in spec.split(",") if f.strip()}
    bad = out - set(FACTORS)
    if bad:
        raise UsageError(f"unknown factor(s) {sorted(bad)}; choose from {', '.join(FACTORS)}")
    return out


def cmd_fidelity(args) -> int:
    g = _load_graph(args.scdkg)
    image_size = tuple(args.image_size)
    if args.grid:
        seed = _seed(args)
        _run_log(seed, {"grid": True, "sample": args.sample}, g.digest)
        rows = run_ablation_grid(g, n_layouts=args.sample, base_seed=seed, image_size=image_size, jobs=args.jobs)
        payload = {
            "rows": [
                {"row": r.row, "enabled": sorted(r.enabled), "report": r.report.to_dict()} for r in rows
            ]
        }
        _emit(args, payload, format_ablation_table(rows))
        return EXIT_OK
    if args.bundles:
        layouts = load_layouts(args.bundles)
    else:
        seed = _seed(args)
        variant = ablate(g, _factors(args.disable))
        cfg = _sampler_cfg(args)
        _run_log(seed, {"sampler": cfg.to_dict(), "disable": sorted(variant.ablated)}, g.digest)
        layouts = sample_batch(variant, image_size, seed, args.sample, cfg, jobs=args.jobs)
    report = evaluate_fidelity(g, layouts)
    _emit(args, report.to_dict(), format_report(report))
    return EXIT_OK


def _heat_map(g: Scdkg) -> str:
    names = [g.class_name(c) for c in range(1, g.M + 1)]
    width = max(len(n) for n in names)
    top = float(g.p_id.max()) or 1.0
    lines = []
    for i, name in enumerate(names):
        cells = "".join(HEAT_RAMP[min(len(HEAT_RAMP) - 1, int(v / top * (len(HEAT_RAMP) - 1) + 0.5))] for v in g.p_id[i])
        lines.append(f"{name:>{width}} |{cells}|")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    g = _load_graph(args.scdkg)
    grays = gray_table(g.M)
    payload = {
        "digest": g.digest,
        "classes": [
            {"class_id": c, "class_name": g.class_name(c), "gray_value": grays[c], "p_ic": g.p_ic.prob(c)}
            for c in range(1, g.M + 1)
        ],
        "p_in_support": list(g.p_in.support),
        "p_id": g.p_id.tolist(),
        "ablated": list(g.ablated),
    }
    lines = [f"knowledge graph {g.digest[:16]}  M={g.M}", "", " id  gray   p_ic    class"]
    for c in range(1, g.M + 1):
        lines.append(f"{c:>3}  {grays[c]:>4}  {g.p_ic.prob(c):.4f}  {g.class_name(c)}")
    lines += ["", "p_id (row = previous class, column = next class):", _heat_map(g)]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_sampler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-objects", type=int, default=100)
    p.add_argument("--max-iou", type=float, default=0.3, help="same-class overlap limit; 0 disables")
    p.add_argument("--max-retries", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isim-forge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    common.add_argument("--jobs", type=int, default=_default_jobs(), help=f"worker processes (env {JOBS_ENV})")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a knowledge graph from annotations")
    p.add_argument("annotations", help="VOC XML directory, label manifest, or bundle directory")
    p.add_argument("out", help="output knowledge-graph JSON")
    p.add_argument("--format", choices=["auto", "voc", "json"], default="auto")
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--bins-2d", type=int, nargs=2, default=[32, 32], metavar=("BX", "BY"))
    p.add_argument("--min-samples", type=int, default=20)
    p.add_argument("--alpha", type=float, default=1e-6)
    p.add_argument("--beta", type=float, default=1.0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("generate", parents=[common], help="sample layouts and export condition bundles")
    p.add_argument("scdkg")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--image-size", type=int, nargs=2, default=[800, 800], metavar=("W", "H"))
    p.add_argument("--overwrite", action="store_true")
    p.add_argument("--resume", action="store_true")
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", parents=[common], help="verify every bundle in a directory")
    p.add_argument("bundle_dir")
    p.add_argument("--floor", type=float, default=0.5)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fidelity", parents=[common], help="distribution distances against a knowledge graph")
    p.add_argument("scdkg")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--bundles", help="evaluate layouts read from a bundle directory")
    src.add_argument("--grid", action="store_true", help="run the nine-row ablation grid")
    p.add_argument("--sample", type=int, default=2000, help="layouts to sample when not reading bundles")
    p.add_argument("--disable", help=f"comma-separated factors to ablate ({', '.join(FACTORS)})")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--image-size", type=int, nargs=2, default=[800, 800], metavar=("W", "H"))
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_fidelity, max_iou=0.0)

    p = sub.add_parser("inspect", parents=[common], help="print class table, gray table and p_id heat map")
    p.add_argument("scdkg")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (UsageError, SamplerError, FidelityError) as exc:
        print(f"isim-forge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, IngestError, ScdkgError, BundleError, json.JSONDecodeError, ValueError) as exc:
        print(f"isim-forge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
