"""Command-line entry points: batch evaluation, robustness sweeps, feature
clustering, the annotation HTTP service, and synthetic fixture generation."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .evaluation import TaskManifest, run_cluster, run_eval, run_robustness

AXIS_ALIASES = {"h": "horizontal", "v": "vertical",
                "horizontal": "horizontal", "vertical": "vertical"}


def _parse_models(arg):
    return [m.strip() for m in arg.split(",") if m.strip()] if arg else None


def _cmd_eval(args) -> int:
    manifest = TaskManifest.load(args.manifest)
    if args.export_heatmaps:
        manifest.export_heatmaps = True
    run = run_eval(manifest, models=_parse_models(args.models), jobs=args.jobs)
    print(f"wrote {run.report_csv}")
    if run.failed:
        print(f"{run.failed} cell(s) failed; see {run.results_csv}", file=sys.stderr)
        return 1
    return 0


def _cmd_robustness(args) -> int:
    manifest = TaskManifest.load(args.manifest)
    axes = []
    for token in args.axes.split(","):
        token = token.strip().lower()
        if not token:
            continue
        if token not in AXIS_ALIASES:
            print(f"unknown axis {token!r}; use h,v", file=sys.stderr)
            return 2
        axes.append(AXIS_ALIASES[token])
    csv_path = run_robustness(manifest, axes, models=_parse_models(args.models), jobs=args.jobs)
    print(f"wrote {csv_path}")
    cells = (csv_path.parent / "robustness_cells.csv").read_text()
    failed = sum(1 for line in cells.splitlines()[1:] if ",failed:" in line)
    if failed:
        print(f"{failed} cell(s) failed", file=sys.stderr)
        return 1
    return 0


def _cmd_cluster(args) -> int:
    manifest = TaskManifest.load(args.manifest)
    meta = run_cluster(
        manifest, k=args.k, seed=args.seed,
        models=_parse_models(args.models), normalize=args.normalize,
    )
    print(f"wrote {meta}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    host, _, port = args.listen.rpartition(":")
    config = ServiceConfig(
        image_root=Path(args.image_root),
        provider_root=Path(args.provider_root) if args.provider_root else None,
        feature_endpoint=args.feature_endpoint,
        labels_root=Path(args.labels_root) if args.labels_root else None,
        predictor_endpoint=args.predictor_endpoint,
        cors_origins=args.cors_origin or ["*"],
    )
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port), log_level="warning")
    return 0


def _cmd_make_fixture(args) -> int:
    from .fixtures import make_localization_fixture, make_segmentation_fixture

    out = Path(args.out)
    if args.kind == "segmentation":
        info = make_segmentation_fixture(out, seed=args.seed, n_targets=args.targets)
    else:
        info = make_localization_fixture(out, seed=args.seed, n_targets=args.targets)
    print(f"fixture at {info.root} (manifest: {info.manifest_path})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrseg",
        description="One-shot localization/segmentation via dense-feature prompt propagation",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="run a manifest and write metric reports")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--models", help="comma-separated subset of manifest models")
    p_eval.add_argument("--jobs", type=int, default=None, help="worker threads (default: cpu count)")
    p_eval.add_argument("--export-heatmaps", action="store_true")
    p_eval.set_defaults(func=_cmd_eval)

    p_rob = sub.add_parser("robustness", help="re-run localization with flipped templates")
    p_rob.add_argument("--manifest", required=True)
    p_rob.add_argument("--axes", default="", help="comma-separated: h,v")
    p_rob.add_argument("--models")
    p_rob.add_argument("--jobs", type=int, default=None)
    p_rob.set_defaults(func=_cmd_robustness)

    p_clu = sub.add_parser("cluster", help="co-cluster target features and export overlays")
    p_clu.add_argument("--manifest", required=True)
    p_clu.add_argument("--k", type=int, required=True)
    p_clu.add_argument("--seed", type=int, default=0)
    p_clu.add_argument("--models")
    p_clu.add_argument("--normalize", action="store_true", help="L2-normalize features first")
    p_clu.set_defaults(func=_cmd_cluster)

    env = os.environ
    p_srv = sub.add_parser("serve", help="run the annotation HTTP service")
    p_srv.add_argument("--listen", default=env.get("CORRSEG_LISTEN", "127.0.0.1:8008"))
    p_srv.add_argument("--image-root", default=env.get("CORRSEG_IMAGE_ROOT"),
                       required="CORRSEG_IMAGE_ROOT" not in env,
                       help="directory of <image_id>.png files")
    p_srv.add_argument("--provider-root", default=env.get("CORRSEG_PROVIDER_ROOT"),
                       help="directory of precomputed feature grids")
    p_srv.add_argument("--feature-endpoint", default=env.get("CORRSEG_FEATURE_ENDPOINT"),
                       help="external inference endpoint for features")
    p_srv.add_argument("--labels-root", default=env.get("CORRSEG_LABELS_ROOT"),
                       help="label images enabling the oracle mask predictor")
    p_srv.add_argument("--predictor-endpoint", default=env.get("CORRSEG_PREDICTOR_ENDPOINT"),
                       help="external mask-predictor endpoint")
    p_srv.add_argument("--cors-origin", action="append", help="allowed CORS origin (repeatable)")
    p_srv.set_defaults(func=_cmd_serve)

    p_fix = sub.add_parser("make-fixture", help="generate a synthetic demo/e2e fixture")
    p_fix.add_argument("--out", required=True)
    p_fix.add_argument("--kind", choices=["segmentation", "localization"], default="segmentation")
    p_fix.add_argument("--seed", type=int, default=0)
    p_fix.add_argument("--targets", type=int, default=2)
    p_fix.set_defaults(func=_cmd_make_fixture)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
