"""Command-line interface.

Subcommands: gen-data, train, render, gradcheck, export-latent, evaluate.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .config import TrainingConfig
from .diffcore.gradcheck import check_all_registered, check_registered_op
from .diffcore.ops import REGISTRY
from .harness import evaluate as harness_evaluate
from .harness import generate_dataset, load_dataset
from .harness import train as harness_train
from .harness.train import apply_execution_config, load_checkpoint_into
from .pipeline import build_pipeline


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _load_config(args) -> TrainingConfig:
    cfg = TrainingConfig.load(args.config) if args.config else TrainingConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def build_parser() -> _Parser:
    p = _Parser(prog="slpt", description=__doc__)
    sub = p.add_subparsers(dest="command")

    def common(sp, seed=True, out=True):
        sp.add_argument("--config", help="JSON config path (defaults otherwise)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("gen-data", help="generate a synthetic scene dataset")
    common(sp)

    sp = sub.add_parser("train", help="train on a generated dataset")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset directory")

    sp = sub.add_parser("render", help="render one view from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--view", type=int, required=True)

    sp = sub.add_parser("gradcheck", help="gradient-check registered ops")
    sp.add_argument("--all", action="store_true", help="check every registered op")
    sp.add_argument("--op", help="check one op by name")
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("export-latent", help="export the latent sample for a scene")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", choices=["deterministic", "stochastic"],
                    default="deterministic")

    sp = sub.add_parser("evaluate", help="evaluate a checkpoint on dataset views")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--views", help="comma-separated view indices (default: held-out)")
    return p


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    generate_dataset(cfg.seed, cfg, args.out)
    print(f"dataset written to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    result = harness_train(cfg, args.data, args.out)
    print(f"trained {result.steps} steps; checkpoint {result.checkpoint}")
    print(f"final l_total {result.final_breakdown.l_total:.5f}")
    return 0


def cmd_render(args) -> int:
    cfg = _load_config(args)
    apply_execution_config(cfg)
    data = load_dataset(args.data)
    store, pipeline = build_pipeline(cfg)
    load_checkpoint_into(store, cfg, Path(args.checkpoint))
    scene = pipeline.prepare_scene(data.coords, data.colors)
    state = pipeline.forward(scene, [data.cameras[args.view]], deterministic=True)
    render = state.views[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    k = args.view
    fileio.write_ppm(out / f"view_{k}_rgb.ppm", render.rgb.data)
    fileio.write_tensor(out / f"view_{k}_depth.bin", render.depth.data)
    fileio.write_tensor(out / f"view_{k}_feature.bin", render.feature.data)
    fileio.write_tensor(out / f"view_{k}_alpha.bin", render.alpha.data)
    print(f"wrote view {k} maps to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    tol = 1e-4
    if args.op:
        if args.op not in REGISTRY:
            print(f"unknown op '{args.op}'", file=sys.stderr)
            return 1
        errs = {args.op: check_registered_op(args.op, seed=args.seed)}
    else:
        errs = check_all_registered(seeds=range(args.seed, args.seed + 3))
    width = max(len(n) for n in errs)
    ok = True
    for name in sorted(errs):
        status = "ok" if errs[name] < tol else "FAIL"
        ok = ok and errs[name] < tol
        print(f"{name:<{width}}  {errs[name]:.3e}  {status}")
    print(f"{'all ops' if ok else 'SOME OPS'} within {tol:g}")
    return 0 if ok else 2


def cmd_export_latent(args) -> int:
    cfg = _load_config(args)
    apply_execution_config(cfg)
    data = load_dataset(args.data)
    store, pipeline = build_pipeline(cfg)
    if pipeline.vae is None:
        print("latent export requires latent_vae_enabled=true", file=sys.stderr)
        return 2
    load_checkpoint_into(store, cfg, Path(args.checkpoint))
    scene = pipeline.prepare_scene(data.coords, data.colors)
    latent, _ = pipeline.extract_latent(scene, sample_seed=cfg.seed,
                                        deterministic=args.mode == "deterministic")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_tensor(out / "latent_features.bin", latent.z_f.data)
    fileio.write_tensor(out / "latent_coords.bin", latent.z_p.data)
    sidecar = {
        "M": int(latent.z_f.data.shape[0]),
        "Z_f": int(latent.z_f.data.shape[1]),
        "seed": cfg.seed,
        "mode": args.mode,
    }
    (out / "latent.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    print(f"latent sample written to {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    views = None
    if args.views:
        views = [int(v) for v in args.views.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = harness_evaluate(cfg, args.checkpoint, args.data, views,
                              report_path=out / "report.json")
    print(json.dumps({k: report[k] for k in ("psnr_rgb", "l1_depth_masked", "l1_sem")},
                     indent=1))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "render": cmd_render,
    "gradcheck": cmd_gradcheck,
    "export-latent": cmd_export_latent,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except (KeyboardInterrupt, BrokenPipeError):
        return 2
    except Exception as err:  # runtime failures map to exit code 2
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
