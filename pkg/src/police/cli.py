"""Command-line entry point: ``police <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench, data, plot
from .errors import PoliceError
from .net import extract_affine, fold_bias, load_model, new_mlp, save_model
from .region import box, load_region
from .train import AffineTarget, TrainConfig, Trainer
from .verify import DEFAULT_TOL, certify_affine

log = logging.getLogger("police")

PRESET_REGION = ((-1.0, -1.0), (1.0, 1.0))
PRESETS = {
    "fig1": {
        "task": "classification",
        "dims": [2, 256, 256, 1],
        "activation": "leaky_relu",
        "config": {"steps": 2000, "batch_size": 128, "lr": 0.05, "optimizer": "sgd", "momentum": 0.9,
                   "loss": "bce_logits", "checkpoint_steps": [0, 5, 50, 500, 2000]},
    },
    "fig2": {
        "task": "regression",
        "dims": [2, 256, 256, 256, 1],
        "activation": "leaky_relu",
        "config": {"steps": 5000, "batch_size": 128, "lr": 1e-3, "optimizer": "adam", "loss": "mse",
                   "checkpoint_steps": [0, 5, 50, 5000]},
    },
    "fig3": {
        "task": "regression",
        "dims": [2, 256, 256, 256, 1],
        "activation": "leaky_relu",
        "config": {"steps": 10000, "batch_size": 128, "lr": 1e-3, "optimizer": "adam", "loss": "mse",
                   "checkpoint_steps": [5, 50, 10000]},
    },
}


def _floats(text, n=None):
    vals = [float(t) for t in text.split(",")]
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
    return vals


def _ints(text):
    return [int(t) for t in text.split(",")]


def cmd_demo(args) -> int:
    X, y = data.demo_dataset(args.task, 0 if args.seed is None else args.seed)
    data.save_csv(args.out, X, y)
    log.info("wrote %d rows to %s", X.shape[0], args.out)
    if args.region_out:
        box(*PRESET_REGION).save(args.region_out)
    return 0


def _load_target(path):
    obj = json.loads(Path(path).read_text())
    return AffineTarget(obj["slope"], obj["offset"], obj["anchor"], obj.get("weight", 1.0))


def cmd_train(args) -> int:
    preset = PRESETS.get(args.preset, {})
    cfg = dict(preset.get("config", {}))
    if args.config:
        # file values override the preset; unknown keys are rejected by from_dict
        cfg.update(json.loads(Path(args.config).read_text()))
    if args.steps is not None:
        cfg["steps"] = args.steps
    if args.seed is not None:
        cfg["seed"] = args.seed
    config = TrainConfig.from_dict(cfg)

    if args.data:
        X, y = data.load_csv(args.data)
    elif preset:
        X, y = data.demo_dataset(preset["task"], config.seed)
    else:
        raise PoliceError("--data is required without --preset")
    if args.region:
        region = load_region(args.region)
    elif preset:
        region = box(*PRESET_REGION)
    else:
        raise PoliceError("--region is required without --preset")

    if args.init:
        net = load_model(args.init)
    else:
        dims = args.dims or preset.get("dims") or [X.shape[1], 64, 64, y.shape[1]]
        net = new_mlp(dims, args.activation or preset.get("activation", "relu"), config.seed)
    target = _load_target(args.target) if args.target else None

    trainer = Trainer(net, (X, y), region, config, target)
    history = trainer.run()
    folded = fold_bias(trainer.net, region)
    save_model(folded, args.out)
    hist_path = Path(args.history) if args.history else Path(args.out).with_name(Path(args.out).stem + "_history.csv")
    hist_path.write_text(history.to_csv())
    if args.checkpoint:
        trainer.save(args.checkpoint)

    for cp in history.checkpoints:
        c = cp.certificate
        log.info("checkpoint step %d: %s (residual %.3g, margin %.3g)", cp.step, c.status, c.affine_residual,
                 c.sign_margin)
    final = certify_affine(folded, region, n_samples=config.certify_samples, tol=config.certify_tol,
                           seed=config.seed, mode="plain")
    print(f"final certificate: {final.status} residual={final.affine_residual:.3g} "
          f"fit={final.fit_residual:.3g} margin={final.sign_margin:.3g} fold_delta={final.fold_delta:.3g}")
    print(f"model written to {args.out}; history to {hist_path}")
    return 0 if all(cp.certificate.passed for cp in history.checkpoints) and final.passed else 2


def cmd_verify(args) -> int:
    net = load_model(args.model)
    region = load_region(args.region)
    cert = certify_affine(net, region, n_samples=args.samples, tol=args.tol, seed=args.seed or 0,
                          mode="policed" if args.policed else "plain")
    text = cert.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return cert.exit_code


def cmd_fold(args) -> int:
    net = load_model(args.model)
    region = load_region(args.region)
    folded = fold_bias(net, region)
    save_model(folded, args.out)
    if not args.quiet:
        piece = extract_affine(folded, region)
        print(f"folded model written to {args.out}; affine slope on region: {piece.slope.tolist()}")
    return 0


def cmd_plot(args) -> int:
    net = load_model(args.model)
    region = load_region(args.region) if args.region else None
    if args.police:
        if region is None:
            raise PoliceError("--police needs --region")
        net = fold_bias(net, region)
    written = plot.write_plot(net, args.out, args.domain, args.resolution,
                              classification=args.mode == "classification", region=region)
    for kind, path in written.items():
        print(f"{kind}: {path}")
    return 0


def cmd_bench(args) -> int:
    if args.config:
        configs = [tuple(args.config)]
    else:
        configs = bench.TABLE1_CONFIGS
    table = bench.table1_suite(batch_size=args.batch, repeats=args.repeats, warmup_iters=args.warmup,
                               skip_large=args.skip_large, median_of_means=args.median_of_means,
                               seed=args.seed or 0, configs=configs, max_seconds=args.max_seconds)
    csv_text = table.to_csv()
    if args.csv:
        Path(args.csv).write_text(csv_text)
    print(table.to_text())
    if not args.csv:
        print()
        print(csv_text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (deterministic output)")
    common.add_argument("--quiet", action="store_true", help="only print results and errors")

    parser = argparse.ArgumentParser(prog="police", description="Train, fold, verify and benchmark networks "
                                     "that are provably affine on a convex polytope.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", parents=[common], help="write a synthetic 2-D dataset as CSV")
    p.add_argument("task", choices=["classification", "regression"])
    p.add_argument("--out", required=True)
    p.add_argument("--region-out", help="also write the preset box region JSON")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("train", parents=[common], help="train with the POLICE forward pass")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--data", help="data CSV (label last)")
    p.add_argument("--region", help="region JSON")
    p.add_argument("--out", required=True, help="folded model JSON")
    p.add_argument("--history", help="history CSV (default: <out>_history.csv)")
    p.add_argument("--checkpoint", help="write a resumable checkpoint here")
    p.add_argument("--init", help="start from this model JSON")
    p.add_argument("--dims", type=_ints, help="layer widths, e.g. 2,64,64,1")
    p.add_argument("--activation", choices=["relu", "leaky_relu", "abs"])
    p.add_argument("--target", help="affine target JSON {slope, offset, anchor, weight}")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", parents=[common], help="certify a model is affine on a region")
    p.add_argument("--model", required=True)
    p.add_argument("--region", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--policed", action="store_true", help="check the POLICE forward pass instead of the stored network")
    p.add_argument("--out", help="write the certificate JSON here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fold", parents=[common], help="absorb the POLICE bias shifts into the model")
    p.add_argument("--model", required=True)
    p.add_argument("--region", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fold)

    p = sub.add_parser("plot", parents=[common], help="evaluate a 2-D model on a grid (CSV + PGM)")
    p.add_argument("--model", required=True)
    p.add_argument("--region", help="region JSON, echoed for overlay")
    p.add_argument("--domain", type=lambda t: _floats(t, 4), default=[-3.0, 3.0, -3.0, 3.0],
                   help="x_min,x_max,y_min,y_max")
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--mode", choices=["classification", "regression"], default="regression")
    p.add_argument("--police", action="store_true", help="fold the model on --region before plotting")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("bench", parents=[common], help="time forward+backward, unconstrained vs POLICEd")
    p.add_argument("--suite", choices=["table1"], default="table1")
    p.add_argument("--config", type=_ints, help="single D,L,width configuration instead of the suite")
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--repeats", type=int, default=1024)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--skip-large", action="store_true")
    p.add_argument("--median-of-means", action="store_true")
    p.add_argument("--max-seconds", type=float, help="per-config timing budget (repeats never below 10)")
    p.add_argument("--csv", help="write the CSV table here")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (PoliceError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"police {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
