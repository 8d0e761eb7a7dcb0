"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (e.g. diverged training),
2 usage or configuration error (bad flags, unknown config keys, missing
checkpoint, geometry mismatch).

Outputs live under ``--out``::

    out/manifest.json      run manifest (written at start, finalized at end)
    out/checkpoints/       model checkpoints
    out/logs/              per-step training logs (JSON lines)
    out/results/           result tables (CSV)
    out/samples/           simulated realizations
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .channel import save_realization
from .config import ConfigError, RunConfig, dump_config, parse_config
from .evaluation import (
    GeometryMismatchError,
    ablation_velocity,
    band_geometry,
    evaluate_methods,
    sweep_bands,
    sweep_occupancy,
    sweep_paths,
    sweep_velocity,
    write_results,
)
from .interference import InfeasibleTargetError, clamp_note
from .model import CFRTransformer
from .training import TrainingDivergedError, make_sample, train

log = logging.getLogger("cfrformer")

BASELINES = ("historical", "zero", "spline")
SIMULATE_DOMAIN = 3


class UsageError(Exception):
    pass


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", help="key = value configuration file")
    g.add_argument("--seed", type=int, metavar="U64", help="base seed (overrides config)")
    g.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    g.add_argument("--samples", type=int, metavar="N", help="evaluation samples per point, or realizations for simulate")
    g.add_argument("--checkpoint", metavar="PATH", help="trained model checkpoint")
    g.add_argument("--threads", type=int, metavar="N", default=os.cpu_count() or 1, help="worker cap for sample generation")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="cfrformer",
        description="Simulate multi-band channels under Markov interference, train and evaluate CFR reconstruction.",
        epilog="exit codes: 0 ok, 1 runtime failure, 2 usage/config error",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("simulate", parents=[common], help="write realizations and masks to out/samples/")
    sub.add_parser("train", parents=[common], help="train a model; checkpoints to out/checkpoints/")
    ev = sub.add_parser("evaluate", parents=[common], help="evaluate one method at the configured condition")
    ev.add_argument("--method", default="transformer", choices=("transformer",) + BASELINES)
    bl = sub.add_parser("baseline", parents=[common], help="evaluate a classical baseline at the configured condition")
    bl.add_argument("name", choices=BASELINES)
    sw = sub.add_parser("sweep", parents=[common], help="run an evaluation sweep")
    sw.add_argument("axis", choices=("occupancy", "velocity", "paths", "bands"))
    ab = sub.add_parser("ablate", parents=[common], help="fixed vs randomized velocity training ablation")
    ab.add_argument("what", choices=("velocity",))
    return parser


# ---------------------------------------------------------------------------


def _resolve(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.samples is not None and args.command != "simulate":
        overrides.append(f"eval_samples={args.samples}")
    return parse_config(args.config, overrides)


def _load_model(args) -> CFRTransformer:
    if not args.checkpoint or args.checkpoint.lower() == "none":
        raise UsageError("transformer evaluation needs --checkpoint PATH")
    path = Path(args.checkpoint)
    if not path.is_file():
        raise UsageError(f"--checkpoint: file not found: {path}")
    return CFRTransformer.load(path)


def _methods_with_optional_model(args):
    if args.checkpoint and args.checkpoint.lower() != "none":
        return ["transformer", *BASELINES], _load_model(args)
    return list(BASELINES), None


def cmd_simulate(args, cfg: RunConfig, out: Path, outputs: list):
    n = args.samples if args.samples is not None else 1
    if n < 1:
        raise UsageError("--samples must be >= 1")
    note = clamp_note(cfg["eval_pi"], cfg["p10"])
    if note:
        log.warning(note)
    channel = cfg.channel()
    dest = out / "samples"
    dest.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        s = make_sample(channel, cfg["eval_pi"], cfg["seed"], SIMULATE_DOMAIN, i, cfg["p10"])
        path = dest / f"realization_{i:04d}.bin"
        save_realization(path, s.realization, s.mask.grid)
        outputs.append(str(path))


def cmd_train(args, cfg: RunConfig, out: Path, outputs: list):
    result = train(cfg.train(), out, log_every=100 if args.verbose else 0)
    outputs.extend(str(p) for p in result.epoch_checkpoints)
    outputs.append(str(result.checkpoint))
    print(result.checkpoint)


def _evaluate(args, cfg, out, outputs, method, name):
    model = _load_model(args) if method == "transformer" else None
    results = evaluate_methods([method], cfg.eval_condition(), model, args.threads)
    path = out / "results" / f"{name}.csv"
    write_results(path, results)
    outputs.append(str(path))
    r = results[0]
    print(f"{r.method}: rho_mean={r.rho_mean:.4f} rho_std={r.rho_std:.4f} n={r.n_samples}")


def cmd_evaluate(args, cfg, out, outputs):
    _evaluate(args, cfg, out, outputs, args.method, f"evaluate_{args.method}")


def cmd_baseline(args, cfg, out, outputs):
    _evaluate(args, cfg, out, outputs, args.name, f"baseline_{args.name}")


def _train_variant(cfg: RunConfig, out: Path, tag: str, **changes):
    result = train(cfg.train(**changes), out, tag=tag)
    return CFRTransformer.load(result.checkpoint), result


def cmd_sweep(args, cfg: RunConfig, out: Path, outputs: list):
    base = cfg.eval_condition()
    if args.axis == "occupancy":
        methods, model = _methods_with_optional_model(args)
        results = sweep_occupancy(methods, base, cfg["occupancy_levels"], model, args.threads)
    elif args.axis == "velocity":
        methods, model = _methods_with_optional_model(args)
        results = sweep_velocity(methods, base, cfg["velocity_levels"], model, args.threads)
    elif args.axis == "paths":
        model = _load_model(args)
        results = sweep_paths(model, base, cfg["path_levels"], cfg["velocity_levels"], workers=args.threads)
    else:
        total = cfg.channel().F
        models = {}
        for nb in cfg["band_levels"]:
            nb, fb = band_geometry(nb, total)
            channel = cfg.channel(nb=nb, fb=fb)
            model, result = _train_variant(cfg, out, f"bands_nb{nb}", channel=channel)
            outputs.append(str(result.checkpoint))
            models[nb] = model
        results = sweep_bands(models, base, cfg["occupancy_levels"], cfg["velocity_levels"], cfg["eval_velocity"], cfg["eval_pi"], args.threads)
    path = out / "results" / f"sweep_{args.axis}.csv"
    write_results(path, results)
    outputs.append(str(path))
    for r in results:
        print(f"{r.method:>12} v={r.condition.velocity:<5g} pi={r.condition.pi_busy:<4g} P={r.condition.paths:<3d} nb={r.condition.channel.nb:<2d} rho={r.rho_mean:.4f}")


def cmd_ablate(args, cfg: RunConfig, out: Path, outputs: list):
    models = {}
    for v in cfg["ablation_velocities"]:
        label = f"fixed_v{v:g}"
        models[label], result = _train_variant(cfg, out, label, v_min=v, v_max=v)
        outputs.append(str(result.checkpoint))
    models["random"], result = _train_variant(cfg, out, "random")
    outputs.append(str(result.checkpoint))
    table = ablation_velocity(models, cfg.eval_condition(), cfg["ablation_velocities"], args.threads)
    rows = [r for label in table for r in table[label]]
    path = out / "results" / "ablation_velocity.csv"
    write_results(path, rows)
    outputs.append(str(path))
    for label, row in table.items():
        print(f"{label:>14}: " + "  ".join(f"v={r.condition.velocity:g}: {r.rho_mean:.4f}" for r in row))


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def _write_manifest(path: Path, manifest: dict):
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "status": "running",
        "outputs": [],
    }
    _write_manifest(manifest_path, manifest)

    outputs: list = []
    code = 0
    try:
        cfg = _resolve(args)
        manifest["config"] = cfg.as_dict()
        manifest["derived"] = cfg.derived()
        manifest["seed"] = cfg["seed"]
        _write_manifest(manifest_path, manifest)
        (out / "config.resolved").write_text(dump_config(cfg))
        if args.verbose:
            log.info("derived: %s", cfg.derived())
        COMMANDS[args.command](args, cfg, out, outputs)
    except (UsageError, ConfigError, GeometryMismatchError, InfeasibleTargetError) as exc:
        print(f"cfrformer: error: {exc}", file=sys.stderr)
        code = 2
    except (TrainingDivergedError, FloatingPointError, OSError, ValueError) as exc:
        print(f"cfrformer: error: {exc}", file=sys.stderr)
        code = 1
    manifest.update(outputs=outputs, finished=time.strftime("%Y-%m-%dT%H:%M:%S%z"), status="ok" if code == 0 else "failed", exit_code=code)
    _write_manifest(manifest_path, manifest)
    return code


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
