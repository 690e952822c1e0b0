"""Command-line front door: dataset generation, training, evaluation, probes.

Subcommands::

    gen-data        write a counting dataset (train/valid/test + manifest)
    train           MLE pretraining and, unless --strategy mle, the GAN loop
    eval            full EvalReport for a checkpoint, appended to a CSV table
    probe-variance  per-step Q-value variance across a run's checkpoints
    bench-time      mean seconds/iteration for a list of strategies

Exit codes: 0 success, 1 configuration error, 2 runtime divergence.  The
environment variable STEPWISE_GAN_OUT_ROOT overrides the output root
directory (the --out flag still wins).  Every output is plain text; rerunning
a command with the same seed and config reproduces the same bytes, except for
timings.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from . import evaluation
from .benchmark import train_one_seed
from .config import ExperimentConfig, apply_setting, load_config
from .counting import generate_dataset, load_dataset, save_dataset
from .credit_assignment import KINDS, StrategyConfig
from .models import load_checkpoint
from .training import DivergenceError


def _parse_sizes(raw: str) -> tuple[int, int, int]:
    parts = tuple(int(tok) for tok in raw.split(","))
    if len(parts) != 3:
        raise ValueError(f"--sizes needs three comma-separated ints, got {raw!r}")
    return parts


def cmd_gen_data(args) -> int:
    ds = generate_dataset(seed=args.seed, sizes=_parse_sizes(args.sizes), n_max=args.nmax)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.train)}/{len(ds.valid)}/{len(ds.test)} examples to {args.out}")
    return 0


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for setting in args.set or []:
        key, _, value = setting.partition("=")
        apply_setting(cfg, key, value)
    if getattr(args, "strategy", None):
        cfg.strategy = StrategyConfig(kind=args.strategy)
    if getattr(args, "seed", None):
        cfg.seeds = tuple(int(tok) for tok in args.seed.split(","))
    if getattr(args, "iterations", None) is not None:
        cfg.gan.total_iterations = args.iterations
    if getattr(args, "data", None):
        cfg.data_dir = args.data
    out_root = os.environ.get("STEPWISE_GAN_OUT_ROOT")
    if out_root:
        cfg.out_dir = out_root
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    for seed in cfg.seeds:
        run_dir = train_one_seed(cfg, seed)
        print(f"run complete: {run_dir}")
    return 0


def _infer_iteration(stem: str) -> int:
    for part in stem.split("_"):
        if part.isdigit():
            return int(part)
    return 0


def cmd_eval(args) -> int:
    G = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    testset = dataset.test[: args.limit] if args.limit else dataset.test
    stem = Path(args.checkpoint).stem
    report = evaluation.evaluate_model(
        G, testset, n_samples=args.samples, rng_seed=args.seed, ikld_eps=args.eps,
        model_id=args.model_id or stem, iteration=_infer_iteration(stem), seed=args.seed,
    )
    evaluation.append_eval_csv(args.out, report)
    rec = report.as_record()
    print(", ".join(f"{k}={rec[k]}" for k in ("model_id", "prec", "samp_p", "samp_r",
                                              "fkld", "ikld", "fkld_plus_ikld")))
    return 0


def _load_probes(path):
    probes = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        left, right = line.split("\t")
        probes.append((tuple(int(t) for t in left.split()),
                       tuple(int(t) for t in right.split())))
    return probes


def cmd_probe_variance(args) -> int:
    run_dir = Path(args.run_dir)
    ckpt_paths = sorted((run_dir / "checkpoints").glob("iter_*_d.pt"))
    if len(ckpt_paths) < 2:
        raise ValueError(f"need at least 2 discriminator checkpoints in {run_dir}/checkpoints")
    checkpoints = [load_checkpoint(p) for p in ckpt_paths]
    out_dir = Path(args.out) if args.out else run_dir / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, probe in enumerate(_load_probes(args.probe_file)):
        profile = evaluation.q_variance_probe(checkpoints, probe)
        out = out_dir / f"q_variance_{i:02d}.txt"
        evaluation.write_plot_data(out, list(enumerate(profile, start=1)),
                                   header="step variance")
        print(f"wrote {out}")
    return 0


def cmd_bench_time(args) -> int:
    cfg = _resolve_config(args)
    strategies = [tok for tok in args.strategies.split(",") if tok]
    if not strategies:
        raise ValueError("--strategies must name at least one strategy")
    for kind in strategies:
        if kind not in KINDS or kind == "mle":
            raise ValueError(f"cannot benchmark strategy {kind!r}")
    dataset = load_dataset(cfg.data_dir)
    gan_cfg = dataclasses.replace(cfg.gan, seed=cfg.seeds[0])
    results = evaluation.timing_benchmark(
        strategies, dataset, cfg.model, gan_cfg,
        warmup=args.warmup, measured_iters=args.iters,
    )
    with open(args.out, "w") as f:
        f.write("strategy,seconds_per_iteration\n")
        for kind in strategies:
            f.write(f"{kind},{results[kind]:.6f}\n")
    for kind in strategies:
        print(f"{kind}: {results[kind]:.4f} s/iter")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepwise-gan", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the counting dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="100000,10000,10000")
    p.add_argument("--nmax", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="pretrain with MLE and run the GAN loop")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--strategy", choices=KINDS)
    p.add_argument("--seed", help="comma-separated seeds, one run each")
    p.add_argument("--iterations", type=int, help="override train.total_iterations")
    p.add_argument("--data", help="override run.data_dir")
    p.add_argument("--out", help="override run.out_dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. --set model.hidden_size=128")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a generator checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--limit", type=int, help="evaluate only the first N test inputs")
    p.add_argument("--eps", type=float, default=evaluation.IKLD_EPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-id")
    p.add_argument("--out", default="eval.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe-variance", help="per-step Q variance across checkpoints")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--probe-file", required=True,
                   help="text file: input digits, a tab, response tokens")
    p.add_argument("--out", help="output directory (default RUN_DIR/plots)")
    p.set_defaults(func=cmd_probe_variance)

    p = sub.add_parser("bench-time", help="seconds/iteration per strategy")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--strategies", required=True, help="comma-separated strategy kinds")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--data", help="override run.data_dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default="timing.csv")
    p.set_defaults(func=cmd_bench_time)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
