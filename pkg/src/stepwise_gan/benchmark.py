"""Strategy-comparison protocol: shared MLE pretraining, GAN runs, final evals.

One benchmark sweeps a set of credit-assignment strategies over a set of
parameter seeds.  Per seed the generator is MLE-pretrained once and every
strategy fine-tunes from that same checkpoint.  Final models are evaluated on
one shared test subset; results accumulate in results.csv keyed by
(strategy, seed) and per-strategy precision box-plot files are emitted.

Completed run directories (final checkpoint present) and completed result
rows are skipped, so an interrupted sweep resumes where it stopped.
"""

from __future__ import annotations

import csv
import dataclasses
import statistics
from pathlib import Path

from . import evaluation
from .config import ExperimentConfig, dump_config
from .counting import generate_dataset, load_dataset, save_dataset
from .credit_assignment import StrategyConfig
from .models import Discriminator, Generator, ValueNet, load_checkpoint, save_checkpoint
from .training import GanTrainer, TrainingHistory, pretrain_discriminator, pretrain_mle

DEFAULT_STRATEGIES = ("seqgan", "regs", "mcts", "maskgan", "stepgan", "stepgan_w")


def ensure_dataset(data_dir, seed: int = 0, sizes=(100_000, 10_000, 10_000), n_max: int = 10):
    """Load the dataset at data_dir, generating and saving it first if absent."""
    data_dir = Path(data_dir)
    if not (data_dir / "manifest.txt").exists():
        save_dataset(generate_dataset(seed=seed, sizes=sizes, n_max=n_max), data_dir)
    return load_dataset(data_dir)


def fresh_run_dir(path: Path) -> Path:
    (path / "checkpoints").mkdir(parents=True, exist_ok=True)
    (path / "plots").mkdir(exist_ok=True)
    for name in ("history.log", "timings.log", "eval.csv"):
        (path / name).unlink(missing_ok=True)
    return path


def train_one_seed(cfg: ExperimentConfig, seed: int) -> Path:
    """One full run: MLE pretraining (or a shared checkpoint), then the GAN loop."""
    dataset = load_dataset(cfg.data_dir)
    run_dir = fresh_run_dir(Path(cfg.out_dir) / f"{cfg.strategy.kind}_seed{seed}")
    snapshot = dataclasses.replace(cfg, seeds=(seed,))
    (run_dir / "config.snapshot").write_text(dump_config(snapshot))

    if cfg.mle_checkpoint:
        G = load_checkpoint(cfg.mle_checkpoint)
        history = TrainingHistory()
        history.log(event="mle_checkpoint", path=str(cfg.mle_checkpoint))
    else:
        G = Generator(cfg.model, init_seed=seed)
        mle_cfg = dataclasses.replace(cfg.mle, seed=seed)
        history = pretrain_mle(G, dataset, mle_cfg)
        save_checkpoint(G, run_dir / "checkpoints" / "mle.pt")

    gan_cfg = dataclasses.replace(cfg.gan, seed=seed)
    if cfg.strategy.kind == "mle":
        save_checkpoint(G, run_dir / "checkpoints" / "final_g.pt")
        subset = dataset.test[: gan_cfg.eval_inputs] if gan_cfg.eval_inputs else dataset.test
        report = evaluation.evaluate_model(
            G, subset, n_samples=gan_cfg.eval_samples, rng_seed=seed + 3,
            model_id="mle", iteration=0, seed=seed,
        )
        history.log(it=0, event="eval", **report.as_record())
        evaluation.append_eval_csv(run_dir / "eval.csv", report)
        history.save(run_dir / "history.log")
        return run_dir

    D = Discriminator(cfg.model, init_seed=seed + 1)
    V = ValueNet(cfg.model, init_seed=seed + 2)
    d_history = pretrain_discriminator(D, G, cfg.strategy, dataset, gan_cfg)
    history.records.extend(d_history.records)
    trainer = GanTrainer(G, D, V, cfg.strategy, dataset, gan_cfg,
                         run_dir=run_dir, history=history)
    trainer.run()
    return run_dir


RESULT_COLUMNS = evaluation.EVAL_CSV_COLUMNS


def _load_results(path: Path) -> dict[tuple[str, int], dict]:
    if not path.exists():
        return {}
    out = {}
    with open(path) as f:
        for row in csv.DictReader(f):
            out[(row["model_id"], int(row["seed"]))] = row
    return out


def run_benchmark(base: ExperimentConfig, strategies=DEFAULT_STRATEGIES,
                  eval_limit: int | None = 2000, eval_samples: int = 100,
                  include_mle: bool = True, log=print) -> dict[tuple[str, int], dict]:
    """Run the sweep described by base over (strategies x base.seeds).

    Returns {(strategy, seed): result row}; rows are also accumulated in
    OUT_DIR/results.csv and precision box-plot data in OUT_DIR/plots/.
    """
    dataset = ensure_dataset(base.data_dir)
    out_dir = Path(base.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "plots").mkdir(exist_ok=True)
    results_path = out_dir / "results.csv"
    results = _load_results(results_path)

    kinds = (("mle",) if include_mle else ()) + tuple(strategies)
    for seed in base.seeds:
        mle_dir = out_dir / f"mle_seed{seed}"
        mle_ckpt = mle_dir / "checkpoints" / "final_g.pt"
        if not mle_ckpt.exists():
            log(f"[benchmark] pretraining mle_seed{seed}")
            train_one_seed(dataclasses.replace(base, strategy=StrategyConfig(kind="mle")), seed)
        for kind in kinds:
            if kind == "mle":
                continue
            run_dir = out_dir / f"{kind}_seed{seed}"
            if not (run_dir / "checkpoints" / "final_g.pt").exists():
                log(f"[benchmark] training {kind}_seed{seed}")
                cfg = dataclasses.replace(
                    base, strategy=StrategyConfig(kind=kind), mle_checkpoint=str(mle_ckpt)
                )
                train_one_seed(cfg, seed)

    subset = dataset.test[:eval_limit] if eval_limit else dataset.test
    for seed in base.seeds:
        for kind in kinds:
            if (kind, seed) in results:
                continue
            ckpt = out_dir / f"{kind}_seed{seed}" / "checkpoints" / "final_g.pt"
            log(f"[benchmark] evaluating {kind}_seed{seed}")
            G = load_checkpoint(ckpt)
            report = evaluation.evaluate_model(
                G, subset, n_samples=eval_samples, rng_seed=seed,
                model_id=kind, iteration=base.gan.total_iterations, seed=seed,
            )
            evaluation.append_eval_csv(results_path, report)
            results[(kind, seed)] = {k: str(v) for k, v in report.as_record().items()}

    for kind in kinds:
        pairs = [(seed, float(results[(kind, seed)]["prec"])) for seed in base.seeds]
        evaluation.write_plot_data(out_dir / "plots" / f"prec_boxplot_{kind}.txt",
                                   pairs, header="seed prec")
    return results


def median_metric(results, kind: str, seeds, metric: str = "prec") -> float:
    return statistics.median(float(results[(kind, s)][metric]) for s in seeds)
