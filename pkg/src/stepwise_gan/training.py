"""Training loops: MLE pretraining, discriminator pretraining, adversarial loop.

One adversarial iteration runs d_iterations discriminator updates on fresh
(real, sampled) pairs, one value-net regression step toward the
discriminator's per-step scalars on the last fake batch, then g_iterations
policy-gradient generator updates on freshly sampled responses.  Responses
used in D and G updates are always sampled, never teacher-forced.

Everything is deterministic given (seed, config, dataset): batches are drawn
from a torch.Generator owned by the trainer, and trainer state (parameters,
optimizers, rng, history) round-trips through state_dict/load_state_dict so a
resumed run reproduces an uninterrupted one exactly.  Wall-clock timings are
kept out of history records so logs stay byte-identical across reruns.
"""

from __future__ import annotations

import copy
import itertools
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import torch

from .counting import CountingDataset
from .credit_assignment import StrategyConfig, batch_discriminator_loss, generator_surrogate_loss
from .models import (
    Discriminator,
    Generator,
    ValueNet,
    length_mask,
    make_rng,
    pad_batch,
    sample_trajectories,
    save_checkpoint,
    step_scores_batch,
)

OPTIMIZER_GRID = ("sgd", "adam", "rmsprop")
LEARNING_RATE_GRID = (1e-1, 1e-2, 1e-3, 1e-4)
D_ITERATION_GRID = (1, 5)
BATCH_SIZE_GRID = (32, 64)


class DivergenceError(RuntimeError):
    """A training loss became non-finite; the last good checkpoint is kept."""


@dataclass
class TrainingConfig:
    optimizer: str = "rmsprop"
    learning_rate: float = 1e-4
    d_iterations: int = 5
    g_iterations: int = 1
    batch_size: int = 64
    total_iterations: int = 5000
    seed: int = 0
    grad_clip: float = 5.0
    eval_interval: int = 500
    patience: int = 3  # mle early stopping, counted in evaluations
    disc_pretrain_steps: int = 1000
    eval_inputs: int | None = 200  # test subset for snapshot evals
    eval_samples: int = 100

    def __post_init__(self):
        if self.optimizer not in OPTIMIZER_GRID:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZER_GRID}")
        for name in ("learning_rate", "d_iterations", "g_iterations", "batch_size", "eval_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be >= 0")


def hyperparameter_grid(base: TrainingConfig | None = None) -> list[TrainingConfig]:
    """The full search grid: optimizer x learning rate x d-iterations x batch size."""
    base = base or TrainingConfig()
    grid = []
    for opt, lr, d_it, bs in itertools.product(
        OPTIMIZER_GRID, LEARNING_RATE_GRID, D_ITERATION_GRID, BATCH_SIZE_GRID
    ):
        grid.append(
            TrainingConfig(
                optimizer=opt, learning_rate=lr, d_iterations=d_it, batch_size=bs,
                g_iterations=base.g_iterations, total_iterations=base.total_iterations,
                seed=base.seed, grad_clip=base.grad_clip, eval_interval=base.eval_interval,
                patience=base.patience, disc_pretrain_steps=base.disc_pretrain_steps,
                eval_inputs=base.eval_inputs, eval_samples=base.eval_samples,
            )
        )
    return grid


def build_optimizer(params, kind: str, lr: float):
    if kind == "sgd":
        return torch.optim.SGD(params, lr=lr)
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr)
    if kind == "rmsprop":
        return torch.optim.RMSprop(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")


class TrainingHistory:
    """Append-only list of per-iteration records, serializable as JSON lines."""

    def __init__(self, records: list[dict] | None = None):
        self.records = records or []

    def log(self, **record):
        self.records.append(record)

    def save(self, path):
        with open(path, "w") as f:
            for rec in self.records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls([json.loads(line) for line in f])

    def last(self, key: str):
        for rec in reversed(self.records):
            if key in rec:
                return rec[key]
        return None


def _check_finite(value: float, what: str):
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became non-finite ({value})")


def _real_trajectory(example, eos_id: int) -> list[int]:
    return list(example.answer) + [eos_id]


def _mle_loss(G: Generator, batch, eos_id: int) -> torch.Tensor:
    """Teacher-forced cross-entropy per token, averaged over the batch's tokens."""
    xs_list = [ex.input for ex in batch]
    ys_list = [_real_trajectory(ex, eos_id) for ex in batch]
    xs, x_lens = pad_batch(xs_list, G.cfg.pad_id)
    ys, y_lens = pad_batch(ys_list, G.cfg.pad_id)
    logp = G.forced_log_probs(xs, x_lens, ys, y_lens)
    return -logp.sum() / y_lens.sum()


@torch.no_grad()
def validation_loss(G: Generator, examples, eos_id: int, chunk: int = 256) -> float:
    total, tokens = 0.0, 0
    for i in range(0, len(examples), chunk):
        batch = examples[i : i + chunk]
        ys_list = [_real_trajectory(ex, eos_id) for ex in batch]
        xs, x_lens = pad_batch([ex.input for ex in batch], G.cfg.pad_id)
        ys, y_lens = pad_batch(ys_list, G.cfg.pad_id)
        total += -G.forced_log_probs(xs, x_lens, ys, y_lens).sum().item()
        tokens += int(y_lens.sum())
    return total / tokens


class MlePretrainer:
    """Cross-entropy pretraining with best-validation early stopping."""

    def __init__(self, G: Generator, dataset: CountingDataset, cfg: TrainingConfig):
        self.G = G
        self.dataset = dataset
        self.cfg = cfg
        self.opt = build_optimizer(G.parameters(), cfg.optimizer, cfg.learning_rate)
        self.rng = make_rng(cfg.seed)
        self.history = TrainingHistory()
        self.iteration = 0
        self.best_val = math.inf
        self.bad_evals = 0
        self.best_state = copy.deepcopy(G.state_dict())

    def _batch(self):
        idx = torch.randint(len(self.dataset.train), (self.cfg.batch_size,), generator=self.rng)
        return [self.dataset.train[i] for i in idx.tolist()]

    def step(self) -> float:
        self.opt.zero_grad(set_to_none=True)
        loss = _mle_loss(self.G, self._batch(), self.G.cfg.eos_id)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.G.parameters(), self.cfg.grad_clip)
        self.opt.step()
        self.iteration += 1
        value = loss.item()
        _check_finite(value, "mle loss")
        return value

    def evaluate(self) -> float:
        val = validation_loss(self.G, self.dataset.valid, self.G.cfg.eos_id)
        _check_finite(val, "mle validation loss")
        if val < self.best_val:
            self.best_val = val
            self.bad_evals = 0
            self.best_state = copy.deepcopy(self.G.state_dict())
        else:
            self.bad_evals += 1
        return val

    def run(self) -> TrainingHistory:
        while self.iteration < self.cfg.total_iterations:
            loss = self.step()
            if self.iteration % self.cfg.eval_interval == 0:
                val = self.evaluate()
                self.history.log(it=self.iteration, phase="mle", loss=round(loss, 6),
                                 val_loss=round(val, 6), best_val=round(self.best_val, 6))
                if self.bad_evals >= self.cfg.patience:
                    break
        self.G.load_state_dict(self.best_state)
        self.history.log(it=self.iteration, phase="mle", event="converged",
                         best_val=round(self.best_val, 6))
        return self.history

    def state_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "model": copy.deepcopy(self.G.state_dict()),
            "optimizer": copy.deepcopy(self.opt.state_dict()),
            "rng": self.rng.get_state(),
            "best_val": self.best_val,
            "bad_evals": self.bad_evals,
            "best_state": copy.deepcopy(self.best_state),
            "records": copy.deepcopy(self.history.records),
        }

    def load_state_dict(self, state: dict):
        self.iteration = state["iteration"]
        self.G.load_state_dict(state["model"])
        self.opt.load_state_dict(state["optimizer"])
        self.rng.set_state(state["rng"])
        self.best_val = state["best_val"]
        self.bad_evals = state["bad_evals"]
        self.best_state = copy.deepcopy(state["best_state"])
        self.history = TrainingHistory(copy.deepcopy(state["records"]))


def pretrain_mle(G: Generator, dataset: CountingDataset, cfg: TrainingConfig) -> TrainingHistory:
    """Train G by teacher-forced cross-entropy; leaves G at its best-validation state."""
    return MlePretrainer(G, dataset, cfg).run()


def pretrain_discriminator(D: Discriminator, G: Generator, strategy: StrategyConfig,
                           dataset: CountingDataset, cfg: TrainingConfig,
                           steps: int | None = None) -> TrainingHistory:
    """Train D on real pairs vs responses sampled from the (pretrained) generator."""
    steps = cfg.disc_pretrain_steps if steps is None else steps
    opt = build_optimizer(D.parameters(), cfg.optimizer, cfg.learning_rate)
    rng = make_rng(cfg.seed + 1)
    history = TrainingHistory()
    eos = D.cfg.eos_id
    for step in range(steps):
        idx = torch.randint(len(dataset.train), (cfg.batch_size,), generator=rng)
        batch = [dataset.train[i] for i in idx.tolist()]
        xs = [ex.input for ex in batch]
        reals = [_real_trajectory(ex, eos) for ex in batch]
        fakes = sample_trajectories(G, xs, rng)
        opt.zero_grad(set_to_none=True)
        loss = batch_discriminator_loss(strategy, D, xs, reals, xs, fakes, rng=rng)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(D.parameters(), cfg.grad_clip)
        opt.step()
        value = loss.item()
        _check_finite(value, "discriminator pretraining loss")
        if (step + 1) % max(1, cfg.eval_interval) == 0 or step == steps - 1:
            history.log(it=step + 1, phase="d_pretrain", loss=round(value, 6))
    return history


def update_value_network(V: ValueNet, optimizer, xs_list, ys_list,
                         targets: torch.Tensor, grad_clip: float = 5.0) -> float:
    """One squared-error step pulling V(s_t) toward the given per-step targets.

    Targets are treated as constants; they never backpropagate into whatever
    produced them.
    """
    xs, x_lens = pad_batch(xs_list, V.cfg.pad_id)
    ys, y_lens = pad_batch(ys_list, V.cfg.pad_id)
    mask = length_mask(y_lens, ys.size(1))
    optimizer.zero_grad(set_to_none=True)
    pred = V.step_scores(xs, x_lens, ys, y_lens)
    loss = ((pred - targets.detach()) ** 2)[mask].mean()
    loss.backward()
    torch.nn.utils.clip_grad_norm_(V.parameters(), grad_clip)
    optimizer.step()
    return loss.item()


class GanTrainer:
    """The adversarial loop; owns optimizers, rng and history for one run."""

    def __init__(self, G: Generator, D: Discriminator, V: ValueNet,
                 strategy: StrategyConfig, dataset: CountingDataset, cfg: TrainingConfig,
                 run_dir=None, history: TrainingHistory | None = None):
        if strategy.kind == "mle":
            raise ValueError("the adversarial loop needs a GAN strategy")
        self.G, self.D, self.V = G, D, V
        self.strategy = strategy
        self.dataset = dataset
        self.cfg = cfg
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.opt_g = build_optimizer(G.parameters(), cfg.optimizer, cfg.learning_rate)
        self.opt_d = build_optimizer(D.parameters(), cfg.optimizer, cfg.learning_rate)
        self.opt_v = build_optimizer(V.parameters(), cfg.optimizer, cfg.learning_rate)
        self.rng = make_rng(cfg.seed + 2)
        self.history = history or TrainingHistory()
        self.timings: list[float] = []
        self.iteration = 0
        if self.run_dir is not None:
            (self.run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)

    def _real_batch(self):
        idx = torch.randint(len(self.dataset.train), (self.cfg.batch_size,), generator=self.rng)
        batch = [self.dataset.train[i] for i in idx.tolist()]
        xs = [ex.input for ex in batch]
        reals = [_real_trajectory(ex, self.D.cfg.eos_id) for ex in batch]
        return xs, reals

    def step(self) -> dict:
        started = time.perf_counter()
        d_loss = v_loss = g_loss = 0.0

        xs = fakes = None
        for _ in range(self.cfg.d_iterations):
            xs, reals = self._real_batch()
            fakes = sample_trajectories(self.G, xs, self.rng)
            self.opt_d.zero_grad(set_to_none=True)
            loss = batch_discriminator_loss(self.strategy, self.D, xs, reals, xs, fakes, rng=self.rng)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(self.D.parameters(), self.cfg.grad_clip)
            self.opt_d.step()
            d_loss = loss.item()
            _check_finite(d_loss, "discriminator loss")

        targets = step_scores_batch(self.D, xs, fakes)
        v_loss = update_value_network(self.V, self.opt_v, xs, fakes, targets, self.cfg.grad_clip)
        _check_finite(v_loss, "value loss")

        for _ in range(self.cfg.g_iterations):
            idx = torch.randint(len(self.dataset.train), (self.cfg.batch_size,), generator=self.rng)
            g_xs = [self.dataset.train[i].input for i in idx.tolist()]
            g_fakes = sample_trajectories(self.G, g_xs, self.rng)
            self.opt_g.zero_grad(set_to_none=True)
            loss = generator_surrogate_loss(self.strategy, self.G, self.D, self.V, g_xs, g_fakes, rng=self.rng)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(self.G.parameters(), self.cfg.grad_clip)
            self.opt_g.step()
            g_loss = loss.item()
            _check_finite(g_loss, "generator loss")

        self.iteration += 1
        self.timings.append(time.perf_counter() - started)
        return {"d_loss": d_loss, "v_loss": v_loss, "g_loss": g_loss}

    def _snapshot(self):
        tag = f"iter_{self.iteration:06d}"
        if self.run_dir is not None:
            g_path = self.run_dir / "checkpoints" / f"{tag}_g.pt"
            d_path = self.run_dir / "checkpoints" / f"{tag}_d.pt"
            save_checkpoint(self.G, g_path)
            save_checkpoint(self.D, d_path)
            self.history.log(it=self.iteration, event="checkpoint",
                             generator=f"checkpoints/{tag}_g.pt",
                             discriminator=f"checkpoints/{tag}_d.pt")
        if self.cfg.eval_inputs is None or self.cfg.eval_inputs > 0:
            from .evaluation import evaluate_model, append_eval_csv

            subset = self.dataset.test
            if self.cfg.eval_inputs is not None:
                subset = subset[: self.cfg.eval_inputs]
            if subset:
                report = evaluate_model(
                    self.G, subset, n_samples=self.cfg.eval_samples,
                    rng_seed=self.cfg.seed + 3, model_id=self.strategy.kind,
                    iteration=self.iteration, seed=self.cfg.seed,
                )
                self.history.log(it=self.iteration, event="eval", **report.as_record())
                if self.run_dir is not None:
                    append_eval_csv(self.run_dir / "eval.csv", report)

    def run(self) -> TrainingHistory:
        if self.iteration == 0:
            self._snapshot()
        try:
            while self.iteration < self.cfg.total_iterations:
                losses = self.step()
                self.history.log(it=self.iteration, phase="gan",
                                 **{k: round(v, 6) for k, v in losses.items()})
                if self.iteration % self.cfg.eval_interval == 0:
                    self._snapshot()
        except DivergenceError:
            # keep the periodic checkpoints; do not overwrite them with NaNs
            self._finalize(save_models=False)
            raise
        self._finalize(save_models=True)
        return self.history

    def _finalize(self, save_models: bool = True):
        if self.run_dir is not None:
            if save_models:
                save_checkpoint(self.G, self.run_dir / "checkpoints" / "final_g.pt")
                save_checkpoint(self.D, self.run_dir / "checkpoints" / "final_d.pt")
                save_checkpoint(self.V, self.run_dir / "checkpoints" / "final_v.pt")
            self.history.save(self.run_dir / "history.log")
            with open(self.run_dir / "timings.log", "w") as f:
                for i, dt in enumerate(self.timings, start=1):
                    f.write(f"{i} {dt:.6f}\n")

    def state_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "models": {
                "g": copy.deepcopy(self.G.state_dict()),
                "d": copy.deepcopy(self.D.state_dict()),
                "v": copy.deepcopy(self.V.state_dict()),
            },
            "optimizers": {
                "g": copy.deepcopy(self.opt_g.state_dict()),
                "d": copy.deepcopy(self.opt_d.state_dict()),
                "v": copy.deepcopy(self.opt_v.state_dict()),
            },
            "rng": self.rng.get_state(),
            "records": copy.deepcopy(self.history.records),
        }

    def load_state_dict(self, state: dict):
        self.iteration = state["iteration"]
        self.G.load_state_dict(state["models"]["g"])
        self.D.load_state_dict(state["models"]["d"])
        self.V.load_state_dict(state["models"]["v"])
        self.opt_g.load_state_dict(state["optimizers"]["g"])
        self.opt_d.load_state_dict(state["optimizers"]["d"])
        self.opt_v.load_state_dict(state["optimizers"]["v"])
        self.rng.set_state(state["rng"])
        self.history = TrainingHistory(copy.deepcopy(state["records"]))

    def save_state(self, path):
        torch.save(self.state_dict(), path)

    def load_state(self, path):
        self.load_state_dict(torch.load(path, map_location="cpu", weights_only=False))


def train_gan(G: Generator, D: Discriminator, V: ValueNet, strategy: StrategyConfig,
              dataset: CountingDataset, cfg: TrainingConfig, run_dir=None) -> TrainingHistory:
    """Run the full adversarial loop; returns the training history."""
    return GanTrainer(G, D, V, strategy, dataset, cfg, run_dir=run_dir).run()
