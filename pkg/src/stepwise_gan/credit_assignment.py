"""Credit-assignment strategies: per-step weights and discriminator targets.

Each strategy defines (a) how the discriminator's per-step scalars are
aggregated into the score its training loss uses and (b) the per-timestep
weight w_t multiplying grad log P_G(y_t | x, y_{1:t-1}) in the generator
update:

    seqgan    w_t = last-step scalar, same for all t
    regs      w_t = Q(s_t, y_t)
    mcts      w_t = mean over I sampled completions of the last-step scalar
    maskgan   w_t = sum_{tau >= t} Q(s_tau, y_tau)
    stepgan   w_t = alpha_t * (Q(s_t, y_t) - V(s_t)),  alpha_t = 1
    stepgan_w same with decaying alpha_t = M - t (+ configurable offset)

Weights are always detached: no gradient flows through D or V into G.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .models import (
    PROB_FLOOR,
    Discriminator,
    Generator,
    ValueNet,
    length_mask,
    pad_batch,
    step_scores_batch,
)

KINDS = ("mle", "seqgan", "regs", "mcts", "maskgan", "stepgan", "stepgan_w")
GAN_KINDS = tuple(k for k in KINDS if k != "mle")

# stepgan variants always subtract the value baseline (it is part of their
# update rule); for the rest the baseline is an optional variance reducer,
# off by default only for seqgan to match its plain sequence-level form.
_BASELINE_DEFAULTS = {
    "seqgan": False,
    "regs": True,
    "mcts": True,
    "maskgan": True,
    "stepgan": True,
    "stepgan_w": True,
}


@dataclass
class StrategyConfig:
    kind: str = "stepgan"
    rollout_count: int = 5  # mcts only
    alpha_schedule: str | None = None  # None resolves per kind
    alpha_offset: float = 0.0  # decaying alpha_t = M - t + offset
    baseline_enabled: bool | None = None  # None resolves per kind

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")
        if self.rollout_count < 1:
            raise ValueError("rollout_count must be >= 1")
        if self.alpha_schedule not in (None, "uniform", "decaying"):
            raise ValueError(f"unknown alpha_schedule {self.alpha_schedule!r}")
        if self.alpha_schedule == "decaying" and self.kind != "stepgan_w":
            raise ValueError("decaying alpha_schedule is reserved for stepgan_w")

    @property
    def resolved_alpha_schedule(self) -> str:
        if self.alpha_schedule is not None:
            return self.alpha_schedule
        return "decaying" if self.kind == "stepgan_w" else "uniform"

    @property
    def resolved_baseline(self) -> bool:
        if self.kind == "mle":
            return False
        if self.baseline_enabled is not None:
            return self.baseline_enabled
        return _BASELINE_DEFAULTS[self.kind]


def _gather_last(scores: torch.Tensor, lens: torch.Tensor) -> torch.Tensor:
    return scores.gather(1, (lens - 1).clamp(min=0).unsqueeze(1)).squeeze(1)


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(min=PROB_FLOOR).log()


# ---------------------------------------------------------------------------
# discriminator loss


def batch_discriminator_loss(cfg: StrategyConfig, D: Discriminator,
                             xs_real, ys_real, xs_fake, ys_fake,
                             rng: torch.Generator | None = None) -> torch.Tensor:
    """Mean over pairs of -[log D(x, y*) + log(1 - D(x, y_fake))].

    D(x, y) is the strategy's aggregation of the per-step scalars; maskgan
    sums the per-step binary cross-entropy terms instead.
    """
    if cfg.kind == "mle":
        raise ValueError("mle has no discriminator")
    xr, xr_lens = pad_batch(xs_real, D.cfg.pad_id)
    yr, yr_lens = pad_batch(ys_real, D.cfg.pad_id)
    xf, xf_lens = pad_batch(xs_fake, D.cfg.pad_id)
    yf, yf_lens = pad_batch(ys_fake, D.cfg.pad_id)
    real = D.step_scores(xr, xr_lens, yr, yr_lens)
    fake = D.step_scores(xf, xf_lens, yf, yf_lens)
    real_mask = length_mask(yr_lens, real.size(1)).to(real.dtype)
    fake_mask = length_mask(yf_lens, fake.size(1)).to(fake.dtype)

    if cfg.kind == "maskgan":
        loss = -(_clamped_log(real) * real_mask).sum(1) - (_clamped_log(1.0 - fake) * fake_mask).sum(1)
        return loss.mean()

    if cfg.kind in ("seqgan", "mcts"):
        d_real = _gather_last(real, yr_lens)
        d_fake = _gather_last(fake, yf_lens)
    elif cfg.kind == "regs":
        if rng is None:
            raise ValueError("regs discriminator loss needs an rng to pick steps")
        t_real = (torch.rand(real.size(0), generator=rng) * yr_lens).long().clamp(max=real.size(1) - 1)
        t_fake = (torch.rand(fake.size(0), generator=rng) * yf_lens).long().clamp(max=fake.size(1) - 1)
        d_real = real.gather(1, t_real.unsqueeze(1)).squeeze(1)
        d_fake = fake.gather(1, t_fake.unsqueeze(1)).squeeze(1)
    else:  # stepgan, stepgan_w
        d_real = (real * real_mask).sum(1) / yr_lens.to(real.dtype)
        d_fake = (fake * fake_mask).sum(1) / yf_lens.to(fake.dtype)

    loss = -_clamped_log(d_real) - _clamped_log(1.0 - d_fake)
    return loss.mean()


def discriminator_loss(cfg: StrategyConfig, D: Discriminator, x, y_real, y_fake,
                       rng: torch.Generator | None = None) -> torch.Tensor:
    """Single-pair discriminator loss (see batch_discriminator_loss)."""
    return batch_discriminator_loss(cfg, D, [x], [y_real], [x], [y_fake], rng=rng)


# ---------------------------------------------------------------------------
# state-action value estimation


def mcts_rollout_value(G: Generator, D: Discriminator, x, prefix, rollout_count: int,
                       rng: torch.Generator, max_len: int | None = None) -> float:
    """Monte Carlo value of a prefix: mean last-step score over sampled completions.

    A prefix that already ends in EOS (or has exhausted the budget) is scored
    directly with no sampling.
    """
    from .models import continue_trajectories

    prefix = list(prefix)
    zs = continue_trajectories(G, x, prefix, rollout_count, rng, max_len=max_len)
    seqs = [prefix + z for z in zs]
    if all(len(z) == 0 for z in zs):
        seqs = seqs[:1]  # completions are identical; zero sampling variance
    scores = step_scores_batch(D, [x] * len(seqs), seqs)
    lens = torch.tensor([len(s) for s in seqs])
    return float(_gather_last(scores, lens).mean())


@torch.no_grad()
def _batch_mcts_values(G: Generator, D: Discriminator, xs_list, ys_list,
                       rollout_count: int, rng: torch.Generator, max_len: int) -> torch.Tensor:
    """Rollout values for every (sequence, step) pair at once, [B, T] masked."""
    from .models import _autoregress

    xs, x_lens = pad_batch(xs_list, G.cfg.pad_id)
    ys, y_lens = pad_batch(ys_list, G.cfg.pad_id)
    h0 = G.encode(xs, x_lens)
    bos = torch.full((ys.size(0), 1), G.cfg.bos_id, dtype=torch.long)
    # states[:, j] is the decoder state after consuming y_{1:j}; feeding y_t
    # from states[:, t-1] resumes generation exactly after prefix y_{1:t}
    states = G.decode_states(h0, torch.cat([bos, ys[:, :-1]], dim=1) if ys.size(1) > 1 else bos)

    direct = []  # (b, t0): prefix scored as-is, no sampling variance
    roll = []  # (b, t0, budget): needs rollout_count sampled completions
    for b, y in enumerate(ys_list):
        for t in range(1, len(y) + 1):
            budget = max_len - t
            if budget <= 0 or y[t - 1] == G.cfg.eos_id:
                direct.append((b, t - 1))
            else:
                roll.append((b, t - 1, budget))

    seqs = [list(ys_list[b][: t0 + 1]) for b, t0 in direct]
    groups = list(direct)
    if roll:
        h = torch.stack([states[b, t0] for b, t0, _ in roll]).repeat_interleave(rollout_count, dim=0)
        first = torch.tensor([ys_list[b][t0] for b, t0, _ in roll],
                             dtype=torch.long).repeat_interleave(rollout_count)
        zs = _autoregress(G, None, None, max(b for _, _, b in roll), rng=rng, h=h, first_input=first)
        for i, (b, t0, budget) in enumerate(roll):
            for z in zs[i * rollout_count : (i + 1) * rollout_count]:
                seqs.append(list(ys_list[b][: t0 + 1]) + z[:budget])
                groups.append((b, t0))

    score_xs = [xs_list[b] for b, _ in groups]
    scores = step_scores_batch(D, score_xs, seqs)
    lens = torch.tensor([len(s) for s in seqs])
    last = _gather_last(scores, lens)

    values = torch.zeros(ys.size(0), ys.size(1), dtype=last.dtype)
    counts = torch.zeros(ys.size(0), ys.size(1), dtype=last.dtype)
    for (b, t0), v in zip(groups, last.tolist()):
        values[b, t0] += v
        counts[b, t0] += 1.0
    return values / counts.clamp(min=1.0)


# ---------------------------------------------------------------------------
# generator step weights


@torch.no_grad()
def batch_step_weights(cfg: StrategyConfig, G: Generator, D: Discriminator,
                       V: ValueNet | None, xs_list, ys_list,
                       rng: torch.Generator | None = None,
                       max_len: int | None = None) -> torch.Tensor:
    """Detached per-step weights w_t for a batch of sampled sequences, [B, T]."""
    if cfg.kind == "mle":
        raise ValueError("mle does not use step weights")
    if cfg.resolved_baseline and V is None:
        raise ValueError(f"{cfg.kind} with baseline enabled needs a value net")
    max_len = max_len or G.cfg.max_len

    scores = step_scores_batch(D, xs_list, ys_list)
    lens = torch.tensor([len(y) for y in ys_list])
    mask = length_mask(lens, scores.size(1)).to(scores.dtype)

    if cfg.kind == "seqgan":
        weights = _gather_last(scores, lens).unsqueeze(1).expand_as(scores).contiguous()
    elif cfg.kind == "regs":
        weights = scores.clone()
    elif cfg.kind == "maskgan":
        weights = (scores * mask).flip(1).cumsum(1).flip(1)
    elif cfg.kind == "mcts":
        if rng is None:
            raise ValueError("mcts step weights need an rng for rollouts")
        weights = _batch_mcts_values(G, D, xs_list, ys_list, cfg.rollout_count, rng, max_len)
    else:  # stepgan, stepgan_w
        weights = scores.clone()

    if cfg.resolved_baseline:
        weights = weights - step_scores_batch(V, xs_list, ys_list)

    if cfg.kind in ("stepgan", "stepgan_w") and cfg.resolved_alpha_schedule == "decaying":
        t = torch.arange(1, scores.size(1) + 1, dtype=scores.dtype).unsqueeze(0)
        alpha = lens.to(scores.dtype).unsqueeze(1) - t + cfg.alpha_offset
        weights = weights * alpha

    return weights * mask


def step_weights(cfg: StrategyConfig, G: Generator, D: Discriminator, V: ValueNet | None,
                 x, y, rng: torch.Generator | None = None) -> list[float]:
    """Per-step generator weights for one sampled sequence."""
    if len(y) == 0:
        raise ValueError("y must be non-empty")
    return batch_step_weights(cfg, G, D, V, [x], [y], rng=rng)[0, : len(y)].tolist()


# ---------------------------------------------------------------------------
# generator gradient


def generator_surrogate_loss(cfg: StrategyConfig, G: Generator, D: Discriminator,
                             V: ValueNet | None, xs_list, ys_list,
                             rng: torch.Generator | None = None) -> torch.Tensor:
    """-mean_b sum_t w_t log P_G(y_t | x, y_{1:t-1}); backward gives the policy gradient."""
    weights = batch_step_weights(cfg, G, D, V, xs_list, ys_list, rng=rng)
    xs, x_lens = pad_batch(xs_list, G.cfg.pad_id)
    ys, y_lens = pad_batch(ys_list, G.cfg.pad_id)
    logp = G.forced_log_probs(xs, x_lens, ys, y_lens)
    return -(weights * logp).sum(dim=1).mean()


def gradient_for_responses(cfg: StrategyConfig, G: Generator, D: Discriminator,
                           V: ValueNet | None, xs_list, ys_list,
                           rng: torch.Generator | None = None) -> dict[str, torch.Tensor]:
    """Generator parameter gradients for given sampled responses."""
    G.zero_grad(set_to_none=True)
    loss = generator_surrogate_loss(cfg, G, D, V, xs_list, ys_list, rng=rng)
    loss.backward()
    grads = {name: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
             for name, p in G.named_parameters()}
    G.zero_grad(set_to_none=True)
    return grads


def generator_gradient(cfg: StrategyConfig, G: Generator, D: Discriminator,
                       V: ValueNet | None, xs_list, rng: torch.Generator,
                       max_len: int | None = None) -> dict[str, torch.Tensor]:
    """Policy gradient on responses sampled fresh from the current generator."""
    from .models import sample_trajectories

    ys_list = sample_trajectories(G, xs_list, rng, max_len=max_len)
    return gradient_for_responses(cfg, G, D, V, xs_list, ys_list, rng=rng)
