"""Recurrent encoder-decoder machinery: generator, per-step discriminator, value net.

Token conventions
-----------------
The vocabulary is the ten digits (token id == digit value) plus PAD, BOS and
EOS.  PAD is used only to right-pad batches and is masked out of every loss
and score.  A *trajectory* is the raw sampled token list including the
terminating EOS when one was drawn (so it is never empty); a *response* is the
trajectory with the trailing EOS stripped, which is what task-level code sees.

The discriminator emits one scalar per scored token: the t-th scalar is a
function of (x, y_{1:t}).  The value net has the same structure but its t-th
scalar is a function of (x, y_{1:t-1}) -- its decoder inputs are shifted by
one (BOS first), so it estimates the state value before the step-t token is
chosen.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

DIGITS = tuple(range(10))
PAD = 10
BOS = 11
EOS = 12
VOCAB_SIZE = 13

DEFAULT_MAX_LEN = 4  # three digits plus EOS

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)

CHECKPOINT_VERSION = 1

AGGREGATIONS = ("mean", "last", "random_step", "all_steps")


@dataclass
class ModelConfig:
    hidden_size: int = 512
    embed_size: int = 64
    vocab_size: int = VOCAB_SIZE
    max_len: int = DEFAULT_MAX_LEN
    pad_id: int = PAD
    bos_id: int = BOS
    eos_id: int = EOS


def make_rng(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def pad_batch(seqs, pad_id: int):
    """Right-pad a list of int sequences; returns (tokens [B,L], lengths [B])."""
    lens = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    max_len = max(1, int(lens.max()))
    out = torch.full((len(seqs), max_len), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        if len(s) > 0:
            out[i, : len(s)] = torch.tensor(list(s), dtype=torch.long)
    return out, lens


def length_mask(lens: torch.Tensor, max_len: int) -> torch.Tensor:
    return torch.arange(max_len).unsqueeze(0) < lens.unsqueeze(1)


class Seq2SeqBase(nn.Module):
    """Shared encoder-decoder trunk: one embedding table, two single-layer GRUs."""

    def __init__(self, cfg: ModelConfig, init_seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.embed_size)
        self.encoder = nn.GRU(cfg.embed_size, cfg.hidden_size, batch_first=True)
        self.decoder = nn.GRU(cfg.embed_size, cfg.hidden_size, batch_first=True)
        self.to(dtype)
        self.init_seed = init_seed

    def reset_parameters(self, seed: int) -> None:
        g = make_rng(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.uniform_(-0.08, 0.08, generator=g)
        self.init_seed = seed

    def encode(self, xs: torch.Tensor, x_lens: torch.Tensor) -> torch.Tensor:
        """Final encoder hidden state per sequence, [B, H]."""
        out, _ = self.encoder(self.embed(xs))
        idx = (x_lens - 1).clamp(min=0).view(-1, 1, 1).expand(-1, 1, out.size(-1))
        return out.gather(1, idx).squeeze(1)

    def decode_states(self, h0: torch.Tensor, inputs: torch.Tensor) -> torch.Tensor:
        """Teacher-forced decoder hidden states, [B, T, H]."""
        out, _ = self.decoder(self.embed(inputs), h0.unsqueeze(0).contiguous())
        return out


def log_probs_from_logits(logits: torch.Tensor) -> torch.Tensor:
    """Normalized log-probabilities, floored at log(1e-12)."""
    return F.log_softmax(logits, dim=-1).clamp(min=LOG_FLOOR)


class Generator(Seq2SeqBase):
    """Autoregressive conditional generator; defines P_G(y|x)."""

    checkpoint_kind = "generator"

    def __init__(self, cfg: ModelConfig, init_seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__(cfg, init_seed, dtype)
        self.proj = nn.Linear(cfg.hidden_size, cfg.vocab_size)
        self.to(dtype)
        self.reset_parameters(init_seed)

    def initial_state(self, xs: torch.Tensor, x_lens: torch.Tensor) -> torch.Tensor:
        return self.encode(xs, x_lens)

    def decode_step(self, h: torch.Tensor, toks: torch.Tensor):
        """Consume one token per row; returns (next state [B,H], logits [B,V])."""
        out, _ = self.decoder(self.embed(toks).unsqueeze(1), h.unsqueeze(0).contiguous())
        h_next = out.squeeze(1)
        return h_next, self.proj(h_next)

    def step_log_probs(self, states: torch.Tensor) -> torch.Tensor:
        """Per-step log P over the vocabulary, floored at log(1e-12)."""
        return log_probs_from_logits(self.proj(states))

    def forced_log_probs(self, xs, x_lens, ys, y_lens):
        """Log P_G(y_t | x, y_{1:t-1}) for every step of right-padded ys, [B, T].

        Padded positions are zeroed.  ys are scored exactly as given; the
        caller decides whether a terminating EOS is part of the sequence.
        """
        h0 = self.encode(xs, x_lens)
        bos = torch.full((ys.size(0), 1), self.cfg.bos_id, dtype=torch.long)
        inputs = torch.cat([bos, ys[:, :-1]], dim=1) if ys.size(1) > 1 else bos
        states = self.decode_states(h0, inputs)
        logp = self.step_log_probs(states).gather(2, ys.unsqueeze(2)).squeeze(2)
        return logp * length_mask(y_lens, ys.size(1)).to(logp.dtype)


class StepScorer(Seq2SeqBase):
    """Encoder-decoder with a per-step scalar head squashed into (0, 1)."""

    shift_inputs = False  # True: scalar t conditions on y_{1:t-1} instead of y_{1:t}

    def __init__(self, cfg: ModelConfig, init_seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__(cfg, init_seed, dtype)
        self.head = nn.Linear(cfg.hidden_size, 1)
        self.to(dtype)
        self.reset_parameters(init_seed)

    def step_scores(self, xs, x_lens, ys, y_lens) -> torch.Tensor:
        """One scalar in (0,1) per scored token, [B, T]; padded positions zeroed."""
        h0 = self.encode(xs, x_lens)
        if self.shift_inputs:
            bos = torch.full((ys.size(0), 1), self.cfg.bos_id, dtype=torch.long)
            inputs = torch.cat([bos, ys[:, :-1]], dim=1) if ys.size(1) > 1 else bos
        else:
            inputs = ys
        states = self.decode_states(h0, inputs)
        scores = torch.sigmoid(self.head(states)).squeeze(2)
        return scores * length_mask(y_lens, ys.size(1)).to(scores.dtype)


class Discriminator(StepScorer):
    """Per-step scorer whose t-th scalar estimates the state-action value of y_t."""

    checkpoint_kind = "discriminator"
    shift_inputs = False


class ValueNet(StepScorer):
    """Same trunk as the discriminator; t-th scalar is the state value before y_t."""

    checkpoint_kind = "value"
    shift_inputs = True


# ---------------------------------------------------------------------------
# sampling and decoding


def _greedy_pick(logits: torch.Tensor) -> torch.Tensor:
    # argmax with ties broken toward the lowest token id
    top = logits.max(dim=-1, keepdim=True).values
    ids = torch.arange(logits.size(-1))
    return torch.where(logits == top, ids, logits.size(-1)).min(dim=-1).values


@torch.no_grad()
def _autoregress(G: Generator, xs, x_lens, max_len: int, rng=None,
                 h: torch.Tensor | None = None, first_input: torch.Tensor | None = None):
    """Roll the decoder forward, sampling (rng given) or taking argmax.

    Returns a list of trajectories (token lists, EOS kept when drawn).  When h
    and first_input are given the loop continues an existing decode instead of
    starting from BOS.
    """
    batch = xs.size(0) if xs is not None else h.size(0)
    if h is None:
        h = G.initial_state(xs, x_lens)
    inp = first_input if first_input is not None else torch.full((batch,), G.cfg.bos_id, dtype=torch.long)
    done = [False] * batch
    trajectories: list[list[int]] = [[] for _ in range(batch)]
    eos = G.cfg.eos_id
    for _ in range(max_len):
        h, logits = G.decode_step(h, inp)
        if rng is None:
            tok = _greedy_pick(logits)
        else:
            tok = torch.multinomial(F.softmax(logits, dim=-1), 1, generator=rng).squeeze(1)
        for i, t in enumerate(tok.tolist()):
            if not done[i]:
                trajectories[i].append(t)
                if t == eos:
                    done[i] = True
        if all(done):
            break
        inp = tok
    return trajectories


def strip_eos(trajectory, eos_id: int = EOS) -> list[int]:
    traj = list(trajectory)
    if traj and traj[-1] == eos_id:
        return traj[:-1]
    return traj


def sample_trajectories(G: Generator, xs_list, rng: torch.Generator, max_len: int | None = None) -> list[list[int]]:
    """Sample one trajectory per input (EOS kept); batched."""
    max_len = max_len or G.cfg.max_len
    xs, x_lens = pad_batch(xs_list, G.cfg.pad_id)
    return _autoregress(G, xs, x_lens, max_len, rng=rng)


def sample_response(G: Generator, x, rng: torch.Generator, max_len: int | None = None) -> list[int]:
    """Sample a single response for x (EOS stripped)."""
    return strip_eos(sample_trajectories(G, [x], rng, max_len)[0], G.cfg.eos_id)


def decode_argmax_batch(G: Generator, xs_list, max_len: int | None = None) -> list[list[int]]:
    max_len = max_len or G.cfg.max_len
    xs, x_lens = pad_batch(xs_list, G.cfg.pad_id)
    return [strip_eos(t, G.cfg.eos_id) for t in _autoregress(G, xs, x_lens, max_len, rng=None)]


def decode_argmax(G: Generator, x, max_len: int | None = None) -> list[int]:
    """Greedy response for x; per-step ties go to the lowest token id."""
    return decode_argmax_batch(G, [x], max_len)[0]


def continue_trajectories(G: Generator, x, prefix, n: int, rng: torch.Generator,
                          max_len: int | None = None) -> list[list[int]]:
    """Sample n continuations of prefix under P_G(.|x, prefix); EOS kept.

    Returns empty continuations when the prefix already ends in EOS or has
    used up the generation budget.
    """
    max_len = max_len or G.cfg.max_len
    prefix = list(prefix)
    budget = max_len - len(prefix)
    if budget <= 0 or (prefix and prefix[-1] == G.cfg.eos_id):
        return [[] for _ in range(n)]
    xs, x_lens = pad_batch([x] * n, G.cfg.pad_id)
    with torch.no_grad():
        h0 = G.encode(xs, x_lens)
        if len(prefix) == 0:
            h, first = h0, torch.full((n,), G.cfg.bos_id, dtype=torch.long)
        else:
            inputs = torch.tensor([[G.cfg.bos_id] + prefix[:-1]] * n, dtype=torch.long)
            h = G.decode_states(h0, inputs)[:, -1]  # after consuming prefix[:-1]
            first = torch.full((n,), prefix[-1], dtype=torch.long)
        return _autoregress(G, xs, x_lens, budget, rng=rng, h=h, first_input=first)


# ---------------------------------------------------------------------------
# forced scoring


def trajectory_log_probs(G: Generator, xs_list, ys_list) -> torch.Tensor:
    """Total log P_G of each token list exactly as given (no EOS appended), [B]."""
    xs, x_lens = pad_batch(xs_list, G.cfg.pad_id)
    ys, y_lens = pad_batch(ys_list, G.cfg.pad_id)
    with torch.no_grad():
        return G.forced_log_probs(xs, x_lens, ys, y_lens).sum(dim=1)


def sequence_log_prob(G: Generator, x, y, max_len: int | None = None) -> float:
    """Log P_G(y|x) of a response, including the terminating EOS factor.

    Responses shorter than max_len must end with EOS to terminate, so the EOS
    step is part of their probability; length-max_len responses are the
    truncation bucket and carry no EOS factor.
    """
    max_len = max_len or G.cfg.max_len
    y = list(y)
    if len(y) == 0:
        raise ValueError("y must be non-empty")
    scored = y + [G.cfg.eos_id] if len(y) < max_len else y
    return float(trajectory_log_probs(G, [x], [scored])[0])


def batch_sequence_log_probs(G: Generator, xs_list, ys_list, max_len: int | None = None) -> torch.Tensor:
    max_len = max_len or G.cfg.max_len
    scored = [list(y) + [G.cfg.eos_id] if len(y) < max_len else list(y) for y in ys_list]
    return trajectory_log_probs(G, xs_list, scored)


def step_scores_batch(model: StepScorer, xs_list, ys_list) -> torch.Tensor:
    xs, x_lens = pad_batch(xs_list, model.cfg.pad_id)
    ys, y_lens = pad_batch(ys_list, model.cfg.pad_id)
    with torch.no_grad():
        return model.step_scores(xs, x_lens, ys, y_lens)


def discriminate_steps(D: Discriminator, x, y) -> list[float]:
    """Per-step scalars Q(s_t, y_t) for one (x, y) pair."""
    if len(y) == 0:
        raise ValueError("y must be non-empty")
    return step_scores_batch(D, [x], [y])[0].tolist()


def value_estimates(V: ValueNet, x, y) -> list[float]:
    """Per-step state values V(s_t) for one (x, y) pair."""
    if len(y) == 0:
        raise ValueError("y must be non-empty")
    return step_scores_batch(V, [x], [y])[0].tolist()


def aggregate_scores(scores: list[float], aggregation: str, rng: torch.Generator | None = None):
    """Collapse per-step scalars into one D(x, y) value.

    mean: arithmetic mean (StepGAN); last: final scalar (SeqGAN, MCTS);
    random_step: one uniformly drawn scalar (REGS, needs rng); all_steps: the
    full list (MaskGAN).
    """
    if aggregation == "mean":
        return sum(scores) / len(scores)
    if aggregation == "last":
        return scores[-1]
    if aggregation == "random_step":
        if rng is None:
            raise ValueError("random_step aggregation needs an rng")
        return scores[int(torch.randint(len(scores), (1,), generator=rng))]
    if aggregation == "all_steps":
        return list(scores)
    raise ValueError(f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}")


def discriminator_score(D: Discriminator, x, y, aggregation: str, rng: torch.Generator | None = None):
    """The strategy-aggregated discriminator score of one (x, y) pair."""
    return aggregate_scores(discriminate_steps(D, x, y), aggregation, rng=rng)


# ---------------------------------------------------------------------------
# checkpoints

_MODEL_CLASSES = {}


def _register(cls):
    _MODEL_CLASSES[cls.checkpoint_kind] = cls
    return cls


for _cls in (Generator, Discriminator, ValueNet):
    _register(_cls)


def save_checkpoint(model, path) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "kind": model.checkpoint_kind,
            "config": asdict(model.cfg),
            "init_seed": model.init_seed,
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path):
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('format_version')}")
    cfg = ModelConfig(**blob["config"])
    dtype = next(iter(blob["state_dict"].values())).dtype
    model = _MODEL_CLASSES[blob["kind"]](cfg, init_seed=blob["init_seed"], dtype=dtype)
    model.load_state_dict(blob["state_dict"])
    return model
