"""Shared test doubles and independent oracle implementations.

The doubles wear the generator/discriminator interfaces but compute scripted
or exact values; the naive_* functions recompute metrics with per-sequence
loops so the batched implementations have something independent to match.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import torch
import torch.nn.functional as F

from stepwise_gan.models import (
    EOS,
    LOG_FLOOR,
    Discriminator,
    Generator,
    ModelConfig,
    length_mask,
    log_probs_from_logits,
    pad_batch,
)

BIG = 50.0  # logit large enough that softmax puts ~1 on the chosen token


def tiny_model_config(hidden: int = 12, embed: int = 6, max_len: int = 4) -> ModelConfig:
    return ModelConfig(hidden_size=hidden, embed_size=embed, max_len=max_len)


def toy_model_config(max_len: int = 2) -> ModelConfig:
    """Two-token world: token 0 plus EOS=1; BOS/PAD share id 0 (inputs only)."""
    return ModelConfig(hidden_size=5, embed_size=3, vocab_size=2,
                       max_len=max_len, pad_id=0, bos_id=0, eos_id=1)


class ForcedGenerator(Generator):
    """Emits a fixed token script regardless of input, then EOS forever."""

    def __init__(self, script, cfg: ModelConfig | None = None):
        super().__init__(cfg or tiny_model_config(hidden=2, embed=2), init_seed=0)
        self.script = list(script)

    def initial_state(self, xs, x_lens):
        return torch.zeros(xs.size(0), 1)

    def encode(self, xs, x_lens):
        return self.initial_state(xs, x_lens)

    def decode_step(self, h, toks):
        pos = h[:, 0].long()
        logits = torch.zeros(h.size(0), self.cfg.vocab_size)
        for i, p in enumerate(pos.tolist()):
            tok = self.script[p] if p < len(self.script) else self.cfg.eos_id
            logits[i, tok] = BIG
        return h + 1.0, logits

    def forced_log_probs(self, xs, x_lens, ys, y_lens):
        h = self.initial_state(xs, x_lens)
        inp = torch.full((ys.size(0),), self.cfg.bos_id, dtype=torch.long)
        cols = []
        for t in range(ys.size(1)):
            h, logits = self.decode_step(h, inp)
            cols.append(log_probs_from_logits(logits).gather(1, ys[:, t : t + 1]).squeeze(1))
            inp = ys[:, t]
        out = torch.stack(cols, dim=1)
        return out * length_mask(y_lens, ys.size(1)).to(out.dtype)


class PatternScorer(Discriminator):
    """Discriminator double whose per-step scores come from a python function."""

    def __init__(self, fn, cfg: ModelConfig | None = None):
        super().__init__(cfg or tiny_model_config(hidden=2, embed=2), init_seed=0)
        self.fn = fn  # token list -> list of floats

    def step_scores(self, xs, x_lens, ys, y_lens):
        out = torch.zeros(ys.size(0), ys.size(1), dtype=torch.float64)
        for i, n in enumerate(y_lens.tolist()):
            scores = self.fn(ys[i, :n].tolist())
            out[i, :n] = torch.tensor(scores, dtype=out.dtype)
        return out


def scripted_scorer(scores) -> PatternScorer:
    scores = list(scores)
    return PatternScorer(lambda y: scores[: len(y)] + [scores[-1]] * max(0, len(y) - len(scores)))


# ---------------------------------------------------------------------------
# numpy GRU reference (torch gate conventions: reset, update, new)


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def gru_cell_numpy(x, h, w_ih, b_ih, w_hh, b_hh):
    gi = w_ih @ x + b_ih
    gh = w_hh @ h + b_hh
    hs = len(h)
    r = _sigmoid(gi[:hs] + gh[:hs])
    z = _sigmoid(gi[hs : 2 * hs] + gh[hs : 2 * hs])
    n = np.tanh(gi[2 * hs :] + r * gh[2 * hs :])
    return (1.0 - z) * n + z * h


def gru_forward_numpy(module: torch.nn.GRU, inputs: np.ndarray, h0: np.ndarray) -> np.ndarray:
    """Hidden state after feeding each row of inputs [T, E] in sequence."""
    w_ih = module.weight_ih_l0.detach().numpy()
    w_hh = module.weight_hh_l0.detach().numpy()
    b_ih = module.bias_ih_l0.detach().numpy()
    b_hh = module.bias_hh_l0.detach().numpy()
    h = h0.copy()
    states = []
    for x in inputs:
        h = gru_cell_numpy(x, h, w_ih, b_ih, w_hh, b_hh)
        states.append(h.copy())
    return np.stack(states)


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_grads(model: torch.nn.Module, loss_fn, eps: float = 1e-5) -> dict[str, torch.Tensor]:
    grads = {}
    for name, p in model.named_parameters():
        g = torch.zeros_like(p)
        flat = p.data.view(-1)
        gflat = g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic: dict[str, torch.Tensor], numeric: dict[str, torch.Tensor]) -> float:
    """Largest elementwise relative error; near-zero pairs are held to 1e-9 absolute."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        diff = (a - n).abs()
        scale = torch.maximum(a.abs(), n.abs())
        meaningful = scale > 1e-5
        if meaningful.any():
            worst = max(worst, (diff[meaningful] / scale[meaningful]).max().item())
        if (~meaningful).any():
            assert diff[~meaningful].max().item() < 1e-9, f"{name}: near-zero gradients disagree"
    return worst


# ---------------------------------------------------------------------------
# naive metric reimplementations


def naive_sequence_log_prob(G: Generator, x, tokens) -> float:
    """Per-sequence loop over decode_step; no batching, padding or gather."""
    xs, x_lens = pad_batch([x], G.cfg.pad_id)
    h = G.initial_state(xs, x_lens)
    inp = torch.tensor([G.cfg.bos_id])
    total = 0.0
    with torch.no_grad():
        for tok in tokens:
            h, logits = G.decode_step(h, inp)
            lp = F.log_softmax(logits, dim=-1)[0, tok].item()
            total += max(lp, LOG_FLOOR)
            inp = torch.tensor([tok])
    return total


def naive_fkld(G: Generator, testset) -> float:
    from stepwise_gan.counting import enumerate_answers

    total = 0.0
    for ex in testset:
        n = len(ex.input)
        for ans in enumerate_answers(ex.input):
            lp = max(naive_sequence_log_prob(G, ex.input, list(ans) + [G.cfg.eos_id]), LOG_FLOOR)
            total += (1.0 / n) * (math.log(1.0 / n) - lp)
    return total / len(testset)


def naive_ikld(G: Generator, testset, eps: float) -> float:
    from stepwise_gan.counting import enumerate_answers

    total = 0.0
    for ex in testset:
        answers = enumerate_answers(ex.input)
        n = len(ex.input)
        mass = 0.0
        acc = 0.0
        for length in range(1, G.cfg.max_len):
            for seq in itertools.product(range(10), repeat=length):
                lp = naive_sequence_log_prob(G, ex.input, list(seq) + [G.cfg.eos_id])
                p = math.exp(lp)
                mass += p
                if p < 1e-12:
                    continue
                p_r = (1.0 / n) if (length == 3 and seq in answers) else eps
                acc += p * (lp - math.log(p_r))
        rest = max(0.0, 1.0 - mass)
        if rest >= 1e-12:
            acc += rest * (math.log(rest) - math.log(eps))
        total += acc
    return total / len(testset)


def naive_distinct_ngrams(responses, n: int) -> float:
    seen = []
    total = 0
    for resp in responses:
        resp = list(resp)
        total += len(resp)
        for i in range(len(resp) - n + 1):
            gram = tuple(resp[i : i + n])
            if gram not in seen:
                seen.append(gram)
    return len(seen) / total


def naive_variance(rows) -> list[float]:
    cols = list(zip(*rows))
    out = []
    for col in cols:
        mean = sum(col) / len(col)
        out.append(sum((v - mean) ** 2 for v in col) / len(col))
    return out


def enumerate_trajectories(n_tokens: int, eos_id: int, max_len: int):
    """Every trajectory of a model with the given token count and budget."""
    others = [t for t in range(n_tokens) if t != eos_id]
    trajs = [[eos_id]]
    for length in range(1, max_len):
        for seq in itertools.product(others, repeat=length):
            trajs.append(list(seq) + [eos_id])
    for seq in itertools.product(others, repeat=max_len):
        trajs.append(list(seq))
    return trajs
