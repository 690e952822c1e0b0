"""Metrics over trained models: precision/recall, exact KL divergences, probes.

The counting task's answer set is fully enumerable, so FKLD is an exact sum
over the valid answers and IKLD is an exact sum over the whole output space:
every digit-only response of length 1..max_len-1 (each carrying its EOS
factor) is enumerated individually, and the residual probability mass --
length-max_len truncations plus anything containing a non-digit token -- is
folded into a single invalid bucket.  The unnormalized floor P~_R = eps on
invalid outcomes makes IKLD finite; only same-eps values are comparable.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass

import torch

from .counting import enumerate_answers, is_valid
from .models import (
    DIGITS,
    LOG_FLOOR,
    Discriminator,
    Generator,
    ModelConfig,
    ValueNet,
    _register,
    decode_argmax_batch,
    length_mask,
    log_probs_from_logits,
    make_rng,
    pad_batch,
    sample_trajectories,
    step_scores_batch,
    strip_eos,
    trajectory_log_probs,
)

IKLD_EPS = 1e-9
ENUMERATION_CAP = 1_000_000

EVAL_CSV_COLUMNS = (
    "model_id", "iteration", "seed", "prec", "samp_p", "samp_r",
    "fkld", "ikld", "fkld_plus_ikld", "ikld_eps",
    "dist_1", "dist_2", "dist_3", "len_avg", "general_count",
)


@dataclass
class EvalReport:
    prec: float
    samp_p: float
    samp_r: float
    fkld: float
    ikld: float
    fkld_plus_ikld: float
    ikld_eps: float
    dist_n: dict[int, float]
    len_avg: float
    general_count: int | None = None
    model_id: str = ""
    iteration: int = 0
    seed: int = 0

    def as_record(self) -> dict:
        rec = {
            "model_id": self.model_id, "iteration": self.iteration, "seed": self.seed,
            "prec": round(self.prec, 4), "samp_p": round(self.samp_p, 4),
            "samp_r": round(self.samp_r, 4), "fkld": round(self.fkld, 6),
            "ikld": round(self.ikld, 6), "fkld_plus_ikld": round(self.fkld_plus_ikld, 6),
            "ikld_eps": self.ikld_eps, "len_avg": round(self.len_avg, 4),
            "general_count": self.general_count,
        }
        for n, v in sorted(self.dist_n.items()):
            rec[f"dist_{n}"] = round(v, 6)
        return rec

    def csv_row(self) -> list:
        rec = self.as_record()
        return [rec.get(col, "") for col in EVAL_CSV_COLUMNS]


def append_eval_csv(path, report: EvalReport) -> None:
    path = str(path)
    try:
        new = open(path).read() == ""
    except FileNotFoundError:
        new = True
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if new:
            writer.writerow(EVAL_CSV_COLUMNS)
        row = report.csv_row()
        writer.writerow(["" if v is None else v for v in row])


# ---------------------------------------------------------------------------
# precision / recall


def precision_argmax(G: Generator, testset, chunk: int = 512) -> float:
    """Percentage of test inputs whose greedy response is a valid answer."""
    hits = 0
    for i in range(0, len(testset), chunk):
        batch = testset[i : i + chunk]
        responses = decode_argmax_batch(G, [ex.input for ex in batch])
        hits += sum(is_valid(ex.input, resp) for ex, resp in zip(batch, responses))
    return 100.0 * hits / len(testset)


def _sample_stats(inputs, samples_per_input) -> tuple[float, float]:
    """Pooled sample precision and mean per-input recall, both in percent."""
    valid_total = 0
    sample_total = 0
    recall_sum = 0.0
    for x, samples in zip(inputs, samples_per_input):
        answers = enumerate_answers(x)
        seen = set()
        for resp in samples:
            resp = tuple(resp)
            if len(resp) == 3 and resp in answers:
                valid_total += 1
                seen.add(resp)
            sample_total += 1
        recall_sum += len(seen) / len(answers)
    return 100.0 * valid_total / sample_total, 100.0 * recall_sum / len(inputs)


def sample_precision_recall(G: Generator, testset, n_samples: int = 100,
                            rng: torch.Generator | None = None, chunk: int = 16) -> tuple[float, float]:
    """SampP / SampR over n_samples stochastic responses per test input."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = rng or make_rng(0)
    inputs = [ex.input for ex in testset]
    samples_per_input = []
    for i in range(0, len(inputs), chunk):
        batch = inputs[i : i + chunk]
        tiled = [x for x in batch for _ in range(n_samples)]
        trajs = sample_trajectories(G, tiled, rng)
        for j in range(len(batch)):
            samples_per_input.append(
                [strip_eos(t, G.cfg.eos_id) for t in trajs[j * n_samples : (j + 1) * n_samples]]
            )
    return _sample_stats(inputs, samples_per_input)


# ---------------------------------------------------------------------------
# exact KL divergences


def forward_kld(G: Generator, testset, chunk: int = 256) -> float:
    """Mean over inputs of sum_y P_R(y|x) log(P_R(y|x) / P_G(y|x))."""
    pairs = []
    bounds = []
    for ex in testset:
        answers = sorted(enumerate_answers(ex.input))
        start = len(pairs)
        pairs.extend((ex.input, ans) for ans in answers)
        bounds.append((start, len(pairs), len(answers)))
    logps = torch.empty(len(pairs), dtype=torch.float64)
    for i in range(0, len(pairs), chunk):
        batch = pairs[i : i + chunk]
        scored = [list(ans) + [G.cfg.eos_id] for _, ans in batch]
        logps[i : i + len(batch)] = trajectory_log_probs(G, [x for x, _ in batch], scored).double()
    logps.clamp_(min=LOG_FLOOR)  # sequence-level probability floor
    total = 0.0
    for start, end, n in bounds:
        p_r = 1.0 / n
        total += sum(p_r * (math.log(p_r) - lp) for lp in logps[start:end].tolist())
    return total / len(testset)


@torch.no_grad()
def _enumerated_log_probs(G: Generator, inputs, max_depth: int):
    """Log P_G of every digit-only response of length 1..max_depth, per input.

    Returns a list of per-depth tensors; entry d has shape [B, 10**(d+1)] and
    holds the full sequence log-probability (EOS factor included) of each
    digit string of length d+1, ordered lexicographically.  Prefix states are
    shared, so the whole tree costs one decoder step per node.
    """
    eos = G.cfg.eos_id
    digit_ids = torch.tensor(DIGITS, dtype=torch.long)
    xs, x_lens = pad_batch(inputs, G.cfg.pad_id)
    batch = len(inputs)
    bos = torch.full((batch,), G.cfg.bos_id, dtype=torch.long)
    h, logits = G.decode_step(G.initial_state(xs, x_lens), bos)
    step_lp = log_probs_from_logits(logits).double()  # [B, V]

    per_depth = []
    prefix_lp = torch.zeros(batch, 1, dtype=torch.float64)
    states = h.unsqueeze(1)  # [B, 1, H]
    for _ in range(max_depth):
        width = states.size(1)
        # extend every prefix by each digit in one batched decoder step
        flat = states.reshape(batch * width, -1).repeat_interleave(10, dim=0)
        toks = digit_ids.repeat(batch * width)
        new_flat, logits = G.decode_step(flat, toks)
        new_states = new_flat.reshape(batch, width * 10, -1)
        next_lp = log_probs_from_logits(logits).double().reshape(batch, width * 10, -1)
        digit_lp = step_lp[..., digit_ids].reshape(batch, width, 10)
        prefix_lp = (prefix_lp.unsqueeze(2) + digit_lp).reshape(batch, width * 10)
        per_depth.append(prefix_lp + next_lp[..., eos])
        states = new_states
        step_lp = next_lp
    return per_depth


def inverse_kld(G: Generator, testset, eps: float = IKLD_EPS, chunk: int = 32) -> float:
    """Mean over inputs of sum_y P_G(y|x) log(P_G(y|x) / P~_R(y|x)).

    The sum runs over every digit-only response of length 1..max_len-1 plus a
    single bucket absorbing the residual mass (truncations and sequences with
    non-digit tokens); P~_R is 1/N on valid answers and eps elsewhere.
    Generator outcomes with probability below 1e-12 contribute nothing.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    max_depth = G.cfg.max_len - 1
    space = sum(10 ** d for d in range(1, max_depth + 1)) + 1
    if space > ENUMERATION_CAP:
        raise ValueError(f"enumeration space {space} exceeds cap {ENUMERATION_CAP}")
    log_eps = math.log(eps)
    total = 0.0
    for start in range(0, len(testset), chunk):
        batch = testset[start : start + chunk]
        inputs = [ex.input for ex in batch]
        per_depth = _enumerated_log_probs(G, inputs, max_depth)
        mass = torch.zeros(len(batch), dtype=torch.float64)
        contrib = torch.zeros(len(batch), dtype=torch.float64)
        for depth, lp in enumerate(per_depth, start=1):
            p = lp.exp()
            mass += p.sum(dim=1)
            if depth != 3:
                keep = p >= 1e-12
                contrib += torch.where(keep, p * (lp - log_eps), torch.zeros_like(p)).sum(dim=1)
            else:
                # length-3 strings can be valid answers; handle P~_R per input
                for b, ex in enumerate(batch):
                    n = len(ex.input)
                    log_pr_valid = math.log(1.0 / n)
                    answers = enumerate_answers(ex.input)
                    row = lp[b]
                    p_row = p[b]
                    idx = {ans: (ans[0] * 100 + ans[1] * 10 + ans[2]) for ans in answers}
                    keep = p_row >= 1e-12
                    log_pr = torch.full_like(row, log_eps)
                    for ans, j in idx.items():
                        log_pr[j] = log_pr_valid
                    contrib[b] += torch.where(keep, p_row * (row - log_pr), torch.zeros_like(p_row)).sum()
        rest = (1.0 - mass).clamp(min=0.0)
        bucket = torch.where(rest >= 1e-12, rest * (rest.log() - log_eps), torch.zeros_like(rest))
        total += (contrib + bucket).sum().item()
    return total / len(testset)


_LOG_TINY = math.log(1e-30)


class OracleGenerator(Generator):
    """The exact uniform-over-answers distribution wearing the generator interface.

    Instead of recurrent states it packs (N, consumed-token count, picked
    position, input digits) into its state rows and emits the exact
    conditionals of the counting rule: uniform over the N position tokens
    first, then the forced digit, the forced count and EOS.  Impossible tokens
    get probability 1e-30.  Useful as a reference point for metrics (both KL
    divergences are zero) and as a checkpointable eval fixture; loading its
    checkpoints requires this module to be imported.
    """

    checkpoint_kind = "oracle"

    def __init__(self, cfg: ModelConfig | None = None, init_seed: int = 0,
                 dtype: torch.dtype = torch.float64):
        cfg = cfg or ModelConfig(hidden_size=1, embed_size=1)
        super().__init__(cfg, init_seed, dtype)

    # state row: [N, consumed, j, x_1 .. x_L]; consumed -1 means BOS pending
    def initial_state(self, xs: torch.Tensor, x_lens: torch.Tensor) -> torch.Tensor:
        h = torch.zeros(xs.size(0), xs.size(1) + 3, dtype=torch.float64)
        h[:, 0] = x_lens.double()
        h[:, 1] = -1.0
        h[:, 2] = -1.0
        h[:, 3:] = xs.double()
        return h

    def encode(self, xs: torch.Tensor, x_lens: torch.Tensor) -> torch.Tensor:
        return self.initial_state(xs, x_lens)

    def decode_step(self, h: torch.Tensor, toks: torch.Tensor):
        h = h.clone()
        logits = torch.full((h.size(0), self.cfg.vocab_size), _LOG_TINY, dtype=torch.float64)
        for i, tok in enumerate(toks.tolist()):
            n = int(h[i, 0])
            consumed = int(h[i, 1])
            j = int(h[i, 2])
            if consumed == -1:
                stage = 0
            elif consumed == 0 and 0 <= tok < n:
                stage, j = 1, tok
            elif consumed == 1 and tok == int(h[i, 3 + j]):
                stage = 2
            elif consumed == 2 and tok == n - 1 - j:
                stage = 3
            else:
                stage = 4  # off the answer tree; emit an arbitrary proper distribution
            h[i, 1] = min(stage, 4)
            h[i, 2] = j
            if stage == 0:
                logits[i, :n] = -math.log(n)
            elif stage == 1:
                logits[i, int(h[i, 3 + j])] = 0.0
            elif stage == 2:
                logits[i, n - 1 - j] = 0.0
            elif stage == 3:
                logits[i, self.cfg.eos_id] = 0.0
            else:
                logits[i, :] = -math.log(self.cfg.vocab_size)
        return h, logits

    def forced_log_probs(self, xs, x_lens, ys, y_lens):
        h = self.initial_state(xs, x_lens)
        inp = torch.full((ys.size(0),), self.cfg.bos_id, dtype=torch.long)
        cols = []
        for t in range(ys.size(1)):
            h, logits = self.decode_step(h, inp)
            lp = log_probs_from_logits(logits)
            cols.append(lp.gather(1, ys[:, t : t + 1]).squeeze(1))
            inp = ys[:, t]
        out = torch.stack(cols, dim=1)
        return out * length_mask(y_lens, ys.size(1)).to(out.dtype)


_register(OracleGenerator)


# ---------------------------------------------------------------------------
# corpus statistics


def distinct_ngrams(responses, n: int) -> float:
    """Distinct n-gram count divided by the total token count of the corpus."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not responses:
        raise ValueError("empty corpus")
    grams = set()
    tokens = 0
    for resp in responses:
        resp = tuple(resp)
        tokens += len(resp)
        grams.update(resp[i : i + n] for i in range(len(resp) - n + 1))
    if tokens == 0:
        raise ValueError("corpus has no tokens")
    return len(grams) / tokens


def average_length(responses) -> float:
    """Mean token count per response (EOS already stripped from responses)."""
    if not responses:
        raise ValueError("empty corpus")
    return sum(len(r) for r in responses) / len(responses)


def build_general_set(mle_responses) -> set[tuple]:
    """Most frequent responses that together cover the top decile of outputs.

    Ties at the decile boundary are included.
    """
    if not mle_responses:
        raise ValueError("empty corpus")
    counts = Counter(tuple(r) for r in mle_responses)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    target = 0.1 * len(mle_responses)
    general = set()
    covered = 0
    cutoff = None
    for resp, cnt in ranked:
        if covered >= target and cnt != cutoff:
            break
        general.add(resp)
        covered += cnt
        if covered >= target and cutoff is None:
            cutoff = cnt
    return general


def count_general(responses, general_set, ground_truths) -> int:
    """Number of general responses whose paired ground truth is not itself general."""
    return sum(
        1
        for resp, truth in zip(responses, ground_truths)
        if tuple(resp) in general_set and tuple(truth) not in general_set
    )


# ---------------------------------------------------------------------------
# probes


def q_variance_probe(checkpoints, probe) -> list[float]:
    """Per-step population variance of the discriminator scalars across checkpoints."""
    if len(checkpoints) < 2:
        raise ValueError("need at least 2 checkpoints")
    x, y = probe
    rows = torch.stack([step_scores_batch(D, [x], [y])[0, : len(y)] for D in checkpoints])
    return rows.var(dim=0, unbiased=False).tolist()


def timing_benchmark(strategies, dataset, model_cfg, train_cfg,
                     warmup: int = 3, measured_iters: int = 10) -> dict[str, float]:
    """Mean wall-clock seconds per training iteration for each strategy.

    Every strategy gets freshly built models of identical size and the same
    seed so the only difference is the credit-assignment machinery.
    """
    if measured_iters < 10:
        raise ValueError("measured_iters must be >= 10")
    if not strategies:
        raise ValueError("empty strategy list")
    from .credit_assignment import StrategyConfig
    from .training import GanTrainer

    results = {}
    for strategy in strategies:
        if isinstance(strategy, str):
            strategy = StrategyConfig(kind=strategy)
        G = Generator(model_cfg, init_seed=train_cfg.seed)
        D = Discriminator(model_cfg, init_seed=train_cfg.seed + 1)
        V = ValueNet(model_cfg, init_seed=train_cfg.seed + 2)
        trainer = GanTrainer(G, D, V, strategy, dataset, train_cfg)
        for _ in range(warmup + measured_iters):
            trainer.step()
        results[strategy.kind] = sum(trainer.timings[warmup:]) / measured_iters
    return results


def write_plot_data(path, pairs, header: str | None = None) -> None:
    """Two-column plain-text plot data."""
    with open(path, "w") as f:
        if header:
            f.write(f"# {header}\n")
        for a, b in pairs:
            f.write(f"{a} {b}\n")


# ---------------------------------------------------------------------------
# composite report


def evaluate_model(G: Generator, testset, n_samples: int = 100, rng_seed: int = 0,
                   ikld_eps: float = IKLD_EPS, dist_ns=(1, 2, 3), general_set=None,
                   model_id: str = "", iteration: int = 0, seed: int = 0) -> EvalReport:
    """Full EvalReport for one model snapshot; pure given (model, testset, seed)."""
    rng = make_rng(rng_seed)
    prec = precision_argmax(G, testset)
    samp_p, samp_r = sample_precision_recall(G, testset, n_samples=n_samples, rng=rng)
    fkld = forward_kld(G, testset)
    ikld = inverse_kld(G, testset, eps=ikld_eps)
    responses = decode_argmax_batch(G, [ex.input for ex in testset])
    # a degenerate model may answer EOS-first everywhere; report zero diversity
    has_tokens = any(len(r) > 0 for r in responses)
    dist_n = {n: distinct_ngrams(responses, n) if has_tokens else 0.0 for n in dist_ns}
    len_avg = average_length(responses)
    general_count = None
    if general_set is not None:
        general_count = count_general(responses, general_set, [ex.answer for ex in testset])
    return EvalReport(
        prec=prec, samp_p=samp_p, samp_r=samp_r, fkld=fkld, ikld=ikld,
        fkld_plus_ikld=fkld + ikld, ikld_eps=ikld_eps, dist_n=dist_n,
        len_avg=len_avg, general_count=general_count,
        model_id=model_id, iteration=iteration, seed=seed,
    )
