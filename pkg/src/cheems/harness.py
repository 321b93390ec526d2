"""Training harness: schedule, optimizer, synthetic tasks, metrics,
and the sequence-length throughput benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, NonFiniteError
from .model import CheemsModel, ModelConfig, build_model, save_checkpoint
from .seeds import stream
from .tensor import Tensor

METRICS_HEADER = "step,lr,loss,acc,tok_per_s"
BENCH_HEADER = "kind,seq_len,fwd_ms,fwdbwd_ms,tok_per_s"


# ---- learning-rate schedule ---------------------------------------------


@dataclass
class Schedule:
    max_lr: float = 2e-4
    min_lr: float = 2e-5
    warmup_frac: float = 0.10
    total_steps: int = 1000


def lr_at(step: float, sched: Schedule) -> float:
    """Linear 0 -> max_lr over the first warmup fraction, then cosine down
    to min_lr at the final step. Continuous at the junction; the peak is
    hit exactly at the end of warmup."""
    if step < 0 or step > sched.total_steps:
        raise ContractError(f"lr_at: step {step} outside [0, {sched.total_steps}]")
    w = sched.warmup_frac * sched.total_steps
    if step <= w:
        return sched.max_lr * (step / w) if w > 0 else sched.max_lr
    frac = (step - w) / (sched.total_steps - w)
    return sched.min_lr + 0.5 * (sched.max_lr - sched.min_lr) * (1.0 + np.cos(np.pi * frac))


# ---- optimizer ------------------------------------------------------------


@dataclass
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    weight_decay: float = 0.1


class AdamW:
    """Decoupled weight decay with bias correction. Decay applies only to
    parameters flagged as matrices (norm weights, embeddings and the gate
    parameters are exempt so the selective gates cannot be decayed shut)."""

    def __init__(self, params: list[tuple[str, Tensor, bool]], cfg: AdamWConfig = AdamWConfig()):
        self.params = params
        self.cfg = cfg
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t, _ in params}
        self.v = {name: np.zeros_like(t.data) for name, t, _ in params}

    def zero_grad(self) -> None:
        for _, t, _ in self.params:
            t.zero_grad()

    def step(self, lr: float) -> None:
        c = self.cfg
        self.step_count += 1
        bc1 = 1.0 - c.beta1 ** self.step_count
        bc2 = 1.0 - c.beta2 ** self.step_count
        for name, t, decay in self.params:
            g = t.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"adamw: non-finite gradient in tensor {name}")
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * np.square(g)
            if decay and c.weight_decay:
                t.data *= 1.0 - lr * c.weight_decay
            t.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + c.eps)


def adamw_step_scalar(p: float, g: float, m: float, v: float, step: int, lr: float,
                      cfg: AdamWConfig = AdamWConfig(), decay: bool = False) -> tuple[float, float, float]:
    """Single-scalar restatement of the update rule (oracle for tests)."""
    m = cfg.beta1 * m + (1 - cfg.beta1) * g
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
    mhat = m / (1 - cfg.beta1 ** step)
    vhat = v / (1 - cfg.beta2 ** step)
    if decay:
        p = p * (1 - lr * cfg.weight_decay)
    p = p - lr * mhat / (np.sqrt(vhat) + cfg.eps)
    return p, m, v


# ---- synthetic tasks -------------------------------------------------------


@dataclass
class TaskSample:
    tokens: np.ndarray    # int [seq_len]
    loss_mask: np.ndarray  # bool [seq_len], True on answer positions


@dataclass
class MqarConfig:
    """Key-value binding followed by queries. The first half of the vocab
    is the key alphabet, the second half the value alphabet."""
    vocab: int = 64
    n_pairs: int = 8
    n_queries: int = 4
    seq_len: int = 64
    batch: int = 64
    kind: str = "mqar"


@dataclass
class SelectiveCopyConfig:
    """Content tokens scattered among noise; after a go token the model
    reproduces them in order. Pure selection, no key lookup."""
    vocab: int = 16       # last two ids are the noise and go tokens
    n_content: int = 8
    seq_len: int = 64
    batch: int = 64
    kind: str = "selective_copy"


def mqar_generate(vocab: int, n_pairs: int, seq_len: int, n_queries: int, seed: int) -> TaskSample:
    """One sample: a prefix of key-value pairs, then queries.

    The prefix is filled end to end with whole (key, value) pairs: the
    n_pairs distinct bindings first, then further shuffled rounds of the
    same consistent bindings until the space before the query block is
    used up. loss_mask is True exactly on the answer positions, each
    answer being the value bound to its queried key.
    """
    n_keys = vocab // 2
    n_vals = vocab - n_keys
    if n_pairs > n_keys:
        raise ConfigError(f"mqar: n_pairs {n_pairs} exceeds key alphabet {n_keys}")
    if n_queries > n_pairs:
        raise ConfigError(f"mqar: n_queries {n_queries} exceeds n_pairs {n_pairs}")
    if seq_len < 2 * (n_pairs + n_queries):
        raise ConfigError(f"mqar: seq_len {seq_len} < {2 * (n_pairs + n_queries)}")
    rng = stream(seed, "mqar")
    keys = rng.choice(n_keys, size=n_pairs, replace=False)
    vals = n_keys + rng.integers(0, n_vals, size=n_pairs)
    q_idx = rng.choice(n_pairs, size=n_queries, replace=False)

    tokens = np.empty(seq_len, dtype=np.int64)
    mask = np.zeros(seq_len, dtype=bool)
    prefix_slots = seq_len - 2 * n_queries
    order = list(range(n_pairs))
    pos = 0
    while pos + 1 < prefix_slots:
        for i in order:
            if pos + 1 >= prefix_slots:
                break
            tokens[pos] = keys[i]
            tokens[pos + 1] = vals[i]
            pos += 2
        order = list(rng.permutation(n_pairs))
    if pos < prefix_slots:  # odd leftover slot
        tokens[pos] = vals[int(rng.integers(0, n_pairs))]
    for j, qi in enumerate(q_idx):
        p = prefix_slots + 2 * j
        tokens[p] = keys[qi]
        tokens[p + 1] = vals[qi]
        mask[p + 1] = True
    return TaskSample(tokens=tokens, loss_mask=mask)


def selective_copy_generate(vocab: int, n_content: int, seq_len: int, seed: int) -> TaskSample:
    n_symbols = vocab - 2
    noise, go = vocab - 2, vocab - 1
    prefix_len = seq_len - n_content - 1
    if n_content < 1 or prefix_len < n_content:
        raise ConfigError(f"selective_copy: infeasible sizes (seq_len {seq_len}, n_content {n_content})")
    rng = stream(seed, "selective_copy")
    content = rng.integers(0, n_symbols, size=n_content)
    slots = np.sort(rng.choice(prefix_len, size=n_content, replace=False))
    tokens = np.full(seq_len, noise, dtype=np.int64)
    tokens[slots] = content
    tokens[prefix_len] = go
    tokens[prefix_len + 1:] = content
    mask = np.zeros(seq_len, dtype=bool)
    mask[prefix_len + 1:] = True
    return TaskSample(tokens=tokens, loss_mask=mask)


def make_batch(task, root_seed: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Batch of samples for one training step, from per-sample seed streams."""
    toks, masks = [], []
    for i in range(task.batch):
        s = int(stream(root_seed, "task", str(step), str(i)).integers(0, 2 ** 62))
        if isinstance(task, MqarConfig):
            sample = mqar_generate(task.vocab, task.n_pairs, task.seq_len, task.n_queries, s)
        elif isinstance(task, SelectiveCopyConfig):
            sample = selective_copy_generate(task.vocab, task.n_content, task.seq_len, s)
        else:
            raise ConfigError(f"unknown task kind {task!r}")
        toks.append(sample.tokens)
        masks.append(sample.loss_mask)
    return np.stack(toks), np.stack(masks)


def masked_accuracy(logits: np.ndarray, tokens: np.ndarray, mask: np.ndarray,
                    restrict: Optional[np.ndarray] = None) -> float:
    """Fraction of masked target positions predicted by argmax of the
    previous position's logits. ``restrict`` limits the argmax to a token
    subset (e.g. the value alphabet for chance-level checks)."""
    z = logits[:, :-1]
    tgt = tokens[:, 1:]
    m = mask[:, 1:]
    if restrict is not None:
        sub = z[..., restrict]
        pred = restrict[np.argmax(sub, axis=-1)]
    else:
        pred = np.argmax(z, axis=-1)
    return float((pred == tgt)[m].mean())


# ---- training loop ---------------------------------------------------------


@dataclass
class TrainResult:
    metrics: list[dict] = field(default_factory=list)
    final_loss: float = float("nan")
    final_acc: float = float("nan")
    best_rolling_acc: float = 0.0  # best 10-step mean of fresh-batch accuracy
    steps_run: int = 0
    stopped_early: bool = False


def train(model: CheemsModel, task, opt: AdamW, sched: Schedule,
          n_steps: Optional[int] = None, seed: int = 0,
          checkpoint_path: Optional[str] = None, checkpoint_every: int = 200,
          stop_acc: Optional[float] = None,
          on_step: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Run the step loop; one metrics row per step.

    A non-finite loss or gradient aborts after writing the last good
    checkpoint. ``stop_acc`` stops early once the running train accuracy
    (mean of the last 10 steps) reaches the threshold.
    """
    n_steps = n_steps if n_steps is not None else sched.total_steps
    result = TrainResult()
    recent: list[float] = []
    for step in range(1, n_steps + 1):
        t0 = time.perf_counter()
        tokens, mask = make_batch(task, seed, step)
        try:
            logits = model.forward(tokens)
            loss = T.cross_entropy_with_logits(
                T.narrow(logits, 1, 0, tokens.shape[1] - 1), tokens[:, 1:], mask[:, 1:])
            model.zero_grads()
            T.backward(loss)
            lr = lr_at(min(step, sched.total_steps), sched)
            opt.step(lr)
        except NonFiniteError:
            # parameters still hold the last state that produced finite math
            if checkpoint_path is not None and all(
                    np.all(np.isfinite(t.data)) for _, t, _ in model.named_params()):
                save_checkpoint(model, checkpoint_path)
            raise
        dt = time.perf_counter() - t0
        acc = masked_accuracy(logits.data, tokens, mask)
        row = {
            "step": step,
            "lr": lr,
            "loss": float(loss.data),
            "acc": acc,
            "tok_per_s": tokens.size / dt,
        }
        result.metrics.append(row)
        if on_step is not None:
            on_step(row)
        if checkpoint_path is not None and (step % checkpoint_every == 0 or step == n_steps):
            save_checkpoint(model, checkpoint_path)
        recent.append(acc)
        if len(recent) > 10:
            recent.pop(0)
        if len(recent) == 10:
            result.best_rolling_acc = max(result.best_rolling_acc, float(np.mean(recent)))
        result.final_loss = row["loss"]
        result.final_acc = acc
        result.steps_run = step
        if stop_acc is not None and len(recent) == 10 and np.mean(recent) >= stop_acc:
            result.stopped_early = True
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path)
            break
    return result


def evaluate(model: CheemsModel, task, seed: int, n_batches: int = 4) -> float:
    """Masked accuracy over held-out batches (separate seed stream)."""
    accs = []
    with T.no_grad():
        for i in range(n_batches):
            tokens, mask = make_batch(task, seed, -(i + 1))
            logits = model.forward(tokens)
            accs.append(masked_accuracy(logits.data, tokens, mask))
    return float(np.mean(accs))


# ---- metrics / benchmark CSV ------------------------------------------------


def write_csv(path: str, header: str, rows: list[dict], config_hash: Optional[str] = None) -> None:
    """Atomic CSV write. A provenance comment line precedes the header."""
    import os
    cols = header.split(",")
    lines = []
    if config_hash is not None:
        lines.append(f"# config_hash={config_hash}")
    lines.append(header)
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in cols))
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---- throughput benchmark ---------------------------------------------------

BENCH_KINDS = ("ssd_chunked", "attention", "cheems_block")


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_throughput(seq_lens: list[int], kinds: list[str] = list(BENCH_KINDS),
                     repeats: int = 5, seed: int = 0) -> list[dict]:
    """Forward and forward+backward wall time per kind and length.

    Pinned to one BLAS thread so the length ratios reflect algorithmic
    scaling rather than parallel efficiency. ssd_chunked and attention are
    the bare sequence mixers on pre-projected inputs (pure linear vs pure
    quadratic scaling); cheems_block is a full model block.
    """
    if sorted(seq_lens) != list(seq_lens):
        raise ContractError("bench: seq_lens must be ascending")
    from threadpoolctl import threadpool_limits

    rows = []
    with threadpool_limits(1):
        for kind in kinds:
            if kind not in BENCH_KINDS:
                raise ConfigError(f"unknown benchmark kind {kind!r}")
            for l in seq_lens:
                rng = stream(seed, "bench", kind, str(l))
                if kind == "ssd_chunked":
                    fwd_s, fwdbwd_s = _bench_ssd(rng, l)
                    n_tok = l
                elif kind == "attention":
                    fwd_s, fwdbwd_s = _bench_attention(rng, l)
                    n_tok = l
                else:
                    fwd_s, fwdbwd_s = _bench_block(rng, l)
                    n_tok = l
                fwd_ms = _median_time(fwd_s, repeats) * 1e3
                fwdbwd_ms = _median_time(fwdbwd_s, repeats) * 1e3
                rows.append({"kind": kind, "seq_len": l, "fwd_ms": fwd_ms,
                             "fwdbwd_ms": fwdbwd_ms,
                             "tok_per_s": n_tok / (fwdbwd_ms / 1e3)})
    return rows


def _bench_ssd(rng, l, h=2, p=64, s=64, chunk=64):
    from .ssd import ssd_chunked
    x = Tensor(rng.normal(size=(1, l, h, p)), dtype=np.float32)
    B = Tensor(rng.normal(size=(1, l, h, s)), dtype=np.float32)
    C = Tensor(rng.normal(size=(1, l, h, s)), dtype=np.float32)
    a = Tensor(rng.uniform(0.8, 1.0, size=(1, l, h)), dtype=np.float32)

    def fwd():
        with T.no_grad():
            ssd_chunked(x, B, C, a, chunk)

    def fwdbwd():
        for t in (x, B, C, a):
            t.requires_grad = True
            t.zero_grad()
        y = ssd_chunked(x, B, C, a, chunk)
        T.backward(T.tsum(y))

    return fwd, fwdbwd


def _bench_attention(rng, l, h=2, hd=64):
    q = Tensor(rng.normal(size=(1, h, l, hd)), dtype=np.float32)
    k = Tensor(rng.normal(size=(1, h, l, hd)), dtype=np.float32)
    v = Tensor(rng.normal(size=(1, h, l, hd)), dtype=np.float32)
    upper = np.triu(np.ones((l, l), dtype=bool), k=1)
    scale = 1.0 / np.sqrt(hd)

    def run():
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), scale)
        attn = T.softmax_lastdim(T.masked_fill(scores, upper, float("-inf")))
        return T.matmul(attn, v)

    def fwd():
        with T.no_grad():
            run()

    def fwdbwd():
        for t in (q, k, v):
            t.requires_grad = True
            t.zero_grad()
        T.backward(T.tsum(run()))

    return fwd, fwdbwd


def bench_block_config() -> ModelConfig:
    return ModelConfig(vocab_size=32, d_model=64, n_cheems_blocks=1, n_heads=2,
                       head_dim=32, d_state=16, chunk_len=64, d_shared=64,
                       d_private=32, n_experts=64, top_k=4, d_query=16,
                       positional_mode="rope", max_positions=8192, seed=0)


def _bench_block(rng, l):
    cfg = bench_block_config()
    model = build_model(cfg)
    tokens = rng.integers(0, cfg.vocab_size, size=(1, l))

    def fwd():
        with T.no_grad():
            model.forward(tokens)

    def fwdbwd():
        model.zero_grads()
        logits = model.forward(tokens)
        T.backward(T.tsum(logits))

    return fwd, fwdbwd
