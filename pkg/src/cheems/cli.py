"""Command-line entry point.

Subcommands: train, eval, bench, selftest, export-vectors. Everything is
driven by one JSON run config (strictly parsed: unknown keys are fatal)
plus dotted-path overrides like ``--override model.d_model=128``. Every
artifact written carries the config hash for provenance.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .errors import CheemsError, ConfigError, NonFiniteError
from .harness import (BENCH_HEADER, BENCH_KINDS, METRICS_HEADER, AdamW, AdamWConfig,
                      MqarConfig, Schedule, SelectiveCopyConfig, bench_throughput,
                      evaluate, make_batch, masked_accuracy, train, write_csv)
from .model import CheemsModel, ModelConfig, build_model, load_checkpoint, model_config_from_dict
from .selftest import run_selftest
from .vectors import export_vectors

EXIT_CONFIG = 2
EXIT_NAN = 3


@dataclass
class BenchConfig:
    seq_lens: list = field(default_factory=lambda: [512, 1024, 2048, 4096])
    kinds: list = field(default_factory=lambda: list(BENCH_KINDS))
    repeats: int = 5


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    schedule: Schedule = field(default_factory=Schedule)
    task: object = field(default_factory=MqarConfig)
    benchmark: BenchConfig = field(default_factory=BenchConfig)
    out_dir: str | None = None
    seed: int = 0
    train_steps: int | None = None   # defaults to schedule.total_steps
    stop_acc: float | None = None
    eval_batches: int = 4


_TASK_KINDS = {"mqar": MqarConfig, "selective_copy": SelectiveCopyConfig}


def _strict_build(cls, d: dict, path: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config key: {path}{sorted(unknown)[0]}")
    return cls(**d)


def run_config_from_dict(d: dict) -> RunConfig:
    d = dict(d)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
    out = RunConfig()
    if "model" in d:
        out.model = model_config_from_dict(d.pop("model"))
    if "optimizer" in d:
        out.optimizer = _strict_build(AdamWConfig, d.pop("optimizer"), "optimizer.")
    if "schedule" in d:
        out.schedule = _strict_build(Schedule, d.pop("schedule"), "schedule.")
    if "task" in d:
        task = dict(d.pop("task"))
        kind = task.pop("kind", "mqar")
        if kind not in _TASK_KINDS:
            raise ConfigError(f"unknown task kind: {kind}")
        out.task = _strict_build(_TASK_KINDS[kind], {**task, "kind": kind}, "task.")
    if "benchmark" in d:
        out.benchmark = _strict_build(BenchConfig, d.pop("benchmark"), "benchmark.")
    for key, val in d.items():
        setattr(out, key, val)
    return out


def run_config_to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


def config_hash(cfg: RunConfig) -> str:
    d = run_config_to_dict(cfg)
    d.pop("out_dir", None)  # hash the experiment, not the artifact location
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Dotted-path assignment; values parse as JSON, else raw strings."""
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override must look like path=value, got {ov!r}")
        path, raw = ov.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = path.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-object")
        node[parts[-1]] = value
    return d


def _load_run_config(args) -> RunConfig:
    raw: dict = {}
    if args.config:
        with open(args.config) as f:
            raw = json.load(f)
    raw = apply_overrides(raw, args.override or [])
    model_seed_given = isinstance(raw.get("model"), dict) and "seed" in raw["model"]
    cfg = run_config_from_dict(raw)
    if not model_seed_given:
        cfg.model.seed = cfg.seed  # one root seed drives init and data
    return cfg


def _out_dir(cfg: RunConfig) -> str:
    d = cfg.out_dir or os.environ.get("CHEEMS_OUT_DIR") or "runs"
    os.makedirs(d, exist_ok=True)
    return d


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    h = config_hash(cfg)
    out = _out_dir(cfg)
    model = build_model(cfg.model)
    opt = AdamW(model.named_params(), cfg.optimizer)
    ckpt = os.path.join(out, "checkpoint.chms")
    metrics_path = os.path.join(out, "metrics.csv")
    try:
        result = train(model, cfg.task, opt, cfg.schedule,
                       n_steps=cfg.train_steps, seed=cfg.seed,
                       checkpoint_path=ckpt, stop_acc=cfg.stop_acc)
    except NonFiniteError as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_NAN
    write_csv(metrics_path, METRICS_HEADER, result.metrics, config_hash=h)
    eval_acc = evaluate(model, cfg.task, cfg.seed, cfg.eval_batches)
    summary = {
        "config_hash": h,
        "steps_run": result.steps_run,
        "stopped_early": result.stopped_early,
        "final_loss": result.final_loss,
        "final_acc": result.final_acc,
        "best_rolling_acc": result.best_rolling_acc,
        "eval_acc": eval_acc,
        "param_count": model.param_count(),
    }
    with open(os.path.join(out, "result.json"), "w") as f:
        json.dump(summary, f, indent=1)
    print(f"steps={result.steps_run} final_loss={result.final_loss:.4f} "
          f"train_acc={result.final_acc:.4f} eval_acc={eval_acc:.4f}")
    print(f"wrote {metrics_path} and {ckpt} (config_hash={h})")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    h = config_hash(cfg)
    out = _out_dir(cfg)
    ckpt = args.checkpoint or os.path.join(out, "checkpoint.chms")
    model = load_checkpoint(ckpt)
    if asdict(model.config) != asdict(cfg.model):
        print("warning: checkpoint model config differs from run config "
              f"(hash {h})", file=sys.stderr)
    usage: dict = {}
    accs = []
    with T.no_grad():
        for i in range(cfg.eval_batches):
            tokens, mask = make_batch(cfg.task, cfg.seed, -(i + 1))
            logits = model.forward(tokens, usage=usage)
            accs.append(masked_accuracy(logits.data, tokens, mask))
    acc = float(np.mean(accs))
    total = np.zeros(model.config.n_experts, dtype=np.int64)
    for counts in usage.values():
        total += counts
    usage_rows = [{"expert_id": i, "hit_count": int(c)} for i, c in enumerate(total)]
    write_csv(os.path.join(out, "expert_usage.csv"), "expert_id,hit_count",
              usage_rows, config_hash=h)
    print(f"eval_acc={acc:.4f} (checkpoint {ckpt}, config_hash={h})")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_run_config(args)
    h = config_hash(cfg)
    out = _out_dir(cfg)
    rows = bench_throughput(cfg.benchmark.seq_lens, cfg.benchmark.kinds,
                            cfg.benchmark.repeats, seed=cfg.seed)
    path = os.path.join(out, "bench.csv")
    write_csv(path, BENCH_HEADER, rows, config_hash=h)
    for r in rows:
        print(f"{r['kind']:>14} L={r['seq_len']:<6} fwd={r['fwd_ms']:.2f}ms "
              f"fwd+bwd={r['fwdbwd_ms']:.2f}ms {r['tok_per_s']:.0f} tok/s")
    print(f"wrote {path}")
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest(verbose=True)
    n_ok = sum(r.ok for r in results)
    print(f"{n_ok}/{len(results)} suites passed")
    return 0 if n_ok == len(results) else 1


def cmd_export_vectors(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    path = args.out or os.path.join(out, "vectors.json")
    n = export_vectors(path, seed=cfg.seed, per_kind=args.per_kind)
    print(f"wrote {n} cases to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cheems", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config path")
        sp.add_argument("--override", "-o", action="append", metavar="PATH=VALUE",
                        help="dotted config override, e.g. model.d_model=128")

    sp = sub.add_parser("train", help="train on the configured synthetic task")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", help="checkpoint path (default: <out_dir>/checkpoint.chms)")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("bench", help="sequence-length throughput benchmark")
    common(sp)
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("selftest", help="run the built-in invariant suite")
    common(sp)
    sp.set_defaults(fn=cmd_selftest)

    sp = sub.add_parser("export-vectors", help="write JSON test vectors for the oracle")
    common(sp)
    sp.add_argument("--out", help="output path (default: <out_dir>/vectors.json)")
    sp.add_argument("--per-kind", type=int, default=20)
    sp.set_defaults(fn=cmd_export_vectors)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_NAN
    except CheemsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
