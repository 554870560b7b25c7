"""Command-line entry point: ``lattice-rnn <command> [options]``.

Exit status is 0 on success, 1 for bad arguments or input, 2 for failures
during a run (including a failed gradient check).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .cells import CellKind
from .checkpoint import CheckpointError, load_checkpoint
from .corpus import FIXTURES, CorpusError, fixture_path, load_corpus
from .lattice import NetworkConfig, count_network_params, sample_text
from .plots import MetricsFormatError, emit_curves
from .trainer import (
    DEFAULT_FRACTIONS,
    GRADCHECK_DIMS,
    AdamConfig,
    evaluate,
    efficiency_sweep,
    fit,
    grad_heatmap_export,
    gradcheck,
    resolve_hidden,
)

log = logging.getLogger("lattice_rnn")

DEFAULT_BUDGET = 10_000_000
PRESETS = {
    "full": {"budget": DEFAULT_BUDGET, "batch": 250, "bptt": 50},
    "desk": {"budget": 200_000, "batch": 32, "bptt": 50},
}


class UsageError(Exception):
    """Bad flags or unusable input; exit status 1."""


@dataclass
class RunConfig:
    """Everything needed to repeat a training run."""

    cell: str = "gru"
    depth: int = 2
    hidden: int | None = None
    budget: int | None = None
    data: str | None = None
    bytes: bool = False
    batch: int = 250
    bptt: int = 50
    epochs: int = 100
    patience: int = 10
    lr: float = 0.001
    decay: float = 0.9
    adam_standard: bool = False
    clip_norm: float | None = None
    fractions: list[float] = field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    seed: int = 0
    out: str = "runs/latest"
    readout: str = "vertical"
    tie_grid_weights: bool = False
    stateful: bool = True
    jobs: int = 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise UsageError("run config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown run config keys: {', '.join(unknown)}")
        return cls(**data)

    def network(self, vocab: int) -> NetworkConfig:
        return NetworkConfig(
            CellKind.parse(self.cell),
            depth=self.depth,
            vocab=vocab,
            bptt=self.bptt,
            batch=self.batch,
            readout=self.readout,
            tie_grid_weights=self.tie_grid_weights,
            stateful=self.stateful,
        )

    def adam(self) -> AdamConfig:
        if self.adam_standard:
            return AdamConfig.standard(self.lr, self.decay)
        return AdamConfig(lr=self.lr, decay=self.decay)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _fractions(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from None
    if not vals or any(not 0.0 < v <= 1.0 for v in vals):
        raise argparse.ArgumentTypeError("fractions must lie in (0, 1]")
    return vals


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _add_model_flags(p: argparse.ArgumentParser, depth: int = 2) -> None:
    kinds = [k.value for k in CellKind]
    p.add_argument("--cell", "--kind", dest="cell", default="gru", choices=kinds,
                   help="cell kind (default: %(default)s)")
    p.add_argument("--depth", type=_positive, default=depth, help="stacked layers (default: %(default)s)")
    size = p.add_mutually_exclusive_group()
    size.add_argument("--hidden", type=_positive, help="hidden width m")
    size.add_argument("--budget", type=_positive,
                      help=f"parameter budget used to solve for m (default: {DEFAULT_BUDGET} unless --hidden)")
    p.add_argument("--readout", choices=["vertical", "horizontal"], default="vertical",
                   help="which top-layer output feeds the softmax (default: %(default)s)")
    p.add_argument("--tie-grid-weights", action="store_true",
                   help="share one weight set across both Grid-LSTM directions")


def _add_train_flags(p: argparse.ArgumentParser, epochs: int = 100) -> None:
    p.add_argument("--data", required=True, help=f"text file, or a bundled fixture: {', '.join(FIXTURES)}")
    p.add_argument("--bytes", action="store_true", help="treat input as raw bytes instead of UTF-8")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="desk: budget 200k, batch 32, bptt 50; explicit flags win")
    p.add_argument("--batch", type=_positive, help="parallel streams (default: 250)")
    p.add_argument("--bptt", type=_positive, help="truncation length (default: 50)")
    p.add_argument("--epochs", type=_positive, default=epochs, help="maximum epochs (default: %(default)s)")
    p.add_argument("--patience", type=_positive, default=10,
                   help="early-stopping patience in epochs (default: %(default)s)")
    p.add_argument("--lr", type=float, default=0.001, help="base learning rate (default: %(default)s)")
    p.add_argument("--decay", type=float, default=0.9, help="per-epoch learning-rate decay (default: %(default)s)")
    p.add_argument("--adam-standard", action="store_true",
                   help="use beta1=0.9, beta2=0.999 instead of 0.1, 0.001")
    p.add_argument("--clip-norm", type=float, default=None, help="global gradient-norm clip (default: off)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: %(default)s)")
    p.add_argument("--stateful", type=_bool, default=True,
                   help="carry state across windows: true|false (default: true)")
    p.add_argument("--out", default="runs/latest", help="output directory (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lattice-rnn", description="Lattice recurrent units for character language modelling.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model with early stopping")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("sweep", help="train on prefixes of the training split")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--fractions", type=_fractions, default=list(DEFAULT_FRACTIONS),
                   help="comma-separated training fractions (default: 0.2,0.4,0.6,0.8,1.0)")
    p.add_argument("--jobs", type=_positive, default=1, help="worker processes (default: %(default)s)")

    p = sub.add_parser("heatmap", help="per-layer gradient norms over epochs")
    _add_model_flags(p, depth=10)
    _add_train_flags(p, epochs=5)

    p = sub.add_parser("eval", help="CCE of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="the text the checkpoint was trained on")
    p.add_argument("--split", choices=["train", "valid", "test"], default="test",
                   help="(default: %(default)s)")

    p = sub.add_parser("sample", help="generate text from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed-text", required=True)
    p.add_argument("--length", type=int, default=200, help="(default: %(default)s)")
    p.add_argument("--temperature", type=float, default=1.0, help="0 means arg-max (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="(default: %(default)s)")

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--cell", "--kind", dest="cell", default="gru", choices=[k.value for k in CellKind])
    for name in ("hidden", "depth", "bptt", "batch", "vocab"):
        p.add_argument(f"--{name}", type=_positive, default=GRADCHECK_DIMS[name], help="(default: %(default)s)")
    p.add_argument("--readout", choices=["vertical", "horizontal"], default="vertical")
    p.add_argument("--tie-grid-weights", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-6, help="(default: %(default)s)")

    p = sub.add_parser("curves", help="plot metrics.jsonl files as SVG and CSV")
    p.add_argument("metrics", nargs="+", help="metrics.jsonl files, one series each")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    preset = PRESETS.get(getattr(args, "preset", None) or "", {})
    budget = args.budget
    if args.hidden is None and budget is None:
        budget = preset.get("budget", DEFAULT_BUDGET)
    return RunConfig(
        cell=args.cell,
        depth=args.depth,
        hidden=args.hidden,
        budget=budget,
        data=args.data,
        bytes=args.bytes,
        batch=args.batch if args.batch is not None else preset.get("batch", 250),
        bptt=args.bptt if args.bptt is not None else preset.get("bptt", 50),
        epochs=args.epochs,
        patience=args.patience,
        lr=args.lr,
        decay=args.decay,
        adam_standard=args.adam_standard,
        clip_norm=args.clip_norm,
        fractions=list(getattr(args, "fractions", DEFAULT_FRACTIONS)),
        seed=args.seed,
        out=args.out,
        readout=args.readout,
        tie_grid_weights=args.tie_grid_weights,
        stateful=args.stateful,
        jobs=getattr(args, "jobs", 1),
    )


def resolve_data(data: str) -> Path:
    path = Path(data)
    if path.exists():
        return path
    if data in FIXTURES:
        return fixture_path(data)
    raise UsageError(f"--data: no such file: {data}")


def _load(rc: RunConfig):
    vocab, corpus = load_corpus(resolve_data(rc.data), rc.bytes)
    try:
        cfg = rc.network(len(vocab))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return vocab, corpus, cfg


def _fit_kwargs(rc: RunConfig, vocab) -> dict:
    return dict(
        hidden=rc.hidden, budget=rc.budget, max_epochs=rc.epochs, patience=rc.patience,
        seed=rc.seed, adam=rc.adam(), clip_norm=rc.clip_norm, vocab=vocab,
    )


def _prepare_out(rc: RunConfig) -> Path:
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(rc.to_json() + "\n")
    return out


def cmd_train(args) -> int:
    rc = run_config_from_args(args)
    vocab, corpus, cfg = _load(rc)
    m = resolve_hidden(cfg, rc.hidden, rc.budget)
    log.info("%s depth %d hidden %d: %d parameters", cfg.kind.value, cfg.depth, m,
             count_network_params(cfg.kind, cfg.depth, cfg.vocab, m, cfg.tie_grid_weights))
    out = _prepare_out(rc)
    res = fit(cfg, corpus, out_dir=out, **_fit_kwargs(rc, vocab))
    with open(out / "summary.csv", "w") as fh:
        fh.write("cell,depth,hidden,params,best_epoch,total_epochs,best_valid_cce,test_cce_at_best\n")
        fh.write(
            f"{cfg.kind.value},{cfg.depth},{m},"
            f"{count_network_params(cfg.kind, cfg.depth, cfg.vocab, m, cfg.tie_grid_weights)},"
            f"{res.best_epoch},{res.total_epochs},{res.best_valid_loss!r},{res.test_loss_at_best!r}\n"
        )
    print(f"best epoch {res.best_epoch}: valid {res.best_valid_loss:.4f}  test {res.test_loss_at_best:.4f}")
    return 0


def cmd_sweep(args) -> int:
    rc = run_config_from_args(args)
    vocab, corpus, cfg = _load(rc)
    out = _prepare_out(rc)
    rows = efficiency_sweep(cfg, corpus, rc.fractions, jobs=rc.jobs, out_dir=out, **_fit_kwargs(rc, vocab))
    for r in rows:
        print(f"fraction {r.fraction:.2f}  train symbols {r.train_symbols}  test {r.test_cce:.4f}")
    return 0


def cmd_heatmap(args) -> int:
    rc = run_config_from_args(args)
    if rc.depth < 2:
        raise UsageError("--depth: heatmaps need at least 2 layers")
    vocab, corpus, cfg = _load(rc)
    out = _prepare_out(rc)
    grid = grad_heatmap_export(
        cfg, corpus, rc.epochs, out / "heatmap.csv",
        hidden=rc.hidden, budget=rc.budget, seed=rc.seed, adam=rc.adam(), clip_norm=rc.clip_norm,
    )
    print(f"wrote {out / 'heatmap.csv'} ({grid.shape[0]} layers x {grid.shape[1]} epochs)")
    return 0


def cmd_eval(args) -> int:
    params, cfg, header = load_checkpoint(args.checkpoint)
    vocab, corpus = load_corpus(resolve_data(args.data), bool(header.get("bytes_mode")))
    if header.get("vocab_table") is not None and list(vocab.symbols) != header["vocab_table"]:
        raise UsageError("--data: vocabulary differs from the checkpoint's")
    loss = evaluate(params, cfg, getattr(corpus, args.split))
    print(f"{args.split} CCE {loss:.6f}")
    return 0


def cmd_sample(args) -> int:
    params, cfg, header = load_checkpoint(args.checkpoint)
    table = header.get("vocab_table")
    if table is None:
        raise UsageError("checkpoint has no vocabulary table")
    try:
        text = sample_text(params, cfg, table, args.seed_text, args.length, args.temperature, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sys.stdout.write(args.seed_text + text + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    dims = {k: getattr(args, k) for k in GRADCHECK_DIMS}
    try:
        report = gradcheck(
            args.cell, dims, seed=args.seed, tolerance=args.tolerance,
            readout=args.readout, tie_grid_weights=args.tie_grid_weights,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(report.format())
    return 0 if report.passed else 2


def cmd_curves(args) -> int:
    for m in args.metrics:
        if not Path(m).is_file():
            raise UsageError(f"no such metrics file: {m}")
    svg, csv = emit_curves(args.metrics, args.out)
    print(f"wrote {svg} and {csv}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "heatmap": cmd_heatmap,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "gradcheck": cmd_gradcheck,
    "curves": cmd_curves,
}


def _setup_logging() -> None:
    level = os.environ.get("LRU_LOG", "info").upper()
    if level not in ("ERROR", "WARNING", "INFO", "DEBUG"):
        level = "INFO"
    logging.basicConfig(level=level, format="%(asctime)s %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, CorpusError, CheckpointError, MetricsFormatError, FileNotFoundError) as exc:
        print(f"lattice-rnn: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("run failed", exc_info=True)
        print(f"lattice-rnn: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
