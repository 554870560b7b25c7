"""Training, evaluation and the three comparison metrics.

* accuracy: test cross entropy of the checkpoint with the lowest validation loss
* convergence rate: the epoch at which that checkpoint was taken
* statistical efficiency: test cross entropy against training-set fraction
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .corpus import CorpusError, SplitCorpus, StreamBatcher, subset_fraction
from .lattice import (
    CarriedState,
    NetworkConfig,
    NetworkParams,
    backward_window,
    forward_window,
    init_network,
    solve_hidden_for_budget,
)
from .numkit import make_rng, softmax_cce_batch

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


# ------------------------------------------------------------------ Adam

@dataclass(frozen=True)
class AdamConfig:
    """Optimizer hyperparameters.

    Defaults read beta1=0.1, beta2=0.001 literally;
    :meth:`standard` gives the usual 0.9 / 0.999.
    """

    lr: float = 0.001
    decay: float = 0.9
    beta1: float = 0.1
    beta2: float = 0.001
    eps: float = 1e-8

    @classmethod
    def standard(cls, lr: float = 0.001, decay: float = 0.9) -> "AdamConfig":
        return cls(lr=lr, decay=decay, beta1=0.9, beta2=0.999)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.1
    beta2: float = 0.001
    eps: float = 1e-8
    lr: float = 0.001
    decay: float = 0.9

    @classmethod
    def fresh(cls, params: NetworkParams, cfg: AdamConfig = AdamConfig()) -> "AdamState":
        names = [n for n, _ in params.named_tensors()]
        shapes = {n: t.shape for n, t in params.named_tensors()}
        return cls(
            {n: np.zeros(shapes[n]) for n in names},
            {n: np.zeros(shapes[n]) for n in names},
            0,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
            cfg.lr,
            cfg.decay,
        )


def adam_step(state: AdamState, params: NetworkParams, grads: NetworkParams, lr: float | None = None):
    """One bias-corrected Adam update, in place.  Returns ``(params, state)``."""
    lr = state.lr if lr is None else lr
    named = params.named_tensors()
    gnamed = dict(grads.named_tensors())
    for name, _ in named:
        g = gnamed[name]
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise FloatingPointError(f"non-finite gradient in {name} ({bad} of {g.size} entries)")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, theta in named:
        g = gnamed[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def lr_schedule(base: float, decay: float, epoch: int) -> float:
    """Learning rate for 1-based ``epoch``: ``base * decay**(epoch-1)``."""
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"decay must lie in (0, 1], got {decay}")
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    return base * decay ** (epoch - 1)


def clip_gradients(grads: NetworkParams, max_norm: float) -> float:
    """Scale ``grads`` in place so the global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for _, g in grads.named_tensors()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, g in grads.named_tensors():
            g *= scale
    return total


# ---------------------------------------------------------------- epochs

@dataclass
class EpochStats:
    train_cce: float
    layer_grad_norms: np.ndarray
    windows: int
    clipped: int = 0


def run_epoch(
    params: NetworkParams,
    cfg: NetworkConfig,
    batcher: StreamBatcher,
    adam: AdamState,
    lr: float | None = None,
    clip_norm: float | None = None,
) -> EpochStats:
    """One pass over ``batcher``: forward, backward and an Adam step per window.

    The carry starts at zero and persists across windows when
    ``cfg.stateful``; it is reset every window otherwise.
    """
    if batcher.n_windows < 1:
        raise CorpusError("corpus too small: no training windows")
    carry = CarriedState.zeros(cfg, batcher.batch)
    loss_sum = 0.0
    norm_sum = np.zeros(cfg.depth)
    clipped = 0
    n = 0
    for inputs, targets in batcher:
        if not cfg.stateful:
            carry = CarriedState.zeros(cfg, batcher.batch)
        _, carry, cache = forward_window(params, cfg, inputs, carry)
        grads, loss, norms = backward_window(params, cfg, cache, targets)
        if clip_norm is not None:
            total = clip_gradients(grads, clip_norm)
            if total > clip_norm:
                clipped += 1
                log.info("clipped gradient norm %.4g to %.4g", total, clip_norm)
        adam_step(adam, params, grads, lr)
        loss_sum += loss
        norm_sum += norms
        n += 1
    return EpochStats(loss_sum / n, norm_sum / n, n, clipped)


def evaluate(params: NetworkParams, cfg: NetworkConfig, ids, bptt: int | None = None) -> float:
    """Mean per-symbol cross entropy over every predicted position of ``ids``.

    A single stateful stream is walked in chunks of ``bptt`` symbols; the
    last chunk may be shorter.  Parameters are not touched.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) < 2:
        raise CorpusError("split too short to evaluate (need at least 2 symbols)")
    K = bptt or cfg.bptt
    carry = CarriedState.zeros(cfg, 1)
    total = 0.0
    for start in range(0, len(ids) - 1, K):
        stop = min(start + K, len(ids) - 1)
        x = ids[start:stop, None]
        y = ids[start + 1 : stop + 1]
        logits, carry, _ = forward_window(params, cfg, x, carry, keep_cache=False)
        losses, _ = softmax_cce_batch(logits[:, 0, :].T, y)
        total += float(losses.sum())
    return total / (len(ids) - 1)


# ------------------------------------------------------------------- fit

@dataclass
class TrainRecord:
    epoch: int
    train_cce: float
    valid_cce: float
    test_cce: float
    lr: float
    wall_seconds: float
    layer_grad_norms: list[float]
    windows: int

    def to_json(self, include_wall: bool = False) -> str:
        data = asdict(self)
        if not include_wall:
            data.pop("wall_seconds")
        return json.dumps(data)


@dataclass
class FitResult:
    records: list[TrainRecord]
    best_epoch: int
    best_valid_loss: float
    test_loss_at_best: float
    checkpoint_path: str | None
    hidden: int
    params: NetworkParams | None = field(default=None, repr=False)

    @property
    def total_epochs(self) -> int:
        return len(self.records)


class EarlyStopping:
    """Tracks the best validation loss; ties keep the earlier epoch."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record one epoch; True when it is a strict improvement."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def resolve_hidden(cfg: NetworkConfig, hidden: int | None, budget: int | None) -> int:
    if hidden is not None and budget is not None:
        raise ValueError("give either hidden or budget, not both")
    if budget is not None:
        return solve_hidden_for_budget(cfg.kind, cfg.depth, cfg.vocab, budget, cfg.tie_grid_weights)
    return cfg.hidden if hidden is None else hidden


def fit(
    cfg: NetworkConfig,
    corpus: SplitCorpus,
    *,
    hidden: int | None = None,
    budget: int | None = None,
    max_epochs: int = 100,
    patience: int = 10,
    seed: int = 0,
    adam: AdamConfig = AdamConfig(),
    clip_norm: float | None = None,
    out_dir: str | Path | None = None,
    vocab=None,
) -> FitResult:
    """Train until ``max_epochs`` or ``patience`` epochs without improvement.

    Every epoch evaluates the validation and test splits.  The parameters with
    the lowest validation loss are kept (and written to ``best.ckpt`` when
    ``out_dir`` is given, alongside ``metrics.jsonl`` and ``timing.csv``).
    """
    cfg = replace(cfg, hidden=resolve_hidden(cfg, hidden, budget))
    if max_epochs < 1:
        raise ValueError("max_epochs must be >= 1")
    params = init_network(cfg, seed)
    state = AdamState.fresh(params, adam)
    batcher = StreamBatcher(corpus.train, cfg.batch, cfg.bptt)
    stopper = EarlyStopping(patience)
    out = Path(out_dir) if out_dir is not None else None
    ckpt_path = None
    metrics_fh = timing_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt_path = out / "best.ckpt"
        metrics_fh = open(out / "metrics.jsonl", "w")
        timing_fh = open(out / "timing.csv", "w")
        timing_fh.write("epoch,wall_seconds\n")
    records: list[TrainRecord] = []
    best_params = None
    best_test = math.nan
    try:
        for epoch in range(1, max_epochs + 1):
            t0 = time.perf_counter()
            lr = lr_schedule(adam.lr, adam.decay, epoch)
            stats = run_epoch(params, cfg, batcher, state, lr, clip_norm)
            valid = evaluate(params, cfg, corpus.valid)
            test = evaluate(params, cfg, corpus.test)
            rec = TrainRecord(
                epoch,
                stats.train_cce,
                valid,
                test,
                lr,
                time.perf_counter() - t0,
                [float(x) for x in stats.layer_grad_norms],
                stats.windows,
            )
            records.append(rec)
            log.info(
                "epoch %d  train %.4f  valid %.4f  test %.4f  lr %.3g  (%.1fs)",
                epoch, rec.train_cce, valid, test, lr, rec.wall_seconds,
            )
            if metrics_fh is not None:
                metrics_fh.write(rec.to_json() + "\n")
                metrics_fh.flush()
                timing_fh.write(f"{epoch},{rec.wall_seconds:.3f}\n")
            if stopper.update(epoch, valid):
                best_params = params.copy()
                best_test = test
                if ckpt_path is not None:
                    save_checkpoint(
                        ckpt_path,
                        best_params,
                        cfg,
                        None if vocab is None else vocab.symbols,
                        {"epoch": epoch, "valid_cce": valid, "test_cce": test, "seed": seed},
                        bytes_mode=getattr(vocab, "bytes_mode", False),
                    )
            if stopper.should_stop:
                log.info("no validation improvement for %d epochs; stopping", patience)
                break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
            timing_fh.close()
    return FitResult(
        records,
        stopper.best_epoch,
        stopper.best,
        best_test,
        None if ckpt_path is None else str(ckpt_path),
        cfg.hidden,
        best_params,
    )


# ------------------------------------------------------------- gradcheck

@dataclass
class GradcheckReport:
    kind: str
    max_rel_error: float
    tolerance: float
    per_tensor: list[tuple[str, float, float]]  # (name, relative error, max abs error)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    @property
    def failing(self) -> list[str]:
        return [name for name, rel, _ in self.per_tensor if rel > self.tolerance]

    def format(self) -> str:
        lines = [f"gradcheck {self.kind}: max relative error {self.max_rel_error:.3e} "
                 f"(tolerance {self.tolerance:.0e}) -> {'PASS' if self.passed else 'FAIL'}"]
        for name, rel, ab in self.per_tensor:
            flag = "" if rel <= self.tolerance else "  <-- FAIL"
            lines.append(f"  {name:<22s} rel {rel:.3e}  abs {ab:.3e}{flag}")
        return "\n".join(lines)


GRADCHECK_DIMS = {"hidden": 4, "depth": 2, "bptt": 3, "batch": 2, "vocab": 5}


def _window_loss(params, cfg, inputs, targets, carry) -> float:
    logits, _, _ = forward_window(params, cfg, inputs, carry, keep_cache=False)
    total = 0.0
    for t in range(inputs.shape[0]):
        losses, _ = softmax_cce_batch(logits[t].T, targets[t])
        total += float(losses.sum())
    return total / inputs.size


def gradcheck(
    kind,
    dims: dict | None = None,
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-6,
    readout: str = "vertical",
    tie_grid_weights: bool = False,
    corrupt: tuple[str, float] | None = None,
) -> GradcheckReport:
    """Compare backward_window against central differences for every tensor.

    Relative error per tensor is ``|a - n| / max(|a|, |n|, 1e-8)`` in the L2
    norm.  Parameters, biases and the incoming carry are drawn at random so
    every path is exercised.  ``corrupt=(name, delta)`` adds ``delta`` to the
    first analytic entry of ``name`` (fault injection for testing the check).
    """
    d = {**GRADCHECK_DIMS, **(dims or {})}
    if d["hidden"] > 8 or d["bptt"] > 4 or d["batch"] > 2:
        raise ValueError("gradcheck is meant for small dims (hidden <= 8, bptt <= 4, batch <= 2)")
    cfg = NetworkConfig(
        kind, depth=d["depth"], hidden=d["hidden"], vocab=d["vocab"], bptt=d["bptt"],
        batch=d["batch"], readout=readout, tie_grid_weights=tie_grid_weights,
    )
    rng = make_rng(seed)
    params = init_network(cfg, seed)
    for _, t in params.named_tensors():
        t += rng.normal(0.0, 0.3, t.shape)
    carry = CarriedState.zeros(cfg)
    carry.h2 = [rng.uniform(-0.8, 0.8, h.shape) for h in carry.h2]
    carry.m2 = [None if m is None else rng.uniform(-0.8, 0.8, m.shape) for m in carry.m2]
    inputs = rng.integers(0, cfg.vocab, (cfg.bptt, cfg.batch))
    targets = rng.integers(0, cfg.vocab, (cfg.bptt, cfg.batch))

    _, _, cache = forward_window(params, cfg, inputs, carry)
    grads, _, _ = backward_window(params, cfg, cache, targets)
    if corrupt is not None:
        grads.tensor(corrupt[0]).flat[0] += corrupt[1]

    rows = []
    for name, theta in params.named_tensors():
        numeric = np.zeros_like(theta)
        flat = theta.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = _window_loss(params, cfg, inputs, targets, carry)
            flat[i] = orig - step
            down = _window_loss(params, cfg, inputs, targets, carry)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * step)
        analytic = grads.tensor(name)
        diff = float(np.linalg.norm(analytic - numeric))
        denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-8)
        rows.append((name, diff / denom, float(np.max(np.abs(analytic - numeric)))))
    worst = max(r[1] for r in rows)
    return GradcheckReport(cfg.kind.value, worst, tolerance, rows)


# ------------------------------------------------------------ experiments

@dataclass
class SweepRow:
    fraction: float
    train_symbols: int
    test_cce: float
    best_epoch: int
    total_epochs: int


def _sweep_one(args) -> SweepRow:
    cfg, corpus, p, fit_kwargs = args
    sub = subset_fraction(corpus, p)
    res = fit(cfg, sub, **fit_kwargs)
    return SweepRow(p, len(sub.train), res.test_loss_at_best, res.best_epoch, res.total_epochs)


def efficiency_sweep(
    cfg: NetworkConfig,
    corpus: SplitCorpus,
    fractions=DEFAULT_FRACTIONS,
    *,
    jobs: int = 1,
    out_dir: str | Path | None = None,
    **fit_kwargs,
) -> list[SweepRow]:
    """Independent fits on training-set prefixes; valid/test stay fixed.

    Extra keyword arguments go to :func:`fit`.  Rows come back sorted by
    fraction whatever order the workers finish in.
    """
    fractions = sorted(float(p) for p in fractions)
    for p in fractions:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {p}")
    tasks = []
    for p in fractions:
        kw = dict(fit_kwargs)
        if out_dir is not None:
            kw["out_dir"] = Path(out_dir) / f"fraction_{p:.2f}"
        tasks.append((cfg, corpus, p, kw))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    rows.sort(key=lambda r: r.fraction)
    if out_dir is not None:
        write_sweep_csv(Path(out_dir) / "sweep.csv", rows)
    return rows


def write_sweep_csv(path: Path, rows: list[SweepRow]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("fraction,train_symbols,test_cce,best_epoch,total_epochs\n")
        for r in rows:
            fh.write(f"{r.fraction},{r.train_symbols},{r.test_cce!r},{r.best_epoch},{r.total_epochs}\n")


def gradient_norm_grid(
    cfg: NetworkConfig,
    corpus: SplitCorpus,
    epochs: int,
    *,
    hidden: int | None = None,
    budget: int | None = None,
    seed: int = 0,
    adam: AdamConfig = AdamConfig(),
    clip_norm: float | None = None,
) -> np.ndarray:
    """Epoch-mean per-layer gradient norms, shaped ``(depth, epochs)``.

    Row 0 is the layer next to the input.
    """
    if cfg.depth < 2:
        raise ValueError("gradient heatmaps need depth >= 2")
    cfg = replace(cfg, hidden=resolve_hidden(cfg, hidden, budget))
    params = init_network(cfg, seed)
    state = AdamState.fresh(params, adam)
    batcher = StreamBatcher(corpus.train, cfg.batch, cfg.bptt)
    grid = np.zeros((cfg.depth, epochs))
    for e in range(1, epochs + 1):
        stats = run_epoch(params, cfg, batcher, state, lr_schedule(adam.lr, adam.decay, e), clip_norm)
        grid[:, e - 1] = stats.layer_grad_norms
        log.info("heatmap epoch %d: train %.4f", e, stats.train_cce)
    return grid


def write_grid_csv(path: str | Path, grid: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("layer," + ",".join(f"epoch_{e + 1}" for e in range(grid.shape[1])) + "\n")
        for l, row in enumerate(grid):
            fh.write(f"{l + 1}," + ",".join(repr(float(x)) for x in row) + "\n")
    return path


def grad_heatmap_export(cfg: NetworkConfig, corpus: SplitCorpus, epochs: int, path, **kwargs) -> np.ndarray:
    """Train ``epochs`` epochs and write the layer x epoch gradient-norm grid as CSV."""
    grid = gradient_norm_grid(cfg, corpus, epochs, **kwargs)
    write_grid_csv(path, grid)
    return grid
