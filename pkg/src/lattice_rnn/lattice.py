"""Stacked cells unrolled over a truncated-BPTT window.

Layout: ``L`` layers by ``K`` time steps.  At step ``t`` the bottom layer's
vertical input is the one-hot code of token ``x_t``; each higher layer takes
the vertical output of the layer below; every layer carries its own ``h2``
(and LSTM memory) along time.  The top layer's vertical output ``h1'`` feeds
the softmax by default (``readout="horizontal"`` uses ``h2'``).

GRU and LSTM read the one-hot input through their layer-0 ``W`` matrices.
Lattice cells and Grid-LSTM need a vertical input of hidden width, so those
networks carry an input embedding ``embed`` (m x V) in front of layer 0.

Gradients stop at the window boundary: the incoming carry is a constant.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import cells
from .cells import CellKind, CellParams, OneHot
from .numkit import glorot_init, make_rng, matmul, matmul_acc, softmax_cce_batch

MAX_BPTT = 10_000


@dataclass
class NetworkConfig:
    kind: CellKind
    depth: int = 2
    hidden: int = 128
    vocab: int = 27
    bptt: int = 50
    batch: int = 250
    readout: str = "vertical"
    tie_grid_weights: bool = False
    stateful: bool = True

    def __post_init__(self):
        self.kind = CellKind.parse(self.kind)
        for name in ("depth", "hidden", "vocab", "bptt", "batch"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.bptt > MAX_BPTT:
            raise ValueError(f"bptt must be <= {MAX_BPTT}")
        if self.readout not in ("vertical", "horizontal"):
            raise ValueError(f"readout must be 'vertical' or 'horizontal', got {self.readout!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        return out


def uses_embedding(kind: CellKind) -> bool:
    return CellKind.parse(kind) in cells.SQUARE_KINDS


def count_network_params(kind, depth: int, vocab: int, hidden: int, tie_grid_weights: bool = False) -> int:
    kind = CellKind.parse(kind)
    m, V = hidden, vocab
    if uses_embedding(kind):
        total = m * V + depth * cells.count_cell_params(kind, m, m, tie_grid_weights)
    else:
        total = cells.count_cell_params(kind, V, m) + (depth - 1) * cells.count_cell_params(kind, m, m)
    return total + V * m + V


@dataclass
class NetworkParams:
    layers: list[CellParams]
    W_out: np.ndarray
    b_out: np.ndarray
    embed: np.ndarray | None = None

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        """Every tensor in canonical order.

        ``embed`` (if any), then layer 0..L-1 with tensor names sorted, then
        ``W_out`` and ``b_out``.  Checkpoints and the optimizer use this order.
        """
        out = []
        if self.embed is not None:
            out.append(("embed", self.embed))
        for i, layer in enumerate(self.layers):
            for name in layer.names():
                out.append((f"layers.{i}.{name}", layer.tensors[name]))
        out.append(("W_out", self.W_out))
        out.append(("b_out", self.b_out))
        return out

    def tensor(self, name: str) -> np.ndarray:
        if name.startswith("layers."):
            _, idx, key = name.split(".", 2)
            return self.layers[int(idx)].tensors[key]
        return getattr(self, name)

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        if name.startswith("layers."):
            _, idx, key = name.split(".", 2)
            self.layers[int(idx)][key] = value
        else:
            setattr(self, name, np.array(value, dtype=np.float64))

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            [CellParams(l.kind, l.d, l.m, l.zeros_like(), l.tied) for l in self.layers],
            np.zeros_like(self.W_out),
            np.zeros_like(self.b_out),
            None if self.embed is None else np.zeros_like(self.embed),
        )

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [l.copy() for l in self.layers],
            self.W_out.copy(),
            self.b_out.copy(),
            None if self.embed is None else self.embed.copy(),
        )

    def count(self) -> int:
        return sum(t.size for _, t in self.named_tensors())


def zero_network(cfg: NetworkConfig) -> NetworkParams:
    m, V = cfg.hidden, cfg.vocab
    emb = uses_embedding(cfg.kind)
    layers = [
        CellParams.zeros(cfg.kind, m if (i > 0 or emb) else V, m, cfg.tie_grid_weights)
        for i in range(cfg.depth)
    ]
    return NetworkParams(layers, np.zeros((V, m)), np.zeros((V, 1)), np.zeros((m, V)) if emb else None)


def init_network(cfg: NetworkConfig, seed: int) -> NetworkParams:
    """Glorot-uniform weights and zero biases, drawn in canonical order."""
    rng = make_rng(seed)
    m, V = cfg.hidden, cfg.vocab
    emb = uses_embedding(cfg.kind)
    embed = glorot_init(rng, m, V) if emb else None
    layers = [
        CellParams.glorot(cfg.kind, m if (i > 0 or emb) else V, m, rng, cfg.tie_grid_weights)
        for i in range(cfg.depth)
    ]
    return NetworkParams(layers, glorot_init(rng, V, m), np.zeros((V, 1)), embed)


@dataclass
class CarriedState:
    """Per-layer recurrent carry for ``B`` parallel streams."""

    h2: list[np.ndarray]
    m2: list[np.ndarray | None]

    @classmethod
    def zeros(cls, cfg: NetworkConfig, batch: int | None = None) -> "CarriedState":
        B = cfg.batch if batch is None else batch
        mem = cells.has_memory(cfg.kind)
        return cls(
            [np.zeros((cfg.hidden, B)) for _ in range(cfg.depth)],
            [np.zeros((cfg.hidden, B)) if mem else None for _ in range(cfg.depth)],
        )

    def copy(self) -> "CarriedState":
        return CarriedState([h.copy() for h in self.h2], [None if m is None else m.copy() for m in self.m2])


@dataclass
class WindowCache:
    inputs: np.ndarray
    acts: list[list[dict]] = field(default_factory=list)
    tops: list[np.ndarray] = field(default_factory=list)
    logits: list[np.ndarray] = field(default_factory=list)


def _check_ids(ids: np.ndarray, V: int) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"token id out of range for vocabulary of {V}")


def forward_window(params: NetworkParams, cfg: NetworkConfig, inputs, carry: CarriedState, keep_cache: bool = True):
    """Run ``K`` steps over ``inputs`` (K x B token ids).

    Returns ``(logits, new_carry, cache)`` with logits shaped ``(K, B, V)``.
    The input carry is not modified.
    """
    inputs = np.asarray(inputs, dtype=np.int64)
    if inputs.ndim != 2:
        raise ValueError(f"inputs must be K x B, got shape {inputs.shape}")
    K, B = inputs.shape
    V = cfg.vocab
    _check_ids(inputs, V)
    if carry.h2[0].shape[1] != B:
        raise ValueError(f"carry holds {carry.h2[0].shape[1]} streams, inputs have {B}")
    h2 = list(carry.h2)
    m2 = list(carry.m2)
    grid = cfg.kind is CellKind.GRID_LSTM
    cache = WindowCache(inputs) if keep_cache else None
    logits = np.empty((K, B, V))
    for t in range(K):
        ids = inputs[t]
        h1 = params.embed[:, ids] if params.embed is not None else OneHot(ids, V)
        m1 = np.zeros((cfg.hidden, B)) if grid else None
        step_acts = []
        for l, layer in enumerate(params.layers):
            h1, h2[l], m1, m2[l], acts = cells.step(layer, h1, h2[l], m1, m2[l])
            step_acts.append(acts)
        top = h1 if cfg.readout == "vertical" else h2[-1]
        out = matmul(params.W_out, top)
        out += params.b_out
        logits[t] = out.T
        if keep_cache:
            cache.acts.append(step_acts)
            cache.tops.append(top)
            cache.logits.append(out)
    return logits, CarriedState(h2, m2), cache


def backward_window(params: NetworkParams, cfg: NetworkConfig, cache: WindowCache, targets):
    """Exact gradients of the mean cross entropy over the window.

    Returns ``(grads, loss, layer_grad_norms)``; ``grads`` is a
    :class:`NetworkParams` of gradients and ``layer_grad_norms[l]`` is the L2
    norm of layer ``l``'s cell-parameter gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    K, B = cache.inputs.shape
    if targets.shape != (K, B):
        raise ValueError(f"targets shaped {targets.shape}, cache expects {(K, B)}")
    if len(cache.acts) != K:
        raise ValueError("cache does not match the window (was keep_cache off?)")
    _check_ids(targets, cfg.vocab)
    grads = params.zeros_like()
    L = cfg.depth
    n = K * B
    total = 0.0
    dh2_next: list = [None] * L
    dm2_next: list = [None] * L
    vertical = cfg.readout == "vertical"
    for t in range(K - 1, -1, -1):
        losses, dlog = softmax_cce_batch(cache.logits[t], targets[t])
        total += float(losses.sum())
        dlog /= n
        top = cache.tops[t]
        matmul_acc(dlog, top.T, grads.W_out)
        grads.b_out += dlog.sum(axis=1, keepdims=True)
        dtop = matmul(params.W_out.T, dlog)
        dh1, dm1 = (dtop, None) if vertical else (None, None)
        for l in range(L - 1, -1, -1):
            dh2n = dh2_next[l]
            if l == L - 1 and not vertical:
                dh2n = dtop if dh2n is None else dh2n + dtop
            dh1, dh2, dm1, dm2 = cells.step_backward(
                params.layers[l], cache.acts[t][l], dh1, dh2n, dm1, dm2_next[l], grads.layers[l].tensors
            )
            dh2_next[l] = dh2
            dm2_next[l] = dm2
        if params.embed is not None:
            np.add.at(grads.embed, (slice(None), cache.inputs[t]), dh1)
    norms = np.array(
        [np.sqrt(sum(float(np.sum(g * g)) for g in layer.tensors.values())) for layer in grads.layers]
    )
    return grads, total / n, norms


def solve_hidden_for_budget(kind, depth: int, vocab: int, budget: int, tie_grid_weights: bool = False) -> int:
    """Largest hidden width whose network parameter count fits ``budget``."""

    def count(m):
        return count_network_params(kind, depth, vocab, m, tie_grid_weights)

    if budget < count(1):
        raise ValueError(f"budget {budget} is below the smallest network ({count(1)} parameters)")
    lo, hi = 1, 2
    while count(hi) <= budget:
        lo, hi = hi, hi * 2
    # count(lo) <= budget < count(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count(mid) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def sample_text(
    params: NetworkParams,
    cfg: NetworkConfig,
    vocab_table,
    seed_text: str,
    length: int,
    temperature: float = 1.0,
    seed: int = 0,
) -> str:
    """Prime with ``seed_text`` and draw ``length`` more symbols.

    Temperature 0 picks the arg-max (lowest id on ties).
    """
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if not seed_text:
        raise ValueError("seed_text must be non-empty")
    index = {c: i for i, c in enumerate(vocab_table)}
    try:
        ids = [index[c] for c in seed_text]
    except KeyError as exc:
        raise ValueError(f"character {exc.args[0]!r} is not in the vocabulary") from None
    rng = make_rng(seed)
    carry = CarriedState.zeros(cfg, 1)
    logits, carry, _ = forward_window(params, cfg, np.array(ids)[:, None], carry, keep_cache=False)
    last = logits[-1, 0]
    out = []
    for _ in range(length):
        if temperature == 0:
            nxt = int(np.argmax(last))
        else:
            z = last / temperature
            p = np.exp(z - z.max())
            p /= p.sum()
            nxt = int(rng.choice(len(p), p=p))
        out.append(vocab_table[nxt])
        logits, carry, _ = forward_window(params, cfg, np.array([[nxt]]), carry, keep_cache=False)
        last = logits[-1, 0]
    return "".join(out)
