"""Stateless recurrent cell steps and their exact backward passes.

Every cell maps a vertical input ``h1`` (depth direction) and a horizontal
state ``h2`` (time direction) to new ``(h1', h2')``.  GRU and LSTM have a
single output that is replicated upward; the lattice cells (PS-LRU, RG-LRU,
LRU) and Grid-LSTM emit distinct outputs for each direction.

Vectors are columns; a batch is a ``(dim, B)`` block.  A gate set ``s`` owns
``W_s`` (m x d), ``U_s`` (m x m) and ``b_s`` (m x 1), and its pre-activation is
``W_s @ h1 + U_s @ h2 + b_s``.

Backward functions take the cached activations from the forward step plus
the upstream gradients of the outputs, accumulate parameter gradients into a
``grads`` dict shaped like ``CellParams.tensors`` and return the gradients of
the inputs.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .numkit import ShapeError, affine_pair, glorot_init, matmul, matmul_acc, sigmoid


class CellKind(str, enum.Enum):
    GRU = "gru"
    PS_LRU = "ps-lru"
    RG_LRU = "rg-lru"
    LRU = "lru"
    LSTM = "lstm"
    GRID_LSTM = "grid-lstm"

    @classmethod
    def parse(cls, value: "str | CellKind") -> "CellKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown cell kind {value!r}; expected one of {[k.value for k in cls]}")


LATTICE_KINDS = (CellKind.PS_LRU, CellKind.RG_LRU, CellKind.LRU)
# kinds whose step needs the vertical input in hidden space (d == m)
SQUARE_KINDS = LATTICE_KINDS + (CellKind.GRID_LSTM,)

# (z1, z2, r1, r2) gate-set names; a shared gate appears twice
_LATTICE_GATES = {
    CellKind.PS_LRU: ("z", "z", "r", "r"),
    CellKind.RG_LRU: ("z", "z", "r1", "r2"),
    CellKind.LRU: ("z1", "z2", "r1", "r2"),
}

_LSTM_SETS = ("i", "f", "o", "g")


def gate_sets(kind: CellKind, tie_grid_weights: bool = False) -> tuple[str, ...]:
    """Names of the (W, U, b) gate sets a cell of ``kind`` owns."""
    kind = CellKind.parse(kind)
    if kind is CellKind.GRU:
        return ("z", "r", "h")
    if kind is CellKind.PS_LRU:
        return ("z", "r", "h1", "h2")
    if kind is CellKind.RG_LRU:
        return ("z", "r1", "r2", "h1", "h2")
    if kind is CellKind.LRU:
        return ("z1", "z2", "r1", "r2", "h1", "h2")
    if kind is CellKind.LSTM:
        return _LSTM_SETS
    if tie_grid_weights:
        return _LSTM_SETS
    return tuple(s + "1" for s in _LSTM_SETS) + tuple(s + "2" for s in _LSTM_SETS)


def count_cell_params(kind: CellKind, d: int, m: int, tie_grid_weights: bool = False) -> int:
    """Trainable scalars in one cell, biases included."""
    if d < 1 or m < 1:
        raise ValueError("d and m must be >= 1")
    return len(gate_sets(kind, tie_grid_weights)) * (m * d + m * m + m)


@dataclass
class CellParams:
    kind: CellKind
    d: int
    m: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    tied: bool = False

    @classmethod
    def zeros(cls, kind, d: int, m: int, tied: bool = False) -> "CellParams":
        kind = CellKind.parse(kind)
        tensors = {}
        for s in gate_sets(kind, tied):
            tensors["W_" + s] = np.zeros((m, d))
            tensors["U_" + s] = np.zeros((m, m))
            tensors["b_" + s] = np.zeros((m, 1))
        return cls(kind, d, m, tensors, tied)

    @classmethod
    def glorot(cls, kind, d: int, m: int, rng: np.random.Generator, tied: bool = False) -> "CellParams":
        """Glorot-uniform weights, zero biases.  Draw order: W then U per gate set."""
        p = cls.zeros(kind, d, m, tied)
        for s in gate_sets(p.kind, tied):
            p.tensors["W_" + s] = glorot_init(rng, m, d)
            p.tensors["U_" + s] = glorot_init(rng, m, m)
        return p

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if value.shape != self.tensors[name].shape:
            raise ShapeError(f"{name}: expected {self.tensors[name].shape}, got {value.shape}")
        self.tensors[name] = np.array(value, dtype=np.float64)

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def copy(self) -> "CellParams":
        return CellParams(self.kind, self.d, self.m, {k: v.copy() for k, v in self.tensors.items()}, self.tied)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())


@dataclass(frozen=True)
class OneHot:
    """Column block of one-hot vectors, stored as token ids.

    Used as the vertical input of the bottom layer; projections become column
    gathers, which give exactly what the dense product would.
    """

    ids: np.ndarray
    size: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.size, len(self.ids))

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.ids, np.arange(len(self.ids))] = 1.0
        return out


CellActivations = dict


def _pre(p: CellParams, s: str, x1, x2: np.ndarray) -> np.ndarray:
    W, U, b = p.tensors["W_" + s], p.tensors["U_" + s], p.tensors["b_" + s]
    if isinstance(x1, OneHot):
        out = W[:, x1.ids]
        out += matmul(U, x2)
        out += b
        return out
    return affine_pair(W, x1, U, x2, b)


def _pre_back(p: CellParams, grads: dict, s: str, da: np.ndarray, x1, x2: np.ndarray):
    """Accumulate the parameter gradients of one gate set; return (dx1, dx2)."""
    W, U = p.tensors["W_" + s], p.tensors["U_" + s]
    if isinstance(x1, OneHot):
        tmp = np.zeros_like(W)
        np.add.at(tmp, (slice(None), x1.ids), da)
        grads["W_" + s] += tmp
        dx1 = None
    else:
        matmul_acc(da, x1.T, grads["W_" + s])
        dx1 = matmul(W.T, da)
    matmul_acc(da, x2.T, grads["U_" + s])
    grads["b_" + s] += da.sum(axis=1, keepdims=True)
    return dx1, matmul(U.T, da)


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _check(p: CellParams, kind_ok, h1, h2, square: bool = False):
    if p.kind not in kind_ok:
        raise ValueError(f"parameters are for {p.kind.value}, not {'/'.join(k.value for k in kind_ok)}")
    if h1.shape[0] != p.d or h2.shape[0] != p.m or h1.shape[1] != h2.shape[1]:
        raise ShapeError(f"{p.kind.value} cell (d={p.d}, m={p.m}) got h1 {h1.shape} and h2 {h2.shape}")
    if square and p.d != p.m:
        raise ShapeError(f"{p.kind.value} cells need d == m, got d={p.d}, m={p.m}")


# --------------------------------------------------------------------- GRU

def step_gru(p: CellParams, h1, h2):
    """One GRU step; returns ``(h1', h2', acts)`` with ``h1' is h2'``."""
    _check(p, (CellKind.GRU,), h1, h2)
    z = sigmoid(_pre(p, "z", h1, h2))
    r = sigmoid(_pre(p, "r", h1, h2))
    rh2 = r * h2
    hh = np.tanh(_pre(p, "h", h1, rh2))
    h2n = z * h2 + (1.0 - z) * hh
    acts = {"h1": h1, "h2": h2, "z": z, "r": r, "rh2": rh2, "hh": hh}
    return h2n, h2n, acts


def _backward_gru(p, acts, dh1n, dh2n, grads):
    dh = _add(dh1n, dh2n)
    h1, h2, z, r, rh2, hh = (acts[k] for k in ("h1", "h2", "z", "r", "rh2", "hh"))
    dz = dh * (h2 - hh)
    dh2 = dh * z
    da_h = dh * (1.0 - z) * (1.0 - hh * hh)
    dh1, drh2 = _pre_back(p, grads, "h", da_h, h1, rh2)
    dh2 += drh2 * r
    dr = drh2 * h2
    d1, d2 = _pre_back(p, grads, "r", dr * r * (1.0 - r), h1, h2)
    dh1, dh2 = _add(dh1, d1), dh2 + d2
    d1, d2 = _pre_back(p, grads, "z", dz * z * (1.0 - z), h1, h2)
    return _add(dh1, d1), dh2 + d2


# ----------------------------------------------------- lattice (LRU family)

def _step_lattice(p: CellParams, h1, h2):
    z1n, z2n, r1n, r2n = _LATTICE_GATES[p.kind]
    gates = {}
    for s in dict.fromkeys((z1n, z2n, r1n, r2n)):
        gates[s] = sigmoid(_pre(p, s, h1, h2))
    z1, z2, r1, r2 = gates[z1n], gates[z2n], gates[r1n], gates[r2n]
    r2h2 = r2 * h2
    r1h1 = r1 * h1
    hh1 = np.tanh(_pre(p, "h1", h1, r2h2))
    hh2 = np.tanh(_pre(p, "h2", r1h1, h2))
    if p.kind is CellKind.LRU:
        # the update gate weights the candidate here, not the carry
        h1n = z1 * hh2 + (1.0 - z1) * h1
        h2n = z2 * hh1 + (1.0 - z2) * h2
    else:
        z = z1
        h1n = z * h1 + (1.0 - z) * hh2
        h2n = z * h2 + (1.0 - z) * hh1
    acts = {"h1": h1, "h2": h2, "r1h1": r1h1, "r2h2": r2h2, "hh1": hh1, "hh2": hh2}
    acts.update(("g_" + k, v) for k, v in gates.items())
    return h1n, h2n, acts


def _backward_lattice(p, acts, dh1n, dh2n, grads):
    z1n, z2n, r1n, r2n = _LATTICE_GATES[p.kind]
    h1, h2, hh1, hh2 = acts["h1"], acts["h2"], acts["hh1"], acts["hh2"]
    z1, z2, r1, r2 = (acts["g_" + s] for s in (z1n, z2n, r1n, r2n))
    if dh1n is None:
        dh1n = np.zeros_like(h1)
    if dh2n is None:
        dh2n = np.zeros_like(h2)
    dgate = dict.fromkeys(acts_gate_names(acts), None)
    if p.kind is CellKind.LRU:
        dgate[z1n] = dh1n * (hh2 - h1)
        dgate[z2n] = dh2n * (hh1 - h2)
        dh1 = dh1n * (1.0 - z1)
        dh2 = dh2n * (1.0 - z2)
        dhh2 = dh1n * z1
        dhh1 = dh2n * z2
    else:
        z = z1
        dgate[z1n] = dh1n * (h1 - hh2) + dh2n * (h2 - hh1)
        dh1 = dh1n * z
        dh2 = dh2n * z
        dhh2 = dh1n * (1.0 - z)
        dhh1 = dh2n * (1.0 - z)
    # projected state along time: tanh(W_h1 h1 + U_h1 (r2*h2))
    d1, dr2h2 = _pre_back(p, grads, "h1", dhh1 * (1.0 - hh1 * hh1), h1, acts["r2h2"])
    dh1 = dh1 + d1
    dh2 = dh2 + dr2h2 * r2
    dgate[r2n] = _add(dgate[r2n], dr2h2 * h2)
    # projected state along depth: tanh(W_h2 (r1*h1) + U_h2 h2)
    dr1h1, d2 = _pre_back(p, grads, "h2", dhh2 * (1.0 - hh2 * hh2), acts["r1h1"], h2)
    dh2 = dh2 + d2
    dh1 = dh1 + dr1h1 * r1
    dgate[r1n] = _add(dgate[r1n], dr1h1 * h1)
    for s, dg in dgate.items():
        g = acts["g_" + s]
        d1, d2 = _pre_back(p, grads, s, dg * g * (1.0 - g), h1, h2)
        dh1 = dh1 + d1
        dh2 = dh2 + d2
    return dh1, dh2


def acts_gate_names(acts: dict) -> list[str]:
    return [k[2:] for k in acts if k.startswith("g_")]


def step_ps_lru(p: CellParams, h1, h2):
    """PS-LRU: shared update and reset gates, separate projected states."""
    _check(p, (CellKind.PS_LRU,), h1, h2, square=True)
    return _step_lattice(p, h1, h2)


def step_rg_lru(p: CellParams, h1, h2):
    """RG-LRU: shared update gate, separate reset gates and projected states."""
    _check(p, (CellKind.RG_LRU,), h1, h2, square=True)
    return _step_lattice(p, h1, h2)


def step_lru(p: CellParams, h1, h2):
    """LRU: update gate, reset gate and projected state all split per direction."""
    _check(p, (CellKind.LRU,), h1, h2, square=True)
    return _step_lattice(p, h1, h2)


# -------------------------------------------------------------------- LSTM

def _lstm_core(p: CellParams, suffix: str, h1, h2, mem):
    i = sigmoid(_pre(p, "i" + suffix, h1, h2))
    f = sigmoid(_pre(p, "f" + suffix, h1, h2))
    o = sigmoid(_pre(p, "o" + suffix, h1, h2))
    g = np.tanh(_pre(p, "g" + suffix, h1, h2))
    mn = f * mem + i * g
    tm = np.tanh(mn)
    h = o * tm
    return h, mn, {"i": i, "f": f, "o": o, "g": g, "m": mem, "tm": tm}


def _lstm_core_back(p, suffix, a, h1, h2, dh, dmn, grads):
    i, f, o, g, mem, tm = (a[k] for k in ("i", "f", "o", "g", "m", "tm"))
    if dh is None:
        dh = np.zeros_like(tm)
    dmt = dh * o * (1.0 - tm * tm)
    if dmn is not None:
        dmt = dmt + dmn
    d_pre = {
        "i": dmt * g * i * (1.0 - i),
        "f": dmt * mem * f * (1.0 - f),
        "o": dh * tm * o * (1.0 - o),
        "g": dmt * i * (1.0 - g * g),
    }
    dh1 = None
    dh2 = 0.0
    for s in _LSTM_SETS:
        d1, d2 = _pre_back(p, grads, s + suffix, d_pre[s], h1, h2)
        dh1 = _add(dh1, d1)
        dh2 = dh2 + d2
    return dh1, dh2, dmt * f


def step_lstm(p: CellParams, h1, h2, m):
    """Standard LSTM step (no peepholes); returns ``(h1', h2', m', acts)``."""
    _check(p, (CellKind.LSTM,), h1, h2)
    h, mn, core = _lstm_core(p, "", h1, h2, m)
    return h, h, mn, {"h1": h1, "h2": h2, "core": core}


def _backward_lstm(p, acts, dh1n, dh2n, dmn, grads):
    return _lstm_core_back(p, "", acts["core"], acts["h1"], acts["h2"], _add(dh1n, dh2n), dmn, grads)


def step_grid_lstm(p: CellParams, h1, h2, m1, m2):
    """Two-dimensional Grid-LSTM step.

    The depth LSTM (parameter set 1, memory ``m1``) and the time LSTM (set 2,
    memory ``m2``) both read ``[h1; h2]``.  Returns ``(h1', h2', m1', m2', acts)``.
    """
    _check(p, (CellKind.GRID_LSTM,), h1, h2, square=True)
    s1, s2 = ("", "") if p.tied else ("1", "2")
    h1n, m1n, c1 = _lstm_core(p, s1, h1, h2, m1)
    h2n, m2n, c2 = _lstm_core(p, s2, h1, h2, m2)
    return h1n, h2n, m1n, m2n, {"h1": h1, "h2": h2, "core1": c1, "core2": c2}


def _backward_grid(p, acts, dh1n, dh2n, dm1n, dm2n, grads):
    s1, s2 = ("", "") if p.tied else ("1", "2")
    h1, h2 = acts["h1"], acts["h2"]
    a1, b1, dm1 = _lstm_core_back(p, s1, acts["core1"], h1, h2, dh1n, dm1n, grads)
    a2, b2, dm2 = _lstm_core_back(p, s2, acts["core2"], h1, h2, dh2n, dm2n, grads)
    return a1 + a2, b1 + b2, dm1, dm2


# ---------------------------------------------------------------- dispatch

def has_memory(kind: CellKind) -> bool:
    return kind in (CellKind.LSTM, CellKind.GRID_LSTM)


def step(p: CellParams, h1, h2, m1=None, m2=None):
    """Uniform step for any kind: returns ``(h1', h2', m1', m2', acts)``.

    ``m2`` is the memory carried along time (the LSTM memory); ``m1`` is the
    Grid-LSTM depth memory.  Unused slots are ``None``.
    """
    kind = p.kind
    if kind is CellKind.GRU:
        a, b, acts = step_gru(p, h1, h2)
        return a, b, None, None, acts
    if kind in LATTICE_KINDS:
        _check(p, (kind,), h1, h2, square=True)
        a, b, acts = _step_lattice(p, h1, h2)
        return a, b, None, None, acts
    if kind is CellKind.LSTM:
        a, b, mn, acts = step_lstm(p, h1, h2, m2)
        return a, b, None, mn, acts
    a, b, m1n, m2n, acts = step_grid_lstm(p, h1, h2, m1, m2)
    return a, b, m1n, m2n, acts


def step_backward(p: CellParams, acts, dh1n=None, dh2n=None, dm1n=None, dm2n=None, grads=None):
    """Backward of :func:`step`; returns ``(dh1, dh2, dm1, dm2)``.

    ``grads`` (same keys as ``p.tensors``) is accumulated in place.  ``dh1`` is
    ``None`` when the vertical input was a :class:`OneHot`.
    """
    if grads is None:
        raise ValueError("grads accumulator required")
    kind = p.kind
    if kind is CellKind.GRU:
        dh1, dh2 = _backward_gru(p, acts, dh1n, dh2n, grads)
        return dh1, dh2, None, None
    if kind in LATTICE_KINDS:
        dh1, dh2 = _backward_lattice(p, acts, dh1n, dh2n, grads)
        return dh1, dh2, None, None
    if kind is CellKind.LSTM:
        dh1, dh2, dm = _backward_lstm(p, acts, dh1n, dh2n, dm2n, grads)
        return dh1, dh2, None, dm
    return _backward_grid(p, acts, dh1n, dh2n, dm1n, dm2n, grads)
