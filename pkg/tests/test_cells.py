"""Cell steps against an independent loop-based reference, plus local gradients."""
import math

import numpy as np
import pytest

from lattice_rnn.cells import (
    CellKind,
    CellParams,
    OneHot,
    count_cell_params,
    gate_sets,
    step,
    step_backward,
)
from lattice_rnn.numkit import ShapeError

ALL = list(CellKind)
MEMORY = {CellKind.LSTM, CellKind.GRID_LSTM}


# ---------------------------------------------------------------- reference

def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _affine(p, s, x1, x2):
    W, U, b = p["W_" + s], p["U_" + s], p["b_" + s]
    out = []
    for i in range(len(b)):
        acc = b[i][0]
        acc += sum(W[i][k] * x1[k] for k in range(len(x1)))
        acc += sum(U[i][k] * x2[k] for k in range(len(x2)))
        out.append(acc)
    return out


def _lstm(p, sfx, x1, x2, mem):
    i = [_sig(v) for v in _affine(p, "i" + sfx, x1, x2)]
    f = [_sig(v) for v in _affine(p, "f" + sfx, x1, x2)]
    o = [_sig(v) for v in _affine(p, "o" + sfx, x1, x2)]
    g = [math.tanh(v) for v in _affine(p, "g" + sfx, x1, x2)]
    mn = [f[j] * mem[j] + i[j] * g[j] for j in range(len(mem))]
    return [o[j] * math.tanh(mn[j]) for j in range(len(mem))], mn


def reference_step(kind, p, h1, h2, m1=None, m2=None):
    """Plain-Python transcription of each cell's update rule (one column)."""
    if kind is CellKind.GRU:
        z = [_sig(v) for v in _affine(p, "z", h1, h2)]
        r = [_sig(v) for v in _affine(p, "r", h1, h2)]
        hh = [math.tanh(v) for v in _affine(p, "h", h1, [a * b for a, b in zip(r, h2)])]
        out = [z[j] * h2[j] + (1 - z[j]) * hh[j] for j in range(len(h2))]
        return out, out, None, None
    if kind is CellKind.LSTM:
        h, mn = _lstm(p, "", h1, h2, m2)
        return h, h, None, mn
    if kind is CellKind.GRID_LSTM:
        a, m1n = _lstm(p, "1", h1, h2, m1)
        b, m2n = _lstm(p, "2", h1, h2, m2)
        return a, b, m1n, m2n
    names = {
        CellKind.PS_LRU: ("z", "z", "r", "r"),
        CellKind.RG_LRU: ("z", "z", "r1", "r2"),
        CellKind.LRU: ("z1", "z2", "r1", "r2"),
    }[kind]
    z1, z2, r1, r2 = ([_sig(v) for v in _affine(p, s, h1, h2)] for s in names)
    hh1 = [math.tanh(v) for v in _affine(p, "h1", h1, [a * b for a, b in zip(r2, h2)])]
    hh2 = [math.tanh(v) for v in _affine(p, "h2", [a * b for a, b in zip(r1, h1)], h2)]
    n = len(h1)
    if kind is CellKind.LRU:
        a = [z1[j] * hh2[j] + (1 - z1[j]) * h1[j] for j in range(n)]
        b = [z2[j] * hh1[j] + (1 - z2[j]) * h2[j] for j in range(n)]
    else:
        a = [z1[j] * h1[j] + (1 - z1[j]) * hh2[j] for j in range(n)]
        b = [z1[j] * h2[j] + (1 - z1[j]) * hh1[j] for j in range(n)]
    return a, b, None, None


def random_cell(kind, d, m, rng, scale=0.8):
    p = CellParams.zeros(kind, d, m)
    for name in p.names():
        p[name] = rng.uniform(-scale, scale, size=p[name].shape)
    return p


def random_inputs(kind, d, m, B, rng):
    h1 = rng.uniform(-1, 1, (d, B))
    h2 = rng.uniform(-1, 1, (m, B))
    m1 = rng.uniform(-1, 1, (m, B)) if kind is CellKind.GRID_LSTM else None
    m2 = rng.uniform(-1, 1, (m, B)) if kind in MEMORY else None
    return h1, h2, m1, m2


def _dims(kind):
    return (3, 3) if kind in (CellKind.PS_LRU, CellKind.RG_LRU, CellKind.LRU, CellKind.GRID_LSTM) else (4, 3)


# -------------------------------------------------------------------- tests

@pytest.mark.parametrize("kind", ALL)
def test_step_matches_reference(kind, rng):
    d, m = _dims(kind)
    p = random_cell(kind, d, m, rng)
    h1, h2, m1, m2 = random_inputs(kind, d, m, 2, rng)
    got = step(p, h1, h2, m1, m2)[:4]
    plain = {k: v.tolist() for k, v in p.tensors.items()}
    for col in range(2):
        ref = reference_step(
            kind, plain, h1[:, col].tolist(), h2[:, col].tolist(),
            None if m1 is None else m1[:, col].tolist(), None if m2 is None else m2[:, col].tolist(),
        )
        for g, r in zip(got, ref):
            if r is None:
                assert g is None
            else:
                assert np.allclose(g[:, col], r, rtol=0, atol=1e-14)


def test_scalar_gru_hand_value():
    # d = m = 1, all weights 0.5, biases 0: x = 1, h = 0.2
    p = CellParams.zeros("gru", 1, 1)
    for s in "zrh":
        p["W_" + s] = np.array([[0.5]])
        p["U_" + s] = np.array([[0.5]])
    z = 1 / (1 + math.exp(-0.6))
    hh = math.tanh(0.5 + 0.5 * z * 0.2)
    expected = z * 0.2 + (1 - z) * hh
    out = step(p, np.array([[1.0]]), np.array([[0.2]]))[1]
    assert abs(out[0, 0] - expected) < 1e-15


@pytest.mark.parametrize("kind", [CellKind.GRU, CellKind.LSTM])
def test_one_hot_input_equals_dense(kind, rng):
    p = random_cell(kind, 6, 3, rng)
    ids = np.array([0, 5, 2])
    oh = OneHot(ids, 6)
    h2 = rng.uniform(-1, 1, (3, 3))
    m2 = rng.uniform(-1, 1, (3, 3)) if kind is CellKind.LSTM else None
    a = step(p, oh, h2, None, m2)
    b = step(p, oh.dense(), h2, None, m2)
    assert np.array_equal(a[1], b[1])


@pytest.mark.parametrize("kind", [CellKind.PS_LRU, CellKind.RG_LRU, CellKind.LRU, CellKind.GRID_LSTM])
def test_square_kinds_reject_d_not_m(kind, rng):
    p = random_cell(kind, 4, 3, rng)
    with pytest.raises(ShapeError, match="d == m"):
        step(p, np.zeros((4, 1)), np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)))


def test_wrong_hidden_shape_raises(rng):
    p = random_cell("gru", 2, 3, rng)
    with pytest.raises(ShapeError):
        step(p, np.zeros((2, 1)), np.zeros((4, 1)))


def test_gate_set_counts_and_ratio():
    assert [len(gate_sets(k)) for k in ALL] == [3, 4, 5, 6, 4, 8]
    assert len(gate_sets("grid-lstm", tie_grid_weights=True)) == 4
    for m in (1, 7, 64):
        counts = [count_cell_params(k, m, m) for k in ("gru", "ps-lru", "rg-lru", "lru")]
        unit = counts[0] // 3
        assert counts == [3 * unit, 4 * unit, 5 * unit, 6 * unit]
    assert count_cell_params("gru", 5, 2) == 3 * (10 + 4 + 2)
    with pytest.raises(ValueError):
        count_cell_params("gru", 0, 2)


def test_parse_kind():
    assert CellKind.parse("RG_LRU") is CellKind.RG_LRU
    assert CellKind.parse(CellKind.LRU) is CellKind.LRU
    with pytest.raises(ValueError, match="unknown cell kind"):
        CellKind.parse("rhn")


def test_glorot_cell_draw_order(rng):
    p = CellParams.glorot("ps-lru", 3, 3, np.random.Generator(np.random.PCG64(9)))
    g = np.random.Generator(np.random.PCG64(9))
    for s in ("z", "r", "h1", "h2"):
        assert np.array_equal(p["W_" + s], g.uniform(-1, 1, (3, 3)))
        assert np.array_equal(p["U_" + s], g.uniform(-1, 1, (3, 3)))
        assert not p["b_" + s].any()


# ---------------------------------------------------------- local gradients

def _loss(p, ins, coef):
    outs = step(p, *ins)[:4]
    return sum(float((c * o).sum()) for c, o in zip(coef, outs) if o is not None)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)


@pytest.mark.parametrize("kind", ALL)
@pytest.mark.parametrize("m", [3, 5])
def test_step_backward_matches_differences(kind, m, rng):
    d = m if kind not in (CellKind.GRU, CellKind.LSTM) else m + 1
    p = random_cell(kind, d, m, rng)
    ins = list(random_inputs(kind, d, m, 2, rng))
    outs = step(p, *ins)
    coef = [None if o is None else rng.standard_normal(o.shape) for o in outs[:4]]
    grads = p.zeros_like()
    if kind in (CellKind.GRU, CellKind.LSTM):
        # h1' and h2' are the same vector; feed the loss through h2' only
        coef[0] = np.zeros_like(outs[0])
    d_ins = step_backward(p, outs[4], *coef, grads=grads)
    h = 1e-6
    for name in p.names():
        num = np.zeros_like(p[name])
        for idx in np.ndindex(*num.shape):
            orig = p[name][idx]
            p.tensors[name][idx] = orig + h
            up = _loss(p, ins, coef)
            p.tensors[name][idx] = orig - h
            down = _loss(p, ins, coef)
            p.tensors[name][idx] = orig
            num[idx] = (up - down) / (2 * h)
        assert _rel(grads[name], num) < 1e-6, name
    for slot, (x, dx) in enumerate(zip(ins, d_ins)):
        if x is None:
            continue
        num = np.zeros_like(x)
        for idx in np.ndindex(*x.shape):
            orig = x[idx]
            x[idx] = orig + h
            up = _loss(p, ins, coef)
            x[idx] = orig - h
            down = _loss(p, ins, coef)
            x[idx] = orig
            num[idx] = (up - down) / (2 * h)
        assert _rel(dx, num) < 1e-6, f"input slot {slot}"


# ------------------------------------------------------------ hand examples

def _col(*v):
    return np.array(v, dtype=float).reshape(-1, 1)


def test_zero_parameter_examples():
    out = step(CellParams.zeros("gru", 1, 1), _col(1.0), _col(0.4))
    assert out[1][0, 0] == 0.2
    for kind in ("ps-lru", "rg-lru", "lru"):
        o1, o2 = step(CellParams.zeros(kind, 1, 1), _col(0.6), _col(0.4))[:2]
        assert abs(o1[0, 0] - 0.3) < 1e-15 and abs(o2[0, 0] - 0.2) < 1e-15
    _, h, _, mem, _ = step(CellParams.zeros("lstm", 1, 1), _col(0.0), _col(0.0), None, _col(0.8))
    assert mem[0, 0] == 0.4 and abs(h[0, 0] - 0.189974) < 1e-6
    a, b, m1, m2, _ = step(CellParams.zeros("grid-lstm", 1, 1), _col(0.0), _col(0.0), _col(0.8), _col(0.0))
    assert abs(a[0, 0] - 0.5 * math.tanh(0.4)) < 1e-15 and b[0, 0] == 0.0


@pytest.mark.parametrize("kind", ["gru", "ps-lru", "rg-lru", "lru", "lstm", "grid-lstm"])
def test_scalar_all_ones_example(kind):
    p = CellParams.zeros(kind, 1, 1)
    for name in p.names():
        if not name.startswith("b_"):
            p[name] = np.ones((1, 1))
    k = CellKind.parse(kind)
    mems = (_col(0.3), _col(-0.2)) if k is CellKind.GRID_LSTM else (None, _col(-0.2) if k in MEMORY else None)
    got = step(p, _col(0.5), _col(0.25), *mems)[:4]
    plain = {n: v.tolist() for n, v in p.tensors.items()}
    ref = reference_step(k, plain, [0.5], [0.25], *[None if m is None else [m[0, 0]] for m in mems])
    for g, r in zip(got, ref):
        assert (g is None and r is None) or abs(g[0, 0] - r[0]) < 1e-15


def test_lstm_saturated_gates_keep_memory(rng):
    p = random_cell("lstm", 3, 3, rng)
    p["b_f"], p["b_i"], p["b_o"] = np.full((3, 1), 50.0), np.full((3, 1), -50.0), np.full((3, 1), 50.0)
    mem = rng.uniform(-1, 1, (3, 2))
    _, h, _, mn, _ = step(p, rng.uniform(-0.1, 0.1, (3, 2)), rng.uniform(-0.1, 0.1, (3, 2)), None, mem)
    assert np.abs(mn - mem).max() < 1e-12 and np.abs(h - np.tanh(mem)).max() < 1e-12


def test_grid_symmetric_weights_give_equal_outputs(rng):
    p = random_cell("grid-lstm", 4, 4, rng)
    for g in "ifog":
        for part in "WUb":
            p[f"{part}_{g}2"] = p[f"{part}_{g}1"]
    mem = rng.uniform(-1, 1, (4, 2))
    a, b, m1, m2, _ = step(p, rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (4, 2)), mem, mem.copy())
    assert np.array_equal(a, b) and np.array_equal(m1, m2)


def test_cell_count_examples():
    assert count_cell_params("gru", 10, 10) == 630
    assert count_cell_params("ps-lru", 10, 10) == 840
    assert count_cell_params("rg-lru", 10, 10) == 1050
    assert count_cell_params("lru", 10, 10) == 1260
    assert count_cell_params("grid-lstm", 10, 10) == 1680
    assert count_cell_params("grid-lstm", 10, 10, tie_grid_weights=True) == 840
