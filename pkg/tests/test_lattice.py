import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lattice_rnn.cells import CellKind
from lattice_rnn.lattice import (
    CarriedState,
    NetworkConfig,
    backward_window,
    count_network_params,
    forward_window,
    init_network,
    sample_text,
    solve_hidden_for_budget,
    zero_network,
)
from lattice_rnn.numkit import softmax_cce_batch

ALL = list(CellKind)


def small_cfg(kind, **kw):
    base = dict(depth=2, hidden=5, vocab=7, bptt=4, batch=3)
    base.update(kw)
    return NetworkConfig(kind, **base)


def random_ids(rng, K, B, V):
    return rng.integers(0, V, size=(K, B))


@pytest.mark.parametrize("kind", ALL)
@pytest.mark.parametrize("tie", [False, True])
def test_param_count_matches_tensors(kind, tie):
    cfg = small_cfg(kind, depth=3, tie_grid_weights=tie)
    params = init_network(cfg, 0)
    assert params.count() == count_network_params(kind, 3, 7, 5, tie)


def test_hand_param_counts():
    # GRU, V=27, m=10, L=2: 3(270+100+10) + 3(100+100+10) + 270 + 27
    assert count_network_params("gru", 2, 27, 10) == 1140 + 630 + 297
    # LRU carries an m x V embedding and square cells
    assert count_network_params("lru", 2, 27, 10) == 270 + 2 * 6 * 210 + 297


@settings(max_examples=200, deadline=None)
@given(kind=st.sampled_from(ALL), depth=st.integers(1, 12), vocab=st.integers(2, 300),
       extra=st.integers(0, 5_000_000))
def test_budget_solver_is_tight(kind, depth, vocab, extra):
    budget = count_network_params(kind, depth, vocab, 1) + extra
    m = solve_hidden_for_budget(kind, depth, vocab, budget)
    assert count_network_params(kind, depth, vocab, m) <= budget < count_network_params(kind, depth, vocab, m + 1)


def test_budget_below_minimum_raises():
    with pytest.raises(ValueError, match="below the smallest"):
        solve_hidden_for_budget("gru", 2, 27, 10)


def test_config_validation():
    with pytest.raises(ValueError, match="depth"):
        NetworkConfig("gru", depth=0)
    with pytest.raises(ValueError, match="readout"):
        NetworkConfig("gru", readout="diagonal")
    with pytest.raises(ValueError, match="unknown cell kind"):
        NetworkConfig("rhn")


def test_init_is_seeded_and_biases_zero():
    cfg = small_cfg("lru")
    a, b, c = init_network(cfg, 3), init_network(cfg, 3), init_network(cfg, 4)
    for (na, ta), (_, tb), (_, tc) in zip(a.named_tensors(), b.named_tensors(), c.named_tensors()):
        assert np.array_equal(ta, tb)
        if na.split(".")[-1].startswith("b_"):
            assert not ta.any()
        else:
            assert not np.array_equal(ta, tc)


def test_canonical_tensor_order():
    names = [n for n, _ in init_network(small_cfg("ps-lru", depth=1), 0).named_tensors()]
    assert names[0] == "embed" and names[-2:] == ["W_out", "b_out"]
    assert names[1:-2] == sorted(names[1:-2])
    assert [n for n, _ in init_network(small_cfg("gru", depth=1), 0).named_tensors()][0] == "layers.0.U_h"


def test_zero_network_predicts_uniform(rng):
    cfg = small_cfg("rg-lru")
    logits, _, _ = forward_window(zero_network(cfg), cfg, random_ids(rng, 4, 3, 7), CarriedState.zeros(cfg))
    assert not logits.any()


@pytest.mark.parametrize("kind", ALL)
def test_two_windows_equal_one_long_window(kind, rng):
    cfg = small_cfg(kind)
    params = init_network(cfg, 1)
    ids = random_ids(rng, 8, 3, 7)
    long_logits, long_carry, _ = forward_window(params, cfg, ids, CarriedState.zeros(cfg))
    a, carry, _ = forward_window(params, cfg, ids[:4], CarriedState.zeros(cfg))
    b, carry, _ = forward_window(params, cfg, ids[4:], carry)
    assert np.array_equal(np.concatenate([a, b]), long_logits)
    for x, y in zip(carry.h2, long_carry.h2):
        assert np.array_equal(x, y)


@pytest.mark.parametrize("kind", ALL)
def test_streams_are_independent(kind, rng):
    cfg = small_cfg(kind)
    params = init_network(cfg, 2)
    ids = random_ids(rng, 4, 3, 7)
    full, _, _ = forward_window(params, cfg, ids, CarriedState.zeros(cfg))
    one, _, _ = forward_window(params, cfg, ids[:, 1:2], CarriedState.zeros(cfg, 1))
    assert np.array_equal(full[:, 1:2], one)


def test_readout_choice():
    ids = np.array([[1, 2], [3, 4], [0, 6]])
    for kind, differs in (("gru", False), ("lru", True), ("grid-lstm", True)):
        out = []
        for readout in ("vertical", "horizontal"):
            cfg = small_cfg(kind, bptt=3, batch=2, readout=readout)
            out.append(forward_window(init_network(cfg, 0), cfg, ids, CarriedState.zeros(cfg))[0])
        assert (not np.array_equal(out[0], out[1])) == differs


@pytest.mark.parametrize("kind", ALL)
def test_backward_loss_is_mean_cce(kind, rng):
    cfg = small_cfg(kind)
    params = init_network(cfg, 5)
    ids = random_ids(rng, 4, 3, 7)
    targets = random_ids(rng, 4, 3, 7)
    logits, _, cache = forward_window(params, cfg, ids, CarriedState.zeros(cfg))
    grads, loss, norms = backward_window(params, cfg, cache, targets)
    ref = np.mean([softmax_cce_batch(logits[t].T, targets[t])[0] for t in range(4)])
    assert abs(loss - ref) < 1e-14
    assert norms.shape == (2,)
    for layer, n in zip(grads.layers, norms):
        assert math.isclose(n, math.sqrt(sum(float((g * g).sum()) for g in layer.tensors.values())))


def test_backward_rejects_mismatched_targets(rng):
    cfg = small_cfg("gru")
    params = init_network(cfg, 0)
    _, _, cache = forward_window(params, cfg, random_ids(rng, 4, 3, 7), CarriedState.zeros(cfg))
    with pytest.raises(ValueError, match="targets"):
        backward_window(params, cfg, cache, np.zeros((3, 3), dtype=int))
    with pytest.raises(IndexError):
        forward_window(params, cfg, np.full((4, 3), 7), CarriedState.zeros(cfg))


def test_sample_text_deterministic():
    cfg = small_cfg("lru", batch=1)
    params = init_network(cfg, 0)
    table = list("abcdefg")
    a = sample_text(params, cfg, table, "abc", 30, 1.0, seed=4)
    b = sample_text(params, cfg, table, "abc", 30, 1.0, seed=4)
    assert a == b and len(a) == 30 and set(a) <= set(table)
    g1 = sample_text(params, cfg, table, "abc", 10, 0.0, seed=1)
    g2 = sample_text(params, cfg, table, "abc", 10, 0.0, seed=2)
    assert g1 == g2
    with pytest.raises(ValueError, match="not in the vocabulary"):
        sample_text(params, cfg, table, "xyz", 5)


def test_budget_examples():
    assert solve_hidden_for_budget("gru", 2, 27, 2067) == 10
    for kind in ALL:
        assert solve_hidden_for_budget(kind, 3, 40, count_network_params(kind, 3, 40, 1)) == 1
    assert solve_hidden_for_budget("lru", 2, 74, 200_000) < solve_hidden_for_budget("gru", 2, 74, 200_000)


def test_single_layer_gru_equals_direct_loop(rng):
    from lattice_rnn.cells import step_gru

    cfg = small_cfg("gru", depth=1, batch=2)
    params = init_network(cfg, 8)
    ids = random_ids(rng, 4, 2, 7)
    logits, _, _ = forward_window(params, cfg, ids, CarriedState.zeros(cfg))
    h = np.zeros((5, 2))
    eye = np.eye(7)
    for t in range(4):
        _, h, _ = step_gru(params.layers[0], eye[:, ids[t]], h)
        ref = params.W_out @ h + params.b_out
        assert np.abs(logits[t].T - ref).max() <= 1e-15


def test_gru_and_lru_agree_under_reduction_mapping(rng):
    # one layer, horizontal readout, resets saturated open; the LRU input
    # projection absorbs the GRU's input weights
    V, m = 7, 4
    lcfg = small_cfg("lru", depth=1, hidden=m, vocab=V, batch=2, readout="horizontal")
    gcfg = small_cfg("gru", depth=1, hidden=m, vocab=V, batch=2)
    lru = init_network(lcfg, 0)
    for _, t in lru.named_tensors():
        t += rng.normal(0, 0.3, t.shape)
    cell = lru.layers[0]
    cell["b_r2"] = np.full((m, 1), 50.0)
    gru = init_network(gcfg, 0)
    g = gru.layers[0]
    g["W_z"], g["U_z"], g["b_z"] = -(cell["W_z2"] @ lru.embed), -cell["U_z2"], -cell["b_z2"]
    g["W_h"], g["U_h"], g["b_h"] = cell["W_h1"] @ lru.embed, cell["U_h1"], cell["b_h1"]
    g["b_r"] = np.full((m, 1), 50.0)
    gru.W_out, gru.b_out = lru.W_out.copy(), lru.b_out.copy()
    ids = random_ids(rng, 4, 2, V)
    a, _, _ = forward_window(gru, gcfg, ids, CarriedState.zeros(gcfg))
    b, _, _ = forward_window(lru, lcfg, ids, CarriedState.zeros(lcfg))
    assert np.abs(a - b).max() <= 1e-9


@pytest.mark.parametrize("kind", ALL)
def test_bias_gradient_columns_sum_to_zero(kind, rng):
    cfg = small_cfg(kind)
    params = init_network(cfg, 1)
    _, _, cache = forward_window(params, cfg, random_ids(rng, 4, 3, 7), CarriedState.zeros(cfg))
    grads, _, _ = backward_window(params, cfg, cache, random_ids(rng, 4, 3, 7))
    assert abs(grads.b_out.sum()) <= 1e-12


def test_carry_is_a_truncation_boundary(rng):
    cfg = small_cfg("lru")
    params = init_network(cfg, 2)
    ids, targets = random_ids(rng, 4, 3, 7), random_ids(rng, 4, 3, 7)
    carry = CarriedState.zeros(cfg)
    bumped = carry.copy()
    bumped.h2[0] += 0.5
    la, _, ca = forward_window(params, cfg, ids, carry)
    lb, _, cb = forward_window(params, cfg, ids, bumped)
    assert not np.array_equal(la, lb)
    out = backward_window(params, cfg, ca, targets)
    assert len(out) == 3  # parameter grads, loss, layer norms; nothing for the carry


def test_zero_network_greedy_sample_repeats_first_symbol():
    cfg = small_cfg("rg-lru", batch=1)
    assert sample_text(zero_network(cfg), cfg, list("xyzabcd"), "ab", 6, 0.0) == "xxxxxx"


def test_overfit_alternating_text_continues_pattern():
    from lattice_rnn.corpus import build_vocab_encode, split_90_5_5
    from lattice_rnn.trainer import evaluate, fit

    vocab, ids = build_vocab_encode("ab" * 300)
    sc = split_90_5_5(ids)
    cfg = NetworkConfig("lru", depth=1, hidden=8, vocab=2, bptt=20, batch=1)
    res = fit(cfg, sc, max_epochs=30)
    assert evaluate(res.params, cfg, sc.test) < 0.1
    assert sample_text(res.params, cfg, vocab.symbols, "ab", 10, 0.0) == "ab" * 5
