import math

import numpy as np
import pytest
from conftest import small_cfg, toy_graphs
from hypothesis import given, settings
from hypothesis import strategies as st

from disgcmae.numerics import Tensor, ad, backward
from disgcmae.oracles import brute_info_nce
from disgcmae.pretrain import (
    KeyQueue,
    PretrainConfig,
    enqueue,
    info_nce,
    info_nce_batch,
    init_state,
    pair_graphs,
    pretrain_step,
    reconstruction_loss,
    run_pretraining,
)
from disgcmae.rng import make_rng


def _unit(rng, n, c):
    v = rng.normal(size=(n, c))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _queue(keys, sources, cap=None):
    q = KeyQueue.empty(cap or max(len(keys), 1), np.asarray(keys).shape[1])
    return enqueue(q, keys, sources, "teacher", "key")


# ---------------------------------------------------------------- reconstruction


def test_reconstruction_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    assert reconstruction_loss(x, x @ x.T, x).item() == 0.0
    assert reconstruction_loss([[1.0]], [[1.0]], [[0.0]]).item() == 2.0
    with pytest.raises(ValueError):
        reconstruction_loss(x, np.zeros((4, 4)), x)
    with pytest.raises(ValueError):
        reconstruction_loss(x, x @ x.T, x[:, :2])


def test_reconstruction_batched_is_mean():
    rng = np.random.default_rng(1)
    x, xt = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 3))
    a = rng.uniform(size=(2, 4, 4))
    each = [reconstruction_loss(x[b], a[b], xt[b]).item() for b in range(2)]
    assert reconstruction_loss(x, a, xt).item() == pytest.approx(np.mean(each), rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 4), st.booleans())
def test_reconstruction_positive_off_identity(seed, n, d, perturb_x):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    a = x @ x.T
    xt = x.copy()
    if perturb_x:
        xt[rng.integers(n), rng.integers(d)] += rng.choice([-1, 1]) * rng.uniform(0.01, 1.0)
    else:
        i, j = rng.integers(n), rng.integers(n)
        a[i, j] += rng.uniform(0.01, 1.0)
    assert reconstruction_loss(x, a, xt).item() > 0


# ---------------------------------------------------------------- info_nce


def test_info_nce_worked_case():
    q = _queue([[0.0, 1.0]], ["other"])
    assert info_nce([1.0, 0.0], [[1.0, 0.0]], q, 1.0, "me") == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-15)
    assert info_nce([1.0, 0.0], [[1.0, 0.0]], q, 1.0, "me") == pytest.approx(0.3133, abs=1e-4)


def test_info_nce_uniform_similarity():
    q = _queue([[1.0, 0.0]], ["other"])
    assert info_nce([1.0, 0.0], [[1.0, 0.0]], q, 0.5, "me") == pytest.approx(math.log(2), abs=1e-15)
    q = _queue(np.tile([0.0, 1.0], (5, 1)), ["o"] * 5)
    assert info_nce([0.0, 1.0], [[0.0, 1.0]], q, 0.1, "me") == pytest.approx(math.log(6), abs=1e-13)


def test_info_nce_large_temperature_limit():
    rng = np.random.default_rng(2)
    keys = _unit(rng, 9, 4)
    q = _queue(keys, [f"o{i}" for i in range(9)])
    val = info_nce(keys[0] * 0 + _unit(rng, 1, 4)[0], _unit(rng, 2, 4), q, 1e6, "me")
    assert val == pytest.approx(math.log(10), abs=1e-5)


def test_info_nce_excludes_same_source():
    keys = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    q = _queue(keys, ["me", "o1", "o2"])
    # the entry from the query's own source is not a negative
    assert info_nce([1.0, 0.0], [[1.0, 0.0]], q, 1.0, "me") == pytest.approx(-math.log(math.e / (math.e + 2)), abs=1e-15)
    with pytest.raises(ValueError):
        info_nce([1.0, 0.0], [[1.0, 0.0]], _queue([[1.0, 0.0]], ["me"]), 1.0, "me")


@pytest.mark.parametrize("seed", range(100))
def test_info_nce_matches_direct_summation(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 65))
    c = int(rng.integers(2, 9))
    keys = _unit(rng, K, c)
    sources = [f"o{i % 7}" if rng.uniform() < 0.8 else "me" for i in range(K)]
    if all(s == "me" for s in sources):
        sources[0] = "o0"
    queue = _queue(keys, sources, cap=64)
    q = _unit(rng, 1, c)[0]
    pos = _unit(rng, int(rng.integers(1, 5)), c)
    tau = float(rng.choice([0.07, 0.2, 1.0]))
    negs = [k for k, s in zip(keys, sources) if s != "me"]
    assert abs(info_nce(q, pos, queue, tau, "me") - brute_info_nce(q, pos, negs, tau)) <= 1e-10 * max(1.0, brute_info_nce(q, pos, negs, tau))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_info_nce_nonnegative_and_monotone(seed):
    rng = np.random.default_rng(seed)
    negs = _unit(rng, 6, 3)
    queue = _queue(negs, [f"o{i}" for i in range(6)])
    q = np.array([1.0, 0.0, 0.0])
    far = np.array([0.0, 1.0, 0.0])
    near = np.array([math.cos(0.3), math.sin(0.3), 0.0])
    lo = info_nce(q, [near], queue, 0.2, "me")
    hi = info_nce(q, [far], queue, 0.2, "me")
    assert 0 <= lo < hi


def test_info_nce_batch_gradient():
    rng = np.random.default_rng(3)
    q0 = _unit(rng, 3, 4)
    pos = rng.normal(size=(3, 2, 4))
    negs = _unit(rng, 5, 4)
    mask = rng.uniform(size=(3, 5)) < 0.7
    mask[:, 0] = True
    t = Tensor(q0, requires_grad=True)
    g = backward(info_nce_batch(t, pos, negs, mask, 0.5), [t])[t]
    eps = 1e-6
    num = np.zeros_like(q0)
    for idx in np.ndindex(q0.shape):
        up, dn = q0.copy(), q0.copy()
        up[idx] += eps
        dn[idx] -= eps
        num[idx] = (info_nce_batch(up, pos, negs, mask, 0.5).item() - info_nce_batch(dn, pos, negs, mask, 0.5).item()) / (2 * eps)
    np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-9)


# ---------------------------------------------------------------- queue


def test_enqueue_order_and_eviction():
    rng = np.random.default_rng(4)
    keys = _unit(rng, 10, 3)
    q = enqueue(KeyQueue.empty(8, 3), keys[:3], ["a", "b", "c"], "teacher", "key")
    assert len(q) == 3 and list(q.source) == ["a", "b", "c"]
    q = enqueue(q, keys[3:8], list("defgh"), "student", "reconstructed-key")
    assert len(q) == 8
    q = enqueue(q, keys[8:], ["i", "j"], "teacher", "key")
    assert list(q.source) == list("cdefghij")
    np.testing.assert_array_equal(q.emb, keys[2:])
    assert list(q.origin[:6]) == ["teacher"] + ["student"] * 5


def test_enqueue_rejects_non_unit():
    with pytest.raises(ValueError):
        enqueue(KeyQueue.empty(4, 2), [[1.0, 1.0]], ["a"], "teacher", "key")


def test_shared_pool_serves_both_encoders():
    rng = np.random.default_rng(5)
    keys = _unit(rng, 4, 3)
    q = KeyQueue.empty(8, 3)
    for i, origin in enumerate(["teacher", "student", "teacher", "student"]):
        q = enqueue(q, keys[i : i + 1], [f"s{i}"], origin, "key")
    query = _unit(rng, 1, 3)[0]
    # a query from either encoder sees all four entries as negatives
    direct = brute_info_nce(query, [query], list(keys), 0.3)
    assert info_nce(query, [query], q, 0.3, "x") == pytest.approx(direct, abs=1e-12)
    assert set(q.origin) == {"teacher", "student"}


def test_config_validation():
    with pytest.raises(ValueError):
        PretrainConfig(tau=0.0)
    with pytest.raises(ValueError):
        PretrainConfig(queue_size=8, batch_size=16)


# ---------------------------------------------------------------- steps


def _setup(n=6, **pcfg):
    graphs, _ = toy_graphs(n, seed=7)
    from disgcmae.montages import load_keep_set

    keep = load_keep_set(64, 16)
    cfg = PretrainConfig(batch_size=n, queue_size=4 * n, **pcfg)
    pairs = [(h, l) for h, l, _ in pair_graphs(graphs, keep)]
    state = init_state(small_cfg(), small_cfg(), cfg, 0)
    return graphs, keep, cfg, pairs, state


def test_step_components_sum_and_finite():
    _, _, cfg, pairs, state = _setup()
    for step in range(3):
        losses, state = pretrain_step(pairs, state, small_cfg(), small_cfg(), cfg, make_rng(0, step))
        row = losses.as_row()
        assert all(math.isfinite(v) for v in row)
        assert abs(row[4] - sum(row[:4])) <= 1e-9
    # after warm-up the contrastive terms are active
    assert losses.l_cl_t > 0 and losses.l_cl_s > 0
    assert len(state.queue) <= cfg.queue_size


def test_step_warmup_is_reconstruction_only():
    _, _, cfg, pairs, state = _setup()
    losses, state = pretrain_step(pairs, state, small_cfg(), small_cfg(), cfg, make_rng(0, 0))
    assert losses.l_cl_t == 0 and losses.l_cl_s == 0
    assert len(state.queue) == 4 * len(pairs)


def test_step_rejects_unpaired_batch():
    _, _, cfg, pairs, state = _setup()
    bad = [(pairs[0][0], pairs[1][1])]
    with pytest.raises(ValueError):
        pretrain_step(bad, state, small_cfg(), small_cfg(), cfg, make_rng(0, 0))


def test_key_encoders_move_only_by_momentum():
    _, _, cfg, pairs, state = _setup(momentum=0.9)
    for step in range(3):
        old_key = {k: v.copy() for k, v in state.teacher_key.items()}
        _, state = pretrain_step(pairs, state, small_cfg(), small_cfg(), cfg, make_rng(0, step))
        for k, v in state.teacher_key.items():
            np.testing.assert_allclose(v, 0.9 * old_key[k] + 0.1 * state.teacher[k], rtol=0, atol=1e-15)


def test_component_isolation():
    # without contrastive weight the projection head never moves; without
    # reconstruction weight the decoder still learns through the contrasted
    # reconstructed queries
    _, _, cfg, pairs, state0 = _setup(w_cl_t=0.0, w_cl_s=0.0)
    state = state0
    for step in range(3):
        _, state = pretrain_step(pairs, state, small_cfg(), small_cfg(), cfg, make_rng(0, step))
    assert np.array_equal(state.teacher["proj.w1"], state0.teacher["proj.w1"])
    assert not np.array_equal(state.teacher["dec.w1"], state0.teacher["dec.w1"])

    _, _, cfg, pairs, state0 = _setup(w_rec_t=0.0, w_rec_s=0.0)
    state = state0
    for step in range(3):
        _, state = pretrain_step(pairs, state, small_cfg(), small_cfg(), cfg, make_rng(0, step))
    assert losses_are_contrastive_only(state0, pairs, cfg)
    assert not np.array_equal(state.student["dec.w2"], state0.student["dec.w2"])
    assert not np.array_equal(state.student["proj.w2"], state0.student["proj.w2"])


def losses_are_contrastive_only(state, pairs, cfg):
    _, state = pretrain_step(pairs, state, small_cfg(), small_cfg(), cfg, make_rng(0, 0))
    losses, _ = pretrain_step(pairs, state, small_cfg(), small_cfg(), cfg, make_rng(0, 1))
    return losses.l_rec_t == 0 and losses.l_rec_s == 0 and losses.l_pretrain == losses.l_cl_t + losses.l_cl_s


def test_heads_are_not_pretrained():
    _, _, cfg, pairs, state0 = _setup()
    _, state = pretrain_step(pairs, state0, small_cfg(), small_cfg(), cfg, make_rng(0, 0))
    assert np.array_equal(state.teacher["head.w"], state0.teacher["head.w"])


# ---------------------------------------------------------------- driver


def test_run_pretraining_deterministic_and_decomposed():
    graphs, keep, _, _, _ = _setup(12)
    cfg = PretrainConfig(batch_size=4, queue_size=32, epochs=10)
    r1 = run_pretraining(graphs, keep, small_cfg(), small_cfg(), cfg, seed=3)
    r2 = run_pretraining(graphs, keep, small_cfg(), small_cfg(), cfg, seed=3)
    assert [e.as_row() for e in r1.report.epochs] == [e.as_row() for e in r2.report.epochs]
    assert r1.steps == 30 and len(r1.report.steps) == 30
    for s in r1.report.steps + r1.report.epochs:
        assert abs(s.l_pretrain - sum(s.as_row()[:4])) <= 1e-9
    r3 = run_pretraining(graphs, keep, small_cfg(), small_cfg(), cfg, seed=4)
    assert r3.report.epochs[-1].as_row() != r1.report.epochs[-1].as_row()


def test_run_pretraining_order_independent():
    graphs, keep, _, _, _ = _setup(8)
    cfg = PretrainConfig(batch_size=4, queue_size=16, epochs=2)
    base = run_pretraining(graphs, keep, small_cfg(), small_cfg(), cfg, seed=1)
    again = run_pretraining(list(graphs), keep, small_cfg(), small_cfg(), cfg, seed=1)
    assert [e.as_row() for e in base.report.epochs] == [e.as_row() for e in again.report.epochs]
    with pytest.raises(ValueError):
        run_pretraining([], keep, small_cfg(), small_cfg(), cfg, seed=1)


def test_run_pretraining_with_gformer():
    graphs, keep, _, _, _ = _setup(4)
    cfg = PretrainConfig(batch_size=4, queue_size=16, epochs=2)
    res = run_pretraining(graphs, keep, small_cfg("gformer"), small_cfg("gformer"), cfg, seed=0)
    assert all(math.isfinite(v) for v in res.report.epochs[-1].as_row())
