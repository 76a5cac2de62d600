import math

import numpy as np
import pytest
from conftest import small_cfg, toy_graphs
from hypothesis import given, settings
from hypothesis import strategies as st

from disgcmae import distill as ds
from disgcmae.distill import (
    DistillConfig,
    KernelSpec,
    PairSets,
    auroc,
    finetune_loss,
    gtd_from_z,
    gtd_loss,
    kernel_matrix,
    kernel_similarity,
    logits_distill,
    normalize_adjacency,
    pair_masks,
    run_finetune,
    select_pairs,
    split_subjects,
    trainable,
)
from disgcmae.encoders import init_params
from disgcmae.graph import NodePartition, keep_from_global, reduce_density
from disgcmae.numerics import Tensor, backward, finite_diff_grad, kl_div, relative_error, softmax
from disgcmae.oracles import brute_gtd, brute_select_pairs, random_instance
from disgcmae.rng import make_rng


def _adj(n, edges, w=1.0):
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = a[j, i] = w
    return a


# ---------------------------------------------------------------- kernels


def test_kernel_examples():
    assert kernel_similarity([1, 2], [3, 4]) == 11
    assert kernel_similarity([1, 2], [1, 2], KernelSpec("euclidean")) == 0
    assert kernel_similarity([1, 2], [1, 2], KernelSpec("rbf")) == 1
    assert kernel_similarity([1, 0], [0, 1], KernelSpec("polynomial", c=1, deg=2)) == 1
    with pytest.raises(ValueError):
        kernel_similarity([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        KernelSpec("rbf", gamma=0)
    with pytest.raises(ValueError):
        KernelSpec("polynomial", deg=0)
    with pytest.raises(ValueError):
        KernelSpec("cosine")


@pytest.mark.parametrize("kind", ["linear", "euclidean", "polynomial", "rbf"])
def test_kernel_matrix_matches_scalar(kind):
    k = KernelSpec(kind, c=0.5, deg=3, gamma=0.7)
    x = np.random.default_rng(0).normal(size=(5, 3))
    mat = kernel_matrix(x, k).data
    for i in range(5):
        for j in range(5):
            if i != j:
                assert mat[i, j] == pytest.approx(kernel_similarity(x[i], x[j], k), rel=1e-10, abs=1e-12)


# ---------------------------------------------------------------- pair selection


def test_normalize_adjacency_conventions():
    a = np.array([[5.0, 1.0, 3.0], [1.0, 0.0, 2.0], [3.0, 2.0, 9.0]])
    np.testing.assert_allclose(normalize_adjacency(a), [[0, 0, 1], [0, 0, 0.5], [1, 0.5, 0]])
    const = _adj(3, [(0, 1), (1, 2), (0, 2)], 0.4)
    np.testing.assert_array_equal(normalize_adjacency(const), const > 0)
    assert not normalize_adjacency(np.zeros((3, 3))).any()


def test_select_pairs_worked_example():
    a_h = _adj(6, [(0, 1), (0, 4), (2, 4)])
    part = NodePartition(tuple(range(6)), (0, 1, 2, 3), (4, 5))
    a_l = _adj(4, [(0, 1), (1, 2)])
    pairs = select_pairs(a_h, a_l, part, 0.0)
    assert set(pairs.positives) == {(0, 1), (0, 2)}
    assert set(pairs.negatives) == {(1, 2)}
    assert (pairs.c_pos, pairs.c_neg) == (2, 1)


def test_select_pairs_fig2_style_montage():
    # retained: Fz 0, P5 1, Oz 2, P8 3, T8 4; deleted mediators 5, 6
    a_h = _adj(7, [(1, 2), (1, 5), (3, 5), (3, 6), (4, 6), (4, 5)])
    part = NodePartition(tuple(range(7)), (0, 1, 2, 3, 4), (5, 6))
    a_l = _adj(5, [(0, 4), (1, 2)])
    pairs = select_pairs(a_h, a_l, part, 0.0)
    assert (1, 2) in pairs.positives
    assert {(1, 3), (1, 4), (3, 4)} <= set(pairs.positives)
    assert pairs.negatives == ((0, 4),)


def test_select_pairs_h2h():
    a = _adj(4, [(0, 1), (2, 3)])
    part = NodePartition((0, 1, 2, 3), (0, 1, 2, 3), ())
    same = select_pairs(a, a, part, 0.0)
    assert set(same.positives) == {(0, 1), (2, 3)} and same.negatives == ()
    extra = select_pairs(a, _adj(4, [(0, 1), (1, 2)]), part, 0.0)
    assert extra.negatives == ((1, 2),)


def test_select_pairs_threshold_applies_after_normalization():
    a_h = _adj(3, [(0, 1)], 0.9) + _adj(3, [(1, 2)], 0.1)
    part = NodePartition((0, 1, 2), (0, 1, 2), ())
    assert select_pairs(a_h, np.zeros((3, 3)), part, 0.5).positives == ((0, 1),)


def test_select_pairs_contract_errors():
    part = NodePartition((0, 1, 2), (0, 1), (2,))
    with pytest.raises(ValueError):
        select_pairs(np.zeros((2, 2)), np.zeros((2, 2)), part, 0.5)
    with pytest.raises(ValueError):
        select_pairs(-np.ones((3, 3)), np.zeros((2, 2)), part, 0.5)
    with pytest.raises(ValueError):
        pair_masks(np.zeros((3, 3)), np.zeros((2, 2)), [0, 1], [2], 1.0)


def test_pair_sets_invariants():
    with pytest.raises(ValueError):
        PairSets(((0, 1),), ((0, 1),))
    with pytest.raises(ValueError):
        PairSets(((1, 0),), ())


@pytest.mark.parametrize("seed", range(200))
def test_select_pairs_and_gtd_match_brute_force(seed):
    rng = make_rng(seed, "oracle")
    inst = random_instance(rng, 12)
    pairs = select_pairs(inst.a_h, inst.a_l, inst.partition, inst.theta)
    pos, neg = brute_select_pairs(inst.a_h, inst.a_l, inst.partition, inst.theta)
    assert set(pairs.positives) == set(pos) and set(pairs.negatives) == set(neg)
    assert not set(pairs.positives) & set(pairs.negatives)
    t_ret = inst.t_nodes  # already the retained nodes, in student order
    cfg = DistillConfig()
    got = gtd_loss(inst.s_nodes, t_ret, pairs, cfg).item()
    want = brute_gtd(inst.s_nodes, t_ret, sorted(pos), sorted(neg), cfg.eps)
    assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


def test_batched_pair_masks_match_single():
    rng = make_rng(1, "batch")
    part = NodePartition(tuple(range(8)), (0, 2, 3, 5, 7), (1, 4, 6))
    a_h = rng.uniform(size=(4, 8, 8)) * (rng.uniform(size=(4, 8, 8)) < 0.4)
    a_h = a_h + np.swapaxes(a_h, 1, 2)
    a_l = rng.uniform(size=(4, 5, 5))
    pos, neg = pair_masks(a_h, a_l, part.v_l, part.v_d, 0.3)
    for b in range(4):
        single = select_pairs(a_h[b] * (1 - np.eye(8)), a_l[b], part, 0.3)
        p, n = single.masks(5)
        np.testing.assert_array_equal(pos[b], p)
        np.testing.assert_array_equal(neg[b], n)


# ---------------------------------------------------------------- gtd loss


def test_gtd_identical_embeddings_zero():
    rng = np.random.default_rng(2)
    nodes = rng.normal(size=(5, 3))
    pairs = PairSets(((0, 1), (1, 3)), ((2, 4),))
    assert gtd_loss(nodes, nodes, pairs, DistillConfig()).item() == 0.0


def test_gtd_no_negatives_divides_by_eps():
    s = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    t = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    pairs = PairSets(((0, 1), (0, 2), (1, 2)), ())
    zs = [s[i] @ s[j] for i, j in pairs.positives]
    zt = [t[i] @ t[j] for i, j in pairs.positives]
    l_pos = kl_div(softmax(zs), softmax(zt))
    cfg = DistillConfig(eps=1e-8)
    got = gtd_loss(s, t, pairs, cfg).item()
    assert math.isfinite(got)
    assert got == pytest.approx(l_pos / 3 / 1e-8, rel=1e-10)


def test_gtd_no_positives_is_zero():
    nodes = np.random.default_rng(3).normal(size=(3, 2))
    assert gtd_loss(nodes, nodes * 2, PairSets((), ((0, 1),)), DistillConfig()).item() == 0.0


def test_gtd_hand_set_z():
    want = kl_div(softmax([1.0, 0.0, 0.0]), softmax([0.0, 0.0, 1.0]))
    assert gtd_from_z([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [], [], eps=1.0).item() == pytest.approx(want / 3, abs=1e-15)
    got = gtd_from_z([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0], [1.0, 0.0], eps=1e-8).item()
    l_neg = kl_div(softmax([0.0, 1.0]), softmax([1.0, 0.0]))
    assert got == pytest.approx((want / 3) / (l_neg / 2 + 1e-8), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(-20, 20))
def test_gtd_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    zs, zt = rng.normal(size=4), rng.normal(size=4)
    ns, nt = rng.normal(size=3), rng.normal(size=3)
    base = gtd_from_z(zs, zt, ns, nt).item()
    shifted = gtd_from_z(zs + c, zt, ns + c, nt).item()
    assert abs(base - shifted) <= 1e-10 * max(1.0, abs(base))


def test_gtd_gradient():
    rng = np.random.default_rng(4)
    s0, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))
    pairs = PairSets(((0, 1), (0, 2), (3, 4)), ((1, 2), (2, 4)))
    cfg = DistillConfig(eps=0.1)
    s = Tensor(s0, requires_grad=True)
    g = backward(gtd_loss(s, t, pairs, cfg), [s])[s]
    num = finite_diff_grad(lambda v: gtd_loss(v, t, pairs, cfg).item(), s0)
    assert relative_error(g, num).max() < 1e-6


# ---------------------------------------------------------------- logit kd, combined loss, auroc


def test_logits_distill_examples():
    assert logits_distill([[0.3, -1.0]], [[0.3, -1.0]], 2.0).item() == pytest.approx(0.0, abs=1e-15)
    val = logits_distill([[0.0, 0.0]], [[math.log(3), 0.0]], 1.0).item()
    assert val == pytest.approx(kl_div([0.5, 0.5], [0.75, 0.25]), abs=1e-15)
    assert val == pytest.approx(0.1438, abs=1e-4)
    with pytest.raises(ValueError):
        logits_distill([[0.0, 0.0]], [[0.0, 0.0, 0.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.5, 5.0))
def test_logits_distill_nonnegative(seed, T):
    rng = np.random.default_rng(seed)
    s, t = rng.normal(size=(4, 3)) * 3, rng.normal(size=(4, 3)) * 3
    assert logits_distill(s, t, T).item() >= -1e-15
    assert logits_distill(s, s, T).item() == pytest.approx(0.0, abs=1e-14)


def test_logits_distill_temperature_scaling():
    s, t = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
    kl = kl_div(softmax(s[0] / 2), softmax(t[0] / 2))
    assert logits_distill(s, t, 2.0).item() == pytest.approx(4 * kl, rel=1e-12)


def test_finetune_loss_arithmetic():
    assert finetune_loss(0.5, 0.0, 0.0) == 0.5
    assert finetune_loss(0.5, 0.2, 0.1) == pytest.approx(0.8, abs=1e-15)
    assert finetune_loss(0.5, 0.2, 0.1, (1.0, 0.0, 0.0)) == 0.5


def test_auroc_examples():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auroc([0.5, 0.5], [0, 1]) == 0.5
    rng = np.random.default_rng(5)
    assert abs(auroc(rng.normal(size=10_000), rng.integers(0, 2, 10_000)) - 0.5) <= 0.02
    with pytest.raises(ValueError):
        auroc([0.1, 0.2], [1, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=30))
def test_auroc_matches_pair_count(items):
    scores = [s for s, _ in items]
    labels = [int(y) for _, y in items]
    if len(set(labels)) < 2:
        return
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    assert auroc(scores, labels) == pytest.approx(wins / (len(pos) * len(neg)), abs=1e-12)


# ---------------------------------------------------------------- config & splits


def test_distill_config_validation_and_round_trip():
    cfg = DistillConfig(kernel=KernelSpec("rbf", gamma=0.5), theta=0.2)
    assert DistillConfig.from_dict(cfg.to_dict()) == cfg
    for bad in (dict(eps=0), dict(theta=1.0), dict(temperature=0), dict(mode="half"), dict(split=(0.5, 0.5, 0.5))):
        with pytest.raises(ValueError):
            DistillConfig(**bad)


def test_split_subjects_stratified_and_disjoint():
    subjects = [f"s{i}" for i in range(20)]
    labels = [i % 2 for i in range(20)]
    assign = split_subjects(subjects, labels, (0.6, 0.2, 0.2), 0)
    assert set(assign) == set(subjects)
    for y in (0, 1):
        got = [assign[s] for s, l in zip(subjects, labels) if l == y]
        assert (got.count("train"), got.count("val"), got.count("test")) == (6, 2, 2)
    assert assign == split_subjects(subjects, labels, (0.6, 0.2, 0.2), 0)
    assert assign != split_subjects(subjects, labels, (0.6, 0.2, 0.2), 1)


# ---------------------------------------------------------------- fine-tuning


def _ft_setup(seed=0):
    graphs, subjects = toy_graphs(40, seed=seed, n_subjects=20)
    from disgcmae.montages import load_keep_set

    keep = load_keep_set(64, 16)
    t_cfg, s_cfg = small_cfg(hidden=6), small_cfg()
    teacher = init_params(t_cfg, make_rng(seed, "t"))
    student = init_params(s_cfg, make_rng(seed, "s"))
    return graphs, subjects, keep, t_cfg, s_cfg, teacher, student


def test_trainable_sets():
    _, _, _, _, s_cfg, _, student = _ft_setup()
    frozen = trainable(student, "frozen")
    tuned = trainable(student, "tuned")
    assert frozen == ["head.w", "head.b"]
    assert set(frozen) < set(tuned)
    assert not any(k.startswith(("dec.", "proj.")) for k in tuned)


def test_run_finetune_decomposition_and_rows():
    graphs, subjects, keep, t_cfg, s_cfg, teacher, student = _ft_setup()
    dcfg = DistillConfig(epochs=3, patience=5, batch_size=8, eps=1.0, theta=0.3)
    res = run_finetune(teacher, t_cfg, student, s_cfg, graphs, subjects, keep, dcfg, seed=0)
    for s in res.steps:
        assert abs(s.total - (s.ce + s.kd + s.gtd)) <= 1e-9
        assert all(math.isfinite(v) for v in (s.ce, s.kd, s.gtd))
    assert any(s.kd > 0 for s in res.steps) and any(s.gtd > 0 for s in res.steps)
    splits = [r.split for r in res.rows]
    assert splits.count("teacher_train") == 3 and splits.count("train") == 3 and splits[-1] == "test"
    assert "teacher_test" in splits
    assert 0 <= res.test.acc <= 1
    assert res.n_trainable == res.n_trainable_tuned


def test_run_finetune_zero_weights_equals_plain_ce():
    graphs, subjects, keep, t_cfg, s_cfg, teacher, student = _ft_setup(1)
    dcfg = DistillConfig(epochs=3, batch_size=8, w_kd=0.0, w_gtd=0.0)
    res = run_finetune(teacher, t_cfg, student, s_cfg, graphs, subjects, keep, dcfg, seed=2)
    # plain CE loop on the same LD split, no teacher signal at all
    pairs = [reduce_density(g, keep_from_global(g, keep)) for g in graphs]
    ld = ds._stack([l for l, _ in pairs])
    assign = split_subjects(subjects, [g.label for g in graphs], dcfg.split, 2)
    idx = {s: np.array([i for i, sub in enumerate(subjects) if assign[sub] == s]) for s in ("train", "val")}
    steps, rows = [], []
    ds._fit(student, s_cfg, ld.take(idx["train"]), ld.take(idx["val"]), dcfg, (1.0, 0.0, 0.0), None, 2, "student", rows, steps)
    assert [(s.ce, s.total) for s in res.steps] == [(s.ce, s.total) for s in steps]
    assert all(s.kd == 0 and s.gtd == 0 for s in res.steps)


def test_run_finetune_frozen_mode():
    graphs, subjects, keep, t_cfg, s_cfg, teacher, student = _ft_setup(2)
    dcfg = DistillConfig(epochs=2, batch_size=8, mode="frozen", eps=1.0)
    res = run_finetune(teacher, t_cfg, student, s_cfg, graphs, subjects, keep, dcfg, seed=0)
    assert res.n_trainable < res.n_trainable_tuned
    for k, v in res.student.items():
        if not k.startswith("head."):
            assert np.array_equal(v, student[k]), k


def test_run_finetune_deterministic_and_early_stopping():
    graphs, subjects, keep, t_cfg, s_cfg, teacher, student = _ft_setup(3)
    dcfg = DistillConfig(epochs=60, patience=2, batch_size=8, lr=0.05, eps=1.0)
    r1 = run_finetune(teacher, t_cfg, student, s_cfg, graphs, subjects, keep, dcfg, seed=5)
    r2 = run_finetune(teacher, t_cfg, student, s_cfg, graphs, subjects, keep, dcfg, seed=5)
    assert [r.as_row() for r in r1.rows] == [r.as_row() for r in r2.rows]
    n_student_epochs = sum(r.split == "train" for r in r1.rows)
    assert n_student_epochs < 60
    assert r1.best_epoch <= n_student_epochs


def test_run_finetune_contract_errors():
    graphs, subjects, keep, t_cfg, s_cfg, teacher, student = _ft_setup()
    dcfg = DistillConfig(epochs=1)
    with pytest.raises(ValueError):
        run_finetune(teacher, t_cfg, student, s_cfg, graphs, subjects[:-1], keep, dcfg, seed=0)
    with pytest.raises(ValueError):
        run_finetune(teacher, t_cfg, student, s_cfg, graphs[:2], subjects[:2], keep, dcfg, seed=0)
