"""Fine-tuning with cross-entropy, logit distillation and graph topology distillation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import encoders as enc
from .encoders import EncoderConfig, ParamTree
from .graph import EegGraph, NodePartition, keep_from_global, reduce_density
from .numerics import AdamState, ad, adam_step
from .rng import make_rng

log = logging.getLogger(__name__)

KERNELS = ("linear", "euclidean", "polynomial", "rbf")
METRIC_COLUMNS = ("epoch", "split", "ce", "kd", "gtd", "total", "acc", "auroc")
MODES = ("tuned", "frozen")

# keeps sqrt differentiable on the (never selected) diagonal of distance matrices
_DIST_FLOOR = 1e-30


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"
    c: float = 1.0
    deg: int = 2
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.deg < 1:
            raise ValueError("degree must be at least 1")


def kernel_similarity(x_i, x_j, k: KernelSpec = KernelSpec()) -> float:
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape or x_i.ndim != 1:
        raise ValueError(f"vectors must have equal length, got {x_i.shape} and {x_j.shape}")
    if k.kind == "linear":
        return float(x_i @ x_j)
    if k.kind == "euclidean":
        return float(np.linalg.norm(x_i - x_j))
    if k.kind == "polynomial":
        return float((x_i @ x_j + k.c) ** k.deg)
    return float(np.exp(-k.gamma * np.sum((x_i - x_j) ** 2)))


def kernel_matrix(nodes, k: KernelSpec) -> ad.Tensor:
    """All pairwise similarities of the rows of ``nodes`` (..., n, D) -> (..., n, n)."""
    nodes = ad.as_tensor(nodes)
    gram = nodes @ ad.transpose(nodes)
    if k.kind == "linear":
        return gram
    if k.kind == "polynomial":
        return (gram + k.c) ** float(k.deg)
    sq = ad.tsum(nodes * nodes, axis=-1, keepdims=True)
    d2 = ad.clamp_min(sq + ad.transpose(sq) - gram * 2.0, 0.0)
    if k.kind == "euclidean":
        return ad.sqrt(d2 + _DIST_FLOOR)
    return ad.exp(d2 * (-k.gamma))


# ---------------------------------------------------------------- pair selection


@dataclass(frozen=True)
class PairSets:
    positives: tuple[tuple[int, int], ...]
    negatives: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pos, neg = set(self.positives), set(self.negatives)
        if pos & neg:
            raise ValueError("positive and negative pairs overlap")
        if any(i >= j for i, j in pos | neg):
            raise ValueError("pairs must satisfy i < j")

    @property
    def c_pos(self) -> int:
        return len(self.positives)

    @property
    def c_neg(self) -> int:
        return len(self.negatives)

    @classmethod
    def from_masks(cls, pos: np.ndarray, neg: np.ndarray) -> "PairSets":
        iu = np.triu(np.ones(pos.shape, dtype=bool), k=1)
        as_pairs = lambda m: tuple((int(i), int(j)) for i, j in zip(*np.nonzero(m & iu)))
        return cls(as_pairs(pos), as_pairs(neg))

    def masks(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for pairs in (self.positives, self.negatives):
            m = np.zeros((n, n), dtype=bool)
            if pairs:
                idx = np.asarray(pairs)
                m[idx[:, 0], idx[:, 1]] = True
            out.append(m)
        return out[0], out[1]


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Min-max scale the off-diagonal entries to [0, 1] (per matrix); diagonal set to 0.

    A matrix whose off-diagonal entries are all equal maps to its support.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[-1]
    off = ~np.eye(n, dtype=bool)
    vals = np.where(off, a, np.nan)
    lo = np.nanmin(vals, axis=(-2, -1), keepdims=True) if n > 1 else np.zeros(a.shape[:-2] + (1, 1))
    hi = np.nanmax(vals, axis=(-2, -1), keepdims=True) if n > 1 else np.zeros(a.shape[:-2] + (1, 1))
    span = hi - lo
    scaled = np.divide(a - lo, span, out=np.zeros_like(a), where=span > 0)
    flat = np.broadcast_to(span <= 0, a.shape) & (a > 0)
    scaled = np.where(flat, 1.0, scaled)
    return np.where(off, scaled, 0.0)


def _threshold(a: np.ndarray, theta: float) -> np.ndarray:
    s = normalize_adjacency(a)
    s = np.maximum(s, np.swapaxes(s, -1, -2))
    return s > theta


def pair_masks(a_h: np.ndarray, a_l: np.ndarray, v_l: Sequence[int], v_d: Sequence[int], theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (..., n, n) upper-triangular positive and negative pair masks.

    Batched over leading dimensions of ``a_h`` (..., m, m) and ``a_l`` (..., n, n).
    """
    if not 0.0 <= theta < 1.0:
        raise ValueError("theta must lie in [0, 1)")
    v_l = np.asarray(v_l, dtype=int)
    v_d = np.asarray(v_d, dtype=int)
    m, n = a_h.shape[-1], a_l.shape[-1]
    if a_h.shape[-2] != m or a_l.shape[-2] != n or len(v_l) != n or len(v_l) + len(v_d) != m:
        raise ValueError(f"sizes inconsistent: a_h {a_h.shape}, a_l {a_l.shape}, |v_l|={len(v_l)}, |v_d|={len(v_d)}")
    h = _threshold(a_h, theta)
    l = _threshold(a_l, theta)
    sub = h[..., v_l[:, None], v_l[None, :]]
    if len(v_d):
        # i and j both adjacent to some deleted node k
        via = h[..., v_d[:, None], v_l[None, :]].astype(np.int64)
        two_hop = (np.swapaxes(via, -1, -2) @ via) > 0
        pos = sub | two_hop
    else:
        pos = sub
    neg = l & ~pos
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    return pos & upper, neg & upper


def select_pairs(a_h: np.ndarray, a_l_learned: np.ndarray, partition: NodePartition, theta: float) -> PairSets:
    """Positive pairs: retained pairs linked in the teacher graph directly or through
    a deleted node. Negative pairs: linked in the student graph but not positive.

    With no deleted nodes this is the high-to-high rule: positives = teacher
    edges, negatives = student edges absent from the teacher graph.
    """
    a_h = np.asarray(a_h, dtype=np.float64)
    a_l = np.asarray(a_l_learned, dtype=np.float64)
    if a_h.shape != (partition.m, partition.m) or a_l.shape != (partition.n, partition.n):
        raise ValueError(f"adjacency sizes {a_h.shape}, {a_l.shape} do not match partition ({partition.m}, {partition.n})")
    if np.any(a_h < 0) or np.any(a_l < 0):
        raise ValueError("adjacency entries must be nonnegative")
    if partition.is_h2h:
        h = _threshold(a_h, theta)
        l = _threshold(a_l, theta)
        h = h[np.ix_(partition.v_l, partition.v_l)]
        pos, neg = h, l & ~h
    else:
        pos, neg = pair_masks(a_h, a_l, partition.v_l, partition.v_d, theta)
    return PairSets.from_masks(pos, neg)


# ---------------------------------------------------------------- losses


def _set_kl(z_s, z_t: np.ndarray, mask: np.ndarray) -> ad.Tensor:
    """KL(softmax(z_s) || softmax(z_t)) over the entries selected by ``mask``.

    z_s, z_t, mask are (B, k); rows with an empty mask give 0.
    """
    z_s = ad.as_tensor(z_s)
    present = mask.any(axis=-1, keepdims=True)
    safe = mask | ~present
    lp_s = (z_s - ad.reshape(ad.logsumexp(z_s, axis=-1, mask=safe), present.shape)) * mask
    zt = np.where(safe, z_t, -np.inf)
    top = np.max(zt, axis=-1, keepdims=True)
    lp_t = np.where(mask, z_t - (top + np.log(np.sum(np.exp(zt - top), axis=-1, keepdims=True))), 0.0)
    p_s = ad.exp(lp_s) * mask
    return ad.tsum(p_s * (lp_s - lp_t), axis=-1)


def gtd_from_z(z_s_pos, z_t_pos, z_s_neg, z_t_neg, eps: float = 1e-8) -> ad.Tensor:
    """Topology loss from explicit similarity vectors of the positive and negative sets."""
    z_t_pos = np.asarray(z_t_pos, dtype=np.float64)[None, :]
    z_t_neg = np.asarray(z_t_neg, dtype=np.float64)[None, :]
    z_s_pos = ad.reshape(ad.as_tensor(z_s_pos), z_t_pos.shape)
    z_s_neg = ad.reshape(ad.as_tensor(z_s_neg), z_t_neg.shape)
    c_pos, c_neg = z_t_pos.shape[1], z_t_neg.shape[1]
    if c_pos == 0:
        return ad.Tensor(0.0)
    l_pos = ad.tsum(_set_kl(z_s_pos, z_t_pos, np.ones_like(z_t_pos, dtype=bool)))
    denom = eps
    if c_neg:
        denom = ad.tsum(_set_kl(z_s_neg, z_t_neg, np.ones_like(z_t_neg, dtype=bool))) * (1.0 / c_neg) + eps
    return l_pos * (1.0 / c_pos) / denom


def gtd_loss_batch(s_nodes, t_nodes: np.ndarray, pos: np.ndarray, neg: np.ndarray, cfg: "DistillConfig") -> ad.Tensor:
    """Per-graph topology loss (B,) for student (B, n, Ds) and retained teacher (B, n, Dt) nodes."""
    s_nodes = ad.as_tensor(s_nodes)
    B, n = pos.shape[0], pos.shape[-1]
    with ad.no_grad():
        zt = kernel_matrix(np.asarray(t_nodes, dtype=np.float64), cfg.kernel).data.reshape(B, n * n)
    zs = ad.reshape(kernel_matrix(s_nodes, cfg.kernel), (B, n * n))
    pos = pos.reshape(B, n * n)
    neg = neg.reshape(B, n * n)
    c_pos = pos.sum(axis=1).astype(np.float64)
    c_neg = neg.sum(axis=1).astype(np.float64)
    l_pos = _set_kl(zs, zt, pos)
    l_neg = _set_kl(zs, zt, neg)
    pos_avg = l_pos * (1.0 / np.maximum(c_pos, 1.0))
    neg_avg = l_neg * np.where(c_neg > 0, 1.0 / np.maximum(c_neg, 1.0), 0.0)
    return pos_avg / (neg_avg + cfg.eps)


def gtd_loss(student_nodes, teacher_nodes, pairs: PairSets, cfg: "DistillConfig") -> ad.Tensor:
    """Topology loss for one graph; teacher nodes are the retained ones, in student order."""
    s = ad.as_tensor(student_nodes)
    t = np.asarray(teacher_nodes, dtype=np.float64)
    n = s.shape[0]
    if t.shape[0] != n:
        raise ValueError("teacher embeddings must cover the retained nodes")
    if any(max(p) >= n for p in pairs.positives + pairs.negatives):
        raise ValueError("pair index out of range")
    if pairs.c_pos == 0:
        return ad.Tensor(0.0)
    pos, neg = pairs.masks(n)
    out = gtd_loss_batch(ad.reshape(s, (1,) + s.shape), t[None], pos[None], neg[None], cfg)
    return ad.tsum(out)


def logits_distill(student_logits, teacher_logits, T: float = 2.0) -> ad.Tensor:
    """T^2 * KL(softmax(s/T) || softmax(t/T)), averaged over the batch."""
    s = ad.as_tensor(student_logits)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if s.shape[-1] != t.shape[-1]:
        raise ValueError("student and teacher class counts differ")
    if T <= 0:
        raise ValueError("temperature must be positive")
    s2 = ad.reshape(s, (-1, s.shape[-1])) * (1.0 / T)
    t2 = t.reshape(-1, t.shape[-1]) / T
    lp_s = s2 - ad.reshape(ad.logsumexp(s2, axis=-1), (s2.shape[0], 1))
    lp_t = t2 - np.logaddexp.reduce(t2, axis=-1, keepdims=True)
    kl = ad.tsum(ad.exp(lp_s) * (lp_s - lp_t), axis=-1)
    return ad.tmean(kl) * (T * T)


def cross_entropy(logits, labels) -> ad.Tensor:
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=int)
    picked = ad.take(logits, (np.arange(labels.shape[0]), labels))
    return ad.tmean(ad.logsumexp(logits, axis=-1) - picked)


def finetune_loss(ce, kd, gtd, weights=(1.0, 1.0, 1.0)):
    w_ce, w_kd, w_gtd = weights
    return ce * w_ce + kd * w_kd + gtd * w_gtd


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# ---------------------------------------------------------------- fine-tuning driver


@dataclass(frozen=True)
class DistillConfig:
    kernel: KernelSpec = field(default_factory=KernelSpec)
    eps: float = 1e-8
    theta: float = 0.5
    temperature: float = 2.0
    w_ce: float = 1.0
    w_kd: float = 1.0
    w_gtd: float = 1.0
    mode: str = "tuned"
    batch_size: int = 32
    epochs: int = 400
    patience: int = 20
    lr: float = 1e-3
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError("theta must lie in [0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch size, epochs and patience must be positive")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split must be three nonnegative fractions summing to 1")

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.w_ce, self.w_kd, self.w_gtd)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "DistillConfig":
        doc = dict(doc)
        if isinstance(doc.get("kernel"), dict):
            doc["kernel"] = KernelSpec(**doc["kernel"])
        if "split" in doc:
            doc["split"] = tuple(doc["split"])
        return cls(**doc)


LOSS_VARIANTS = {
    "ce": (1.0, 0.0, 0.0),
    "ce+kd": (1.0, 1.0, 0.0),
    "ce+gtd": (1.0, 0.0, 1.0),
    "union": (1.0, 1.0, 1.0),
}


def split_subjects(subjects: Sequence[str], labels: Sequence[int], fractions, seed: int) -> dict[str, str]:
    """Stratified subject-level split into train/val/test."""
    by_class: dict[int, list[str]] = {}
    for s, y in sorted(set(zip(subjects, labels))):
        by_class.setdefault(int(y), []).append(s)
    out = {}
    for y, subs in sorted(by_class.items()):
        order = make_rng(seed, "split", y).permutation(len(subs))
        n_train = int(round(fractions[0] * len(subs)))
        n_val = int(round(fractions[1] * len(subs)))
        for rank, i in enumerate(order):
            out[subs[i]] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return out


def trainable(params: ParamTree, mode: str) -> list[str]:
    if mode == "frozen":
        return enc.head_names(params)
    return [k for k in params if not k.startswith(("dec.", "proj."))]


@dataclass
class MetricRow:
    epoch: int
    split: str
    ce: float
    kd: float
    gtd: float
    total: float
    acc: float
    auroc: float

    def as_row(self) -> list:
        return [self.epoch, self.split] + [repr(float(v)) for v in (self.ce, self.kd, self.gtd, self.total, self.acc, self.auroc)]


@dataclass
class StepRecord:
    ce: float
    kd: float
    gtd: float
    total: float


@dataclass
class FinetuneResult:
    student: ParamTree
    teacher: ParamTree
    rows: list[MetricRow]
    steps: list[StepRecord]
    test: MetricRow
    teacher_test: MetricRow
    n_trainable: int
    n_trainable_tuned: int
    best_epoch: int

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            for r in self.rows:
                w.writerow(r.as_row())


@dataclass
class _Split:
    x: np.ndarray
    a: np.ndarray
    ids: np.ndarray
    y: np.ndarray
    t_logits: np.ndarray | None = None
    t_nodes: np.ndarray | None = None
    t_adj: np.ndarray | None = None

    def __len__(self):
        return self.y.shape[0]

    def take(self, idx) -> "_Split":
        pick = lambda v: None if v is None else v[idx]
        return _Split(self.x[idx], self.a[idx], self.ids[idx], self.y[idx], pick(self.t_logits), pick(self.t_nodes), pick(self.t_adj))


def _stack(graphs: Sequence[EegGraph]) -> _Split:
    return _Split(
        np.stack([g.x for g in graphs]),
        np.stack([g.a for g in graphs]),
        np.array([g.node_ids for g in graphs]),
        np.array([int(g.label) for g in graphs]),
    )


def _scores(logits: np.ndarray) -> np.ndarray:
    return logits[:, 1] - logits[:, 0] if logits.shape[1] == 2 else logits[:, 1]


def _objective(params, cfg_enc: EncoderConfig, data: _Split, dcfg: DistillConfig, weights, part: NodePartition | None):
    out = enc.encode(params, cfg_enc, data.x, data.a, data.ids)
    logits = enc.classify(out.nodes, params)
    ce = cross_entropy(logits, data.y)
    kd = gtd = ad.Tensor(0.0)
    if weights[1] and data.t_logits is not None:
        kd = logits_distill(logits, data.t_logits, dcfg.temperature)
    if weights[2] and data.t_nodes is not None:
        pos, neg = pair_masks(data.t_adj, out.adjacency, part.v_l, part.v_d, dcfg.theta)
        gtd = ad.tmean(gtd_loss_batch(out.nodes, data.t_nodes, pos, neg, dcfg))
    total = finetune_loss(ce, kd, gtd, weights)
    return total, (ce, kd, gtd), logits


def _evaluate(params, cfg_enc, data: _Split, dcfg, weights, part, epoch: int, split: str) -> MetricRow:
    with ad.no_grad():
        total, (ce, kd, gtd), logits = _objective(params, cfg_enc, data, dcfg, weights, part)
    logits = logits.data
    acc = float(np.mean(np.argmax(logits, axis=1) == data.y))
    try:
        auc = auroc(_scores(logits), data.y)
    except ValueError:
        auc = float("nan")
    return MetricRow(epoch, split, ce.item(), kd.item(), gtd.item(), total.item(), acc, auc)


def _fit(params, cfg_enc, train: _Split, val: _Split, dcfg, weights, part, seed, tag: str, rows: list, steps: list):
    """Adam on the trainable subset with early stopping on validation CE. Returns (best params, best epoch)."""
    names = trainable(params, dcfg.mode)
    adam = AdamState(lr=dcfg.lr)
    best, best_ce, best_epoch, stale = dict(params), math.inf, 0, 0
    prefix = "" if tag == "student" else f"{tag}_"
    for epoch in range(1, dcfg.epochs + 1):
        order = make_rng(seed, tag, "shuffle", epoch).permutation(len(train))
        acc = []
        for start in range(0, len(train), dcfg.batch_size):
            batch = train.take(order[start : start + dcfg.batch_size])
            tensors = {k: ad.Tensor(params[k], requires_grad=True) for k in names}
            total, parts, _ = _objective({**params, **tensors}, cfg_enc, batch, dcfg, weights, part)
            grads = ad.backward(total, list(tensors.values()))
            params, adam = adam_step(params, {k: grads[t] for k, t in tensors.items()}, adam)
            rec = StepRecord(*(p.item() for p in parts), total.item())
            steps.append(rec)
            acc.append((rec.ce, rec.kd, rec.gtd, rec.total))
        m = np.mean(acc, axis=0)
        rows.append(MetricRow(epoch, f"{prefix}train", *m, float("nan"), float("nan")))
        vrow = _evaluate(params, cfg_enc, val, dcfg, weights, part, epoch, f"{prefix}val")
        rows.append(vrow)
        if vrow.ce < best_ce:
            best, best_ce, best_epoch, stale = dict(params), vrow.ce, epoch, 0
        else:
            stale += 1
            if stale >= dcfg.patience:
                break
    return best, best_epoch


def run_finetune(
    teacher: ParamTree,
    t_cfg: EncoderConfig,
    student: ParamTree,
    s_cfg: EncoderConfig,
    hd_graphs: Sequence[EegGraph],
    subjects: Sequence[str],
    keep_global: Sequence[int],
    dcfg: DistillConfig,
    seed: int,
) -> FinetuneResult:
    """Fine-tune the teacher with CE on HD graphs, freeze it, then fine-tune the
    student on the paired LD graphs with CE, logit KD and topology distillation."""
    if len(hd_graphs) != len(subjects):
        raise ValueError("one subject id per graph required")
    if any(g.label is None for g in hd_graphs):
        raise ValueError("fine-tuning needs labelled graphs")
    pairs = [reduce_density(g, keep_from_global(g, keep_global)) for g in hd_graphs]
    parts = {p.v_l for _, p in pairs}
    if len(parts) != 1:
        raise ValueError("all graphs must share one retained-node layout")
    part = pairs[0][1]
    assign = split_subjects(subjects, [g.label for g in hd_graphs], dcfg.split, seed)
    idx = {s: np.array([i for i, sub in enumerate(subjects) if assign[sub] == s], dtype=int) for s in ("train", "val", "test")}
    if any(len(v) == 0 for v in idx.values()):
        raise ValueError("every split needs at least one graph")
    hd = _stack(hd_graphs)
    ld = _stack([l for l, _ in pairs])

    rows: list[MetricRow] = []
    steps: list[StepRecord] = []
    ce_only = (1.0, 0.0, 0.0)
    teacher, _ = _fit(teacher, t_cfg, hd.take(idx["train"]), hd.take(idx["val"]), dcfg, ce_only, None, seed, "teacher", rows, [])
    teacher_test = _evaluate(teacher, t_cfg, hd.take(idx["test"]), dcfg, ce_only, None, 0, "teacher_test")
    rows.append(teacher_test)

    with ad.no_grad():
        t_out = enc.encode(teacher, t_cfg, hd.x, hd.a, hd.ids)
        ld.t_logits = enc.classify(t_out.nodes, teacher).data
    ld.t_nodes = t_out.nodes.data[:, list(part.v_l), :]
    ld.t_adj = t_out.adjacency

    weights = dcfg.weights
    student, best_epoch = _fit(student, s_cfg, ld.take(idx["train"]), ld.take(idx["val"]), dcfg, weights, part, seed, "student", rows, steps)
    test = _evaluate(student, s_cfg, ld.take(idx["test"]), dcfg, weights, part, best_epoch, "test")
    rows.append(test)
    return FinetuneResult(
        student=student,
        teacher=teacher,
        rows=rows,
        steps=steps,
        test=test,
        teacher_test=teacher_test,
        n_trainable=enc.param_count({k: student[k] for k in trainable(student, dcfg.mode)}),
        n_trainable_tuned=enc.param_count({k: student[k] for k in trainable(student, "tuned")}),
        best_epoch=best_epoch,
    )
