"""Joint teacher/student contrastive + masked-autoencoder pre-training."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import encoders as enc
from .encoders import EncoderConfig, ParamTree
from .graph import EegGraph, NodePartition, augment, keep_from_global, reduce_density
from .numerics import AdamState, ad, adam_step
from .rng import make_rng

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("l_cl_t", "l_cl_s", "l_rec_t", "l_rec_s", "l_pretrain")


@dataclass(frozen=True)
class PretrainConfig:
    tau: float = 0.07
    queue_size: int = 1024
    momentum: float = 0.999
    node_drop: float = 0.5
    edge_drop: float = 0.5
    batch_size: int = 128
    epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    w_cl_t: float = 1.0
    w_cl_s: float = 1.0
    w_rec_t: float = 1.0
    w_rec_s: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.queue_size < self.batch_size:
            raise ValueError("queue capacity must be at least the batch size")

    @property
    def use_cl(self) -> bool:
        return self.w_cl_t != 0 or self.w_cl_s != 0


# ---------------------------------------------------------------- key queue


@dataclass
class KeyQueue:
    capacity: int
    emb: np.ndarray
    source: np.ndarray
    origin: np.ndarray
    kind: np.ndarray

    @classmethod
    def empty(cls, capacity: int, dim: int) -> "KeyQueue":
        return cls(
            capacity,
            np.zeros((0, dim)),
            np.zeros(0, dtype=object),
            np.zeros(0, dtype="<U7"),
            np.zeros(0, dtype="<U17"),
        )

    def __len__(self) -> int:
        return self.emb.shape[0]


def enqueue(queue: KeyQueue, keys, sources, origins, kinds) -> KeyQueue:
    """Append keys in order, evicting the oldest beyond capacity."""
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    norms = np.linalg.norm(keys, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("queue keys must be unit vectors")
    n = keys.shape[0]
    src = np.empty(n, dtype=object)
    src[:] = list(sources) if not isinstance(sources, (str, int, np.integer)) else [sources] * n
    origin = np.broadcast_to(np.asarray(origins, dtype="<U7"), (n,))
    kind = np.broadcast_to(np.asarray(kinds, dtype="<U17"), (n,))
    cap = queue.capacity
    return KeyQueue(
        cap,
        np.concatenate([queue.emb, keys])[-cap:],
        np.concatenate([queue.source, src])[-cap:],
        np.concatenate([queue.origin, origin])[-cap:],
        np.concatenate([queue.kind, kind])[-cap:],
    )


# ---------------------------------------------------------------- losses


def reconstruction_loss(x, a, x_tilde) -> ad.Tensor:
    """mean((X - X~)^2) + mean((A - X~ X~^T)^2); batched over leading dims, averaged."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    x_tilde = ad.as_tensor(x_tilde)
    if x.shape != x_tilde.shape or a.shape[-1] != x.shape[-2] or a.shape[-2] != x.shape[-2]:
        raise ValueError(f"shape mismatch: x {x.shape}, a {a.shape}, x_tilde {x_tilde.shape}")
    feat = ad.tmean((x_tilde - x) ** 2)
    struct = ad.tmean((x_tilde @ ad.transpose(x_tilde) - a) ** 2)
    return feat + struct


def info_nce_batch(queries, positives: np.ndarray, negatives: np.ndarray, neg_mask: np.ndarray, tau: float) -> ad.Tensor:
    """Mean InfoNCE over queries (Nq, c) and their positives (Nq, P, c).

    Each positive contributes -log(e^{q.p/tau} / (e^{q.p/tau} + sum_neg e^{q.k/tau}))
    with negatives restricted by ``neg_mask`` (Nq, M).
    """
    queries = ad.as_tensor(queries)
    if not np.all(neg_mask.any(axis=1)):
        raise ValueError("a query has no negatives")
    pos = ad.tsum(ad.reshape(queries, (queries.shape[0], 1, queries.shape[1])) * positives, axis=-1) * (1.0 / tau)
    neg = (queries @ negatives.T) * (1.0 / tau)
    lse_neg = ad.logsumexp(neg, axis=-1, mask=neg_mask)
    per = ad.logaddexp(pos, ad.reshape(lse_neg, (queries.shape[0], 1))) - pos
    return ad.tmean(per)


def info_nce(query, positives, queue: KeyQueue, tau: float, source_id) -> float:
    """InfoNCE for one query against the queue entries of other sources."""
    q = np.asarray(query, dtype=np.float64)[None, :]
    pos = np.atleast_2d(np.asarray(positives, dtype=np.float64))[None, :, :]
    if pos.shape[1] < 1:
        raise ValueError("need at least one positive")
    mask = np.array([s != source_id for s in queue.source], dtype=bool)[None, :]
    if not mask.any():
        raise ValueError("no negatives in queue")
    return ad.as_tensor(info_nce_batch(q, pos, queue.emb, mask, tau)).item()


# ---------------------------------------------------------------- batch preparation


@dataclass
class ViewBatch:
    """Stacked query/key views of one density tier."""

    x: np.ndarray
    a: np.ndarray
    ids: np.ndarray
    q_x: np.ndarray
    q_a: np.ndarray
    q_mask: np.ndarray
    k_x: np.ndarray
    k_a: np.ndarray
    k_mask: np.ndarray


def make_views(graphs: Sequence[EegGraph], cfg: PretrainConfig, rng: np.random.Generator) -> ViewBatch:
    qs, ks = zip(*(augment(g, cfg.node_drop, cfg.edge_drop, rng) for g in graphs))

    def masks(views):
        out = np.zeros((len(views), views[0].graph.n), dtype=bool)
        for b, v in enumerate(views):
            out[b, list(v.dropped_nodes)] = True
        return out

    return ViewBatch(
        x=np.stack([g.x for g in graphs]),
        a=np.stack([g.a for g in graphs]),
        ids=np.array([g.node_ids for g in graphs]),
        q_x=np.stack([v.graph.x for v in qs]),
        q_a=np.stack([v.graph.a for v in qs]),
        q_mask=masks(qs),
        k_x=np.stack([v.graph.x for v in ks]),
        k_a=np.stack([v.graph.a for v in ks]),
        k_mask=masks(ks),
    )


@dataclass
class BranchOutput:
    queries: ad.Tensor  # (2B, c): original then reconstructed query embeddings
    keys: np.ndarray  # (2B, c): original then reconstructed key embeddings
    rec: ad.Tensor


def run_branch(params, key_params, cfg: EncoderConfig, views: ViewBatch) -> BranchOutput:
    """Encode one tier's views: reconstruction loss, extended queries and keys."""
    B = views.x.shape[0]
    x3 = np.concatenate([views.q_x, views.q_x, views.k_x])
    a3 = np.concatenate([views.q_a, views.q_a, views.k_a])
    m3 = np.concatenate([np.zeros_like(views.q_mask), views.q_mask, views.k_mask])
    ids3 = np.concatenate([views.ids] * 3)
    nodes = enc.encode(params, cfg, x3, a3, ids3, masked=m3).nodes
    q_nodes = ad.take(nodes, slice(0, B))
    x_rec = enc.decode(ad.take(nodes, slice(B, 3 * B)), params)
    target_x = np.concatenate([views.x, views.x])
    target_a = np.concatenate([views.a, views.a])
    rec = reconstruction_loss(target_x, target_a, x_rec)

    q_rec_x = ad.take(x_rec, slice(0, B))
    k_rec_x = x_rec.data[B:]
    q_rec_nodes = enc.encode(params, cfg, q_rec_x, views.a, views.ids).nodes
    q_orig = enc.readout_project(q_nodes, params, cfg)
    q_recon = enc.readout_project(q_rec_nodes, params, cfg)
    queries = ad.concat([q_orig, q_recon], axis=0)

    with ad.no_grad():
        kx = np.concatenate([views.k_x, k_rec_x])
        ka = np.concatenate([views.k_a, views.a])
        kids = np.concatenate([views.ids, views.ids])
        k_nodes = enc.encode(key_params, cfg, kx, ka, kids).nodes
        keys = enc.readout_project(k_nodes, key_params, cfg).data
    return BranchOutput(queries, keys, rec)


@dataclass
class StepLosses:
    l_cl_t: float
    l_cl_s: float
    l_rec_t: float
    l_rec_s: float
    l_pretrain: float

    def as_row(self) -> list[float]:
        return [self.l_cl_t, self.l_cl_s, self.l_rec_t, self.l_rec_s, self.l_pretrain]


@dataclass
class PretrainState:
    teacher: ParamTree
    student: ParamTree
    teacher_key: ParamTree
    student_key: ParamTree
    queue: KeyQueue
    adam: AdamState


def trainable_names(params: ParamTree) -> list[str]:
    return [k for k in params if not k.startswith("head.")]


def pretrain_objective(
    teacher,
    student,
    teacher_key: ParamTree,
    student_key: ParamTree,
    t_cfg: EncoderConfig,
    s_cfg: EncoderConfig,
    hd: ViewBatch,
    ld: ViewBatch,
    sources: np.ndarray,
    queue: KeyQueue,
    cfg: PretrainConfig,
    contrast: bool,
):
    """Loss terms for one batch. Returns (total, parts, keys_to_enqueue).

    Keys of this batch are appended to ``queue`` before negatives are taken,
    so other samples of the batch act as negatives too.
    """
    t_out = run_branch(teacher, teacher_key, t_cfg, hd)
    s_out = run_branch(student, student_key, s_cfg, ld)
    B = sources.shape[0]
    new_keys = np.concatenate([t_out.keys, s_out.keys])
    key_sources = np.concatenate([sources, sources, sources, sources])
    origins = ["teacher"] * (2 * B) + ["student"] * (2 * B)
    kinds = (["key"] * B + ["reconstructed-key"] * B) * 2
    pool = enqueue(queue, new_keys, key_sources, origins, kinds)

    zero = ad.Tensor(0.0)
    l_cl_t = l_cl_s = zero
    if contrast:
        # positives of sample b: its HD key, HD reconstructed key, LD key, LD reconstructed key
        pos = np.stack([t_out.keys[:B], t_out.keys[B:], s_out.keys[:B], s_out.keys[B:]], axis=1)
        pos2 = np.concatenate([pos, pos])
        src2 = np.concatenate([sources, sources])
        neg_mask = pool.source[None, :] != src2[:, None]
        neg_mask = neg_mask.astype(bool)
        if cfg.w_cl_t:
            l_cl_t = info_nce_batch(t_out.queries, pos2, pool.emb, neg_mask, cfg.tau)
        if cfg.w_cl_s:
            l_cl_s = info_nce_batch(s_out.queries, pos2, pool.emb, neg_mask, cfg.tau)
    parts = (
        l_cl_t * cfg.w_cl_t,
        l_cl_s * cfg.w_cl_s,
        t_out.rec * cfg.w_rec_t,
        s_out.rec * cfg.w_rec_s,
    )
    total = parts[0] + parts[1] + parts[2] + parts[3]
    return total, parts, pool


def pretrain_step(
    batch: Sequence[tuple[EegGraph, EegGraph]],
    state: PretrainState,
    t_cfg: EncoderConfig,
    s_cfg: EncoderConfig,
    cfg: PretrainConfig,
    rng: np.random.Generator,
    sources: np.ndarray | None = None,
) -> tuple[StepLosses, PretrainState]:
    hd_graphs = [h for h, _ in batch]
    ld_graphs = [l for _, l in batch]
    if any(h.source_id != l.source_id for h, l in batch):
        raise ValueError("unpaired batch: HD and LD source ids differ")
    if sources is None:
        sources = np.empty(len(batch), dtype=object)
        sources[:] = [h.source_id for h in hd_graphs]
    hd = make_views(hd_graphs, cfg, rng)
    ld = make_views(ld_graphs, cfg, rng)

    t_names = trainable_names(state.teacher)
    s_names = trainable_names(state.student)
    t_tensors = {k: ad.Tensor(state.teacher[k], requires_grad=True) for k in t_names}
    s_tensors = {k: ad.Tensor(state.student[k], requires_grad=True) for k in s_names}
    teacher = {**state.teacher, **t_tensors}
    student = {**state.student, **s_tensors}

    contrast = cfg.use_cl and len(state.queue) >= cfg.batch_size
    total, parts, pool = pretrain_objective(
        teacher, student, state.teacher_key, state.student_key, t_cfg, s_cfg, hd, ld, sources, state.queue, cfg, contrast
    )
    grads = ad.backward(total, list(t_tensors.values()) + list(s_tensors.values()))

    flat_params = {f"t/{k}": state.teacher[k] for k in t_names} | {f"s/{k}": state.student[k] for k in s_names}
    flat_grads = {f"t/{k}": grads[t] for k, t in t_tensors.items()} | {f"s/{k}": grads[t] for k, t in s_tensors.items()}
    updated, adam = adam_step(flat_params, flat_grads, state.adam)
    teacher_new = dict(state.teacher)
    student_new = dict(state.student)
    for name, value in updated.items():
        tree, key = name.split("/", 1)
        (teacher_new if tree == "t" else student_new)[key] = value

    new_state = PretrainState(
        teacher=teacher_new,
        student=student_new,
        teacher_key=enc.momentum_update(teacher_new, state.teacher_key, cfg.momentum),
        student_key=enc.momentum_update(student_new, state.student_key, cfg.momentum),
        queue=pool,
        adam=adam,
    )
    vals = [float(p.data) for p in parts]
    losses = StepLosses(*vals, float(total.data))
    return losses, new_state


# ---------------------------------------------------------------- driver


@dataclass
class LossReport:
    epochs: list[StepLosses] = field(default_factory=list)
    steps: list[StepLosses] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.epochs])

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch",) + LOSS_COLUMNS)
            for i, e in enumerate(self.epochs):
                w.writerow([i + 1] + [repr(v) for v in e.as_row()])


@dataclass
class PretrainResult:
    teacher: ParamTree
    student: ParamTree
    teacher_cfg: EncoderConfig
    student_cfg: EncoderConfig
    report: LossReport
    steps: int


def pair_graphs(hd_graphs: Sequence[EegGraph], keep_global: Sequence[int], tier: str = "LD") -> list[tuple[EegGraph, EegGraph, NodePartition]]:
    out = []
    for g in hd_graphs:
        ld, part = reduce_density(g, keep_from_global(g, keep_global), tier)
        out.append((g, ld, part))
    return out


def init_state(t_cfg: EncoderConfig, s_cfg: EncoderConfig, cfg: PretrainConfig, seed: int) -> PretrainState:
    if t_cfg.out_dim != s_cfg.out_dim:
        raise ValueError("teacher and student must share the contrastive dimension")
    teacher = enc.init_params(t_cfg, make_rng(seed, "init", "teacher"))
    student = enc.init_params(s_cfg, make_rng(seed, "init", "student"))
    return PretrainState(
        teacher=teacher,
        student=student,
        teacher_key={k: teacher[k].copy() for k in enc.key_encoder_names(teacher)},
        student_key={k: student[k].copy() for k in enc.key_encoder_names(student)},
        queue=KeyQueue.empty(cfg.queue_size, t_cfg.out_dim),
        adam=AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt),
    )


def run_pretraining(
    hd_graphs: Sequence[EegGraph],
    keep_global: Sequence[int],
    t_cfg: EncoderConfig,
    s_cfg: EncoderConfig,
    cfg: PretrainConfig,
    seed: int,
    progress=None,
) -> PretrainResult:
    """Pre-train teacher and student jointly; deterministic given ``seed``."""
    if not hd_graphs:
        raise ValueError("empty pre-training corpus")
    pairs = pair_graphs(hd_graphs, keep_global)
    state = init_state(t_cfg, s_cfg, cfg, seed)
    report = LossReport()
    n = len(pairs)
    step = 0
    for epoch in range(cfg.epochs):
        order = make_rng(seed, "shuffle", epoch).permutation(n)
        rows = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = [(pairs[i][0], pairs[i][1]) for i in idx]
            rng = make_rng(seed, "augment", step)
            losses, state = pretrain_step(batch, state, t_cfg, s_cfg, cfg, rng, sources=idx.astype(np.int64))
            rows.append(losses)
            report.steps.append(losses)
            step += 1
        mean = np.mean([r.as_row()[:4] for r in rows], axis=0)
        report.epochs.append(StepLosses(*map(float, mean), float(np.sum(mean))))
        if progress is not None:
            progress(epoch, report.epochs[-1])
        log.info("epoch %d %s", epoch + 1, report.epochs[-1])
    return PretrainResult(state.teacher, state.student, t_cfg, s_cfg, report, step)


def config_dict(cfg: PretrainConfig) -> dict:
    return asdict(cfg)
