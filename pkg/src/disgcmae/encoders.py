"""Teacher/student graph encoders, decoder, heads and momentum key encoders.

Parameters live in flat ``dict[str, np.ndarray]`` trees. Forward functions
accept either arrays or autodiff tensors as parameter values, so the same
code serves training (tensors with ``requires_grad``) and inference.
All forwards are batched over graphs of equal size: x is (B, n, d), a is
(B, n, n), node_ids is (B, n).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Mapping, NamedTuple

import numpy as np

from .graph import MaskedGraph
from .numerics import ad

TIER_PRESETS = {
    "tiny": {"layers": 4, "hidden": 64, "heads": 4},
    "large": {"layers": 8, "hidden": 128, "heads": 8},
}

ParamTree = dict[str, np.ndarray]


@dataclass(frozen=True)
class EncoderConfig:
    family: str = "dgcnn"
    tier: str = "tiny"
    layers: int = 4
    hidden: int = 64
    heads: int = 4
    position_embedding: bool = False
    theta_dyn: float = 0.4
    out_dim: int = 64
    in_dim: int = 8
    n_classes: int = 2
    n_electrodes: int = 128
    proj_linear: bool = False

    def __post_init__(self):
        if self.family not in ("dgcnn", "gformer"):
            raise ValueError(f"unknown encoder family {self.family!r}")
        if self.family == "gformer" and self.hidden % self.heads:
            raise ValueError("heads must divide hidden dim")
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be positive")

    @classmethod
    def preset(cls, family: str, tier: str, **overrides) -> "EncoderConfig":
        base = dict(TIER_PRESETS[tier])
        base.update(family=family, tier=tier, position_embedding=(family == "gformer"))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


class EncoderOutput(NamedTuple):
    nodes: ad.Tensor
    adjacency: np.ndarray


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), (fan_in, fan_out))


def init_params(cfg: EncoderConfig, rng: np.random.Generator) -> ParamTree:
    D, d = cfg.hidden, cfg.in_dim
    p: ParamTree = {
        "in.w": _glorot(rng, d, D),
        "in.b": np.zeros(D),
        "mask": np.zeros(d),
    }
    if cfg.position_embedding:
        p["pos"] = rng.normal(0.0, 0.1, (cfg.n_electrodes, D))
    for k in range(cfg.layers):
        if cfg.family == "dgcnn":
            p[f"l{k}.w_self"] = _glorot(rng, D, D)
            p[f"l{k}.b"] = np.zeros(D)
            p[f"l{k}.w_msg"] = _glorot(rng, D, D)
            p[f"l{k}.p"] = _glorot(rng, D, D)
        else:
            for name in ("q", "k", "v", "o"):
                p[f"l{k}.w{name}"] = _glorot(rng, D, D)
            p[f"l{k}.bo"] = np.zeros(D)
            p[f"l{k}.ln1.g"] = np.ones(D)
            p[f"l{k}.ln1.b"] = np.zeros(D)
            p[f"l{k}.ff1.w"] = _glorot(rng, D, 2 * D)
            p[f"l{k}.ff1.b"] = np.zeros(2 * D)
            p[f"l{k}.ff2.w"] = _glorot(rng, 2 * D, D)
            p[f"l{k}.ff2.b"] = np.zeros(D)
            p[f"l{k}.ln2.g"] = np.ones(D)
            p[f"l{k}.ln2.b"] = np.zeros(D)
    p["dec.w1"] = _glorot(rng, D, D)
    p["dec.b1"] = np.zeros(D)
    p["dec.w2"] = _glorot(rng, D, d)
    p["dec.b2"] = np.zeros(d)
    p["proj.w1"] = _glorot(rng, D, D)
    p["proj.b1"] = np.zeros(D)
    p["proj.w2"] = _glorot(rng, D, cfg.out_dim)
    p["proj.b2"] = np.zeros(cfg.out_dim)
    p["head.w"] = _glorot(rng, D, cfg.n_classes)
    p["head.b"] = np.zeros(cfg.n_classes)
    return p


def param_count(params: Mapping[str, np.ndarray], prefix: str | None = None) -> int:
    return int(sum(v.size for k, v in params.items() if prefix is None or k.startswith(prefix)))


HEAD_PREFIXES = ("head.",)
KEY_PREFIXES = ("in.", "pos", "l", "proj.")


def head_names(params: Mapping[str, np.ndarray]) -> list[str]:
    return [k for k in params if k.startswith(HEAD_PREFIXES)]


def key_encoder_names(params: Mapping[str, np.ndarray]) -> list[str]:
    """Parameters mirrored by the momentum key encoder (encoder body + projection)."""
    return [k for k in params if k.startswith(KEY_PREFIXES)]


# ---------------------------------------------------------------- building blocks


def dynamic_edge_weights(x_emb, proj, theta_dyn: float) -> tuple[ad.Tensor, ad.Tensor]:
    """alpha = sigmoid((xP)(xP)^T / sqrt(D)); a_dyn keeps alpha where alpha > theta_dyn.

    The gate is a constant mask, so gradients reach alpha only on retained
    entries.
    """
    x_emb = ad.as_tensor(x_emb)
    z = x_emb @ proj
    D = x_emb.shape[-1]
    scores = (z @ ad.transpose(z)) * (1.0 / np.sqrt(D))
    alpha = ad.sigmoid(scores)
    a_dyn = alpha * (alpha.data > theta_dyn)
    return alpha, a_dyn


def _masked_input(x, masked, mask_vec) -> ad.Tensor:
    x = ad.as_tensor(x)
    if masked is None or not np.any(masked):
        return x
    m = np.asarray(masked, dtype=np.float64)[..., None]
    return x * (1.0 - m) + ad.as_tensor(mask_vec) * m


def _neighbour_mask(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    return (a > 0) & ~np.eye(n, dtype=bool)


def gcn_layers(h, a: np.ndarray, params, cfg: EncoderConfig) -> EncoderOutput:
    """Dynamic-adjacency GCN layers, evaluated on the input-graph edge list.

    Equivalent to the dense form built from :func:`dynamic_edge_weights`
    restricted to input neighbours, with messages divided by the neighbour
    count.
    """
    nbr = _neighbour_mask(a)
    shape = a.shape
    n = shape[-1]
    D = cfg.hidden
    flat_idx = np.nonzero(nbr.reshape(-1, n, n))
    rows = flat_idx[0] * n + flat_idx[1]
    cols = flat_idx[0] * n + flat_idx[2]
    deg = np.maximum(nbr.sum(axis=-1).reshape(-1, 1), 1).astype(np.float64)
    inv_deg = 1.0 / deg
    h = ad.as_tensor(h).reshape(-1, D)
    scale = 1.0 / np.sqrt(D)
    weights = None
    for k in range(cfg.layers):
        z = h @ params[f"l{k}.p"]
        weights = ad.gated_sigmoid(ad.edge_dot(z, rows, cols) * scale, True, cfg.theta_dyn)
        messages = ad.edge_spmm(weights, rows, cols, h @ params[f"l{k}.w_msg"]) * inv_deg
        h = ad.relu(h @ params[f"l{k}.w_self"] + params[f"l{k}.b"] + messages)
    a_eff = np.zeros(shape)
    if weights is not None and rows.size:
        a_eff.reshape(-1, n, n)[flat_idx] = weights.data
    return EncoderOutput(h.reshape(*shape[:-1], D), a_eff)


def gformer_layers(h, a: np.ndarray, params, cfg: EncoderConfig) -> EncoderOutput:
    n = a.shape[-1]
    H, D = cfg.heads, cfg.hidden
    dh = D // H
    allowed = (a > 0) | np.eye(n, dtype=bool)
    bias = np.where(allowed, 0.0, -np.inf)[..., None, :, :]
    lead = h.shape[:-2]
    att_mean = np.zeros(a.shape)

    def heads_split(t):
        t = t.reshape(*lead, n, H, dh)
        return ad.transpose(t, tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2))

    for k in range(cfg.layers):
        q = heads_split(h @ params[f"l{k}.wq"])
        kk = heads_split(h @ params[f"l{k}.wk"])
        v = heads_split(h @ params[f"l{k}.wv"])
        scores = (q @ ad.transpose(kk)) * (1.0 / np.sqrt(dh))
        att = ad.softmax(scores, axis=-1, bias=bias)
        o = att @ v
        o = ad.transpose(o, tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2))
        o = o.reshape(*lead, n, D) @ params[f"l{k}.wo"] + params[f"l{k}.bo"]
        h = ad.layer_norm(h + o, params[f"l{k}.ln1.g"], params[f"l{k}.ln1.b"])
        f = ad.relu(h @ params[f"l{k}.ff1.w"] + params[f"l{k}.ff1.b"]) @ params[f"l{k}.ff2.w"] + params[f"l{k}.ff2.b"]
        h = ad.layer_norm(h + f, params[f"l{k}.ln2.g"], params[f"l{k}.ln2.b"])
        att_mean = att.data.mean(axis=-3)
    sym = 0.5 * (att_mean + np.swapaxes(att_mean, -1, -2))
    sym = sym * ~np.eye(n, dtype=bool)
    return EncoderOutput(h, sym)


def encode(params, cfg: EncoderConfig, x, a, node_ids=None, masked=None) -> EncoderOutput:
    """Node embeddings plus the final-layer learned adjacency."""
    a = np.asarray(a, dtype=np.float64)
    xin = _masked_input(x, masked, params.get("mask"))
    h = xin @ params["in.w"] + params["in.b"]
    if cfg.position_embedding:
        if node_ids is None:
            raise ValueError("position embedding needs node_ids")
        h = h + ad.take(ad.as_tensor(params["pos"]), np.asarray(node_ids))
    if cfg.family == "dgcnn":
        return gcn_layers(h, a, params, cfg)
    return gformer_layers(h, a, params, cfg)


def gcn_forward(mg: MaskedGraph, params, cfg: EncoderConfig) -> np.ndarray:
    if cfg.family != "dgcnn":
        raise ValueError("gcn_forward needs a dgcnn config")
    with ad.no_grad():
        out = encode(params, cfg, mg.x, mg.a, np.asarray(mg.node_ids))
    return out.nodes.data


def gformer_forward(mg: MaskedGraph, params, cfg: EncoderConfig) -> np.ndarray:
    if cfg.family != "gformer":
        raise ValueError("gformer_forward needs a gformer config")
    with ad.no_grad():
        out = encode(params, cfg, mg.x, mg.a, np.asarray(mg.node_ids))
    return out.nodes.data


def pool(nodes) -> ad.Tensor:
    return ad.tmean(ad.as_tensor(nodes), axis=-2)


def _pool2d(nodes) -> tuple[ad.Tensor, bool]:
    pooled = pool(nodes)
    if pooled.ndim == 1:
        return pooled.reshape(1, -1), True
    return pooled, False


def readout_project(nodes, params, cfg: EncoderConfig | None = None) -> ad.Tensor:
    """Mean-pool, 2-layer projection, unit L2 norm (always exactly unit)."""
    pooled, single = _pool2d(nodes)
    z = pooled @ params["proj.w1"] + params["proj.b1"]
    if cfg is None or not cfg.proj_linear:
        z = ad.relu(z)
    z = z @ params["proj.w2"] + params["proj.b2"]
    # an exactly zero projection has no direction; send it to the first axis
    dead = ~np.any(z.data != 0, axis=-1, keepdims=True)
    if dead.any():
        z = z + dead * np.eye(z.shape[-1])[0]
    z = ad.l2_normalize(z, axis=-1)
    return z.reshape(-1) if single else z


def classify(nodes, params) -> ad.Tensor:
    pooled, single = _pool2d(nodes)
    logits = pooled @ params["head.w"] + params["head.b"]
    return logits.reshape(-1) if single else logits


def decode(nodes, params) -> ad.Tensor:
    """Per-node 2-layer map back to the input feature dimension."""
    hidden = ad.relu(ad.as_tensor(nodes) @ params["dec.w1"] + params["dec.b1"])
    return hidden @ params["dec.w2"] + params["dec.b2"]


def momentum_update(query: Mapping[str, np.ndarray], key: Mapping[str, np.ndarray], m_c: float) -> ParamTree:
    if not 0.0 <= m_c <= 1.0:
        raise ValueError("momentum must lie in [0, 1]")
    if any(name not in query or query[name].shape != key[name].shape for name in key):
        raise ValueError("key and query parameter trees are not congruent")
    if m_c == 1.0:
        return {k: v.copy() for k, v in key.items()}
    if m_c == 0.0:
        return {k: query[k].copy() for k in key}
    return {k: m_c * v + (1.0 - m_c) * query[k] for k, v in key.items()}


def with_tier(cfg: EncoderConfig, **overrides) -> EncoderConfig:
    return replace(cfg, **overrides)
