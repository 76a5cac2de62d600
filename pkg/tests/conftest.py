import numpy as np
import pytest

from disgcmae.encoders import EncoderConfig
from disgcmae.graph import EegGraph
from disgcmae.montages import load_keep_set


def toy_graphs(n_graphs, n_nodes=64, d=8, seed=0, n_subjects=None):
    """Random labelled HD graphs; class 1 gets a stronger block of edges."""
    rng = np.random.default_rng(seed)
    n_subjects = n_subjects or n_graphs
    out, subjects = [], []
    for i in range(n_graphs):
        label = i % 2
        a = rng.uniform(size=(n_nodes, n_nodes)) * (rng.uniform(size=(n_nodes, n_nodes)) < 0.15)
        if label:
            a[:8, 8:16] += 0.8
        a = np.triu(a, 1)
        x = rng.normal(size=(n_nodes, d)) + 0.5 * label
        out.append(EegGraph(x, np.minimum(a + a.T, 1.0), tuple(range(n_nodes)), label=label, source_id=f"g{i}"))
        subjects.append(f"s{i % n_subjects:03d}")
    return out, subjects


def small_cfg(family="dgcnn", **kw):
    base = dict(layers=1, hidden=4, heads=2, out_dim=4, in_dim=8, n_electrodes=64)
    base.update(kw)
    return EncoderConfig.preset(family, "tiny", **base)


@pytest.fixture
def keep16():
    return load_keep_set(64, 16)
