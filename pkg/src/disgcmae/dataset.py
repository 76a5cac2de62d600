"""Dataset directories: ``manifest.json`` plus one ``sample_<k>.json`` per graph."""

from __future__ import annotations

import json
import os
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .eeg_synth import CorpusSpec, SynthSpec, subject_graphs
from .graph import EegGraph
from .rng import child_seed


class DatasetError(Exception):
    """Malformed or missing dataset content; carries the offending path."""

    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = Path(path)


def synth_graphs(corpus: CorpusSpec, seed: int) -> Iterator[tuple[str, EegGraph]]:
    """All graphs for ``n_subjects`` per class, classes interleaved by subject."""
    for s in range(corpus.synth.n_subjects):
        for class_id in (0, 1):
            subject = f"c{class_id}s{s:05d}"
            for g in subject_graphs(corpus, class_id, child_seed(seed, "subject", class_id, s), subject):
                yield subject, g


def _sample_doc(g: EegGraph, subject_id: str) -> dict:
    return {
        "x": g.x.tolist(),
        "a": g.a.tolist(),
        "label": g.label,
        "subject_id": subject_id,
        "source_id": g.source_id,
        "density_tier": g.density_tier,
        "node_ids": list(g.node_ids),
    }


def write_dataset(path, items: Iterable[tuple[str, EegGraph]], manifest: dict) -> int:
    """Write samples and manifest; returns the sample count."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    count = 0
    for subject_id, g in items:
        with open(path / f"sample_{count}.json", "w", encoding="utf-8") as fh:
            json.dump(_sample_doc(g, subject_id), fh)
        count += 1
    manifest = dict(manifest, count=count)
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return count


def corpus_manifest(corpus: CorpusSpec, seed: int) -> dict:
    synth = corpus.synth
    group_a, group_b, bridge = synth.groups()
    return {
        "format": "disgcmae-dataset/1",
        "seed": seed,
        "spec": {**asdict(synth), "group_a": list(group_a), "group_b": list(group_b), "bridge": list(bridge)},
        "segmentation": {"window_s": corpus.window_s, "overlap_s": corpus.overlap_s, "include_full": corpus.include_full},
        "counts": {"subjects_per_class": synth.n_subjects},
        "montage": list(synth.montage()),
        "band": corpus.band,
        "n_bins": corpus.n_bins,
        "theta_a": corpus.threshold,
    }


def read_manifest(path) -> dict:
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.is_file():
        raise DatasetError(mf, "missing manifest")
    try:
        with open(mf, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(mf, f"invalid JSON ({exc})") from None


def read_dataset(path) -> tuple[dict, list[EegGraph], list[str]]:
    """Load every sample. Returns (manifest, graphs, subject_ids)."""
    path = Path(path)
    manifest = read_manifest(path)
    count = manifest.get("count")
    if not isinstance(count, int) or count < 0:
        raise DatasetError(path / "manifest.json", "missing sample count")
    graphs, subjects = [], []
    for k in range(count):
        f = path / f"sample_{k}.json"
        try:
            with open(f, encoding="utf-8") as fh:
                doc = json.load(fh)
            g = EegGraph(
                x=np.asarray(doc["x"], dtype=np.float64),
                a=np.asarray(doc["a"], dtype=np.float64),
                node_ids=tuple(doc.get("node_ids") or range(len(doc["x"]))),
                density_tier=doc.get("density_tier", "HD"),
                label=doc.get("label"),
                source_id=doc.get("source_id") or f"sample_{k}",
            )
            g.check(atol=1e-12)
        except FileNotFoundError:
            raise DatasetError(f, "missing sample file") from None
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DatasetError(f, f"malformed sample ({exc})") from None
        graphs.append(g)
        subjects.append(str(doc.get("subject_id", "")))
    return manifest, graphs, subjects


def synth_spec_from_dict(doc: dict) -> SynthSpec:
    doc = dict(doc)
    for key in ("group_a", "group_b", "bridge", "coupling_strength"):
        if doc.get(key) is not None:
            doc[key] = tuple(doc[key])
    return SynthSpec(**doc)


def thread_cap(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("DISGCMAE_THREADS", default)))
    except ValueError:
        return default
