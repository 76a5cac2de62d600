"""Shipped electrode keep-sets (global indices into the HD montage)."""

import json
from importlib import resources
from pathlib import Path


def keep_set_path(hd_channels: int, n_keep: int) -> Path:
    tier = {hd_channels // 2: "md", hd_channels // 4: "ld", 8: "vld"}.get(n_keep)
    if tier is None:
        raise ValueError(f"no shipped keep-set for {hd_channels} -> {n_keep}")
    return Path(str(resources.files(__name__).joinpath(f"hd{hd_channels}_{tier}{n_keep}.json")))


def load_keep_set(path_or_hd, n_keep: int | None = None) -> list[int]:
    """Load a keep-set from a file path, or from (hd_channels, n_keep)."""
    if n_keep is not None:
        if n_keep == path_or_hd:
            return list(range(path_or_hd))
        path = keep_set_path(int(path_or_hd), n_keep)
    else:
        path = Path(path_or_hd)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    keep = doc["keep"] if isinstance(doc, dict) else doc
    return [int(k) for k in keep]
