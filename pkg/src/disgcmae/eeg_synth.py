"""Synthetic multichannel EEG and the recording -> graph pipeline.

Recordings are 1/f noise plus a shared alpha-band source. Group A always
carries the source; group B receives it through the bridge channels with a
class-dependent coupling, which is what the downstream task detects.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .graph import EegGraph
from .rng import make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Band:
    name: str
    lo_hz: float
    hi_hz: float

    def validate(self, fs: float) -> None:
        if not 0 < self.lo_hz < self.hi_hz < fs / 2:
            raise ValueError(f"band {self.name} [{self.lo_hz}, {self.hi_hz}] Hz invalid for fs={fs}")


BANDS = {
    "theta": Band("theta", 4.0, 8.0),
    "alpha": Band("alpha", 8.0, 14.0),
    "beta": Band("beta", 14.0, 30.0),
    "gamma": Band("gamma", 30.0, 50.0),
}
ALPHA = BANDS["alpha"]


@dataclass
class Recording:
    samples: np.ndarray
    fs: float
    montage_labels: tuple[str, ...]
    subject_id: str = ""
    label: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != len(self.montage_labels):
            raise ValueError("samples must be channels x timepoints matching montage_labels")
        if self.fs <= 0:
            raise ValueError("fs must be positive")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.fs


def default_groups(channels: int) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    """Group A, group B and bridge channels for a montage of ``channels``.

    The bridge is the part of B that the shipped quarter-density keep-sets
    (every 4th electrode) leave out.
    """
    a = tuple(range(channels // 8, channels // 4))
    b = tuple(range(5 * channels // 8, 3 * channels // 4))
    bridge = tuple(i for i in b if i % 4)
    return a, b, bridge


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 100
    channels: int = 64
    fs: float = 250.0
    duration_s: float = 200.0
    source_freq_hz: float = 10.0
    group_a: tuple[int, ...] | None = None
    group_b: tuple[int, ...] | None = None
    bridge: tuple[int, ...] | None = None
    coupling_strength: tuple[float, float] = (0.0, 0.8)
    coupling_jitter: float = 0.25
    leak: float = 0.35
    pink_amplitude: float = 1.0
    source_amplitude: float = 0.6
    phase_jitter: float = 0.05

    def groups(self) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
        da, db, dbr = default_groups(self.channels)
        return (
            tuple(self.group_a) if self.group_a is not None else da,
            tuple(self.group_b) if self.group_b is not None else db,
            tuple(self.bridge) if self.bridge is not None else dbr,
        )

    def validate(self) -> None:
        a, b, bridge = self.groups()
        if set(a) & set(b):
            raise ValueError("groups A and B overlap")
        if not set(bridge) <= set(a) | set(b):
            raise ValueError("bridge must lie inside A or B")
        if any(not 0 <= i < self.channels for i in a + b):
            raise ValueError("group index out of range")
        c0, c1 = self.coupling_strength
        if not c1 > c0 >= 0:
            raise ValueError("need coupling_strength[1] > coupling_strength[0] >= 0")
        if self.duration_s * self.fs < self.fs:
            raise ValueError("recording shorter than one second")

    def montage(self) -> tuple[str, ...]:
        return tuple(f"E{i:03d}" for i in range(self.channels))


def pink_noise(rng: np.random.Generator, channels: int, n: int) -> np.ndarray:
    """Unit-variance 1/f noise, shaped in the frequency domain."""
    spec = rng.standard_normal((channels, n // 2 + 1)) + 1j * rng.standard_normal((channels, n // 2 + 1))
    f = np.arange(n // 2 + 1, dtype=np.float64)
    f[0] = 1.0
    spec /= np.sqrt(f)
    spec[:, 0] = 0.0
    x = np.fft.irfft(spec, n=n, axis=1)
    return x / x.std(axis=1, keepdims=True)


def generate_recording(spec: SynthSpec, class_id: int, seed: int, subject_id: str | None = None) -> Recording:
    spec.validate()
    rng = make_rng(seed, "recording", class_id)
    n = int(round(spec.duration_s * spec.fs))
    t = np.arange(n) / spec.fs
    group_a, group_b, bridge = spec.groups()

    phase = np.cumsum(rng.normal(0.0, spec.phase_jitter, n)) + rng.uniform(0, 2 * np.pi)
    source = spec.source_amplitude * np.sin(2 * np.pi * spec.source_freq_hz * t + phase)

    x = spec.pink_amplitude * pink_noise(rng, spec.channels, n)
    gains = rng.uniform(0.5, 1.5, spec.channels)
    coupling = max(0.0, spec.coupling_strength[class_id] + spec.coupling_jitter * rng.standard_normal())

    for ch in group_a:
        x[ch] += gains[ch] * source
    bridge_set = set(bridge)
    for ch in group_b:
        # bridge channels carry the coupled source; the rest of B sees it attenuated
        w = coupling if ch in bridge_set else spec.leak * coupling
        x[ch] += w * gains[ch] * source

    return Recording(
        samples=x,
        fs=spec.fs,
        montage_labels=spec.montage(),
        subject_id=subject_id if subject_id is not None else f"s{seed}",
        label=class_id,
    )


def bandpass(rec: Recording, band: Band, order: int = 4) -> Recording:
    """Zero-phase Butterworth band-pass (forward-backward)."""
    band.validate(rec.fs)
    sos = signal.butter(order, [band.lo_hz, band.hi_hz], btype="bandpass", fs=rec.fs, output="sos")
    out = signal.sosfiltfilt(sos, rec.samples, axis=1)
    return Recording(out, rec.fs, rec.montage_labels, rec.subject_id, rec.label)


def band_psd_bins(rec: Recording, band: Band, n_bins: int) -> np.ndarray:
    """Welch PSD restricted to ``band`` and averaged into equal-width bins (raw power)."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if rec.duration_s < 2.0:
        raise ValueError("PSD features need at least 2 s of signal")
    band.validate(rec.fs)
    nper = int(round(2 * rec.fs))
    freqs, pxx = signal.welch(rec.samples, fs=rec.fs, window="hann", nperseg=nper, noverlap=nper // 2, axis=1)
    edges = np.linspace(band.lo_hz, band.hi_hz, n_bins + 1)
    out = np.empty((rec.channels, n_bins))
    for b in range(n_bins):
        lo, hi = edges[b], edges[b + 1]
        sel = (freqs >= lo) & ((freqs < hi) | ((b == n_bins - 1) & (freqs <= hi)))
        if sel.any():
            out[:, b] = pxx[:, sel].mean(axis=1)
        else:
            centre = 0.5 * (lo + hi)
            out[:, b] = [np.interp(centre, freqs, row) for row in pxx]
    return out


def psd_features(rec: Recording, band: Band, n_bins: int = 8) -> np.ndarray:
    """Log band power per bin, z-scored across channels bin by bin."""
    logp = np.log(np.maximum(band_psd_bins(rec, band, n_bins), 1e-300))
    mu = logp.mean(axis=0, keepdims=True)
    sd = logp.std(axis=0, keepdims=True)
    return np.divide(logp - mu, sd, out=np.zeros_like(logp), where=sd > 0)


def segment_count(total_s: float, window_s: float, overlap_s: float) -> int:
    if window_s <= overlap_s or overlap_s < 0:
        raise ValueError("need window_s > overlap_s >= 0")
    if total_s < window_s:
        raise ValueError("recording shorter than one window")
    # tolerance guards exact multiples against float rounding, e.g. (200-50)/30
    return int(math.floor((total_s - window_s) / (window_s - overlap_s) + 1e-9)) + 1


def segment(rec: Recording, window_s: float, overlap_s: float) -> list[Recording]:
    count = segment_count(rec.duration_s, window_s, overlap_s)
    win = int(round(window_s * rec.fs))
    step = (window_s - overlap_s) * rec.fs
    out = []
    for k in range(count):
        start = int(round(k * step))
        out.append(Recording(rec.samples[:, start : start + win], rec.fs, rec.montage_labels, rec.subject_id, rec.label))
    return out


def pearson_adjacency(filtered: Recording) -> np.ndarray:
    x = filtered.samples
    if x.shape[1] < 2:
        raise ValueError("need at least 2 timepoints")
    centred = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centred * centred, axis=1))
    dead = norms == 0
    if dead.any():
        msg = f"zero-variance channels {np.nonzero(dead)[0].tolist()} in {filtered.subject_id or 'recording'}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.warning(msg)
    safe = np.where(dead, 1.0, norms)
    unit = centred / safe[:, None]
    corr = np.abs(unit @ unit.T)
    corr[dead, :] = 0.0
    corr[:, dead] = 0.0
    np.fill_diagonal(corr, 0.0)
    corr = np.clip(0.5 * (corr + corr.T), 0.0, 1.0)
    return corr


def build_graph(
    rec: Recording,
    band: Band = ALPHA,
    n_bins: int = 8,
    threshold: float = 0.3,
    density_tier: str = "HD",
    source_id: str = "",
) -> EegGraph:
    filtered = bandpass(rec, band)
    x = psd_features(filtered, band, n_bins)
    a = pearson_adjacency(filtered)
    a[a < threshold] = 0.0
    return EegGraph(
        x=x,
        a=a,
        node_ids=tuple(range(rec.channels)),
        density_tier=density_tier,
        label=rec.label,
        source_id=source_id or rec.subject_id,
    )


@dataclass(frozen=True)
class CorpusSpec:
    synth: SynthSpec = field(default_factory=SynthSpec)
    window_s: float = 50.0
    overlap_s: float = 20.0
    band: str = "alpha"
    n_bins: int = 8
    threshold: float = 0.3
    include_full: bool = True


def subject_graphs(corpus: CorpusSpec, class_id: int, subject_seed: int, subject_id: str) -> list[EegGraph]:
    """Segment graphs (and the full-series graph) for one synthetic subject."""
    rec = generate_recording(corpus.synth, class_id, subject_seed, subject_id)
    band = BANDS[corpus.band]
    pieces = segment(rec, corpus.window_s, corpus.overlap_s)
    if corpus.include_full:
        pieces.append(rec)
    return [
        build_graph(p, band, corpus.n_bins, corpus.threshold, source_id=f"{subject_id}/{k}")
        for k, p in enumerate(pieces)
    ]
