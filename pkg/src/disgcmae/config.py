"""Experiment configuration: one JSON document holding every hyperparameter."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .distill import DistillConfig
from .dataset import synth_spec_from_dict
from .eeg_synth import BANDS, CorpusSpec
from .encoders import EncoderConfig
from .montages import load_keep_set
from .pretrain import PretrainConfig


class ConfigError(Exception):
    pass


def _desk_encoder() -> EncoderConfig:
    return EncoderConfig.preset("dgcnn", "tiny", layers=2, hidden=16, out_dim=16, n_electrodes=64)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    hd_channels: int = 64
    ld_channels: int = 16
    keep_set: str | None = None
    teacher: EncoderConfig = field(default_factory=_desk_encoder)
    student: EncoderConfig = field(default_factory=_desk_encoder)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    output_dir: str = "runs"

    def keep(self) -> list[int]:
        if self.keep_set is not None:
            return load_keep_set(self.keep_set)
        return load_keep_set(self.hd_channels, self.ld_channels)

    def validate(self) -> None:
        if self.ld_channels > self.hd_channels:
            raise ConfigError("ld_channels exceeds hd_channels")
        if self.corpus.synth.channels != self.hd_channels:
            raise ConfigError("synthetic channel count must equal hd_channels")
        if self.keep_set is not None and not Path(self.keep_set).is_file():
            raise ConfigError(f"keep-set file not found: {self.keep_set}")
        if self.corpus.band not in BANDS:
            raise ConfigError(f"unknown band {self.corpus.band!r}")
        try:
            keep = self.keep()
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"keep-set unavailable: {exc}") from None
        if len(keep) != self.ld_channels or len(set(keep)) != len(keep):
            raise ConfigError("keep-set size does not match ld_channels")
        if min(keep) < 0 or max(keep) >= self.hd_channels:
            raise ConfigError("keep-set index outside the HD montage")
        if self.teacher.in_dim != self.corpus.n_bins or self.student.in_dim != self.corpus.n_bins:
            raise ConfigError("encoder in_dim must equal n_bins")
        if self.teacher.out_dim != self.student.out_dim:
            raise ConfigError("teacher and student must share out_dim")
        if self.corpus.synth.n_subjects < 0:
            raise ConfigError("n_subjects must be nonnegative")
        try:
            self.corpus.synth.validate()
            self.corpus.synth.montage()
            BANDS[self.corpus.band].validate(self.corpus.synth.fs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = cls()
        try:
            corpus_doc = dict(asdict(base.corpus), **doc.get("corpus", {}))
            synth = synth_spec_from_dict(dict(asdict(base.corpus.synth), **corpus_doc.pop("synth", {})))
            cfg = cls(
                seed=int(doc.get("seed", base.seed)),
                corpus=CorpusSpec(synth=synth, **corpus_doc),
                hd_channels=int(doc.get("hd_channels", base.hd_channels)),
                ld_channels=int(doc.get("ld_channels", base.ld_channels)),
                keep_set=doc.get("keep_set", base.keep_set),
                teacher=EncoderConfig(**dict(asdict(base.teacher), **doc.get("teacher", {}))),
                student=EncoderConfig(**dict(asdict(base.student), **doc.get("student", {}))),
                pretrain=PretrainConfig(**dict(asdict(base.pretrain), **doc.get("pretrain", {}))),
                distill=DistillConfig.from_dict(dict(base.distill.to_dict(), **doc.get("distill", {}))),
                output_dir=str(doc.get("output_dir", base.output_dir)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = ExperimentConfig.from_dict(doc)
    cfg.validate()
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
