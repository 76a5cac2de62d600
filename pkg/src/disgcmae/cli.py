"""Command-line entry points: synth, pretrain, finetune, gtd-oracle, eval.

Exit codes: 0 success, 1 verification failure, 2 I/O error, 3 data error,
4 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import encoders as enc
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .dataset import DatasetError, corpus_manifest, read_dataset, synth_graphs, thread_cap, write_dataset
from .distill import LOSS_VARIANTS, DistillConfig, auroc, gtd_loss, run_finetune, select_pairs, split_subjects
from .numerics import ad
from .oracles import brute_gtd, brute_select_pairs, random_instance
from .pretrain import run_pretraining
from .rng import make_rng

EXIT_OK, EXIT_VERIFY, EXIT_IO, EXIT_DATA, EXIT_CONFIG = 0, 1, 2, 3, 4

log = logging.getLogger("disgcmae")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _out_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write to {path}: {exc.strerror or exc}") from None
    return path


def _attach_log(out: Path) -> None:
    """Timestamps go only to run.log so that every other output is reproducible."""
    handler = logging.FileHandler(out / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("disgcmae")
    root.addHandler(handler)
    root.setLevel(logging.INFO)


def _load_data(path) -> tuple[list, list[str]]:
    if path is None or not Path(path).is_dir():
        raise CliError(EXIT_DATA, f"dataset not found: {path}")
    try:
        _, graphs, subjects = read_dataset(path)
    except DatasetError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    return graphs, subjects


def _check_graphs(graphs, cfg: ExperimentConfig, need_labels: bool) -> None:
    for i, g in enumerate(graphs):
        if g.n != cfg.hd_channels or g.d != cfg.corpus.n_bins:
            raise CliError(EXIT_DATA, f"sample_{i}.json: graph is {g.n}x{g.d}, config expects {cfg.hd_channels}x{cfg.corpus.n_bins}")
        if need_labels and g.label is None:
            raise CliError(EXIT_DATA, f"sample_{i}.json: missing label")


def _load_ckpt(path, expected: enc.EncoderConfig, role: str):
    try:
        params, cfg, meta = load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    if cfg != expected:
        raise CliError(EXIT_CONFIG, f"{role} checkpoint {path} has config {cfg.to_dict()}, expected {expected.to_dict()}")
    return params, meta


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: ExperimentConfig, out) -> int:
    out = _out_dir(out)
    if cfg.corpus.synth.n_subjects == 0:
        warnings.warn("n_subjects is 0: writing an empty dataset", stacklevel=2)
    try:
        count = write_dataset(out, synth_graphs(cfg.corpus, cfg.seed), corpus_manifest(cfg.corpus, cfg.seed))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write dataset to {out}: {exc}") from None
    print(f"wrote {count} samples from {2 * cfg.corpus.synth.n_subjects} subjects to {out}")
    return EXIT_OK


def cmd_pretrain(cfg: ExperimentConfig, data, out, epochs=None, gcl_only=False, gmae_only=False) -> int:
    if gcl_only and gmae_only:
        raise CliError(EXIT_CONFIG, "--gcl-only and --gmae-only are mutually exclusive")
    pcfg = cfg.pretrain
    if epochs is not None:
        pcfg = replace(pcfg, epochs=epochs)
    if gcl_only:
        pcfg = replace(pcfg, w_rec_t=0.0, w_rec_s=0.0)
    if gmae_only:
        pcfg = replace(pcfg, w_cl_t=0.0, w_cl_s=0.0)
    graphs, _ = _load_data(data)
    if not graphs:
        raise CliError(EXIT_DATA, f"{data}: dataset is empty")
    _check_graphs(graphs, cfg, need_labels=False)
    out = _out_dir(out)
    _attach_log(out)
    result = run_pretraining(graphs, cfg.keep(), cfg.teacher, cfg.student, pcfg, cfg.seed)
    meta = {"seed": cfg.seed, "steps": result.steps, "pretrain": asdict(pcfg)}
    try:
        save_checkpoint(out / "teacher.ckpt", result.teacher, cfg.teacher, dict(meta, role="teacher"))
        save_checkpoint(out / "student.ckpt", result.student, cfg.student, dict(meta, role="student"))
        result.report.write_csv(out / "pretrain_loss.csv")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write outputs to {out}: {exc}") from None
    last = result.report.epochs[-1]
    print(f"pretrained {len(result.report.epochs)} epochs, final l_pretrain {last.l_pretrain:.6f}")
    return EXIT_OK


def _finetune_one(args) -> dict:
    cfg, dcfg, teacher, student, graphs, subjects, seed, out = args
    res = run_finetune(teacher, cfg.teacher, student, cfg.student, graphs, subjects, cfg.keep(), dcfg, seed)
    res.write_csv(out / f"finetune_seed{seed}.csv")
    save_checkpoint(out / f"student_seed{seed}.ckpt", res.student, cfg.student, {"seed": seed, "best_epoch": res.best_epoch})
    return {
        "seed": seed,
        "test_acc": res.test.acc,
        "test_auroc": res.test.auroc,
        "teacher_test_acc": res.teacher_test.acc,
        "best_epoch": res.best_epoch,
        "n_trainable": res.n_trainable,
        "n_trainable_tuned": res.n_trainable_tuned,
    }


def _stats(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std()), "values": [float(x) for x in v]}


def cmd_finetune(cfg: ExperimentConfig, data, out, teacher=None, student=None, mode=None, loss="union", seeds=5) -> int:
    if seeds < 1:
        raise CliError(EXIT_CONFIG, "--seeds must be at least 1")
    w = LOSS_VARIANTS[loss]
    dcfg = replace(cfg.distill, w_ce=w[0], w_kd=w[1], w_gtd=w[2], mode=mode or cfg.distill.mode)
    if teacher is not None:
        t_params, _ = _load_ckpt(teacher, cfg.teacher, "teacher")
    else:
        t_params = enc.init_params(cfg.teacher, make_rng(cfg.seed, "init", "teacher"))
    if student is not None:
        s_params, _ = _load_ckpt(student, cfg.student, "student")
    else:
        s_params = enc.init_params(cfg.student, make_rng(cfg.seed, "init", "student"))
    graphs, subjects = _load_data(data)
    _check_graphs(graphs, cfg, need_labels=True)
    out = _out_dir(out)
    _attach_log(out)
    jobs = [(cfg, dcfg, t_params, s_params, graphs, subjects, cfg.seed + i, out) for i in range(seeds)]
    try:
        workers = min(thread_cap(), seeds)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                runs = list(pool.map(_finetune_one, jobs))
        else:
            runs = [_finetune_one(j) for j in jobs]
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write outputs to {out}: {exc}") from None
    summary = {
        "mode": dcfg.mode,
        "loss": loss,
        "seeds": [r["seed"] for r in runs],
        "test_acc": _stats([r["test_acc"] for r in runs]),
        "test_auroc": _stats([r["test_auroc"] for r in runs]),
        "teacher_test_acc": _stats([r["teacher_test_acc"] for r in runs]),
        "best_epoch": [r["best_epoch"] for r in runs],
        "n_trainable": runs[0]["n_trainable"],
        "n_trainable_tuned": runs[0]["n_trainable_tuned"],
        "trainable_fraction": runs[0]["n_trainable"] / runs[0]["n_trainable_tuned"],
    }
    _write_json(out / "summary.json", summary)
    print(f"test acc {summary['test_acc']['mean']:.4f} +/- {summary['test_acc']['std']:.4f} over {seeds} seeds")
    return EXIT_OK


def cmd_gtd_oracle(seeds: int = 200, max_nodes: int = 12, fault: bool = False, seed: int = 0) -> int:
    """Compare pair selection and the topology loss against the brute-force oracles."""
    if seeds < 1:
        raise CliError(EXIT_CONFIG, "--seeds must be at least 1")
    if not 2 <= max_nodes <= 14:
        raise CliError(EXIT_CONFIG, "--max-nodes must lie in [2, 14]")
    dcfg = DistillConfig()
    for s in range(seeds):
        inst = random_instance(make_rng(seed, "gtd-oracle", s), max_nodes)
        pairs = select_pairs(inst.a_h, inst.a_l, inst.partition, inst.theta)
        pos, neg = brute_select_pairs(inst.a_h, inst.a_l, inst.partition, inst.theta, two_hop_offset=1 if fault else 0)
        got = ad.as_tensor(gtd_loss(inst.s_nodes, inst.t_nodes, pairs, dcfg)).item()
        want = brute_gtd(inst.s_nodes, inst.t_nodes, pos, neg, dcfg.eps)
        rel = abs(got - want) / max(1.0, abs(got), abs(want))
        if list(pairs.positives) != pos or list(pairs.negatives) != neg or rel > 1e-10:
            doc = {
                "instance": s,
                "positives": [list(p) for p in pairs.positives],
                "negatives": [list(p) for p in pairs.negatives],
                "oracle_positives": [list(p) for p in pos],
                "oracle_negatives": [list(p) for p in neg],
                "loss": got,
                "oracle_loss": want,
                "input": inst.to_dict(),
            }
            print("MISMATCH " + json.dumps(doc, sort_keys=True))
            return EXIT_VERIFY
    print(f"gtd-oracle: {seeds} instances agree (max nodes {max_nodes})")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, student, data, out=None) -> int:
    params, _ = _load_ckpt(student, cfg.student, "student")
    graphs, subjects = _load_data(data)
    _check_graphs(graphs, cfg, need_labels=True)
    assign = split_subjects(subjects, [g.label for g in graphs], cfg.distill.split, cfg.seed)
    test = [g for g, s in zip(graphs, subjects) if assign[s] == "test"]
    if not test:
        raise CliError(EXIT_DATA, f"{data}: held-out split is empty")
    keep = cfg.keep()
    idx = [test[0].node_ids.index(k) for k in keep]
    x = np.stack([g.x[idx] for g in test])
    a = np.stack([g.a[np.ix_(idx, idx)] for g in test])
    ids = np.array([[g.node_ids[i] for i in idx] for g in test])
    y = np.array([g.label for g in test])
    with ad.no_grad():
        logits = enc.classify(enc.encode(params, cfg.student, x, a, ids).nodes, params).data
    try:
        auc = auroc(logits[:, 1] - logits[:, 0], y)
    except ValueError:
        auc = None
    doc = {"n": len(test), "acc": float(np.mean(np.argmax(logits, axis=1) == y)), "auroc": auc}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out is not None:
        try:
            Path(out).write_text(text + "\n", encoding="utf-8")
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {out}: {exc}") from None
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="disgcmae", description=__doc__.splitlines()[0])
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("--config", help="experiment configuration JSON")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)

    s = sub.add_parser("pretrain", help="joint teacher/student pre-training")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--gcl-only", action="store_true", help="contrastive terms only")
    s.add_argument("--gmae-only", action="store_true", help="reconstruction terms only")

    s = sub.add_parser("finetune", help="teacher fine-tuning and student distillation")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--teacher", help="teacher checkpoint (random init if omitted)")
    s.add_argument("--student", help="student checkpoint (random init if omitted)")
    s.add_argument("--mode", choices=("tuned", "frozen"))
    s.add_argument("--loss", choices=tuple(LOSS_VARIANTS), default="union")
    s.add_argument("--seeds", type=int, default=5)

    s = sub.add_parser("gtd-oracle", help="check topology distillation against brute force")
    s.add_argument("--seeds", type=int, default=200)
    s.add_argument("--max-nodes", type=int, default=12)
    s.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    s = sub.add_parser("eval", help="evaluate a student checkpoint on the held-out split")
    s.add_argument("--student", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.captureWarnings(True)
    try:
        if args.command == "gtd-oracle":
            return cmd_gtd_oracle(args.seeds, args.max_nodes, args.inject_fault)
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            raise CliError(EXIT_CONFIG, str(exc)) from None
        if args.print_config:
            print(dump_config(cfg))
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        if args.command == "synth":
            return cmd_synth(cfg, args.out)
        if args.command == "pretrain":
            return cmd_pretrain(cfg, args.data, args.out, args.epochs, args.gcl_only, args.gmae_only)
        if args.command == "finetune":
            return cmd_finetune(cfg, args.data, args.out, args.teacher, args.student, args.mode, args.loss, args.seeds)
        return cmd_eval(cfg, args.student, args.data, args.out)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
