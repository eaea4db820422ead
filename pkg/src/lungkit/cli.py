"""``lungkit`` command-line entry point.

Every subcommand accepts ``--config FILE`` (plain ``key = value`` lines) and
flags; flags win over the file, the file wins over built-in defaults.  The
resolved settings are written next to every output: ``resolved_config.txt``
inside an output directory, ``<out>.config`` beside an output file.

Seeds: ``split`` shuffles subjects with ``seed`` and builds the fold plan
with ``seed``; ``train`` derives one independent seed per model from
``seed`` via ``numpy.random.SeedSequence(seed).spawn``; ``synth`` seeds file
``i`` with ``SeedSequence([seed, i])``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from collections import Counter
from pathlib import Path

from . import STANDARD_SAMPLES, __version__
from .audio_io import read_wav, standardize_length
from .config import conv_channels, format_config, read_config_file, resolve
from .corpus import LABEL_SUFFIX, load_corpus
from .dataset import assign_split, filter_task_files, make_folds, rasterize, read_split_manifest, write_split_manifest
from .dsp import extract_features, n_frames, save_features
from .errors import ConfigInvalid, LungkitError
from .evaluation import ModelMetrics, aggregate_report, match_events, segment_confusion
from .labels import corpus_overlap_table, corpus_statistics, parse_label_file, write_label_file
from .nnet import Architecture, TrainConfig, load_model, save_model
from .pipeline import corpus_features, cross_validate, predict_events, reference_notes, task_intervals
from .postprocess import PostprocessConfig, as_label_events
from .synth import synth_corpus

log = logging.getLogger("lungkit")

TASKS = ("I", "E", "C", "D")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(p):
    p.add_argument("--config", type=Path, help="key = value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes for per-file stages")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lungkit", description="Lung sound analysis pipeline.")
    ap.add_argument("--version", action="version", version=f"lungkit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="per-label counts and durations")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--name-pattern", dest="name_pattern")

    p = sub.add_parser("overlap", help="pairwise overlap ratios of I, E, C, D")
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("split", help="subject-level train/test split and fold plan")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--name-pattern", dest="name_pattern")

    p = sub.add_parser("features", help="feature matrix of one WAV (or a directory of WAVs)")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="repeated k-fold training and held-out evaluation")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--split", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--conv-channels", dest="conv_channels")
    p.add_argument("--kernel", type=int)
    _add_pp(p)

    p = sub.add_parser("predict", help="detect events in one WAV")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_pp(p)

    p = sub.add_parser("evaluate", help="score predicted label files against truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("synth", help="write a synthetic labeled corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--subjects", dest="n_subjects", type=int)

    for p in sub.choices.values():
        _add_common(p)
    return ap


def _add_pp(p):
    p.add_argument("--threshold", type=float)
    p.add_argument("--merge-gap", dest="merge_gap", type=int)
    p.add_argument("--min-duration", dest="min_duration", type=int)


_NOT_SETTINGS = {"command", "config", "verbose", "data", "out", "labels", "inp", "split", "model", "pred", "truth", "task", "n"}


def _resolved(args) -> dict:
    file_values = read_config_file(args.config) if args.config else None
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_SETTINGS}
    return resolve(file_values, flags)


def _echo_config(cfg: dict, out: Path, is_dir: bool, extra: dict | None = None) -> None:
    text = format_config({**cfg, **(extra or {})})
    target = out / "resolved_config.txt" if is_dir else out.with_name(out.name + ".config")
    target.write_text(text, encoding="utf-8")


def _pp(cfg) -> PostprocessConfig:
    return PostprocessConfig(cfg["threshold"], cfg["merge_gap"], cfg["min_duration"])


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# --- subcommands ----------------------------------------------------------------


def cmd_stats(args, cfg):
    entries = load_corpus(args.data, cfg["name_pattern"])
    if not entries:
        entries = load_corpus(args.data, cfg["name_pattern"], require_audio=False)
    report = corpus_statistics(entries)
    _write(args.out, report.to_csv())
    _echo_config(cfg, args.out, False)
    rec = report.recordings["all"]
    print(f"{rec.count} recordings, {rec.total_min:.2f} min")
    for lab in ("I", "E", "C", "D"):
        r = report.row(lab)
        print(f"{lab}: {r.count} events, {r.total_min:.2f} min")


def cmd_overlap(args, cfg):
    entries = load_corpus(args.labels, cfg["name_pattern"], require_audio=False)
    table = corpus_overlap_table(entries, missing="nan")
    _write(args.out, table.to_csv())
    _echo_config(cfg, args.out, False)
    kinds = ("I", "E", "C", "D")
    print("      " + "".join(f"{k:>8}" for k in kinds))
    for x in kinds:
        cells = "".join(f"{'-':>8}" if x == y else f"{table.ratio(x, y):8.1f}" for y in kinds)
        print(f"{x:<6}{cells}")


def cmd_split(args, cfg):
    entries = load_corpus(args.data, cfg["name_pattern"], require_audio=False)
    counts = Counter(e.group for e in entries)
    split = assign_split(dict(counts), cfg["test_fraction"], seed=cfg["seed"])
    plan = make_folds(split.train_subjects, k=cfg["folds"], repeats=cfg["repeats"], seed=cfg["seed"])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_split_manifest(args.out, split, plan)
    _echo_config(cfg, args.out, False)
    print(
        f"{len(split.train_subjects)} train / {len(split.test_subjects)} test subjects, "
        f"test share {split.test_fraction:.3f} of {sum(counts.values())} recordings"
    )


def cmd_features(args, cfg):
    if args.inp.is_dir():
        entries = load_corpus(args.inp, cfg["name_pattern"])
        feats = corpus_features(entries, jobs=cfg["jobs"])
        args.out.mkdir(parents=True, exist_ok=True)
        for e, f in zip(entries, feats):
            save_features(args.out / f"{e.name}.ftr", f)
        _echo_config(cfg, args.out, True)
        print(f"{len(entries)} feature files written to {args.out}")
        return
    fm = _file_features(args.inp, cfg["name_pattern"])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_features(args.out, fm)
    _echo_config(cfg, args.out, False)
    print(f"{fm.frames} x {fm.channels} features written to {args.out}")


def _train_config(cfg) -> TrainConfig:
    arch = Architecture(conv_channels=conv_channels(cfg), kernel=cfg["kernel"], hidden=cfg["hidden"])
    return TrainConfig(
        learning_rate=cfg["learning_rate"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        clip_norm=cfg["clip_norm"],
        arch=arch,
    )


def cmd_train(args, cfg):
    split, plan = read_split_manifest(args.split)
    if plan is None or (plan.folds, plan.repeats) != (cfg["folds"], cfg["repeats"]):
        log.info("building a %d x %d fold plan from the split's train subjects", cfg["folds"], cfg["repeats"])
        plan = make_folds(split.train_subjects, k=cfg["folds"], repeats=cfg["repeats"], seed=cfg["seed"])
    entries = load_corpus(args.data, cfg["name_pattern"])
    known = set(split.train_subjects) | set(split.test_subjects)
    entries = [e for e in entries if e.group in known]
    features = corpus_features(entries, jobs=cfg["jobs"])
    result = cross_validate(
        entries, features, split, plan, args.task, _train_config(cfg), _pp(cfg), seed=cfg["seed"], jobs=cfg["jobs"]
    )
    out = args.out
    (out / "models").mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["repeat", "fold", "epoch", "train_loss", "val_loss"])
    for run in result.runs:
        tag = f"r{run.pair.repeat}_f{run.pair.fold}"
        save_model(run.result.final, out / "models" / f"{tag}.final.lkmd")
        save_model(run.result.best, out / "models" / f"{tag}.best.lkmd")
        for e in run.result.log:
            w.writerow([run.pair.repeat, run.pair.fold, e.epoch, f"{e.train_loss:.8f}", f"{e.val_loss:.8f}"])
    (out / "train_log.csv").write_text(buf.getvalue(), encoding="utf-8")
    (out / "report.json").write_text(result.report.to_json(), encoding="utf-8")
    (out / "report.csv").write_text(result.report.to_csv(), encoding="utf-8")
    _echo_config(cfg, out, True, {"task": args.task})
    m = result.report.mean
    print(
        f"task {result.task}: {len(result.runs)} models, "
        f"segment F1 {m['segment']['f1']:.4f}, event F1 {m['event']['f1']:.4f}"
    )


def cmd_predict(args, cfg):
    params = load_model(args.model)
    fm = _file_features(args.inp, cfg["name_pattern"])
    _, events = predict_events(params, fm, _pp(cfg))
    write_label_file(_mkparent(args.out), as_label_events(events, params.task))
    _echo_config(cfg, args.out, False, {"task": params.task})
    print(f"{len(events)} {params.task} events written to {args.out}")


def _file_features(path: Path, name_pattern: str):
    return extract_features(standardize_length(read_wav(path, name_pattern)))


def _mkparent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _pred_file(pred_dir: Path, stem: str) -> Path | None:
    for name in (stem + LABEL_SUFFIX, stem + ".txt"):
        p = pred_dir / name
        if p.exists():
            return p
    return None


def cmd_evaluate(args, cfg):
    truth = filter_task_files(load_corpus(args.truth, cfg["name_pattern"], require_audio=False), args.task)
    if not truth:
        raise LungkitError(f"no truth files for task {args.task} under {args.truth}")
    missing = [e.name for e in truth if _pred_file(args.pred, e.name) is None]
    if missing:
        raise LungkitError(f"{len(missing)} truth file(s) have no prediction, first: {missing[0]}")
    seg_total = ev_total = None
    for e in truth:
        n = n_frames(min(e.n_samples, STANDARD_SAMPLES))
        limit = max(e.duration, n * 0.016)
        pred_entry = type(e)(**{**vars(e), "events": parse_label_file(_pred_file(args.pred, e.name))})
        p_iv = task_intervals(pred_entry, args.task)
        t_iv = task_intervals(e, args.task)
        seg = segment_confusion(rasterize(p_iv, n, limit=limit), rasterize(t_iv, n, limit=limit))
        ev = match_events(t_iv, p_iv).counts
        seg_total = seg if seg_total is None else seg_total + seg
        ev_total = ev if ev_total is None else ev_total + ev
    settings = {
        "task": args.task,
        "n_files": len(truth),
        "ji_threshold": 0.5,
        "matching": "existence per reference direction; TP pairs one-to-one by descending JI",
    }
    report = aggregate_report([ModelMetrics(args.task, 0, 0, seg_total, ev_total)], expected=1, settings=settings)
    report.notes.update(reference_notes(report))
    _write(args.out, report.to_json())
    _echo_config(cfg, args.out, False, {"task": args.task})
    m = report.mean
    print(f"task {args.task} over {len(truth)} files: segment F1 {m['segment']['f1']:.4f}, event F1 {m['event']['f1']:.4f}")


def cmd_synth(args, cfg):
    rows = synth_corpus(
        args.n, cfg["seed"], args.out, n_subjects=cfg["n_subjects"], wheeze_rate=cfg["wheeze_rate"], crackle_rate=cfg["crackle_rate"]
    )
    _echo_config(cfg, args.out, True, {"n": args.n})
    print(f"{len(rows)} recordings from {len({r['subject_id'] for r in rows})} subjects written to {args.out}")


COMMANDS = {
    "stats": cmd_stats,
    "overlap": cmd_overlap,
    "split": cmd_split,
    "features": cmd_features,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolved(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except ConfigInvalid as e:
        print(f"lungkit: config error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args, cfg)
    except ConfigInvalid as e:
        print(f"lungkit: config error: {e}", file=sys.stderr)
        return 2
    except (LungkitError, OSError, ValueError) as e:
        print(f"lungkit {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
