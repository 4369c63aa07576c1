"""Command-line front end.

Subcommands compose the library into a file-based pipeline:

    synth        generate a synthetic corpus of score + match files
    extract      score (+ match) -> feature CSV (+ target CSV)
    mi           corpus of feature/target CSVs -> mutual-information CSVs
    train        corpus -> one trained model file + training log
    eval         corpus -> cross-validation results CSV
    sensitivity  trained model + corpus -> differential sensitivity CSV

Every command writes a JSON run manifest; each output file carries the
manifest digest and the relevant configuration in ``#`` header lines.
Outputs contain no timestamps or absolute paths, so identical inputs and
seeds reproduce byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, evaluate, mi as mi_mod, model as model_mod, synth
from .errors import ParseError, TrainingDiverged, ValidationError
from .features import assemble_features, feature_names
from .spiral import SpiralParams
from .symbolic import (parse_performance, parse_score, serialize_performance,
                       serialize_score)
from .targets import TARGET_NAMES, targets as extract_targets
from .tension import WindowConfig, tension_track

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# output plumbing: manifests and headered CSVs


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(value) -> str:
    if isinstance(value, float):  # incl. numpy scalars, which subclass float
        return repr(float(value))
    return str(value)


@dataclass
class OutputFile:
    path: str
    header_items: list  # (key, value) pairs
    body: str  # everything after the # header block


@dataclass
class Manifest:
    """Run description; its digest goes into every output header.

    Only content-derived fields are digested (command, config, seeds,
    input content hashes, output basenames, tool version) -- never
    absolute paths, so reruns in other directories stay byte-identical.
    """

    command: str
    config: dict
    seeds: dict
    inputs: dict = field(default_factory=dict)
    input_paths: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def add_input(self, path: str) -> None:
        self.inputs[os.path.basename(path)] = _sha256_file(path)
        self.input_paths[os.path.basename(path)] = os.path.abspath(path)

    def digest(self, output_names) -> str:
        core = {
            "command": self.command,
            "version": __version__,
            "config": {k: _fmt(v) for k, v in sorted(self.config.items())},
            "seeds": {k: int(v) for k, v in sorted(self.seeds.items())},
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": sorted(output_names),
        }
        blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def emit_outputs(manifest: Manifest, out_dir: str, files: list[OutputFile]) -> str:
    """Write all outputs plus the manifest JSON; returns the digest."""
    os.makedirs(out_dir, exist_ok=True)
    names = [os.path.basename(f.path) for f in files]
    digest = manifest.digest(names)
    for f in files:
        lines = [f"# manifest={digest}", f"# tool=tonaltension {__version__}"]
        lines += [f"# {k}={_fmt(v)}" for k, v in f.header_items]
        _atomic_write(f.path, "\n".join(lines) + "\n" + f.body)
    payload = {
        "command": manifest.command,
        "version": __version__,
        "config": {k: _fmt(v) for k, v in sorted(manifest.config.items())},
        "seeds": {k: int(v) for k, v in sorted(manifest.seeds.items())},
        "inputs": manifest.inputs,
        "input_paths": manifest.input_paths,
        "outputs": names,
        "output_paths": [os.path.abspath(f.path) for f in files],
        "digest": digest,
    }
    _atomic_write(os.path.join(out_dir, f"{manifest.command}.manifest.json"),
                  json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return digest


def csv_body(columns, rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def read_csv(path: str) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Headered CSV -> (metadata dict, column names, string rows)."""
    meta: dict[str, str] = {}
    columns: list[str] = []
    rows: list[list[str]] = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    meta[key.strip()] = value
                continue
            if not columns:
                columns = line.split(",")
            else:
                rows.append(line.split(","))
    return meta, columns, rows


# ---------------------------------------------------------------------------
# corpus loading


def load_corpus(corpus_dir: str) -> list[evaluate.Piece]:
    """Read ``<stem>.features.csv`` / ``<stem>.targets.csv`` pairs."""
    stems = sorted(
        name[:-len(".features.csv")]
        for name in os.listdir(corpus_dir) if name.endswith(".features.csv"))
    pieces = []
    for stem in stems:
        tpath = os.path.join(corpus_dir, f"{stem}.targets.csv")
        if not os.path.exists(tpath):
            log.warning("skipping %s: no targets file", stem)
            continue
        _, fcols, frows = read_csv(os.path.join(corpus_dir, f"{stem}.features.csv"))
        _, tcols, trows = read_csv(tpath)
        if fcols[:2] != ["frame", "beat"] or tcols[:2] != ["frame", "beat"]:
            raise ValidationError(f"{stem}: feature/target CSVs must start with frame,beat")
        f_frames = [int(r[0]) for r in frows]
        t_frames = [int(r[0]) for r in trows]
        if f_frames != t_frames:
            raise ValidationError(f"{stem}: feature and target rows are not aligned")
        names = tuple(fcols[2:])
        target_names = tuple(tcols[2:])
        if target_names != TARGET_NAMES:
            raise ValidationError(f"{stem}: unexpected target columns {target_names}")
        features = np.array([[float(v) for v in r[2:]] for r in frows], dtype=float)
        if features.size == 0:
            features = features.reshape(len(frows), 0)
        targets = np.array([[float(v) for v in r[2:]] for r in trows], dtype=float)
        beats = np.array([float(r[1]) for r in frows])
        pieces.append(evaluate.Piece(stem, beats, features, names, targets))
    if not pieces:
        raise ValidationError(f"no feature/target CSV pairs found in {corpus_dir}")
    return pieces


def corpus_sequences(pieces, columns) -> list[np.ndarray]:
    idx_cache = {}
    out = []
    for p in pieces:
        key = p.feature_names
        if key not in idx_cache:
            idx_cache[key] = [p.feature_names.index(c) for c in columns]
        out.append(p.features[:, idx_cache[key]])
    return out


# ---------------------------------------------------------------------------
# shared flags


def _parse_groups(text: str) -> set[str]:
    groups = {g.strip().upper() for g in text.split(",") if g.strip()}
    unknown = groups - {"P", "M", "T"}
    if unknown:
        raise ValidationError(f"unknown feature groups: {sorted(unknown)}")
    return groups


def _spiral_from_args(args) -> SpiralParams:
    if getattr(args, "spiral_config", None):
        items = {}
        with open(args.spiral_config) as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#") and "=" in line:
                    key, value = line.split("=", 1)
                    items[key.strip()] = value.strip()
        return SpiralParams.from_header_items(items)
    return SpiralParams()


def _window_from_args(args) -> WindowConfig:
    return WindowConfig(width_beats=args.window,
                        include_held=not args.onset_only)


def _train_config(args) -> model_mod.TrainConfig:
    return model_mod.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, seed=args.seed,
        early_stop_patience=args.patience)


def _add_common(p: argparse.ArgumentParser, seed_required: bool = False) -> None:
    p.add_argument("--out-dir", default=".", help="output directory")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel workers across independent pieces/experiments")
    if seed_required:
        p.add_argument("--seed", type=int, required=True,
                       help="random seed (stochastic commands have no default)")


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spiral-config", default=None,
                   help="key=value file overriding the spiral-array calibration")
    p.add_argument("--window", type=float, default=1.0,
                   help="tension cloud window width in beats")
    p.add_argument("--onset-only", action="store_true",
                   help="exclude notes held into the window from clouds")
    p.add_argument("--groups", default="P,M,T", help="feature groups, e.g. P,M,T")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=20)


# ---------------------------------------------------------------------------
# commands


def cmd_extract(args) -> int:
    score_text = open(args.score).read()
    score = parse_score(score_text)
    groups = _parse_groups(args.groups)
    spiral = _spiral_from_args(args)
    window = _window_from_args(args)
    names = feature_names(groups)
    track = tension_track(score, window, spiral) if "T" in groups else None
    rows = assemble_features(score, track, groups)

    stem = os.path.basename(args.score)
    for suffix in (".score.tsv", ".tsv", ".txt"):
        if stem.endswith(suffix):
            stem = stem[:-len(suffix)]
            break

    manifest = Manifest("extract", {
        "groups": ",".join(sorted(groups)), "window": args.window,
        "onset_only": args.onset_only, "piece": stem}, {})
    manifest.add_input(args.score)
    header = ([("piece", stem), ("groups", ",".join(sorted(groups)))]
              + spiral.header_items() + window.header_items())

    files = []
    if args.match:
        manifest.add_input(args.match)
        perf = parse_performance(open(args.match).read(), score)
        target_rows = extract_targets(score, perf)
        surviving = {t.frame_index for t in target_rows}
        rows = [r for r in rows if r.frame_index in surviving]
        files.append(OutputFile(
            os.path.join(args.out_dir, f"{stem}.targets.csv"), list(header),
            csv_body(("frame", "beat") + TARGET_NAMES,
                     [(t.frame_index, t.beat, t.bpr, t.d_bpr, t.vel, t.d_vel)
                      for t in target_rows])))
    files.insert(0, OutputFile(
        os.path.join(args.out_dir, f"{stem}.features.csv"), list(header),
        csv_body(("frame", "beat") + names,
                 [(r.frame_index, r.beat) + r.values for r in rows])))
    emit_outputs(manifest, args.out_dir, files)
    return 0


def cmd_synth(args) -> int:
    cfg = synth.SynthConfig(pieces=args.pieces, frames=args.length,
                            seed=args.seed, rule=args.rule)
    spiral = _spiral_from_args(args)
    window = _window_from_args(args)
    corpus = synth.generate_corpus(cfg, spiral, window)
    manifest = Manifest("synth", {
        "pieces": cfg.pieces, "frames": cfg.frames, "rule": cfg.rule,
        "tempo_gain": cfg.tempo_gain, "noise": cfg.noise,
        "respell_prob": cfg.respell_prob,
        "base_beat_period": cfg.base_beat_period}, {"seed": cfg.seed})
    header = [("rule", cfg.rule)] + spiral.header_items() + window.header_items()
    files = []
    for piece_id, score, perf in corpus:
        files.append(OutputFile(os.path.join(args.out_dir, f"{piece_id}.score.tsv"),
                                list(header), serialize_score(score)))
        files.append(OutputFile(os.path.join(args.out_dir, f"{piece_id}.match.tsv"),
                                list(header), serialize_performance(perf)))
    emit_outputs(manifest, args.out_dir, files)
    return 0


def cmd_mi(args) -> int:
    pieces = load_corpus(args.corpus)
    subset_ids = set(mi_mod.subsample_pieces(
        [p.id for p in pieces], args.fs_fraction, args.fs_seed))
    subset = [p for p in pieces if p.id in subset_ids]
    names = subset[0].feature_names
    for p in subset:
        if p.feature_names != names:
            raise ValidationError(
                f"piece {p.id!r} has feature columns {p.feature_names}, "
                f"expected {names}; re-extract the corpus with one --groups setting")
    feats = np.vstack([p.features for p in subset])
    targs = np.vstack([p.targets for p in subset])
    table = mi_mod.mi_table(feats, names, targs, TARGET_NAMES,
                            k=args.fs_k, seed=args.fs_seed)
    manifest = Manifest("mi", {
        "fs_fraction": args.fs_fraction, "fs_k": args.fs_k,
        "pieces": ",".join(sorted(subset_ids))}, {"fs_seed": args.fs_seed})
    for p in subset:
        manifest.add_input(os.path.join(args.corpus, f"{p.id}.features.csv"))
        manifest.add_input(os.path.join(args.corpus, f"{p.id}.targets.csv"))
    header = [("fs_fraction", args.fs_fraction), ("fs_k", args.fs_k),
              ("subset", ",".join(sorted(subset_ids)))]
    norm = table.normalized()
    files = [
        OutputFile(os.path.join(args.out_dir, "mi_raw.csv"), list(header),
                   csv_body(("feature",) + TARGET_NAMES,
                            [(n,) + tuple(table.values[i]) for i, n in enumerate(names)])),
        OutputFile(os.path.join(args.out_dir, "mi_normalized.csv"), list(header),
                   csv_body(("feature",) + TARGET_NAMES,
                            [(n,) + tuple(norm[i]) for i, n in enumerate(names)])),
    ]
    emit_outputs(manifest, args.out_dir, files)
    return 0


def cmd_train(args) -> int:
    pieces = load_corpus(args.corpus)
    if args.target not in TARGET_NAMES:
        raise ValidationError(f"unknown target {args.target!r}")
    groups = _parse_groups(args.groups)
    columns = feature_names(groups)
    X = corpus_sequences(pieces, columns)
    stacked = np.vstack(X) if columns else np.zeros((1, 0))
    mean, std = evaluate.standardize_stats(stacked)
    t_idx = TARGET_NAMES.index(args.target)
    dataset = [((x - mean) / std, p.targets[:, t_idx]) for x, p in zip(X, pieces)]
    cfg = _train_config(args)
    params, train_log = model_mod.train(dataset, cfg)

    manifest = Manifest("train", {
        "target": args.target, "groups": ",".join(sorted(groups)),
        "lr": args.lr, "epochs": args.epochs, "patience": args.patience},
        {"seed": args.seed})
    for p in pieces:
        manifest.add_input(os.path.join(args.corpus, f"{p.id}.features.csv"))
        manifest.add_input(os.path.join(args.corpus, f"{p.id}.targets.csv"))

    meta = {
        "target": args.target,
        "feature_names": ",".join(columns),
        "feature_mean": ",".join(repr(float(v)) for v in mean),
        "feature_std": ",".join(repr(float(v)) for v in std),
        "seed": str(args.seed),
    }
    files = [
        OutputFile(os.path.join(args.out_dir, args.model_name), [],
                   model_mod.dumps_model(params, meta)),
        OutputFile(
            os.path.join(args.out_dir, "training_log.csv"),
            [("target", args.target), ("groups", ",".join(sorted(groups)))]
            + list(cfg.header_items()),
            csv_body(("epoch", "train_mse", "val_mse"),
                     [(e.epoch, e.train_mse, e.val_mse) for e in train_log])),
    ]
    emit_outputs(manifest, args.out_dir, files)
    return 0


_TABLE_ROWS = (("", "T"), ("P", "PT"), ("M", "MT"), ("PM", "PMT"))


def cmd_eval(args) -> int:
    pieces = load_corpus(args.corpus)
    requested = [t.strip() for t in args.targets.split(",") if t.strip()]
    for t in requested:
        if t not in TARGET_NAMES:
            raise ValidationError(f"unknown target {t!r}")
    cfg = _train_config(args)
    labels = sorted({lbl for pair in _TABLE_ROWS for lbl in pair})
    if args.include_fs:
        labels.append("FS")

    def one(target, label):
        return evaluate.run_cv(pieces, target, label, cfg, seed=args.seed,
                               k=args.folds, fs_fraction=args.fs_fraction,
                               fs_k=args.fs_k, fs_count=args.fs_count)

    results: dict[tuple[str, str], evaluate.EvalResult] = {}
    jobs = [(t, lbl) for t in requested for lbl in labels]
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            for (t, lbl), res in zip(jobs, pool.map(lambda j: one(*j), jobs)):
                results[(t, lbl)] = res
    else:
        for t, lbl in jobs:
            results[(t, lbl)] = one(t, lbl)

    rows = []
    for target in requested:
        for base, plus in _TABLE_ROWS:
            r_base = results[(target, base)]
            r_plus = results[(target, plus)]
            p_value = ""
            effect = ""
            if base:  # significance only between a non-empty set and set+T
                common = sorted(set(r_base.per_piece_r2) & set(r_plus.per_piece_r2))
                a = [r_plus.per_piece_r2[pid] for pid in common]
                b = [r_base.per_piece_r2[pid] for pid in common]
                try:
                    _, p_value, _ = evaluate.paired_t_test(a, b)
                    effect = evaluate.cohens_d(a, b)
                except ValueError as exc:
                    log.warning("t-test degenerate for %s %s: %s", target, base, exc)
            rows.append((target, base or "empty", r_base.mean_r2,
                         r_plus.mean_r2, p_value, effect))
        if args.include_fs:
            rows.append((target, "FS", results[(target, "FS")].mean_r2, "", "", ""))

    manifest = Manifest("eval", {
        "targets": ",".join(requested), "folds": args.folds,
        "include_fs": args.include_fs, "lr": args.lr, "epochs": args.epochs,
        "patience": args.patience, "fs_fraction": args.fs_fraction,
        "fs_k": args.fs_k, "fs_count": args.fs_count}, {"seed": args.seed})
    for p in pieces:
        manifest.add_input(os.path.join(args.corpus, f"{p.id}.features.csv"))
        manifest.add_input(os.path.join(args.corpus, f"{p.id}.targets.csv"))
    header = [("folds", args.folds), ("significance_level", 0.01)] \
        + list(cfg.header_items())
    files = [OutputFile(
        os.path.join(args.out_dir, "results.csv"), header,
        csv_body(("target", "feature_set", "mean_r2", "mean_r2_plus_T",
                  "p_value", "cohens_d"), rows))]
    emit_outputs(manifest, args.out_dir, files)
    return 0


def cmd_sensitivity(args) -> int:
    params, meta = model_mod.load_model(args.model)
    columns = tuple(n for n in meta.get("feature_names", "").split(",") if n)
    if len(columns) != params.input_dim:
        raise ValidationError(
            f"model file lists {len(columns)} features but input_dim is {params.input_dim}")
    if columns and not ("feature_mean" in meta and "feature_std" in meta):
        raise ValidationError("model file lacks feature standardization metadata")
    mean = np.array([float(v) for v in meta["feature_mean"].split(",")]) \
        if columns else np.zeros(0)
    std = np.array([float(v) for v in meta["feature_std"].split(",")]) \
        if columns else np.ones(0)
    pieces = load_corpus(args.corpus)
    sequences = [(x - mean) / std for x in corpus_sequences(pieces, columns)]
    result = evaluate.sensitivity(params, sequences, radius=args.radius)

    manifest = Manifest("sensitivity", {
        "radius": args.radius, "target": meta.get("target", ""),
        "used_positions": result.used_positions,
        "skipped_positions": result.skipped_positions}, {})
    manifest.add_input(args.model)
    for p in pieces:
        manifest.add_input(os.path.join(args.corpus, f"{p.id}.features.csv"))
        manifest.add_input(os.path.join(args.corpus, f"{p.id}.targets.csv"))
    header = [("target", meta.get("target", "")), ("radius", args.radius),
              ("used_positions", result.used_positions),
              ("skipped_positions", result.skipped_positions)]
    rows = [(name, offset, result.matrix[i, j])
            for i, name in enumerate(columns)
            for j, offset in enumerate(result.offsets)]
    files = [OutputFile(os.path.join(args.out_dir, "sensitivity.csv"), header,
                        csv_body(("feature", "offset", "value"), rows))]
    emit_outputs(manifest, args.out_dir, files)
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tonaltension",
        description="Spiral-array tension features and expressive performance modeling")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="compute feature (and target) CSVs for one piece")
    p.add_argument("score", help="path to a .score.tsv file")
    p.add_argument("--match", default=None, help="path to the aligned .match.tsv file")
    _add_feature_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--pieces", type=int, required=True)
    p.add_argument("--length", type=int, required=True, help="frames per piece")
    p.add_argument("--rule", default="t_cd-slow", choices=synth.RULES)
    _add_feature_flags(p)
    _add_common(p, seed_required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mi", help="mutual information between features and targets")
    p.add_argument("--corpus", required=True, help="directory of feature/target CSVs")
    p.add_argument("--fs-fraction", type=float, default=0.2)
    p.add_argument("--fs-k", type=int, default=3)
    p.add_argument("--fs-seed", dest="fs_seed", type=int, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_mi)

    p = sub.add_parser("train", help="train one model on the whole corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--target", required=True, choices=TARGET_NAMES)
    p.add_argument("--groups", default="P,M,T")
    p.add_argument("--model-name", default="model.txt")
    _add_train_flags(p)
    _add_common(p, seed_required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="cross-validation experiments and statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--targets", default=",".join(TARGET_NAMES))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--include-fs", action="store_true",
                   help="add the univariate-selection feature set")
    p.add_argument("--fs-fraction", type=float, default=0.2)
    p.add_argument("--fs-k", type=int, default=3)
    p.add_argument("--fs-count", type=int, default=10)
    _add_train_flags(p)
    _add_common(p, seed_required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sensitivity", help="differential sensitivity of a trained model")
    p.add_argument("--model", required=True, help="model file from the train command")
    p.add_argument("--corpus", required=True)
    p.add_argument("--radius", type=int, default=5)
    _add_common(p)
    p.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
