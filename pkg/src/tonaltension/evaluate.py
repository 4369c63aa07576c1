"""Cross-validation, scoring, significance tests and the differential
sensitivity analysis.

A corpus here is an ordered list of pieces, each carrying aligned feature
and target matrices (one row per surviving onset frame). Evaluation runs
k-fold cross-validation over pieces: inputs are standardized with
training-fold statistics, one model is trained per fold and target, and
accuracy is the coefficient of determination per test piece.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import betainc

from . import mi as mi_mod
from .features import feature_names as group_feature_names
from .model import ModelParams, TrainConfig, forward, forward_batch, train
from .targets import TARGET_NAMES

log = logging.getLogger(__name__)

FEATURE_SET_LABELS = ("", "P", "M", "T", "PM", "PT", "MT", "PMT", "FS")


@dataclass(frozen=True)
class Piece:
    id: str
    beats: np.ndarray  # (T,)
    features: np.ndarray  # (T, F)
    feature_names: tuple[str, ...]
    targets: np.ndarray  # (T, 4)
    target_names: tuple[str, ...] = TARGET_NAMES


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[str, ...], ...]
    seed: int


@dataclass(frozen=True)
class EvalResult:
    target: str
    feature_set: str
    per_piece_r2: dict[str, float]
    mean_r2: float


def make_folds(piece_ids, k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle, then contiguous split; earlier folds absorb the
    remainder so sizes differ by at most one."""
    ids = list(piece_ids)
    if len(ids) < k:
        raise ValueError(f"need at least {k} pieces for {k} folds, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    folds = tuple(tuple(part) for part in np.array_split(np.array(order, dtype=object), k))
    return FoldPlan(folds, seed)


def r2(predicted, actual) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot."""
    predicted = np.asarray(predicted, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if predicted.size != actual.size:
        raise ValueError(f"length mismatch: {predicted.size} vs {actual.size}")
    if actual.size < 2:
        raise ValueError("r2 needs at least 2 values")
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r2 is undefined for a constant target")
    ss_res = float(np.sum((actual - predicted) ** 2))
    return 1.0 - ss_res / ss_tot


def paired_t_test(a, b) -> tuple[float, float, int]:
    """Two-tailed paired t-test; p via the regularized incomplete beta."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    n = d.size
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ValueError("identical samples: paired differences have zero variance")
    dof = n - 1
    t = float(np.mean(d)) / (sd / np.sqrt(n))
    p = float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
    return t, p, dof


def cohens_d(a, b) -> float:
    """Paired effect size: mean difference over its sample deviation."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.size < 2:
        raise ValueError("effect size needs at least 2 pairs")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ValueError("identical samples: paired differences have zero variance")
    return float(np.mean(d)) / sd


# ---------------------------------------------------------------------------
# cross-validation


def standardize_stats(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and deviation; near-constant features keep scale 1."""
    mean = rows.mean(axis=0) if rows.size else np.zeros(rows.shape[1])
    std = rows.std(axis=0) if rows.size else np.ones(rows.shape[1])
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def _columns(piece: Piece, names) -> np.ndarray:
    idx = []
    for n in names:
        if n not in piece.feature_names:
            raise ValueError(f"piece {piece.id!r} lacks feature column {n!r}")
        idx.append(piece.feature_names.index(n))
    return piece.features[:, idx] if idx else np.zeros((piece.features.shape[0], 0))


def resolve_feature_set(label: str) -> tuple[str, ...]:
    """Canonical column names for a group-combination label such as ``PM``
    (the empty string is the empty feature set). ``FS`` is per target and
    resolved via fs_select instead."""
    if label == "FS":
        raise ValueError("FS must be resolved per target via fs_select")
    return group_feature_names(set(label))


def fs_select(corpus: list[Piece], target: str, seed: int,
              fraction: float = 0.2, k: int = 3, count: int = 10) -> tuple[str, ...]:
    """Univariate selection: top features by MI with the target, estimated
    on a seeded random subset of pieces."""
    names = corpus[0].feature_names
    for p in corpus:
        if p.feature_names != names:
            raise ValueError(f"piece {p.id!r} has feature columns {p.feature_names}, "
                             f"expected {names}")
    subset_ids = mi_mod.subsample_pieces([p.id for p in corpus], fraction, seed)
    subset = [p for p in corpus if p.id in set(subset_ids)]
    feats = np.vstack([p.features for p in subset])
    targs = np.vstack([p.targets for p in subset])
    table = mi_mod.mi_table(feats, names, targs, subset[0].target_names, k=k, seed=seed)
    return tuple(mi_mod.select_features(table, target, min(count, len(names))))


def run_cv(corpus: list[Piece], target: str, feature_set: str, cfg: TrainConfig,
           seed: int, k: int = 5, fs_fraction: float = 0.2, fs_k: int = 3,
           fs_count: int = 10) -> EvalResult:
    """One k-fold cross-validation experiment for (target, feature set)."""
    if target not in TARGET_NAMES:
        raise ValueError(f"unknown target {target!r}")
    if feature_set == "FS":
        columns = fs_select(corpus, target, seed, fs_fraction, fs_k, fs_count)
    else:
        columns = resolve_feature_set(feature_set)
    by_id = {p.id: p for p in corpus}
    t_idx = corpus[0].target_names.index(target)
    plan = make_folds([p.id for p in corpus], k=k, seed=seed)

    per_piece: dict[str, float] = {}
    for fold_i, test_ids in enumerate(plan.folds):
        test_set = set(test_ids)
        train_pieces = [p for p in corpus if p.id not in test_set]
        train_X = [_columns(p, columns) for p in train_pieces]
        mean, std = standardize_stats(
            np.vstack(train_X) if train_X else np.zeros((0, len(columns))))
        dataset = [((X - mean) / std, p.targets[:, t_idx])
                   for X, p in zip(train_X, train_pieces)]
        fold_cfg = replace(cfg, seed=cfg.seed + fold_i)
        params, _ = train(dataset, fold_cfg)
        for pid in test_ids:
            piece = by_id[pid]
            X = (_columns(piece, columns) - mean) / std
            pred = forward(params, X)
            try:
                per_piece[pid] = r2(pred, piece.targets[:, t_idx])
            except ValueError as exc:
                log.warning("piece %r excluded from R2: %s", pid, exc)

    if not per_piece:
        raise ValueError("no piece produced a valid R2 score")
    return EvalResult(target, feature_set or "empty", per_piece,
                      float(np.mean(list(per_piece.values()))))


# ---------------------------------------------------------------------------
# differential sensitivity


@dataclass(frozen=True)
class SensitivityResult:
    matrix: np.ndarray  # (n_features, 2*radius + 1)
    offsets: tuple[int, ...]
    used_positions: int
    skipped_positions: int


def sensitivity(params: ModelParams, sequences, radius: int = 5,
                step: float = 1e-4) -> SensitivityResult:
    """Average local linear response of the model output.

    Cell (f, d) is the mean over pieces and interior times tau of the
    central-difference derivative of the prediction at tau with respect
    to feature f at time tau + d. Positive values mean a larger feature
    value pushes the predicted parameter up (slower tempo / louder).
    Times closer than ``radius`` to either end are skipped and counted.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    n_features = params.input_dim
    offsets = tuple(range(-radius, radius + 1))
    acc = np.zeros((n_features, len(offsets)))
    used = 0
    skipped = 0
    for xs in sequences:
        xs = np.asarray(xs, dtype=float)
        T = xs.shape[0]
        interior = np.arange(radius, T - radius)
        if interior.size == 0:
            skipped += T
            continue
        used += interior.size
        skipped += T - interior.size
        for f in range(n_features):
            batch = np.repeat(xs[None, :, :], 2 * T, axis=0)
            rows = np.arange(T)
            batch[2 * rows, rows, f] += step
            batch[2 * rows + 1, rows, f] -= step
            ys = forward_batch(params, batch)
            dy = (ys[0::2] - ys[1::2]) / (2.0 * step)  # [perturbed s, output tau]
            for col, d in enumerate(offsets):
                acc[f, col] += dy[interior + d, interior].sum()
    if used:
        acc /= used
    return SensitivityResult(acc, offsets, used, skipped)
