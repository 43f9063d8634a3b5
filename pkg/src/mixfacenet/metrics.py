"""Verification and identification metrics on similarity scores.

All scores use one polarity: higher means more similar, and a comparison is
accepted when ``score >= threshold``. Thresholds are always realized score
values (or midpoints between them for k-fold accuracy); there is no ROC
interpolation. In ISO/IEC 19795-1 terms TAR corresponds to 1 - FNMR and FAR
to FMR.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .network import METRICS, forward, similarity, similarity_matrix


class PairFileError(ValueError):
    pass


class MissingImageError(KeyError):
    pass


@dataclass
class PairList:
    rows: list  # (id_a, id_b, label) with label 1 = genuine
    folds: Optional[np.ndarray] = None

    def __post_init__(self):
        for a, b, lab in self.rows:
            if lab not in (0, 1):
                raise PairFileError(f"label must be 0 or 1, got {lab!r} for pair ({a}, {b})")
        if self.folds is not None:
            self.folds = np.asarray(self.folds, dtype=np.int64)
            if len(self.folds) != len(self.rows):
                raise PairFileError("fold assignment length differs from row count")
            k = int(self.folds.max()) + 1 if len(self.folds) else 0
            if self.folds.min(initial=0) < 0 or set(self.folds.tolist()) != set(range(k)):
                raise PairFileError("fold indices must cover 0..k-1 with no empty fold")

    @property
    def labels(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows], dtype=np.int64)

    def __len__(self):
        return len(self.rows)


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).reshape(-1)
        self.impostor = np.asarray(self.impostor, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(self.genuine)) and np.all(np.isfinite(self.impostor))):
            raise ValueError("scores must be finite")

    @classmethod
    def from_labels(cls, scores, labels) -> "ScoreSet":
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels)
        return cls(scores[labels == 1], scores[labels == 0])


def tar_at_far(scores: ScoreSet, far_target: float) -> tuple:
    """(tar, threshold) at the smallest realized score whose FAR is <= far_target.

    When no realized score qualifies the threshold is the next float above
    every score, so nothing is accepted.
    """
    if not 0 < far_target < 1:
        raise ValueError(f"far_target must lie in (0, 1), got {far_target}")
    g, imp = scores.genuine, scores.impostor
    if g.size == 0 or imp.size == 0:
        raise ValueError("tar_at_far needs non-empty genuine and impostor scores")
    cand = np.unique(np.concatenate([g, imp]))
    imp_sorted = np.sort(imp)
    far = (imp.size - np.searchsorted(imp_sorted, cand, side="left")) / imp.size
    ok = np.nonzero(far <= far_target)[0]
    if ok.size:
        t = cand[ok[0]]
    else:
        t = np.nextafter(cand[-1], np.inf)
    tar = float(np.count_nonzero(g >= t)) / g.size
    return tar, float(t)


def far_at(scores: ScoreSet, threshold: float) -> float:
    return float(np.count_nonzero(scores.impostor >= threshold)) / scores.impostor.size


def _candidates(scores: np.ndarray) -> np.ndarray:
    u = np.unique(scores)
    mids = (u[:-1] + u[1:]) / 2
    return np.concatenate([[-np.inf], mids, [np.inf]])


def best_threshold(scores, labels) -> tuple:
    """Accuracy-maximizing threshold; ties go to the lowest candidate."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    cand = _candidates(scores)
    order = np.argsort(scores, kind="stable")
    s_sorted, l_sorted = scores[order], labels[order]
    # rejected = scores below t; correct = impostors rejected + genuines accepted
    k = np.searchsorted(s_sorted, cand, side="left")
    imp_below = np.concatenate([[0], np.cumsum(l_sorted == 0)])[k]
    gen_below = np.concatenate([[0], np.cumsum(l_sorted == 1)])[k]
    correct = imp_below + (np.count_nonzero(labels == 1) - gen_below)
    i = int(np.argmax(correct))
    return float(cand[i]), correct[i] / len(scores)


@dataclass
class KFoldResult:
    mean: float
    std: float
    accuracies: np.ndarray
    thresholds: np.ndarray


def sequential_folds(n: int, k: int) -> np.ndarray:
    folds = np.empty(n, dtype=np.int64)
    for f, idx in enumerate(np.array_split(np.arange(n), k)):
        folds[idx] = f
    return folds


def verification_accuracy_kfold(scores, labels, k: int = 10, folds=None) -> KFoldResult:
    """Threshold fitted on k-1 folds, accuracy measured on the held-out fold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(scores)
    if folds is None:
        if k > n:
            raise ValueError(f"k={k} folds for only {n} rows")
        folds = sequential_folds(n, k)
    else:
        folds = np.asarray(folds)
        k = int(folds.max()) + 1
    accs, thrs = [], []
    for f in range(k):
        test = folds == f
        t, _ = best_threshold(scores[~test], labels[~test])
        accs.append(np.mean((scores[test] >= t) == (labels[test] == 1)))
        thrs.append(t)
    accs = np.array(accs)
    return KFoldResult(float(accs.mean()), float(accs.std()), accs, np.array(thrs))


def rank1_identification(probes, probe_ids, gallery, gallery_ids, metric: str = "euclidean",
                         self_index: Optional[Sequence[int]] = None) -> float:
    """Fraction of probes whose most similar gallery entry shares their identity.

    ``self_index[i]`` names the gallery row that is probe ``i`` itself (or
    -1), which is excluded from its search. Ties go to the lowest gallery index.
    """
    gallery = np.asarray(gallery)
    if len(gallery) == 0:
        raise ValueError("empty gallery")
    probe_ids = np.asarray(probe_ids)
    gallery_ids = np.asarray(gallery_ids)
    missing = sorted(set(probe_ids.tolist()) - set(gallery_ids.tolist()))
    if missing:
        raise ValueError(f"open-set probes (identity not in gallery): {missing[:10]}")
    sim = similarity_matrix(probes, gallery, metric)
    if self_index is not None:
        for i, j in enumerate(self_index):
            if j >= 0:
                sim[i, j] = -np.inf
        if len(gallery) < 2:
            raise ValueError("gallery has no entries left after excluding probes")
    best = np.argmax(sim, axis=1)
    return float(np.mean(gallery_ids[best] == probe_ids))


def score_pairs(net, pairs: PairList, images: Callable, metric: str = "euclidean",
                cache: bool = True, threads: Optional[int] = None) -> tuple:
    """Similarity per pair row and the resulting ScoreSet.

    ``images`` maps an id to a normalized (3, h, w) array and raises
    ``KeyError`` for unknown ids.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    ids = list(dict.fromkeys(i for a, b, _ in pairs.rows for i in (a, b)))
    missing = []
    arrays = {}
    for i in ids:
        try:
            arrays[i] = images(i)
        except KeyError:
            missing.append(i)
    if missing:
        raise MissingImageError(f"no image for ids: {missing}")
    if cache:
        emb = forward(net, np.stack([arrays[i] for i in ids]), threads=threads)
        table = dict(zip(ids, emb))
        lookup = table.__getitem__
    else:
        def lookup(i):
            return forward(net, arrays[i][None], threads=1)[0]
    scores = np.array([similarity(lookup(a), lookup(b), metric) for a, b, _ in pairs.rows])
    return ScoreSet.from_labels(scores, pairs.labels), scores


def read_pairs(path) -> PairList:
    rows, folds = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in (3, 4):
            raise PairFileError(f"{path}:{lineno}: expected 'id_a id_b label [fold]', got {line!r}")
        if parts[2] not in ("0", "1"):
            raise PairFileError(f"{path}:{lineno}: label must be 0 or 1, got {parts[2]!r}")
        rows.append((parts[0], parts[1], int(parts[2])))
        if len(parts) == 4:
            try:
                folds.append(int(parts[3]))
            except ValueError:
                raise PairFileError(f"{path}:{lineno}: fold must be an integer") from None
    if folds and len(folds) != len(rows):
        raise PairFileError(f"{path}: fold column present on some rows only")
    return PairList(rows, np.array(folds) if folds else None)


def write_pairs(path, pairs: PairList) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, (a, b, lab) in enumerate(pairs.rows):
            extra = f" {pairs.folds[i]}" if pairs.folds is not None else ""
            f.write(f"{a} {b} {lab}{extra}\n")


def write_scores(path, pairs: PairList, scores) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["id_a", "id_b", "label", "score"])
        for (a, b, lab), s in zip(pairs.rows, scores):
            w.writerow([a, b, lab, repr(float(s))])


def read_scores(path) -> tuple:
    """(PairList, scores) from a score dump CSV."""
    rows, scores = [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"id_a", "id_b", "label", "score"} <= set(reader.fieldnames):
            raise PairFileError(f"{path}: expected header id_a,id_b,label,score")
        for rec in reader:
            if rec["label"] not in ("0", "1"):
                raise PairFileError(f"{path}: label must be 0 or 1, got {rec['label']!r}")
            rows.append((rec["id_a"], rec["id_b"], int(rec["label"])))
            scores.append(float(rec["score"]))
    return PairList(rows), np.array(scores)
