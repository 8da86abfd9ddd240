"""Verification and identification metrics.

Conventions fixed here (the protocol names the metrics without tie rules):
a pair is accepted when score >= threshold; verification accuracy uses a
k-fold protocol with candidate thresholds at midpoints of consecutive
sorted unique scores (plus one candidate below and above everything);
tar_at_far picks the smallest impostor score whose acceptance fraction is
<= far; top-k ranks by cosine similarity with ties broken by gallery index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class ScoreSet:
    """Similarity scores with genuine/impostor labels."""

    scores: np.ndarray
    labels: np.ndarray  # True = genuine

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ContractError("scores and labels must be 1-D and equal length")
        if not np.isfinite(self.scores).all():
            raise ContractError("scores must be finite")

    @property
    def genuine(self):
        return self.scores[self.labels]

    @property
    def impostor(self):
        return self.scores[~self.labels]


@dataclass
class VerificationReport:
    accuracy: float
    thresholds: list
    tar_at_far: dict = field(default_factory=dict)
    rank_k_hit_rate: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "thresholds": list(self.thresholds),
            "tar_at_far": {str(k): v for k, v in self.tar_at_far.items()},
            "rank_k_hit_rate": {str(k): v for k, v in self.rank_k_hit_rate.items()},
            "config": self.config,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ContractError("cosine_similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(a, b):
    """Row-wise cosine similarities between (P, D) and (G, D) stacks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ContractError("cosine_matrix got a zero vector")
    return (a / na) @ (b / nb).T


def _threshold_candidates(scores):
    uniq = np.unique(scores)
    if len(uniq) == 1:
        return np.array([uniq[0] - 1.0, uniq[0] + 1.0])
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    return np.concatenate([[uniq[0] - 1.0], mids, [uniq[-1] + 1.0]])


def _accuracy_at(scores, labels, threshold):
    accept = scores >= threshold
    return float((accept == labels).mean())


def verification_accuracy(s: ScoreSet, n_folds=10):
    """k-fold accuracy: per fold, pick the best threshold on the other
    folds and score the held-out fold. n_folds=1 trains and tests on the
    full set. Returns (mean accuracy, per-fold thresholds)."""
    n = len(s.scores)
    if n_folds < 1:
        raise ContractError("n_folds must be >= 1")
    if len(s.genuine) < n_folds or len(s.impostor) < n_folds:
        raise ContractError(f"need >= {n_folds} genuine and impostor scores")

    folds = np.array_split(np.arange(n), n_folds)
    accs, thresholds = [], []
    for held in folds:
        if len(held) == 0:
            raise ContractError("degenerate empty fold")
        train_mask = np.ones(n, dtype=bool)
        if n_folds > 1:
            train_mask[held] = False
        tr_scores = s.scores[train_mask]
        tr_labels = s.labels[train_mask]
        if tr_labels.all() or not tr_labels.any():
            raise ContractError("degenerate fold: training side has one class")
        cands = _threshold_candidates(tr_scores)
        accs_train = [_accuracy_at(tr_scores, tr_labels, t) for t in cands]
        best = cands[int(np.argmax(accs_train))]
        thresholds.append(float(best))
        accs.append(_accuracy_at(s.scores[held], s.labels[held], best))
    return float(np.mean(accs)), thresholds


def tar_at_far(s: ScoreSet, far):
    """True-accept rate at the threshold where impostor acceptance <= far.

    Threshold candidates are the impostor scores themselves; the smallest
    qualifying score is chosen. If even the largest impostor score accepts
    more than far, the threshold moves just above it.
    """
    if not 0.0 < far <= 1.0:
        raise ContractError("far must lie in (0, 1]")
    imp = s.impostor
    gen = s.genuine
    if len(imp) == 0 or len(gen) == 0:
        raise ContractError("need at least one genuine and one impostor score")
    candidates = np.sort(np.unique(imp))
    for t in candidates:
        if (imp >= t).mean() <= far:
            return float((gen >= t).mean())
    return float((gen > candidates[-1]).mean())


def top_k_hits(probe_embs, probe_labels, gallery_embs, gallery_labels, k):
    """Fraction of probes whose true label appears in the top-k gallery
    matches by cosine similarity (ties broken by gallery index)."""
    gallery_labels = np.asarray(gallery_labels)
    probe_labels = np.asarray(probe_labels)
    if len(gallery_labels) == 0:
        raise ContractError("gallery must be nonempty")
    if not 1 <= k <= len(gallery_labels):
        raise ContractError(f"k must lie in [1, {len(gallery_labels)}]")
    sims = cosine_matrix(probe_embs, gallery_embs)
    hits = 0
    for i in range(sims.shape[0]):
        order = np.argsort(-sims[i], kind="stable")
        hits += probe_labels[i] in gallery_labels[order[:k]]
    return hits / sims.shape[0]
