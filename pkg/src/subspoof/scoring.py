"""Per-utterance detection scores, score files, and score-level fusion.

Score files are plain text, one `utterance_id score` line per trial with the
score printed at 6 decimal places; labels travel in a companion
`utterance_id {bonafide|spoof}` file. Fusion combines aligned score sets
either by a plain sum or by a weighted sum whose weights come from logistic
regression on development scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ProtocolError

BONAFIDE = "bonafide"
SPOOF = "spoof"
UNKNOWN = "unknown"
_LABELS = (BONAFIDE, SPOOF, UNKNOWN)


@dataclass
class TrialScores:
    """Labeled detection scores for a set of trials, in a fixed order."""

    ids: list[str]
    scores: np.ndarray
    labels: list[str]
    source: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not (len(self.ids) == len(self.scores) == len(self.labels)):
            raise DataError("ids, scores and labels must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise DataError(f"{self.source or '<scores>'}: duplicate utterance ids")
        if not np.all(np.isfinite(self.scores)):
            raise DataError(f"{self.source or '<scores>'}: non-finite scores")
        for lab in self.labels:
            if lab not in _LABELS:
                raise DataError(f"unknown label {lab!r}")

    def __len__(self) -> int:
        return len(self.ids)

    def bonafide_scores(self) -> np.ndarray:
        return self.scores[np.asarray([l == BONAFIDE for l in self.labels])]

    def spoof_scores(self) -> np.ndarray:
        return self.scores[np.asarray([l == SPOOF for l in self.labels])]

    def id_set(self) -> set[str]:
        return set(self.ids)


def write_scores(t: TrialScores, score_path, label_path=None) -> None:
    score_path = Path(score_path)
    score_path.parent.mkdir(parents=True, exist_ok=True)
    with open(score_path, "w", encoding="utf-8") as fh:
        for utt, s in zip(t.ids, t.scores):
            fh.write(f"{utt} {s:.6f}\n")
    if label_path is not None:
        with open(label_path, "w", encoding="utf-8") as fh:
            for utt, lab in zip(t.ids, t.labels):
                fh.write(f"{utt} {lab}\n")


def read_scores(score_path, label_path=None, source: str = "") -> TrialScores:
    ids: list[str] = []
    scores: list[float] = []
    with open(score_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ProtocolError(f"{score_path}:{lineno}: expected 'utterance_id score'")
            ids.append(parts[0])
            try:
                scores.append(float(parts[1]))
            except ValueError:
                raise ProtocolError(f"{score_path}:{lineno}: bad score {parts[1]!r}")
    labels = [UNKNOWN] * len(ids)
    if label_path is not None:
        table = read_labels(label_path)
        labels = []
        for utt in ids:
            if utt not in table:
                raise ProtocolError(f"{label_path}: missing label for {utt!r}")
            labels.append(table[utt])
    return TrialScores(ids=ids, scores=np.asarray(scores), labels=labels,
                       source=source or str(score_path))


def read_labels(label_path) -> dict[str, str]:
    table: dict[str, str] = {}
    with open(label_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1] not in (BONAFIDE, SPOOF):
                raise ProtocolError(f"{label_path}:{lineno}: expected 'utterance_id bonafide|spoof'")
            if parts[0] in table:
                raise ProtocolError(f"{label_path}:{lineno}: duplicate id {parts[0]!r}")
            table[parts[0]] = parts[1]
    return table


def _align(score_sets: list[TrialScores]) -> tuple[list[str], np.ndarray, list[str]]:
    """Check id alignment and return (ids, score matrix n_trials x n_systems, labels)."""
    if not score_sets:
        raise DataError("no score sets given")
    ref = score_sets[0]
    for other in score_sets[1:]:
        if other.id_set() != ref.id_set():
            missing = sorted(ref.id_set() - other.id_set())
            extra = sorted(other.id_set() - ref.id_set())
            raise DataError(
                f"utterance id mismatch between {ref.source!r} and {other.source!r}: "
                f"only in first: {missing[:5]}; only in second: {extra[:5]}"
            )
    order = {utt: i for i, utt in enumerate(ref.ids)}
    mat = np.empty((len(ref), len(score_sets)))
    labels = list(ref.labels)
    for j, ts in enumerate(score_sets):
        for utt, s, lab in zip(ts.ids, ts.scores, ts.labels):
            i = order[utt]
            mat[i, j] = s
            if lab != UNKNOWN:
                if labels[i] == UNKNOWN:
                    labels[i] = lab
                elif labels[i] != lab:
                    raise DataError(f"conflicting labels for {utt!r}: {labels[i]} vs {lab}")
    return list(ref.ids), mat, labels


def fuse_linear(score_sets: list[TrialScores]) -> TrialScores:
    """Plain per-utterance sum of the systems' scores."""
    ids, mat, labels = _align(score_sets)
    fused = mat.sum(axis=1)
    name = "ls(" + "+".join(ts.source or "?" for ts in score_sets) + ")"
    return TrialScores(ids=ids, scores=fused, labels=labels, source=name)


@dataclass
class FusionWeights:
    """Per-system weights plus an additive offset for weighted-sum fusion."""

    weights: np.ndarray
    offset: float
    converged: bool = True
    n_iter: int = 0
    grad_norm: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.offset):
            raise DataError("non-finite fusion weights")

    def save(self, path, manifest: dict | None = None) -> None:
        payload = {
            "weights": [float(w) for w in self.weights],
            "offset": float(self.offset),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
            "grad_norm": float(self.grad_norm),
            "manifest": manifest or {},
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "FusionWeights":
        payload = json.loads(Path(path).read_text())
        return cls(
            weights=np.asarray(payload["weights"]),
            offset=float(payload["offset"]),
            converged=bool(payload.get("converged", True)),
            n_iter=int(payload.get("n_iter", 0)),
            grad_norm=float(payload.get("grad_norm", 0.0)),
        )


def _balanced_logistic_objective(
    b: float, w: np.ndarray, mat: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, float, np.ndarray]:
    """Value and gradient of the class-balanced, L2-penalized log-likelihood.

    Each class contributes with effective prior 0.5 regardless of its trial
    count; the penalty applies to the weights only, not the offset.
    """
    z = b + mat @ w
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    # log sigma(z) = -log(1 + e^-z); log(1 - sigma(z)) = -log(1 + e^z)
    ll_pos = -np.logaddexp(0.0, -z[y == 1]).mean()
    ll_neg = -np.logaddexp(0.0, z[y == 0]).mean()
    value = 0.5 * ll_pos + 0.5 * ll_neg - l2 * float(w @ w)
    p = 1.0 / (1.0 + np.exp(-z))
    resid = np.where(y == 1, (1.0 - p) * (0.5 / n_pos), -p * (0.5 / n_neg))
    grad_w = mat.T @ resid - 2.0 * l2 * w
    grad_b = float(resid.sum())
    return value, grad_b, grad_w


def fit_wls(
    dev_sets: list[TrialScores],
    l2: float = 1e-3,
    tol: float = 1e-6,
    max_iter: int = 10_000,
) -> FusionWeights:
    """Fit fusion weights by full-batch gradient ascent on labeled dev scores.

    Maximizes the balanced binary log-likelihood of sigmoid(offset + S @ w)
    with L2 strength `l2` on the weights. Stops when the gradient norm drops
    below `tol` or after `max_iter` iterations. Backtracking on the step size
    keeps the objective monotone.
    """
    ids, mat, labels = _align(dev_sets)
    y = np.asarray([1 if lab == BONAFIDE else 0 for lab in labels])
    known = np.asarray([lab != UNKNOWN for lab in labels])
    if not known.all():
        raise DataError("dev score sets must be fully labeled for weight fitting")
    if y.sum() == 0 or y.sum() == len(y):
        raise DataError("dev data must contain both bonafide and spoof trials")

    w = np.zeros(mat.shape[1])
    b = 0.0
    step = 1.0
    value, gb, gw = _balanced_logistic_objective(b, w, mat, y, l2)
    n_iter = 0
    grad_norm = float(np.sqrt(gb * gb + gw @ gw))
    while grad_norm >= tol and n_iter < max_iter:
        # Armijo backtracking; step grows again after successful moves.
        while True:
            b_new = b + step * gb
            w_new = w + step * gw
            v_new, gb_new, gw_new = _balanced_logistic_objective(b_new, w_new, mat, y, l2)
            if v_new >= value + 1e-4 * step * grad_norm**2:
                break
            step *= 0.5
            if step < 1e-16:
                b_new, w_new, v_new, gb_new, gw_new = b, w, value, gb, gw
                break
        b, w, value, gb, gw = b_new, w_new, v_new, gb_new, gw_new
        step = min(step * 1.25, 1e6)
        grad_norm = float(np.sqrt(gb * gb + gw @ gw))
        n_iter += 1

    return FusionWeights(
        weights=w, offset=b, converged=grad_norm < tol, n_iter=n_iter, grad_norm=grad_norm
    )


def fuse_wls(score_sets: list[TrialScores], w: FusionWeights) -> TrialScores:
    """Weighted per-utterance sum: offset + sum_i w_i * s_i."""
    if len(score_sets) != len(w.weights):
        raise DataError(
            f"got {len(score_sets)} score sets but {len(w.weights)} weights"
        )
    ids, mat, labels = _align(score_sets)
    fused = w.offset + mat @ w.weights
    name = "wls(" + "+".join(ts.source or "?" for ts in score_sets) + ")"
    return TrialScores(ids=ids, scores=fused, labels=labels, source=name)


def score_corpus(model, manifest, partition: str, batch_size: int = 64) -> tuple[TrialScores, list[str]]:
    """Score every utterance of a corpus partition with a trained model.

    Returns the scores plus a list of rejected utterance ids (missing or
    unreadable audio). The model decides which bands it consumes; see
    :func:`subspoof.models.model_scores`.
    """
    from . import corpus as corpus_mod
    from . import models as models_mod

    feats = corpus_mod.partition_features(manifest, partition)
    scores = models_mod.model_scores(model, feats.features, batch_size=batch_size)
    return (
        TrialScores(ids=feats.ids, scores=scores, labels=feats.labels, source=partition),
        feats.rejects,
    )
