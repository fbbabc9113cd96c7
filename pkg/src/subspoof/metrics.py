"""Detection metrics: equal error rate and minimum normalized tandem cost.

Decision convention, shared by every function here (and by the test
oracles): a trial is accepted as bonafide when its score is greater than or
equal to the threshold. The error curve has one operating point per distinct
score plus a +inf sentinel; the point at the minimum score carries
(far, frr) = (1, 0), so the curve endpoints are (1, 0) and (0, 1).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import DataError, ProtocolError
from .scoring import TrialScores


@dataclass
class ErrorCurve:
    """Operating points of a binary detector, ascending in threshold."""

    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray


def _error_curve_arrays(bonafide: np.ndarray, spoof: np.ndarray) -> ErrorCurve:
    bonafide = np.asarray(bonafide, dtype=np.float64)
    spoof = np.asarray(spoof, dtype=np.float64)
    if bonafide.size == 0 or spoof.size == 0:
        raise DataError("both classes must be present to compute error rates")
    distinct = np.unique(np.concatenate([bonafide, spoof]))
    thresholds = np.concatenate([distinct, [np.inf]])
    bona_sorted = np.sort(bonafide)
    spoof_sorted = np.sort(spoof)
    # accept iff score >= threshold
    frr = np.searchsorted(bona_sorted, thresholds, side="left") / bonafide.size
    far = (spoof.size - np.searchsorted(spoof_sorted, thresholds, side="left")) / spoof.size
    return ErrorCurve(thresholds=thresholds, far=far, frr=frr)


def compute_error_curve(t: TrialScores) -> ErrorCurve:
    return _error_curve_arrays(t.bonafide_scores(), t.spoof_scores())


def _eer_from_curve(curve: ErrorCurve) -> tuple[float, float]:
    """EER and its threshold via linear interpolation at the far/frr crossing."""
    d = curve.far - curve.frr
    exact = np.flatnonzero(d == 0.0)
    if exact.size:
        i = int(exact[0])
        return float(curve.far[i]), float(curve.thresholds[i])
    # d is non-increasing from +1 to -1; find the sign change.
    below = np.flatnonzero(d < 0.0)
    i = int(below[0]) - 1
    t_star = d[i] / (d[i] - d[i + 1])
    eer = curve.far[i] + t_star * (curve.far[i + 1] - curve.far[i])
    thr_hi = curve.thresholds[i + 1]
    if np.isinf(thr_hi):
        threshold = float(curve.thresholds[i])
    else:
        threshold = float(curve.thresholds[i] + t_star * (thr_hi - curve.thresholds[i]))
    return float(eer), threshold


def eer_from_arrays(bonafide: np.ndarray, spoof: np.ndarray) -> float:
    eer, _ = _eer_from_curve(_error_curve_arrays(bonafide, spoof))
    return eer


def compute_eer(t: TrialScores) -> float:
    """Equal error rate in [0, 1]."""
    return eer_from_arrays(t.bonafide_scores(), t.spoof_scores())


@dataclass
class AsvScoreSet:
    """Verification scores for target, nontarget and spoof trials."""

    ids: list[str]
    trial_types: list[str]
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        for tt in self.trial_types:
            if tt not in ("target", "nontarget", "spoof"):
                raise ProtocolError(f"unknown ASV trial type {tt!r}")

    def of_type(self, trial_type: str) -> np.ndarray:
        mask = np.asarray([tt == trial_type for tt in self.trial_types])
        return self.scores[mask]


def read_asv_scores(path) -> AsvScoreSet:
    """Parse an ASV score file with `utterance_id trial_type score` lines."""
    ids, types, scores = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ProtocolError(f"{path}:{lineno}: expected 'utterance_id trial_type score'")
            ids.append(parts[0])
            types.append(parts[1])
            try:
                scores.append(float(parts[2]))
            except ValueError:
                raise ProtocolError(f"{path}:{lineno}: bad score {parts[2]!r}")
    return AsvScoreSet(ids=ids, trial_types=types, scores=np.asarray(scores))


def asv_operating_rates(a: AsvScoreSet) -> tuple[float, float, float]:
    """ASV miss/false-alarm/spoof-miss rates at the ASV EER threshold.

    The threshold is the operating point of the target-vs-nontarget error
    curve where |far - frr| is smallest (first such point on ties); all three
    rates are then measured at that fixed threshold.
    """
    target = a.of_type("target")
    nontarget = a.of_type("nontarget")
    spoof = a.of_type("spoof")
    if target.size == 0 or nontarget.size == 0 or spoof.size == 0:
        raise DataError("ASV score set must contain target, nontarget and spoof trials")
    curve = _error_curve_arrays(target, nontarget)
    i = int(np.argmin(np.abs(curve.far - curve.frr)))
    thr = curve.thresholds[i]
    p_miss_asv = float(np.mean(target < thr))
    p_fa_asv = float(np.mean(nontarget >= thr))
    p_miss_spoof_asv = float(np.mean(spoof < thr))
    return p_miss_asv, p_fa_asv, p_miss_spoof_asv


@dataclass(frozen=True)
class TdcfParams:
    """Costs, priors and fixed ASV rates for the tandem detection cost.

    The cost and prior defaults follow the ASVspoof 2019 evaluation
    convention; they are configuration, not measured values, and every
    report embeds `params_hash` so results remain traceable to them.
    """

    cost_miss_asv: float = 1.0
    cost_fa_asv: float = 10.0
    cost_miss_cm: float = 1.0
    cost_fa_cm: float = 10.0
    prior_target: float = 0.9405
    prior_nontarget: float = 0.0095
    prior_spoof: float = 0.05
    asv_rates: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        priors = self.prior_target + self.prior_nontarget + self.prior_spoof
        if abs(priors - 1.0) > 1e-9:
            raise DataError(f"priors must sum to 1, got {priors}")
        for c in (self.cost_miss_asv, self.cost_fa_asv, self.cost_miss_cm, self.cost_fa_cm):
            if c <= 0:
                raise DataError("costs must be positive")
        for r in self.asv_rates:
            if not (0.0 <= r <= 1.0):
                raise DataError(f"ASV rates must lie in [0, 1], got {self.asv_rates}")

    def coefficients(self) -> tuple[float, float]:
        """CM-miss and CM-false-alarm cost coefficients at the ASV operating point."""
        p_miss_asv, p_fa_asv, p_miss_spoof_asv = self.asv_rates
        c1 = self.prior_target * (self.cost_miss_cm - self.cost_miss_asv * p_miss_asv) \
            - self.prior_nontarget * self.cost_fa_asv * p_fa_asv
        c2 = self.cost_fa_cm * self.prior_spoof * (1.0 - p_miss_spoof_asv)
        return c1, c2

    def params_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_asv(self, asv: AsvScoreSet) -> "TdcfParams":
        return TdcfParams(
            cost_miss_asv=self.cost_miss_asv,
            cost_fa_asv=self.cost_fa_asv,
            cost_miss_cm=self.cost_miss_cm,
            cost_fa_cm=self.cost_fa_cm,
            prior_target=self.prior_target,
            prior_nontarget=self.prior_nontarget,
            prior_spoof=self.prior_spoof,
            asv_rates=asv_operating_rates(asv),
        )


def min_tdcf_from_arrays(bonafide: np.ndarray, spoof: np.ndarray, p: TdcfParams) -> float:
    c1, c2 = p.coefficients()
    if c1 <= 0 or c2 <= 0:
        raise DataError(
            f"degenerate ASV operating point: cost coefficients ({c1:.6g}, {c2:.6g}) "
            "must both be positive"
        )
    curve = _error_curve_arrays(bonafide, spoof)
    costs = c1 * curve.frr + c2 * curve.far
    return float(costs.min() / min(c1, c2))


def min_tdcf(cm: TrialScores, p: TdcfParams) -> float:
    """Minimum over CM thresholds of the normalized tandem detection cost."""
    return min_tdcf_from_arrays(cm.bonafide_scores(), cm.spoof_scores(), p)


def metrics_report(
    cm: TrialScores, params: TdcfParams | None = None
) -> dict:
    """EER (and min t-DCF when ASV params are given) as a report dict."""
    bona = cm.bonafide_scores()
    spoof = cm.spoof_scores()
    report = {
        "eer_percent": 100.0 * eer_from_arrays(bona, spoof),
        "min_tdcf": None,
        "n_bonafide": int(bona.size),
        "n_spoof": int(spoof.size),
        "params_hash": None,
    }
    if params is not None:
        report["min_tdcf"] = min_tdcf_from_arrays(bona, spoof, params)
        report["params_hash"] = params.params_hash()
    return report


def write_report(report: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))
