"""FairMatch: per-group decision thresholds for rows PSM could not match.

On the unmatched rows, privileged scores are shifted down by ``theta_priv``
and unprivileged scores up by ``theta_unpriv``.  The pair chosen from the grid
is the one whose shifted samples look most alike under Welch's t-test (largest
p-value), then the one with the smallest total shift, then the smallest
``theta_priv``.  Matched rows keep the default 0.5 threshold.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .dataio import SplitPair
from .psm import MatchConfig, MatchResult, match, propensity_scores
from .stats import welch_from_moments

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
# p-values closer than this are treated as equal when picking the maximiser
P_TIE_TOL = 1e-12


class DegenerateGroupWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GroupScoreSummary:
    mean: float
    variance: float
    count: int

    @classmethod
    def of(cls, scores) -> "GroupScoreSummary":
        s = np.asarray(scores, dtype=float)
        return cls(float(s.mean()), float(s.var(ddof=1)) if len(s) > 1 else 0.0, len(s))


@dataclass(frozen=True)
class ThresholdPair:
    theta_priv: float
    theta_unpriv: float
    p_value: float
    grid_step: float = 0.01

    @property
    def objective_dist(self) -> float:
        return abs(self.theta_priv) + abs(self.theta_unpriv)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objective_dist"] = self.objective_dist
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdPair":
        return cls(float(d["theta_priv"]), float(d["theta_unpriv"]), float(d["p_value"]), float(d.get("grid_step", 0.01)))


IDENTITY = ThresholdPair(0.0, 0.0, 1.0)


def theta_grid(grid_step: float) -> np.ndarray:
    if not 0 < grid_step <= 1:
        raise ValueError("grid_step must be in (0, 1]")
    n = int(np.floor(1.0 / grid_step + 1e-9))
    return np.round(np.arange(n + 1) * grid_step, 12)


def _clipped_moments(scores: np.ndarray, shifts: np.ndarray):
    shifted = np.clip(scores[None, :] + shifts[:, None], 0.0, 1.0)
    return shifted.mean(axis=1), shifted.var(axis=1, ddof=1)


def pvalue_surface(ps_priv, ps_unpriv, grid_step: float = 0.01):
    """Welch p-value for every (theta_priv, theta_unpriv) on the grid.

    Returns ``(grid, P)`` with ``P[i, j]`` the p-value for privileged scores
    minus ``grid[i]`` against unprivileged scores plus ``grid[j]`` (both
    clipped to [0, 1]).
    """
    a = np.asarray(ps_priv, dtype=float)
    b = np.asarray(ps_unpriv, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two scores")
    grid = theta_grid(grid_step)
    ma, va = _clipped_moments(a, -grid)
    mb, vb = _clipped_moments(b, grid)
    _, _, p = welch_from_moments(ma[:, None], va[:, None], len(a), mb[None, :], vb[None, :], len(b))
    return grid, p


def select_thresholds(grid: np.ndarray, p: np.ndarray) -> tuple[int, int]:
    """Lexicographic optimum: max p (within P_TIE_TOL), then min i + j, then min i."""
    best = p.max()
    i, j = np.nonzero(p >= best - P_TIE_TOL)
    key = np.lexsort((i, i + j))
    return int(i[key[0]]), int(j[key[0]])


def threshold_search(ps_priv, ps_unpriv, grid_step: float = 0.01) -> ThresholdPair:
    grid, p = pvalue_surface(ps_priv, ps_unpriv, grid_step)
    i, j = select_thresholds(grid, p)
    return ThresholdPair(float(grid[i]), float(grid[j]), float(p[i, j]), float(grid_step))


def calibrated_predict(
    scores,
    pa,
    match_result: MatchResult,
    thresholds: ThresholdPair,
    row_ids=None,
) -> np.ndarray:
    """Hard labels: 0.5 threshold on matched rows, shifted thresholds elsewhere."""
    s = np.asarray(scores, dtype=float)
    g = np.asarray(pa, dtype=np.int8)
    ids = np.arange(len(s)) if row_ids is None else np.asarray(row_ids, dtype=np.int64)
    if not (len(s) == len(g) == len(ids)):
        raise ValueError("scores, pa and row ids must be aligned")
    known = set(match_result.matched_ids) | set(match_result.unmatched_ids)
    if known != set(ids.tolist()):
        raise ValueError("match result does not cover exactly these row ids")
    unmatched = np.isin(ids, np.asarray(match_result.unmatched_ids, dtype=np.int64))
    threshold = np.full(len(s), DEFAULT_THRESHOLD)
    threshold[unmatched & (g == 1)] = DEFAULT_THRESHOLD + thresholds.theta_priv
    threshold[unmatched & (g == 0)] = DEFAULT_THRESHOLD - thresholds.theta_unpriv
    return (s > threshold).astype(np.int8)


def default_predict(scores) -> np.ndarray:
    return (np.asarray(scores, dtype=float) > DEFAULT_THRESHOLD).astype(np.int8)


def unmatched_group_scores(scores, pa, row_ids, match_result: MatchResult):
    ids = np.asarray(row_ids, dtype=np.int64)
    unmatched = np.isin(ids, np.asarray(match_result.unmatched_ids, dtype=np.int64))
    s = np.asarray(scores, dtype=float)
    g = np.asarray(pa)
    return s[unmatched & (g == 1)], s[unmatched & (g == 0)]


def fit_fairmatch(
    model,
    split: SplitPair,
    match_cfg: Optional[MatchConfig] = None,
    grid_step: float = 0.01,
    propensity_model=None,
) -> tuple[ThresholdPair, MatchResult]:
    """Match the test rows, then search thresholds on the unmatched scores.

    ``propensity_model`` defaults to ``model``.  Too few unmatched rows in a
    group yields identity thresholds with a warning.
    """
    match_cfg = match_cfg or MatchConfig()
    test = split.test
    pm = propensity_model or model
    ps = propensity_scores(pm, test)
    result = match(ps, test.pa, match_cfg, features=test.features if match_cfg.distance_mode == "euclidean" else None)
    priv, unpriv = unmatched_group_scores(ps.scores, test.pa, test.row_ids, result)
    if len(priv) < 2 or len(unpriv) < 2:
        warnings.warn(
            f"unmatched groups too small ({len(priv)}, {len(unpriv)}); using identity thresholds",
            DegenerateGroupWarning,
            stacklevel=2,
        )
        return ThresholdPair(0.0, 0.0, 1.0, grid_step), result
    return threshold_search(priv, unpriv, grid_step), result


def certificate(thresholds: ThresholdPair, result: MatchResult, match_cfg: MatchConfig, **meta) -> str:
    """JSON document that, with the saved model, pins down calibrated predictions."""
    doc = {
        "thresholds": thresholds.to_dict(),
        "match_config": asdict(match_cfg),
        "match": result.to_dict(),
        "default_threshold": DEFAULT_THRESHOLD,
        **meta,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def read_certificate(text: str) -> tuple[ThresholdPair, MatchResult, MatchConfig]:
    doc = json.loads(text)
    return (
        ThresholdPair.from_dict(doc["thresholds"]),
        MatchResult.from_dict(doc["match"]),
        MatchConfig(**doc["match_config"]),
    )
