"""Exact and rank-based statistics: 2x2 Fisher test, Holm adjustment, AUC/ROC.

Everything here is implemented directly (no statistics library) so the
results can be checked against brute-force rational-arithmetic oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError, UndefinedTestError

# Relative slack when comparing hypergeometric point probabilities in the
# two-sided tail sum; guards float comparison of mathematically equal masses.
POINT_PROB_SLACK = 1e-7

# Log-factorial table, grown on demand and never shrunk. Re-assignment is
# atomic, so concurrent first use at worst recomputes the same values.
_log_fact = np.zeros(1)


def _log_factorials(n: int) -> np.ndarray:
    global _log_fact
    if n >= _log_fact.size:
        start = _log_fact.size
        steps = np.log(np.arange(start, n + 1, dtype=float))
        _log_fact = np.concatenate([_log_fact, _log_fact[-1] + np.cumsum(steps)])
    return _log_fact


@dataclass(frozen=True)
class ContingencyTable:
    """2x2 counts: rows = (black, non-black), columns = (struck, not struck)."""

    a: int  # black, struck
    b: int  # black, not struck
    c: int  # non-black, struck
    d: int  # non-black, not struck

    def __post_init__(self):
        counts = (self.a, self.b, self.c, self.d)
        if any(v < 0 for v in counts):
            raise ValueError(f"negative count in contingency table: {counts}")
        if sum(counts) < 1:
            raise ValueError("contingency table is all zeros")

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d

    def row_sums(self) -> tuple[int, int]:
        return (self.a + self.b, self.c + self.d)

    def col_sums(self) -> tuple[int, int]:
        return (self.a + self.c, self.b + self.d)


def fisher_exact(t: ContingencyTable) -> float:
    """Two-sided Fisher exact p-value for a 2x2 table.

    Sums hypergeometric point probabilities, over all tables with the
    observed margins, that do not exceed the observed table's probability
    (up to a relative slack of ``POINT_PROB_SLACK``).

    Raises UndefinedTestError when a row or column margin is empty.
    """
    r1, r2 = t.row_sums()
    c1, c2 = t.col_sums()
    if min(r1, r2, c1, c2) == 0:
        raise UndefinedTestError(
            f"degenerate margin in table ({t.a}, {t.b}, {t.c}, {t.d})"
        )
    n = t.total
    lf = _log_factorials(n)
    # log P(X = x) for x = count in the (black, struck) cell, margins fixed.
    lo = max(0, c1 - r2)
    hi = min(r1, c1)
    xs = np.arange(lo, hi + 1)
    log_norm = lf[n] - lf[c1] - lf[c2]
    log_pmf = (
        lf[r1] - lf[xs] - lf[r1 - xs]
        + lf[r2] - lf[c1 - xs] - lf[r2 - (c1 - xs)]
        - log_norm
    )
    log_obs = float(log_pmf[t.a - lo])
    threshold = log_obs + math.log1p(POINT_PROB_SLACK)
    p = float(np.exp(log_pmf[log_pmf <= threshold]).sum())
    return min(max(p, 0.0), 1.0)


def holm_adjust(p_values) -> np.ndarray:
    """Holm-Bonferroni step-down adjustment, returned in the input order.

    With p_(1) <= ... <= p_(m), the i-th sorted adjusted value is
    min(1, max_{j<=i} (m - j + 1) * p_(j)).
    """
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1:
        raise ValueError("p_values must be one-dimensional")
    if p.size and (np.min(p) < 0.0 or np.max(p) > 1.0):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.empty(0)
    order = np.argsort(p, kind="mergesort")
    scaled = (m - np.arange(m)) * p[order]
    adjusted_sorted = np.minimum(np.maximum.accumulate(scaled), 1.0)
    adjusted = np.empty(m)
    adjusted[order] = adjusted_sorted
    return adjusted


def _check_binary_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d sequences of equal length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    y = y.astype(int)
    if y.sum() == 0 or y.sum() == y.size:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    return s, y


def auc(scores, labels) -> float:
    """Tie-aware AUC: P(score_pos > score_neg) + 0.5 * P(score_pos = score_neg).

    Computed as the Mann-Whitney statistic via sorting and midranks.
    """
    s, y = _check_binary_labels(scores, labels)
    n = s.size
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(n)
    s_sorted = s[order]
    # Midranks: average 1-based rank within each tie group.
    boundaries = np.flatnonzero(np.diff(s_sorted)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [n]])
    for lo, hi in zip(starts, ends):
        ranks[order[lo:hi]] = 0.5 * (lo + 1 + hi)
    n_pos = int(y.sum())
    n_neg = n - n_pos
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class RocCurve:
    """ROC points from (0,0) to (1,1) plus their trapezoidal area."""

    points: tuple[tuple[float, float], ...]
    auc: float = field(default=0.0)

    def to_csv(self) -> str:
        lines = ["fpr,tpr"]
        lines.extend(f"{fpr!r},{tpr!r}" for fpr, tpr in self.points)
        return "\n".join(lines) + "\n"


def roc_points(scores, labels) -> RocCurve:
    """ROC curve from a threshold sweep over the distinct scores.

    The trapezoid area of the returned points equals ``auc`` on the same
    inputs to within 1e-12.
    """
    s, y = _check_binary_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    order = np.argsort(-s, kind="mergesort")
    s_desc = s[order]
    y_desc = y[order]
    cum_tp = np.cumsum(y_desc)
    cum_fp = np.cumsum(1 - y_desc)
    # Emit one point per distinct score (after its full tie group).
    last_in_group = np.flatnonzero(np.diff(s_desc)) .tolist() + [y.size - 1]
    pts = [(0.0, 0.0)]
    for i in last_in_group:
        pts.append((float(cum_fp[i] / n_neg), float(cum_tp[i] / n_pos)))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return RocCurve(points=tuple(pts), auc=float(area))
