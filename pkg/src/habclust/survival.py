"""Kaplan-Meier estimation, the two-group log-rank test, risk grouping and
the p-value loss used by the hyper-parameter search.

The p-value loss is a piecewise log transform against a threshold tau: it
is steeply rewarding below tau and mildly penalizing above. As printed it
rewards small p with LARGE values, so for minimization the default
"oriented" form flips the sign (smaller p => smaller loss, monotone across
(0,1)); the raw value stays available everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cohort import SurvivalRecord
from .clustering import kmedoids_fit


@dataclass(eq=False)
class KmCurve:
    event_times: np.ndarray  # ascending distinct death times
    survival_probs: np.ndarray  # S(t) just after each event time
    at_risk: np.ndarray  # risk-set size just before each event time

    def __post_init__(self):
        self.event_times = np.asarray(self.event_times, dtype=np.float64)
        self.survival_probs = np.asarray(self.survival_probs, dtype=np.float64)
        self.at_risk = np.asarray(self.at_risk, dtype=np.int64)
        if np.any(np.diff(self.event_times) <= 0):
            raise ValueError("event times must be strictly ascending")
        if np.any(np.diff(self.survival_probs) > 1e-12):
            raise ValueError("survival probabilities must be non-increasing")

    def median(self) -> float:
        """First time S(t) <= 0.5, +inf when the curve never reaches it."""
        hit = np.flatnonzero(self.survival_probs <= 0.5)
        return float(self.event_times[hit[0]]) if hit.size else math.inf


@dataclass(frozen=True)
class LogRankResult:
    chi_square: float
    p_value: float


def km_fit(records: list[SurvivalRecord]) -> KmCurve:
    """Product-limit estimator; deaths are processed before censorings at
    tied times (a subject censored at t is still at risk at t)."""
    if not records:
        raise ValueError("no survival records")
    times = np.array([r.time for r in records])
    events = np.array([r.event for r in records], dtype=bool)
    death_times = np.unique(times[events])
    surv, probs, at_risk = 1.0, [], []
    for t in death_times:
        n_at_risk = int((times >= t).sum())
        n_deaths = int((events & (times == t)).sum())
        surv *= 1.0 - n_deaths / n_at_risk
        probs.append(surv)
        at_risk.append(n_at_risk)
    return KmCurve(death_times, np.array(probs), np.array(at_risk, dtype=np.int64))


def chi2_sf_1df(x: float) -> float:
    """Upper tail of the chi-square distribution with one degree of freedom.

    Q(1/2, x/2) of the regularized upper incomplete gamma reduces exactly to
    erfc(sqrt(x/2)) for this shape parameter; erfc is accurate to < 1e-15.
    """
    if x < 0:
        raise ValueError("chi-square statistic must be nonnegative")
    return math.erfc(math.sqrt(x / 2.0))


def logrank_test(group_a: list[SurvivalRecord], group_b: list[SurvivalRecord]) -> LogRankResult:
    """Two-sample log-rank test via hypergeometric observed-minus-expected
    sums over the pooled distinct death times."""
    if not group_a or not group_b:
        raise ValueError("both groups must be nonempty")
    times_a = np.array([r.time for r in group_a])
    events_a = np.array([r.event for r in group_a], dtype=bool)
    times_b = np.array([r.time for r in group_b])
    events_b = np.array([r.event for r in group_b], dtype=bool)
    death_times = np.unique(np.concatenate([times_a[events_a], times_b[events_b]]))
    if death_times.size == 0:
        raise ValueError("degenerate log-rank: no observed events")
    u = 0.0
    var = 0.0
    for t in death_times:
        n_a = int((times_a >= t).sum())
        n_b = int((times_b >= t).sum())
        n = n_a + n_b
        d_a = int((events_a & (times_a == t)).sum())
        d_b = int((events_b & (times_b == t)).sum())
        d = d_a + d_b
        u += d_a - d * n_a / n
        if n > 1:
            var += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1)
    if var == 0.0:
        raise ValueError("degenerate log-rank: zero variance")
    chi_square = u * u / var
    return LogRankResult(chi_square=float(chi_square), p_value=chi2_sf_1df(chi_square))


def significance_loss(p: float, tau: float, oriented: bool = True) -> float:
    """Piecewise log p-value loss.

    Raw form: (1/(1-tau)) * ln(tau/p) for p <= tau, -ln(tau/p)/ln(tau)
    above; both branches vanish at p = tau. The raw form DEcreases in p, so
    the oriented form (default) negates it to make small p preferable under
    minimization.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must be inside (0,1), got {p}")
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must be inside (0,1), got {tau}")
    if p <= tau:
        raw = math.log(tau / p) / (1.0 - tau)
    else:
        raw = -math.log(tau / p) / math.log(tau)
    return -raw if oriented else raw


def risk_grouping(features, patient_ids: list[str], records: list[SurvivalRecord],
                  seed: int = 0) -> tuple[np.ndarray, LogRankResult]:
    """Two-medoid grouping of patient feature vectors into high/low risk.

    Feature columns are standardized first; the group with the lower
    Kaplan-Meier median survival is labeled high risk (1). Returns the
    binary labels (1 = high risk) and the between-group log-rank result.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] < 4:
        raise ValueError("need at least 4 patients for risk grouping")
    if features.shape[0] != len(patient_ids) or len(patient_ids) != len(records):
        raise ValueError("features, ids and survival records must align")
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0.0] = 1.0  # constant columns carry no distance information
    standardized = (features - mean) / std
    _, labels = kmedoids_fit(standardized, 2, seed=seed)
    if labels.min() == labels.max():
        raise ValueError("degenerate risk grouping: single group")
    by_id = {r.patient_id: r for r in records}
    group0 = [by_id[pid] for pid, lab in zip(patient_ids, labels) if lab == 0]
    group1 = [by_id[pid] for pid, lab in zip(patient_ids, labels) if lab == 1]
    median0 = km_fit(group0).median()
    median1 = km_fit(group1).median()
    high = 0 if median0 < median1 else 1
    risk_labels = (labels == high).astype(np.int64)
    result = logrank_test(group0, group1)
    return risk_labels, result


def write_km_csv(curves: dict[str, KmCurve], path: str, result: LogRankResult | None = None) -> None:
    """CSV rows time,survival,at_risk,group; the log-rank outcome rides in a
    leading comment so downstream plots can show it without recomputation."""
    with open(path, "w") as fh:
        if result is not None:
            fh.write(
                "# chi_square=%s p_value=%s\n" % ("%.17g" % result.chi_square, "%.17g" % result.p_value)
            )
        fh.write("time,survival,at_risk,group\n")
        for group, curve in curves.items():
            for t, s, n in zip(curve.event_times, curve.survival_probs, curve.at_risk):
                fh.write("%.17g,%.17g,%d,%s\n" % (t, s, n, group))
