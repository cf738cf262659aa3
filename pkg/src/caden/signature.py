"""Cross-validated risk-score signature: interaction screens, scores, 2-means split.

A risk score is the sum of a patient's covariates weighted by per-covariate
treatment-interaction estimates. Scores are split into two clusters; the cluster
with the higher mean is called sensitive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .records import Cohort, as_cohort
from .stats_core import fit_arm_interactions

logger = logging.getLogger(__name__)

SENSITIVE = 1
NON_SENSITIVE = 0
DEFAULT_FOLDS = 10


@dataclass
class InteractionEstimates:
    betas: np.ndarray
    converged: np.ndarray  # per covariate; False means beta was zeroed
    constant: np.ndarray  # covariates with no variation in the training data


@dataclass
class KMeans2Result:
    labels: np.ndarray  # 1 = higher-mean cluster
    mean_low: float
    mean_high: float
    degenerate: bool = False


@dataclass
class RiskScoreAssignment:
    scores: np.ndarray
    labels: np.ndarray  # 1 = sensitive
    mean_sensitive: float
    mean_nonsensitive: float
    degenerate: bool = False
    folds: Optional[np.ndarray] = None
    n_failed_folds: int = 0


@dataclass
class SignatureModel:
    """Frozen model M: interaction weights plus the two cluster means."""

    betas: np.ndarray
    m_S: float
    m_N: float
    usable: bool = True
    reason: str = ""
    training_labels: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "betas": [float(b) for b in self.betas],
            "m_S": float(self.m_S),
            "m_N": float(self.m_N),
            "usable": bool(self.usable),
            "reason": self.reason,
        }


def _interaction_design(treatment, X):
    n, P = X.shape
    t = treatment.astype(float)
    Z = np.empty((P, n, 4))
    Z[:, :, 0] = 1.0
    Z[:, :, 1] = t
    Z[:, :, 2] = X.T
    Z[:, :, 3] = X.T * t
    return Z


def fit_interactions(training) -> InteractionEstimates:
    """Per-covariate ``logit p = mu + lambda t + alpha_j x_j + beta_j t x_j`` fits."""
    cohort = as_cohort(training)
    if not cohort.has_responses:
        raise ValueError("training patients need observed responses")
    t = cohort.treatment
    if t.min() == t.max():
        raise ValueError("training data must contain both arms")
    X = cohort.covariates
    P = X.shape[1]
    constant = np.ptp(X, axis=0) == 0 if len(cohort) else np.ones(P, dtype=bool)
    betas = np.zeros(P)
    converged = np.zeros(P, dtype=bool)
    cols = np.flatnonzero(~constant)
    if cols.size:
        fits = fit_arm_interactions(t, X[:, cols], cohort.response)
        ok = fits.converged
        betas[cols[ok]] = fits.coefficients[ok, 3]
        converged[cols[ok]] = True
    return InteractionEstimates(betas, converged, constant)


def estimate_interaction_betas(training) -> np.ndarray:
    """Interaction coefficient per covariate; non-converged or constant ones are 0."""
    return fit_interactions(training).betas


def compute_risk_scores(patients, betas) -> np.ndarray:
    X = patients.covariates if isinstance(patients, Cohort) else np.asarray(patients, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    betas = np.asarray(betas, dtype=float)
    if X.shape[1] != betas.shape[0]:
        raise ValueError(f"{X.shape[1]} covariates but {betas.shape[0]} betas")
    return X @ betas


def kmeans2_1d(scores) -> KMeans2Result:
    """Optimal two-cluster k-means split of 1-D data.

    In one dimension the optimal 2-means partition is a threshold split of the
    sorted values, so every admissible split is scanned with prefix sums and the
    one with the smallest within-cluster sum of squares wins (first one on
    ties). Splits are only placed between distinct values.
    """
    x = np.asarray(scores, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two scores to cluster")
    order = np.argsort(x, kind="stable")
    s = x[order]
    if s[0] == s[-1]:
        return KMeans2Result(np.zeros(x.size, dtype=np.int8), float(s[0]), float(s[0]), degenerate=True)

    c = s - s.mean()
    n = c.size
    cs = np.cumsum(c)
    cs2 = np.cumsum(c * c)
    k = np.arange(1, n)
    left = cs2[:-1] - cs[:-1] ** 2 / k
    right = (cs2[-1] - cs2[:-1]) - (cs[-1] - cs[:-1]) ** 2 / (n - k)
    sse = left + right
    sse[s[1:] == s[:-1]] = np.inf
    split = int(np.argmin(sse)) + 1

    labels = np.zeros(n, dtype=np.int8)
    labels[order[split:]] = 1
    return KMeans2Result(labels, float(s[:split].mean()), float(s[split:].mean()))


def stratified_folds(treatment, n_folds: int, rng) -> np.ndarray:
    """Fold index per patient, dealt round-robin within each arm after shuffling."""
    treatment = np.asarray(treatment)
    folds = np.empty(treatment.size, dtype=int)
    for arm in (0, 1):
        idx = np.flatnonzero(treatment == arm)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = np.arange(idx.size) % n_folds
    return folds


def cvrs_analyze(patients, n_folds: int = DEFAULT_FOLDS, rng_seed=None) -> RiskScoreAssignment:
    """Cross-validated risk scores clustered into sensitive / non-sensitive.

    Each patient is scored by betas estimated without their fold. A fold whose
    training part cannot be fitted contributes all-zero betas.
    """
    cohort = as_cohort(patients)
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    if not cohort.has_responses:
        raise ValueError("cross-validated scoring needs observed responses")
    rng = np.random.default_rng(rng_seed)
    folds = stratified_folds(cohort.treatment, n_folds, rng)
    scores = np.zeros(len(cohort))
    failed = 0
    for k in range(n_folds):
        test = folds == k
        if not test.any():
            continue
        train = cohort.subset(~test)
        if len(train) < 4 or train.treatment.min() == train.treatment.max():
            failed += 1
            continue
        betas = estimate_interaction_betas(train)
        scores[test] = compute_risk_scores(cohort.covariates[test], betas)
    if failed:
        logger.debug("%d of %d folds could not be fitted", failed, n_folds)

    km = kmeans2_1d(scores)
    return RiskScoreAssignment(
        scores=scores,
        labels=km.labels,
        mean_sensitive=km.mean_high,
        mean_nonsensitive=km.mean_low,
        degenerate=km.degenerate,
        folds=folds,
        n_failed_folds=failed,
    )


def fit_signature_model(patients) -> SignatureModel:
    """Whole-data signature (no cross-validation) to classify future patients."""
    cohort = as_cohort(patients)
    betas = estimate_interaction_betas(cohort)
    if not np.any(betas):
        return SignatureModel(betas, 0.0, 0.0, usable=False, reason="all interaction estimates are zero")
    km = kmeans2_1d(compute_risk_scores(cohort, betas))
    if km.degenerate:
        return SignatureModel(betas, km.mean_high, km.mean_low, usable=False, reason="risk scores are all identical")
    return SignatureModel(betas, km.mean_high, km.mean_low, training_labels=km.labels)


def predict_sensitivity(model: SignatureModel, covariates, rule: str = "absolute"):
    """Classify patients as sensitive (1) or not (0) under a frozen model.

    ``rule="absolute"`` calls a patient sensitive when their score is strictly
    closer to ``m_S`` than to ``m_N``; exact ties go to non-sensitive.
    ``rule="literal"`` evaluates ``m_S - r < m_N - r`` as written, which does
    not depend on ``r`` at all and is kept only for comparison.

    Returns an int for a single covariate vector, else an int8 array.
    """
    if not model.usable:
        raise ValueError(f"signature model is unusable: {model.reason}")
    X = np.asarray(covariates, dtype=float)
    single = X.ndim == 1
    r = compute_risk_scores(X, model.betas)
    if rule == "absolute":
        out = (np.abs(model.m_S - r) < np.abs(model.m_N - r)).astype(np.int8)
    elif rule == "literal":
        out = (model.m_S - r < model.m_N - r).astype(np.int8)
    else:
        raise ValueError(f"unknown prediction rule {rule!r}")
    return int(out[0]) if single else out
