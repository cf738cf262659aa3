"""Two-stage adaptive enrichment trial and the single-stage comparator.

Both designs pull patients from a supplier object with two methods:

``take(n)``
    the next ``n`` candidates (covariates plus whatever latent truth the
    supplier knows), in stream order;
``respond(candidates, treatment)``
    binary outcomes for those candidates under the given arms.

The same code therefore runs simulations and, for the interim step, real data.
"""

from __future__ import annotations

import copy
import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol, Sequence

import numpy as np

from .records import Cohort, as_cohort
from .signature import (
    DEFAULT_FOLDS,
    RiskScoreAssignment,
    SignatureModel,
    cvrs_analyze,
    fit_signature_model,
    predict_sensitivity,
)
from .stats_core import (
    DEFAULT_CONTRAST,
    ContingencyTable2x2,
    TestResult,
    fisher_exact_test,
    sensitive_group_effect,
    two_proportion_test,
)

logger = logging.getLogger(__name__)


class EngineError(RuntimeError):
    pass


class ScreeningCapExceeded(EngineError):
    pass


class Strategy(str, enum.Enum):
    UNSELECTED = "unselected"
    ENRICHMENT = "enrichment"
    STOP = "stop"


class PatientSupplier(Protocol):
    def take(self, n: int): ...

    def respond(self, candidates, treatment) -> np.ndarray: ...


@dataclass(frozen=True)
class DesignConfig:
    """Sample sizes, significance levels and the knobs the design leaves open.

    ``alpha_1`` gates the interim overall test, ``alpha_2`` the interim
    promise test. At the end, ``alpha_O`` applies to the overall test and
    ``alpha_S`` to the post-hoc subgroup test; an enriched trial tests its
    subgroup at ``alpha_O + alpha_S``.
    """

    N1: int
    N2: int
    alpha_2: float = 0.1
    alpha_1: float = 0.04
    alpha_O: float = 0.04
    alpha_S: float = 0.01
    contrast: tuple = DEFAULT_CONTRAST
    max_screened: Optional[int] = None
    n_folds: int = DEFAULT_FOLDS
    promise_test: str = "wald"  # or "fisher"
    enrichment_pool: str = "stage2"  # or "pooled"
    prediction_rule: str = "absolute"
    continuity_correction: bool = True

    def __post_init__(self):
        for name in ("alpha_1", "alpha_2", "alpha_O", "alpha_S"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name}={value} must lie in (0, 1)")
        if self.alpha_O + self.alpha_S > 1:
            raise ValueError("alpha_O + alpha_S must not exceed 1")
        if self.N1 < 1 or self.N2 < 1:
            raise ValueError("N1 and N2 must be positive")
        if len(self.contrast) != 4:
            raise ValueError("contrast must have four entries")
        if self.promise_test not in ("wald", "fisher"):
            raise ValueError(f"unknown promise test {self.promise_test!r}")
        if self.enrichment_pool not in ("pooled", "stage2"):
            raise ValueError(f"unknown enrichment pool {self.enrichment_pool!r}")
        object.__setattr__(self, "contrast", tuple(float(g) for g in self.contrast))

    @property
    def N(self) -> int:
        return self.N1 + self.N2

    @property
    def alpha(self) -> float:
        return self.alpha_O + self.alpha_S

    @property
    def screening_cap(self) -> int:
        return self.max_screened if self.max_screened is not None else 50 * self.N2

    def with_alpha_2(self, alpha_2: float) -> "DesignConfig":
        return replace(self, alpha_2=alpha_2)

    @classmethod
    def from_scenario(cls, scenario, alpha_2: float = 0.1, **overrides) -> "DesignConfig":
        return cls(N1=scenario.N1, N2=scenario.N2, alpha_2=alpha_2, **overrides)


@dataclass
class InterimStats:
    """Everything the interim look computes before any threshold on ``alpha_2``."""

    p_overall: float
    p_promise: Optional[float] = None
    model: Optional[SignatureModel] = None
    cv: Optional[RiskScoreAssignment] = None
    flags: list = field(default_factory=list)

    def decide(self, cfg: DesignConfig) -> "InterimDecision":
        base = dict(p_overall=self.p_overall, p_promise=self.p_promise, model=self.model,
                    stage1_labels=None if self.cv is None else self.cv.labels, flags=list(self.flags))
        if self.p_overall < cfg.alpha_1:
            return InterimDecision(Strategy.UNSELECTED, **base)
        usable = self.model is not None and self.model.usable
        if self.p_promise is not None and self.p_promise < cfg.alpha_2 and usable:
            return InterimDecision(Strategy.ENRICHMENT, **base)
        return InterimDecision(Strategy.STOP, **base)


@dataclass
class InterimDecision:
    strategy: Strategy
    p_overall: float
    p_promise: Optional[float] = None
    model: Optional[SignatureModel] = None
    stage1_labels: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def add(self, truth, predicted) -> "Confusion":
        truth = np.asarray(truth)
        predicted = np.asarray(predicted)
        known = (truth >= 0) & (predicted >= 0)
        t, p = truth[known] == 1, predicted[known] == 1
        self.tp += int(np.sum(t & p))
        self.fp += int(np.sum(~t & p))
        self.tn += int(np.sum(~t & ~p))
        self.fn += int(np.sum(t & ~p))
        return self

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def sensitivity(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @property
    def specificity(self) -> float:
        neg = self.tn + self.fp
        return self.tn / neg if neg else float("nan")


@dataclass
class TrialResult:
    decision: InterimDecision
    reject_HO: bool
    reject_HS: bool
    n_enrolled: int
    n_screened: int = 0
    final_p_overall: Optional[float] = None
    final_p_sensitive: Optional[float] = None
    stage2: Optional[Cohort] = field(default=None, repr=False)
    confusion: Confusion = field(default_factory=Confusion)
    flags: list = field(default_factory=list)

    @property
    def reject_HC(self) -> bool:
        return self.reject_HO or self.reject_HS

    @property
    def strategy(self) -> Strategy:
        return self.decision.strategy


def block_randomize(n: int, rng) -> np.ndarray:
    """1:1 allocation in permuted blocks of two."""
    first = rng.integers(0, 2, size=(n + 1) // 2).astype(np.int8)
    return np.column_stack([first, 1 - first]).ravel()[:n]


def _enroll(supplier: PatientSupplier, n: int, rng) -> tuple[Cohort, object]:
    cands = supplier.take(n)
    t = block_randomize(n, rng)
    y = supplier.respond(cands, t)
    truth = getattr(cands, "true_sensitive", None)
    return Cohort(treatment=t, covariates=cands.covariates, response=y, true_sensitive=truth), cands


def overall_test(cohort: Cohort, cfg: DesignConfig) -> TestResult:
    t, y = cohort.treatment, cohort.response
    n1, n0 = int(np.sum(t == 1)), int(np.sum(t == 0))
    if n1 == 0 or n0 == 0:
        raise EngineError("both arms must be represented")
    return two_proportion_test(int(y[t == 1].sum()), n1, int(y[t == 0].sum()), n0,
                               continuity_correction=cfg.continuity_correction)


def subgroup_fisher(cohort: Cohort, members) -> Optional[TestResult]:
    """Fisher test of arm vs response among ``members``; None if the set is empty."""
    members = np.asarray(members, dtype=bool)
    if not members.any():
        return None
    t, y = cohort.treatment[members], cohort.response[members]
    table = ContingencyTable2x2(
        int(np.sum((t == 1) & (y == 1))), int(np.sum((t == 1) & (y == 0))),
        int(np.sum((t == 0) & (y == 1))), int(np.sum((t == 0) & (y == 0))),
    )
    return fisher_exact_test(table)


def evaluate_interim(stage1, cfg: DesignConfig, seed=None) -> InterimStats:
    """Interim statistics: overall p-value, then (if needed) the promise p-value and model M."""
    stage1 = as_cohort(stage1)
    if not stage1.has_responses:
        raise EngineError("stage-1 patients need observed responses")
    rng = np.random.default_rng(seed)
    overall = overall_test(stage1, cfg)
    stats = InterimStats(p_overall=overall.p_value)
    if overall.p_value < cfg.alpha_1:
        return stats
    if stage1.response.min() == stage1.response.max():
        stats.flags.append("all stage-1 responses identical")
        stats.p_promise = 1.0
        return stats

    cv = cvrs_analyze(stage1, n_folds=cfg.n_folds, rng_seed=rng)
    stats.cv = cv
    if cv.degenerate:
        stats.flags.append("cross-validated scores are all identical")
    if cfg.promise_test == "wald":
        promise = sensitive_group_effect(stage1.treatment, cv.labels, stage1.response, cfg.contrast)
    else:
        promise = subgroup_fisher(stage1, cv.labels == 1) or TestResult(0.0, 1.0, "fisher_exact", flagged=True)
    if promise.flagged:
        stats.flags.append(f"promise test: {promise.note or 'flagged'}")
    stats.p_promise = promise.p_value
    stats.model = fit_signature_model(stage1)
    if not stats.model.usable:
        stats.flags.append(f"model M unusable: {stats.model.reason}")
    return stats


def interim_analysis(stage1, cfg: DesignConfig, seed=None) -> InterimDecision:
    return evaluate_interim(stage1, cfg, seed).decide(cfg)


@dataclass
class Stage2:
    cohort: Cohort
    n_screened: int
    rejected_truth: Optional[np.ndarray] = None  # truth labels of screened-out candidates


def recruit_stage2(decision: InterimDecision, supplier: PatientSupplier, cfg: DesignConfig, seed=None) -> Stage2:
    """Draw and randomise the second-stage patients.

    Under enrichment, candidates are screened in stream order with model M and
    only predicted-sensitive ones are enrolled, until ``N2`` are in. More than
    ``cfg.screening_cap`` screened candidates raises ``ScreeningCapExceeded``.
    """
    rng = np.random.default_rng(seed)
    if decision.strategy is Strategy.STOP:
        raise EngineError("a stopped trial has no second stage")
    if decision.strategy is Strategy.UNSELECTED:
        cohort, _ = _enroll(supplier, cfg.N2, rng)
        return Stage2(cohort, cfg.N2)

    model = decision.model
    kept, rejected_truth = [], []
    n_kept = n_screened = 0
    batch = max(64, cfg.N2)
    while n_kept < cfg.N2:
        cands = supplier.take(batch)
        pred = predict_sensitivity(model, cands.covariates, rule=cfg.prediction_rule)
        hits = np.flatnonzero(pred == 1)
        need = cfg.N2 - n_kept
        if hits.size >= need:
            last = hits[need - 1]
            hits = hits[:need]
            seen = last + 1
        else:
            seen = len(cands)
        if n_screened + seen > cfg.screening_cap:
            raise ScreeningCapExceeded(
                f"screened more than {cfg.screening_cap} candidates to enrol {cfg.N2} predicted-sensitive patients"
            )
        window = cands.subset(slice(0, seen))
        miss = np.ones(seen, dtype=bool)
        miss[hits] = False
        truth = getattr(window, "true_sensitive", None)
        if truth is not None:
            rejected_truth.append(truth[miss])
        kept.append(cands.subset(hits))
        n_kept += hits.size
        n_screened += seen

    covs = np.vstack([k.covariates for k in kept])
    t = block_randomize(cfg.N2, rng)
    enrolled = _stack_candidates(kept)
    y = supplier.respond(enrolled, t)
    truth = getattr(enrolled, "true_sensitive", None)
    cohort = Cohort(treatment=t, covariates=covs, response=y, true_sensitive=truth,
                    predicted_sensitive=np.ones(cfg.N2, dtype=np.int8))
    rejected = np.concatenate(rejected_truth) if rejected_truth else None
    return Stage2(cohort, n_screened, rejected)


def _stack_candidates(parts):
    first = parts[0]
    if len(parts) == 1:
        return first
    cls = type(first)
    fields_ = {name: np.concatenate([getattr(p, name) for p in parts]) for name in vars(first)}
    return cls(**fields_)


def final_analysis(stage1, stage2: Optional[Stage2], decision: InterimDecision, cfg: DesignConfig,
                   seed=None) -> TrialResult:
    stage1 = as_cohort(stage1)
    rng = np.random.default_rng(seed)
    strategy = decision.strategy
    confusion = Confusion()
    flags = list(decision.flags)

    if strategy is Strategy.STOP:
        if decision.stage1_labels is not None and stage1.true_sensitive is not None:
            confusion.add(stage1.true_sensitive, decision.stage1_labels)
        return TrialResult(decision, False, False, n_enrolled=len(stage1), confusion=confusion, flags=flags)

    if stage2 is None:
        raise EngineError(f"{strategy.value} strategy needs second-stage patients")

    if strategy is Strategy.UNSELECTED:
        everyone = Cohort.concat([stage1, stage2.cohort])
        p_overall = overall_test(everyone, cfg).p_value
        cv = cvrs_analyze(everyone, n_folds=cfg.n_folds, rng_seed=rng)
        fisher = subgroup_fisher(everyone, cv.labels == 1)
        if fisher is None:
            flags.append("empty sensitive cluster")
        p_sens = None if fisher is None else fisher.p_value
        if everyone.true_sensitive is not None:
            confusion.add(everyone.true_sensitive, cv.labels)
        return TrialResult(
            decision,
            reject_HO=p_overall < cfg.alpha_O,
            reject_HS=p_sens is not None and p_sens < cfg.alpha_S,
            n_enrolled=len(everyone),
            n_screened=stage2.n_screened,
            final_p_overall=p_overall,
            final_p_sensitive=p_sens,
            stage2=stage2.cohort,
            confusion=confusion,
            flags=flags,
        )

    model = decision.model
    stage1_pred = predict_sensitivity(model, stage1.covariates, rule=cfg.prediction_rule)
    if cfg.enrichment_pool == "pooled":
        pool = Cohort.concat([stage1.subset(stage1_pred == 1), stage2.cohort])
    else:
        pool = stage2.cohort
    fisher = subgroup_fisher(pool, np.ones(len(pool), dtype=bool))
    p_sens = None if fisher is None else fisher.p_value
    if stage1.true_sensitive is not None:
        confusion.add(stage1.true_sensitive, stage1_pred)
    if stage2.cohort.true_sensitive is not None:
        confusion.add(stage2.cohort.true_sensitive, stage2.cohort.predicted_sensitive)
    if stage2.rejected_truth is not None:
        confusion.add(stage2.rejected_truth, np.zeros(stage2.rejected_truth.size, dtype=np.int8))
    return TrialResult(
        decision,
        reject_HO=False,
        reject_HS=p_sens is not None and p_sens < cfg.alpha,
        n_enrolled=len(stage1) + len(stage2.cohort),
        n_screened=stage2.n_screened,
        final_p_sensitive=p_sens,
        stage2=stage2.cohort,
        confusion=confusion,
        flags=flags,
    )


def run_caden_trial(supplier: PatientSupplier, cfg: DesignConfig, seed=None) -> TrialResult:
    """One complete two-stage trial: interim look, second stage, final tests."""
    return run_caden_trials(supplier, cfg, [cfg.alpha_2], seed)[0]


def run_caden_trials(supplier: PatientSupplier, cfg: DesignConfig, alpha_2_values: Sequence[float],
                     seed=None) -> list[TrialResult]:
    """The same trial replayed under several promise thresholds.

    Stage 1 and the interim statistics are computed once. Each threshold then
    continues from a copy of the supplier and generator state, which gives
    exactly what separate runs with the same seed would give.
    """
    rng = np.random.default_rng(seed)
    stage1, _ = _enroll(supplier, cfg.N1, rng)
    stats = evaluate_interim(stage1, cfg, rng)
    results = []
    for alpha_2 in alpha_2_values:
        branch_cfg = cfg.with_alpha_2(alpha_2)
        branch_rng = copy.deepcopy(rng)
        branch_supplier = copy.deepcopy(supplier)
        decision = stats.decide(branch_cfg)
        stage2 = None
        if decision.strategy is not Strategy.STOP:
            stage2 = recruit_stage2(decision, branch_supplier, branch_cfg, branch_rng)
        results.append(final_analysis(stage1, stage2, decision, branch_cfg, branch_rng))
    return results


def run_cvrs_trial(supplier: PatientSupplier, cfg: DesignConfig, seed=None) -> TrialResult:
    """Single-stage comparator: N1 + N2 unselected patients, analysed once at the end."""
    rng = np.random.default_rng(seed)
    everyone, _ = _enroll(supplier, cfg.N, rng)
    p_overall = overall_test(everyone, cfg).p_value
    cv = cvrs_analyze(everyone, n_folds=cfg.n_folds, rng_seed=rng)
    fisher = subgroup_fisher(everyone, cv.labels == 1)
    p_sens = None if fisher is None else fisher.p_value
    confusion = Confusion()
    if everyone.true_sensitive is not None:
        confusion.add(everyone.true_sensitive, cv.labels)
    decision = InterimDecision(Strategy.UNSELECTED, p_overall=p_overall, stage1_labels=cv.labels,
                               flags=["single-stage design"])
    return TrialResult(
        decision,
        reject_HO=p_overall < cfg.alpha_O,
        reject_HS=p_sens is not None and p_sens < cfg.alpha_S,
        n_enrolled=len(everyone),
        n_screened=len(everyone),
        final_p_overall=p_overall,
        final_p_sensitive=p_sens,
        confusion=confusion,
    )
