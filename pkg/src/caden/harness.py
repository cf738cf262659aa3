"""Monte Carlo campaigns and their operating characteristics.

Every replicate gets its own seed, derived from the master seed and the
replicate index alone (``numpy.random.SeedSequence(master_seed,
spawn_key=(index,))``). Its two children drive the patient stream and the
trial's own randomness. Results therefore do not depend on how replicates are
spread over worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import DesignConfig, EngineError, Strategy, TrialResult, run_caden_trials, run_cvrs_trial
from .simgen import PopulationSupplier, ScenarioConfig, derive_params

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_2 = (0.05, 0.1, 0.2)
DESIGNS = ("caden", "cvrs")
CSV_COLUMNS = (
    "scenario", "design", "alpha2", "pwr_O", "pwr_S", "pwr_C", "sensitivity", "specificity",
    "pct_unselected", "pct_enrichment", "pct_stop", "n_exp", "n_runs",
)


@dataclass
class RunRecord:
    run_index: int
    seed: str
    design: str
    alpha2: Optional[float]
    strategy: Optional[str] = None
    reject_HO: bool = False
    reject_HS: bool = False
    reject_HC: bool = False
    n_enrolled: int = 0
    n_screened: int = 0
    p_overall_interim: Optional[float] = None
    p_promise: Optional[float] = None
    final_p_overall: Optional[float] = None
    final_p_sensitive: Optional[float] = None
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def sensitivity(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else math.nan

    @property
    def specificity(self) -> float:
        neg = self.tn + self.fp
        return self.tn / neg if neg else math.nan

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, allow_nan=False, default=_jsonable)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))

    @classmethod
    def from_result(cls, result: TrialResult, run_index: int, seed: str, design: str,
                    alpha2: Optional[float]) -> "RunRecord":
        d = result.decision
        c = result.confusion
        return cls(
            run_index=run_index, seed=seed, design=design, alpha2=alpha2,
            strategy=d.strategy.value,
            reject_HO=bool(result.reject_HO), reject_HS=bool(result.reject_HS), reject_HC=bool(result.reject_HC),
            n_enrolled=int(result.n_enrolled), n_screened=int(result.n_screened),
            p_overall_interim=_opt(d.p_overall) if design == "caden" else None,
            p_promise=_opt(d.p_promise),
            final_p_overall=_opt(result.final_p_overall), final_p_sensitive=_opt(result.final_p_sensitive),
            tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn,
        )


def _opt(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(f"cannot serialise {type(x)}")


@dataclass
class OperatingCharacteristics:
    scenario: str
    design: str
    alpha2: Optional[float]
    pwr_O: float
    pwr_S: float
    pwr_C: float
    sensitivity: float
    specificity: float
    pct_unselected: float
    pct_enrichment: float
    pct_stop: float
    n_exp: float
    n_runs: int
    n_failed: int = 0
    monte_carlo_se: dict = field(default_factory=dict)

    def csv_row(self) -> list[str]:
        def f(x):
            return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.3f}"

        return [
            self.scenario, self.design, "" if self.alpha2 is None else f"{self.alpha2:g}",
            f(self.pwr_O), f(self.pwr_S), f(self.pwr_C), f(self.sensitivity), f(self.specificity),
            f(self.pct_unselected), f(self.pct_enrichment), f(self.pct_stop), f(self.n_exp), str(self.n_runs),
        ]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class CampaignResult:
    characteristics: list[OperatingCharacteristics]
    records: list[RunRecord]

    def by_alpha2(self, alpha2: float) -> OperatingCharacteristics:
        for oc in self.characteristics:
            if oc.alpha2 is not None and math.isclose(oc.alpha2, alpha2):
                return oc
        raise KeyError(alpha2)

    def csv_text(self) -> str:
        return characteristics_csv(self.characteristics)


def expected_sample_size(N1: int, N2: int, eta_s: float) -> float:
    """Stage-1 size weighted by the stop rate plus the full size weighted by the rest."""
    if not 0.0 <= eta_s <= 1.0:
        raise ValueError(f"stop proportion {eta_s} must lie in [0, 1]")
    return N1 * eta_s + (N1 + N2) * (1.0 - eta_s)


def run_seed(master_seed: int, run_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(run_index,))


def _simulate_one(args) -> list[RunRecord]:
    scenario, design, base_cfg, alpha_2_values, master_seed, index = args
    seq = run_seed(master_seed, index)
    supplier_seed, engine_seed = seq.spawn(2)
    seed_label = f"{master_seed}:{index}"
    supplier = PopulationSupplier(scenario, derive_params(scenario), supplier_seed)
    try:
        if design == "caden":
            results = run_caden_trials(supplier, base_cfg, alpha_2_values, engine_seed)
            return [RunRecord.from_result(r, index, seed_label, design, a) for r, a in zip(results, alpha_2_values)]
        result = run_cvrs_trial(supplier, base_cfg, engine_seed)
        return [RunRecord.from_result(result, index, seed_label, design, None)]
    except (EngineError, ValueError, np.linalg.LinAlgError) as exc:
        alphas = alpha_2_values if design == "caden" else [None]
        return [RunRecord(index, seed_label, design, a, error=f"{type(exc).__name__}: {exc}") for a in alphas]


def _simulate_chunk(chunk) -> list[list[RunRecord]]:
    return [_simulate_one(args) for args in chunk]


def aggregate(records: Sequence[RunRecord], scenario: ScenarioConfig, design: str, alpha2: Optional[float],
              averaging: str = "macro") -> OperatingCharacteristics:
    """Operating characteristics from one alpha_2 slice of a campaign.

    Failed replicates are left out of every rate. ``averaging="macro"``
    averages per-replicate sensitivity and specificity over the replicates
    where they are defined; ``"micro"`` pools the confusion counts instead.
    """
    ok = [r for r in records if r.ok]
    n = len(ok)
    failed = len(records) - n
    if n == 0:
        nan = math.nan
        return OperatingCharacteristics(scenario.name, design, alpha2, nan, nan, nan, nan, nan, nan, nan, nan,
                                        nan, 0, failed)

    def rate(flag):
        return sum(1 for r in ok if getattr(r, flag)) / n

    counts = {s.value: sum(1 for r in ok if r.strategy == s.value) for s in Strategy}
    pct_stop = 100.0 * counts[Strategy.STOP.value] / n
    eta_s = pct_stop / 100.0  # so n_exp == expected_sample_size(N1, N2, pct_stop / 100) exactly
    if averaging == "macro":
        sens = [r.sensitivity for r in ok if not math.isnan(r.sensitivity)]
        spec = [r.specificity for r in ok if not math.isnan(r.specificity)]
        sensitivity = float(np.mean(sens)) if sens else math.nan
        specificity = float(np.mean(spec)) if spec else math.nan
    elif averaging == "micro":
        tp, fp = sum(r.tp for r in ok), sum(r.fp for r in ok)
        tn, fn = sum(r.tn for r in ok), sum(r.fn for r in ok)
        sensitivity = tp / (tp + fn) if tp + fn else math.nan
        specificity = tn / (tn + fp) if tn + fp else math.nan
    else:
        raise ValueError(f"unknown averaging {averaging!r}")

    oc = OperatingCharacteristics(
        scenario=scenario.name, design=design, alpha2=alpha2,
        pwr_O=rate("reject_HO"), pwr_S=rate("reject_HS"), pwr_C=rate("reject_HC"),
        sensitivity=sensitivity, specificity=specificity,
        pct_unselected=100.0 * counts[Strategy.UNSELECTED.value] / n,
        pct_enrichment=100.0 * counts[Strategy.ENRICHMENT.value] / n,
        pct_stop=pct_stop,
        n_exp=expected_sample_size(scenario.N1, scenario.N2, eta_s),
        n_runs=n, n_failed=failed,
    )
    oc.monte_carlo_se = {
        name: math.sqrt(p * (1.0 - p) / n)
        for name, p in (("pwr_O", oc.pwr_O), ("pwr_S", oc.pwr_S), ("pwr_C", oc.pwr_C),
                        ("pct_unselected", oc.pct_unselected / 100), ("pct_enrichment", oc.pct_enrichment / 100),
                        ("pct_stop", eta_s))
    }
    return oc


def run_campaign(scenario: ScenarioConfig, design: str = "caden", n_runs: int = 1000, master_seed: int = 0,
                 parallelism: int = 1, alpha_2_values: Sequence[float] = DEFAULT_ALPHA_2,
                 design_overrides: Optional[dict] = None, averaging: str = "macro") -> CampaignResult:
    """Simulate ``n_runs`` trials of one scenario and summarise them.

    For the adaptive design every replicate is evaluated at each value in
    ``alpha_2_values`` on the same simulated stage 1, giving one row of
    characteristics per value. The comparator gives a single row.
    """
    if design not in DESIGNS:
        raise ValueError(f"design must be one of {DESIGNS}, got {design!r}")
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    alpha_2_values = [float(a) for a in alpha_2_values]
    overrides = dict(design_overrides or {})
    overrides.pop("alpha_2", None)
    base_cfg = DesignConfig.from_scenario(scenario, alpha_2=alpha_2_values[0], **overrides)

    jobs = [(scenario, design, base_cfg, alpha_2_values, master_seed, i) for i in range(n_runs)]
    if parallelism <= 1:
        per_run = [_simulate_one(job) for job in jobs]
    else:
        size = max(1, math.ceil(n_runs / (parallelism * 4)))
        chunks = [jobs[i:i + size] for i in range(0, n_runs, size)]
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            per_run = [recs for part in pool.map(_simulate_chunk, chunks) for recs in part]

    records = [r for recs in per_run for r in recs]
    failures = sum(1 for r in records if not r.ok)
    if failures:
        logger.warning("%d replicate evaluations failed and were excluded", failures)

    slices = alpha_2_values if design == "caden" else [None]
    characteristics = []
    for a in slices:
        subset = [r for r in records if r.alpha2 == a]
        characteristics.append(aggregate(subset, scenario, design, a, averaging))
    return CampaignResult(characteristics, records)


def characteristics_csv(rows: Sequence[OperatingCharacteristics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for oc in rows:
        writer.writerow(oc.csv_row())
    return buf.getvalue()


def write_campaign(result: CampaignResult, out_dir) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "operating_characteristics.csv").write_text(result.csv_text())
    with open(out / "runs.jsonl", "w") as fh:
        for rec in result.records:
            fh.write(rec.to_json() + "\n")
    summary = [oc.to_dict() for oc in result.characteristics]
    (out / "operating_characteristics.json").write_text(json.dumps(summary, indent=2, default=_jsonable))
