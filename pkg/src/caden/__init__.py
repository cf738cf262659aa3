"""Cross-validated adaptive enrichment trials: simulation, analysis and CLI."""

from .datasets import analyze_stage1, export_dataset, ingest_dataset
from .engine import DesignConfig, Strategy, TrialResult, run_caden_trial, run_caden_trials, run_cvrs_trial
from .harness import OperatingCharacteristics, RunRecord, expected_sample_size, run_campaign
from .records import Cohort, PatientRecord
from .simgen import PopulationSupplier, ScenarioConfig, derive_params, scenario_catalogue

__version__ = "0.1.0"

__all__ = [
    "Cohort", "DesignConfig", "OperatingCharacteristics", "PatientRecord", "PopulationSupplier", "RunRecord",
    "ScenarioConfig", "Strategy", "TrialResult", "analyze_stage1", "derive_params", "expected_sample_size",
    "export_dataset", "ingest_dataset", "run_caden_trial", "run_caden_trials", "run_campaign", "run_cvrs_trial",
    "scenario_catalogue",
]
