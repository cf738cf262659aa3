"""Synthetic trial populations and the catalogue of simulation scenarios.

Covariates come in two blocks. The first ``K`` columns are the sensitive
covariates whose distribution depends on the patient's latent group; the other
``P - K`` columns are pure noise shared by everyone. Responses follow a logistic
model with treatment-by-covariate interactions on the sensitive block.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .records import Cohort

NONSENSITIVE = 0
SENSITIVE = 1
HARMFUL = 2


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"response rate {p} must lie strictly between 0 and 1")
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    RR_1: float
    prev_sensitive: float
    N1: int
    N2: int
    P: int = 100
    K: int = 10
    RR_0: float = 0.25
    RR_2: float = 0.25
    RR_3: Optional[float] = None
    prev_harmful: float = 0.0
    mu_sensitive: float = 1.0
    var_sensitive: float = 0.25
    mu_nonsensitive: float = 0.0
    var_nonsensitive: float = 0.01
    mu_noise: float = 0.0
    var_noise: float = 0.25
    mu_harmful: float = -1.0
    var_harmful: float = 0.25
    setting: str = ""
    table: str = ""
    scenario: str = ""

    def __post_init__(self):
        rates = [self.RR_0, self.RR_1, self.RR_2] + ([self.RR_3] if self.RR_3 is not None else [])
        if any(not 0.0 < r < 1.0 for r in rates):
            raise ValueError(f"scenario {self.name!r}: response rates must lie in (0, 1)")
        if not (0 <= self.prev_sensitive <= 1 and 0 <= self.prev_harmful <= 1):
            raise ValueError(f"scenario {self.name!r}: prevalences must lie in [0, 1]")
        if self.prev_sensitive + self.prev_harmful > 1:
            raise ValueError(f"scenario {self.name!r}: prevalences sum above 1")
        if self.prev_harmful > 0 and self.RR_3 is None:
            raise ValueError(f"scenario {self.name!r}: a harmful group needs RR_3")
        if not 1 <= self.K <= self.P:
            raise ValueError(f"scenario {self.name!r}: need 1 <= K <= P")
        if self.N1 < 1 or self.N2 < 1:
            raise ValueError(f"scenario {self.name!r}: stage sizes must be positive")

    @property
    def N(self) -> int:
        return self.N1 + self.N2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class GenerativeParams:
    mu: float
    lam: float
    gammas: np.ndarray
    alphas: np.ndarray
    gammas_harmful: Optional[np.ndarray] = None


def derive_params(cfg: ScenarioConfig) -> GenerativeParams:
    """Logistic-model coefficients that hit the target response rates.

    Targets are exact for a patient sitting at their group's mean covariate
    vector (+1 for sensitive, -1 for harmful, 0 otherwise); with noisy
    covariates the realised rates drift slightly toward the control rate.
    """
    mu = logit(cfg.RR_0)
    lam = 0.0 if cfg.RR_2 == cfg.RR_0 else logit(cfg.RR_2) - mu
    K = cfg.K
    gammas = np.full(K, (logit(cfg.RR_1) - mu - lam) / K)
    harmful = None
    if cfg.RR_3 is not None:
        harmful = np.full(K, -(logit(cfg.RR_3) - mu - lam) / K)
    return GenerativeParams(mu=mu, lam=lam, gammas=gammas, alphas=np.zeros(K), gammas_harmful=harmful)


def _group_law(cfg: ScenarioConfig):
    means = np.array([cfg.mu_nonsensitive, cfg.mu_sensitive, cfg.mu_harmful])
    sds = np.sqrt([cfg.var_nonsensitive, cfg.var_sensitive, cfg.var_harmful])
    return means, sds


def linear_predictor(cfg: ScenarioConfig, params: GenerativeParams, covariates, group, treatment) -> np.ndarray:
    X = np.asarray(covariates, dtype=float)
    group = np.asarray(group)
    t = np.asarray(treatment, dtype=float)
    xs = X[:, : cfg.K]
    interaction = xs @ params.gammas
    if params.gammas_harmful is not None:
        interaction = np.where(group == HARMFUL, xs @ params.gammas_harmful, interaction)
    return params.mu + params.lam * t + xs @ params.alphas + t * interaction


def response_probability(cfg, params, covariates, group, treatment) -> np.ndarray:
    eta = linear_predictor(cfg, params, covariates, group, treatment)
    return 1.0 / (1.0 + np.exp(-eta))


def draw_covariates(cfg: ScenarioConfig, group, rng) -> np.ndarray:
    group = np.asarray(group)
    n = group.size
    means, sds = _group_law(cfg)
    X = np.empty((n, cfg.P))
    X[:, : cfg.K] = rng.standard_normal((n, cfg.K)) * sds[group][:, None] + means[group][:, None]
    X[:, cfg.K :] = rng.standard_normal((n, cfg.P - cfg.K)) * math.sqrt(cfg.var_noise) + cfg.mu_noise
    return X


def generate_patient(cfg: ScenarioConfig, params: GenerativeParams, group: int, treatment: int, rng) -> Cohort:
    """One simulated patient in a fixed group and arm, as a single-row cohort."""
    X = draw_covariates(cfg, [group], rng)
    p = response_probability(cfg, params, X, [group], [treatment])
    y = (rng.random(1) < p).astype(np.int8)
    return Cohort(
        treatment=[treatment],
        covariates=X,
        response=y,
        true_sensitive=[int(group == SENSITIVE)],
    )


@dataclass
class Candidates:
    """Pre-outcome patients drawn from a population.

    ``uniforms`` fixes each patient's response noise up front, so the outcome
    under either arm is determined once the arm is assigned.
    """

    covariates: np.ndarray
    group: np.ndarray
    uniforms: np.ndarray

    def __len__(self) -> int:
        return self.covariates.shape[0]

    @property
    def true_sensitive(self) -> np.ndarray:
        return (self.group == SENSITIVE).astype(np.int8)

    def subset(self, index) -> "Candidates":
        return Candidates(self.covariates[index], self.group[index], self.uniforms[index])


class PopulationSupplier:
    """Endless, seeded stream of candidate patients from one scenario.

    Patients are generated in fixed-size chunks, so the stream does not depend
    on how callers batch their requests.
    """

    chunk_size = 256

    def __init__(self, cfg: ScenarioConfig, params: Optional[GenerativeParams] = None, seed=None):
        self.cfg = cfg
        self.params = params if params is not None else derive_params(cfg)
        self.rng = np.random.default_rng(seed)
        self._buffer: Optional[Candidates] = None
        self._pos = 0
        self.n_drawn = 0

    def _refill(self):
        cfg, n = self.cfg, self.chunk_size
        u = self.rng.random(n)
        group = np.full(n, NONSENSITIVE, dtype=np.int8)
        group[u < cfg.prev_sensitive + cfg.prev_harmful] = HARMFUL
        group[u < cfg.prev_sensitive] = SENSITIVE
        X = draw_covariates(cfg, group, self.rng)
        fresh = Candidates(X, group, self.rng.random(n))
        if self._buffer is not None and self._pos < len(self._buffer):
            rest = self._buffer.subset(slice(self._pos, None))
            fresh = Candidates(
                np.vstack([rest.covariates, fresh.covariates]),
                np.concatenate([rest.group, fresh.group]),
                np.concatenate([rest.uniforms, fresh.uniforms]),
            )
        self._buffer, self._pos = fresh, 0

    def take(self, n: int) -> Candidates:
        while self._buffer is None or len(self._buffer) - self._pos < n:
            self._refill()
        out = self._buffer.subset(slice(self._pos, self._pos + n))
        self._pos += n
        self.n_drawn += n
        return out

    def respond(self, candidates: Candidates, treatment) -> np.ndarray:
        p = response_probability(self.cfg, self.params, candidates.covariates, candidates.group, treatment)
        return (candidates.uniforms < p).astype(np.int8)


def population_supplier(cfg: ScenarioConfig, params: Optional[GenerativeParams] = None, seed=None) -> PopulationSupplier:
    return PopulationSupplier(cfg, params, seed)


def _t1(rr1: float, n: int) -> ScenarioConfig:
    return ScenarioConfig(
        name=f"T1_RR{round(rr1 * 100)}_N{n}", RR_1=rr1, prev_sensitive=0.1, N1=n // 2, N2=n // 2,
        setting="i", table="1", scenario=f"RR_1={rr1},N={n}",
    )


def scenario_catalogue() -> dict[str, ScenarioConfig]:
    """The eleven simulation scenarios, keyed by short name.

    The setting ii scenarios keep a 10% group with shifted sensitive covariates
    but no interaction effect, so predicted labels can still be scored against
    truth. T3C uses 500 patients per stage.
    """
    rows = [_t1(rr, n) for n in (400, 1000) for rr in (0.5, 0.6, 0.7)]
    rows += [
        ScenarioConfig(name="T3A", RR_1=0.6, prev_sensitive=0.2, N1=200, N2=200,
                       setting="i", table="3", scenario="A"),
        ScenarioConfig(name="T2A", RR_1=0.25, prev_sensitive=0.1, N1=200, N2=200,
                       setting="ii", table="2", scenario="A"),
        ScenarioConfig(name="T2B", RR_1=0.35, RR_2=0.35, prev_sensitive=0.1, N1=200, N2=200,
                       setting="ii", table="2", scenario="B"),
        ScenarioConfig(name="T3B", RR_1=0.25, RR_3=0.1, prev_sensitive=0.0, prev_harmful=0.2, N1=500, N2=500,
                       setting="iii", table="3", scenario="B"),
        ScenarioConfig(name="T3C", RR_1=0.4, RR_3=0.1, prev_sensitive=0.2, prev_harmful=0.2, N1=500, N2=500,
                       setting="iii", table="3", scenario="C"),
    ]
    return {row.name: row for row in rows}


def find_scenario(setting: str, table: str, scenario: str = "", RR_1: Optional[float] = None,
                  N: Optional[int] = None) -> ScenarioConfig:
    for cfg in scenario_catalogue().values():
        if (cfg.setting, cfg.table) != (setting, table):
            continue
        if scenario and cfg.scenario != scenario:
            continue
        if RR_1 is not None and not math.isclose(cfg.RR_1, RR_1):
            continue
        if N is not None and cfg.N != N:
            continue
        return cfg
    raise KeyError(f"no scenario for setting={setting} table={table} scenario={scenario} RR_1={RR_1} N={N}")
