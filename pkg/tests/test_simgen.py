import math

import numpy as np
import pytest

from caden.simgen import (
    HARMFUL,
    NONSENSITIVE,
    SENSITIVE,
    PopulationSupplier,
    ScenarioConfig,
    derive_params,
    find_scenario,
    generate_patient,
    response_probability,
    scenario_catalogue,
)


def expit(x):
    return 1 / (1 + math.exp(-x))


@pytest.mark.parametrize("name", list(scenario_catalogue()))
def test_derive_params_round_trips_rates_at_group_means(name):
    # [DERIVED] criterion 8: targets recovered at the group-mean covariate vectors
    cfg = scenario_catalogue()[name]
    par = derive_params(cfg)
    P = cfg.P
    at = {
        NONSENSITIVE: np.zeros((1, P)),
        SENSITIVE: np.r_[np.ones(cfg.K), np.zeros(P - cfg.K)][None],
        HARMFUL: np.r_[-np.ones(cfg.K), np.zeros(P - cfg.K)][None],
    }
    for g, x in at.items():
        assert response_probability(cfg, par, x, [g], [0])[0] == pytest.approx(cfg.RR_0, abs=1e-14)
    assert response_probability(cfg, par, at[NONSENSITIVE], [0], [1])[0] == pytest.approx(cfg.RR_2, abs=1e-14)
    assert response_probability(cfg, par, at[SENSITIVE], [1], [1])[0] == pytest.approx(cfg.RR_1, abs=1e-14)
    if cfg.RR_3 is not None:
        assert response_probability(cfg, par, at[HARMFUL], [2], [1])[0] == pytest.approx(cfg.RR_3, abs=1e-14)


def test_derive_params_values_for_table1():
    par = derive_params(scenario_catalogue()["T1_RR60_N1000"])
    assert par.mu == pytest.approx(math.log(1 / 3))
    assert par.lam == 0.0
    assert par.gammas == pytest.approx(np.full(10, (math.log(1.5) - math.log(1 / 3)) / 10))


def test_catalogue_contents():
    cat = scenario_catalogue()
    assert len(cat) == 11
    assert find_scenario("i", "1", RR_1=0.6, N=1000).name == "T1_RR60_N1000"
    assert find_scenario("iii", "3", "C").N == 1000
    assert cat["T2B"].RR_2 == 0.35
    with pytest.raises(KeyError):
        find_scenario("i", "1", RR_1=0.9)


def test_scenario_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(name="x", RR_1=1.0, prev_sensitive=0.1, N1=10, N2=10)
    with pytest.raises(ValueError):
        ScenarioConfig(name="x", RR_1=0.5, prev_sensitive=0.6, prev_harmful=0.6, RR_3=0.1, N1=10, N2=10)
    with pytest.raises(ValueError):
        ScenarioConfig(name="x", RR_1=0.5, prev_sensitive=0.1, prev_harmful=0.1, N1=10, N2=10)


def test_scenario_dict_round_trip():
    cfg = scenario_catalogue()["T3C"]
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_supplier_stream_independent_of_batching():
    cfg = scenario_catalogue()["T3C"]
    a = PopulationSupplier(cfg, seed=5)
    b = PopulationSupplier(cfg, seed=5)
    whole = a.take(700)
    parts = [b.take(n) for n in (1, 300, 99, 300)]
    np.testing.assert_array_equal(whole.covariates, np.vstack([p.covariates for p in parts]))
    np.testing.assert_array_equal(whole.group, np.concatenate([p.group for p in parts]))
    assert a.n_drawn == b.n_drawn == 700


def test_supplier_group_prevalence_and_covariate_laws():
    cfg = scenario_catalogue()["T3C"]
    c = PopulationSupplier(cfg, seed=1).take(20_000)
    assert np.mean(c.group == SENSITIVE) == pytest.approx(0.2, abs=0.01)
    assert np.mean(c.group == HARMFUL) == pytest.approx(0.2, abs=0.01)
    sens = c.covariates[c.group == SENSITIVE, :10]
    assert sens.mean() == pytest.approx(1.0, abs=0.01)
    assert sens.var() == pytest.approx(0.25, rel=0.03)
    non = c.covariates[c.group == NONSENSITIVE, :10]
    assert non.var() == pytest.approx(0.01, rel=0.03)
    assert c.covariates[:, 10:].var() == pytest.approx(0.25, rel=0.03)


def test_realised_response_rates_are_close_to_targets():
    cfg = scenario_catalogue()["T1_RR70_N1000"]
    sup = PopulationSupplier(cfg, seed=2)
    c = sup.take(40_000)
    treated = sup.respond(c, np.ones(len(c), dtype=int))
    control = sup.respond(c, np.zeros(len(c), dtype=int))
    assert control.mean() == pytest.approx(0.25, abs=0.01)
    # noisy covariates pull the sensitive rate a little toward the control rate
    assert 0.6 < treated[c.group == SENSITIVE].mean() < 0.7
    assert treated[c.group == NONSENSITIVE].mean() == pytest.approx(0.25, abs=0.02)


def test_responses_are_fixed_by_predrawn_uniforms():
    cfg = scenario_catalogue()["T3A"]
    sup = PopulationSupplier(cfg, seed=3)
    c = sup.take(50)
    t = np.tile([0, 1], 25)
    np.testing.assert_array_equal(sup.respond(c, t), sup.respond(c, t))


def test_generate_patient_single_row():
    cfg = scenario_catalogue()["T3A"]
    p = generate_patient(cfg, derive_params(cfg), SENSITIVE, 1, np.random.default_rng(0))
    assert len(p) == 1 and p.n_covariates == cfg.P
    assert p.true_sensitive.tolist() == [1]
    assert p.response[0] in (0, 1)
