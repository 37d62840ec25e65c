import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from aforge.optim.bo import BayesOpt, EvaluationBudget, GPSurrogate, bo_phase, evaluate, expected_improvement
from aforge.optim.cmaes import CMAES, cmaes_phase, default_popsize


def sphere(x):
    return -float(np.sum((np.asarray(x) - 0.5) ** 2))


def test_budget_validation():
    assert EvaluationBudget().bo_max == 750 and EvaluationBudget().cmaes_max == 250
    with pytest.raises(ValueError):
        EvaluationBudget(patience=0)
    with pytest.raises(ValueError):
        EvaluationBudget(bo_max=-1)


def test_evaluate_accepts_pairs_and_floats():
    assert evaluate(lambda x: 1.5, None) == (1.5, 0.0)
    assert evaluate(lambda x: (2.0, 0.1), None) == (2.0, 0.1)


@given(st.floats(-3, 3), st.floats(0.01, 3), st.floats(-3, 3))
def test_expected_improvement_matches_quadrature(mu, sd, best):
    ei = expected_improvement(np.array([mu]), np.array([sd]), best)[0]
    pdf = lambda y: np.exp(-0.5 * ((y - mu) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))  # noqa: E731
    ref, _ = integrate.quad(lambda y: (y - best) * pdf(y), best, mu + 12 * sd)
    assert ei == pytest.approx(max(ref, 0.0), abs=1e-8)


def test_expected_improvement_without_uncertainty():
    ei = expected_improvement(np.array([1.0, -1.0]), np.zeros(2), 0.0)
    assert ei.tolist() == [1.0, 0.0]


def test_gp_interpolates_noiseless_data(rng):
    X = rng.random((20, 3))
    y = np.sin(3 * X).sum(axis=1)
    gp = GPSurrogate(3).fit(X, y)
    mu, sd = gp.predict(X)
    assert np.allclose(mu, y, atol=1e-3)
    assert np.all(sd < 1e-2)


def test_gp_noise_widens_posterior(rng):
    X = rng.random((15, 2))
    y = X.sum(axis=1)
    quiet = GPSurrogate(2).fit(X, y, np.zeros(15), optimize=False)
    loud = GPSurrogate(2).fit(X, y, np.full(15, 0.5), optimize=False)
    assert loud.predict(X)[1].mean() > quiet.predict(X)[1].mean()


def test_initial_design_is_sobol_and_seeded():
    a = BayesOpt(15, np.random.default_rng(4), n_init=8)
    b = BayesOpt(15, np.random.default_rng(4), n_init=8)
    xa, xb = a.ask(8), b.ask(8)
    assert np.array_equal(xa, xb)
    assert np.all((xa >= 0) & (xa <= 1))
    # scrambled Sobol points stratify every coordinate
    assert np.all(np.sort((xa * 8).astype(int), axis=0) == np.arange(8)[:, None])


def test_batch_proposals_are_distinct():
    bo = BayesOpt(4, np.random.default_rng(0), n_init=6, n_candidates=256)
    for x in bo.ask(6):
        bo.tell(x, sphere(x))
    batch = bo.ask(3)
    assert batch.shape == (3, 4)
    assert len({tuple(np.round(x, 9)) for x in batch}) == 3


def test_bo_phase_zero_budget_and_patience():
    assert bo_phase(sphere, 0, np.random.default_rng(0)).history == []
    flat = bo_phase(lambda x: 0.0, 40, np.random.default_rng(0), n_init=4, patience=5, dim=3, n_candidates=128)
    assert flat.stopped == "patience" and len(flat.history) == 6


def test_bo_low_dimensional_sphere():
    res = bo_phase(sphere, 30, np.random.default_rng(2), n_init=8, dim=3, n_candidates=512)
    assert res.best.score > -1e-3
    # best-so-far is monotone by construction
    run = np.maximum.accumulate([e.score for e in res.history])
    assert run[-1] == res.best.score


def test_default_popsize():
    assert default_popsize(15) == 12


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_covariance_stays_spd(seed):
    rng = np.random.default_rng(seed)
    target = rng.random(6)
    es = CMAES(np.full(6, 0.5), 0.2, rng)
    for _ in range(15):
        x = es.ask()
        es.tell(x, [-float(np.sum((es.repair(v) - target) ** 2)) for v in x])
        assert np.allclose(es.C, es.C.T)
        assert np.linalg.eigvalsh(es.C).min() > 0 and es.sigma > 0


def test_out_of_box_samples_are_penalised():
    es = CMAES(np.full(2, 0.99), 0.5, np.random.default_rng(0), popsize=8)
    for _ in range(30):
        x = es.ask()
        es.tell(x, [float(np.sum(es.repair(v))) for v in x])
    assert np.all(es.mean <= 1.0 + 0.05)


def test_degenerate_covariance_restarts():
    es = CMAES(np.full(3, 0.5), 0.1, np.random.default_rng(0))
    es.C = np.diag([1.0, 1.0, 0.0])
    es._decompose()
    assert es.restarts == 1 and np.array_equal(es.C, np.eye(3)) and es.sigma == 0.1


def test_cmaes_zero_budget_returns_start():
    res = cmaes_phase(sphere, np.full(4, 0.3), 0, np.random.default_rng(0), start_score=-0.16)
    assert res.history == [] and np.array_equal(res.best.x, np.full(4, 0.3)) and res.best.score == -0.16


def test_cmaes_low_dimensional_sphere():
    res = cmaes_phase(sphere, np.full(4, 0.2), 300, np.random.default_rng(5), sigma=0.1)
    assert res.best.score > -1e-4
    assert all(np.all((e.x >= 0) & (e.x <= 1)) for e in res.history)


def test_cmaes_is_seeded():
    a = cmaes_phase(sphere, np.full(5, 0.3), 40, np.random.default_rng(7))
    b = cmaes_phase(sphere, np.full(5, 0.3), 40, np.random.default_rng(7))
    assert [e.score for e in a.history] == [e.score for e in b.history]


def test_ties_keep_sample_order():
    es = CMAES(np.zeros(2), 0.1, np.random.default_rng(0), popsize=4)
    x = np.array([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3], [0.4, 0.4]])
    es.tell(x, [1.0, 1.0, 1.0, 1.0])
    # equal scores: the first mu samples are selected in order
    w = es.weights
    assert np.allclose(es.mean, w @ x[:2])
