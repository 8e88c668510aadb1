import itertools
import math

import numpy as np
import pytest

from conftest import all_configs, brute_conditionals, ising_table, random_ising_terms, rel_err
from qebm.ebm import conditional
from qebm.errors import ConfigError
from qebm.families import NeuralLocal, PolyLocal, SymLocal
from qebm.povm import ProbTable, SampleSet, build_povm, outcome_distribution, sample_outcomes
from qebm.qsim import build_hamiltonian, ghz_family, thermal_state, tim_chain
from qebm.screen import (
    FitConfig,
    fit_model,
    fit_spin,
    is_loss,
    is_loss_empirical,
    is_loss_exact,
    worker_count,
)


def _fd_loss_grad(local, rows, w, eps=1e-5):
    theta = local.get_params()
    g = np.empty_like(theta)
    for k in range(theta.size):
        d = np.zeros_like(theta)
        d[k] = eps
        local.set_params(theta + d)
        lp = is_loss(local, rows, w)[0]
        local.set_params(theta - d)
        lm = is_loss(local, rows, w)[0]
        g[k] = (lp - lm) / (2 * eps)
    local.set_params(theta)
    return g


def test_zero_params_loss_is_one():
    rng = np.random.default_rng(0)
    s = SampleSet(4, 3, rng.integers(0, 3, (50, 4)))
    for local in (PolyLocal(4, 3, 1, 2), SymLocal(4, 3, 1)):
        assert is_loss_empirical(local, s)[0] == 1.0
    t = ProbTable(3, 2, np.full(8, 1 / 8))
    assert is_loss_exact(PolyLocal(3, 2, 0, 3), t)[0] == pytest.approx(1.0, abs=1e-15)


def test_single_sample_loss():
    local = PolyLocal(2, 2, 0, 2)
    local.coef[1] = 0.5
    s = SampleSet(2, 2, np.array([[0, 0]]))  # s_u h = +0.5
    assert is_loss_empirical(local, s)[0] == pytest.approx(math.exp(-0.5), rel=1e-15)
    assert math.exp(-0.5) == pytest.approx(0.60653, abs=5e-6)


def test_exact_loss_at_truth_is_stationary():
    table = ising_table(2, {(0, 1): 0.5})
    local = PolyLocal(2, 2, 0, 2)
    local.coef[1] = 0.5
    loss, g = is_loss_exact(local, table)
    assert np.linalg.norm(g) < 1e-10
    assert loss == pytest.approx(1 / math.cosh(0.5), abs=1e-14)


@pytest.mark.parametrize("family", ["poly", "sym", "nn"])
def test_loss_gradient_finite_differences(family):
    rng = np.random.default_rng(42)
    for _ in range(20):
        n, q = int(rng.integers(2, 5)), int(rng.choice([2, 3, 4]))
        u = int(rng.integers(n))
        if family == "poly":
            local = PolyLocal(n, q, u, 3, rng.normal(scale=0.5, size=PolyLocal(n, q, u, 3).n_params))
        elif family == "sym":
            local = SymLocal(n, q, u)
            local.set_params(rng.normal(size=local.n_params))
        else:
            local = NeuralLocal(n, q, u, depth=2, width=5, seed=int(rng.integers(1 << 30)))
        rows = rng.integers(0, q, (40, n))
        w = rng.random(40)
        w /= w.sum()
        _, g, _ = is_loss(local, rows, w)
        assert rel_err(g, _fd_loss_grad(local, rows, w)) < (1e-4 if family == "nn" else 1e-5)


def test_clipping_is_counted():
    local = PolyLocal(2, 2, 0, 2)
    local.coef[1] = -80.0
    loss, g, clips = is_loss(local, np.array([[0, 0], [1, 0]]), np.array([0.5, 0.5]))
    assert clips == 2
    assert np.isfinite(loss) and np.all(np.isfinite(g))


@pytest.mark.parametrize("family", ["poly", "sym"])
def test_loss_is_midpoint_convex(family):
    rng = np.random.default_rng(7)
    n, q = 4, 4
    table = outcome_distribution(thermal_state(build_hamiltonian(tim_chain(n, -1.0, 1.0)), 1.0),
                                 build_povm("tetrahedral"))
    rows, w = table.support()
    local = PolyLocal(n, q, 1, 3) if family == "poly" else SymLocal(n, q, 1)
    for _ in range(100):
        a, b = rng.normal(size=(2, local.n_params))
        vals = []
        for theta in (a, b, 0.5 * (a + b)):
            local.set_params(theta)
            vals.append(is_loss(local, rows, w)[0])
        assert vals[2] <= 0.5 * (vals[0] + vals[1]) + 1e-10


# -- exact and empirical fits -------------------------------------------------


def test_exact_fit_recovers_coupling():
    local, report = fit_spin("poly", 0, ising_table(2, {(0, 1): 0.5}), FitConfig(L=2))
    assert abs(local.coupling((1,)) - 0.5) < 1e-4
    assert report.converged and report.loss > 0


def test_empirical_fit_calibration():
    table = ising_table(2, {(0, 1): 0.5})
    m = 10**5
    hits = 0
    for seed in range(40):
        local, _ = fit_spin("poly", 0, sample_outcomes(table, m, seed), FitConfig(L=2))
        hits += abs(local.coupling((1,)) - 0.5) < 5 / math.sqrt(m)
    assert hits / 40 >= 0.95


def test_sym_fit_on_ghz_table():
    table = outcome_distribution(ghz_family(4, "plus"), build_povm("tetrahedral"))
    model, reports = fit_model("sym", table, FitConfig(family="sym"), symmetry="permutation")
    assert len(reports) == 1 and len(model.parameter_blocks()) == 1
    cfgs = table.configs()
    for u in range(4):
        err = np.max(np.abs(conditional(model, u, cfgs) - brute_conditionals(table, u)))
        assert err < 1e-6
    # invariance of each conditional under permutations of the other spins
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.integers(0, 4, 4)
        u = int(rng.integers(4))
        rest = [j for j in range(4) if j != u]
        y = x.copy()
        y[rest] = x[rng.permutation(rest)]
        np.testing.assert_array_equal(conditional(model, u, x), conditional(model, u, y))


def _walsh_coefficients(table, u):
    """Exact Ising coefficients of h_u(rest) = 1/2 log(P(+1|rest)/P(-1|rest))."""
    n = table.n
    others = [j for j in range(n) if j != u]
    cfgs = table.configs()
    s = 1 - 2 * cfgs.astype(float)
    cond = brute_conditionals(table, u)
    h = 0.5 * np.log(cond[:, 0] / cond[:, 1])
    coef = {}
    for r in range(n):
        for K in itertools.combinations(others, r):
            coef[K] = float(np.mean(h * np.prod(s[:, list(K)], axis=1)))
    return coef


def test_expressivity_full_order_poly():
    rng = np.random.default_rng(99)
    for _ in range(10):
        p = rng.random(8) + 0.05
        table = ProbTable(3, 2, p / p.sum())
        for u in range(3):
            local = PolyLocal(3, 2, u, 3)
            for K, c in _walsh_coefficients(table, u).items():
                local.coef[local.subsets.index(K)] = c
            f = local.value(table.configs())
            pred = np.exp(f) / np.exp(f).sum(axis=1, keepdims=True)
            np.testing.assert_allclose(pred, brute_conditionals(table, u), atol=1e-8)


def test_oracle_equivalence_random_systems():
    rng = np.random.default_rng(2023)
    for _ in range(50):
        n = int(rng.integers(2, 5))
        table = ising_table(n, random_ising_terms(n, rng))
        # rarely visited configurations barely move the loss, so solve tighter than the default
        model, _ = fit_model("poly", table, FitConfig(L=n, grad_tol=1e-9))
        cfgs = table.configs()
        for u in range(n):
            assert np.max(np.abs(conditional(model, u, cfgs) - brute_conditionals(table, u))) < 1e-6


def test_monotone_refinement():
    rho = thermal_state(build_hamiltonian(tim_chain(5, -1.0, 1.0)), 1.0)
    table = outcome_distribution(rho, build_povm("computational"))
    for u in range(5):
        _, r2 = fit_spin("poly", u, table, FitConfig(L=2))
        _, r3 = fit_spin("poly", u, table, FitConfig(L=3))
        assert r3.loss <= r2.loss + 1e-12


def test_entropic_mirror_matches_unconstrained_when_radius_is_loose():
    table = ising_table(3, {(0, 1): 0.5, (1, 2): -0.3, (0,): 0.2})
    gd, _ = fit_spin("poly", 1, table, FitConfig(L=2))
    md, rep = fit_spin("poly", 1, table, FitConfig(L=2, optimizer="entropic-mirror", l1_radius=5.0,
                                                    max_epochs=20000))
    np.testing.assert_allclose(md.get_params(), gd.get_params(), atol=1e-3)
    tight, _ = fit_spin("poly", 1, table, FitConfig(L=2, optimizer="entropic-mirror", l1_radius=0.3))
    assert np.abs(tight.get_params()).sum() <= 0.3 + 1e-9


def test_nn_fit_improves_loss():
    table = ising_table(3, {(0, 1): 0.8, (1, 2): -0.5})
    data = sample_outcomes(table, 5000, seed=1)
    cfg = FitConfig(family="nn", depth=2, width=8, max_epochs=30, minibatch=250)
    local, rep = fit_spin("nn", 0, data, cfg)
    init = NeuralLocal(3, 2, 0, 2, 8, seed=[0, 0])
    assert rep.loss < is_loss_empirical(init, data)[0]
    assert rep.optimizer == "adam"


def test_fit_config_validation():
    with pytest.raises(ConfigError):
        FitConfig(family="rbm").validate()
    with pytest.raises(ConfigError):
        FitConfig(family="nn", optimizer="gd-backtracking").validate()
    with pytest.raises(ConfigError):
        FitConfig(optimizer="entropic-mirror").validate()
    with pytest.raises(ConfigError):
        FitConfig(family="nn", minibatch=500).validate(m=100)
    with pytest.raises(ConfigError):
        FitConfig(learning_rate=0).validate()
    with pytest.raises(ConfigError):
        FitConfig.from_dict({"family": "poly", "bogus": 1})


def test_symmetry_family_pairing():
    table = ising_table(3, {(0, 1): 0.5})
    with pytest.raises(ConfigError):
        fit_model("poly", table, FitConfig(), symmetry="permutation")
    with pytest.raises(ConfigError):
        fit_model("sym", table, FitConfig(family="sym"), symmetry="translation")
    model, reports = fit_model("poly", table, FitConfig(), symmetry="none")
    assert [r.spin for r in reports] == [0, 1, 2]


def test_translation_on_uniform_ring():
    n = 5
    terms = {(i, (i + 1) % n): 0.4 for i in range(n)}
    table = ising_table(n, {tuple(sorted(K)): J for K, J in terms.items()})
    model, reports = fit_model("poly", table, FitConfig(L=2), symmetry="translation")
    assert len(reports) == 1 and len(model.parameter_blocks()) == 1
    couplings = [model.spins[u].value(np.eye(n, dtype=int)[(u + 1) % n])[0][0] for u in range(n)]
    np.testing.assert_array_equal(couplings, couplings[0])
    cfgs = table.configs()
    for u in range(n):
        np.testing.assert_allclose(conditional(model, u, cfgs), brute_conditionals(table, u), atol=1e-6)


def test_determinism_of_reports():
    data = sample_outcomes(ising_table(3, {(0, 1): 0.5, (1, 2): 0.2}), 2000, seed=5)
    strip = lambda rs: [{**r.__dict__, "wall_time": 0} for r in rs]
    _, a = fit_model("poly", data, FitConfig(L=3))
    _, b = fit_model("poly", data, FitConfig(L=3))
    assert strip(a) == strip(b)


def test_parallel_fit_matches_serial(monkeypatch):
    data = sample_outcomes(ising_table(3, {(0, 1): 0.5, (1, 2): 0.2}), 2000, seed=5)
    monkeypatch.setenv("QEBM_THREADS", "1")
    serial, _ = fit_model("poly", data, FitConfig(L=2))
    monkeypatch.setattr("qebm.screen.worker_count", lambda tasks: 2)
    parallel, _ = fit_model("poly", data, FitConfig(L=2))
    for a, b in zip(serial.spins, parallel.spins):
        np.testing.assert_array_equal(a.get_params(), b.get_params())


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("QEBM_THREADS", "1")
    assert worker_count(10) == 1
    monkeypatch.setenv("QEBM_THREADS", "x")
    with pytest.raises(ConfigError):
        worker_count(10)
