import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_jacobian, rel_err
from qebm.errors import ConfigError
from qebm.families import (
    FlipSymmetrized,
    NeuralLocal,
    PolyLocal,
    SymLocal,
    centered_onehot,
    compositions,
    count_vector,
    make_local,
    nn_param_count,
    nn_value_grad,
    poly_param_count,
    poly_value_grad,
    swish,
    swish_grad,
    sym_table_size,
    sym_value_grad,
)


def test_centered_onehot():
    np.testing.assert_allclose(centered_onehot(np.array([2]), 4), [[-0.25, -0.25, 0.75, -0.25]])
    np.testing.assert_allclose(centered_onehot(np.arange(3), 3).sum(axis=-1), 0, atol=1e-15)


def test_swish_values():
    assert swish(0.0) == 0.0
    assert swish(10.0) == pytest.approx(10 / (1 + np.exp(-10)), rel=1e-15)
    assert swish(10.0) == pytest.approx(9.99955, abs=1e-5)
    x = np.linspace(-6, 6, 101)
    np.testing.assert_allclose(swish_grad(x), (swish(x + 1e-6) - swish(x - 1e-6)) / 2e-6, atol=1e-8)


def test_poly_parameter_counts():
    # count monomials directly: subsets of the n-1 neighbours of size < L
    for n, q, L in [(4, 2, 2), (5, 2, 3), (4, 3, 2), (5, 4, 3), (30, 2, 2)]:
        direct = sum(1 for r in range(L) for _ in itertools.combinations(range(n - 1), r)) if q == 2 else \
            sum(q**r * q for r in range(L) for _ in itertools.combinations(range(n - 1), r))
        assert poly_param_count(n, q, L) == direct == PolyLocal(n, q, 0, L).n_params
    assert poly_param_count(30, 2, 2) == 30


def test_ising_poly_value():
    local = PolyLocal(3, 2, 0, 3)
    local.coef[local.subsets.index((1,))] = 0.5
    local.coef[local.subsets.index((1, 2))] = -0.25
    # sigma_1 = +1 (symbol 0), sigma_2 = -1 (symbol 1): h = 0.5 + 0.25
    np.testing.assert_allclose(local.value([0, 0, 1])[0], [0.75, -0.75])
    assert local.coupling((2, 1)) == -0.25


def test_nn_parameter_count_example():
    # input 6, width 8, depth 2, output 4
    assert nn_param_count(6, 8, 2, 4) == (6 * 8 + 8) + (8 * 8 + 8) + (8 * 4 + 4) == 164
    # 7 spins pm1-encoded: 6 inputs per local energy, q=2 outputs
    assert NeuralLocal(7, 2, 0, depth=2, width=8).n_params == (6 * 8 + 8) + (8 * 8 + 8) + (8 * 2 + 2)
    # raw encoding on q=4 also feeds one input per neighbour
    assert NeuralLocal(7, 4, 0, depth=2, width=8, encoding="raw").n_params == 164


def test_nn_encoding_rules():
    with pytest.raises(ConfigError):
        NeuralLocal(3, 4, 0, encoding="pm1")
    with pytest.raises(ConfigError):
        NeuralLocal(3, 2, 0, encoding="bogus")
    assert NeuralLocal(3, 4, 0).encoding == "onehot"
    assert NeuralLocal(3, 2, 0).encoding == "pm1"


def test_count_vector_example():
    # symbols (1,1,2,4,4,4) in 1-based form
    x = np.array([1, 1, 2, 4, 4, 4]) - 1
    np.testing.assert_array_equal(count_vector(x, 4), [2, 1, 0, 3])


def test_symmetric_table_size():
    brute = sum(1 for c in itertools.product(range(7), repeat=4) if sum(c) == 6)
    assert brute == 84 == sym_table_size(7, 4) == len(list(compositions(6, 4)))
    assert SymLocal(7, 4).theta.shape == (84, 4)
    for n, q in [(2, 2), (5, 3), (8, 4)]:
        assert sym_table_size(n, q) == comb(n + q - 2, q - 1)


def test_sym_lookup_and_sharing():
    local = SymLocal(4, 3, 0)
    local.theta[:] = np.arange(local.theta.size).reshape(local.theta.shape)
    cfg = np.array([[2, 0, 1, 1]])
    key = tuple(count_vector(cfg[0, 1:], 3))
    np.testing.assert_allclose(local.value(cfg)[0], local.theta[local.keys.index(key)])
    other = local.for_spin(2)
    cfg2 = np.array([[0, 1, 2, 1]])  # neighbours of spin 2 are (0, 1, 1)
    np.testing.assert_allclose(other.value(cfg2)[0], local.theta[local.keys.index((1, 2, 0))])
    local.set_params(np.zeros(local.n_params))
    np.testing.assert_allclose(other.value(cfg2)[0], 0)


def test_make_local_unknown_family():
    with pytest.raises(ConfigError):
        make_local("rbm", 3, 2, 0)


# -- finite-difference gradients (100 instances per family) -------------------


def _random_poly(rng):
    n, q = int(rng.integers(2, 6)), int(rng.choice([2, 3, 4]))
    local = PolyLocal(n, q, int(rng.integers(n)), int(rng.integers(1, 4)))
    local.set_params(rng.normal(size=local.n_params))
    return local


def _random_nn(rng):
    n, q = int(rng.integers(2, 6)), int(rng.choice([2, 3, 4]))
    enc = rng.choice(["onehot", "raw"] + (["pm1"] if q == 2 else []))
    return NeuralLocal(n, q, int(rng.integers(n)), depth=int(rng.integers(1, 4)), width=int(rng.integers(2, 9)),
                       encoding=str(enc), seed=int(rng.integers(1 << 30)))


def _random_sym(rng):
    n, q = int(rng.integers(2, 7)), int(rng.choice([2, 3, 4]))
    local = SymLocal(n, q, int(rng.integers(n)))
    local.set_params(rng.normal(size=local.n_params))
    return local


@pytest.mark.parametrize("maker,helper,tol", [
    (_random_poly, poly_value_grad, 1e-5),
    (_random_nn, nn_value_grad, 1e-4),
    (_random_sym, sym_value_grad, 1e-5),
])
def test_value_grad_matches_finite_differences(maker, helper, tol):
    rng = np.random.default_rng(2024)
    for _ in range(100):
        local = maker(rng)
        rest = rng.integers(0, local.q, local.n - 1)
        f, jac = helper(local, rest)
        full = np.insert(rest, local.u, 0)
        np.testing.assert_allclose(f, local.value(full)[0])
        assert rel_err(jac, fd_jacobian(local, full)) < tol


def test_flip_symmetrized_gradient_and_symmetry():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(2, 6))
        inner = NeuralLocal(n, 2, int(rng.integers(n)), depth=2, width=5, seed=int(rng.integers(1 << 30))) \
            if rng.random() < 0.5 else PolyLocal(n, 2, int(rng.integers(n)), 3, rng.normal(size=poly_param_count(n, 2, 3)))
        local = FlipSymmetrized(inner)
        x = rng.integers(0, 2, n)
        f, jac = local.value_grad(x)
        assert rel_err(jac, fd_jacobian(local, x)) < 1e-4
        # flipping every spin swaps the output labels
        np.testing.assert_allclose(local.value(1 - x)[0], f[::-1], atol=1e-12)


def test_flip_symmetrization_requires_q2():
    with pytest.raises(ConfigError):
        FlipSymmetrized(PolyLocal(3, 3, 0, 2))


def test_poly_gauge_projection_leaves_logits_unchanged():
    rng = np.random.default_rng(8)
    local = PolyLocal(4, 3, 1, 3, rng.normal(size=poly_param_count(4, 3, 3)))
    cfgs = rng.integers(0, 3, (50, 4))
    before = local.value(cfgs)
    local.project_gauge()
    after = local.value(cfgs)
    centered = lambda f: f - f.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(centered(after), centered(before), atol=1e-12)
    for K, block in local.blocks():
        for ax in range(block.ndim):
            np.testing.assert_allclose(block.sum(axis=ax), 0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 5), st.integers(2, 4))
def test_sym_invariant_under_neighbour_permutation(seed, n, q):
    rng = np.random.default_rng(seed)
    local = SymLocal(n, q, 0)
    local.set_params(rng.normal(size=local.n_params))
    x = rng.integers(0, q, n)
    y = x.copy()
    y[1:] = rng.permutation(x[1:])
    np.testing.assert_array_equal(local.value(x), local.value(y))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_shifted_view_matches_rolled_input(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    base = PolyLocal(n, 2, 0, 2, rng.normal(size=poly_param_count(n, 2, 2)))
    u = int(rng.integers(n))
    x = rng.integers(0, 2, (5, n))
    np.testing.assert_allclose(base.for_spin(u).value(x), base.value(np.roll(x, -u, axis=1)))
