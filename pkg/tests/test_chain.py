"""Chain-layer tests: stochastic matrices, values, moments, m-step tools.

Derived expectations come from the dense oracles in _oracles (power
series, brute-force row convolutions) rather than from the package.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

import _oracles as orc
from momentagg import (
    MarkovRewardProcess,
    NumericalError,
    ResourceLimitError,
    RowStochasticMatrix,
    StateLattice,
    delta_at,
    delta_f,
    exact_value,
    local_moments,
    m_step_chain,
    max_jump,
    scaled_value,
    solve_discounted,
    sup_delta,
    verify_mstep_identity,
)
from momentagg.benchmarks import build_simple_rw, build_two_point_chain


def _chain_mrp(P, c, alpha):
    lat = StateLattice([0], [P.shape[0] - 1])
    return MarkovRewardProcess(lat, RowStochasticMatrix(P), c, alpha)


# ---------------------------------------------------------------------------
# RowStochasticMatrix
# ---------------------------------------------------------------------------

def test_matrix_rejects_negative_mass():
    with pytest.raises(ValueError):
        RowStochasticMatrix([[1.5, -0.5], [0.5, 0.5]])


def test_matrix_rejects_bad_row_sum():
    with pytest.raises(ValueError, match="sum to 1"):
        RowStochasticMatrix([[0.6, 0.3], [0.5, 0.5]])


def test_tiny_entries_dropped_and_renormalized():
    eps = 1e-16
    M = RowStochasticMatrix([[1.0 - eps, eps], [0.5, 0.5]])
    assert M.nnz == 3
    cols, probs = M.row(0)
    assert np.array_equal(cols, [0])
    assert probs[0] == pytest.approx(1.0, abs=1e-15)


def test_row_sums_exact_after_construction():
    rng = np.random.default_rng(3)
    P = rng.random((40, 40))
    P /= P.sum(axis=1, keepdims=True)
    M = RowStochasticMatrix(P)
    assert_allclose(np.asarray(M.csr.sum(axis=1)).ravel(), 1.0, rtol=0, atol=1e-14)


def test_sorted_column_indices():
    M = RowStochasticMatrix.from_coo([0, 0, 1, 1], [3, 1, 0, 2], [0.5, 0.5, 0.25, 0.75], (2, 4))
    cols, _ = M.row(0)
    assert np.array_equal(cols, [1, 3])


def test_from_coo_sums_duplicates():
    # clamped boundary mass lands on the same column twice
    M = RowStochasticMatrix.from_coo([0, 0, 0], [0, 0, 1], [0.25, 0.25, 0.5], (1, 2))
    cols, probs = M.row(0)
    assert np.array_equal(cols, [0, 1])
    assert_allclose(probs, [0.5, 0.5])


def test_from_rows_and_take_rows():
    M = RowStochasticMatrix.from_rows([([2], [1.0]), ([0, 1], [0.5, 0.5])], 3)
    assert M.shape == (2, 3)
    sliced = M.take_rows([1])
    assert sliced.shape == (1, 3)
    assert_allclose(sliced.toarray(), [[0.5, 0.5, 0.0]])


def test_apply_examples():
    n = 5
    rng = np.random.default_rng(0)
    P = rng.random((n, n))
    P /= P.sum(axis=1, keepdims=True)
    M = RowStochasticMatrix(P)
    assert_allclose(M.apply(np.ones(n)), np.ones(n), atol=1e-12)
    I = RowStochasticMatrix.identity(n)
    f = rng.random(n)
    assert_allclose(I.apply(f), f)
    with pytest.raises(ValueError):
        M.apply(np.ones(n + 1))


def test_apply_matrix_operand():
    M = RowStochasticMatrix([[0.5, 0.5], [0.0, 1.0]])
    F = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert_allclose(M.apply(F), [[2.0, 3.0], [3.0, 4.0]])


def test_power_matches_bruteforce_two_step():
    P, _ = orc.random_dense_chain(11, 20)
    M = RowStochasticMatrix(P)
    assert_allclose(M.power(2).toarray(), orc.two_step_rows(P), atol=1e-12)


def test_power_of_permutation_is_identity():
    n = 6
    perm = np.roll(np.eye(n), 1, axis=1)
    M = RowStochasticMatrix(perm)
    assert_allclose(M.power(n).toarray(), np.eye(n), atol=1e-15)


def test_power_budget_guard():
    P, _ = orc.random_dense_chain(2, 30, sparsity=0.9)
    with pytest.raises(ResourceLimitError):
        RowStochasticMatrix(P).power(3, nnz_budget=10)


# ---------------------------------------------------------------------------
# MarkovRewardProcess validation
# ---------------------------------------------------------------------------

def test_mrp_validation():
    lat = StateLattice([0], [1])
    P = RowStochasticMatrix(np.eye(2))
    with pytest.raises(ValueError):
        MarkovRewardProcess(lat, P, [-1.0, 0.0], 0.9)
    with pytest.raises(ValueError):
        MarkovRewardProcess(lat, P, [np.inf, 0.0], 0.9)
    with pytest.raises(ValueError):
        MarkovRewardProcess(lat, P, [1.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        MarkovRewardProcess(lat, RowStochasticMatrix(np.eye(3)), [1.0, 1.0], 0.9)


def test_mrp_cost_is_write_locked():
    lat = StateLattice([0], [1])
    mrp = MarkovRewardProcess(lat, RowStochasticMatrix(np.eye(2)), [1.0, 2.0], 0.9)
    with pytest.raises(ValueError):
        mrp.cost[0] = 5.0


# ---------------------------------------------------------------------------
# values
# ---------------------------------------------------------------------------

def test_constant_cost_value():
    P, _ = orc.random_dense_chain(5, 30)
    mrp = _chain_mrp(P, np.ones(30), 0.9)
    assert_allclose(exact_value(mrp), 10.0, atol=1e-9)


def test_simple_rw_value_closed_form():
    mrp = build_simple_rw(20, alpha=0.9)
    x = np.arange(21.0)
    assert_allclose(exact_value(mrp), x / 0.1, atol=1e-8)


def test_value_matches_power_series_oracle():
    P, c = orc.random_dense_chain(7, 50)
    V = exact_value(_chain_mrp(P, c, 0.9))
    assert_allclose(V, orc.value_power_series(P, c, 0.9), atol=1e-8)


def test_value_residual_promise():
    P, c = orc.random_dense_chain(9, 80)
    alpha = 0.95
    V = exact_value(_chain_mrp(P, c, alpha))
    res = np.max(np.abs(c + alpha * (P @ V) - V))
    assert res <= 1e-9 * (1.0 + np.max(np.abs(c)))


def test_solve_discounted_callable_operator():
    P, c = orc.random_dense_chain(13, 40)
    V_dense = solve_discounted(P, c, 0.9)
    V_call = solve_discounted(lambda v: P @ v, c, 0.9)
    assert_allclose(V_call, V_dense, atol=1e-8)


def test_solve_discounted_rejects_bad_discount():
    with pytest.raises(ValueError):
        solve_discounted(np.eye(2), np.ones(2), 1.5)


# ---------------------------------------------------------------------------
# moments and jumps
# ---------------------------------------------------------------------------

def test_simple_rw_interior_moments():
    mrp = build_simple_rw(20, alpha=0.9)
    mom = local_moments(mrp)
    assert_allclose(mom.mu[1:-1, 0], 0.0, atol=1e-14)
    assert_allclose(mom.sigma2[1:-1, 0, 0], 1.0, atol=1e-14)
    # interior row applied to f(y)=y gives x back
    f = np.arange(21.0)
    assert_allclose(mrp.P.apply(f)[1:-1], f[1:-1], atol=1e-14)


def test_two_point_chain_moments():
    n = 20
    mrp = build_two_point_chain(n, alpha=0.9)
    mom = local_moments(mrp)
    x = np.arange(n + 1.0)
    assert_allclose(mom.mu[:, 0], 0.0, atol=1e-12)
    # E[X_1^2] = n x, so the centered second moment is n x - x^2
    assert_allclose(mom.sigma2[:, 0, 0], n * x - x**2, atol=1e-10)


def test_deterministic_shift_moments():
    lat = StateLattice((0, 0), (1, 1))
    P = np.zeros((4, 4))
    # every state steps +e1 (axis 0), clamped at the edge
    for i, (a, b) in enumerate(lat.all_states()):
        P[i, lat.to_index((min(a + 1, 1), b))] = 1.0
    mrp = MarkovRewardProcess(lat, RowStochasticMatrix(P), np.zeros(4), 0.9)
    mom = local_moments(mrp)
    assert_allclose(mom.mu[0], [1.0, 0.0])
    assert_allclose(mom.sigma2[0], [[1.0, 0.0], [0.0, 0.0]])


def test_moments_match_dense_oracle():
    states, P, c, alpha = orc.random_lattice_chain(21, (0, 0), (4, 4))
    lat = StateLattice((0, 0), (4, 4))
    mrp = MarkovRewardProcess(lat, RowStochasticMatrix(P), c, alpha)
    mom = local_moments(mrp)
    mu_ref, sig_ref = orc.dense_local_moments(P, states)
    assert_allclose(mom.mu, mu_ref, atol=1e-12)
    assert_allclose(mom.sigma2, sig_ref, atol=1e-10)


def test_centered_covariance_is_psd():
    _, P, c, alpha = orc.random_lattice_chain(22, (0, 0), (5, 5), max_jump=3)
    lat = StateLattice((0, 0), (5, 5))
    mrp = MarkovRewardProcess(lat, RowStochasticMatrix(P), c, alpha)
    mom = local_moments(mrp)
    for i in range(lat.size):
        cov = mom.sigma2[i] - np.outer(mom.mu[i], mom.mu[i])
        assert np.min(np.linalg.eigvalsh(cov)) >= -1e-10


def test_max_jump_identity_and_rw():
    lat = StateLattice([0], [9])
    ident = MarkovRewardProcess(lat, RowStochasticMatrix.identity(10), np.zeros(10), 0.9)
    assert_allclose(max_jump(ident), 0.0)
    rw = build_simple_rw(20, alpha=0.9)
    assert max_jump(rw, 10) == 1.0
    jumps = max_jump(rw)
    assert_allclose(jumps[1:-1], 1.0)
    assert jumps[0] == 0.0 and jumps[-1] == 0.0


def test_max_jump_two_point_chain():
    n = 20
    mrp = build_two_point_chain(n, alpha=0.9)
    x = 7
    assert max_jump(mrp, x) == max(x, n - x)
    assert max_jump(mrp, np.array([x])) == max(x, n - x)


def test_max_jump_blocked_path_matches():
    _, P, c, alpha = orc.random_lattice_chain(23, (0,), (30,), max_jump=4)
    lat = StateLattice([0], [30])
    mrp = MarkovRewardProcess(lat, RowStochasticMatrix(P), c, alpha)
    full = max_jump(mrp)
    small_blocks = max_jump(mrp, _block_nnz=17)
    assert_allclose(full, small_blocks)


# ---------------------------------------------------------------------------
# scaled value
# ---------------------------------------------------------------------------

def test_scaled_value_eps_zero_is_value():
    P, c = orc.random_dense_chain(31, 25)
    mrp = _chain_mrp(P, c, 0.9)
    assert_allclose(scaled_value(mrp, 0.0), exact_value(mrp), atol=1e-9)


def test_scaled_value_zero_cost():
    P, _ = orc.random_dense_chain(32, 25)
    mrp = _chain_mrp(P, np.zeros(25), 0.9)
    assert_allclose(scaled_value(mrp, 0.5), 0.0, atol=1e-12)


def test_scaled_value_matches_oracle():
    P, c = orc.random_dense_chain(33, 30)
    mrp = _chain_mrp(P, c, 0.9)
    norms = np.abs(np.arange(30.0))
    c_eps = c / (1.0 + norms) ** 0.5
    assert_allclose(
        scaled_value(mrp, 0.5), orc.value_power_series(P, c_eps, 0.9), atol=1e-8
    )


def test_scaled_value_rejects_bad_eps():
    P, c = orc.random_dense_chain(34, 10)
    with pytest.raises(ValueError):
        scaled_value(_chain_mrp(P, c, 0.9), 1.5)


# ---------------------------------------------------------------------------
# m-step utilities
# ---------------------------------------------------------------------------

def test_m_step_chain_m1_is_same_process():
    P, c = orc.random_dense_chain(41, 15)
    mrp = _chain_mrp(P, c, 0.9)
    assert m_step_chain(mrp, 1) is mrp


def test_m_step_chain_two_steps():
    P, c = orc.random_dense_chain(42, 20)
    mrp = _chain_mrp(P, c, 0.9)
    sub = m_step_chain(mrp, 2)
    assert_allclose(sub.P.toarray(), orc.two_step_rows(P), atol=1e-12)
    assert sub.discount == pytest.approx(0.81)
    rows = np.asarray(sub.P.csr.sum(axis=1)).ravel()
    assert_allclose(rows, 1.0, atol=1e-10)


def test_mstep_identity_m1_degenerates():
    P, c = orc.random_dense_chain(43, 20)
    assert verify_mstep_identity(_chain_mrp(P, c, 0.9), 1) == 0.0


@pytest.mark.parametrize("m,alpha", [(2, 0.9), (3, 0.95)])
def test_mstep_identity_small_violation(m, alpha):
    P, c = orc.random_dense_chain(44 + m, 20)
    mrp = _chain_mrp(P, c, alpha)
    assert verify_mstep_identity(mrp, m) <= 1e-8
    # agrees with the all-dense oracle
    assert verify_mstep_identity(mrp, m) == pytest.approx(
        orc.mstep_identity_violation(P, c, alpha, m), abs=1e-8
    )


# ---------------------------------------------------------------------------
# one-step deviations
# ---------------------------------------------------------------------------

def test_delta_zero_for_equal_kernels():
    P, _ = orc.random_dense_chain(51, 25)
    M = RowStochasticMatrix(P)
    f = np.random.default_rng(0).random(25)
    assert sup_delta(M, M, f) == 0.0


def test_delta_zero_for_constant_f():
    P, _ = orc.random_dense_chain(52, 25)
    Q, _ = orc.random_dense_chain(53, 25)
    assert sup_delta(RowStochasticMatrix(P), RowStochasticMatrix(Q), np.full(25, 3.7)) <= 1e-12


def test_delta_first_moment_example_pair():
    # the absorbing walk and its two-point reduction share first moments
    n = 20
    walk = build_simple_rw(n, alpha=0.9)
    two = build_two_point_chain(n, alpha=0.9)
    f = np.arange(n + 1.0)
    report = delta_f(walk.P, two.P, f)
    assert report.sup <= 1e-12
    assert report.per_state.shape == (n + 1,)


def test_delta_rejects_matrix_valued_f():
    P, _ = orc.random_dense_chain(54, 10)
    M = RowStochasticMatrix(P)
    with pytest.raises(ValueError):
        delta_at(M, M, np.ones((10, 2)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_lemma1_value_perturbation_bound(seed):
    """|V - V~|_inf <= alpha/(1-alpha) (delta_V + delta_V~) on random pairs."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 60))
    P, c = orc.random_dense_chain(seed, n)
    Q, _ = orc.random_dense_chain(seed + 1_000_000, n)
    alpha = float(rng.choice([0.8, 0.9, 0.95]))
    V = orc.dense_value(P, c, alpha)
    Vt = orc.dense_value(Q, c, alpha)
    lhs = np.max(np.abs(V - Vt))
    MP, MQ = RowStochasticMatrix(P), RowStochasticMatrix(Q)
    rhs = alpha / (1 - alpha) * (sup_delta(MP, MQ, V) + sup_delta(MP, MQ, Vt))
    assert lhs <= rhs + 1e-8
