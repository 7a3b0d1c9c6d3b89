"""Benchmark-instance tests: kernel rows and expected costs against
brute-force enumeration oracles, action decoding, and the walk builders."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

import _oracles as orc
from momentagg import (
    ControlledMdp,
    ResourceLimitError,
    exact_value,
    local_moments,
)
from momentagg.benchmarks import (
    HospitalOverflowMdp,
    JointReplenishmentMdp,
    JrpParams,
    build_hospital,
    build_jrp,
    build_reflecting_rw,
    build_simple_rw,
    build_two_point_chain,
    hospital_2ward,
    hospital_3ward,
    hospital_4ward,
    jrp_large,
    jrp_small,
    load_mrp,
    save_mrp,
)


def _jrp_tiny(widen=False):
    # 14 x 14 box: small enough to exercise everything exhaustively
    return JointReplenishmentMdp(
        JrpParams(
            demand_low=(0, 1),
            demand_high=(2, 3),
            holding=(1.0, 2.0),
            backorder=(9.0, 7.0),
            minor_cost=(4.0, 3.0),
            major_cost=11.0,
            truck_capacity=3,
            lower=(-5, -5),
            upper=(8, 8),
            discount=0.95,
            widen_orders=widen,
        )
    )


def _row_as_dict(mdp, i, a):
    cols, probs = mdp.kernel_row(i, a)
    out = {}
    for c, p in zip(cols, probs):
        key = tuple(mdp.lattice.to_coords(int(c)))
        out[key] = out.get(key, 0.0) + p
    return out


# ---------------------------------------------------------------------------
# instance sizes
# ---------------------------------------------------------------------------

def test_benchmark_state_counts():
    assert build_jrp(jrp_small()).lattice.size == orc.N_JRP_SMALL
    assert build_jrp(jrp_large()).lattice.size == orc.N_JRP_LARGE
    assert build_hospital(hospital_2ward()).lattice.size == orc.N_HOSPITAL_2
    assert build_hospital(hospital_3ward()).lattice.size == orc.N_HOSPITAL_3
    assert build_hospital(hospital_4ward()).lattice.size == orc.N_HOSPITAL_4


def test_jrp_params_validation():
    good = jrp_small()
    with pytest.raises(ValueError, match="two items"):
        JrpParams(
            demand_low=(0,), demand_high=(1,), holding=(1,), backorder=(1,),
            minor_cost=(1,), major_cost=1, truck_capacity=1,
            lower=(0,), upper=(3,),
        )
    with pytest.raises(ValueError, match="demand bounds"):
        JrpParams(
            demand_low=(0, 2), demand_high=(1, 1), holding=good.holding,
            backorder=good.backorder, minor_cost=good.minor_cost,
            major_cost=good.major_cost, truck_capacity=good.truck_capacity,
            lower=good.lower, upper=good.upper,
        )


# ---------------------------------------------------------------------------
# joint replenishment
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("widen", [False, True])
def test_jrp_kernel_rows_match_enumeration(widen):
    mdp = _jrp_tiny(widen)
    ranges = ((0, 2), (1, 3))
    rng = np.random.default_rng(7)
    for i in rng.integers(0, mdp.lattice.size, 25):
        i = int(i)
        I = tuple(mdp.lattice.to_coords(i))
        for a in rng.integers(0, mdp.n_actions(i), 4):
            q = mdp.action_quantities(i, int(a))
            expect = orc.jrp_kernel_row(I, q, ranges, mdp.lattice.lower)
            got = _row_as_dict(mdp, i, int(a))
            assert set(got) == set(expect)
            for nxt in expect:
                assert got[nxt] == pytest.approx(expect[nxt], abs=1e-12)


@pytest.mark.parametrize("widen", [False, True])
def test_jrp_costs_match_enumeration(widen):
    mdp = _jrp_tiny(widen)
    p = mdp.params
    ranges = ((0, 2), (1, 3))
    rng = np.random.default_rng(8)
    for i in rng.integers(0, mdp.lattice.size, 25):
        i = int(i)
        I = tuple(mdp.lattice.to_coords(i))
        for a in rng.integers(0, mdp.n_actions(i), 4):
            q = mdp.action_quantities(i, int(a))
            expect = orc.jrp_expected_cost(
                I, q, ranges, mdp.lattice.lower,
                p.holding, p.backorder, p.minor_cost, p.major_cost,
                p.truck_capacity,
            )
            assert mdp.action_cost(i, int(a)) == pytest.approx(expect, rel=1e-12)


def test_jrp_action_space():
    mdp = _jrp_tiny()
    up = mdp.lattice.upper
    for i in (0, 57, mdp.lattice.size - 1):
        I = mdp.lattice.to_coords(i)
        assert mdp.n_actions(i) == (up[0] - I[0] + 1) * (up[1] - I[1] + 1)
        assert mdp.action_quantities(i, 0) == (0, 0)
        top = mdp.n_actions(i) - 1
        q1, q2 = mdp.action_quantities(i, top)
        assert (I[0] + q1, I[1] + q2) == tuple(up)


def test_jrp_widened_action_space():
    mdp = _jrp_tiny(widen=True)
    up, i = mdp.lattice.upper, 0
    I = mdp.lattice.to_coords(i)
    # ordering up to u_i - I_i + min demand is allowed when widened
    assert mdp.n_actions(i) == (up[0] - I[0] + 1) * (up[1] - I[1] + 1 + 1)


def test_jrp_zero_demand_no_order_is_absorbing():
    mdp = JointReplenishmentMdp(
        JrpParams(
            demand_low=(0, 0),
            demand_high=(0, 0),
            holding=(2.0, 3.0),
            backorder=(11.0, 13.0),
            minor_cost=(4.0, 3.0),
            major_cost=10.0,
            truck_capacity=2,
            lower=(-3, -3),
            upper=(3, 3),
        )
    )
    for I in [(-2, 1), (0, 0), (3, -3)]:
        i = mdp.lattice.to_index(I)
        row = _row_as_dict(mdp, i, 0)
        assert row == {I: pytest.approx(1.0)}
        expect = (
            2.0 * max(I[0], 0) + 11.0 * max(-I[0], 0)
            + 3.0 * max(I[1], 0) + 13.0 * max(-I[1], 0)
        )
        assert mdp.action_cost(i, 0) == pytest.approx(expect)


def test_jrp_greedy_matches_generic_sweep():
    mdp = _jrp_tiny()
    rng = np.random.default_rng(9)
    W = rng.random(mdp.lattice.size) * 50.0
    idx = rng.integers(0, mdp.lattice.size, 40)
    actions, qvals = mdp.greedy_at(idx, W)
    ref_actions, ref_qvals = ControlledMdp.greedy_at(mdp, idx, W)
    assert np.array_equal(actions, ref_actions)
    assert_allclose(qvals, ref_qvals, atol=1e-9)


def test_jrp_induced_matches_generic():
    mdp = _jrp_tiny()
    rng = np.random.default_rng(10)
    policy = np.array(
        [rng.integers(0, mdp.n_actions(i)) for i in range(mdp.lattice.size)],
        dtype=np.int64,
    )
    P, c = mdp.induced(policy)
    P_ref, c_ref = ControlledMdp.induced(mdp, policy)
    assert_allclose(P.toarray(), P_ref.toarray(), atol=1e-13)
    assert_allclose(c, c_ref, atol=1e-10)


# ---------------------------------------------------------------------------
# hospital overflow
# ---------------------------------------------------------------------------

def test_ward_matrix_matches_enumeration():
    mdp = build_hospital(hospital_2ward())
    p = mdp.params
    T = mdp.T[0]
    assert_allclose(T.sum(axis=1), 1.0, atol=1e-12)
    for w in (0, 5, 12, 30, 42):
        expect = orc.hospital_ward_row(
            w, p.beds[0], p.service_probs[0], p.arrival_rates[0], p.caps[0]
        )
        assert_allclose(T[w], expect, atol=1e-13)


def test_hospital_actions_match_bruteforce():
    mdp = build_hospital(hospital_2ward())
    beds = np.asarray(mdp.params.beds)
    cap = np.asarray(mdp.params.caps)
    for x in [(0, 0), (14, 9), (20, 3), (13, 13), (42, 0)]:
        i = mdp.lattice.to_index(x)
        moves, posts, costs = mdp._actions(i)
        expect = orc.hospital_actions_bruteforce(np.asarray(x), beds, cap)
        assert len(moves) == len(expect)
        for u, u_ref in zip(moves, expect):
            assert np.array_equal(u, u_ref)
        # posts transcribe the routing arithmetic
        for a, u in enumerate(moves):
            post = orc.hospital_post_action(x, u)
            assert posts[a] == mdp.lattice.to_index(post)


def test_hospital_3ward_action_order():
    mdp = build_hospital(hospital_3ward())
    x = (14, 8, 12)
    i = mdp.lattice.to_index(x)
    moves, _, _ = mdp._actions(i)
    expect = orc.hospital_actions_bruteforce(
        np.asarray(x), np.asarray(mdp.params.beds), np.asarray(mdp.params.caps)
    )
    assert len(moves) == len(expect)
    assert all(np.array_equal(u, v) for u, v in zip(moves, expect))


def test_hospital_nothing_waiting_single_action():
    mdp = build_hospital(hospital_2ward())
    i = mdp.lattice.to_index((4, 11))  # under the bed counts everywhere
    assert mdp.n_actions(i) == 1
    assert mdp.action_cost(i, 0) == 0.0
    assert np.all(mdp.routing_matrix(i, 0) == 0)


def test_hospital_boarding_cost():
    mdp = build_hospital(hospital_2ward())
    i = mdp.lattice.to_index((15, 12))  # 3 waiting at ward 0, no free beds
    assert mdp.n_actions(i) == 1
    assert mdp.action_cost(i, 0) == pytest.approx(3 * mdp.params.holding[0])


def test_hospital_kernel_row_factorizes():
    mdp = build_hospital(hospital_2ward())
    x = (16, 4)
    i = mdp.lattice.to_index(x)
    a = 2
    post = orc.hospital_post_action(x, mdp.routing_matrix(i, a))
    dense = np.zeros(mdp.lattice.size)
    cols, probs = mdp.kernel_row(i, a)
    dense[cols] = probs
    expect = np.outer(mdp.T[0][post[0]], mdp.T[1][post[1]]).ravel()
    assert_allclose(dense, expect, atol=1e-14)


def test_hospital_greedy_matches_generic_sweep():
    mdp = build_hospital(hospital_2ward())
    rng = np.random.default_rng(11)
    W = rng.random(mdp.lattice.size) * 100.0
    idx = rng.integers(0, mdp.lattice.size, 30)
    actions, qvals = mdp.greedy_at(idx, W)
    ref_actions, ref_qvals = ControlledMdp.greedy_at(mdp, idx, W)
    assert np.array_equal(actions, ref_actions)
    assert_allclose(qvals, ref_qvals, atol=1e-9)


def test_hospital_induced_consistent_with_apply():
    mdp = build_hospital(hospital_2ward())
    policy = np.zeros(mdp.lattice.size, dtype=np.int64)
    P, c = mdp.induced(policy)
    apply_P, c2 = mdp.induced_apply(policy)
    f = np.random.default_rng(12).random(mdp.lattice.size)
    assert_allclose(P.apply(f), apply_P(f), atol=1e-10)
    assert_allclose(c, c2)
    assert_allclose(np.asarray(P.csr.sum(axis=1)).ravel(), 1.0, atol=1e-9)


def test_hospital_large_induced_guard():
    mdp = build_hospital(hospital_3ward())
    with pytest.raises(ResourceLimitError, match="induced_apply"):
        mdp.induced(np.zeros(mdp.lattice.size, dtype=np.int64))


# ---------------------------------------------------------------------------
# random walks
# ---------------------------------------------------------------------------

def test_simple_rw_structure_and_value():
    n = 20
    mrp = build_simple_rw(n)
    P = mrp.P.toarray()
    assert P[0, 0] == 1.0 and P[n, n] == 1.0
    assert P[5, 4] == 0.5 and P[5, 6] == 0.5
    assert_allclose(mrp.cost, np.arange(n + 1))
    x = np.arange(n + 1)
    assert_allclose(exact_value(mrp), x / (1.0 - 0.9), atol=1e-8)
    mom = local_moments(mrp)
    assert_allclose(mom.mu[1:-1], 0.0, atol=1e-12)  # martingale interior


def test_simple_rw_reflecting_variant():
    mrp = build_simple_rw(6, absorbing=False)
    P = mrp.P.toarray()
    assert P[0, 1] == 1.0 and P[6, 5] == 1.0


def test_two_point_chain_moments():
    n = 10
    two = build_two_point_chain(n)
    P = two.P.toarray()
    x = 3
    assert P[x, n] == pytest.approx(x / n)
    assert P[x, 0] == pytest.approx(1 - x / n)
    mom = local_moments(two)
    assert_allclose(mom.mu.ravel(), 0.0, atol=1e-12)
    states = np.arange(n + 1.0)
    assert_allclose(
        mom.sigma2.reshape(-1), n * states - states**2, atol=1e-10
    )


def test_two_point_value_equals_walk_value():
    walk = build_simple_rw(30)
    two = build_two_point_chain(30)
    assert_allclose(exact_value(two), exact_value(walk), atol=1e-7)


def test_reflecting_rw_seeded():
    mrp = build_reflecting_rw(50, seed=3)
    assert mrp.lattice.lower[0] == 1 and mrp.lattice.upper[0] == 50
    P = mrp.P.toarray()
    assert P[0, 1] == 1.0 and P[-1, -2] == 1.0
    up = 0.5 - 0.1 * np.random.default_rng(3).random(48)
    assert_allclose(np.diag(P, 1)[1:], up, atol=1e-15)
    assert_allclose(mrp.cost, np.arange(1, 51.0) ** 2)
    again = build_reflecting_rw(50, seed=3)
    assert_allclose(P, again.P.toarray())
    other = build_reflecting_rw(50, seed=4)
    assert not np.allclose(P, other.P.toarray())


def test_walk_builders_validate_size():
    with pytest.raises(ValueError):
        build_simple_rw(1)
    with pytest.raises(ValueError):
        build_two_point_chain(1)
    with pytest.raises(ValueError):
        build_reflecting_rw(2, seed=0)


# ---------------------------------------------------------------------------
# save / load
# ---------------------------------------------------------------------------

def test_mrp_round_trip(tmp_path):
    mrp = build_reflecting_rw(40, seed=9)
    path = tmp_path / "walk.npz"
    save_mrp(path, mrp)
    back = load_mrp(path)
    assert back.lattice == mrp.lattice
    assert back.discount == mrp.discount
    assert_allclose(back.cost, mrp.cost)
    assert_allclose(back.P.toarray(), mrp.P.toarray())
    assert_allclose(exact_value(back), exact_value(mrp), atol=1e-9)
