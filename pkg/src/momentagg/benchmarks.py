"""Benchmark problem generators.

Three families:

* joint replenishment — two items share a truck; order decisions pay
  per-item fixed costs plus a major cost per truck, inventory pays
  holding/backorder on the post-demand level (``build_jrp``);
* hospital overflow routing — wards route waiting patients to other
  wards' free beds, paying per-transfer and per-boarding costs, with
  binomial discharges and Poisson (cap-clamped) arrivals
  (``build_hospital``);
* random walks — the absorbing walk and its two-point reduction, and a
  seeded reflecting walk with downward drift (``build_simple_rw``,
  ``build_two_point_chain``, ``build_reflecting_rw``).

Any probability mass that a transition would push outside the state box
is clamped to the nearest boundary state, which keeps every row exactly
stochastic.  ``save_mrp``/``load_mrp`` round-trip generated processes
through a compressed ``.npz`` container.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .chain import MarkovRewardProcess, ResourceLimitError, RowStochasticMatrix
from .control import ControlledMdp
from .lattice import StateLattice

__all__ = [
    "JrpParams",
    "HospitalParams",
    "jrp_small",
    "jrp_large",
    "hospital_2ward",
    "hospital_3ward",
    "hospital_4ward",
    "build_jrp",
    "build_hospital",
    "JointReplenishmentMdp",
    "HospitalOverflowMdp",
    "build_simple_rw",
    "build_two_point_chain",
    "build_reflecting_rw",
    "save_mrp",
    "load_mrp",
]


# ---------------------------------------------------------------------------
# joint replenishment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JrpParams:
    """Two-item joint replenishment instance.

    Demands are independent discrete uniforms on
    [demand_low[i], demand_high[i]].  With ``widen_orders`` the feasible
    order quantity extends to u_i - I_i + min demand (the inventory cap
    itself stays at u_i).
    """

    demand_low: tuple
    demand_high: tuple
    holding: tuple
    backorder: tuple
    minor_cost: tuple
    major_cost: float
    truck_capacity: int
    lower: tuple
    upper: tuple
    discount: float = 0.99
    widen_orders: bool = False

    def __post_init__(self):
        if len(self.demand_low) != 2 or len(self.demand_high) != 2:
            raise ValueError("two items expected")
        for lo, hi in zip(self.demand_low, self.demand_high):
            if lo < 0 or lo != int(lo) or hi != int(hi) or hi < lo:
                raise ValueError("demand bounds must be nonnegative integers")
        if self.truck_capacity < 1:
            raise ValueError("truck capacity must be >= 1")


def jrp_small():
    """Small instance: light uniform demands, truck of 6, box [-30, 40]^2."""
    return JrpParams(
        demand_low=(0, 0),
        demand_high=(5, 3),
        holding=(1.0, 1.0),
        backorder=(19.0, 19.0),
        minor_cost=(40.0, 10.0),
        major_cost=75.0,
        truck_capacity=6,
        lower=(-30, -30),
        upper=(40, 40),
        discount=0.99,
        widen_orders=False,
    )


def jrp_large():
    """Large instance: heavy demands, truck of 33, box [-50, 120]^2; order
    quantities widened by the minimum demand."""
    return JrpParams(
        demand_low=(15, 5),
        demand_high=(25, 15),
        holding=(7.0, 1.0),
        backorder=(19.0, 19.0),
        minor_cost=(40.0, 10.0),
        major_cost=400.0,
        truck_capacity=33,
        lower=(-50, -50),
        upper=(120, 120),
        discount=0.99,
        widen_orders=True,
    )


class JointReplenishmentMdp(ControlledMdp):
    """Joint replenishment as a controlled MDP on the inventory lattice.

    State: inventory pair (negative = backorders).  Action id
    ``a = q1 * nq2 + q2`` where nq2 is the state's count of feasible q2
    values, so id 0 orders nothing and argmin over the C-ordered q-block
    breaks ties toward lexicographically smallest (q1, q2).
    """

    def __init__(self, params):
        self.params = params
        self.lattice = StateLattice(params.lower, params.upper)
        self.discount = float(params.discount)
        lo, up = self.lattice.lower, self.lattice.upper
        self._n2 = int(up[1] - lo[1] + 1)
        self._widen = (
            tuple(int(d) for d in params.demand_low)
            if params.widen_orders
            else (0, 0)
        )
        # per-item demand supports and (uniform) probabilities
        self._dvals = [
            np.arange(int(params.demand_low[i]), int(params.demand_high[i]) + 1)
            for i in range(2)
        ]
        self._dprob = [np.full(len(v), 1.0 / len(v)) for v in self._dvals]
        # post-order levels z = I + q range over [lo_i, up_i + widen_i]
        self._zvals = [
            np.arange(lo[i], up[i] + self._widen[i] + 1) for i in range(2)
        ]
        # per-axis expected holding/backorder of the clamped end inventory
        self._stage = []
        for i in range(2):
            ends = np.clip(
                self._zvals[i][None, :] - self._dvals[i][:, None], lo[i], up[i]
            )
            h = params.holding[i] * np.maximum(ends, 0) + params.backorder[
                i
            ] * np.maximum(-ends, 0)
            self._stage.append(self._dprob[i] @ h)
        # clamped next-state offsets per (demand, z): index into axis i
        self._nidx = [
            (
                np.clip(
                    self._zvals[i][None, :] - self._dvals[i][:, None], lo[i], up[i]
                )
                - lo[i]
            ).astype(np.int64)
            for i in range(2)
        ]
        # trucks needed for every feasible (q1, q2) block, C-ordered
        nz1, nz2 = len(self._zvals[0]), len(self._zvals[1])
        q1 = np.arange(nz1)[:, None]
        q2 = np.arange(nz2)[None, :]
        self._trucks = params.major_cost * np.ceil(
            (q1 + q2) / params.truck_capacity
        )
        # demand-mixing matrices: row z is the distribution of the clamped
        # next level on axis i, so E_d[W] over the block is mix0 @ W @ mix1.T
        self._mix = []
        for i in range(2):
            M = np.zeros((len(self._zvals[i]), self.lattice.shape[i]))
            z = np.arange(len(self._zvals[i]))
            for k in range(len(self._dvals[i])):
                np.add.at(M, (z, self._nidx[i][k]), self._dprob[i][k])
            self._mix.append(M)

    # -- action bookkeeping ----------------------------------------------------

    def _offsets(self, i):
        """Coordinate offsets (i1, i2) of flat state i from the lower corner."""
        return int(i) // self._n2, int(i) % self._n2

    def _counts(self, i):
        i1, i2 = self._offsets(i)
        return len(self._zvals[0]) - i1, len(self._zvals[1]) - i2

    def n_actions(self, i):
        nq1, nq2 = self._counts(i)
        return nq1 * nq2

    def action_quantities(self, i, a):
        """Decode action id to the order pair (q1, q2)."""
        _, nq2 = self._counts(i)
        q1, q2 = divmod(int(a), nq2)
        return q1, q2

    def action_cost(self, i, a):
        i1, i2 = self._offsets(i)
        q1, q2 = self.action_quantities(i, a)
        p = self.params
        return float(
            self._stage[0][i1 + q1]
            + self._stage[1][i2 + q2]
            + (p.minor_cost[0] if q1 > 0 else 0.0)
            + (p.minor_cost[1] if q2 > 0 else 0.0)
            + self._trucks[q1, q2]
        )

    def kernel_row(self, i, a):
        i1, i2 = self._offsets(i)
        q1, q2 = self.action_quantities(i, a)
        c1 = self._nidx[0][:, i1 + q1]
        c2 = self._nidx[1][:, i2 + q2]
        cols = (c1[:, None] * self._n2 + c2[None, :]).ravel()
        probs = (self._dprob[0][:, None] * self._dprob[1][None, :]).ravel()
        return cols, probs  # clamped duplicates are summed downstream

    # -- vectorized sweeps ------------------------------------------------------

    def _expected_next(self, W):
        """E_d[W(clamped z - d)] over the whole post-order block."""
        Wg = np.asarray(W, dtype=np.float64).reshape(self.lattice.shape)
        return self._mix[0] @ Wg @ self._mix[1].T

    def greedy_at(self, indices, W):
        EW = self._expected_next(W)
        alpha = self.discount
        k1, k2 = self.params.minor_cost
        actions = np.zeros(len(indices), dtype=np.int64)
        qvals = np.empty(len(indices))
        for k, i in enumerate(np.asarray(indices)):
            i1, i2 = self._offsets(i)
            block = (
                self._stage[0][i1:, None]
                + self._stage[1][None, i2:]
                + alpha * EW[i1:, i2:]
                + self._trucks[: len(self._zvals[0]) - i1, : len(self._zvals[1]) - i2]
            )
            block[1:, :] += k1
            block[:, 1:] += k2
            a = int(np.argmin(block))
            actions[k] = a
            qvals[k] = block.flat[a]
        return actions, qvals

    def induced(self, policy):
        policy = np.asarray(policy, dtype=np.int64)
        n = self.lattice.size
        i1 = np.arange(n) // self._n2
        i2 = np.arange(n) % self._n2
        nq2 = len(self._zvals[1]) - i2
        q1, q2 = policy // nq2, policy % nq2
        z1, z2 = i1 + q1, i2 + q2
        m1, m2 = len(self._dvals[0]), len(self._dvals[1])
        rows = np.tile(np.arange(n), m1 * m2)
        cols = np.empty((m1 * m2, n), dtype=np.int64)
        data = np.empty((m1 * m2, n))
        for k1 in range(m1):
            c1 = self._nidx[0][k1, z1] * self._n2
            for k2 in range(m2):
                cols[k1 * m2 + k2] = c1 + self._nidx[1][k2, z2]
                data[k1 * m2 + k2] = self._dprob[0][k1] * self._dprob[1][k2]
        P = RowStochasticMatrix.from_coo(rows, cols.ravel(), data.ravel(), (n, n))
        p = self.params
        c = (
            self._stage[0][z1]
            + self._stage[1][z2]
            + np.where(q1 > 0, p.minor_cost[0], 0.0)
            + np.where(q2 > 0, p.minor_cost[1], 0.0)
            + self._trucks[q1, q2]
        )
        return P, c


def build_jrp(params):
    """Controlled MDP for a joint replenishment instance."""
    return JointReplenishmentMdp(params)


# ---------------------------------------------------------------------------
# hospital overflow routing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HospitalParams:
    """Ward-overflow instance.

    ``overflow[i][j]`` is the cost of routing one patient waiting at ward
    i into a free bed of ward j; ``holding[i]`` is the per-period cost of
    each patient still boarding at ward i after routing.
    """

    arrival_rates: tuple
    service_probs: tuple
    beds: tuple
    holding: tuple
    overflow: tuple
    caps: tuple
    discount: float = 0.99

    def __post_init__(self):
        J = len(self.beds)
        if not (
            len(self.arrival_rates)
            == len(self.service_probs)
            == len(self.holding)
            == len(self.caps)
            == len(self.overflow)
            == J
        ):
            raise ValueError("per-ward parameter lengths disagree")
        for lam, p, cap, beds in zip(
            self.arrival_rates, self.service_probs, self.caps, self.beds
        ):
            if lam <= 0 or not (0 < p <= 1):
                raise ValueError("need arrival rate > 0 and service prob in (0,1]")
            if cap < beds:
                raise ValueError("occupancy cap below bed count")


def hospital_2ward():
    """Two wards, asymmetric transfer costs, caps at 42."""
    return HospitalParams(
        arrival_rates=(3.5, 2.8),
        service_probs=(0.25, 0.35),
        beds=(12, 12),
        holding=(5.0, 5.0),
        overflow=((0.0, 5.0), (1.0, 0.0)),
        caps=(42, 42),
        discount=0.99,
    )


def hospital_3ward(load=0.7):
    """Three wards at the given utilization: arrival rates load*beds*p."""
    beds = (10, 10, 10)
    p = (0.4, 0.6, 0.1)
    lam = tuple(load * n * pi for n, pi in zip(beds, p))
    return HospitalParams(
        arrival_rates=lam,
        service_probs=p,
        beds=beds,
        holding=(10.0, 2.0, 6.0),
        overflow=((0.0, 5.0, 2.0), (3.0, 0.0, 7.0), (7.0, 9.0, 0.0)),
        caps=(24, 24, 24),
        discount=0.99,
    )


def hospital_4ward(load=0.8):
    """Four small wards; the largest instance the suite generates."""
    beds = (2, 3, 1, 2)
    p = (0.2, 0.7, 0.5, 0.3)
    lam = tuple(load * n * pi for n, pi in zip(beds, p))
    return HospitalParams(
        arrival_rates=lam,
        service_probs=p,
        beds=beds,
        holding=(10.0, 2.0, 6.0, 6.0),
        overflow=(
            (0.0, 5.0, 2.0, 1.0),
            (7.0, 0.0, 1.0, 2.0),
            (7.0, 9.0, 0.0, 3.0),
            (1.0, 2.0, 3.0, 0.0),
        ),
        caps=(14, 15, 13, 14),
        discount=0.99,
    )


def _ward_matrix(cap, beds, p_serve, lam):
    """Occupancy transition matrix of one ward: binomial discharges from
    occupied beds, Poisson arrivals with the tail clamped at the cap."""
    T = np.zeros((cap + 1, cap + 1))
    pois = stats.poisson.pmf(np.arange(cap + 1), lam)
    for w in range(cap + 1):
        busy = min(w, beds)
        dep = stats.binom.pmf(np.arange(busy + 1), busy, p_serve)
        for k in range(busy + 1):
            base = w - k
            room = cap - base  # arrivals beyond this land on the cap
            T[w, base : base + room] += dep[k] * pois[:room]
            T[w, cap] += dep[k] * float(stats.poisson.sf(room - 1, lam))
    return T


class HospitalOverflowMdp(ControlledMdp):
    """Overflow routing as a controlled MDP on the occupancy lattice.

    Actions are integer routing matrices u (zero diagonal) satisfying
    row sums <= (x_i - beds_i)+ (patients actually waiting) and column
    sums <= (beds_j - x_j)+ (free beds).  They are enumerated depth-first
    in row-major entry order with values ascending, so action id 0 is
    "route nobody" and ids are reproducible.

    Given the post-routing occupancy, wards evolve independently, so all
    expectations factorize into per-ward 1-D transition matrices; greedy
    sweeps and induced-chain products run as tensor contractions without
    materializing the N x N kernel.
    """

    def __init__(self, params):
        self.params = params
        J = len(params.beds)
        self.J = J
        self.lattice = StateLattice((0,) * J, params.caps)
        self.discount = float(params.discount)
        self.T = [
            _ward_matrix(params.caps[j], params.beds[j], params.service_probs[j],
                         params.arrival_rates[j])
            for j in range(J)
        ]
        self._pairs = [(i, j) for i in range(J) for j in range(J) if i != j]
        self._cache = {}

    # -- action enumeration ----------------------------------------------------

    def _actions(self, i):
        """Cached (routing matrices, post-action flat indices, costs)."""
        hit = self._cache.get(int(i))
        if hit is not None:
            return hit
        x = self.lattice.to_coords(int(i))
        beds = np.asarray(self.params.beds)
        supply = np.maximum(x - beds, 0)
        space = np.maximum(beds - x, 0)
        moves = []
        current = np.zeros((self.J, self.J), dtype=np.int64)

        def rec(t, sup, spa):
            if t == len(self._pairs):
                moves.append(current.copy())
                return
            a, b = self._pairs[t]
            top = min(sup[a], spa[b])
            for v in range(top + 1):
                current[a, b] = v
                sup[a] -= v
                spa[b] -= v
                rec(t + 1, sup, spa)
                sup[a] += v
                spa[b] += v
            current[a, b] = 0

        rec(0, supply.copy(), space.copy())
        B = np.asarray(self.params.overflow)
        H = np.asarray(self.params.holding)
        moves = np.stack(moves)
        out = moves.sum(axis=2)
        posts = self.lattice.to_index(x[None, :] - out + moves.sum(axis=1))
        costs = np.sum(B[None] * moves, axis=(1, 2)) + np.maximum(
            x[None, :] - out - beds[None, :], 0
        ) @ H
        entry = (moves, np.asarray(posts, dtype=np.int64), costs.astype(np.float64))
        self._cache[int(i)] = entry
        return entry

    def n_actions(self, i):
        return len(self._actions(i)[0])

    def routing_matrix(self, i, a):
        """Decode action id to its routing matrix."""
        return self._actions(i)[0][int(a)]

    def action_cost(self, i, a):
        return float(self._actions(i)[2][int(a)])

    def kernel_row(self, i, a):
        post = self.lattice.to_coords(int(self._actions(i)[1][int(a)]))
        row = self.T[0][post[0]]
        for j in range(1, self.J):
            row = np.multiply.outer(row, self.T[j][post[j]])
        row = row.ravel()
        nz = np.flatnonzero(row)
        return nz, row[nz]

    # -- tensor-contraction sweeps ----------------------------------------------

    def _contract(self, v):
        """E[v(next occupancy) | post-routing occupancy = w] for every w."""
        E = np.asarray(v, dtype=np.float64).reshape(self.lattice.shape)
        for j in range(self.J):
            E = np.moveaxis(np.tensordot(self.T[j], E, axes=(1, j)), 0, j)
        return E

    def greedy_at(self, indices, W):
        EW = self._contract(W).ravel()
        alpha = self.discount
        actions = np.zeros(len(indices), dtype=np.int64)
        qvals = np.empty(len(indices))
        for k, i in enumerate(np.asarray(indices)):
            _, posts, costs = self._actions(int(i))
            q = costs + alpha * EW[posts]
            a = int(np.argmin(q))
            actions[k] = a
            qvals[k] = q[a]
        return actions, qvals

    def _policy_posts(self, policy):
        n = self.lattice.size
        posts = np.empty(n, dtype=np.int64)
        costs = np.empty(n)
        for i in range(n):
            _, p, c = self._actions(i)
            a = int(policy[i])
            posts[i], costs[i] = p[a], c[a]
        return posts, costs

    def induced_apply(self, policy):
        posts, costs = self._policy_posts(policy)

        def apply_P(v):
            return self._contract(v).ravel()[posts]

        return apply_P, costs

    def induced(self, policy):
        n = self.lattice.size
        if n * n > 40_000_000:
            raise ResourceLimitError(
                f"materializing the induced kernel needs a dense {n}x{n} pass; "
                "use induced_apply instead"
            )
        posts, costs = self._policy_posts(policy)
        rows = np.empty((n, n))
        for i in range(n):
            post = self.lattice.to_coords(int(posts[i]))
            row = self.T[0][post[0]]
            for j in range(1, self.J):
                row = np.multiply.outer(row, self.T[j][post[j]])
            rows[i] = row.ravel()
        return RowStochasticMatrix(rows), costs


def build_hospital(params):
    """Controlled MDP for a hospital overflow instance."""
    return HospitalOverflowMdp(params)


# ---------------------------------------------------------------------------
# random walks
# ---------------------------------------------------------------------------

def build_simple_rw(n, absorbing=True, *, alpha=0.9):
    """Symmetric +-1 walk on [0, n] with c(x) = x.

    With absorbing endpoints (the default) and this cost the value is
    exactly x/(1-alpha): the walk is a martingale.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    lattice = StateLattice([0], [n])
    rows, cols, data = [0, n], [0 if absorbing else 1, n if absorbing else n - 1], [1.0, 1.0]
    for i in range(1, n):
        rows += [i, i]
        cols += [i - 1, i + 1]
        data += [0.5, 0.5]
    P = RowStochasticMatrix.from_coo(rows, cols, data, (n + 1, n + 1))
    cost = np.arange(n + 1, dtype=np.float64)
    return MarkovRewardProcess(lattice, P, cost, alpha)


def build_two_point_chain(n, *, alpha=0.9):
    """The two-outcome reduction of the simple walk: from x jump straight
    to n with probability x/n, else to 0.  Shares the walk's drift (zero)
    and, with c(x) = x, its entire value function."""
    if n < 2:
        raise ValueError("need n >= 2")
    lattice = StateLattice([0], [n])
    rows, cols, data = [], [], []
    for x in range(n + 1):
        if x > 0:
            rows.append(x)
            cols.append(n)
            data.append(x / n)
        if x < n:
            rows.append(x)
            cols.append(0)
            data.append(1.0 - x / n)
    P = RowStochasticMatrix.from_coo(rows, cols, data, (n + 1, n + 1))
    cost = np.arange(n + 1, dtype=np.float64)
    return MarkovRewardProcess(lattice, P, cost, alpha)


def build_reflecting_rw(n, seed, *, alpha=0.95):
    """Reflecting walk on [1, n] with seeded, slightly-downward drift.

    P(i, i+1) = 0.5 - 0.1 * Uniform(0, 1) at interior states (one draw
    per state, in state order), hard reflection at both ends, c(i) = i^2.
    """
    if n < 3:
        raise ValueError("need n >= 3")
    lattice = StateLattice([1], [n])
    up = 0.5 - 0.1 * np.random.default_rng(seed).random(max(n - 2, 0))
    rows, cols, data = [0, n - 1], [1, n - 2], [1.0, 1.0]
    for k, i in enumerate(range(2, n)):
        rows += [i - 1, i - 1]
        cols += [i, i - 2]
        data += [float(up[k]), float(1.0 - up[k])]
    P = RowStochasticMatrix.from_coo(rows, cols, data, (n, n))
    cost = np.arange(1, n + 1, dtype=np.float64) ** 2
    return MarkovRewardProcess(lattice, P, cost, alpha)


# ---------------------------------------------------------------------------
# instance round-trip
# ---------------------------------------------------------------------------

def save_mrp(path, mrp):
    """Write a Markov reward process to a compressed .npz container."""
    csr = mrp.P.csr
    np.savez_compressed(
        path,
        lower=mrp.lattice.lower,
        upper=mrp.lattice.upper,
        indptr=csr.indptr,
        indices=csr.indices,
        data=csr.data,
        cost=np.asarray(mrp.cost),
        discount=np.array([mrp.discount]),
    )


def load_mrp(path):
    """Read a process back from ``save_mrp`` output."""
    from scipy import sparse

    with np.load(path) as z:
        lattice = StateLattice(z["lower"], z["upper"])
        n = lattice.size
        P = RowStochasticMatrix(
            sparse.csr_matrix((z["data"], z["indices"], z["indptr"]), shape=(n, n))
        )
        return MarkovRewardProcess(lattice, P, z["cost"], float(z["discount"][0]))
