"""Finite MDPs, induced Markov chains and reachability value iteration."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .world import GridWorld

GRID_INPUTS = ("stay", "up", "down", "left", "right")
_MOVES = {"stay": (0, 0), "up": (0, 1), "down": (0, -1), "left": (-1, 0), "right": (1, 0)}

ROW_TOL = 1e-9
TIE_TOL = 1e-12
DENSE_LIMIT = 400_000   # stacked entries below which sweeps use a dense matrix


class FiniteMdp:
    """States ``0..m-1``, inputs ``0..k-1`` and one row-stochastic sparse
    matrix per input (``P[u][s, s']``)."""

    def __init__(self, matrices: Sequence, inputs: Sequence[str] | None = None):
        mats = [sp.csr_matrix(P, dtype=float) for P in matrices]
        if not mats:
            raise ValueError("at least one input required")
        m = mats[0].shape[0]
        for u, P in enumerate(mats):
            if P.shape != (m, m):
                raise ValueError("transition matrices must be square and equally sized")
            if P.nnz and P.data.min() < 0:
                raise ValueError(f"negative transition probability under input {u}")
            sums = np.asarray(P.sum(axis=1)).ravel()
            if np.abs(sums - 1.0).max(initial=0.0) > ROW_TOL:
                bad = int(np.argmax(np.abs(sums - 1.0)))
                raise ValueError(f"row {bad} under input {u} sums to {sums[bad]!r}")
            P.sort_indices()
        self.matrices = mats
        self.inputs = tuple(inputs) if inputs is not None else tuple(str(u) for u in range(len(mats)))
        self.n_states = m
        self.n_inputs = len(mats)
        self._stacked = None
        self._operator = None

    @property
    def stacked(self) -> sp.csr_matrix:
        """All inputs stacked vertically: row ``u * m + s``."""
        if self._stacked is None:
            self._stacked = sp.vstack(self.matrices, format="csr")
        return self._stacked

    @property
    def operator(self):
        """Stacked matrix in whichever format is cheapest to multiply with."""
        if self._operator is None:
            m, k = self.n_states, self.n_inputs
            self._operator = self.stacked.toarray() if m * m * k <= DENSE_LIMIT else self.stacked
        return self._operator

    def row(self, s: int, u: int) -> tuple[np.ndarray, np.ndarray]:
        P = self.matrices[u]
        lo, hi = P.indptr[s], P.indptr[s + 1]
        return P.indices[lo:hi], P.data[lo:hi]

    def prob(self, s: int, u: int, s_next: int) -> float:
        return float(self.matrices[u][s, s_next])

    def dense(self, u: int) -> np.ndarray:
        return self.matrices[u].toarray()


@dataclass(frozen=True)
class MarkovChain:
    """Row-stochastic chain: ``b_next = b @ A`` for row-vector distributions."""
    A: sp.csr_matrix
    b0: np.ndarray

    @property
    def n_states(self) -> int:
        return self.A.shape[0]


def build_grid_mdp(world: GridWorld, p_succ: float) -> FiniteMdp:
    """Five-input grid motion: intended cell w.p. ``p_succ``, the rest split
    equally over the intended cell's in-bounds 8-neighbours."""
    if not 0.0 < p_succ <= 1.0:
        raise ValueError("p_succ must lie in (0, 1]")
    n = world.n_cells
    mats = []
    for name in GRID_INPUTS:
        di, dj = _MOVES[name]
        rows, cols, vals = [], [], []
        for x in range(n):
            i, j = world.pos(x)
            ti, tj = i + di, j + dj
            if not world.in_bounds(ti, tj):
                ti, tj = i, j
            target = world.index(ti, tj)
            spread = [world.index(ti + a, tj + b)
                      for b in (-1, 0, 1) for a in (-1, 0, 1)
                      if (a or b) and world.in_bounds(ti + a, tj + b)]
            rest = 1.0 - p_succ
            if not spread or rest == 0.0:
                rows.append(x); cols.append(target); vals.append(1.0)
                continue
            rows.append(x); cols.append(target); vals.append(p_succ)
            share = rest / len(spread)
            for y in spread:
                rows.append(x); cols.append(y); vals.append(share)
        mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))
    return FiniteMdp(mats, GRID_INPUTS)


def sample_transition(mdp: FiniteMdp, s: int, u: int, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over the row's successors in increasing state order."""
    idx, p = mdp.row(s, u)
    r = rng.random()
    c = np.cumsum(p)
    k = int(np.searchsorted(c, r * c[-1], side="right"))
    return int(idx[min(k, len(idx) - 1)])


@dataclass
class ValueIterationResult:
    values: np.ndarray
    policy: np.ndarray
    sweeps: int
    converged: bool

    def __iter__(self):
        yield self.values
        yield self.policy


def reachability_value_iteration(mdp: FiniteMdp, target, horizon: int | None = None,
                                 tol: float = 1e-9, max_sweeps: int | None = None,
                                 history: list | None = None) -> ValueIterationResult:
    """Maximal probability of reaching ``target``.

    ``horizon=None`` iterates to a fixed point (max-norm change below ``tol``,
    at most ``max_sweeps``, default ``10 * m``); an integer runs exactly that
    many sweeps.  Ties go to the input already chosen, then the lowest index.
    """
    m, k = mdp.n_states, mdp.n_inputs
    ind = np.zeros(m)
    tgt = np.asarray(target)
    if tgt.dtype == bool:
        ind[tgt] = 1.0
    else:
        ind[tgt.astype(int)] = 1.0
    if not ind.any():
        raise ValueError("target set is empty")
    V = ind.copy()
    policy = np.zeros(m, dtype=np.int64)
    if history is not None:
        history.append(V.copy())
    P = mdp.operator
    if horizon is not None:
        if horizon < 0:
            raise ValueError("horizon must be nonnegative")
        limit = horizon
    else:
        limit = max_sweeps if max_sweeps is not None else 10 * m
    ind_k = np.tile(ind, k)
    cols = np.arange(m)
    Q = np.empty(k * m)
    Qm = Q.reshape(k, m)
    dense = isinstance(P, np.ndarray)
    diff, floor = np.empty(m), np.empty(m)
    switch = np.empty(m, dtype=bool)
    flat = policy * m + cols
    vmax, vmin = np.maximum, np.minimum
    sweeps = 0
    converged = False
    # raw ufunc calls below: this loop runs ~1e5 times per mission
    while sweeps < limit:
        if dense:
            np.dot(P, V, out=Q)
        else:
            Q[:] = P @ V
        vmax(Q, ind_k, out=Q)
        # rounding in P @ V can push a row just past 1
        vmin(Q, 1.0, out=Q)
        best = vmax.reduce(Qm, axis=0)
        # keep the incumbent input while it is still (numerically) optimal,
        # else switch to the lowest-index maximiser
        np.subtract(best, TIE_TOL, out=floor)
        if np.logical_or.reduce(np.less(Q.take(flat), floor, out=switch)):
            policy = np.where(switch, (Qm >= floor).argmax(axis=0), policy)
            flat = policy * m + cols
        np.subtract(best, V, out=diff)
        delta = vmax.reduce(np.abs(diff, out=diff))
        V = best
        sweeps += 1
        if history is not None:
            history.append(V.copy())
        if horizon is None and delta < tol:
            converged = True
            break
    if horizon is not None:
        converged = True
    return ValueIterationResult(V, policy, sweeps, converged)


def q_values(mdp: FiniteMdp, V: np.ndarray, target) -> np.ndarray:
    ind = np.zeros(mdp.n_states)
    ind[np.asarray(target)] = 1.0
    return np.maximum((mdp.stacked @ V).reshape(mdp.n_inputs, mdp.n_states), ind)


def policy_matrix(mdp: FiniteMdp, policy) -> sp.csr_matrix:
    policy = np.asarray(policy, dtype=np.int64)
    m = mdp.n_states
    rows = policy * m + np.arange(m)
    return mdp.stacked[rows]


def evaluate_policy(mdp: FiniteMdp, policy, target, tol: float = 1e-12,
                    max_sweeps: int | None = None) -> np.ndarray:
    """Probability of reaching ``target`` under a stationary policy."""
    A = policy_matrix(mdp, policy)
    ind = np.zeros(mdp.n_states)
    ind[np.asarray(target)] = 1.0
    V = ind.copy()
    limit = max_sweeps if max_sweeps is not None else 100 * mdp.n_states
    for _ in range(limit):
        V_new = np.maximum(A @ V, ind)
        if np.abs(V_new - V).max() < tol:
            return V_new
        V = V_new
    return V


def induce_chain(mdp: FiniteMdp, policy, initial: int) -> MarkovChain:
    policy = np.asarray(policy)
    if policy.shape != (mdp.n_states,):
        raise ValueError("policy must assign an input to every state")
    b0 = np.zeros(mdp.n_states)
    b0[initial] = 1.0
    return MarkovChain(policy_matrix(mdp, policy), b0)


def chain_step(chain: MarkovChain, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape != (chain.n_states,):
        raise ValueError(f"distribution has shape {b.shape}, chain has {chain.n_states} states")
    return chain.A.T @ b
