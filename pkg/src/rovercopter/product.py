"""Product belief MDP of rover motion and mission automaton, policy synthesis
and the rover reach-belief map ``b_max``."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mdp import FiniteMdp, chain_step, induce_chain, reachability_value_iteration
from .scltl import Fsa, en_set
from .world import BeliefMap


def _prop_columns(beliefs: BeliefMap, fsa: Fsa) -> np.ndarray:
    world = beliefs.world
    missing = set(fsa.ap) - set(world.atomic_props)
    if missing:
        raise ValueError(f"automaton propositions {sorted(missing)} absent from the world")
    return np.array([world.prop_index(a) for a in fsa.ap], dtype=int)


def alphabet_beliefs(beliefs: BeliefMap, fsa: Fsa) -> np.ndarray:
    """``(n_cells, 2^|AP|)`` array of joint beliefs, one column per symbol."""
    b = beliefs.values[:, _prop_columns(beliefs, fsa)]
    n, k = b.shape
    out = np.ones((n, 1 << k))
    masks = np.arange(1 << k)
    for i in range(k):
        bit = (masks >> i & 1).astype(bool)
        out *= np.where(bit[None, :], b[:, i:i + 1], 1.0 - b[:, i:i + 1])
    return out


def joint_belief_alph(beliefs: BeliefMap, x: int, sigma, ap=None) -> float:
    """Belief that exactly the propositions of ``sigma`` hold at ``x``.

    ``sigma`` is a set of names; ``ap`` restricts the proposition universe
    (defaults to all of the world's propositions).
    """
    world = beliefs.world
    props = world.atomic_props if ap is None else tuple(ap)
    sigma = set(sigma)
    val = 1.0
    for a in props:
        b = beliefs[x, a]
        val *= b if a in sigma else 1.0 - b
    return val


def belief_en(beliefs: BeliefMap, fsa: Fsa, x: int, q: int, q_next: int) -> float:
    """Belief that the labels at ``x`` move the automaton from ``q`` to ``q_next``."""
    return sum(joint_belief_alph(beliefs, x, fsa.decode(s), fsa.ap) for s in en_set(fsa, q, q_next))


def belief_en_tensor(beliefs: BeliefMap, fsa: Fsa) -> np.ndarray:
    """``E[x, q, q']`` for all cells and automaton state pairs."""
    alph = alphabet_beliefs(beliefs, fsa)
    nq = fsa.n_states
    onehot = np.zeros((nq, fsa.n_symbols, nq))
    onehot[np.arange(nq)[:, None], np.arange(fsa.n_symbols)[None, :], fsa.delta] = 1.0
    return np.einsum("xs,qsr->xqr", alph, onehot)


def true_en_tensor(world, fsa: Fsa) -> np.ndarray:
    """Indicator ``1[L(x) in en(q, q')]`` from the ground-truth labels."""
    nq = fsa.n_states
    out = np.zeros((world.n_cells, nq, nq))
    for x in range(world.n_cells):
        s = world.label_mask(x, fsa.ap)
        out[x, np.arange(nq), fsa.delta[:, s]] = 1.0
    return out


def _product_pattern(rover_mdp: FiniteMdp, nq: int) -> list:
    # per input: CSR structure of the product plus, for every stored entry,
    # its source cell, automaton pair and p_r.  Depends only on the rover MDP
    # and |Q|, so it is cached there.
    cache = rover_mdp.__dict__.setdefault("_product_pattern", {})
    if nq not in cache:
        qi, qj = np.meshgrid(np.arange(nq), np.arange(nq), indexing="ij")
        n = rover_mdp.n_states
        pats = []
        for P in rover_mdp.matrices:
            coo = P.tocoo()
            r, c, v = coo.row, coo.col, coo.data
            rows = (r[:, None, None] * nq + qi[None]).ravel()
            cols = (c[:, None, None] * nq + qj[None]).ravel()
            order = np.lexsort((cols, rows))
            indptr = np.zeros(n * nq + 1, dtype=np.int64)
            np.cumsum(np.bincount(rows, minlength=n * nq), out=indptr[1:])
            src = np.repeat(r, nq * nq)[order]
            qq = np.tile((qi * nq + qj).ravel(), len(r))[order]
            pats.append((indptr, cols[order], src, qq, np.repeat(v, nq * nq)[order]))
        cache[nq] = pats
    return cache[nq]


def product_matrices(rover_mdp: FiniteMdp, en: np.ndarray) -> list[sp.csr_matrix]:
    """``P_S[(x,q),(x',q')] = p_r(x'|x,u) * en[x,q,q']`` per input."""
    n, nq, _ = en.shape
    flat = en.reshape(n, nq * nq)
    mats = []
    for indptr, indices, src, qq, v in _product_pattern(rover_mdp, nq):
        P = sp.csr_matrix((v * flat[src, qq], indices.copy(), indptr.copy()),
                          shape=(n * nq, n * nq))
        P.eliminate_zeros()
        mats.append(P)
    return mats


@dataclass(eq=False)
class ProductBeliefMdp:
    """States ``(x, q)`` with index ``x * n_q + q``."""
    mdp: FiniteMdp
    fsa: Fsa
    rover_mdp: FiniteMdp
    en: np.ndarray
    s0: int
    accepting: np.ndarray
    beliefs: BeliefMap | None = None

    @property
    def n_cells(self) -> int:
        return self.rover_mdp.n_states

    @property
    def n_q(self) -> int:
        return self.fsa.n_states

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    def index(self, x: int, q: int) -> int:
        return x * self.n_q + q

    def split(self, s: int) -> tuple[int, int]:
        return divmod(int(s), self.n_q)

    def target(self) -> np.ndarray:
        return np.flatnonzero(self.accepting)


def _assemble(rover_mdp, fsa, en, x_r, q, beliefs=None) -> ProductBeliefMdp:
    n, nq = rover_mdp.n_states, fsa.n_states
    accepting = np.zeros(n * nq, dtype=bool)
    for qf in fsa.accepting:
        accepting[np.arange(n) * nq + qf] = True
    q = fsa.q0 if q is None else q
    mdp = FiniteMdp(product_matrices(rover_mdp, en), rover_mdp.inputs)
    return ProductBeliefMdp(mdp, fsa, rover_mdp, en, x_r * nq + q, accepting, beliefs)


def build_product(rover_mdp: FiniteMdp, fsa: Fsa, beliefs: BeliefMap, x_r: int,
                  q: int | None = None) -> ProductBeliefMdp:
    """Product belief MDP from a snapshot of ``beliefs``; initial state
    ``(x_r, q)`` with ``q`` defaulting to the automaton's initial state."""
    snap = beliefs.copy()
    return _assemble(rover_mdp, fsa, belief_en_tensor(snap, fsa), x_r, q, snap)


@dataclass
class Synthesis:
    policy: np.ndarray
    values: np.ndarray
    sweeps: int
    converged: bool

    def __iter__(self):
        yield self.policy
        yield self.values


def synthesize_policy(product: ProductBeliefMdp, horizon: int | None = None,
                      max_sweeps: int | None = None) -> Synthesis:
    """Maximise the belief of reaching the accepting set (fixed point when
    ``horizon`` is None, else exactly ``horizon`` sweeps)."""
    res = reachability_value_iteration(product.mdp, product.accepting, horizon=horizon,
                                       max_sweeps=max_sweeps)
    return Synthesis(res.policy, res.values, res.sweeps, res.converged)


def induce_rover_policy(product: ProductBeliefMdp, policy: np.ndarray, q: int) -> np.ndarray:
    """Per-cell input for automaton state ``q``."""
    return np.asarray(policy).reshape(product.n_cells, product.n_q)[:, q].copy()


def compute_b_max(product: ProductBeliefMdp, policy: np.ndarray, x_r: int, T_r: int,
                  q: int | None = None) -> np.ndarray:
    """Per-cell maximum over ``l = 0..T_r-1`` of the belief that the rover is
    at the cell after ``l`` steps of ``policy`` from ``(x_r, q)``."""
    if T_r < 1:
        raise ValueError("T_r must be at least 1")
    q = product.fsa.q0 if q is None else q
    chain = induce_chain(product.mdp, policy, product.index(x_r, q))
    b = chain.b0
    best = b.reshape(product.n_cells, product.n_q).sum(axis=1)
    for _ in range(T_r - 1):
        b = chain_step(chain, b)
        best = np.maximum(best, b.reshape(product.n_cells, product.n_q).sum(axis=1))
    return np.minimum(best, 1.0)


def write_grid_csv(path: str | Path, values: np.ndarray, width: int, height: int) -> None:
    """Per-cell values as a CSV grid: row ``j``, column ``i``."""
    grid = np.asarray(values).reshape(height, width)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in grid:
            w.writerow([repr(float(v)) for v in row])
