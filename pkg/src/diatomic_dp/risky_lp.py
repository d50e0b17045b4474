"""Linear-programming route to the risky tail values.

The risky recursion has an equivalent LP over the per-state tail values
V1 alone: the paired variable for each state is an affine function of V1
once the classic optimum is pinned, so it is substituted out. One
inequality row per (state, admissible action, visit order) makes the
feasible region the set of tail-value vectors dominated by every
admissible kernel choice; maximizing a positively weighted sum drives V1
to the risky fixed point. The dual over row multipliers is built from the
same system transposed; strong duality between the two is a checkable
claim, not an assumption.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import BALANCE_TOL, _masked, _require_balanced, svi
from .diatomic import _check_alpha
from .errors import PreconditionError
from .mdp import Mdp
from .robust import (
    _augmented_masses,
    _permutation_rows,
    enumerate_constrained_permutations,
)
from .simplex import EQ, LEQ, LpProblem, solve

GAP_TOL = 1e-7


def _validated_nu0(mdp: Mdp, nu0) -> np.ndarray:
    if nu0 is None:
        return np.full(mdp.n_states, 1.0 / mdp.n_states)
    nu0 = np.asarray(nu0, dtype=np.float64)
    if nu0.shape != (mdp.n_states,):
        raise PreconditionError(
            f"initial weights have shape {nu0.shape}, want ({mdp.n_states},)"
        )
    if nu0.min() <= 0.0:
        raise PreconditionError("initial weights must be strictly positive")
    if abs(nu0.sum() - 1.0) > 1e-9:
        raise PreconditionError(f"initial weights sum to {nu0.sum()}, want 1")
    return nu0


def risky_constraint_rows(mdp: Mdp, alpha: float, v_star=None, balance_tol=BALANCE_TOL):
    """The shared row system (matrix, rhs, labels) behind both LPs.

    Row (x, a, sigma) bounds V1(x) by the worst-substate one-step value
    under the kernel induced by visit order sigma, with the paired
    substate value eliminated via (V*(x') - alpha V1(x')) / (1 - alpha).
    Labels carry (x, a, sigma sequence) in row order.
    """
    _check_alpha(alpha)
    q_star = _require_balanced(mdp, tol=balance_tol)
    if v_star is None:
        v_star = _masked(q_star, mdp.action_mask, -np.inf).max(axis=1)
    else:
        v_star = np.asarray(v_star, dtype=np.float64)

    s = mdp.n_states
    masses = _augmented_masses(mdp, alpha)
    r_rep = np.repeat(mdp.reward, 2, axis=2)
    sequences = [sig.sequence for sig in enumerate_constrained_permutations(s)]
    lows = [_permutation_rows(masses, alpha, seq)[0] for seq in sequences]

    rows, rhs, labels = [], [], []
    ratio = alpha / (1.0 - alpha)
    for x in range(s):
        for a in mdp.action_sets[x]:
            for seq, low in zip(sequences, lows):
                low_xa = low[x, a]
                row = np.zeros(s)
                row[x] += 1.0
                row -= mdp.gamma * (low_xa[0::2] - ratio * low_xa[1::2])
                rows.append(row)
                rhs.append(
                    low_xa @ r_rep[x, a]
                    + mdp.gamma / (1.0 - alpha) * (low_xa[1::2] @ v_star)
                )
                labels.append((x, a, seq))
    return np.array(rows), np.array(rhs), tuple(labels)


def build_risky_primal(
    mdp: Mdp, alpha: float, nu0=None, v_star=None, balance_tol=BALANCE_TOL
):
    """Maximize (1 - gamma) <nu0, V1> under every (x, a, sigma) bound."""
    nu0 = _validated_nu0(mdp, nu0)
    mat, rhs, _ = risky_constraint_rows(mdp, alpha, v_star, balance_tol)
    n = mdp.n_states
    return LpProblem(
        c=(1.0 - mdp.gamma) * nu0,
        a=mat,
        row_senses=[LEQ] * mat.shape[0],
        b=rhs,
        sense="max",
        lower=np.full(n, -np.inf),
        upper=np.full(n, np.inf),
    )


def build_risky_dual(
    mdp: Mdp, alpha: float, nu0=None, v_star=None, balance_tol=BALANCE_TOL
):
    """Occupancy-style minimization over one multiplier per primal row.

    Transpose of the primal system: equality row per state balancing the
    multiplier mass against discounted worst-substate inflow, multipliers
    nonnegative, objective the rows' reward-plus-optimum payouts.
    """
    nu0 = _validated_nu0(mdp, nu0)
    mat, rhs, _ = risky_constraint_rows(mdp, alpha, v_star, balance_tol)
    return LpProblem(
        c=rhs,
        a=mat.T,
        row_senses=[EQ] * mdp.n_states,
        b=(1.0 - mdp.gamma) * nu0,
        sense="min",
    )


@dataclass(frozen=True)
class GapReport:
    """Strong-duality and cross-method agreement for one instance."""

    ok: bool
    gap: float
    primal_objective: float
    dual_objective: float
    v1: np.ndarray
    recursion_deviation: float


def duality_gap_check(
    mdp: Mdp, alpha: float, nu0=None, tol: float = GAP_TOL
) -> GapReport:
    """Solve both LPs and compare against the risky recursion.

    ok requires three things at once: both LPs optimal, |primal - dual|
    within tol, and the primal argmax matching the recursion's tail values
    entrywise within tol.
    """
    primal = solve(build_risky_primal(mdp, alpha, nu0))
    dual = solve(build_risky_dual(mdp, alpha, nu0))
    if not (primal.optimal and dual.optimal):
        return GapReport(
            ok=False,
            gap=np.inf,
            primal_objective=np.nan,
            dual_objective=np.nan,
            v1=np.full(mdp.n_states, np.nan),
            recursion_deviation=np.inf,
        )
    gap = abs(primal.objective_value - dual.objective_value)
    control = svi(mdp, alpha, mode="risky")
    deviation = float(np.abs(primal.x - control.v1).max())
    return GapReport(
        ok=gap <= tol and deviation <= tol,
        gap=gap,
        primal_objective=primal.objective_value,
        dual_objective=dual.objective_value,
        v1=primal.x,
        recursion_deviation=deviation,
    )
