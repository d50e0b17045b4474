"""Two-sided tail-mean value functions and their Bellman recursion.

A value pair (q1, q2) summarizes each entry's return distribution by its
left tail mean at level alpha and its right tail mean at level 1 - alpha.
The recursion below is the expected Bellman operator composed with the
two-point distribution projection, carried out directly on the pair so no
atom lists are ever materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError
from .mdp import DEFAULT_MAX_ITER, DEFAULT_TOL, Mdp, Policy, check_policy

ORDER_TOL = 1e-9


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"tail level must lie strictly inside (0, 1), got {alpha}")


@dataclass(frozen=True)
class DoubleQ:
    """Left and right tail-mean tables at a common level.

    q1[x, a] is the mean of the worst alpha-fraction of outcomes, q2[x, a]
    the mean of the best (1 - alpha)-fraction, so q1 <= q2 entrywise.
    """

    q1: np.ndarray
    q2: np.ndarray
    alpha: float

    def __init__(self, q1, q2, alpha: float):
        _check_alpha(alpha)
        q1 = np.asarray(q1, dtype=np.float64)
        q2 = np.asarray(q2, dtype=np.float64)
        if q1.shape != q2.shape or q1.ndim != 2:
            raise DomainError(f"mismatched table shapes {q1.shape} and {q2.shape}")
        if not (np.isfinite(q1).all() and np.isfinite(q2).all()):
            raise DomainError("tail-mean tables must be finite")
        gap = float((q1 - q2).max())
        if gap > ORDER_TOL:
            raise DomainError(f"left tail mean exceeds right tail mean by {gap}")
        object.__setattr__(self, "q1", q1)
        object.__setattr__(self, "q2", q2)
        object.__setattr__(self, "alpha", float(alpha))
        q1.flags.writeable = False
        q2.flags.writeable = False

    @staticmethod
    def zeros(mdp: Mdp, alpha: float) -> "DoubleQ":
        shape = (mdp.n_states, mdp.n_actions)
        return DoubleQ(np.zeros(shape), np.zeros(shape), alpha)

    @property
    def mean(self) -> np.ndarray:
        """The plain expected table recovered from the two tails."""
        return self.alpha * self.q1 + (1.0 - self.alpha) * self.q2


def diatomic_bellman_apply(mdp: Mdp, policy: Policy, dq: DoubleQ) -> DoubleQ:
    """One sweep of the projected distributional operator on a value pair.

    Every entry (x, a) gets 2*S*A particles: successor entry (y, b) under
    the policy contributes mass alpha * P(y|x,a) * pi(b|y) at value
    r(x,a,y) + gamma * q1(y,b), and the complementary mass at the q2 value.
    The new pair is the left/right tail mean of that particle cloud.
    Zero-mass particles are kept; the cumulative clamps ignore them exactly.
    """
    check_policy(mdp, policy)
    s, a_n = mdp.n_states, mdp.n_actions
    m = s * a_n
    alpha = dq.alpha
    link = np.einsum("xay,yb->xayb", mdp.transition, policy.probs).reshape(s, a_n, m)
    shifted = mdp.reward[:, :, :, None]
    vals = np.concatenate(
        [
            (shifted + mdp.gamma * dq.q1[None, None, :, :]).reshape(s, a_n, m),
            (shifted + mdp.gamma * dq.q2[None, None, :, :]).reshape(s, a_n, m),
        ],
        axis=2,
    )
    wts = np.concatenate([alpha * link, (1.0 - alpha) * link], axis=2)

    order = np.argsort(vals, axis=2, kind="stable")
    v = np.take_along_axis(vals, order, axis=2)
    w = np.take_along_axis(wts, order, axis=2)
    cum = np.cumsum(w, axis=2)
    before = cum - w
    left_w = np.clip(np.minimum(w, alpha - before), 0.0, None)
    # (cum - 1) + level instead of cum - (1 - level): keeps the top particle
    # exact when the cumulative sum lands on 1.0 (same trick as the
    # distribution-level tail means)
    right_w = np.clip(np.minimum(w, (cum - 1.0) + (1.0 - alpha)), 0.0, None)
    q1 = (left_w * v).sum(axis=2) / alpha
    q2 = (right_w * v).sum(axis=2) / (1.0 - alpha)
    return DoubleQ(q1, q2, alpha)


@dataclass(frozen=True)
class SpeSolve:
    """Fixed-point solve output for the value-pair recursion."""

    double_q: DoubleQ
    residual: float
    iterations: int
    history: tuple[float, ...] | None = None


def spe(
    mdp: Mdp,
    policy: Policy,
    alpha: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    record_history: bool = False,
) -> SpeSolve:
    """Iterate the projected operator from the zero pair to its fixed point.

    The operator is a gamma-contraction in the sup norm over both tables,
    so the iteration converges geometrically from any start; zero is the
    conventional one. Residual is the sup-norm change of the last sweep.
    """
    check_policy(mdp, policy)
    dq = DoubleQ.zeros(mdp, alpha)
    if max_iter < 1:
        raise DomainError(f"max_iter must be positive, got {max_iter}")
    if not tol > 0.0:
        raise DomainError(f"tolerance must be positive, got {tol}")
    history: list[float] = []
    for it in range(1, max_iter + 1):
        nxt = diatomic_bellman_apply(mdp, policy, dq)
        residual = float(
            max(np.abs(nxt.q1 - dq.q1).max(), np.abs(nxt.q2 - dq.q2).max())
        )
        dq = nxt
        if record_history:
            history.append(residual)
        if residual <= tol:
            return SpeSolve(dq, residual, it, tuple(history) if record_history else None)
    raise ConvergenceError(
        f"value pair not converged after {max_iter} sweeps (residual {residual})",
        residual=residual,
        iterations=max_iter,
    )


@dataclass(frozen=True)
class CoherenceReport:
    """Whether a policy's value pair is constant on each state's support.

    max_spread is the largest within-support range over states and both
    tables; witness names (state, action_low, action_high) for that range.
    """

    ok: bool
    max_spread: float
    witness: tuple[int, int, int] | None


def alpha_coherence(
    mdp: Mdp,
    policy: Policy,
    alpha: float,
    tol: float = 1e-8,
    double_q: DoubleQ | None = None,
    spe_tol: float = DEFAULT_TOL,
) -> CoherenceReport:
    """Check that both tail-mean tables are flat across each support set.

    Deterministic policies pass trivially (singleton supports). Pass a
    precomputed fixed point as double_q to skip the solve.
    """
    check_policy(mdp, policy)
    if double_q is None:
        double_q = spe(mdp, policy, alpha, tol=spe_tol).double_q
    worst = 0.0
    witness = None
    for x in range(mdp.n_states):
        sup = policy.support(x)
        for table in (double_q.q1, double_q.q2):
            row = table[x, sup]
            spread = float(row.max() - row.min())
            if spread > worst:
                worst = spread
                witness = (x, int(sup[np.argmin(row)]), int(sup[np.argmax(row)]))
    return CoherenceReport(ok=worst <= tol, max_spread=worst, witness=witness)
