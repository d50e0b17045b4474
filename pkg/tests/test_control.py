import numpy as np
import pytest
from numpy.testing import assert_allclose

from diatomic_dp.control import (
    CertificateReport,
    optimality_certificate,
    risky_bellman_apply,
    safe_bellman_apply,
    svi,
)
from diatomic_dp.corpus import fig1_mdp, random_balanced_mdp, random_mdp
from diatomic_dp.diatomic import spe
from diatomic_dp.errors import ConvergenceError, DomainError, PreconditionError
from diatomic_dp.mdp import Policy


@pytest.fixture
def fig1():
    return fig1_mdp()


class TestOneStep:
    def test_safe_sweep_from_rest(self, fig1):
        # v1 = 0 and v2 = v*/(1 - alpha): the conventional start
        step = safe_bellman_apply(fig1, np.zeros(2), np.array([4.0, 8.0]), 0.5)
        assert_allclose(step.q1, [[1.0, 0.5], [2.0, 2.5]], atol=1e-12)
        assert_allclose(step.v1, [1.0, 2.5], atol=1e-12)
        assert_allclose(step.v2, [3.0, 5.5], atol=1e-12)

    def test_risky_sweep_shares_the_table(self, fig1):
        safe = safe_bellman_apply(fig1, np.zeros(2), np.array([4.0, 8.0]), 0.5)
        risky = risky_bellman_apply(fig1, np.zeros(2), np.array([4.0, 8.0]), 0.5)
        assert_allclose(risky.q1, safe.q1, atol=0.0)
        assert_allclose(risky.v1, [0.5, 2.0], atol=1e-12)

    def test_rejects_unbalanced(self, fig1):
        reward = fig1.reward.copy()
        reward[0, 1] += 0.3  # a2 now strictly better at x1
        broken = fig1.with_reward(reward)
        with pytest.raises(PreconditionError, match="state 0"):
            safe_bellman_apply(broken, np.zeros(2), np.zeros(2), 0.5)

    def test_rejects_silly_level(self, fig1):
        with pytest.raises(DomainError):
            safe_bellman_apply(fig1, np.zeros(2), np.zeros(2), 1.0)


class TestSvi:
    def test_safe_two_state(self, fig1):
        res = svi(fig1, 0.5, mode="safe", tol=1e-12)
        assert_allclose(res.q1, [[2.0, 1.5], [4.0, 3.5]], atol=1e-10)
        assert_allclose(res.v1, [2.0, 4.0], atol=1e-10)
        assert_allclose(res.v2, [2.0, 4.0], atol=1e-10)
        assert res.action_sets == ((0,), (0,))

    def test_risky_two_state(self, fig1):
        res = svi(fig1, 0.5, mode="risky", tol=1e-12)
        assert_allclose(res.q1, [[1.75, 1.5], [3.75, 3.5]], atol=1e-10)
        assert_allclose(res.q2, [[2.25, 2.5], [4.25, 4.5]], atol=1e-10)
        assert_allclose(res.v1, [1.5, 3.5], atol=1e-10)
        assert_allclose(res.v2, [2.5, 4.5], atol=1e-10)
        assert res.action_sets == ((1,), (1,))

    def test_greedy_policy_attains_the_value(self, fig1):
        for mode in ("safe", "risky"):
            res = svi(fig1, 0.5, mode=mode, tol=1e-12)
            choices = [g[0] for g in res.action_sets]
            dq = spe(fig1, Policy.deterministic(fig1, choices), 0.5, tol=1e-13).double_q
            own = dq.q1[np.arange(2), choices]
            assert_allclose(own, res.v1, atol=1e-9)

    def test_tails_flank_the_optimum(self):
        for seed in (100, 104, 111):
            m = random_balanced_mdp(2, 2, 0.5, seed=seed)
            for alpha in (0.25, 0.5, 0.6):
                safe = svi(m, alpha, "safe", tol=1e-12)
                risky = svi(m, alpha, "risky", tol=1e-12)
                assert (risky.v1 <= safe.v1 + 1e-9).all()
                assert (safe.v1 <= safe.v_star + 1e-9).all()
                assert (safe.v2 >= safe.v_star - 1e-9).all()
                # the two tails average back to the optimum by construction
                blend = alpha * safe.v1 + (1 - alpha) * safe.v2
                assert_allclose(blend, safe.v_star, atol=1e-10)

    def test_three_state_instances(self):
        for seed in (300, 302):
            m = random_balanced_mdp(3, 2, 0.4, seed=seed)
            res = svi(m, 0.5, "safe", tol=1e-12)
            assert res.residual <= 1e-12
            assert all(len(g) >= 1 for g in res.action_sets)

    def test_unbalanced_rejected_with_witness(self):
        m = random_mdp(3, 2, 0.6, seed=1)
        with pytest.raises(PreconditionError, match="spread"):
            svi(m, 0.5)

    def test_mode_validated(self, fig1):
        with pytest.raises(DomainError, match="mode"):
            svi(fig1, 0.5, mode="yolo")

    def test_exhaustion_raises(self, fig1):
        with pytest.raises(ConvergenceError):
            svi(fig1, 0.5, tol=1e-13, max_iter=2)


class TestCertificate:
    def test_two_state_both_modes(self, fig1):
        for mode in ("safe", "risky"):
            rep = optimality_certificate(fig1, 0.5, mode=mode)
            assert isinstance(rep, CertificateReport)
            assert rep.ok, (mode, rep)
            assert rep.n_checked == 4
            assert rep.max_violation <= 1e-8
            assert rep.attained_gap <= 1e-8

    def test_corpus_instances(self):
        for seed in (101, 107):
            m = random_balanced_mdp(2, 2, 0.5, seed=seed)
            assert optimality_certificate(m, 0.35, "safe").ok
            assert optimality_certificate(m, 0.35, "risky").ok

    def test_three_state_enumeration(self):
        m = random_balanced_mdp(3, 2, 0.4, seed=301)
        rep = optimality_certificate(m, 0.5, "safe")
        assert rep.ok
        assert rep.n_checked == 8

    def test_sampling_path(self, fig1):
        rep = optimality_certificate(fig1, 0.5, "safe", enumeration_cap=1, n_samples=10)
        assert rep.ok
        assert rep.n_checked == 11
