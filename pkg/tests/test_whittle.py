"""Closed-form index vs the subsidized-arm oracle, indexability, and the
relaxed bound.

The oracle (backward induction + bisection on the indifference subsidy)
never evaluates the closed form, so grid agreement between the two is a
real check, not a tautology.
"""

import numpy as np
import pytest

from edgebandit.dynamics import PenaltyFn, TaskState
from edgebandit.whittle import (
    ArmChain,
    IndexInput,
    SubsidizedArmMDP,
    arm_chain_value,
    arm_chain_value_reference,
    _chain_values,
    indexability_check,
    relaxed_upper_bound,
    single_arm_value_iteration,
    subsidy_threshold,
    subsidy_threshold_table,
    whittle_index,
    whittle_index_array,
)

THEORY1 = PenaltyFn.theory(1.0)


def mdp(**kw) -> SubsidizedArmMDP:
    base = dict(
        horizon=6,
        max_backlog=16,
        capacity=4,
        discount=0.9,
        penalty=THEORY1,
        e_saving=1.0,
    )
    base.update(kw)
    return SubsidizedArmMDP(**base)


def wi(tau, b, e=1.0, k=4, beta=0.9, penalty=THEORY1):
    return whittle_index(IndexInput(TaskState(tau, b), e, k, beta, penalty))


class TestClosedForm:
    def test_no_work_is_zero(self):
        for tau in (0, 1, 7):
            assert wi(tau, 0) == 0.0

    def test_deadline_slot_single_subtask(self):
        assert wi(1, 1, e=2.5) == pytest.approx(2.5)

    def test_must_serve_branch(self):
        assert wi(2, 7, e=1.0, k=4, beta=0.9) == pytest.approx(4.6, rel=1e-12)

    def test_unsalvageable_branch(self):
        assert wi(2, 9, e=1.0, k=4, beta=0.9) == pytest.approx(14.5, rel=1e-12)

    def test_branches_partition_all_valid_states(self):
        # every state with work lands in exactly one of the three working
        # regimes; b == 0 short-circuits to the first branch
        pen = PenaltyFn.experiment(0.5)
        for tau in range(0, 11):
            for b in range(0, 31):
                if tau == 0 and b > 0:
                    continue
                for k in (1, 2, 4, 10):
                    if b >= 1:
                        regimes = [
                            1 <= b <= (tau - 1) * k + 1,
                            k * tau - k + 2 <= b <= k * tau,
                            b >= k * tau + 1,
                        ]
                        assert sum(regimes) == 1
                    wi(tau, b, k=k, penalty=pen)  # never raises

    def test_seam_between_flat_and_urgent(self):
        # adjacent states across the regime boundary differ by the
        # discounted one-subtask penalty
        for tau in (2, 3, 5):
            for k in (2, 4):
                b_flat = k * tau - k + 1
                b_urgent = b_flat + 1
                gap = wi(tau, b_urgent, k=k) - wi(tau, b_flat, k=k)
                assert gap == pytest.approx(0.9 ** (tau - 1) * THEORY1(1), rel=1e-12)

    def test_monotone_in_backlog_for_convex_penalty(self):
        for k in (1, 2, 4, 10):
            for tau in range(1, 8):
                vals = [wi(tau, b, k=k) for b in range(0, 25)]
                assert all(b2 >= b1 - 1e-12 for b1, b2 in zip(vals, vals[1:]))

    def test_array_matches_scalar(self):
        pen = PenaltyFn.experiment(2.0)
        rng = np.random.default_rng(0)
        taus = rng.integers(1, 10, 200)
        bs = rng.integers(0, 30, 200)
        es = rng.uniform(-1, 3, 200)
        ks = rng.integers(1, 10, 200)
        batch = whittle_index_array(taus, bs, es, ks, 0.95, pen)
        scalar = [
            whittle_index(IndexInput(TaskState(int(t), int(b)), float(e), int(k), 0.95, pen))
            for t, b, e, k in zip(taus, bs, es, ks)
        ]
        np.testing.assert_allclose(batch, scalar, rtol=1e-13)

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError):
            IndexInput(TaskState(1, 1), 1.0, 0, 0.9, THEORY1)
        with pytest.raises(ValueError):
            IndexInput(TaskState(1, 1), 1.0, 4, 0.0, THEORY1)


class TestSingleArmValueIteration:
    def test_huge_subsidy_passive_everywhere(self):
        _, actions = single_arm_value_iteration(mdp(subsidy=1e6))
        assert np.all(actions == 0)

    def test_negative_subsidy_active_where_saving_positive(self):
        m = mdp(subsidy=-5.0, e_saving=1.0)
        _, actions = single_arm_value_iteration(m)
        for tau in range(2, m.horizon + 1):
            for b in range(1, m.max_backlog + 1):
                assert actions[tau, b] == 1

    def test_exact_tie_resolves_passive(self):
        m = mdp(subsidy=1.0, e_saving=1.0)
        _, actions = single_arm_value_iteration(m)
        assert actions[1, 1] == 0


class TestSubsidyThreshold:
    def test_zero_for_empty_states(self):
        m = mdp()
        for tau in (0, 1, 4):
            assert subsidy_threshold(m, TaskState(tau, 0)) == pytest.approx(0.0, abs=1e-8)

    def test_deadline_slot_formula(self):
        # at one slot to deadline with 1 < b <= k the indifference point is
        # saving + penalty(b - 1)
        m = mdp(e_saving=1.7)
        for b in range(2, m.capacity + 1):
            got = subsidy_threshold(m, TaskState(1, b))
            assert got == pytest.approx(1.7 + THEORY1(b - 1), abs=1e-7)

    def test_table_matches_scalar(self):
        m = mdp(horizon=4, max_backlog=8)
        table = subsidy_threshold_table(m)
        for tau in range(0, 5):
            for b in range(0, 9):
                if tau == 0 and b > 0:
                    continue
                assert table[tau, b] == pytest.approx(
                    subsidy_threshold(m, TaskState(tau, b)), abs=1e-7
                )

    @pytest.mark.parametrize("k", [2, 4])
    def test_oracle_equals_closed_form_nonnegative_saving(self, k):
        m = mdp(horizon=6, max_backlog=20, capacity=k, discount=0.95, e_saving=1.7)
        table = subsidy_threshold_table(m)
        taus, bs = np.nonzero(~np.isnan(table))
        closed = whittle_index_array(
            taus, bs, np.full(taus.shape, 1.7), np.full(taus.shape, k), 0.95, THEORY1
        )
        np.testing.assert_allclose(closed, table[taus, bs], atol=1e-6)

    def test_negative_saving_diverges_from_closed_form(self):
        # With a negative saving, holding backlog hurts future value, so the
        # true indifference point at (2, 2) is saving / (1 + beta): solve
        # delta + beta*max(delta, e) = e + beta*max(delta, 0) by hand.
        # The printed closed form still returns the saving itself; its
        # derivation orders the indifference cases assuming saving >= 0.
        e, beta = -1.0, 0.9
        m = mdp(e_saving=e, discount=beta, capacity=4)
        got = subsidy_threshold(m, TaskState(2, 2))
        assert got == pytest.approx(e / (1 + beta), abs=1e-7)
        assert wi(2, 2, e=e, beta=beta) == pytest.approx(e)  # != oracle

    def test_offset_penalty_seam_diverges_from_closed_form(self):
        # With the offset penalty a + c*x^2 and capacity 2, the state
        # (2, 4) sits where the closed form's derivation breaks: the
        # candidate threshold carries the full offset a while the
        # downstream thresholds only see penalty differences, inverting
        # the case ordering.  Solving the indifference by hand with
        # (1, 3) passive and (1, 2) active gives
        # delta* = e + beta * F(2) / (1 + beta).
        pen = PenaltyFn.experiment(0.5)
        e, beta = 1.5, 0.99
        m = mdp(e_saving=e, discount=beta, capacity=2, penalty=pen, horizon=4, max_backlog=10)
        got = subsidy_threshold(m, TaskState(2, 4))
        assert got == pytest.approx(e + beta * pen(2) / (1 + beta), abs=1e-7)
        closed = wi(2, 4, e=e, k=2, beta=beta, penalty=pen)
        assert closed == pytest.approx(e + beta * pen(1))  # != oracle

    def test_out_of_bounds_state_rejected(self):
        with pytest.raises(ValueError):
            subsidy_threshold(mdp(horizon=3), TaskState(5, 1))


class _NonIndexableChain:
    """Deterministic three-decision chain whose passive set is not monotone.

    States X -> Y -> Y2 -> end with active rewards (-4, 5, 5) and discount
    0.9; passivity at X ends the episode.  For large subsidies the two
    downstream passive slots reachable only through the active action at X
    outweigh a single passive slot, so X re-enters the active set:
    passive at X holds exactly for subsidy in [4.55, 40/7.1].
    """

    beta = 0.9

    def passive_set(self, delta: float) -> np.ndarray:
        v_y2 = max(delta, 5.0)
        v_y = max(delta, 5.0) + self.beta * v_y2
        x_passive = delta >= -4.0 + self.beta * v_y
        return np.array([x_passive, delta >= 5.0, delta >= 5.0])


class TestIndexability:
    def test_valid_arm_is_indexable(self):
        m = mdp(penalty=PenaltyFn.experiment(0.5), e_saving=1.3)
        width = 2.0 * (m.penalty(m.max_backlog) + abs(m.e_saving)) + 1.0
        report = indexability_check(m, np.linspace(-width, width, 200))
        assert report.indexable and report.empty_at_min and report.full_at_max

    def test_single_point_grid_trivially_true(self):
        assert indexability_check(mdp(), [0.5]).indexable

    def test_counterexample_detected(self):
        report = indexability_check(_NonIndexableChain(), np.linspace(0.0, 10.0, 200))
        assert not report.indexable
        assert report.violation is not None
        lo, hi, state = report.violation
        assert lo < 40.0 / 7.1 < hi  # the subsidy where X leaves the passive set
        assert state == (0,)

    def test_decreasing_grid_rejected(self):
        with pytest.raises(ValueError):
            indexability_check(mdp(), [1.0, 0.5])

    def test_negative_saving_still_indexable(self):
        m = mdp(e_saving=-1.0, penalty=PenaltyFn.experiment(1.0))
        width = 2.0 * (m.penalty(m.max_backlog) + 1.0) + 1.0
        assert indexability_check(m, np.linspace(-width, width, 200)).indexable


def small_chain(q=0.6, k=2):
    size = np.zeros((3, 5))
    for d in range(1, 4):
        top = min(5, k * d)
        size[d - 1, :top] = 1.0 / top
    return ArmChain(
        capacity=k,
        penalty=PenaltyFn.experiment(0.5),
        arrival_prob=q,
        duration_probs=np.full(3, 1 / 3),
        size_probs=size,
        esav_values=np.array([-0.5, 0.3, 1.2]),
    )


class TestArmChainValue:
    @pytest.mark.parametrize("delta", [-2.0, -0.3, 0.0, 0.7, 3.0])
    def test_renewal_matches_value_iteration(self, delta):
        chain = small_chain()
        exact = arm_chain_value(chain, delta, 0.95)
        reference = arm_chain_value_reference(chain, delta, 0.95)
        assert exact == pytest.approx(reference, abs=5e-8)

    def test_finite_horizon_converges_to_renewal(self):
        chain = small_chain()
        inf_val = arm_chain_value(chain, 0.7, 0.95)
        vals = [_chain_values([chain], 0.7, 0.95, t) for t in (50, 400, 3200)]
        errs = [abs(v - inf_val) for v in vals]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-6

    def test_idle_forever_with_no_arrivals(self):
        chain = small_chain(q=0.0)
        # never any task: value is max(delta, 0) per slot, discounted
        assert arm_chain_value(chain, 0.4, 0.9) == pytest.approx(0.4 / 0.1, rel=1e-9)
        assert arm_chain_value(chain, -0.4, 0.9) == pytest.approx(0.0, abs=1e-12)


class TestRelaxedBound:
    def test_all_servers_forces_active_value(self):
        chains = [small_chain(), small_chain(k=3)]
        bound = relaxed_upper_bound(chains, num_servers=2, discount=0.95)
        forced = sum(arm_chain_value(c, 0.0, 0.95, force_active=True) for c in chains)
        assert bound == pytest.approx(forced, rel=1e-12)

    def test_single_idle_arm_no_server(self):
        # V = max(delta, 0)/(1-beta); inf over delta of V - delta/(1-beta) is 0
        bound = relaxed_upper_bound([small_chain(q=0.0)], num_servers=0, discount=0.9)
        assert bound == pytest.approx(0.0, abs=1e-6)

    def test_grid_resolution_invariance(self):
        chains = [small_chain(), small_chain(k=3)]
        a = relaxed_upper_bound(chains, 1, 0.95, grid_points=17)
        b = relaxed_upper_bound(chains, 1, 0.95, grid_points=129)
        assert a == pytest.approx(b, rel=1e-4)

    def test_dominates_passive_and_active_static_policies(self):
        chains = [small_chain(), small_chain(k=3), small_chain(q=0.3)]
        bound = relaxed_upper_bound(chains, 1, 0.95)
        always_active = sum(arm_chain_value(c, 0.0, 0.95, force_active=True) for c in chains)
        assert bound >= always_active - 1e-9

    def test_bad_discount_rejected(self):
        with pytest.raises(ValueError):
            relaxed_upper_bound([small_chain()], 1, 1.0)
