import numpy as np
import pytest

from incentive_mpc.cones import ConeSpec, Incentive
from incentive_mpc.incentives import (
    SurrogateState, ascent_step, dual_decrease_audit, iterate_incentive,
    mm_lambda_update, regularize_incentive, solve_optimal_incentive,
)
from incentive_mpc.lompc import (
    LoMPCSpec, Population, linear_incentive_map, solve_member,
    solve_representative,
)
from incentive_mpc.solvers import BoxSet, CompositeObjective


def quadratic_population(n, m, a, offsets, box=None):
    a = np.asarray(a, dtype=float)

    def smooth(w):
        d = w - a
        return 0.5 * m * np.sum(d * d, axis=-1), m * d

    base = CompositeObjective(smooth, strong_convexity_m=m)
    the_box = box if box is not None else BoxSet.unbounded(n)
    mapper = linear_incentive_map(n)
    members = [LoMPCSpec(base, the_box, th, m, mapper) for th in offsets]
    bound = max(float(np.linalg.norm(th)) for th in offsets)
    return Population(members, [list(range(len(members)))], [bound])


class TestAscentStep:
    def test_fixed_point(self):
        lam = np.array([1.0, -2.0])
        w = np.array([0.3, 0.4])
        np.testing.assert_array_equal(ascent_step(lam, w, w, 2.0), lam)

    def test_one_step_exact_on_unconstrained_quadratic(self):
        rng = np.random.default_rng(0)
        n, m = 5, 2.3
        a = rng.standard_normal(n)
        target = rng.standard_normal(n)
        lam0 = rng.standard_normal(n)
        w0 = a - lam0 / m  # response of the quadratic at lam0
        lam1 = ascent_step(lam0, w0, target, m)
        np.testing.assert_allclose(lam1, m * (a - target), atol=1e-12)
        w1 = a - lam1 / m
        np.testing.assert_allclose(w1, target, atol=1e-12)

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            ascent_step(np.zeros(2), np.zeros(3), np.zeros(2), 1.0)

    def test_rate_envelope_on_box_constrained_quadratics(self):
        # sqrt(k) * error stays within 3x the constant fitted on the first
        # ten iterations, out to k = 1000
        rng = np.random.default_rng(42)
        for _ in range(5):
            n = int(rng.integers(2, 6))
            m = 0.5 + rng.random()
            a = rng.standard_normal(n)
            box = BoxSet(-np.ones(n), np.ones(n))
            pop = quadratic_population(n, m, a, [np.zeros(n)], box=box)
            spec = pop.members[0]
            cone = spec.incentive_map.cone
            # boundary target
            target = np.clip(a + rng.uniform(0.5, 1.5, n), -1, 1)
            lam = rng.standard_normal(n)
            errs = []
            for k in range(1000):
                w = solve_member(spec, Incentive(lam, cone), tol=1e-11)
                errs.append(np.linalg.norm(w - target))
                lam = ascent_step(lam, w, target, m)
            errs = np.asarray(errs)
            k = np.arange(1, 1001)
            envelope = np.sqrt(k) * errs
            fitted = envelope[:10].max()
            assert envelope.max() <= 3.0 * fitted + 1e-9


class TestSurrogateUpdate:
    def test_zero_cone_closed_form(self):
        rng = np.random.default_rng(1)
        n, m, eps = 4, 1.8, 0.05
        w_k = rng.standard_normal(n)
        w_t = rng.standard_normal(n)
        lam = rng.standard_normal(n)
        mapper = linear_incentive_map(n)
        state = SurrogateState(lam, w_k, w_t, eps)
        lam_new, hit = mm_lambda_update(state, mapper, m)
        expected = lam + (w_k - w_t) / (2 * eps + 1.0 / m)
        np.testing.assert_allclose(lam_new, expected, atol=1e-7)
        assert not hit

    def test_no_step_at_target(self):
        n, m = 3, 2.0
        lam = np.array([0.5, 0.1, 0.9])
        w = np.array([0.2, 0.3, 0.4])
        mapper = linear_incentive_map(n)
        lam_new, _ = mm_lambda_update(SurrogateState(lam, w, w, 0.01), mapper, m)
        np.testing.assert_allclose(lam_new, lam, atol=1e-8)

    def test_direction_matches_ascent_as_eps_vanishes(self):
        rng = np.random.default_rng(5)
        n, m = 4, 2.2
        w_k = rng.standard_normal(n)
        w_t = rng.standard_normal(n)
        lam = rng.standard_normal(n)
        mapper = linear_incentive_map(n)
        lam_new, _ = mm_lambda_update(
            SurrogateState(lam, w_k, w_t, 1e-9), mapper, m, tol=1e-12)
        np.testing.assert_allclose(lam_new - lam, m * (w_k - w_t), atol=1e-5)

    def test_nonneg_cone_stays_feasible(self):
        rng = np.random.default_rng(6)
        n = 3

        def value(w):
            return np.asarray(w, dtype=float)

        from incentive_mpc.lompc import IncentiveMap
        mapper = IncentiveMap(value, lambda w, lam: lam + 0 * w,
                              ConeSpec("nonneg", n), n, n,
                              jacobian_matrix=lambda w: np.eye(n))
        lam = np.array([0.0, 0.2, 1.0])
        w_k = np.array([0.1, 0.9, 0.3])
        w_t = np.array([0.8, 0.1, 0.3])
        lam_new, _ = mm_lambda_update(SurrogateState(lam, w_k, w_t, 0.01), mapper, 1.0)
        assert np.all(lam_new >= -1e-12)

    def test_cap_diagnostic(self):
        n = 2
        mapper = linear_incentive_map(n)
        state = SurrogateState(np.zeros(n), np.full(n, 10.0), np.zeros(n), 1e-6)
        lam_new, hit = mm_lambda_update(state, mapper, 1e6, cap=1.0)
        assert hit
        assert np.all(np.abs(lam_new) <= 1.0 + 1e-12)


class TestDualDecreaseAudit:
    def _gbar(self, pop):
        cone = pop.group_spec(0).incentive_map.cone

        def gbar(lam_vec):
            return solve_representative(pop, 0, Incentive(lam_vec, cone),
                                        tol=1e-11)

        return gbar

    def test_no_step_gives_zero_decreases(self):
        n, m = 3, 2.0
        pop = quadratic_population(n, m, np.full(n, 0.4), [np.zeros(n)])
        lam = np.array([0.3, 0.2, 0.1])
        w = np.full(n, 0.4) - lam / m
        state = SurrogateState(lam, w, w_target=np.full(n, 0.1), eps_k=0.01,
                               lambda_next=lam.copy())
        rec = dual_decrease_audit(state, self._gbar(pop),
                                  pop.group_spec(0).incentive_map, m)
        assert rec.lhs == pytest.approx(0.0, abs=1e-9)
        assert rec.rhs == pytest.approx(0.0, abs=1e-9)
        assert rec.ok

    def test_quadratic_closed_form_dual(self):
        # for g = m/2 ||w - a||^2 the dual gbar(lam) = lam'a - ||lam||^2/(2m)
        rng = np.random.default_rng(3)
        n, m = 4, 1.5
        a = rng.random(n)
        pop = quadratic_population(n, m, a, [np.zeros(n)])
        mapper = pop.group_spec(0).incentive_map
        target = rng.random(n)
        lam_k = rng.standard_normal(n)
        w_k = a - lam_k / m
        state = SurrogateState(lam_k, w_k, target, 0.02)
        lam_n, _ = mm_lambda_update(state, mapper, m)
        state.lambda_next = lam_n
        rec = dual_decrease_audit(state, self._gbar(pop), mapper, m)

        def gt(lam):
            return lam @ a - lam @ lam / (2 * m) - lam @ target

        assert rec.lhs == pytest.approx(gt(lam_k) - gt(lam_n), abs=1e-7)
        assert rec.ok
        # with phi(w) = w the surrogate is exact: actual equals surrogate
        assert rec.actual_decrease == pytest.approx(rec.surrogate_decrease,
                                                    abs=1e-7)

    def test_audits_pass_along_full_runs(self):
        rng = np.random.default_rng(11)
        n = 4
        for _ in range(10):
            m = 0.5 + rng.random()
            a = rng.random(n)
            box = BoxSet(np.zeros(n), np.ones(n))
            offsets = [0.05 * rng.standard_normal(n) for _ in range(8)]
            pop = quadratic_population(n, m, a, offsets, box=box)
            spec = pop.group_spec(0)
            target = rng.uniform(0.1, 0.9, n)
            bound = pop.offset_bound_per_group[0] / m
            inc, w, res = solve_optimal_incentive(
                pop, 0, target, bound, eps_tol=1e-4, audit=True, max_iter=300)
            assert inc.converged
            for rec in res.audits:
                assert rec.ok
                assert rec.actual_decrease >= rec.surrogate_decrease - 1e-8


class TestSolveOptimalIncentive:
    def test_single_member_exact_controllability(self):
        rng = np.random.default_rng(7)
        n, m = 4, 2.0
        a = rng.random(n)
        box = BoxSet(np.zeros(n), np.ones(n))
        pop = quadratic_population(n, m, a, [np.zeros(n)], box=box)
        target = rng.uniform(0.2, 0.8, n)
        inc, w, _ = solve_optimal_incentive(pop, 0, target, 0.0, eps_tol=1e-6,
                                            max_iter=500)
        assert inc.converged
        assert inc.final_err <= 1e-6
        np.testing.assert_allclose(w, target, atol=1e-5)

    def test_warm_start_converges_immediately(self):
        rng = np.random.default_rng(8)
        n, m = 3, 1.5
        a = rng.random(n)
        pop = quadratic_population(n, m, a, [np.zeros(n)],
                                   box=BoxSet(np.zeros(n), np.ones(n)))
        target = rng.uniform(0.2, 0.8, n)
        inc, _, _ = solve_optimal_incentive(pop, 0, target, 0.0, eps_tol=1e-5,
                                            max_iter=500)
        again, _, _ = solve_optimal_incentive(pop, 0, target, 0.0, eps_tol=1e-5,
                                              lambda_ws=inc, max_iter=500)
        assert again.iterations == 0

    def test_error_bound_independent_of_population_size(self):
        rng = np.random.default_rng(9)
        n, m = 4, 1.2
        a = np.full(n, 0.5)
        box = BoxSet(np.zeros(n), np.ones(n))
        target = np.full(n, 0.55)
        dy = 0.2
        results = {}
        for M in (5, 50, 200):
            shifts = rng.uniform(-dy, dy, M)
            offsets = [np.full(n, s) for s in shifts]
            bound = dy * np.sqrt(n)
            pop = quadratic_population(n, m, a, offsets, box=box)
            inc, w, _ = solve_optimal_incentive(pop, 0, target, bound / m,
                                                eps_tol=1e-4, max_iter=300)
            assert inc.converged
            results[M] = inc.final_err
            assert inc.final_err <= bound / m + 1e-4
        # the certified bound is the same constant for every population size
        assert len({round(bound / m, 12)}) == 1

    def test_nonconvergence_returns_best_with_flag(self):
        n, m = 3, 1.0
        pop = quadratic_population(n, m, np.full(n, 0.5), [np.zeros(n)],
                                   box=BoxSet(np.zeros(n), np.ones(n)))
        target = np.full(n, 0.45)
        inc, w, res = solve_optimal_incentive(pop, 0, target, 0.0,
                                              eps_tol=1e-12, max_iter=3)
        assert not inc.converged
        assert inc.iterations == 3
        assert res.err_history.shape[0] == 4
        assert inc.final_err == pytest.approx(res.err_history.min(), abs=1e-12)


class TestRegularization:
    def test_identity_jacobian_forces_anchor(self):
        n = 4
        mapper = linear_incentive_map(n)
        lam = Incentive(np.array([0.4, -0.2, 0.1, 0.8]), mapper.cone)
        out = regularize_incentive(lam, np.zeros(n), mapper,
                                   c=np.ones(n), lambda_box_cap=10.0)
        np.testing.assert_allclose(out.values, lam.values, atol=1e-6)

    def test_zero_cost_returns_anchor(self):
        n = 3
        mapper = linear_incentive_map(n)
        lam = Incentive(np.array([0.4, 0.0, -0.3]), mapper.cone)
        out = regularize_incentive(lam, np.zeros(n), mapper, c=np.zeros(n))
        np.testing.assert_array_equal(out.values, lam.values)

    def test_never_increases_cost_and_preserves_response(self):
        rng = np.random.default_rng(13)
        n, m = 4, 1.5
        a = rng.random(n)
        box = BoxSet(np.zeros(n), np.ones(n))

        from incentive_mpc.lompc import IncentiveMap

        def value(w):
            return np.concatenate([w, w * w], axis=-1)

        def vjp(w, lam):
            return lam[..., :n] + 2.0 * w * lam[..., n:]

        mapper = IncentiveMap(value, vjp, ConeSpec("nonneg", 2 * n), n, 2 * n)

        def smooth(w):
            d = w - a
            return 0.5 * m * np.sum(d * d, axis=-1), m * d

        base = CompositeObjective(smooth, strong_convexity_m=m)
        spec = LoMPCSpec(base, box, np.zeros(n), m, mapper)
        pop = Population([spec], [[0]], [0.0])
        target = rng.uniform(0.2, 0.6, n)
        inc, w, _ = solve_optimal_incentive(pop, 0, target, 0.0, eps_tol=1e-5,
                                            max_iter=500)
        c = mapper.value(w)
        reg = regularize_incentive(inc, w, mapper, c, lambda_box_cap=1e4)
        assert float(reg.values @ c) <= float(inc.values @ c) + 1e-6
        w_again = solve_member(spec, reg, tol=1e-11)
        assert np.linalg.norm(w_again - w) <= 1e-4
