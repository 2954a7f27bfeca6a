import numpy as np
import pytest

from incentive_mpc.solvers import (
    BoxSet, CompositeObjective, Infeasible, MaxIterExceeded,
    NonFiniteObjective, PolytopeProgram, check_gradient, project_box,
    solve_composite, solve_polytope, solve_polytope_full,
)

from oracles import clamp_qp_solution, kkt_qp, soft_threshold_clip


def quadratic(q, a, theta=None):
    """Objective sum q_i (w_i - a_i)^2 + <theta, w> as a smooth callback."""
    q = np.asarray(q, dtype=float)
    a = np.asarray(a, dtype=float)
    theta = np.zeros_like(a) if theta is None else np.asarray(theta, dtype=float)

    def smooth(w):
        d = w - a
        val = np.sum(q * d * d, axis=-1) + np.sum(theta * w, axis=-1)
        grad = 2.0 * q * d + theta
        return val, grad

    return smooth


class TestProjectBox:
    def test_clamps_outside_points(self):
        box = BoxSet([0, 0], [1, 1])
        np.testing.assert_allclose(project_box(np.array([2.0, -1.0]), box), [1, 0])

    def test_identity_inside(self):
        box = BoxSet([0, 0], [1, 1])
        v = np.array([0.4, 0.9])
        np.testing.assert_allclose(project_box(v, box), v)

    def test_mixed(self):
        box = BoxSet([0, 0, 0], [1, 1, 1])
        np.testing.assert_allclose(
            project_box(np.array([0.5, 3.0, -3.0]), box), [0.5, 1.0, 0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            project_box(np.zeros(3), BoxSet([0, 0], [1, 1]))

    def test_invalid_box(self):
        with pytest.raises(ValueError):
            BoxSet([1.0], [0.0])

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        box = BoxSet(-rng.random(5), rng.random(5))
        v = rng.standard_normal(5) * 3
        p = project_box(v, box)
        np.testing.assert_array_equal(project_box(p, box), p)


class TestSolveComposite:
    def test_norm_squared_min_at_origin(self):
        n = 6
        obj = CompositeObjective(quadratic(np.ones(n), np.zeros(n)),
                                 strong_convexity_m=2.0)
        res = solve_composite(obj, BoxSet(np.zeros(n), np.ones(n)), tol=1e-10)
        assert res.converged
        np.testing.assert_allclose(res.w, np.zeros(n), atol=1e-8)

    def test_unconstrained_stationarity(self):
        rng = np.random.default_rng(0)
        n = 5
        a = rng.standard_normal(n)
        q = 0.5 + rng.random(n)
        obj = CompositeObjective(quadratic(q, a))
        res = solve_composite(obj, BoxSet.unbounded(n), tol=1e-10)
        np.testing.assert_allclose(res.w, a, atol=1e-8)

    def test_soft_threshold_then_clip(self):
        # (w - 0.8)^2 + |w| on [0, 1]: prox path must land on 0.3 exactly
        def smooth(w):
            d = w - 0.8
            return np.sum(d * d, axis=-1), 2.0 * d

        def prox(v, t):
            return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)

        obj = CompositeObjective(smooth, prox, 2.0, prox_value=lambda w: np.sum(np.abs(w), axis=-1))
        res = solve_composite(obj, BoxSet([0.0], [1.0]), tol=1e-11)
        expected = soft_threshold_clip(0.8, 1.0, 0.0, 1.0)
        assert expected == pytest.approx(0.3, abs=1e-12)
        np.testing.assert_allclose(res.w, [expected], atol=1e-8)

    def test_matches_clamp_oracle_on_random_box_qps(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            n = int(rng.integers(1, 9))
            q = 0.3 + 2.7 * rng.random(n)
            a = 2.0 * rng.standard_normal(n)
            lo = -rng.random(n)
            hi = rng.random(n)
            obj = CompositeObjective(quadratic(q, a), strong_convexity_m=2 * q.min())
            res = solve_composite(obj, BoxSet(lo, hi), tol=1e-10)
            np.testing.assert_allclose(
                res.w, clamp_qp_solution(q, a, lo, hi), atol=1e-6)

    def test_batched_rows_match_individual_solves(self):
        rng = np.random.default_rng(11)
        n, B = 6, 7
        q = 0.5 + rng.random(n)
        a = rng.standard_normal(n)
        thetas = rng.standard_normal((B, n))
        lo, hi = -np.ones(n), np.ones(n)

        def smooth(w):
            d = w - a
            val = np.sum(q * d * d, axis=-1) + np.sum(thetas * w, axis=-1)
            return val, 2.0 * q * d + thetas

        res = solve_composite(CompositeObjective(smooth), BoxSet(lo, hi),
                              tol=1e-10, w0=np.zeros((B, n)))
        for i in range(B):
            obj_i = CompositeObjective(quadratic(q, a, thetas[i]))
            ri = solve_composite(obj_i, BoxSet(lo, hi), tol=1e-10)
            np.testing.assert_allclose(res.w[i], ri.w, atol=1e-7)

    def test_monotone_descent_history(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            n = int(rng.integers(2, 8))
            q = 0.05 + rng.random(n) * 4  # poorly conditioned on purpose
            a = rng.standard_normal(n)
            obj = CompositeObjective(quadratic(q, a))
            res = solve_composite(obj, BoxSet(-np.ones(n), np.ones(n)),
                                  tol=1e-10, track_objective=True)
            hist = res.objective_history
            scale = 1.0 + np.abs(hist).max()
            assert np.all(np.diff(hist) <= 1e-12 * scale)

    def test_strong_convexity_contraction(self):
        # solutions of problems differing by a linear term move by at most
        # the term's distance over the modulus
        rng = np.random.default_rng(13)
        for _ in range(25):
            n = int(rng.integers(2, 7))
            q = 0.4 + rng.random(n)
            m = 2.0 * q.min()
            a = rng.standard_normal(n)
            lo, hi = -rng.random(n) * 2, rng.random(n) * 2
            th1 = rng.standard_normal(n)
            th2 = rng.standard_normal(n)
            w1 = solve_composite(CompositeObjective(quadratic(q, a, th1)),
                                 BoxSet(lo, hi), tol=1e-11).w
            w2 = solve_composite(CompositeObjective(quadratic(q, a, th2)),
                                 BoxSet(lo, hi), tol=1e-11).w
            lhs = np.linalg.norm(w1 - w2)
            assert lhs <= np.linalg.norm(th1 - th2) / m + 1e-7

    def test_max_iter_returns_best_iterate(self):
        n = 4
        q = np.array([1e-3, 1.0, 10.0, 100.0])
        obj = CompositeObjective(quadratic(q, np.full(n, 0.37)))
        res = solve_composite(obj, BoxSet(np.zeros(n), np.ones(n)),
                              tol=1e-14, max_iter=2)
        assert not res.converged
        assert np.isfinite(res.residual)
        with pytest.raises(MaxIterExceeded):
            solve_composite(obj, BoxSet(np.zeros(n), np.ones(n)),
                            tol=1e-14, max_iter=2, strict=True)

    def test_non_finite_objective_raises(self):
        def bad(w):
            return np.full(w.shape[:-1], np.nan), np.full_like(w, np.nan)

        with pytest.raises(NonFiniteObjective):
            solve_composite(CompositeObjective(bad), BoxSet([0.0], [1.0]))

    def test_dimension_mismatch(self):
        obj = CompositeObjective(quadratic(np.ones(3), np.zeros(3)))
        with pytest.raises(ValueError):
            solve_composite(obj, BoxSet(np.zeros(3), np.ones(3)), w0=np.zeros(4))

    def test_check_gradient_helper(self):
        ok = quadratic(np.ones(4), np.zeros(4))
        assert check_gradient(ok, np.ones(4)) < 1e-5

        def wrong(w):
            val, g = ok(w)
            return val, g * 1.01

        with pytest.raises(NonFiniteObjective):
            check_gradient(wrong, np.ones(4))


class TestSolvePolytope:
    def test_simplex_symmetry(self):
        n = 4

        def f(z):
            return float(z @ z), 2.0 * z

        prog = PolytopeProgram(f, BoxSet(np.zeros(n), np.full(n, np.inf)),
                               eq_A=np.ones((1, n)), eq_b=np.array([1.0]))
        z = solve_polytope(prog, tol_feas=1e-8, tol_opt=1e-6)
        np.testing.assert_allclose(z, np.full(n, 0.25), atol=1e-5)

    def test_power_objective_symmetry(self):
        # strictly convex symmetric objective on the budget line
        def f(z):
            zc = np.maximum(z, 0.0)
            return float(np.sum(zc ** 1.7)), 1.7 * zc ** 0.7

        prog = PolytopeProgram(f, BoxSet([0.0, 0.0], [2.0, 2.0]),
                               eq_A=np.ones((1, 2)), eq_b=np.array([2.0]))
        z = solve_polytope(prog, tol_feas=1e-8, tol_opt=1e-6)
        np.testing.assert_allclose(z, [1.0, 1.0], atol=1e-4)

    def _random_feasible_qp(self, rng):
        n = int(rng.integers(2, 7))
        M = rng.standard_normal((n, n))
        H = M.T @ M + 0.5 * np.eye(n)
        c = rng.standard_normal(n)
        lo, hi = -np.ones(n), np.ones(n)
        z_feas = rng.uniform(-0.5, 0.5, n)
        G = rng.standard_normal((2, n))
        h = G @ z_feas + rng.uniform(0.05, 0.5, 2)
        A = rng.standard_normal((1, n))
        b = A @ z_feas
        return n, H, c, lo, hi, A, b, G, h

    def test_random_qps_match_kkt_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(15):
            n, H, c, lo, hi, A, b, G, h = self._random_feasible_qp(rng)

            def f(z, H=H, c=c):
                return float(0.5 * z @ H @ z + c @ z), H @ z + c

            prog = PolytopeProgram(f, BoxSet(lo, hi), eq_A=A, eq_b=b,
                                   ineq_C=G, ineq_d=h)
            z = solve_polytope(prog, tol_feas=1e-8, tol_opt=1e-7)
            G_full = np.vstack([G, np.eye(n), -np.eye(n)])
            h_full = np.concatenate([h, hi, -lo])
            z_ref = kkt_qp(H, c, A=A, b=b, G=G_full, h=h_full)
            np.testing.assert_allclose(z, z_ref, atol=1e-5)

    def test_complementary_slackness(self):
        rng = np.random.default_rng(33)
        for _ in range(8):
            n, H, c, lo, hi, A, b, G, h = self._random_feasible_qp(rng)

            def f(z, H=H, c=c):
                return float(0.5 * z @ H @ z + c @ z), H @ z + c

            prog = PolytopeProgram(f, BoxSet(lo, hi), eq_A=A, eq_b=b,
                                   ineq_C=G, ineq_d=h)
            res = solve_polytope_full(prog, tol_feas=1e-8, tol_opt=1e-7)
            cs = np.abs(res.ineq_mult * (G @ res.z - h))
            assert np.max(cs) <= 1e-5

    def test_feasibility_residuals_within_tolerance(self):
        rng = np.random.default_rng(5)
        n, H, c, lo, hi, A, b, G, h = self._random_feasible_qp(rng)

        def f(z):
            return float(0.5 * z @ H @ z + c @ z), H @ z + c

        prog = PolytopeProgram(f, BoxSet(lo, hi), eq_A=A, eq_b=b,
                               ineq_C=G, ineq_d=h)
        z = solve_polytope(prog, tol_feas=1e-9, tol_opt=1e-7)
        assert np.max(np.abs(A @ z - b)) <= 1e-9
        assert np.max(G @ z - h) <= 1e-9

    def test_infeasible_program_raises(self):
        def f(z):
            return float(z @ z), 2.0 * z

        # z >= 0 with sum(z) = -1 cannot be met
        prog = PolytopeProgram(f, BoxSet([0.0, 0.0], [1.0, 1.0]),
                               eq_A=np.ones((1, 2)), eq_b=np.array([-1.0]))
        with pytest.raises((Infeasible, MaxIterExceeded)):
            solve_polytope(prog, tol_feas=1e-9, tol_opt=1e-7, max_outer=30)
