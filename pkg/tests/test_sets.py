import numpy as np
import pytest
from scipy.optimize import linprog

from koopman_reach.numerics import IntervalBox
from koopman_reach.observables import build_dictionary, lift_point
from koopman_reach.sets import (
    HalfSpace,
    UnsafeSet,
    Zonotope,
    backpropagate_halfspace,
    box_from_halfspaces,
    contract_box_halfspaces,
    contract_box_linear,
    contract_domain,
    lift_unsafe,
    reach_zonotope,
    split_box,
)


class TestHalfSpace:
    def test_zero_normal_rejected(self):
        with pytest.raises(ValueError):
            HalfSpace(np.zeros(3), 1.0)

    def test_slack_and_contains(self):
        h = HalfSpace(np.array([1.0, 0.0]), 2.0)
        assert h.contains([1.5, 7.0])
        assert h.slack([1.5, 7.0]) == pytest.approx(0.5)
        assert not h.contains([2.5, 0.0])

    def test_printable(self):
        assert repr(HalfSpace(np.array([0.0, 1.0]), 3.0)) == "HalfSpace{0,1;3}"


class TestLiftUnsafe:
    def test_coordinate_placement(self):
        u = UnsafeSet((HalfSpace(np.array([0.0, 1.0]), 3.0),))
        (h,) = lift_unsafe(u, 5)
        assert np.array_equal(h.normal, [0, 1, 0, 0, 0])
        assert h.offset == 3.0

    def test_negated_coordinate(self):
        u = UnsafeSet((HalfSpace(np.array([-1.0, 0.0]), 0.0),))
        (h,) = lift_unsafe(u, 4)
        assert np.array_equal(h.normal, [-1, 0, 0, 0])

    def test_lifted_agrees_on_lifted_points(self):
        rng = np.random.default_rng(3)
        dic = build_dictionary(2, 3)
        u = UnsafeSet(
            (
                HalfSpace(np.array([1.0, -0.5]), 0.25),
                HalfSpace(np.array([0.0, 1.0]), 1.5),
            )
        )
        lifted = lift_unsafe(u, dic.size)
        for _ in range(500):
            x = rng.uniform(-2, 2, 2)
            y = lift_point(dic, x)
            assert u.contains(x) == all(h.contains(y) for h in lifted)


class TestBackpropagate:
    def test_identity_unchanged(self):
        h = HalfSpace(np.array([1.0, 2.0]), 3.0)
        b = backpropagate_halfspace(np.eye(2), h)
        assert np.array_equal(b.normal, h.normal) and b.offset == h.offset

    def test_scalar_exponential_flow(self):
        t, d = 0.7, 2.0
        k = np.array([[np.exp(t)]])
        b = backpropagate_halfspace(k, HalfSpace(np.array([1.0]), d))
        assert b.normal[0] == pytest.approx(np.exp(t))
        # states below d*e^{-t} flow to states below d
        y0 = d * np.exp(-t) - 1e-9
        assert b.contains([y0])

    def test_pullback_soundness_randomized(self):
        rng = np.random.default_rng(5)
        for _ in range(10_000):
            k = rng.uniform(-2, 2, (3, 3))
            q = rng.uniform(-1, 1, 3)
            while not q.any():
                q = rng.uniform(-1, 1, 3)
            r = rng.uniform(-1, 1)
            hs = HalfSpace(q, r)
            back = backpropagate_halfspace(k, hs)
            y0 = rng.uniform(-5, 5, 3)
            if back.contains(y0):
                fwd = float(q @ (k @ y0))
                assert fwd <= r + 1e-12 * max(1.0, abs(fwd), abs(r))


class TestReachZonotope:
    def test_identity_box(self):
        z = reach_zonotope(IntervalBox.from_bounds([[0, 2], [0, 2]]), np.eye(2))
        assert np.array_equal(z.center, [1, 1])
        assert np.array_equal(z.generators, np.eye(2))

    def test_point_box(self):
        k = np.array([[2.0, 0.0], [1.0, 1.0]])
        z = reach_zonotope(IntervalBox.from_bounds([[0.5, 0.5], [1, 1]]), k)
        assert not z.generators.any()
        assert np.allclose(z.center, k @ [0.5, 1.0])

    def test_membership_randomized(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            k = rng.uniform(-2, 2, (3, 3))
            lo = rng.uniform(-2, 0, 3)
            box = IntervalBox(lo, lo + rng.uniform(0.1, 2, 3))
            z = reach_zonotope(box, k)
            for _ in range(500):
                x = box.sample(rng.uniform(0, 1, 3))
                alpha = np.where(box.rads > 0, (x - box.mids) / np.where(box.rads > 0, box.rads, 1.0), 0.0)
                assert (np.abs(alpha) <= 1 + 1e-12).all()
                assert np.allclose(z.point(alpha), k @ x, atol=1e-9)


class TestSupport:
    def test_unit_square(self):
        z = reach_zonotope(IntervalBox.from_bounds([[-1, 1], [-1, 1]]), np.eye(2))
        assert z.support(np.array([1.0, 0.0])) == 1.0

    def test_point(self):
        z = Zonotope(np.array([2.0, -1.0]), np.zeros((2, 1)), IntervalBox.from_bounds([[-1, 1]]))
        assert z.support(np.array([3.0, 1.0])) == pytest.approx(5.0)

    def test_vertex_enumeration_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            dim = rng.integers(2, 5)
            p = rng.integers(1, 7)
            c = rng.uniform(-2, 2, dim)
            g = rng.uniform(-1, 1, (dim, p))
            lo = rng.uniform(-1.5, 0, p)
            dom = IntervalBox(lo, lo + rng.uniform(0, 2, p))
            z = Zonotope(c, g, dom)
            corners = np.array(np.meshgrid(*[[dom.los[j], dom.his[j]] for j in range(p)])).reshape(p, -1)
            verts = c[:, None] + g @ corners
            for _ in range(5):
                d = rng.standard_normal(dim)
                assert z.support(d) == pytest.approx((d @ verts).max(), abs=1e-10)


class TestContraction:
    def test_satisfied_constraint_no_change(self):
        box = IntervalBox.from_bounds([[-1, 1], [-1, 1]])
        out = contract_box_linear(box, np.array([1.0, 0.0]), 5.0)
        assert out == box

    def test_infeasible_empty(self):
        box = IntervalBox.from_bounds([[-1, 1]])
        assert contract_box_linear(box, np.array([1.0]), -2.0) is None

    def test_hand_propagation_example(self):
        box = IntervalBox.from_bounds([[-1, 1], [-1, 1]])
        out = contract_box_linear(box, np.array([1.0, 1.0]), -1.5)
        assert np.allclose(out.los, [-1, -1])
        assert np.allclose(out.his, [-0.5, -0.5])

    def test_against_lp_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            n = rng.integers(2, 5)
            lo = rng.uniform(-2, 0, n)
            box = IntervalBox(lo, lo + rng.uniform(0.5, 2, n))
            w = rng.standard_normal(n)
            s = float(w @ box.mids + rng.uniform(-1, 1))
            out = contract_box_linear(box, w, s)
            # exact per-dimension bounds of {x in box : w.x <= s} by LP
            bounds = list(zip(box.los, box.his))
            feasible = linprog(np.zeros(n), A_ub=w[None, :], b_ub=[s], bounds=bounds, method="highs")
            if not feasible.success:
                assert out is None
                continue
            assert out is not None
            for j in range(n):
                c = np.zeros(n)
                c[j] = 1.0
                lo_j = linprog(c, A_ub=w[None, :], b_ub=[s], bounds=bounds, method="highs").fun
                hi_j = -linprog(-c, A_ub=w[None, :], b_ub=[s], bounds=bounds, method="highs").fun
                # sound: the contracted box contains the exact feasible hull
                assert out.los[j] <= lo_j + 1e-9
                assert out.his[j] >= hi_j - 1e-9

    def test_round_robin_reduces_and_keeps_solutions(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            box = IntervalBox.from_bounds([[-1, 1], [-1, 1], [-1, 1]])
            hss = [HalfSpace(rng.standard_normal(3), rng.uniform(-0.5, 1.0)) for _ in range(4)]
            out = contract_box_halfspaces(box, hss)
            samples = box.sample(rng.uniform(0, 1, (200, 3)))
            inside = [x for x in samples if all(h.contains(x) for h in hss)]
            if out is None:
                assert not inside
                continue
            assert box.encloses(out)
            for x in inside:
                assert out.contains(x, atol=1e-12)

    def test_contract_domain_examples(self):
        z = reach_zonotope(IntervalBox.from_bounds([[-1, 1], [-1, 1]]), np.eye(2))
        # constraint y1 <= -2 has empty overlap with [-1,1]^2
        assert contract_domain(z, HalfSpace(np.array([1.0, 0.0]), -2.0)) is None
        out = contract_domain(z, HalfSpace(np.array([1.0, 1.0]), -1.5))
        assert np.allclose(out.his, [-0.5, -0.5])

    def test_contract_domain_membership(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            k = rng.uniform(-1, 1, (3, 3))
            box = IntervalBox.from_bounds([[-1, 1]] * 3)
            z = reach_zonotope(box, k)
            hs = HalfSpace(rng.standard_normal(3), rng.uniform(-0.5, 0.5))
            dom = contract_domain(z, hs)
            alphas = rng.uniform(-1, 1, (300, 3))
            kept = [a for a in alphas if hs.contains(z.point(a))]
            if dom is None:
                assert not kept
                continue
            for a in kept:
                assert dom.contains(a, atol=1e-12)


class TestSplit:
    def test_examples(self):
        a, b = split_box(IntervalBox.from_bounds([[0, 4], [0, 1]]))
        assert a == IntervalBox.from_bounds([[0, 2], [0, 1]])
        assert b == IntervalBox.from_bounds([[2, 4], [0, 1]])

    def test_support_refinement(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            k = rng.uniform(-2, 2, (4, 4))
            lo = rng.uniform(-2, 0, 4)
            box = IntervalBox(lo, lo + rng.uniform(0.2, 2, 4))
            parent = reach_zonotope(box, k)
            c1, c2 = split_box(box)
            for _ in range(10):
                d = rng.standard_normal(4)
                ps = parent.support(d)
                assert reach_zonotope(c1, k).support(d) <= ps + 1e-12
                assert reach_zonotope(c2, k).support(d) <= ps + 1e-12


class TestBoxFromHalfspaces:
    def test_unit_square(self):
        hss = [
            HalfSpace(np.array([1.0, 0.0]), 1.0),
            HalfSpace(np.array([-1.0, 0.0]), 0.0),
            HalfSpace(np.array([0.0, 1.0]), 1.0),
            HalfSpace(np.array([0.0, -1.0]), 0.0),
        ]
        box = box_from_halfspaces(hss, 2)
        assert np.allclose(box.los, [0, 0]) and np.allclose(box.his, [1, 1])
