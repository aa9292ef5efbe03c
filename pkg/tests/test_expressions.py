import math
import pickle

import numpy as np
import pytest

from koopman_reach import expressions as ex
from koopman_reach.numerics import Interval


class TestFactories:
    def test_constant_folding(self):
        assert ex.add(ex.const(2), ex.const(3)) is ex.const(5)
        assert ex.mul(ex.const(2), ex.const(3)) is ex.const(6)
        assert ex.int_pow(ex.const(2), 3) is ex.const(8)

    def test_zero_one_pruning(self):
        x = ex.var(0)
        assert ex.add(ex.const(0), x) is x
        assert ex.add(x, ex.const(0)) is x
        assert ex.mul(ex.const(1), x) is x
        assert ex.mul(x, ex.const(0)) is ex.const(0)
        assert ex.int_pow(x, 1) is x
        assert ex.int_pow(x, 0) is ex.const(1)

    def test_interning_gives_identity(self):
        a = ex.mul(ex.int_pow(ex.var(0), 2), ex.sin_of(ex.time_var()))
        b = ex.parse_expression("x1^2*sin(t)")
        assert a is b

    def test_trig_of_constant_folds(self):
        assert ex.sin_of(ex.const(0)) is ex.const(0)
        assert ex.cos_of(ex.const(0)) is ex.const(1)

    def test_non_finite_constant_rejected(self):
        with pytest.raises(ValueError):
            ex.const(math.inf)


class TestEvaluation:
    def _random_exprs(self):
        x1, x2, t = ex.var(0), ex.var(1), ex.time_var()
        return [
            ex.add(ex.mul(ex.const(2.5), ex.int_pow(x1, 3)), x2),
            ex.mul(ex.sin_of(t), ex.int_pow(x1, 2)),
            ex.cos_of(ex.add(x1, x2)),
            ex.parse_expression("0.2+x2*(x1-5.7)"),
        ]

    def test_point_array_agree(self):
        rng = np.random.default_rng(0)
        xs = rng.uniform(-2, 2, (2, 50))
        ts = rng.uniform(0, 5, 50)
        for e in self._random_exprs():
            arr = ex.eval_array(e, xs, ts)
            pts = [ex.eval_point(e, xs[:, j], ts[j]) for j in range(50)]
            assert np.allclose(arr, pts, rtol=1e-13, atol=1e-13)

    def test_compiled_matches_eval(self):
        rng = np.random.default_rng(1)
        exprs = self._random_exprs()
        f = ex.compile_point_fn(exprs)
        for _ in range(20):
            x = rng.uniform(-2, 2, 2)
            t = rng.uniform(0, 5)
            assert np.allclose(f(x, t), [ex.eval_point(e, x, t) for e in exprs])

    def test_interval_contains_samples(self):
        rng = np.random.default_rng(2)
        box = [Interval(-1.5, 0.5), Interval(0.0, 2.0)]
        t_iv = Interval(0.0, 1.0)
        for e in self._random_exprs():
            iv = ex.eval_interval(e, box, t_iv)
            for _ in range(200):
                x = [rng.uniform(b.lo, b.hi) for b in box]
                t = rng.uniform(0, 1)
                assert iv.contains(ex.eval_point(e, x, t))


class TestDerivative:
    def test_sin_t(self):
        d = ex.time_derivative(ex.sin_of(ex.time_var()), [ex.const(0)])
        assert d is ex.cos_of(ex.time_var())

    def test_chain_rule_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x1, x2 = ex.var(0), ex.var(1)
        rhs = [ex.mul(ex.const(-0.3), x2), ex.add(x1, ex.int_pow(x2, 2))]
        g = ex.mul(ex.int_pow(x1, 2), ex.cos_of(ex.time_var()))
        dg = ex.time_derivative(g, rhs)
        f = ex.compile_point_fn(rhs)
        for _ in range(50):
            x = rng.uniform(-1, 1, 2)
            t = rng.uniform(0, 3)
            eps = 1e-6
            xp = x + eps * np.asarray(f(x, t))
            xm = x - eps * np.asarray(f(x, t))
            fd = (ex.eval_point(g, xp, t + eps) - ex.eval_point(g, xm, t - eps)) / (2 * eps)
            assert ex.eval_point(dg, x, t) == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestStructure:
    def test_monomial_form(self):
        e = ex.parse_expression("3*x1^2*x3*sin(t)^2*cos(t)")
        c, exps, sp, cp = ex.monomial_form(e)
        assert c == 3.0 and exps == {0: 2, 2: 1} and sp == 2 and cp == 1

    def test_monomial_form_rejects_sums(self):
        assert ex.monomial_form(ex.parse_expression("x1+x2")) is None
        assert ex.monomial_form(ex.parse_expression("sin(x1)")) is None

    def test_max_var_and_time(self):
        e = ex.parse_expression("x3*sin(t)")
        assert ex.max_var_index(e) == 2
        assert ex.contains_time(e)
        assert not ex.contains_time(ex.parse_expression("x1^2"))

    def test_substitute_time_folds(self):
        e = ex.parse_expression("x1*sin(t)")
        assert ex.substitute_time(e, 0.0) is ex.const(0)
        e2 = ex.parse_expression("x1*cos(t)")
        assert ex.substitute_time(e2, 0.0) is ex.var(0)


class TestTextForm:
    @pytest.mark.parametrize(
        "s",
        [
            "x1^2*sin(t)",
            "x1+0.5*x2",
            "(-1)*x1*cos(t)^2",
            "2",
            "0.2+x3*(x1-5.7)",
            "x2^4",
            "sin(x1+x2)^3",
            "1.25e-3*x1",
        ],
    )
    def test_round_trip_is_fixed_point(self, s):
        e = ex.parse_expression(s)
        out = ex.format_expression(e)
        assert ex.parse_expression(out) is e

    def test_float_values_survive(self):
        v = 0.1 + 0.2  # not exactly 0.3
        e = ex.const(v)
        e2 = ex.parse_expression(ex.format_expression(e))
        assert e2.value == v

    @pytest.mark.parametrize("bad", ["x0", "x1^2.5", "x1+", "foo(x1)", "x1**2", "(x1"])
    def test_parse_errors(self, bad):
        with pytest.raises(ValueError):
            ex.parse_expression(bad)

    def test_pickle_round_trip(self):
        e = ex.parse_expression("x1^2*sin(t)+0.25*x2")
        assert pickle.loads(pickle.dumps(e)) is e
