import numpy as np
import pytest

from koopman_reach.templates import TemplateSyntaxError, parse_template

XYZ = ["x", "y", "z"]


class TestParseTemplate:
    def test_roessler_style(self):
        t = parse_template("y >= 6.375 - 0.025*i", XYZ)
        h0 = t.instantiate(0)
        assert np.allclose(h0.normal, [0, -1, 0])
        assert h0.offset == pytest.approx(-6.375)
        h20 = t.instantiate(20)
        assert h20.offset == pytest.approx(-(6.375 - 0.5))

    def test_biological_style(self):
        t = parse_template("x4 <= 0.883 + 0.002*i", ["x1", "x2", "x3", "x4"])
        h3 = t.instantiate(3)
        assert np.allclose(h3.normal, [0, 0, 0, 1])
        assert h3.offset == pytest.approx(0.883 + 0.006)

    def test_linear_combination(self):
        t = parse_template("x + 2*y <= 1 - i", XYZ)
        h = t.instantiate(2)
        assert np.allclose(h.normal, [1, 2, 0])
        assert h.offset == pytest.approx(-1.0)

    def test_i_scaled_variable(self):
        t = parse_template("i*x >= 3", XYZ)
        h = t.instantiate(2)
        assert np.allclose(h.normal, [-2, 0, 0])
        assert h.offset == pytest.approx(-3.0)

    def test_parentheses(self):
        t = parse_template("y >= (6.375) - (0.025)*i", XYZ)
        assert t.instantiate(1).offset == pytest.approx(-6.35)

    def test_i_times_i_rejected(self):
        with pytest.raises(TemplateSyntaxError):
            parse_template("x <= i*i", XYZ)

    def test_nonlinear_rejected(self):
        with pytest.raises(TemplateSyntaxError):
            parse_template("x*y <= 1", XYZ)

    def test_unknown_variable(self):
        with pytest.raises(TemplateSyntaxError):
            parse_template("w <= 1", XYZ)

    def test_no_comparison(self):
        with pytest.raises(TemplateSyntaxError):
            parse_template("x + 1", XYZ)

    def test_no_state_variable(self):
        with pytest.raises(TemplateSyntaxError):
            parse_template("i <= 5", XYZ)

    def test_variable_named_i_clashes(self):
        with pytest.raises(TemplateSyntaxError):
            parse_template("i <= 5", ["i", "j"])
