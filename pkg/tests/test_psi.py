import math

import numpy as np
import pytest

from embedlab.losses import MarginSpec, psi_eval, psi_grad

GRID = np.linspace(0.0, np.pi, 10_000)


def angular_branch_value(m: int, k: int, theta: float) -> float:
    # direct evaluation of one piecewise branch
    return (-1.0) ** k * math.cos(m * theta) - 2.0 * k


class TestPsiExamples:
    def test_angular2_at_pi_third(self):
        # k=0 branch: cos(2*pi/3) = -0.5
        assert psi_eval(MarginSpec.angular(2), math.pi / 3) == pytest.approx(-0.5,
                                                                             abs=1e-12)

    def test_angular2_knot_both_branches(self):
        # at theta=pi/2 both adjoining branches give -1
        assert angular_branch_value(2, 0, math.pi / 2) == pytest.approx(-1.0)
        assert angular_branch_value(2, 1, math.pi / 2) == pytest.approx(-1.0)
        assert psi_eval(MarginSpec.angular(2), math.pi / 2) == pytest.approx(-1.0,
                                                                             abs=1e-12)

    def test_plain_cos(self):
        assert psi_eval(MarginSpec.plain(), math.pi / 3) == pytest.approx(0.5, abs=1e-12)

    def test_combined_at_zero(self):
        # cos(1*0 - 0.5) - 0.35 = cos(0.5) - 0.35
        expected = math.cos(0.5) - 0.35
        assert psi_eval(MarginSpec.combined(1, 0.5, 0.35), 0.0) == pytest.approx(
            expected, abs=1e-12)

    def test_domain_checked(self):
        with pytest.raises(ValueError):
            psi_eval(MarginSpec.plain(), -0.1)
        with pytest.raises(ValueError):
            psi_eval(MarginSpec.angular(2), np.pi + 0.1)


class TestPsiProperties:
    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_continuity_at_knots(self, m):
        for k in range(1, m):
            knot = k * np.pi / m
            left = angular_branch_value(m, k - 1, knot)
            right = angular_branch_value(m, k, knot)
            assert abs(left - right) < 1e-12

    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_non_increasing(self, m):
        vals = psi_eval(MarginSpec.angular(m), GRID)
        assert np.all(np.diff(vals) <= 1e-12)

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_margin_below_cosine(self, m):
        vals = psi_eval(MarginSpec.angular(m), GRID)
        cos = np.cos(GRID)
        assert np.all(vals[1:] < cos[1:])          # strict on (0, pi]
        assert vals[0] == pytest.approx(cos[0], abs=1e-15)   # equality at 0

    def test_reduction_family_agrees(self):
        plain = psi_eval(MarginSpec.plain(), GRID)
        for spec in (MarginSpec.angular(1), MarginSpec.additive_angle(0.0),
                     MarginSpec.combined(1, 0, 0)):
            np.testing.assert_allclose(psi_eval(spec, GRID), plain, atol=1e-12)

    def test_matches_branch_formula_everywhere(self):
        # every grid point agrees with direct piecewise evaluation
        for m in (2, 3, 4):
            vals = psi_eval(MarginSpec.angular(m), GRID)
            ks = np.minimum((m * GRID / np.pi).astype(int), m - 1)
            direct = np.array([angular_branch_value(m, int(k), float(t))
                               for k, t in zip(ks, GRID)])
            np.testing.assert_allclose(vals, direct, atol=1e-12)

    def test_grad_non_positive_for_angular(self):
        for m in (1, 2, 3, 4):
            g = psi_grad(MarginSpec.angular(m), GRID)
            assert np.all(g <= 1e-12)

    def test_grad_matches_fd_away_from_knots(self):
        rng = np.random.default_rng(5)
        h = 1e-6
        for spec in (MarginSpec.plain(), MarginSpec.angular(3),
                     MarginSpec.additive_angle(0.4), MarginSpec.combined(1.2, 0.3, 0.1)):
            knots = (np.arange(1, spec.m) * np.pi / spec.m
                     if spec.kind == "angular" else np.array([]))
            for _ in range(200):
                t = float(rng.uniform(h * 2, np.pi - h * 2))
                if knots.size and np.min(np.abs(t - knots)) < 1e-3:
                    continue
                fd = (psi_eval(spec, t + h) - psi_eval(spec, t - h)) / (2 * h)
                assert psi_grad(spec, t) == pytest.approx(fd, abs=1e-7)


class TestMarginSpecValidation:
    def test_angular_m_must_be_positive_integer(self):
        with pytest.raises(ValueError):
            MarginSpec.angular(0)
        with pytest.raises(ValueError):
            MarginSpec("angular", m=1.5)

    def test_combined_constraints(self):
        with pytest.raises(ValueError):
            MarginSpec.combined(0.5, 0, 0)
        with pytest.raises(ValueError):
            MarginSpec.combined(1, -0.1, 0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            MarginSpec("cosface")
