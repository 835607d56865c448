import math

import numpy as np
import pytest

from frlpoison import theory
from frlpoison.errors import InputError
from frlpoison.theory import AnalyticEnv, Setting, quadratic_1d

from conftest import central_diff

POSITIVE = ["convex-1d", "steep-concave-1d", "coupled-2d", "tall-3x4"]


def test_global_objective_examples():
    env = quadratic_1d(0.0, 2.0)  # r = theta^2
    assert theory.global_objective([2.0], [env]) == 4.0
    assert theory.global_objective([2.0], [env, env, env]) == env.objective([2.0])
    flat = AnalyticEnv([1.0, 2.0], np.zeros((2, 2)), np.zeros((2, 2, 2)), [0.5, 0.25])
    for theta in ([0.0, 0.0], [3.0, -1.0]):
        assert theory.global_objective(theta, [flat]) == 1.0
    other = AnalyticEnv([1.0], np.zeros((1, 2)), np.zeros((1, 2, 2)), [1.0])
    with pytest.raises(InputError):
        theory.global_objective([0.0], [env, other])


def test_env_validation():
    with pytest.raises(InputError):
        AnalyticEnv([0.0], [[1.0]], [[[1.0]]], [1.0, 2.0])
    with pytest.raises(InputError):
        AnalyticEnv([0.0], [[1.0, 0.0]], [[[0.0, 1.0], [2.0, 0.0]]], [1.0])


def test_one_round_hand_example():
    env = quadratic_1d(0.0, 2.0)
    theta, j = theory.one_round([1.0], [env], 0.1, 0.0, False)
    assert theta[0] == pytest.approx(1.2, abs=1e-15) and j == pytest.approx(1.44, abs=1e-14)


def test_one_round_zero_budget_is_clean():
    s = theory.PRESET_FAMILIES["coupled-2d"]
    a = theory.one_round(s.theta_prev, s.envs, s.lr, 0.0, True)
    b = theory.one_round(s.theta_prev, s.envs, s.lr, 0.0, False)
    assert a[0].tobytes() == b[0].tobytes() and a[1] == b[1]


def test_reward_response_matches_gradient_of_reward_inverse():
    # in 1-D the gradient read off a shifted reward curve follows r'' / r' exactly
    env = quadratic_1d(0.3, 1.7, gamma=0.9)
    m = env.reward_sensitivity([0.2])
    slope = 0.3 + 1.7 * 0.2
    assert m[0, 0] == pytest.approx(0.9 * 1.7 / slope, rel=1e-14)


def test_jacobian_and_gradient_match_finite_differences():
    s = theory.PRESET_FAMILIES["tall-3x4"]
    env = s.envs[0]
    theta = np.array([0.3, -0.2, 0.5])
    fd = np.column_stack([central_diff(lambda t: env.rewards(t)[k], theta) for k in range(4)]).T
    np.testing.assert_allclose(env.jacobian(theta), fd, atol=1e-9)
    np.testing.assert_allclose(env.objective_grad(theta), central_diff(env.objective, theta),
                               atol=1e-9)


def test_J_poisoned_is_smooth_in_epsilon():
    s = theory.PRESET_FAMILIES["coupled-2d"]
    f = lambda e: theory.one_round(s.theta_prev, s.envs, s.lr, e, True)[1]
    # exactly quadratic in eps: third differences vanish
    h = 1e-2
    third = f(3 * h) - 3 * f(2 * h) + 3 * f(h) - f(0.0)
    assert abs(third) < 1e-12


@pytest.mark.parametrize("family", POSITIVE)
def test_compute_B_two_methods_agree(family):
    b = theory.compute_B(theory.PRESET_FAMILIES[family])
    assert b.defined and b.value > 0
    assert b.relative_gap <= 1e-6


def test_1d_closed_form_matches_curvature_formula():
    # B = gamma^2 r'' (1 + lambda gamma r'') on identical 1-D agents
    for curv in (2.0, 0.5, -5.0, -1.0):
        for gamma in (1.0, 0.7):
            s = Setting(theory.identical_agents(quadratic_1d(0.4, curv, gamma), 3),
                        np.zeros(1), 0.5)
            b = theory.compute_B(s)
            assert b.closed_form == pytest.approx(gamma**2 * curv * (1 + 0.5 * gamma * curv),
                                                  rel=1e-12)


def test_B_positivity_region():
    lam, gamma = 0.5, 1.0
    for curv in (0.1, 3.0, -2.5, -10.0):  # inside (-inf, -2) U (0, inf)
        s = Setting(theory.identical_agents(quadratic_1d(0.3, curv, gamma), 2), np.zeros(1), lam)
        assert theory.compute_B(s).finite_difference > 0
    for curv in (-0.5, -1.9):  # inside (-2, 0)
        s = Setting(theory.identical_agents(quadratic_1d(0.3, curv, gamma), 2), np.zeros(1), lam)
        assert theory.compute_B(s).finite_difference < 0


def test_B_undefined_for_constant_rewards():
    b = theory.compute_B(theory.PRESET_FAMILIES["flat"])
    assert not b.defined and math.isnan(b.value)
    reports = theory.verify_theorem(theory.PRESET_FAMILIES["flat"], [0.1])
    assert not reports[0].precondition_met


def test_sign_flip_reports_precondition_unmet():
    s = theory.PRESET_FAMILIES["shallow-concave-1d"]
    assert theory.compute_B(s).value <= 0
    reports = theory.verify_theorem(s, [0.01, 0.1])
    assert all(not r.precondition_met and r.notes == "B <= 0" for r in reports)


def test_Lr_linear_dependence_is_zero():
    # r'' = 0: the reward response is zero and J_0 is linear in the rewards
    s = Setting(theory.identical_agents(quadratic_1d(0.5, 0.0), 2), np.zeros(1), 0.3)
    est = theory.estimate_Lr(s)
    assert est.exact == 0.0 and est.sampled <= 1e-8


def test_Lr_invariant_to_reward_translation():
    s = theory.PRESET_FAMILIES["coupled-2d"]
    env = s.envs[0]
    shifted = AnalyticEnv(env.a + 5.0, env.b, env.c, env.gamma)
    t = Setting(theory.identical_agents(shifted, s.n), s.theta_prev, s.lr)
    a, b = theory.estimate_Lr(s), theory.estimate_Lr(t)
    assert a.exact == b.exact
    assert b.sampled == pytest.approx(a.sampled, rel=1e-6)


@pytest.mark.parametrize("family", ["convex-1d", "steep-concave-1d"])
def test_Lr_closed_form_within_safety_factor(family):
    est = theory.estimate_Lr(theory.PRESET_FAMILIES[family])
    assert est.exact <= est.sampled <= theory.LR_SAFETY * est.exact * (1 + 1e-6)


@pytest.mark.parametrize("family", POSITIVE)
def test_strict_decrease_inside_regime(family):
    s = theory.PRESET_FAMILIES[family]
    probe = theory.verify_theorem(s, [])
    ep = probe[0].eps_plus
    reports = theory.verify_theorem(s, [f * ep for f in (0.01, 0.1, 0.25, 0.5, 0.75, 0.99)])
    for r in reports:
        assert r.precondition_met and r.in_regime and r.inequality_holds
        assert r.alpha_observed == r.J_clean - r.J_poisoned > 0


@pytest.mark.parametrize("family", POSITIVE)
def test_quadratic_minimum_bound_at_half_budget(family):
    half = [r for r in theory.verify_theorem(theory.PRESET_FAMILIES[family], [])
            if r.quadratic_bound is not None]
    assert len(half) == 1
    r = half[0]
    assert r.alpha_observed >= r.L_r * r.eps_plus**2 / 8 - 1e-9
    assert r.quadratic_bound_holds


def test_stated_bound_needs_Lr_at_least_one():
    # with L_r < 1 the decrease at eps_plus/2 is L_r eps_plus^2/8, below eps_plus^2/8
    s = Setting(theory.identical_agents(quadratic_1d(1.0, 0.5), 4), np.zeros(1), 0.1)
    r = [x for x in theory.verify_theorem(s, []) if x.stated_bound is not None][0]
    assert r.L_r < 1
    assert r.quadratic_bound_holds and not r.stated_bound_holds


def test_first_order_consistency():
    for family in POSITIVE:
        s = theory.PRESET_FAMILIES[family]
        B = theory.compute_B(s).value
        _, j = theory.one_round(s.theta_prev, s.envs, s.lr, 0.0, False)
        for eps in (1e-4, 1e-5):
            _, j_hat = theory.one_round(s.theta_prev, s.envs, s.lr, eps, True)
            assert abs((j - j_hat) / eps - s.lr * B / s.n) <= 1e-2 * s.lr * B / s.n


def test_zero_epsilon_and_outside_regime():
    s = theory.PRESET_FAMILIES["convex-1d"]
    ep = theory.verify_theorem(s, [])[0].eps_plus
    zero, outside = theory.verify_theorem(s, [0.0, 1.1 * ep])[:2]
    assert zero.alpha_observed == 0.0 and not zero.in_regime
    assert not outside.in_regime and not outside.inequality_holds


def test_reports_csv(tmp_path):
    reports = theory.verify_theorem(theory.PRESET_FAMILIES["convex-1d"], [0.01])
    theory.write_reports_csv(tmp_path / "r.csv", reports)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(theory.REPORT_COLUMNS)
    assert len(lines) == 3 and lines[1].endswith(",true")
