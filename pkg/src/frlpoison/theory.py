"""Numerical check of the single-round strict-decrease guarantee on an analytic
family.

Setting: ``n`` agents share a quadratic reward map
``r(theta) = a + b theta + 1/2 [theta^T c_k theta]_k`` and the objective
``J(theta; r) = gamma . r``. Each agent takes one gradient-ascent step from the
broadcast model, the server averages, and only the last agent is poisoned with
``r_hat = r - eps * e(grad_r J)``.

How an agent's gradient depends on the rewards it *observes*: the agent reads
the policy gradient off the reward curve, so a reward perturbation ``dr`` moves
the gradient by ``M dr`` with ``M = H J_r^+`` (objective Hessian times the
pseudo-inverse of the reward Jacobian). This is the mixed derivative
``grad_{r,theta} J`` of the guarantee; in one dimension it is ``gamma r''/r'``,
which gives ``B = gamma^2 r'' (1 + lambda gamma r'')`` and recovers the
``r'' in (-inf, -1/(lambda gamma)) U (0, inf)`` positivity region.

Under this response the post-round global objective is exactly quadratic in
the poisoned agent's rewards, so the smoothness constant is available in
closed form and can be checked against sampled curvature.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack import poison_rewards_untargeted
from .errors import InputError

RICHARDSON_STEPS = (1e-5, 1e-6)
LR_SAFETY = 1.5
BOUND_SLACK = 1e-9
REPORT_COLUMNS = ("epsilon", "B", "eps_plus", "L_r", "J_clean", "J_poisoned",
                  "alpha_observed", "inequality_holds")


@dataclass(frozen=True)
class AnalyticEnv:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    gamma: np.ndarray

    def __post_init__(self) -> None:
        a, b, c, g = (np.asarray(x, dtype=float) for x in (self.a, self.b, self.c, self.gamma))
        if b.ndim == 1:
            b = b[:, None]
        d_r, d_theta = b.shape
        if c.ndim == 2 and d_theta == 1:
            c = c[:, :, None]
        if a.shape != (d_r,) or g.shape != (d_r,) or c.shape != (d_r, d_theta, d_theta):
            raise InputError("analytic env coefficient shapes are inconsistent")
        if not np.allclose(c, np.swapaxes(c, 1, 2)):
            raise InputError("quadratic coefficients c_k must be symmetric")
        for name, value in zip("abc", (a, b, c)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "gamma", g)

    @property
    def d_theta(self) -> int:
        return self.b.shape[1]

    @property
    def d_r(self) -> int:
        return self.b.shape[0]

    def _theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.d_theta,):
            raise InputError(f"theta has dimension {theta.size}, env expects {self.d_theta}")
        return theta

    def rewards(self, theta) -> np.ndarray:
        theta = self._theta(theta)
        return self.a + self.b @ theta + 0.5 * np.einsum("i,kij,j->k", theta, self.c, theta)

    def jacobian(self, theta) -> np.ndarray:
        return self.b + self.c @ self._theta(theta)

    def objective(self, theta) -> float:
        return float(self.gamma @ self.rewards(theta))

    def objective_grad(self, theta) -> np.ndarray:
        return self.jacobian(theta).T @ self.gamma

    @property
    def objective_hessian(self) -> np.ndarray:
        return np.einsum("k,kij->ij", self.gamma, self.c)

    def reward_sensitivity(self, theta) -> np.ndarray | None:
        """``M`` with ``d(gradient) = M d(observed rewards)``; None where the
        reward map is locally flat in some direction."""
        jac = self.jacobian(theta)
        s = np.linalg.svd(jac, compute_uv=False)
        if s.min() <= 1e-12 * max(1.0, s.max()):
            return None
        return self.objective_hessian @ np.linalg.pinv(jac)

    def local_gradient(self, theta, observed) -> np.ndarray:
        theta = self._theta(theta)
        grad = self.objective_grad(theta)
        delta = np.asarray(observed, dtype=float) - self.rewards(theta)
        if not np.any(delta):
            return grad
        m = self.reward_sensitivity(theta)
        if m is None:
            raise InputError("reward map is degenerate here; gradient response undefined")
        return grad + m @ delta


@dataclass(frozen=True)
class Setting:
    """One round of the analytic federation; the last agent is the attacker."""

    envs: tuple[AnalyticEnv, ...]
    theta_prev: np.ndarray
    lr: float

    @property
    def n(self) -> int:
        return len(self.envs)


def global_objective(theta, envs) -> float:
    dims = {(e.d_theta, e.d_r) for e in envs}
    if len(dims) != 1:
        raise InputError("agents' analytic envs have different dimensions")
    return float(np.mean([e.objective(theta) for e in envs]))


def one_round(theta_prev, envs, lr: float, epsilon: float, poisoned: bool):
    """Single-step local training, FedAVG; returns ``(theta_new, J_0(theta_new))``."""
    theta_prev = np.asarray(theta_prev, dtype=float)
    steps = []
    for i, env in enumerate(envs):
        observed = env.rewards(theta_prev)
        if poisoned and i == len(envs) - 1:
            # grad_r J = gamma for J = gamma . r
            observed = poison_rewards_untargeted(observed, env.gamma, epsilon)
        steps.append(theta_prev + lr * env.local_gradient(theta_prev, observed))
    theta_new = np.mean(steps, axis=0)
    return theta_new, global_objective(theta_new, envs)


@dataclass(frozen=True)
class BEstimate:
    finite_difference: float
    closed_form: float
    defined: bool
    reason: str = ""

    @property
    def value(self) -> float:
        return self.closed_form

    @property
    def relative_gap(self) -> float:
        return abs(self.finite_difference - self.closed_form) / max(abs(self.closed_form), 1e-300)


def compute_B(setting: Setting) -> BEstimate:
    """First-order poisoning response, by Richardson-extrapolated finite
    differences of the round and by the chain-rule formula."""
    attacker = setting.envs[-1]
    g_norm = float(np.linalg.norm(attacker.gamma))
    m = attacker.reward_sensitivity(setting.theta_prev)
    if g_norm == 0:
        return BEstimate(math.nan, math.nan, False, "reward gradient of the objective is zero")
    if m is None:
        return BEstimate(math.nan, math.nan, False, "reward map is locally flat; B undefined")

    def poisoned_J(eps: float) -> float:
        return one_round(setting.theta_prev, setting.envs, setting.lr, eps, True)[1]

    j0 = poisoned_J(0.0)
    h1, h2 = RICHARDSON_STEPS
    d1, d2 = (poisoned_J(h1) - j0) / h1, (poisoned_J(h2) - j0) / h2
    slope = (h1 * d2 - h2 * d1) / (h1 - h2)
    fd = -setting.n / setting.lr * slope

    theta_clean, _ = one_round(setting.theta_prev, setting.envs, setting.lr, 0.0, False)
    grad_global = np.mean([e.objective_grad(theta_clean) for e in setting.envs], axis=0)
    closed = float(grad_global @ m @ (attacker.gamma / g_norm))
    return BEstimate(float(fd), closed, True)


@dataclass(frozen=True)
class LrEstimate:
    exact: float | None
    sampled: float
    value: float
    method: str


def _reward_response(setting: Setting):
    """``r_n -> J_0(theta_0^p)`` with the other agents' updates held clean."""
    theta = setting.theta_prev
    attacker = setting.envs[-1]
    others = [theta + setting.lr * e.objective_grad(theta) for e in setting.envs[:-1]]

    def f(observed) -> float:
        own = theta + setting.lr * attacker.local_gradient(theta, observed)
        return global_objective(np.mean(others + [own], axis=0), setting.envs)

    return f, attacker.rewards(theta)


def exact_Lr(setting: Setting) -> float | None:
    m = setting.envs[-1].reward_sensitivity(setting.theta_prev)
    if m is None:
        return None
    h_global = np.mean([e.objective_hessian for e in setting.envs], axis=0)
    hess = (setting.lr / setting.n) ** 2 * m.T @ h_global @ m
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (hess + hess.T)))))


def estimate_Lr(setting: Setting, samples: int = 100, seed: int = 0,
                step: float = 1e-3) -> LrEstimate:
    """Reward-smoothness constant of the post-round global objective.

    Sampled: max second-difference curvature over random unit directions,
    times 1.5. The exact Hessian norm is preferred when it is defined.
    """
    f, r0 = _reward_response(setting)
    rng = np.random.default_rng(seed)
    f0 = f(r0)
    worst = 0.0
    for _ in range(samples):
        u = rng.standard_normal(r0.size)
        u /= np.linalg.norm(u)
        curv = abs(f(r0 + step * u) - 2.0 * f0 + f(r0 - step * u)) / step**2
        worst = max(worst, curv)
    sampled = LR_SAFETY * worst
    exact = exact_Lr(setting)
    if exact is not None:
        return LrEstimate(exact, sampled, exact, "exact")
    return LrEstimate(None, sampled, sampled, "sampled")


@dataclass(frozen=True)
class TheoremReport:
    epsilon: float
    B: float
    eps_plus: float
    L_r: float
    J_clean: float
    J_poisoned: float
    alpha_observed: float
    inequality_holds: bool
    in_regime: bool
    precondition_met: bool
    # Decrease bounds, filled only at eps = eps_plus / 2.
    stated_bound: float | None = None
    stated_bound_holds: bool | None = None
    quadratic_bound: float | None = None
    quadratic_bound_holds: bool | None = None
    notes: str = field(default="", compare=False)


def eps_plus(setting: Setting, B: float, L_r: float) -> float:
    if L_r <= 0:
        return math.inf
    return 2.0 * setting.lr * B / (setting.n * L_r)


def verify_theorem(setting: Setting, epsilons) -> list[TheoremReport]:
    """Evaluate the guarantee at each epsilon, plus one report at ``eps_plus/2``.

    Nothing is raised; a report records whether each inequality held. The
    half-budget report carries both the stated decrease ``eps_plus^2/8`` and
    the smoothness-quadratic minimum ``L_r eps_plus^2/8``.
    """
    b_est = compute_B(setting)
    if not b_est.defined:
        return [_unmet(setting, e, math.nan, math.nan, math.nan, b_est.reason) for e in epsilons]
    B = b_est.value
    L_r = estimate_Lr(setting).value
    ep = eps_plus(setting, B, L_r)
    if B <= 0:
        return [_unmet(setting, e, B, ep, L_r, "B <= 0")
                for e in epsilons]
    _, j_clean = one_round(setting.theta_prev, setting.envs, setting.lr, 0.0, False)
    epsilons = [float(e) for e in epsilons]
    if math.isfinite(ep) and ep / 2 not in epsilons:
        epsilons.append(ep / 2)
    reports = []
    for eps in epsilons:
        half = math.isfinite(ep) and eps == ep / 2
        _, j_hat = one_round(setting.theta_prev, setting.envs, setting.lr, eps, True)
        alpha = j_clean - j_hat
        extra = {}
        if half:
            stated, quad = ep**2 / 8, L_r * ep**2 / 8
            extra = dict(stated_bound=stated, stated_bound_holds=alpha >= stated - BOUND_SLACK,
                         quadratic_bound=quad, quadratic_bound_holds=alpha >= quad - BOUND_SLACK)
        reports.append(TheoremReport(
            float(eps), B, ep, L_r, j_clean, j_hat, alpha, bool(j_hat < j_clean),
            bool(0 < eps < ep), True, **extra))
    return reports


def _unmet(setting, eps, B, ep, L_r, reason) -> TheoremReport:
    _, j_clean = one_round(setting.theta_prev, setting.envs, setting.lr, 0.0, False)
    try:
        _, j_hat = one_round(setting.theta_prev, setting.envs, setting.lr, eps, True)
    except InputError:
        j_hat = math.nan
    return TheoremReport(float(eps), B, ep, L_r, j_clean, j_hat, j_clean - j_hat,
                         bool(j_hat < j_clean), False, False, notes=reason)


def write_reports_csv(path: str | Path, reports: list[TheoremReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([repr(r.epsilon), repr(r.B), repr(r.eps_plus), repr(r.L_r),
                             repr(r.J_clean), repr(r.J_poisoned), repr(r.alpha_observed),
                             str(r.inequality_holds).lower()])


def identical_agents(env: AnalyticEnv, n: int) -> tuple[AnalyticEnv, ...]:
    return (env,) * n


def quadratic_1d(slope: float, curvature: float, gamma: float = 1.0,
                 offset: float = 0.0) -> AnalyticEnv:
    """``r(theta) = offset + slope * theta + curvature * theta^2 / 2``."""
    return AnalyticEnv([offset], [[slope]], [[[curvature]]], [gamma])


def _preset_families() -> dict[str, Setting]:
    two_d = AnalyticEnv(
        a=[0.5, -0.2],
        b=[[0.3, 0.1], [-0.1, 0.25]],
        c=[[[1.5, 0.2], [0.2, 1.0]], [[0.8, -0.1], [-0.1, 1.2]]],
        gamma=[1.0, 0.9],
    )
    tall = AnalyticEnv(
        a=[0.0, 0.1, 0.2, 0.3],
        b=[[0.2, 0.0, 0.05], [0.0, 0.15, 0.0], [0.05, 0.0, 0.2], [0.1, 0.1, 0.1]],
        c=np.stack([np.diag([1.0, 1.2, 0.8]), np.diag([0.9, 1.1, 1.0]),
                    np.diag([1.3, 0.7, 1.0]), np.diag([1.0, 1.0, 1.0])]),
        gamma=[1.0, 0.99, 0.9801, 0.970299],
    )
    return {
        "convex-1d": Setting(identical_agents(quadratic_1d(0.2, 2.0), 2), np.zeros(1), 0.5),
        "steep-concave-1d": Setting(identical_agents(quadratic_1d(0.5, -5.0), 2),
                                    np.zeros(1), 0.5),
        "coupled-2d": Setting(identical_agents(two_d, 3), np.zeros(2), 0.5),
        "tall-3x4": Setting(identical_agents(tall, 2), np.zeros(3), 0.5),
        # r'' in (-1/(lambda gamma), 0): B < 0
        "shallow-concave-1d": Setting(identical_agents(quadratic_1d(0.5, -1.0), 2),
                                      np.zeros(1), 0.5),
        "flat": Setting(identical_agents(quadratic_1d(0.0, 0.0, offset=1.0), 2),
                        np.zeros(1), 0.5),
    }


PRESET_FAMILIES = _preset_families()


def setting_from_coefficients(a, b, c, gamma, n_agents: int, theta, lr: float) -> Setting:
    env = AnalyticEnv(a, b, c, gamma)
    return Setting(identical_agents(env, n_agents), np.asarray(theta, dtype=float), lr)
