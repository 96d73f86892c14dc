"""Centralized convex problem equivalent to the sharing game, and its oracle.

Eliminating the bids from the game's KKT system leaves

    min  sum_i h~_i(p_i)   s.t.  sum_i p_i = sum_i D_i,  p_min <= p <= p_max

with ``h~_i(p) = h_i(p) + p^2 / (2 k_i) - D_i p / k_i`` and
``k_i = a_i - sum(a) > 0``. The multiplier of the balance constraint is the
clearing price; the bids follow from ``b_i = D_i - p_i - a_i mu_c``.

The oracle here is a scalar dual bisection on the price. It shares no code
with the distributed iteration and serves as its reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, NoBracketError
from .market import ScenarioInstance

ACTIVE_TOL = 1e-12
MAX_BISECTIONS = 200
MAX_DOUBLINGS = 200


@dataclass(frozen=True)
class EquivalentProblem:
    c: np.ndarray
    d: np.ndarray
    k: np.ndarray
    D: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray

    def __post_init__(self):
        arrs = [np.array(getattr(self, f), dtype=float).reshape(-1) for f in ("c", "d", "k", "D", "p_min", "p_max")]
        n = arrs[0].size
        if any(x.size != n for x in arrs):
            raise ValueError("coefficient arrays must have equal length")
        for name, x in zip(("c", "d", "k", "D", "p_min", "p_max"), arrs):
            x.setflags(write=False)
            object.__setattr__(self, name, x)
        if np.any(self.k <= 0):
            raise ValueError("k_i = a_i - sum(a) must be positive")
        if np.any(self.p_min > self.p_max):
            raise ValueError("p_min exceeds p_max")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def total_demand(self) -> float:
        return float(self.D.sum())

    @property
    def curvature(self) -> np.ndarray:
        """Second derivative ``c_i + 1/k_i`` of each augmented cost."""
        return self.c + 1.0 / self.k

    @property
    def elasticities(self):
        """The price elasticities ``a``, recovered from ``k`` (needs n >= 2).

        Summing ``k_i = a_i - sum(a)`` gives ``sum(k) = (1 - n) sum(a)``.
        """
        if self.n < 2:
            return None
        sum_a = self.k.sum() / (1 - self.n)
        return self.k + sum_a

    def tilde_h(self, i, p):
        k = self.k[i]
        return 0.5 * self.c[i] * p * p + self.d[i] * p + p * p / (2 * k) - self.D[i] * p / k

    def tilde_h_grad(self, i, p):
        k = self.k[i]
        return self.c[i] * p + self.d[i] + p / k - self.D[i] / k

    def grad(self, p):
        """Vectorized ``tilde_h_grad`` over all prosumers."""
        return self.c * p + self.d + p / self.k - self.D / self.k

    def objective(self, p) -> float:
        return float(sum(self.tilde_h(i, p[i]) for i in range(self.n)))


@dataclass(frozen=True)
class KKTPoint:
    p: np.ndarray
    mu_c: float
    lam: np.ndarray


@dataclass(frozen=True)
class OracleReport:
    point: KKTPoint
    b_star: np.ndarray
    kkt_residual: float
    bisection_iters: int


def build(scenario: ScenarioInstance) -> EquivalentProblem:
    a = scenario.a
    return EquivalentProblem(
        c=scenario.c,
        d=scenario.d,
        k=a - scenario.market.sum_a,
        D=scenario.D,
        p_min=scenario.p_min,
        p_max=scenario.p_max,
    )


def dual_response(problem: EquivalentProblem, mu: float) -> np.ndarray:
    """Minimizer of ``h~_i(p) - mu p`` over the box, per prosumer.

    Each entry is nondecreasing in ``mu``.
    """
    free = (mu + problem.D / problem.k - problem.d) / problem.curvature
    return np.clip(free, problem.p_min, problem.p_max)


def multipliers(problem: EquivalentProblem, p, mu_c) -> np.ndarray:
    """Per-prosumer multipliers of the local balance constraints."""
    return -mu_c + p / problem.k - problem.D / problem.k


def _polish(problem, mu):
    """Exact price for the active set found at ``mu``.

    The dual response is piecewise affine, so once the clamped set is known
    the balance equation is linear in the price.
    """
    s = problem.curvature
    free_p = (mu + problem.D / problem.k - problem.d) / s
    lower = free_p <= problem.p_min
    upper = free_p >= problem.p_max
    free = ~(lower | upper)
    if not free.any():
        return mu
    fixed = problem.p_min[lower].sum() + problem.p_max[upper].sum()
    offset = ((problem.D / problem.k - problem.d) / s)[free].sum()
    return (problem.total_demand - fixed - offset) / (1.0 / s[free]).sum()


def oracle_solve(problem: EquivalentProblem, tol: float = 1e-10, bracket=None) -> OracleReport:
    """Solve the equivalent problem by bisection on the balance multiplier.

    Parameters
    ----------
    problem : EquivalentProblem
    tol : float
        Stop once ``|sum p(mu) - sum D| <= tol * max(1, |sum D|)``.
    bracket : (float, float), optional
        Starting price interval. It is doubled in width until it brackets
        the root. Defaults to the range of marginal augmented costs at the
        generation bounds, which always brackets.

    Raises
    ------
    InfeasibleError
        Total demand lies outside ``[sum p_min, sum p_max]``.
    NoBracketError
        No bracket found after 200 doublings.
    """
    total = problem.total_demand
    lo_cap, hi_cap = float(problem.p_min.sum()), float(problem.p_max.sum())
    if not lo_cap <= total <= hi_cap:
        raise InfeasibleError(
            f"total demand {total:g} outside generation range [{lo_cap:g}, {hi_cap:g}]"
        )

    def balance(mu):
        return float(dual_response(problem, mu).sum()) - total

    if bracket is None:
        idx = range(problem.n)
        lo = min(problem.tilde_h_grad(i, problem.p_min[i]) for i in idx)
        hi = max(problem.tilde_h_grad(i, problem.p_max[i]) for i in idx)
    else:
        lo, hi = (float(x) for x in bracket)
        if lo > hi:
            lo, hi = hi, lo
    for _ in range(MAX_DOUBLINGS):
        if balance(lo) <= 0 <= balance(hi):
            break
        width = max(hi - lo, 1.0)
        if balance(lo) > 0:
            lo -= width
        if balance(hi) < 0:
            hi += width
    else:
        raise NoBracketError(f"could not bracket the balance root (last [{lo:g}, {hi:g}])")

    scale = tol * max(1.0, abs(total))
    iters = 0
    mu = 0.5 * (lo + hi)
    while iters < MAX_BISECTIONS:
        iters += 1
        mu = 0.5 * (lo + hi)
        r = balance(mu)
        if abs(r) <= scale:
            break
        if r > 0:
            hi = mu
        else:
            lo = mu
    refined = _polish(problem, mu)
    if abs(balance(refined)) < abs(balance(mu)):
        mu = refined

    p = dual_response(problem, mu)
    point = KKTPoint(p=p, mu_c=float(mu), lam=multipliers(problem, p, mu))
    a = problem.elasticities
    b_star = None if a is None else problem.D - p - a * mu
    return OracleReport(point=point, b_star=b_star, kkt_residual=kkt_residual(point, problem), bisection_iters=iters)


def recover_b(p, mu_c, scenario: ScenarioInstance) -> np.ndarray:
    return scenario.D - np.asarray(p, dtype=float) - scenario.a * mu_c


def solve_scenario(scenario: ScenarioInstance, tol: float = 1e-10, bracket=None) -> OracleReport:
    """Oracle solve plus bid recovery for a full scenario."""
    rep = oracle_solve(build(scenario), tol=tol, bracket=bracket)
    b = recover_b(rep.point.p, rep.point.mu_c, scenario)
    return OracleReport(rep.point, b, rep.kkt_residual, rep.bisection_iters)


def stationarity_violation(p, mu_c, problem: EquivalentProblem) -> np.ndarray:
    """Per-prosumer distance of ``mu_c - h~_i'(p_i)`` from the normal cone."""
    p = np.asarray(p, dtype=float)
    g = problem.grad(p) - mu_c
    at_lo = p <= problem.p_min + ACTIVE_TOL
    at_hi = p >= problem.p_max - ACTIVE_TOL
    viol = np.abs(g)
    # lower bound: normal cone is (-inf, 0], so g >= 0 is admissible
    viol = np.where(at_lo & ~at_hi, np.maximum(0.0, -g), viol)
    viol = np.where(at_hi & ~at_lo, np.maximum(0.0, g), viol)
    return np.where(at_lo & at_hi, 0.0, viol)


def kkt_residual(point: KKTPoint, problem: EquivalentProblem) -> float:
    """Max of the stationarity violation and the balance residual."""
    stat = stationarity_violation(point.p, point.mu_c, problem)
    balance = abs(float(np.sum(point.p)) - problem.total_demand)
    return float(max(stat.max(initial=0.0), balance))


def kkt_residual_at(p, mu_c, problem: EquivalentProblem) -> float:
    p = np.asarray(p, dtype=float)
    return kkt_residual(KKTPoint(p, float(mu_c), multipliers(problem, p, mu_c)), problem)
