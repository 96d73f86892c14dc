"""The energy-sharing game: clearing price, payoffs, pseudo-gradient and VI residual.

Every prosumer ``i`` picks a generation ``p_i`` and a willingness to buy
``b_i``. Its traded quantity is the linear demand ``q_i = a_i * mu_c + b_i``
at the clearing price ``mu_c = -sum(b) / sum(a)``. Its disutility is
``h_i(p_i) + q_i * mu_c`` with the quadratic production cost
``h_i(p) = c_i p^2 / 2 + d_i p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InfeasibleError, POutsideBoxError
from .graph import CommGraph

_BOX_TOL = 1e-9


@dataclass(frozen=True)
class MarketParams:
    """Price elasticities of all prosumers."""

    a: np.ndarray
    n: int = field(init=False)
    sum_a: float = field(init=False)
    a_bar: float = field(init=False)

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        a.setflags(write=False)
        if a.size < 2:
            raise ValueError("the market needs at least two prosumers")
        if np.any(a >= 0) or not np.all(np.isfinite(a)):
            raise ValueError("every price elasticity a_i must be finite and < 0")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "n", int(a.size))
        object.__setattr__(self, "sum_a", float(a.sum()))
        object.__setattr__(self, "a_bar", float(a.sum()) / a.size)


@dataclass(frozen=True)
class ProsumerParams:
    """Local data of one prosumer.

    ``c`` and ``d`` are the quadratic and linear production-cost
    coefficients, ``D`` the net power demand and ``[p_min, p_max]`` the
    generation range.
    """

    c: float
    d: float
    D: float
    p_min: float
    p_max: float

    def __post_init__(self):
        if not self.c >= 0:
            raise ValueError(f"cost coefficient c must be >= 0, got {self.c}")
        if not self.p_min <= self.p_max:
            raise ValueError(f"p_min={self.p_min} exceeds p_max={self.p_max}")

    def cost(self, p):
        return 0.5 * self.c * p * p + self.d * p

    def marginal_cost(self, p):
        return self.c * p + self.d


@dataclass(frozen=True)
class StrategyProfile:
    p: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if p.shape != b.shape:
            raise ValueError(f"p has {p.size} entries but b has {b.size}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "b", b)

    def stacked(self) -> np.ndarray:
        """Interleaved ``(p_1, b_1, p_2, b_2, ...)``."""
        return np.column_stack([self.p, self.b]).reshape(-1)

    @classmethod
    def from_stacked(cls, x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return cls(x[:, 0].copy(), x[:, 1].copy())


class ScenarioInstance:
    """A complete game: market, prosumers and communication graph."""

    def __init__(self, market: MarketParams, prosumers: Sequence[ProsumerParams], graph: CommGraph):
        if len(prosumers) != market.n:
            raise ValueError(f"{len(prosumers)} prosumers but {market.n} elasticities")
        if graph.node_count != market.n:
            raise ValueError(f"graph has {graph.node_count} nodes for {market.n} prosumers")
        self.market = market
        self.prosumers = tuple(prosumers)
        self.graph = graph
        self.c = np.array([pr.c for pr in self.prosumers])
        self.d = np.array([pr.d for pr in self.prosumers])
        self.D = np.array([pr.D for pr in self.prosumers])
        self.p_min = np.array([pr.p_min for pr in self.prosumers])
        self.p_max = np.array([pr.p_max for pr in self.prosumers])
        for arr in (self.c, self.d, self.D, self.p_min, self.p_max):
            arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, a, c, d, D, p_min, p_max, graph=None):
        a = np.asarray(a, dtype=float)
        n = a.size
        bc = [np.broadcast_to(np.asarray(x, dtype=float), (n,)) for x in (c, d, D, p_min, p_max)]
        prosumers = [ProsumerParams(*(float(x[i]) for x in bc)) for i in range(n)]
        if graph is None:
            graph = CommGraph.complete(n)
        return cls(MarketParams(a), prosumers, graph)

    @property
    def n(self) -> int:
        return self.market.n

    @property
    def a(self) -> np.ndarray:
        return self.market.a

    def is_strictly_feasible(self) -> bool:
        """Strict ``sum(p_min) < sum(D) < sum(p_max)`` (unique GNE)."""
        total = self.D.sum()
        return bool(self.p_min.sum() < total < self.p_max.sum())

    def __repr__(self):
        return f"ScenarioInstance(n={self.n}, graph={self.graph!r})"


def clearing_price(b, market: MarketParams) -> float:
    return -float(np.sum(b)) / market.sum_a


def demand(i: int, b, market: MarketParams) -> float:
    if not 0 <= i < market.n:
        raise IndexError(f"prosumer index {i} out of range 0..{market.n - 1}")
    return market.a[i] * clearing_price(b, market) + float(b[i])


def sharing_coefficients(i: int, market: MarketParams):
    """``(alpha_i, beta_i, delta_i)`` of the quadratic trading cost.

    ``g_i = alpha_i b_i^2 + beta_i b_i S + delta_i S^2`` with ``S`` the sum of
    the other prosumers' bids. For negative elasticities ``alpha_i > 0`` and
    ``delta_i < 0`` always; ``beta_i > 0`` only while ``|a_i|`` is less
    than the sum of the other ``|a_j|``.
    """
    if not 0 <= i < market.n:
        raise IndexError(f"prosumer index {i} out of range 0..{market.n - 1}")
    denom = market.n**2 * market.a_bar**2
    a_i, A = market.a[i], market.sum_a
    return (a_i - A) / denom, (2 * a_i - A) / denom, a_i / denom


def _all_coefficients(market: MarketParams):
    denom = market.n**2 * market.a_bar**2
    a, A = market.a, market.sum_a
    return (a - A) / denom, (2 * a - A) / denom, a / denom


def eval_g(i: int, b, market: MarketParams) -> float:
    """Trading cost of prosumer ``i`` from the coefficient form."""
    b = np.asarray(b, dtype=float)
    alpha, beta, delta = sharing_coefficients(i, market)
    rest = float(b.sum() - b[i])
    return alpha * b[i] ** 2 + beta * b[i] * rest + delta * rest**2


def eval_f(i: int, profile: StrategyProfile, scenario: ScenarioInstance, check: bool = True) -> float:
    """Disutility ``h_i(p_i) + q_i * mu_c`` of prosumer ``i``.

    With ``check`` the coefficient form of the trading cost is evaluated as
    well and must agree with the direct form to 1e-10 relative to the size
    of its terms.
    """
    market = scenario.market
    mu = clearing_price(profile.b, market)
    q = market.a[i] * mu + profile.b[i]
    g_direct = q * mu
    if check:
        b = profile.b
        alpha, beta, delta = sharing_coefficients(i, market)
        rest = float(b.sum() - b[i])
        terms = (alpha * b[i] ** 2, beta * b[i] * rest, delta * rest**2)
        g_coef = sum(terms)
        scale = max(1.0, sum(abs(t) for t in terms))
        if abs(g_direct - g_coef) > 1e-10 * scale:
            raise AssertionError(
                f"trading cost forms disagree for prosumer {i}: {g_direct!r} vs {g_coef!r}"
            )
    return scenario.prosumers[i].cost(profile.p[i]) + g_direct


def pseudo_gradient(profile: StrategyProfile, scenario: ScenarioInstance) -> np.ndarray:
    """Stacked own-strategy gradients ``(df_i/dp_i, df_i/db_i)`` per prosumer."""
    alpha, beta, _ = _all_coefficients(scenario.market)
    b = profile.b
    rest = b.sum() - b
    grad_p = scenario.c * profile.p + scenario.d
    grad_b = 2 * alpha * b + beta * rest
    return np.column_stack([grad_p, grad_b]).reshape(-1)


def _project_local_sets(y_p, y_b, b, scenario):
    """Project ``(y_p_i, y_b_i)`` onto each prosumer's feasible set.

    The set of prosumer ``i`` is the line ``p + r_i b_i = e_i`` (local
    balance with the other bids ``b_-i`` fixed) cut to ``p_min <= p <= p_max``.
    Projecting onto the line is a 1-D problem in ``p``; clamping ``p`` to the
    box and re-solving the line for ``b_i`` is then the exact projection onto
    the segment.
    """
    market = scenario.market
    A = market.sum_a
    r = (A - market.a) / A
    if np.any(r == 0):
        raise InfeasibleError("local balance constraint degenerates (sum_a == a_i)")
    rest = b.sum() - b
    e = scenario.D + (market.a / A) * rest
    p = (r * r * y_p + e - r * y_b) / (r * r + 1)
    p = np.clip(p, scenario.p_min, scenario.p_max)
    return p, (e - p) / r


def vi_residual(profile: StrategyProfile, scenario: ScenarioInstance) -> float:
    """Natural-map residual ``||x - P_X(x - F(x))||_2``.

    ``X`` is the product of the prosumers' feasible sets evaluated at the
    current bids, so the residual vanishes exactly at a generalized Nash
    equilibrium.
    """
    p, b = profile.p, profile.b
    if p.size != scenario.n:
        raise ValueError(f"profile has {p.size} prosumers, scenario has {scenario.n}")
    if np.any(p < scenario.p_min - _BOX_TOL) or np.any(p > scenario.p_max + _BOX_TOL):
        raise POutsideBoxError("generation outside [p_min, p_max]")
    F = pseudo_gradient(profile, scenario).reshape(-1, 2)
    proj_p, proj_b = _project_local_sets(p - F[:, 0], b - F[:, 1], b, scenario)
    return float(np.sqrt(np.sum((p - proj_p) ** 2) + np.sum((b - proj_b) ** 2)))


def market_clearing_gap(profile: StrategyProfile, scenario: ScenarioInstance) -> float:
    """``|sum_i q_i(b)|``; zero by construction of the clearing price."""
    market = scenario.market
    mu = clearing_price(profile.b, market)
    return abs(float(np.sum(market.a * mu + profile.b)))
