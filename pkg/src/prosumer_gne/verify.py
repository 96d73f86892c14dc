"""Property suite run by ``prosumer-gne verify`` against one scenario."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import equivalent, market, runtime, sgne
from .errors import NotPDError
from .market import StrategyProfile
from .scenarios import ScenarioFile

PASS, FAIL, SKIP = "PASS", "FAIL", "SKIP"


@dataclass(frozen=True)
class PropertyResult:
    name: str
    status: str
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def line(self) -> str:
        return f"{self.status} {self.name}: {self.detail}"


class NonLocalAgents(runtime.Agents):
    """Faulty agents: agent 0 reads the price of a non-neighbor directly."""

    def phase_z(self, zt, mt):
        graph = self.bus.graph
        far = [j for j in range(graph.node_count) if j != 0 and j not in graph.neighbors[0]]
        z1 = super().phase_z(zt, mt)
        if far:
            z1 = z1.copy()
            z1[0] += 0.0 * self.bus.read_remote(0, far[0], mt, "mu")
        else:
            # no non-neighbor exists; deliver over a non-edge route instead (self loop)
            self.bus.exchange(mt, routes=[(0, 0)])
        return z1


def _rel_ok(err, ref, tol):
    return abs(err) <= tol * max(1.0, abs(ref))


def fd_check_pseudo_gradient(scenario, rng, points=20, h=1e-6, rtol=1e-5):
    """Worst relative mismatch between ``pseudo_gradient`` and central differences."""
    worst = 0.0
    n = scenario.n
    for _ in range(points):
        p = rng.uniform(scenario.p_min, scenario.p_max)
        b = rng.normal(0.0, 1.0 + np.abs(scenario.D), n)
        prof = StrategyProfile(p, b)
        F = market.pseudo_gradient(prof, scenario).reshape(-1, 2)
        for i in range(n):
            for col, vec in ((0, p), (1, b)):
                up, dn = vec.copy(), vec.copy()
                up[i] += h
                dn[i] -= h
                args = (up, b) if col == 0 else (p, up)
                argd = (dn, b) if col == 0 else (p, dn)
                fd = (market.eval_f(i, StrategyProfile(*args), scenario, check=False)
                      - market.eval_f(i, StrategyProfile(*argd), scenario, check=False)) / (2 * h)
                worst = max(worst, abs(fd - F[i, col]) / max(1.0, abs(F[i, col])))
    return worst


def fd_check_tilde_h(problem, rng, points=20, h=1e-6):
    worst = 0.0
    for _ in range(points):
        p = rng.uniform(problem.p_min, problem.p_max)
        for i in range(problem.n):
            fd = (problem.tilde_h(i, p[i] + h) - problem.tilde_h(i, p[i] - h)) / (2 * h)
            g = problem.tilde_h_grad(i, p[i])
            worst = max(worst, abs(fd - g) / max(1.0, abs(g)))
    return worst


def _sample_omega(problem, rng, scale, interior=True):
    n = problem.n
    if interior:
        lo, hi = problem.p_min, problem.p_max
        p = lo + (hi - lo) * rng.uniform(0.05, 0.95, n)
    else:
        p = rng.normal(problem.D, scale + 1.0, n)
    return np.concatenate([p, rng.normal(0, scale, n), rng.normal(0, scale, n)])


def monotonicity_gap(problem, graph, rng, pairs=200, scale=1.0):
    """Smallest ``<x - y, U x - U y>`` over sampled interior pairs."""
    worst = np.inf
    for _ in range(pairs):
        x, y = _sample_omega(problem, rng, scale), _sample_omega(problem, rng, scale)
        ux = sgne.operator_U_apply(x, problem, graph).single
        uy = sgne.operator_U_apply(y, problem, graph).single
        worst = min(worst, float((x - y) @ (ux - uy)))
    return worst


def firm_nonexpansive_slack(problem, graph, steps, rng, pairs=200, scale=1.0):
    """Largest ``|Tx-Ty|^2_Theta - <x-y, Tx-Ty>_Theta`` over sampled pairs.

    A firmly nonexpansive map keeps this at or below zero. The second value
    returned is the same excess relative to the size of the terms.
    """
    theta = sgne.theta_assemble(steps, graph)
    worst, worst_rel = -np.inf, -np.inf
    for _ in range(pairs):
        x = _sample_omega(problem, rng, scale, interior=False)
        y = _sample_omega(problem, rng, scale, interior=False)
        tx = sgne.resolvent_apply(x, problem, graph, steps)
        ty = sgne.resolvent_apply(y, problem, graph, steps)
        lhs = sgne.theta_norm_sq(tx - ty, theta)
        rhs = sgne.theta_inner(x - y, tx - ty, theta)
        worst = max(worst, lhs - rhs)
        worst_rel = max(worst_rel, (lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))
    return worst, worst_rel


def resolvent_inclusion_gap(problem, graph, steps, rng, samples=20, scale=1.0):
    theta = sgne.theta_assemble(steps, graph)
    worst = 0.0
    for _ in range(samples):
        x = _sample_omega(problem, rng, scale, interior=False)
        out = sgne.resolvent_apply(x, problem, graph, steps)
        dist = sgne.operator_U_apply(out, problem, graph).distance(theta @ (x - out))
        worst = max(worst, dist / max(1.0, np.abs(x).max()))
    return worst


def run_suite(sf: ScenarioFile, seed: int | None = None, max_iter: int = 200_000) -> list[PropertyResult]:
    """Evaluate every property; deterministic for a fixed ``seed``."""
    if seed is None:
        seed = sf.seed if sf.seed is not None else 0
    rng = np.random.default_rng(seed)
    scenario = sf.to_instance()
    graph = scenario.graph
    problem = equivalent.build(scenario)
    scale = max(1.0, float(np.abs(scenario.D).max()))
    out = []

    def add(name, ok, detail):
        out.append(PropertyResult(name, PASS if ok else FAIL, detail))

    # step sizes
    steps = None
    try:
        steps = sf.step_sizes(graph)
        lam = steps.lambda_min
        if lam is None:
            steps = sgne.certify(steps, graph)
            lam = steps.lambda_min
        add("theta_pd", True, f"lambda_min={lam:.6e}")
    except NotPDError as exc:
        add("theta_pd", False, str(exc))
        steps = None

    worst = fd_check_pseudo_gradient(scenario, rng)
    add("pseudo_gradient_fd", worst <= 1e-5, f"max_rel_err={worst:.3e}")
    worst = fd_check_tilde_h(problem, rng)
    add("tilde_h_grad_fd", worst <= 1e-5, f"max_rel_err={worst:.3e}")

    gap = monotonicity_gap(problem, graph, rng, scale=scale)
    add("u_monotone", gap >= -1e-12 * scale**2, f"min_inner={gap:.6e}")

    oracle = None
    try:
        oracle = equivalent.solve_scenario(scenario)
    except ValueError as exc:
        add("oracle_gne", False, str(exc))
    if oracle is not None:
        prof = StrategyProfile(oracle.point.p, oracle.b_star)
        vi = market.vi_residual(prof, scenario)
        bal = abs(float(oracle.point.p.sum()) - problem.total_demand)
        clear = market.market_clearing_gap(prof, scenario)
        ok = vi <= 1e-6 and bal <= 1e-8 * max(1.0, abs(problem.total_demand)) and clear <= 1e-8
        add("oracle_gne", ok, f"vi_residual={vi:.3e} balance={bal:.3e} clearing={clear:.3e}")

    if steps is None:
        for name in ("firm_nonexpansive", "resolvent_inclusion", "determinism", "oracle_equals_sgne",
                     "consensus", "locality_audit", "audit_detects_injection"):
            out.append(PropertyResult(name, SKIP, "step-size matrix not positive definite"))
        return out

    ex, ex_rel = firm_nonexpansive_slack(problem, graph, steps, rng, scale=scale)
    add("firm_nonexpansive", ex_rel <= 1e-10, f"max_excess={ex:.3e} rel={ex_rel:.3e}")
    gap = resolvent_inclusion_gap(problem, graph, steps, rng, scale=scale)
    add("resolvent_inclusion", gap <= 1e-8, f"max_dist={gap:.3e}")

    short = runtime.StopTolerances(max_iter=200)
    r1 = runtime.run_sgne(scenario, steps, short)
    r2 = runtime.run_sgne(scenario, steps, short, audit=True)
    same = all(np.array_equal(r1.trace[h], r2.trace[h]) for h in runtime.TRACE_HEADER)
    same = same and np.array_equal(r1.state.omega, r2.state.omega)
    add("determinism", same, "audited and plain runs bitwise identical" if same else "runs differ")

    ref = None if oracle is None else oracle.point.p
    rep = runtime.run_sgne(scenario, steps, runtime.StopTolerances(max_iter=max_iter), reference=ref, audit=True)
    if ref is not None:
        err = float(np.abs(rep.p - ref).max() / max(1.0, np.abs(ref).max()))
        add("oracle_equals_sgne", rep.converged and err <= 1e-5,
            f"rel_err_inf={err:.3e} iterations={rep.iterations} stop={rep.stop_reason}")
    gap = rep.consensus_gap
    bal = abs(float(rep.p.sum()) - problem.total_demand)
    ok = rep.converged and gap <= 1e-6 and bal <= 1e-6 * max(1.0, abs(problem.total_demand))
    add("consensus", ok, f"gap={gap:.3e} balance={bal:.3e}")
    add("locality_audit", runtime.locality_audit(rep), f"payloads={rep.payloads_sent}")

    bad = runtime.run_sgne(scenario, steps, runtime.StopTolerances(max_iter=3), audit=True,
                           agents_cls=NonLocalAgents)
    caught = not runtime.locality_audit(bad)
    add("audit_detects_injection", caught, f"violations={len(bad.audit.violations)}")
    return out


def summary(results) -> str:
    lines = [r.line() for r in results]
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} properties passed")
    return "\n".join(lines) + "\n"
