"""Synchronous message-round simulation of the distributed seeker.

Agents are lanes of numpy arrays: elementwise arithmetic touches only an
agent's own entries, and every value that crosses agents goes through
:class:`MessageBus`. Each iteration has two exchange rounds,

1. predicted prices ``mu~_j``;
2. the pairs ``(z~_j, z_j next)``;

each carrying one payload per direction of every edge. Inboxes are ordered
by receiver and then by sender id, and neighborhood sums run in that order,
so runs are bitwise reproducible and match the scalar per-agent updates in
:mod:`prosumer_gne.sgne` exactly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import equivalent
from .equivalent import EquivalentProblem
from .errors import MaxIterationsExceeded, NotPDError
from .graph import CommGraph
from .market import ScenarioInstance
from .sgne import ETA_MAX, IterState, StepSizes, operator_U_apply, predict, theta_assemble, theta_is_pd

log = logging.getLogger(__name__)

TRACE_HEADER = ("iter", "res_step", "res_kkt", "consensus_gap", "rel_err")

CONVERGED = "converged"
TARGET_REACHED = "target_reached"
MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class RoundMessage:
    sender: int
    receiver: int
    t: int
    round: int
    payload: tuple


@dataclass
class AuditLog:
    """Cross-agent reads observed during a run."""

    delivered: int = 0
    violations: list = field(default_factory=list)

    def record_violation(self, reader, source, what, t):
        self.violations.append((t, reader, source, what))

    @property
    def ok(self) -> bool:
        return not self.violations


class Inbox:
    """Payloads delivered in one round, grouped by receiver."""

    def __init__(self, bus, payloads):
        self._bus = bus
        self.payloads = payloads

    def neighbor_diff_sum(self, own, k=0):
        """``sum_{j in N_i} (own_i - payload_j)`` for every receiver ``i``.

        Summed over sorted sender ids, one slot row at a time (an axis-0
        reduction of a C-ordered array accumulates row by row; padding adds
        an exact 0.0), so the result is bitwise equal to a scalar loop over
        the neighbors.
        """
        bus = self._bus
        if bus.slots.shape[0] == 0:
            return np.zeros(bus.n)
        buf = bus.diff_buf
        np.subtract(own[bus.dst], self.payloads[k], out=buf[:-1])
        return buf[bus.slots].sum(axis=0)

    def messages_for(self, i, t=-1, round_=0):
        """The inbox of agent ``i`` as :class:`RoundMessage` objects."""
        bus = self._bus
        lo, hi = bus.ptr[i], bus.ptr[i + 1]
        return [
            RoundMessage(int(bus.src[e]), i, t, round_, tuple(float(v[e]) for v in self.payloads))
            for e in range(lo, hi)
        ]


class MessageBus:
    """Delivers per-edge payloads between neighboring agents."""

    def __init__(self, graph: CommGraph, audit: bool = False):
        self.graph = graph
        self.n = graph.node_count
        pairs = graph.directed_edges()
        self.src = np.array([s for s, _ in pairs], dtype=np.intp)
        self.dst = np.array([d for _, d in pairs], dtype=np.intp)
        counts = np.bincount(self.dst, minlength=self.n) if pairs else np.zeros(self.n, dtype=int)
        self.ptr = np.concatenate([[0], np.cumsum(counts)])
        # slots[s, i] is the delivery index of the s-th neighbor of i, or the
        # padding index len(src) for receivers with fewer neighbors
        self.slots = np.full((graph.deg_max, self.n), len(pairs), dtype=np.intp)
        for i in range(self.n):
            self.slots[: counts[i], i] = np.arange(self.ptr[i], self.ptr[i + 1])
        self.diff_buf = np.zeros(len(pairs) + 1)
        self.payloads_sent = 0
        self.audit = AuditLog() if audit else None
        self.t = 0
        self._nbr_sets = [set(nb) for nb in graph.neighbors]

    def exchange(self, *values, routes=None):
        """Every agent publishes ``values[k][i]``; neighbors receive them.

        ``routes`` overrides the ``(src, dst)`` pairs and exists so tests can
        inject a faulty delivery; the audit flags any non-edge route.
        """
        src = self.src
        if routes is not None:
            src = np.array([s for s, _ in routes], dtype=np.intp)
            dst = [d for _, d in routes]
            if self.audit is not None:
                for s, d in zip(src, dst):
                    if s not in self._nbr_sets[d]:
                        self.audit.record_violation(int(d), int(s), "message", self.t)
        payloads = tuple(np.asarray(v)[src] for v in values)
        self.payloads_sent += src.size
        if self.audit is not None:
            self.audit.delivered += src.size
        return Inbox(self, payloads)

    def read_remote(self, reader, owner, values, what="state"):
        """Direct read of another agent's value, bypassing the rounds.

        The legitimate algorithm never calls this; it is the hook through
        which a broken update shows up in the audit.
        """
        if self.audit is not None and owner != reader:
            self.audit.record_violation(int(reader), int(owner), what, self.t)
        return values[owner]


class Agents:
    """Vectorized agent updates for one iteration.

    Subclass and override a phase to model a faulty agent.
    """

    def __init__(self, problem: EquivalentProblem, step_sizes: StepSizes, bus: MessageBus):
        self.problem = problem
        self.steps = step_sizes
        self.bus = bus
        n = problem.n
        self.gamma = step_sizes.gamma_for(n)
        self.slope = problem.c + 1.0 / problem.k + self.gamma

    def phase_p(self, pt, mt):
        pb = self.problem
        raw = (self.gamma * pt - mt - pb.d + pb.D / pb.k) / self.slope
        return np.minimum(np.maximum(raw, pb.p_min), pb.p_max)

    def phase_z(self, zt, mt):
        inbox = self.bus.exchange(mt)
        return zt - self.steps.sigma_z * inbox.neighbor_diff_sum(mt)

    def phase_mu(self, mt, p1, pt, zt, z1):
        inbox = self.bus.exchange(zt, z1)
        lap_next = inbox.neighbor_diff_sum(z1, k=1)
        lap_tilde = inbox.neighbor_diff_sum(zt, k=0)
        return mt + self.steps.sigma_mu * (2 * p1 - pt - self.problem.D + 2 * lap_next - lap_tilde)

    def step(self, state: IterState) -> IterState:
        pt, zt, mt = predict(state, self.steps.eta)
        p1 = self.phase_p(pt, mt)
        z1 = self.phase_z(zt, mt)
        m1 = self.phase_mu(mt, p1, pt, zt, z1)
        w_prev = state.packed[0] if state.packed is not None else state.omega
        return IterState.from_packed(np.concatenate([p1, z1, m1]), w_prev, state.t + 1)


@dataclass
class StopTolerances:
    step: float = 1e-8
    consensus: float = 1e-6
    kkt: float = 1e-6
    max_iter: int = 200_000
    rel_err_target: float | None = None


@dataclass
class StopDecision:
    converged: bool
    res_step: float
    consensus_gap: float
    res_kkt: float


def consensus_price(mu) -> float:
    """Clearing price implied by the agents' price variables."""
    return -float(mu.sum()) / mu.size


class _KKTMonitor:
    """Fast KKT residual for the hot loop; equals ``kkt_residual_at`` up to rounding."""

    def __init__(self, problem: EquivalentProblem):
        self.slope = problem.curvature
        self.offset = problem.d - problem.D / problem.k
        self.lo = problem.p_min + equivalent.ACTIVE_TOL
        self.hi = problem.p_max - equivalent.ACTIVE_TOL
        self.total = problem.total_demand

    def __call__(self, p, mu_c):
        g = self.slope * p + self.offset - mu_c
        at_lo = p <= self.lo
        at_hi = p >= self.hi
        viol = np.abs(g)
        if at_lo.any() or at_hi.any():
            viol[at_lo] = np.maximum(0.0, -g[at_lo])
            viol[at_hi] = np.maximum(0.0, g[at_hi])
            viol[at_lo & at_hi] = 0.0
        return max(float(viol.max()), abs(float(p.sum()) - self.total))


def stop_criterion(state: IterState, prev: IterState | None, problem: EquivalentProblem, tol: StopTolerances, _kkt=None) -> StopDecision:
    """All of: small step, price consensus and small KKT residual.

    The step is measured against ``prev`` when given, else against the
    previous iterate stored in ``state``.
    """
    if prev is None and state.packed is not None:
        w, w_prev = state.packed
        step = np.abs(w - w_prev).max()
    else:
        if prev is None:
            pp, zp, mp = state.p_prev, state.z_prev, state.mu_prev
        else:
            pp, zp, mp = prev.p, prev.z, prev.mu
        step = max(np.abs(state.p - pp).max(), np.abs(state.z - zp).max(), np.abs(state.mu - mp).max())
    mu = state.mu
    gap = float(mu.max() - mu.min())
    mu_c = -float(mu.sum()) / mu.size
    if _kkt is None:
        kkt = equivalent.kkt_residual_at(state.p, mu_c, problem)
    else:
        kkt = _kkt(state.p, mu_c)
    ok = step <= tol.step and gap <= tol.consensus and kkt <= tol.kkt
    return StopDecision(bool(ok), float(step), gap, kkt)


@dataclass
class SolveReport:
    p: np.ndarray
    b: np.ndarray | None
    mu_c: float
    z: np.ndarray
    mu: np.ndarray
    iterations: int
    stop_reason: str
    trace: dict
    payloads_sent: int
    audit: AuditLog | None
    state: IterState
    step_sizes: StepSizes
    trajectory: list | None = None
    inclusion_checks: int = 0
    inclusion_max_violation: float = 0.0

    @property
    def converged(self) -> bool:
        return self.stop_reason in (CONVERGED, TARGET_REACHED)

    @property
    def consensus_gap(self) -> float:
        return float(self.mu.max() - self.mu.min())

    def iterations_to(self, rel_err: float) -> int | None:
        """First iteration whose relative error is at most ``rel_err``."""
        errs = self.trace["rel_err"]
        hit = np.nonzero((errs >= 0) & (errs <= rel_err))[0]
        return int(self.trace["iter"][hit[0]]) if hit.size else None

    def write_trace_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            cols = [self.trace[h] for h in TRACE_HEADER]
            for row in zip(*cols):
                w.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])

    def to_dict(self) -> dict:
        last = {h: float(self.trace[h][-1]) for h in TRACE_HEADER[1:]} if self.iterations else {}
        return {
            "method": "sgne",
            "p": self.p.tolist(),
            "b": None if self.b is None else self.b.tolist(),
            "mu_c": self.mu_c,
            "mu": self.mu.tolist(),
            "z": self.z.tolist(),
            "iterations": self.iterations,
            "stop_reason": self.stop_reason,
            "consensus_gap": self.consensus_gap,
            "residuals": last,
            "payloads_sent": self.payloads_sent,
            "step_sizes": {
                "gamma": self.step_sizes.gamma.tolist(),
                "sigma_z": self.step_sizes.sigma_z,
                "sigma_mu": self.step_sizes.sigma_mu,
                "eta": self.step_sizes.eta,
            },
            "locality_audit": None if self.audit is None else self.audit.ok,
        }


def run_problem(
    problem: EquivalentProblem,
    graph: CommGraph,
    step_sizes: StepSizes,
    stop: StopTolerances | None = None,
    reference=None,
    audit=False,
    record_trajectory=False,
    check_inclusion_every=0,
    agents_cls=Agents,
    state: IterState | None = None,
) -> SolveReport:
    """Run the iteration on an equivalent problem over ``graph``.

    Parameters
    ----------
    reference : ndarray, optional
        Equilibrium generation used for the ``rel_err`` trace column
        (``||p - ref||_2 / ||ref||_2``); without it the column is -1.
    check_inclusion_every : int
        If positive, verify the resolvent inclusion every that many
        iterations and record the worst violation.
    """
    stop = stop or StopTolerances()
    if not 0 <= step_sizes.eta < ETA_MAX:
        raise ValueError(f"eta={step_sizes.eta} outside [0, 1/3)")
    theta = theta_assemble(step_sizes, graph)
    ok, lam = theta_is_pd(theta)
    step_sizes.lambda_min = lam
    if not ok:
        raise NotPDError(f"step-size matrix not positive definite (lambda_min={lam:.3g})")

    bus = MessageBus(graph, audit=audit)
    agents = agents_cls(problem, step_sizes, bus)
    state = state or IterState.initial(problem)
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        ref_norm = max(np.linalg.norm(reference), np.finfo(float).tiny)

    cap = stop.max_iter
    cols = {h: np.empty(cap) for h in TRACE_HEADER}
    trajectory = [state.omega] if record_trajectory else None
    reason = MAX_ITERATIONS
    checks, worst = 0, 0.0
    monitor = _KKTMonitor(problem)
    t = 0
    while t < cap:
        bus.t = t
        new = agents.step(state)
        dec = stop_criterion(new, None, problem, stop, monitor)
        if reference is None:
            rel = -1.0
        else:
            e = new.p - reference
            rel = float(np.sqrt(e @ e)) / ref_norm
        cols["iter"][t] = t + 1
        cols["res_step"][t] = dec.res_step
        cols["res_kkt"][t] = dec.res_kkt
        cols["consensus_gap"][t] = dec.consensus_gap
        cols["rel_err"][t] = rel
        if check_inclusion_every and (t + 1) % check_inclusion_every == 0:
            pt, zt, mt = predict(state, step_sizes.eta)
            lhs = theta @ (np.concatenate([pt, zt, mt]) - new.omega)
            dist = operator_U_apply(new.omega, problem, graph).distance(lhs)
            checks += 1
            worst = max(worst, dist)
        state = new
        if record_trajectory:
            trajectory.append(state.omega)
        t += 1
        if dec.converged:
            reason = CONVERGED
            break
        if stop.rel_err_target is not None and 0 <= rel <= stop.rel_err_target:
            reason = TARGET_REACHED
            break

    trace = {h: cols[h][:t].copy() for h in TRACE_HEADER}
    if reason == MAX_ITERATIONS:
        log.info("no convergence after %d iterations", t)
    mu_c = consensus_price(state.mu)
    a = problem.elasticities
    b = None if a is None else problem.D - state.p - a * mu_c
    return SolveReport(
        p=state.p.copy(),
        b=b,
        mu_c=mu_c,
        z=state.z.copy(),
        mu=state.mu.copy(),
        iterations=t,
        stop_reason=reason,
        trace=trace,
        payloads_sent=bus.payloads_sent,
        audit=bus.audit,
        state=state,
        step_sizes=step_sizes,
        trajectory=trajectory,
        inclusion_checks=checks,
        inclusion_max_violation=worst,
    )


def run_sgne(
    scenario: ScenarioInstance,
    step_sizes: StepSizes,
    stop: StopTolerances | None = None,
    reference=None,
    audit=False,
    raise_on_max_iter=False,
    **kwargs,
) -> SolveReport:
    """Seek the equilibrium of ``scenario`` over its communication graph.

    The bids are recovered from the final generation and the consensus
    price. A run that hits ``max_iter`` returns a report flagged
    ``max_iterations`` unless ``raise_on_max_iter`` is set.
    """
    problem = equivalent.build(scenario)
    rep = run_problem(problem, scenario.graph, step_sizes, stop, reference, audit, **kwargs)
    rep.b = equivalent.recover_b(rep.p, rep.mu_c, scenario)
    if raise_on_max_iter and rep.stop_reason == MAX_ITERATIONS:
        raise MaxIterationsExceeded(rep)
    return rep


def locality_audit(report: SolveReport) -> bool:
    """True iff the run was audited and no agent read non-local data."""
    if report.audit is None:
        raise ValueError("run was not executed with audit enabled")
    return report.audit.ok
