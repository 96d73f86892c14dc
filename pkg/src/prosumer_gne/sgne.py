"""Per-agent arithmetic of the inertial primal-dual equilibrium seeker.

One iteration first extrapolates every local variable with inertia ``eta``
and then runs three updates in order:

* ``p``: clamped inverse of ``H_i(p) = h~_i'(p) + gamma_i p``;
* ``z``: Laplacian step on the predicted prices of the neighbors;
* ``mu``: dual ascent on the local balance, corrected by the ``z`` terms.

Stacked as ``omega = (p, z, mu)`` the update is the resolvent
``(Id + Theta^{-1} U)^{-1}`` of a maximally monotone operator ``U`` in the
metric of the step-size matrix ``Theta``; the helpers for that view live at
the bottom of this module and are used by the property tests.

At a fixed point every ``mu_i`` equals ``-mu_c``: the price variable enters
the ``p`` update with the opposite sign of the balance multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .equivalent import ACTIVE_TOL, EquivalentProblem
from .errors import MissingNeighborMessage, NonSymmetricError, NotPDError, POutsideBoxError
from .graph import CommGraph

ETA_MAX = 1.0 / 3.0
SYMMETRY_TOL = 1e-12


@dataclass
class StepSizes:
    """Local step sizes and inertia.

    ``lambda_min`` holds the smallest eigenvalue of the assembled step-size
    matrix once it has been certified (see :func:`certify`).
    """

    gamma: np.ndarray
    sigma_z: float
    sigma_mu: float
    eta: float = 0.3
    lambda_min: float | None = field(default=None, compare=False)

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if np.any(self.gamma <= 0) or self.sigma_z <= 0 or self.sigma_mu <= 0:
            raise ValueError("step sizes must be positive")
        if not 0 <= self.eta < ETA_MAX:
            raise ValueError(f"inertia eta={self.eta} outside [0, 1/3)")

    def gamma_for(self, n):
        return np.broadcast_to(self.gamma, (n,)).astype(float) if self.gamma.size == 1 else self.gamma

    def with_eta(self, eta):
        return StepSizes(self.gamma.copy(), self.sigma_z, self.sigma_mu, eta, self.lambda_min)


@dataclass
class IterState:
    """Current and previous iterate of every agent."""

    p: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    p_prev: np.ndarray
    z_prev: np.ndarray
    mu_prev: np.ndarray
    t: int = 0
    # optional (omega, omega_prev) backing arrays; p, z, mu are views into them
    packed: tuple | None = field(default=None, repr=False, compare=False)

    @classmethod
    def initial(cls, problem: EquivalentProblem):
        p = np.clip(problem.D, problem.p_min, problem.p_max).astype(float)
        z = np.zeros(problem.n)
        mu = np.zeros(problem.n)
        return cls(p, z, mu, p.copy(), z.copy(), mu.copy(), 0)

    @classmethod
    def from_omega(cls, omega, omega_prev=None, t=0):
        p, z, mu = split(omega)
        if omega_prev is None:
            omega_prev = omega
        pp, zp, mp = split(omega_prev)
        return cls(p.copy(), z.copy(), mu.copy(), pp.copy(), zp.copy(), mp.copy(), t)

    @classmethod
    def from_packed(cls, omega, omega_prev, t):
        p, z, mu = split(omega)
        pp, zp, mp = split(omega_prev)
        return cls(p, z, mu, pp, zp, mp, t, packed=(omega, omega_prev))

    @property
    def omega(self):
        if self.packed is not None:
            return self.packed[0].copy()
        return np.concatenate([self.p, self.z, self.mu])

    @property
    def omega_prev(self):
        return np.concatenate([self.p_prev, self.z_prev, self.mu_prev])


def split(omega):
    omega = np.asarray(omega, dtype=float)
    n = omega.size // 3
    return omega[:n], omega[n : 2 * n], omega[2 * n :]


def default_step_sizes(graph: CommGraph, safety: float = 1.0, eta: float = 0.3) -> StepSizes:
    """Step sizes that make the step-size matrix strictly diagonally dominant.

    The off-diagonal absolute row sums are 1 for the ``p`` rows, ``2 deg``
    for the ``z`` rows and ``1 + 2 deg`` for the ``mu`` rows; each diagonal
    entry exceeds them by ``safety``.
    """
    if safety <= 0:
        raise ValueError("safety margin must be positive")
    deg = graph.deg_max
    steps = StepSizes(
        gamma=np.full(graph.node_count, 1.0 + safety),
        sigma_z=1.0 / (2 * deg + safety),
        sigma_mu=1.0 / (1 + 2 * deg + safety),
        eta=eta,
    )
    return certify(steps, graph)


def theta_assemble(step_sizes: StepSizes, graph: CommGraph) -> np.ndarray:
    n = graph.node_count
    I = np.eye(n)
    Z = np.zeros((n, n))
    L = graph.L.astype(float)
    G = np.diag(step_sizes.gamma_for(n))
    return np.block(
        [
            [G, Z, -I],
            [Z, I / step_sizes.sigma_z, -L],
            [-I, -L, I / step_sizes.sigma_mu],
        ]
    )


def theta_is_pd(theta):
    """Certify positive definiteness of a symmetric matrix.

    Returns ``(is_pd, lambda_min)``. The matrix counts as positive definite
    only if a Cholesky factorization succeeds and the smallest eigenvalue is
    positive.
    """
    theta = np.asarray(theta, dtype=float)
    asym = np.abs(theta - theta.T).max(initial=0.0)
    if asym > SYMMETRY_TOL:
        raise NonSymmetricError(f"matrix asymmetry {asym:.3g} exceeds {SYMMETRY_TOL}")
    lam_min = float(np.linalg.eigvalsh(theta)[0])
    try:
        np.linalg.cholesky(theta)
    except np.linalg.LinAlgError:
        return False, lam_min
    return lam_min > 0, lam_min


def certify(step_sizes: StepSizes, graph: CommGraph) -> StepSizes:
    ok, lam = theta_is_pd(theta_assemble(step_sizes, graph))
    step_sizes.lambda_min = lam
    if not ok:
        raise NotPDError(f"step-size matrix not positive definite (lambda_min={lam:.3g})")
    return step_sizes


def _slope(i, step_sizes, problem):
    gamma = step_sizes.gamma_for(problem.n)[i]
    return problem.c[i] + 1.0 / problem.k[i] + gamma


def H_apply(i, p, step_sizes: StepSizes, problem: EquivalentProblem):
    return _slope(i, step_sizes, problem) * p + problem.d[i] - problem.D[i] / problem.k[i]


def H_inverse(i, y, step_sizes: StepSizes, problem: EquivalentProblem):
    return (y - problem.d[i] + problem.D[i] / problem.k[i]) / _slope(i, step_sizes, problem)


def predict(state: IterState, eta: float):
    if state.packed is not None:
        w, w_prev = state.packed
        return split(w + eta * (w - w_prev))
    p = state.p + eta * (state.p - state.p_prev)
    z = state.z + eta * (state.z - state.z_prev)
    mu = state.mu + eta * (state.mu - state.mu_prev)
    return p, z, mu


def update_p(i, p_tilde_i, mu_tilde_i, step_sizes: StepSizes, problem: EquivalentProblem):
    gamma = step_sizes.gamma_for(problem.n)[i]
    raw = H_inverse(i, gamma * p_tilde_i - mu_tilde_i, step_sizes, problem)
    return min(max(raw, problem.p_min[i]), problem.p_max[i])


def _inbox_values(i, inbox, neighbors):
    missing = [j for j in neighbors if j not in inbox]
    if missing:
        raise MissingNeighborMessage(f"agent {i} has no message from neighbors {missing}")
    return [inbox[j] for j in sorted(neighbors)]


def update_z(i, z_tilde_i, mu_tilde_i, inbox, neighbors, step_sizes: StepSizes):
    """``inbox`` maps each neighbor id to its predicted price."""
    vals = _inbox_values(i, inbox, neighbors)
    return z_tilde_i - step_sizes.sigma_z * sum(mu_tilde_i - v for v in vals)


def update_mu(i, mu_tilde_i, p_next_i, p_tilde_i, D_i, z_next_i, z_tilde_i, inbox, neighbors, step_sizes: StepSizes):
    """``inbox`` maps each neighbor id to its pair ``(z~_j, z_j next)``."""
    vals = _inbox_values(i, inbox, neighbors)
    lap_next = sum(z_next_i - zn for _, zn in vals)
    lap_tilde = sum(z_tilde_i - zt for zt, _ in vals)
    return mu_tilde_i + step_sizes.sigma_mu * (2 * p_next_i - p_tilde_i - D_i + 2 * lap_next - lap_tilde)


# -- operator view ---------------------------------------------------------


@dataclass
class UImage:
    """Image of ``U`` at a point: single-valued part plus normal-cone data.

    ``U(omega) = single + N(p) x {0} x {0}`` where ``N(p)`` is the normal
    cone of the generation box.
    """

    single: np.ndarray
    at_lower: np.ndarray
    at_upper: np.ndarray

    def distance(self, v) -> float:
        """Max-norm distance from ``v`` to the set ``U(omega)``."""
        n = self.at_lower.size
        r = np.asarray(v, dtype=float) - self.single
        rp = r[:n]
        free = ~(self.at_lower | self.at_upper)
        dp = np.where(free, np.abs(rp), 0.0)
        dp = np.where(self.at_lower & ~self.at_upper, np.maximum(0.0, rp), dp)
        dp = np.where(self.at_upper & ~self.at_lower, np.maximum(0.0, -rp), dp)
        return float(max(dp.max(initial=0.0), np.abs(r[n:]).max(initial=0.0)))

    def contains(self, v, tol=1e-8) -> bool:
        return self.distance(v) <= tol


def operator_U_apply(omega, problem: EquivalentProblem, graph: CommGraph) -> UImage:
    p, z, mu = split(omega)
    if np.any(p < problem.p_min - ACTIVE_TOL) or np.any(p > problem.p_max + ACTIVE_TOL):
        raise POutsideBoxError("p outside the generation box")
    L = graph.L.astype(float)
    single = np.concatenate([mu + problem.grad(p), L @ mu, -p + problem.D - L @ z])
    return UImage(
        single=single,
        at_lower=p <= problem.p_min + ACTIVE_TOL,
        at_upper=p >= problem.p_max - ACTIVE_TOL,
    )


def skew_part(graph: CommGraph) -> np.ndarray:
    """Linear skew-symmetric block of ``U``."""
    n = graph.node_count
    I = np.eye(n)
    Z = np.zeros((n, n))
    L = graph.L.astype(float)
    return np.block([[Z, Z, I], [Z, Z, L], [-I, -L, Z]])


def resolvent_apply(omega_tilde, problem: EquivalentProblem, graph: CommGraph, step_sizes: StepSizes, verify=False):
    """Evaluate ``(Id + Theta^{-1} U)^{-1}`` at ``omega_tilde``.

    The block lower-triangular coupling lets the ``p``, ``z``, ``mu``
    updates run in sequence and still solve the inclusion exactly. With
    ``verify`` the inclusion ``Theta (omega_tilde - omega+) in U(omega+)``
    is checked to 1e-8.
    """
    pt, zt, mt = split(omega_tilde)
    L = graph.L.astype(float)
    gamma = step_sizes.gamma_for(problem.n)
    slope = problem.curvature + gamma
    p = np.clip((gamma * pt - mt - problem.d + problem.D / problem.k) / slope, problem.p_min, problem.p_max)
    z = zt - step_sizes.sigma_z * (L @ mt)
    mu = mt + step_sizes.sigma_mu * (2 * p - pt - problem.D + 2 * (L @ z) - L @ zt)
    out = np.concatenate([p, z, mu])
    if verify:
        lhs = theta_assemble(step_sizes, graph) @ (np.asarray(omega_tilde) - out)
        dist = operator_U_apply(out, problem, graph).distance(lhs)
        if dist > 1e-8:
            raise AssertionError(f"resolvent inclusion violated by {dist:.3g}")
    return out


def theta_inner(x, y, theta) -> float:
    return float(np.asarray(x) @ theta @ np.asarray(y))


def theta_norm_sq(x, theta) -> float:
    return theta_inner(x, x, theta)


def fejer_sequence(omegas, omega_star, theta, eta):
    """``s_t = |w_t - w*|^2 - eta |w_{t-1} - w*|^2 + 2 eta |w_t - w_{t-1}|^2``.

    ``omegas`` is the trajectory ``w_0, w_1, ...``; the iterate before
    ``w_0`` is taken equal to ``w_0``.
    """
    W = np.asarray(omegas, dtype=float)
    prev = np.vstack([W[:1], W[:-1]])
    E = W - omega_star
    Ep = prev - omega_star
    Dl = W - prev
    q = lambda M: np.einsum("ij,jk,ik->i", M, theta, M)
    return q(E) - eta * q(Ep) + 2 * eta * q(Dl)
