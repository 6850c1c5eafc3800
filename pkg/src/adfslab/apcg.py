"""Accelerated proximal coordinate gradient with arbitrary sampling.

Solves ``min_x f_A(x) + sum_i psi_i(x_i)`` where ``f_A`` is smooth and strongly
convex only on ``Ker(A)^perp``. Coordinates are blocks of a common width, so
the same step drives scalar test problems and the edge-space dual of the
decentralized problem (one ``d``-vector per edge).

The coordinate is always chosen by the caller; :func:`run_apcg` draws it from
the shared inverse-CDF sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import EIG_RTOL
from .problem import dual_value_nodes, prox_conjugate_tilde
from .schedule import inverse_cdf_draws


class ScheduleError(ValueError):
    pass


# --------------------------------------------------------------------------
# problems


class CompositeProblem:
    """Interface for ``f_A + sum_i psi_i``.

    Subclasses set ``n_coords``, ``width``, ``M``, ``R``, ``sigma_A`` and
    ``projector`` (the matrix ``A^+ A``), and implement ``grad_coord``,
    ``has_prox``, ``prox`` and ``value``.
    """

    n_coords: int
    width: int
    M: np.ndarray
    R: np.ndarray
    sigma_A: float
    projector: np.ndarray

    def grad_coord(self, x, i):
        raise NotImplementedError

    def has_prox(self, i):
        return False

    def prox(self, i, step, z):
        return z

    def value(self, x):
        raise NotImplementedError

    def proj_sqnorm(self, x):
        """``||x||^2_{A^+ A}`` summed over the block width."""
        return float(np.einsum("ik,ij,jk->", x, self.projector, x))

    def zeros(self):
        return np.zeros((self.n_coords, self.width))

    def _check_assumption(self):
        for i in range(self.n_coords):
            if self.has_prox(i) and abs(self.R[i] - 1.0) > 1e-9:
                raise ValueError(f"coordinate {i} has a prox term but R_i = {self.R[i]:.12g} != 1")


class QuadraticComposite(CompositeProblem):
    """``f_A(x) = x'Qx/2 - c'x`` with optional ``psi_i(x) = w_i (x - b_i)^2 / 2``.

    ``Q`` must be symmetric positive semidefinite; ``A^+ A`` is the projector
    onto its range and ``sigma_A = lambda_min^+(Q)`` (0 if ``force_convex``).
    Scalar coordinates (``width = 1``).
    """

    def __init__(self, Q, c=None, psi_weights=None, psi_targets=None, force_convex=False):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T):
            raise ValueError("Q must be a symmetric square matrix")
        n = Q.shape[0]
        self.Q = Q
        self.c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
        self.w = np.zeros(n) if psi_weights is None else np.asarray(psi_weights, dtype=float)
        self.b = np.zeros(n) if psi_targets is None else np.asarray(psi_targets, dtype=float)
        if np.any(self.w < 0):
            raise ValueError("psi weights must be nonnegative")
        lam, U = np.linalg.eigh(Q)
        if lam.min() < -EIG_RTOL * max(lam.max(), 1.0):
            raise ValueError("Q must be positive semidefinite")
        keep = lam > EIG_RTOL * lam.max()
        self.projector = U[:, keep] @ U[:, keep].T
        self.n_coords = n
        self.width = 1
        self.M = np.diag(Q).copy()
        self.R = np.diag(self.projector).copy()
        self.sigma_A = 0.0 if force_convex else float(lam[keep].min())
        self._check_assumption()

    def grad_coord(self, x, i):
        return self.Q[i] @ x - self.c[i]

    def grad(self, x):
        return self.Q @ x - self.c[:, None]

    def has_prox(self, i):
        return self.w[i] > 0

    def prox(self, i, step, z):
        return (z + step * self.w[i] * self.b[i]) / (1.0 + step * self.w[i])

    def value(self, x):
        x = np.asarray(x, dtype=float).reshape(self.n_coords)
        return float(0.5 * x @ self.Q @ x - self.c @ x + 0.5 * np.sum(self.w * (x - self.b) ** 2))

    def minimizer(self):
        """A minimizer (minimum-norm on the kernel of the full Hessian)."""
        H = self.Q + np.diag(self.w)
        return np.linalg.lstsq(H, self.c + self.w * self.b, rcond=None)[0][:, None]


class DualADFSComposite(CompositeProblem):
    """Edge-space dual of the augmented-graph problem.

    ``q_A(lam) = tr(lam' A' Sigma^-1 A lam) / 2`` plus, on each virtual edge,
    ``psi_ij(lam) = f*_ij(-mu_ij lam) - mu_ij^2 ||lam||^2 / (2 L_ij)``.
    """

    def __init__(self, problem, aug, spectra=None):
        from .graph import spectral_quantities

        self.problem = problem
        self.aug = aug
        self.A = aug.incidence()
        self.sinv = aug.sigma_inv()
        sp = spectra if spectra is not None else spectral_quantities(aug)
        self.sigma_A = sp.sigma_A
        self.R = sp.R.copy()
        self.n_coords = aug.n_edges
        self.width = problem.d
        self.M = aug.col_mu2 * (self.sinv[aug.col_k] + self.sinv[aug.col_l])
        self.projector = np.linalg.pinv(self.A, rcond=EIG_RTOL) @ self.A
        self._check_assumption()

    def nodes(self, lam):
        return self.A @ lam

    def grad_coord(self, lam, e):
        return self.A[:, e] @ (self.sinv[:, None] * (self.A @ lam))

    def has_prox(self, e):
        return self.aug.is_virtual(e)

    def value(self, lam):
        """``q_A(lam) + sum psi_ij(lam_ij)``, evaluated in node space."""
        return dual_value_nodes(self.problem, self.aug, self.A @ lam)

    def prox(self, e, step, z):
        i, j = self.aug.virtual_index(e)
        mu = math.sqrt(self.aug.col_mu2[e])
        L = self.problem.L[i, j]
        out, _ = prox_conjugate_tilde(step * mu * mu, L, -mu * z,
                                      lambda s, w: self.problem.sample_prox(i, j, s, w)[0])
        return -out / mu


# --------------------------------------------------------------------------
# coefficient schedules


@dataclass
class SCSchedule:
    """Constant coefficients ``alpha = beta = rho``, ``A_t = (1 - rho)^-t``, ``B_t = sigma_A A_t``."""

    sigma_A: float
    S: float
    rho: float

    mode = "sc"

    def coeffs(self, t):
        # (alpha_t, beta_t, a_{t+1} / B_{t+1})
        return self.rho, self.rho, self.rho / self.sigma_A

    def alpha(self, t):
        return self.rho

    def beta(self, t):
        return self.rho

    def A(self, t):
        return (1.0 - self.rho) ** (-t)

    def B(self, t):
        return self.sigma_A * self.A(t)


@dataclass
class CVXSchedule:
    """``beta = 0``, ``B_t = B0`` and ``A_{t+1} = A_t + B0 (1 + sqrt(1 + 4 S^2 A_t / B0)) / (2 S^2)``."""

    S: float
    p_R: float
    B0: float = 1.0
    _A: list = field(default_factory=list, repr=False)

    mode = "cvx"

    def __post_init__(self):
        if not self.S > 0:
            raise ScheduleError("S must be positive")
        if not 0 < self.p_R <= 1:
            raise ScheduleError("p_R must lie in (0, 1]")
        if not self.B0 > 0:
            raise ScheduleError("B0 must be positive")
        self._A = [3.0 * self.B0 / (self.S**2 * self.p_R**2)]

    @property
    def A0(self):
        return self._A[0]

    def A(self, t):
        S2 = self.S**2
        while len(self._A) <= t:
            a = self._A[-1]
            self._A.append(a + self.B0 / (2.0 * S2) * (1.0 + math.sqrt(1.0 + 4.0 * S2 * a / self.B0)))
        return self._A[t]

    def a(self, t):
        """``a_t = A_t - A_{t-1}`` for ``t >= 1``."""
        return self.A(t) - self.A(t - 1)

    def B(self, t):
        return self.B0

    def alpha(self, t):
        return self.a(t + 1) / self.A(t + 1)

    def beta(self, t):
        return 0.0

    def coeffs(self, t):
        return self.alpha(t), 0.0, self.a(t + 1) / self.B0


def sampling_constant(M, R, p):
    """``S = max_i sqrt(M_i R_i) / p_i`` over coordinates with ``p_i > 0``."""
    M, R, p = (np.asarray(a, dtype=float) for a in (M, R, p))
    if np.any(p < 0) or not math.isclose(p.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
        raise ScheduleError("p must be a probability vector")
    if np.any((p == 0) & (M * R > 0)):
        raise ScheduleError("a coordinate with nonzero smoothness has zero probability")
    live = p > 0
    return float(np.max(np.sqrt(M[live] * R[live]) / p[live]))


def make_schedule_sc(sigma_A, M, p, R, rho=None):
    """Strongly convex schedule; ``rho`` may be given below ``sqrt(sigma_A) / S``."""
    if not sigma_A > 0:
        raise ScheduleError("sigma_A <= 0: use make_schedule_cvx")
    S = sampling_constant(M, R, p)
    rho_max = math.sqrt(sigma_A) / S
    if rho is None:
        rho = rho_max
    elif not 0 < rho <= rho_max * (1 + 1e-12):
        raise ScheduleError(f"rho={rho} outside (0, {rho_max}]")
    R = np.asarray(R, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(rho * R > p * (1 + 1e-12)):
        raise ScheduleError("rho R_i <= p_i violated")
    return SCSchedule(float(sigma_A), S, float(rho))


def make_schedule_cvx(S, p_R, B0=1.0):
    return CVXSchedule(float(S), float(p_R), float(B0))


def p_R_of(p, R):
    p = np.asarray(p, dtype=float)
    R = np.asarray(R, dtype=float)
    live = R > 0
    return float(np.min(p[live] / R[live]))


# --------------------------------------------------------------------------
# iteration


@dataclass
class APCGState:
    x: np.ndarray
    v: np.ndarray
    t: int = 0


def apcg_step(problem, schedule, state, i, p_i):
    """One iteration on coordinate ``i`` (sampled with probability ``p_i``).

    Returns ``(new_state, y)``.
    """
    alpha, beta, ratio = schedule.coeffs(state.t)
    x, v = state.x, state.v
    y = ((1.0 - alpha) * x + alpha * (1.0 - beta) * v) / (1.0 - alpha * beta)
    w = (1.0 - beta) * v + beta * y
    eta = ratio / p_i
    v_new = w.copy()
    v_new[i] = w[i] - eta * problem.grad_coord(y, i)
    if problem.has_prox(i):
        v_new[i] = problem.prox(i, eta, v_new[i])
    x_new = y + (alpha * problem.R[i] / p_i) * (v_new - w)
    return APCGState(x_new, v_new, state.t + 1), y


class ConvexWeightTracker:
    """Writes ``x^(i)`` of each prox coordinate as a combination of its prox outputs.

    The basis for coordinate ``i`` is ``v_0^(i)`` followed by every value the
    prox returned on ``i``; ``v^(i)`` between prox steps is tracked in the same
    basis. Debug aid: memory grows with the number of prox steps.
    """

    def __init__(self, problem, state):
        self.R = problem.R
        self.coords = [i for i in range(problem.n_coords) if problem.has_prox(i)]
        self.basis = {i: [state.v[i].copy()] for i in self.coords}
        self.weights = {i: np.array([1.0]) for i in self.coords}  # x_0 = v_0
        self._v = {i: np.array([1.0]) for i in self.coords}

    def update(self, schedule, t, sampled, p_i, new_state):
        alpha, beta, _ = schedule.coeffs(t)
        for i in self.coords:
            y = ((1.0 - alpha) * self.weights[i] + alpha * (1.0 - beta) * self._v[i]) / (1.0 - alpha * beta)
            w = (1.0 - beta) * self._v[i] + beta * y
            if i == sampled:
                self.basis[i].append(new_state.v[i].copy())
                e = np.zeros(len(y) + 1)
                e[-1] = 1.0
                y = np.append(y, 0.0)
                w = np.append(w, 0.0)
                self.weights[i] = y + (alpha * self.R[i] / p_i) * (e - w)
                self._v[i] = e
            else:
                self.weights[i] = y
                self._v[i] = w

    def reconstruct(self, i):
        return np.tensordot(self.weights[i], np.array(self.basis[i]), axes=1)


@dataclass
class APCGTrajectory:
    t: np.ndarray
    F: np.ndarray
    vdist: np.ndarray
    lyapunov: np.ndarray
    x: np.ndarray
    v: np.ndarray
    states: list | None = None
    tracker: ConvexWeightTracker | None = None


def run_apcg(problem, schedule, p, T, seed, theta_star=None, F_star=None,
             record_every=1, record_states=False, track_weights=False, indices=None):
    """Run ``T`` iterations from ``x_0 = v_0 = 0``.

    Records ``F(x_t)``, ``||v_t - theta*||^2_{A^+A}`` and the Lyapunov sum
    ``B_t ||v_t - theta*||^2 + 2 A_t (F(x_t) - F*)`` when an optimum is given.
    ``indices`` overrides the sampled coordinates.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    p = np.asarray(p, dtype=float)
    draws = inverse_cdf_draws(p, T, seed) if indices is None else np.asarray(indices)
    state = APCGState(problem.zeros(), problem.zeros(), 0)
    tracker = ConvexWeightTracker(problem, state) if track_weights else None
    ts, Fs, ds, lys = [], [], [], []
    states = [] if record_states else None

    def record(st, y):
        ts.append(st.t)
        Fx = problem.value(st.x)
        Fs.append(Fx)
        if theta_star is not None:
            dist = problem.proj_sqnorm(st.v - theta_star)
            ds.append(dist)
            if F_star is not None:
                lys.append(schedule.B(st.t) * dist + 2.0 * schedule.A(st.t) * (Fx - F_star))
        if states is not None:
            states.append((st.x.copy(), st.v.copy(), None if y is None else y.copy()))

    record(state, None)
    for t in range(T):
        i = int(draws[t])
        new, y = apcg_step(problem, schedule, state, i, p[i])
        if tracker is not None:
            tracker.update(schedule, t, i, p[i], new)
        state = new
        if state.t % record_every == 0 or state.t == T:
            record(state, y)
    return APCGTrajectory(np.array(ts), np.array(Fs), np.array(ds), np.array(lys),
                          state.x, state.v, states, tracker)

