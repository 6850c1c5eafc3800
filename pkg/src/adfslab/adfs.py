"""ADFS on the augmented graph: parameter selection, dense and lazy sparse steps.

Node-space state matrices have one row per augmented-graph node: the ``n``
centers first, then virtual node ``(i, j)`` at row ``n + i*m + j``. Column
``c`` of the incidence matrix is a communication edge for ``c < E`` and the
virtual edge ``(i, j)`` at ``E + i*m + j``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .apcg import make_schedule_cvx, p_R_of, sampling_constant
from .graph import effective_resistances, laplacian_lambda_min
from .problem import _sig, dual_value_nodes, prox_conjugate_tilde, prox_loss_1d
from .schedule import comm_load, inverse_cdf_draws

log = logging.getLogger(__name__)


class PlanError(ValueError):
    pass


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class SamplingPlan:
    p: np.ndarray = field(repr=False)  # one probability per column
    n_comm: int
    p_comm: float
    p_comp: float
    rho: float
    rho_bound: float  # sqrt of the per-edge minimum, before clamping
    eta_tilde: np.ndarray = field(repr=False)
    clamps: tuple
    delta_p: float
    c_tau: float
    p_comm_max: float
    sigma_A: float
    gamma_tilde: float
    S_comp: float


def rate_bound(aug, spectra, p):
    """Per-edge ``sigma_A p_e^2 / ((1/Sigma_k + 1/Sigma_l) mu_e^2 R_e)``."""
    si = aug.sigma_inv()
    denom = (si[aug.col_k] + si[aug.col_l]) * aug.col_mu2 * spectra.R
    return spectra.sigma_A * np.asarray(p) ** 2 / denom


def balanced_p_comm(spectra, summary):
    if spectra.n_comm_edges == 0:
        return 0.0
    return min(0.5, 1.0 / (1.0 + summary.S_comp * math.sqrt(spectra.gamma_tilde / summary.kappa_s)))


def select_parameters(aug, spectra, summary, tau=None, overrides=None):
    """Sampling probabilities, rate and step sizes for ADFS.

    ``overrides`` may set ``p_comm`` (in (0, 1)) and/or a smaller ``rho``.
    ``rho`` is the largest rate allowed by every edge, then clamped so that
    the conjugate prox stays well defined; each binding clamp is logged and
    recorded in ``plan.clamps``. With ``tau`` given, a plan outside the
    throughput guarantee (``p_comp <= p_comm_max`` and ``tau <= 1``) logs a
    warning.
    """
    overrides = dict(overrides or {})
    unknown = set(overrides) - {"p_comm", "rho"}
    if unknown:
        raise PlanError(f"unknown overrides {sorted(unknown)}")
    n, m, E = aug.n, aug.m, aug.E
    if "p_comm" in overrides and overrides["p_comm"] is not None:
        p_comm = float(overrides["p_comm"])
        if E == 0:
            raise PlanError("p_comm override on a graph without communication edges")
        if not 0.0 < p_comm < 1.0:
            raise PlanError(f"p_comm={p_comm} must lie in (0, 1)")
    else:
        p_comm = balanced_p_comm(spectra, summary)
    p_comp = 1.0 - p_comm

    w = np.sqrt(1.0 + aug.L / aug.sigma[:, None])
    p = np.empty(aug.n_edges)
    if E:
        p[:E] = p_comm / E
    p[E:] = (p_comp * w / (n * summary.S_comp)).ravel()

    rho_bound = math.sqrt(float(rate_bound(aug, spectra, p).min()))
    rho = rho_bound
    clamps = []

    kappa = aug.kappa()
    kap_s = float(kappa.max())
    pv = p[E:].reshape(n, m)
    c1 = float(np.min(kappa[:, None] / (2.0 * kap_s) * pv))
    if c1 < rho:
        clamps.append(f"conjugate-prox sufficient bound: rho {rho:.6g} -> {c1:.6g}")
        rho = c1
    # exact validity eta_tilde / L < 1 (matters when mu is not the default rule)
    exact = float(np.min(spectra.sigma_A * pv * aug.L / aug.virtual_mu2)) * (1.0 - 1e-9)
    if exact < rho:
        clamps.append(f"conjugate-prox exact bound: rho {rho:.6g} -> {exact:.6g}")
        rho = exact
    if overrides.get("rho") is not None:
        r = float(overrides["rho"])
        if not 0 < r <= rho:
            raise PlanError(f"rho override {r} must lie in (0, {rho}]")
        rho = r
    for msg in clamps:
        log.info(msg)

    eta_t = rho * aug.col_mu2 / (spectra.sigma_A * p)
    if E:
        delta_p = float(p[:E].min() * E / p_comm)
        pmax = comm_load(p, aug)
        c_tau = pmax / p_comm
    else:
        delta_p, pmax, c_tau = 1.0, 0.0, 0.0
    if tau is not None and E and not (p_comp > pmax or tau > 1):
        log.warning("p_comp=%.4g <= p_comm_max=%.4g with tau=%g: no throughput guarantee",
                    p_comp, pmax, tau)
    for a in (p, eta_t):
        a.setflags(write=False)
    return SamplingPlan(p, E, p_comm, p_comp, float(rho), rho_bound, eta_t, tuple(clamps),
                        delta_p, float(c_tau), float(pmax), float(spectra.sigma_A),
                        float(spectra.gamma_tilde), float(summary.S_comp))


# --------------------------------------------------------------------------
# dense reference implementation


@dataclass
class DenseState:
    x: np.ndarray
    v: np.ndarray
    t: int = 0
    y: np.ndarray | None = None  # y of the last step, for inspection


def dense_init(aug, d):
    z = np.zeros((aug.n_nodes, d))
    return DenseState(z, z.copy(), 0)


def comm_delta(aug, plan, y, col):
    """Rows ``k`` and ``l`` of ``eta_tilde W_kl Sigma^-1 y`` (the others are zero)."""
    si = aug.sigma_inv()
    k, l = aug.col_k[col], aug.col_l[col]
    g = plan.eta_tilde[col] * (si[k] * y[k] - si[l] * y[l])
    return k, l, g


def adfs_step_dense(state, col, plan, aug, problem, spectra_R):
    """One literal iteration of ADFS on column ``col``; returns a new state."""
    rho = plan.rho
    x, v = state.x, state.v
    y = (x + rho * v) / (1.0 + rho)
    k, l, g = comm_delta(aug, plan, y, col)
    z = (1.0 - rho) * v + rho * y
    z[k] -= g
    z[l] += g
    v_new = z
    if aug.is_virtual(col):
        i, j = aug.virtual_index(col)
        zi, zij = z[k].copy(), z[l].copy()
        out, _ = prox_conjugate_tilde(plan.eta_tilde[col], problem.L[i, j], zij,
                                      lambda s, w: problem.sample_prox(i, j, s, w)[0])
        v_new[l] = out
        v_new[k] = zi + zij - out
    base = (1.0 - rho) * v + rho * y
    x_new = y + (rho * spectra_R[col] / plan.p[col]) * (v_new - base)
    return DenseState(x_new, v_new, state.t + 1, y)


# --------------------------------------------------------------------------
# sparse lazy implementation (linear losses)


class SparseState:
    """Lazy node states.

    Centers hold ``x`` and ``v`` vectors; virtual node ``(i, j)`` holds two
    scalars, its ``x`` and ``v`` coefficients along the unit vector
    ``X_ij / ||X_ij||``. ``stamp`` is the iteration each node was last brought
    up to date; idle iterations are applied on demand in closed form.
    """

    def __init__(self, n, m, d):
        self.xc = np.zeros((n, d))
        self.vc = np.zeros((n, d))
        self.xv = np.zeros((n, m))
        self.vv = np.zeros((n, m))
        self.stamp_c = np.zeros(n, dtype=np.int64)
        self.stamp_v = np.zeros((n, m), dtype=np.int64)
        self.warm = np.zeros((n, m))
        self.t = 0


class SparseADFS:
    """Sparse ADFS solver bound to one problem, graph and plan."""

    def __init__(self, problem, aug, plan, R, warm_start=True):
        if problem.loss not in ("quadratic", "logistic"):
            raise ValueError("sparse mode needs a linear-model loss")
        self.p = problem
        self.aug = aug
        self.plan = plan
        self.R = np.asarray(R, dtype=float)
        self.n, self.m, self.d = problem.n, problem.m, problem.d
        self.rho = plan.rho
        self.q = (1.0 - plan.rho) / (1.0 + plan.rho)
        self.Xh = problem.X / problem.norms[..., None]
        self.warm_start = warm_start
        self.state = SparseState(self.n, self.m, self.d)
        self.gain = self.rho * self.R / plan.p
        self.inv_sigma = 1.0 / problem.sigma
        self._ck = [int(a) for a in aug.col_k]
        self._cl = [int(a) for a in aug.col_l]

    # idle iterations: (x, v) -> ((x + rho v), (rho x + v)) / (1 + rho), i.e.
    # x + v is kept and x - v shrinks by q per iteration
    def _decay(self, c):
        return self.q**c

    def _sync_center(self, i, t):
        s = self.state
        c = t - s.stamp_c[i]
        if c:
            f = self._decay(c)
            a, b = s.xc[i], s.vc[i]
            tot = a + b
            dif = f * (a - b)
            s.xc[i] = 0.5 * (tot + dif)
            s.vc[i] = 0.5 * (tot - dif)
            s.stamp_c[i] = t

    def _sync_virtual(self, i, j, t):
        s = self.state
        c = t - s.stamp_v[i, j]
        if c:
            f = self._decay(c)
            a, b = s.xv[i, j], s.vv[i, j]
            tot = a + b
            dif = f * (a - b)
            s.xv[i, j] = 0.5 * (tot + dif)
            s.vv[i, j] = 0.5 * (tot - dif)
            s.stamp_v[i, j] = t

    def step(self, col):
        """Apply iteration ``t`` on column ``col``; returns the two node deltas of the gossip term."""
        s = self.state
        t = s.t
        rho = self.rho
        eta = self.plan.eta_tilde[col]
        gain = self.gain[col]
        if col < self.aug.E:
            k, l = self._ck[col], self._cl[col]
            self._sync_center(k, t)
            self._sync_center(l, t)
            yk = (s.xc[k] + rho * s.vc[k]) / (1.0 + rho)
            yl = (s.xc[l] + rho * s.vc[l]) / (1.0 + rho)
            g = eta * (yk * self.inv_sigma[k] - yl * self.inv_sigma[l])
            s.vc[k] = (1.0 - rho) * s.vc[k] + rho * yk - g
            s.vc[l] = (1.0 - rho) * s.vc[l] + rho * yl + g
            s.xc[k] = yk - gain * g
            s.xc[l] = yl + gain * g
            s.stamp_c[k] = s.stamp_c[l] = t + 1
            s.t = t + 1
            return -g, g
        i, j = divmod(col - self.aug.E, self.m)
        self._sync_center(i, t)
        self._sync_virtual(i, j, t)
        xh = self.Xh[i, j]
        yi = (s.xc[i] + rho * s.vc[i]) / (1.0 + rho)
        yij = (s.xv[i, j] + rho * s.vv[i, j]) / (1.0 + rho)
        Lij = self.p.L[i, j]
        g = eta * (yi * self.inv_sigma[i] - (yij / Lij) * xh)
        base_i = (1.0 - rho) * s.vc[i] + rho * yi
        base_ij = (1.0 - rho) * s.vv[i, j] + rho * yij
        # the prox only sees the component of z^(ij) along xh
        vij = self._prox_coef(i, j, eta, base_ij + float(xh @ g))
        # v^(i) = z^(i) + z^(ij) - v^(ij); the gossip terms cancel
        vi = base_i + (base_ij - vij) * xh
        s.xc[i] = yi + gain * (vi - base_i)
        s.xv[i, j] = yij + gain * (vij - base_ij)
        s.vc[i] = vi
        s.vv[i, j] = vij
        s.stamp_c[i] = t + 1
        s.stamp_v[i, j] = t + 1
        s.t = t + 1
        return -g, g

    def _prox_coef(self, i, j, eta, zc):
        """Coefficient along the unit feature vector of ``prox_{eta f~*_ij}(zc xh)``."""
        Lij = self.p.L[i, j]
        if eta == 0.0:
            return zc
        if eta >= Lij:
            raise ValueError(f"eta_tilde/L = {eta / Lij:.6g} >= 1; clamp rho")
        c = float(self.p.norms[i, j])
        inner = 1.0 / eta - 1.0 / Lij
        lab = self.p.targets[i, j]
        warm = self.state.warm[i, j] if self.warm_start else None
        u = prox_loss_1d(self.p.loss, c, inner, zc / eta, warm=warm, label=lab)
        self.state.warm[i, j] = u
        # prox coefficient equals c * phi'(c u) by the 1-D optimality condition
        if self.p.loss == "quadratic":
            dphi = c * u - lab
        else:
            dphi = -lab * _sig(-lab * c * u)
        return c * dphi

    def sync_all(self, t=None):
        t = self.state.t if t is None else t
        for i in range(self.n):
            self._sync_center(i, t)
        for i in range(self.n):
            for j in range(self.m):
                self._sync_virtual(i, j, t)

    def centers(self):
        """Up-to-date ``(x, v)`` at the centers (does not modify the state)."""
        s = self.state
        f = self.q ** (s.t - s.stamp_c)[:, None]
        tot = s.xc + s.vc
        dif = f * (s.xc - s.vc)
        return 0.5 * (tot + dif), 0.5 * (tot - dif)

    def materialize(self):
        """Dense ``(x, v)`` matrices of the current state."""
        s = self.state
        xc, vc = self.centers()
        f = self.q ** (s.t - s.stamp_v)
        tot = s.xv + s.vv
        dif = f * (s.xv - s.vv)
        xv = 0.5 * (tot + dif)
        vv = 0.5 * (tot - dif)
        X = np.concatenate([xc, (xv[..., None] * self.Xh).reshape(-1, self.d)])
        V = np.concatenate([vc, (vv[..., None] * self.Xh).reshape(-1, self.d)])
        return X, V


def adfs_step_sparse(solver, col):
    """Advance a :class:`SparseADFS` by one iteration on ``col``; returns its state."""
    solver.step(int(col))
    return solver.state


# --------------------------------------------------------------------------
# runs


@dataclass
class ADFSResult:
    theta: np.ndarray  # Sigma^-1 v_K at the centers, shape (n, d)
    iterations: np.ndarray
    primal_error_y: np.ndarray
    primal_error_v: np.ndarray
    dist_v: np.ndarray  # sum_i ||v_i / sigma_i - theta*||^2 over centers
    x: np.ndarray
    v: np.ndarray
    events: np.ndarray


def primal_errors(problem, xc, vc, rho, F_star):
    """Mean over centers of ``F(y_i / sigma_i) - F*`` and of ``F(v_i / sigma_i) - F*``."""
    yc = (xc + rho * vc) / (1.0 + rho)
    th_y = yc / problem.sigma[:, None]
    th_v = vc / problem.sigma[:, None]
    ey = np.mean([problem.value(th) for th in th_y]) - F_star
    ev = np.mean([problem.value(th) for th in th_v]) - F_star
    return float(ey), float(ev)


def run_adfs(problem, aug, plan, K, seed, record_every=None, mode="sparse", R=None,
             theta_star=None, F_star=None, events=None, stop_below=None):
    """Run ``K`` iterations of ADFS from zero on the shared schedule of ``seed``.

    Records, every ``record_every`` iterations (and at 0 and ``K``), the mean
    primal error at ``Sigma^-1 y_t`` and ``Sigma^-1 v_t`` over centers when
    ``F_star`` is given, and the center distance when ``theta_star`` is given.
    ``stop_below`` ends the run at the first record whose ``y`` error is
    below the threshold.
    """
    if K < 0:
        raise ValueError("K must be nonnegative")
    if R is None:
        R = effective_resistances(aug.incidence())
    if events is None:
        events = inverse_cdf_draws(plan.p, K, seed)
    events = np.asarray(events)
    record_every = record_every or max(1, K // 100)
    its, ey, ev, dist = [], [], [], []
    n = problem.n

    if mode == "sparse":
        solver = SparseADFS(problem, aug, plan, R)

        def centers():
            return solver.centers()

        def advance(col):
            solver.step(col)
    elif mode == "dense":
        holder = [dense_init(aug, problem.d)]

        def centers():
            st = holder[0]
            return st.x[:n], st.v[:n]

        def advance(col):
            holder[0] = adfs_step_dense(holder[0], col, plan, aug, problem, R)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    def record(t):
        xc, vc = centers()
        its.append(t)
        if F_star is not None:
            a, b = primal_errors(problem, xc, vc, plan.rho, F_star)
            ey.append(a)
            ev.append(b)
        if theta_star is not None:
            dist.append(float(np.sum((vc / problem.sigma[:, None] - theta_star) ** 2)))

    record(0)
    done = K
    for t in range(K):
        advance(int(events[t]))
        if (t + 1) % record_every == 0 or t + 1 == K:
            record(t + 1)
            if stop_below is not None and ey and ey[-1] <= stop_below:
                done = t + 1
                break
    if mode == "sparse":
        X, V = solver.materialize()
    else:
        X, V = holder[0].x, holder[0].v
    theta = V[:n] / problem.sigma[:, None]
    return ADFSResult(theta, np.array(its), np.array(ey), np.array(ev), np.array(dist),
                      X, V, events[:done])


def linear_rate_constant(problem, aug, spectra, theta_star, F_star):
    """``lambda_max(A' Sigma^-2 A) (||A^+ A lam*||^2 + 2 (F*_A(0) - F*_A(lam*)) / sigma_A)``.

    The node-space dual optimum is known in closed form: ``sigma_i theta*``
    at centers and ``grad f_ij(theta*)`` at virtual nodes; its dual value is
    ``-F(theta*)`` and the dual value at 0 is ``sum_ij f*_ij(0)``.
    """
    n, m = problem.n, problem.m
    v_star = np.zeros((aug.n_nodes, problem.d))
    v_star[:n] = problem.sigma[:, None] * theta_star
    for i in range(n):
        for j in range(m):
            v_star[aug.virtual_node(i, j)] = problem.sample_grad(i, j, theta_star)
    A = aug.incidence()
    lam = np.linalg.lstsq(A, v_star, rcond=None)[0]  # minimum norm, inside Ker(A)^perp
    dual0 = dual_value_nodes(problem, aug, np.zeros_like(v_star))
    gap0 = dual0 + F_star
    return spectra.lambda_max_A2 * (float(np.sum(lam**2)) + 2.0 * gap0 / spectra.sigma_A)


# --------------------------------------------------------------------------
# non-smooth variant


@dataclass(frozen=True)
class NSPlan:
    p: np.ndarray = field(repr=False)
    p_comm: float
    S: float
    p_R: float
    R: np.ndarray = field(repr=False)
    lambda_min_AtA: float


def ns_select_parameters(aug, p_comm=None):
    """Uniform probabilities within each edge kind, communication share from the
    balanced-rate choice ``(1 + sqrt(gamma~ m^2 / (2 (1 + m))))^-1``."""
    from .graph import lambda_min_plus

    n, m, E = aug.n, aug.m, aug.E
    A = aug.incidence()
    R = effective_resistances(A)
    if E:
        lmin = laplacian_lambda_min(aug.base)
        g = aug.base
        gt = float(np.min(lmin * n**2 / (g.mu2 * R[:E] * E**2)))
        if p_comm is None:
            p_comm = 1.0 / (1.0 + math.sqrt(gt * m * m / (2.0 * (1 + m))))
        if not 0 < p_comm < 1:
            raise PlanError("p_comm must lie in (0, 1)")
    else:
        p_comm = 0.0
    p = np.empty(aug.n_edges)
    if E:
        p[:E] = p_comm / E
    p[E:] = (1.0 - p_comm) / (n * m)
    M = aug.edge_smoothness()
    S = sampling_constant(M, R, p)
    return NSPlan(p, float(p_comm), S, p_R_of(p, R), R, lambda_min_plus(A.T @ A))


@dataclass
class NSResult:
    x: np.ndarray
    v: np.ndarray
    iterations: np.ndarray
    dual_values: np.ndarray


def run_ns_adfs(problem, aug, plan, K, seed, record_every=1, record_at=None):
    """Non-smooth ADFS (dense node-space form) on :class:`AbsoluteLossProblem`-like problems.

    ``problem`` must provide ``conj_prox(i, j, step, z)`` and ``dual_value``.
    Centers carry ``1/sigma_i`` in the gossip term, virtual nodes carry 0.
    """
    n = aug.n
    si = np.zeros(aug.n_nodes)
    si[:n] = 1.0 / problem.sigma
    sched = make_schedule_cvx(plan.S, plan.p_R, 1.0)
    eta = aug.col_mu2 / plan.p
    events = inverse_cdf_draws(plan.p, K, seed)
    x = np.zeros((aug.n_nodes, problem.d))
    v = np.zeros_like(x)
    marks = set(record_at) if record_at is not None else None
    its, vals = [0], [problem.dual_value(x)]
    for t in range(K):
        col = int(events[t])
        A_t, A_next = sched.A(t), sched.A(t + 1)
        a = A_next - A_t
        alpha = a / A_next
        y = (1.0 - alpha) * x + alpha * v
        k, l = aug.col_k[col], aug.col_l[col]
        g = a * eta[col] * (si[k] * y[k] - si[l] * y[l])
        v_new = v.copy()
        v_new[k] -= g
        v_new[l] += g
        if aug.is_virtual(col):
            i, j = aug.virtual_index(col)
            zi, zij = v_new[k].copy(), v_new[l].copy()
            out = problem.conj_prox(i, j, a * eta[col], zij)
            v_new[l] = out
            v_new[k] = zi + zij - out
        x = y + (alpha * plan.R[col] / plan.p[col]) * (v_new - v)
        v = v_new
        tt = t + 1
        if (marks is None and (tt % record_every == 0 or tt == K)) or (marks is not None and tt in marks):
            its.append(tt)
            vals.append(problem.dual_value(x))
    return NSResult(x, v, np.array(its), np.array(vals))
