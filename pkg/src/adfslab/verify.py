"""Acceptance checks shared by ``adfs-lab verify`` and the test suite.

Each check returns a :class:`CheckResult` carrying the measured values next
to the threshold they were held to. Sizes and seeds are fixed so the report
is reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .adfs import (SparseADFS, adfs_step_dense, dense_init, linear_rate_constant,
                   ns_select_parameters, run_adfs, run_ns_adfs, select_parameters)
from .apcg import (DualADFSComposite, QuadraticComposite, make_schedule_cvx,
                   make_schedule_sc, p_R_of, run_apcg, sampling_constant)
from .graph import augment, build_topology, check_gap_bound, single_node, spectral_quantities
from .problem import (AbsoluteLossProblem, dphi_scalar, prox_conjugate_tilde,
                      prox_loss_1d, solve_reference, synth_classification,
                      synth_regression)
from .schedule import (Schedule, estimate_throughput, inverse_cdf_draws, simulate_events,
                       simulate_time)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0
    note: str = ""

    def line(self):
        vals = " ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        tag = "PASS" if self.passed else "FAIL"
        head = f"criterion {self.number}" if self.number else "extra"
        out = f"{tag} {head} [{self.name}] {vals} ({self.seconds:.1f}s)"
        return out + (f" -- {self.note}" if self.note else "")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, (list, tuple)):
        return "(" + ",".join(_fmt(x) for x in v) + ")"
    return str(v)


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _problem(loss, seed, n, m, d):
    maker = synth_regression if loss == "quadratic" else synth_classification
    return maker(seed, n, m, d)


# --------------------------------------------------------------------------


@_timed
def check_dense_sparse(configs=20, steps=500, tol=1e-9, seed=0):
    """Lazy sparse ADFS against the literal dense iteration on random small problems."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for c in range(configs):
        kind = ("grid2d", "complete")[c % 2]
        n = int(rng.choice([4, 9])) if kind == "grid2d" else int(rng.integers(2, 10))
        m = int(rng.integers(1, 51))
        d = int(rng.integers(1, 11))
        loss = ("quadratic", "logistic")[(c // 2) % 2]
        prob = _problem(loss, int(rng.integers(1 << 30)), n, m, d)
        aug = augment(build_topology(kind, n), prob.L, prob.sigma)
        sp = spectral_quantities(aug)
        plan = select_parameters(aug, sp, prob.summary())
        events = inverse_cdf_draws(plan.p, steps, c)
        dense = dense_init(aug, d)
        sparse = SparseADFS(prob, aug, plan, sp.R)
        for col in events:
            dense = adfs_step_dense(dense, int(col), plan, aug, prob, sp.R)
            sparse.step(int(col))
            X, V = sparse.materialize()
            scale = max(np.abs(dense.x).max(), np.abs(dense.v).max(), 1e-300)
            worst = max(worst, np.abs(X - dense.x).max() / scale, np.abs(V - dense.v).max() / scale)
    return CheckResult(1, "dense-sparse", worst <= tol,
                       {"max_rel_divergence": worst, "tol": tol, "configs": configs})


@_timed
def check_single_node(steps=1000, tol=1e-10, seed=7):
    """One machine: ADFS iterates equal generalized APCG on the edge-space dual, mapped through A."""
    worst = 0.0
    for loss in ("quadratic", "logistic"):
        prob = _problem(loss, 2, 1, 5, 3)
        aug = augment(single_node(), prob.L, prob.sigma)
        sp = spectral_quantities(aug)
        plan = select_parameters(aug, sp, prob.summary())
        comp = DualADFSComposite(prob, aug, sp)
        sched = make_schedule_sc(comp.sigma_A, comp.M, plan.p, comp.R, rho=plan.rho)
        traj = run_apcg(comp, sched, plan.p, steps, seed, record_states=True)
        events = inverse_cdf_draws(plan.p, steps, seed)
        A = aug.incidence()
        st = dense_init(aug, prob.d)
        for t in range(steps):
            st = adfs_step_dense(st, int(events[t]), plan, aug, prob, sp.R)
            xa, va, ya = traj.states[t + 1]
            scale = max(np.abs(st.v).max(), 1e-300)
            worst = max(worst, np.abs(A @ xa - st.x).max() / scale,
                        np.abs(A @ va - st.v).max() / scale,
                        np.abs(A @ ya - st.y).max() / scale)
    return CheckResult(2, "single-node-reduction", worst <= tol,
                       {"max_rel_divergence": worst, "tol": tol, "steps": steps})


@_timed
def check_linear_rate(seeds=50, slack=0.05):
    """Slope of the averaged log squared distance against the guaranteed per-step contraction."""
    prob = synth_regression(0, 4, 20, 5)
    aug = augment(build_topology("grid2d", 4), prob.L, prob.sigma)
    sp = spectral_quantities(aug)
    plan = select_parameters(aug, sp, prob.summary())
    theta = solve_reference(prob, 1e-13)
    K = int(12 / plan.rho)
    runs = [run_adfs(prob, aug, plan, K, s, record_every=max(1, K // 200), R=sp.R,
                     theta_star=theta) for s in range(seeds)]
    its = runs[0].iterations
    D = np.mean([r.dist_v for r in runs], axis=0)
    sel = its >= 0.2 * K
    slope = float(np.polyfit(its[sel], np.log(D[sel]), 1)[0])
    target = math.log(1.0 - plan.rho)
    C0 = linear_rate_constant(prob, aug, sp, theta, prob.value(theta))
    env = float(np.max(D / (C0 * (1.0 - plan.rho) ** its)))
    return CheckResult(3, "linear-rate", slope <= target + slack,
                       {"slope": slope, "log(1-rho)": target, "rho": plan.rho, "K": K,
                        "seeds": seeds, "envelope_ratio": env})


def _brute_conjugate_prox(loss, c, label, L, eta_t, z):
    """Minimize ``(s - z)^2 / (2 eta_t) + f*(s) - s^2 / (2 L)`` over ``s`` without the primal prox.

    The objective is strictly convex, so the minimizer is the root of its
    derivative ``(s - z) / eta_t + (f*)'(s) - s / L``. The slope ``(f*)'(s)``
    is the maximizer ``v`` of ``s v - phi(c v)``; searching over ``v`` with
    ``s = c phi'(c v)`` covers the whole (possibly open) domain of ``f*``,
    so the bracket never degenerates near its boundary.
    """
    def s_of(v):
        return c * dphi_scalar(loss, c * v, label)

    def grad(v):  # increasing in v
        s = s_of(v)
        return (s - z) / eta_t + v - s / L

    lo, hi = -1.0, 1.0
    while grad(lo) > 0:
        lo *= 2.0
    while grad(hi) < 0:
        hi *= 2.0
    v = brentq(grad, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return s_of(v)


@_timed
def check_moreau(cases=200, tol=1e-7, seed=0):
    """Conjugate prox via the primal prox against direct 1-D minimization of the conjugate objective."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(cases):
        loss = ("quadratic", "logistic")[k % 2]
        c = float(rng.uniform(0.2, 3.0)) * (1 if rng.random() < 0.5 else -1)
        label = float(rng.choice([-1.0, 1.0])) if loss == "logistic" else float(rng.normal())
        L = c * c / 4 if loss == "logistic" else c * c
        eta_t = float(rng.uniform(0.05, 0.95)) * L
        z = float(rng.normal(scale=2.0))

        def prox_f(step, w):
            return prox_loss_1d(loss, c, step, float(w), label=label)

        fast, _ = prox_conjugate_tilde(eta_t, L, z, prox_f)
        slow = _brute_conjugate_prox(loss, c, label, L, eta_t, z)
        worst = max(worst, abs(float(fast) - slow) / max(1.0, abs(slow)))
    return CheckResult(4, "moreau-prox", worst <= tol,
                       {"max_err": worst, "tol": tol, "cases": cases})


@_timed
def check_resistance_and_gap(graphs=50, tol=1e-10, seed=0):
    """Virtual-edge effective resistances equal 1; the augmented spectral gap lower bound holds."""
    rng = np.random.default_rng(seed)
    worst_r = 0.0
    gap_ok = 0
    for _ in range(graphs):
        kind = str(rng.choice(["complete", "ring", "path", "grid2d"]))
        n = int(rng.choice([4, 9])) if kind == "grid2d" else int(rng.integers(2, 9))
        m = int(rng.integers(1, 8))
        g = build_topology(kind, n, mu2_default=float(rng.uniform(0.2, 2.0)))
        L = rng.uniform(0.1, 5.0, size=(n, m))
        sigma = float(rng.uniform(0.1, 2.0))
        aug = augment(g, L, sigma)
        sp = spectral_quantities(aug)
        worst_r = max(worst_r, float(np.abs(sp.R_virtual - 1.0).max()))
        gap_ok += check_gap_bound(aug, sp).holds
    passed = worst_r <= tol and gap_ok == graphs
    return CheckResult(5, "resistance-and-gap", passed,
                       {"max_|R-1|": worst_r, "tol": tol, "gap_bound_holds": f"{gap_ok}/{graphs}"})


FOUR_NODE_SCHEDULE = [(0, 2), (1, 3), (0, 1), (3,), (2, 3)]  # nodes A, B, C, D = 0..3


@_timed
def check_timing_ground_truth():
    """Hand-checked five-event schedule on four nodes with tau = 2."""
    tr = simulate_events(FOUR_NODE_SCHEDULE, 4, 2.0)
    fin = tuple(float(f) for f in tr.finish)
    passed = fin == (2.0, 2.0, 4.0, 3.0, 5.0) and tr.T == 5.0
    return CheckResult(6, "timing-ground-truth", passed, {"finishes": fin, "T_max": tr.T})


@_timed
def check_throughput(sizes=(4, 16, 64), m=50, tau=5.0, t=10_000, trials=10):
    """Throughput constant below 24 and per-iteration time shrinking with the network size."""
    Cs, means = [], []
    for n in sizes:
        prob = synth_classification(0, n, m, 5)
        aug = augment(build_topology("grid2d", n), prob.L, prob.sigma)
        sp = spectral_quantities(aug)
        plan = select_parameters(aug, sp, prob.summary())
        rep = estimate_throughput(plan, aug, tau, t, trials, 0)
        Cs.append(rep.C)
        means.append(rep.mean_time_per_iter)
    shrink = [means[i] / means[i + 1] for i in range(len(means) - 1)]
    passed = max(Cs) < 24 and min(shrink) >= 1.5
    return CheckResult(7, "throughput", passed,
                       {"C": tuple(Cs), "mean_T_over_t": tuple(means), "shrink": tuple(shrink),
                        "m": m})


def flat_quadratic(seed=3):
    """3-D convex quadratic with one flat direction and a reachable minimum."""
    rng = np.random.default_rng(seed)
    U = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    Q = U @ np.diag([2.0, 0.5, 0.0]) @ U.T
    Q = 0.5 * (Q + Q.T)
    return QuadraticComposite(Q, c=Q @ rng.standard_normal(3), force_convex=True)


@_timed
def check_sublinear_apcg(T=10_000, seeds=20):
    """Averaged F-gap of APCG on a flat quadratic stays below the convex-case bound."""
    prob = flat_quadratic()
    p = np.ones(3) / 3
    S = sampling_constant(prob.M, prob.R, p)
    pR = p_R_of(p, prob.R)
    theta = prob.minimizer()
    Fs = prob.value(theta)
    F0 = prob.value(np.zeros((3, 1))) - Fs
    d0 = prob.proj_sqnorm(-theta)
    gaps, dists = [], []
    for s in range(seeds):
        tr = run_apcg(prob, make_schedule_cvx(S, pR), p, T, s, theta_star=theta, F_star=Fs)
        gaps.append(tr.F - Fs)
        dists.append(tr.vdist)
    t = tr.t
    gap = np.mean(gaps, axis=0)
    r2 = d0 - np.mean(dists, axis=0)
    rhs = 2.0 / np.maximum(t, 1) ** 2 * (S * S * r2 + 6.0 * F0 / pR**2)
    sel = t >= 10
    ratio = float(np.max(gap[sel] / rhs[sel]))
    return CheckResult(8, "sublinear-apcg", ratio <= 1.0,
                       {"max_gap_over_bound": ratio, "S": S, "p_R": pR, "B0": 1.0, "seeds": seeds})


def nonsmooth_toy(seed=0):
    rng = np.random.default_rng(seed)
    return AbsoluteLossProblem(rng.standard_normal((2, 2, 2)), rng.standard_normal((2, 2)), 1.0)


@_timed
def check_nonsmooth_trend(K=10_000, seeds=10, bound=-1.8):
    """Log-log slope of the averaged dual gap of the non-smooth variant on a two-node toy."""
    prob = nonsmooth_toy()
    _, P = prob.solve_exact()
    aug = augment(build_topology("path", 2), prob.L, prob.sigma, rule="nonsmooth")
    plan = ns_select_parameters(aug)
    marks = np.unique(np.geomspace(1, K, 60).astype(int))
    gaps = [run_ns_adfs(prob, aug, plan, K, s, record_at=marks).dual_values + P
            for s in range(seeds)]
    t = np.r_[0, marks]
    G = np.mean(gaps, axis=0)
    sel = (t >= 100) & (t <= K)
    slope = float(np.polyfit(np.log(t[sel]), np.log(G[sel]), 1)[0])
    return CheckResult(9, "nonsmooth-trend", slope <= bound,
                       {"exponent": slope, "bound": bound, "seeds": seeds})


def time_to_accuracy(prob, aug, plan, R, seed, F_star, threshold, tau, K_max, record_every=100):
    """Idealized time at the first record whose primal error is at most ``threshold``."""
    res = run_adfs(prob, aug, plan, K_max, seed, record_every=record_every, R=R,
                   F_star=F_star, stop_below=threshold)
    if res.primal_error_y[-1] > threshold:
        return math.inf
    it = int(res.iterations[-1])
    if it == 0:
        return 0.0
    return simulate_time(Schedule(seed, res.events[:it], aug.E), aug, tau).T


@_timed
def check_parameter_optimality(seeds=8, tau=5.0, factor=4.0, rel=1e-6):
    """Balanced communication share against shares ``factor`` times larger and smaller."""
    prob = synth_classification(0, 16, 100, 5)
    aug = augment(build_topology("grid2d", 16), prob.L, prob.sigma)
    sp = spectral_quantities(aug)
    summ = prob.summary()
    theta = solve_reference(prob, 1e-12)
    Fs = prob.value(theta)
    thr = rel * prob.value(np.zeros(prob.d))
    base = select_parameters(aug, sp, summ)
    times = {}
    for label, pc in (("p*", base.p_comm), ("4p*", base.p_comm * factor),
                      ("p*/4", base.p_comm / factor)):
        plan = select_parameters(aug, sp, summ, overrides={"p_comm": pc})
        K_max = int(60 / plan.rho)
        times[label] = float(np.mean([time_to_accuracy(prob, aug, plan, sp.R, s, Fs, thr, tau, K_max)
                                      for s in range(seeds)]))
    passed = times["p*"] < times["4p*"] and times["p*"] < times["p*/4"]
    measured = {f"time[{k}]": v for k, v in times.items()}
    measured.update({"p_comm*": base.p_comm, "threshold": thr, "seeds": seeds})
    return CheckResult(10, "parameter-optimality", passed, measured)


@_timed
def check_hypothesis_warning(p_comm=0.9, tau=0.01):
    """Forced communication-heavy plan: the throughput report must carry the warning."""
    prob = synth_classification(0, 8, 10, 3)
    aug = augment(build_topology("path", 8), prob.L, prob.sigma)
    sp = spectral_quantities(aug)
    plan = select_parameters(aug, sp, prob.summary(), overrides={"p_comm": p_comm})
    rep = estimate_throughput(plan, aug, tau, 10_000, 10, 0)
    pred = (rep.p_comp + 2 * tau * rep.p_comm_max) / aug.n
    return CheckResult(0, "throughput-hypothesis", rep.warning is not None,
                       {"p_comm": p_comm, "tau": tau, "C": rep.C,
                        "measured_over_predicted": rep.mean_time_per_iter / pred},
                       note=rep.warning or "no warning")


CHECKS = {
    1: check_dense_sparse,
    2: check_single_node,
    3: check_linear_rate,
    4: check_moreau,
    5: check_resistance_and_gap,
    6: check_timing_ground_truth,
    7: check_throughput,
    8: check_sublinear_apcg,
    9: check_nonsmooth_trend,
    10: check_parameter_optimality,
}

SUITES = {
    "spectral": (5,),
    "prox": (4,),
    "apcg": (2, 8),
    "adfs": (1, 3, 9, 10),
    "timing": (6, 7),
    "all": tuple(range(1, 11)),
}


def run_verification(suite, p_comm=None, tau=None, echo=None):
    """Run one suite and return its results in criterion order.

    For the timing suite, ``p_comm`` and/or ``tau`` add a forced-plan
    throughput report that must flag the violated hypothesis.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    out = []
    for k in SUITES[suite]:
        res = CHECKS[k]()
        out.append(res)
        if echo:
            echo(res.line())
    if suite == "timing" and (p_comm is not None or tau is not None):
        res = check_hypothesis_warning(0.9 if p_comm is None else p_comm,
                                       0.01 if tau is None else tau)
        out.append(res)
        if echo:
            echo(res.line())
    return out
