import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adfslab.apcg import (APCGState, QuadraticComposite, ScheduleError, apcg_step,
                          make_schedule_cvx, make_schedule_sc, p_R_of, run_apcg,
                          sampling_constant)

PATH4 = np.array([[1.0, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]])


def random_pd(seed, n=4):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    return G @ G.T + 0.5 * np.eye(n), rng.standard_normal(n)


# ---- schedules


def test_uniform_sampling_constant():
    S = sampling_constant([1, 1, 1, 1], [1, 1, 1, 1], [0.25] * 4)
    assert S == 4.0
    assert make_schedule_sc(1.0, [1] * 4, [0.25] * 4, [1] * 4).rho == 0.25


@given(st.integers(0, 10_000))
def test_sc_rate_formula(seed):
    rng = np.random.default_rng(seed)
    M, R = rng.uniform(0.1, 3, 5), rng.uniform(0.1, 1, 5)
    p = rng.dirichlet(np.ones(5))
    sigma = float(rng.uniform(0.01, 1))
    sch = make_schedule_sc(sigma, M, p, R, rho=min(math.sqrt(sigma) / sampling_constant(M, R, p), p_R_of(p, R)))
    assert sch.rho <= math.sqrt(sigma) * np.min(p / np.sqrt(M * R)) * (1 + 1e-12)


def test_sc_schedule_rejections():
    with pytest.raises(ScheduleError):
        make_schedule_sc(0.0, [1], [1], [1])
    with pytest.raises(ScheduleError):
        make_schedule_sc(1.0, [1, 1], [0.5, 0.6], [1, 1])
    with pytest.raises(ScheduleError):
        make_schedule_sc(1.0, [1, 1], [0.5, 0.5], [1, 1], rho=0.6)
    with pytest.raises(ScheduleError):
        sampling_constant([1, 1], [1, 1], [1.0, 0.0])


@pytest.mark.parametrize("S,p_R", [(4.0, 0.25), (10.0, 0.05), (1.0, 1.0)])
def test_convex_schedule_properties(S, p_R):
    sch = make_schedule_cvx(S, p_R)
    assert sch.A0 == pytest.approx(3 / (S**2 * p_R**2))
    for t in range(1, 1001):
        assert sch.A(t) >= t * t / (4 * S * S)
    alphas = [sch.alpha(t) for t in range(300)]
    assert alphas[0] <= p_R
    assert all(a > b for a, b in zip(alphas, alphas[1:]))
    for t in range(1, 101):
        # a_t^2 S^2 = A_t B_0
        assert (sch.a(t) * S) ** 2 == pytest.approx(sch.A(t) * sch.B0, rel=1e-10)


def test_convex_schedule_rejections():
    with pytest.raises(ScheduleError):
        make_schedule_cvx(0.0, 0.5)
    with pytest.raises(ScheduleError):
        make_schedule_cvx(1.0, 1.5)


# ---- single steps


def test_symbolic_step():
    prob = QuadraticComposite([[1.0]], c=[2.0])
    sch = make_schedule_sc(0.25, [1.0], [1.0], [1.0])
    assert sch.rho == 0.5 and sch.coeffs(0)[2] == 2.0
    state = APCGState(np.ones((1, 1)), np.ones((1, 1)))
    new, y = apcg_step(prob, sch, state, 0, 1.0)
    assert y.item() == 1.0
    assert new.v.item() == 3.0
    assert new.x.item() == 2.0
    assert new.t == 1


def test_zero_is_a_fixed_point_without_linear_term():
    prob = QuadraticComposite(PATH4)
    sch = make_schedule_cvx(4.0, 0.25)
    tr = run_apcg(prob, sch, [0.25] * 4, 50, seed=0)
    assert np.all(tr.x == 0) and np.all(tr.v == 0)


def test_quadratic_psi_prox_closed_form():
    prob = QuadraticComposite(np.eye(2), psi_weights=[2.0, 0.0], psi_targets=[1.0, 0.0])
    z, step = 0.4, 0.3
    # argmin (u - z)^2 / (2 step) + (u - 1)^2
    assert prob.prox(0, step, z) == pytest.approx((z + 2 * step) / (1 + 2 * step))
    assert prob.has_prox(0) and not prob.has_prox(1)


def test_single_coordinate_converges():
    prob = QuadraticComposite([[2.0]], c=[1.0], psi_weights=[1.0], psi_targets=[3.0])
    sch = make_schedule_sc(2.0, prob.M, [1.0], prob.R, rho=0.5)
    tr = run_apcg(prob, sch, [1.0], 200, seed=0)
    assert tr.x.item() == pytest.approx(4.0 / 3.0, abs=1e-10)


def test_prox_requires_unit_resistance():
    with pytest.raises(ValueError, match="R_i"):
        QuadraticComposite(PATH4, psi_weights=[1.0, 0, 0, 0])


@given(st.integers(0, 10_000))
def test_coordinate_gradient_matches_finite_differences(seed):
    Q, c = random_pd(seed)
    prob = QuadraticComposite(Q, c)
    x = np.random.default_rng(seed + 1).standard_normal((4, 1))
    h = 1e-6
    for i in range(4):
        e = np.zeros((4, 1))
        e[i] = h
        fd = (prob.value(x + e) - prob.value(x - e)) / (2 * h)
        assert prob.grad_coord(x, i).item() == pytest.approx(fd, rel=1e-6, abs=1e-7)


# ---- trajectories


def test_lyapunov_decreases_on_average():
    Q, c = random_pd(5)
    prob = QuadraticComposite(Q, c, psi_weights=[0.5, 0, 1.0, 0], psi_targets=[1.0, 0, -1.0, 0])
    p = np.full(4, 0.25)
    sch = make_schedule_sc(prob.sigma_A, prob.M, p, prob.R)
    star = prob.minimizer()
    F_star = prob.value(star)
    ly = np.mean([run_apcg(prob, sch, p, 200, seed=s, theta_star=star, F_star=F_star).lyapunov
                  for s in range(60)], axis=0)
    ly = ly / ly[0]
    assert np.all(ly[1:] <= ly[:-1] * 1.05)
    assert ly[-1] < 0.5


def test_convex_lyapunov_on_singular_problem():
    c = np.array([1.0, -1.0, 0.5, -0.5])
    prob = QuadraticComposite(PATH4, c, force_convex=True)
    p = np.full(4, 0.25)
    S = sampling_constant(prob.M, prob.R, p)
    sch = make_schedule_cvx(S, p_R_of(p, prob.R))
    star = prob.minimizer()
    F_star = prob.value(star)
    # horizon kept short: past ~1e-3 of the start the seed average is noise-dominated
    ly = np.mean([run_apcg(prob, sch, p, 60, seed=s, theta_star=star, F_star=F_star).lyapunov
                  for s in range(60)], axis=0)
    ly = ly / ly[0]
    assert np.all(ly[1:] <= ly[:-1] * 1.05)


@pytest.mark.parametrize("seed", range(5))
def test_weight_tracker_reconstructs_iterate(seed):
    Q, c = random_pd(seed)
    prob = QuadraticComposite(Q, c, psi_weights=[1.0, 2.0, 0.5, 1.0], psi_targets=[1, -1, 0, 2])
    p = np.full(4, 0.25)
    sch = make_schedule_cvx(sampling_constant(prob.M, prob.R, p), p_R_of(p, prob.R))
    tr = run_apcg(prob, sch, p, 120, seed=seed, track_weights=True)
    for i in range(4):
        w = tr.tracker.weights[i]
        assert np.all(w >= -1e-12)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(tr.tracker.reconstruct(i), tr.x[i], atol=1e-9)


def test_strongly_convex_gap_decays_linearly():
    Q, c = random_pd(9)
    prob = QuadraticComposite(Q, c)
    p = np.full(4, 0.25)
    sch = make_schedule_sc(prob.sigma_A, prob.M, p, prob.R)
    F_star = prob.value(prob.minimizer())
    T = int(20 / sch.rho)
    gaps = np.mean([run_apcg(prob, sch, p, T, seed=s).F - F_star for s in range(20)], axis=0)
    slope = np.polyfit(np.arange(T + 1), np.log(gaps), 1)[0]
    assert slope <= -sch.rho


def test_run_rejects_empty_horizon():
    prob = QuadraticComposite([[1.0]])
    with pytest.raises(ValueError):
        run_apcg(prob, make_schedule_cvx(1.0, 1.0), [1.0], 0, seed=0)
