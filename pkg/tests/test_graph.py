import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adfslab.graph import (CommGraph, DegenerateSpectrumError, GraphError, augment,
                           build_topology, check_gap_bound, effective_resistances,
                           lambda_min_plus, load_graph, save_graph, single_node,
                           spectral_quantities)


@st.composite
def small_augmented(draw, max_n=7, max_m=5):
    kind = draw(st.sampled_from(["complete", "ring", "path", "grid2d"]))
    n = draw(st.sampled_from([4, 9])) if kind == "grid2d" else draw(st.integers(2, max_n))
    m = draw(st.integers(1, max_m))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    g = build_topology(kind, n, mu2_default=float(rng.uniform(0.2, 2.0)))
    L = rng.uniform(0.1, 10.0, size=(n, m))
    sigma = rng.uniform(0.1, 10.0, size=n)
    return augment(g, L, sigma)


def test_complete_three():
    g = build_topology("complete", 3, 0.5)
    assert [e[:2] for e in g.edges] == [(0, 1), (0, 2), (1, 2)]
    assert g.E == 3


def test_grid_two_by_two():
    g = build_topology("grid2d", 4)
    assert g.E == 4
    assert sorted(e[:2] for e in g.edges) == [(0, 1), (0, 2), (1, 3), (2, 3)]


def test_ring_five():
    g = build_topology("ring", 5)
    assert g.E == 5
    assert np.all(g.degree() == 2)


def test_grid_with_explicit_shape():
    g = build_topology("grid2d", 6, shape=(2, 3))
    assert g.E == 7


@pytest.mark.parametrize("kwargs", [
    dict(kind="complete", n=1),
    dict(kind="grid2d", n=5),
    dict(kind="custom", n=4, custom_edges=[(0, 1), (2, 3)]),
    dict(kind="custom", n=3, custom_edges=[(0, 0), (1, 2)]),
    dict(kind="custom", n=3, custom_edges=[(0, 1), (1, 0), (1, 2)]),
    dict(kind="custom", n=3, custom_edges=[(0, 1), (1, 5)]),
    dict(kind="hypercube", n=4),
])
def test_topology_rejections(kwargs):
    with pytest.raises(GraphError):
        build_topology(**kwargs)


def test_custom_edges_are_canonicalized():
    g = build_topology("custom", 3, custom_edges=[(2, 1), (1, 0, 0.25)])
    assert g.edges == ((1, 2, 0.5), (0, 1, 0.25))


def test_augment_sizes():
    aug = augment(build_topology("complete", 3), np.ones((3, 2)), 1.0)
    assert aug.n_nodes == 9 and aug.n_edges == 9
    A = aug.incidence()
    assert A.shape == (9, 9)


def test_augment_single_machine_star():
    aug = augment(single_node(), np.ones((1, 4)), 1.0)
    assert aug.E == 0 and aug.n_nodes == 5 and aug.n_edges == 4
    assert set(aug.col_k.tolist()) == {0}


def test_default_virtual_weights_on_k3():
    # lmin(L) = 1.5, kappa_i = 1 + 2 = 3, so mu^2 = 1.5 * 1 / (1 * 3)
    aug = augment(build_topology("complete", 3, 0.5), np.ones((3, 2)), 1.0)
    np.testing.assert_allclose(aug.virtual_mu2, 0.5, rtol=1e-14)


@pytest.mark.parametrize("L,sigma", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
def test_augment_rejects_nonpositive(L, sigma):
    with pytest.raises(GraphError):
        augment(build_topology("path", 2), np.full((2, 2), L), sigma)


def test_default_rule_rejects_nonsmooth():
    with pytest.raises(GraphError):
        augment(build_topology("path", 2), np.full((2, 1), np.inf), 1.0)


def test_nonsmooth_rule_weights():
    aug = augment(build_topology("complete", 3, 0.5), np.full((3, 4), np.inf), 1.0, rule="nonsmooth")
    np.testing.assert_allclose(aug.virtual_mu2, 1.5 / 5)
    assert np.all(aug.sigma_inv()[3:] == 0)


def test_explicit_rule_requires_weights():
    with pytest.raises(GraphError):
        augment(build_topology("path", 2), np.ones((2, 1)), 1.0, rule="explicit")


@given(small_augmented())
def test_incidence_columns(aug):
    A = aug.incidence()
    mu = np.sqrt(aug.col_mu2)
    for c in range(aug.n_edges):
        col = A[:, c]
        assert col[aug.col_k[c]] == mu[c] and col[aug.col_l[c]] == -mu[c]
        assert np.count_nonzero(col) == 2
    np.testing.assert_allclose(A.sum(axis=0), 0.0, atol=1e-15)


@given(small_augmented())
def test_spectral_invariants(aug):
    sp = spectral_quantities(aug)
    np.testing.assert_allclose(sp.R_virtual, 1.0, atol=1e-10)
    assert np.all(sp.R > 0) and np.all(sp.R <= 1 + 1e-10)
    assert sp.sigma_A > 0
    assert 0 < sp.gamma <= 1 + 1e-12
    assert abs(sp.sigma_A - sp.sigma_A_nodeside) <= 1e-10 * max(1.0, sp.sigma_A)


@given(small_augmented())
def test_gap_bound_holds_on_random_graphs(aug):
    rep = check_gap_bound(aug)
    assert rep.holds, (rep.lhs, rep.rhs)


# Oracle (independent pseudo-inverse and SVD on a hand-built matrix): K3 with
# mu^2 = 1/2 on communication edges, m = 1, L = sigma = 1 has virtual weights 3/4,
# R = 2/3 on communication edges, sigma_A = 3/2 - 3 sqrt(2)/4 and
# lambda_max(A' Sigma^-2 A) = 3/2 + 3 sqrt(2)/4.
K3_SIGMA_A = 1.5 - 0.75 * math.sqrt(2)
K3_LMAX = 1.5 + 0.75 * math.sqrt(2)


def k3_aug(m=1):
    return augment(build_topology("complete", 3, 0.5), np.ones((3, m)), 1.0)


def test_k3_spectral_values():
    sp = spectral_quantities(k3_aug())
    np.testing.assert_allclose(sp.R_comm, 2.0 / 3.0, rtol=1e-12)
    np.testing.assert_allclose(sp.R_virtual, 1.0, rtol=1e-12)
    assert sp.lambda_min_L == pytest.approx(1.5, rel=1e-12)
    assert sp.gamma == pytest.approx(1.0, rel=1e-12)
    assert sp.gamma_tilde == pytest.approx(4.5, rel=1e-12)
    assert sp.sigma_A == pytest.approx(K3_SIGMA_A, rel=1e-12)
    assert sp.lambda_max_A2 == pytest.approx(K3_LMAX, rel=1e-12)


def test_tree_edges_have_unit_resistance():
    aug = augment(build_topology("path", 5), np.ones((5, 2)), 1.0)
    np.testing.assert_allclose(spectral_quantities(aug).R, 1.0, atol=1e-12)


def test_effective_resistance_matches_pinv():
    g = build_topology("grid2d", 9, mu2_default=0.7)
    A = g.incidence()
    np.testing.assert_allclose(effective_resistances(A), np.diag(np.linalg.pinv(A) @ A), atol=1e-12)


@pytest.mark.parametrize("n", range(3, 9))
def test_complete_graph_gamma_tilde(n):
    sp = spectral_quantities(augment(build_topology("complete", n), np.ones((n, 1)), 1.0))
    assert sp.gamma_tilde == pytest.approx(2 * sp.gamma * n**2 / (n - 1) ** 2, rel=1e-10)
    assert sp.gamma_tilde >= sp.gamma


def test_gap_bound_examples():
    assert check_gap_bound(k3_aug(2)).holds
    assert check_gap_bound(augment(single_node(), np.ones((1, 2)), 1.0)).holds


def test_gap_bound_explicit_rule_matches_default():
    aug = k3_aug(2)
    explicit = augment(aug.base, aug.L, aug.sigma, rule="explicit", virtual_mu2=aug.virtual_mu2)
    assert check_gap_bound(aug) == check_gap_bound(explicit)


def test_graph_file_roundtrip(tmp_path):
    g = build_topology("grid2d", 9, mu2_default=0.3)
    path = tmp_path / "g.txt"
    save_graph(g, path)
    assert load_graph(path) == g
    assert path.read_text().splitlines()[0] == "9 12"


@pytest.mark.parametrize("text", ["", "3 2\n0 1 0.5\n", "3 1\n0 x 0.5\n", "2 1\n0 1 -1\n"])
def test_graph_file_rejections(text):
    with pytest.raises(GraphError):
        CommGraph.from_text(text)


def test_degenerate_spectrum():
    with pytest.raises(DegenerateSpectrumError):
        lambda_min_plus(np.zeros((3, 3)))
