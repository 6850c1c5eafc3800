"""Communication topologies, the augmented (star) graph and its spectra.

Node numbering of an augmented graph: center nodes come first (``0..n-1``),
then virtual node ``(i, j)`` has index ``n + i*m + j``. Edge (column)
numbering: the ``E`` communication edges first, in the order of
``CommGraph.edges``, then virtual edge ``(i, j)`` at column ``E + i*m + j``.
Column ``e`` of the incidence matrix is ``mu_e * (e_k - e_l)``; virtual edges
are oriented center -> virtual node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

# Eigenvalues below EIG_RTOL * lambda_max are treated as zero.
EIG_RTOL = 1e-10


class GraphError(ValueError):
    pass


class DegenerateSpectrumError(GraphError):
    pass


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CommGraph:
    """Undirected weighted communication graph with canonical ``k < l`` edges."""

    n: int
    edges: tuple  # ((k, l, mu2), ...)
    heads: np.ndarray = field(repr=False, compare=False)
    tails: np.ndarray = field(repr=False, compare=False)
    mu2: np.ndarray = field(repr=False, compare=False)
    adjacency: tuple = field(repr=False, compare=False)

    @classmethod
    def from_edges(cls, n, edges, mu2_default=0.5, check_connected=True):
        n = int(n)
        if n < 1:
            raise GraphError("a graph needs at least one node")
        canon = {}
        for e in edges:
            if len(e) == 2:
                k, l = e
                w = mu2_default
            else:
                k, l, w = e
            k, l, w = int(k), int(l), float(w)
            if k == l:
                raise GraphError(f"self-loop on node {k}")
            if not (0 <= k < n and 0 <= l < n):
                raise GraphError(f"edge ({k}, {l}) references a node outside 0..{n - 1}")
            if not w > 0 or not math.isfinite(w):
                raise GraphError(f"edge ({k}, {l}) has non-positive weight {w}")
            key = (min(k, l), max(k, l))
            if key in canon:
                raise GraphError(f"duplicate edge {key}")
            canon[key] = w
        edge_list = tuple((k, l, w) for (k, l), w in canon.items())
        heads = np.array([e[0] for e in edge_list], dtype=np.int64)
        tails = np.array([e[1] for e in edge_list], dtype=np.int64)
        mu2 = np.array([e[2] for e in edge_list], dtype=float)
        adj = [[] for _ in range(n)]
        for k, l, _ in edge_list:
            adj[k].append(l)
            adj[l].append(k)
        g = cls(n, edge_list, _readonly(heads), _readonly(tails), _readonly(mu2),
                tuple(tuple(sorted(a)) for a in adj))
        if check_connected and not g.is_connected():
            raise GraphError("communication graph is not connected")
        return g

    @property
    def E(self):
        return len(self.edges)

    def degree(self):
        return np.array([len(a) for a in self.adjacency])

    def is_connected(self):
        if self.n == 1:
            return True
        if self.E == 0:
            return False
        adj = coo_matrix((np.ones(self.E), (self.heads, self.tails)), shape=(self.n, self.n))
        ncomp, _ = connected_components(adj, directed=False)
        return ncomp == 1

    def incidence(self):
        """Dense ``n x E`` matrix with column ``mu_kl (e_k - e_l)``."""
        A = np.zeros((self.n, self.E))
        mu = np.sqrt(self.mu2)
        cols = np.arange(self.E)
        A[self.heads, cols] = mu
        A[self.tails, cols] = -mu
        return A

    def laplacian(self):
        A = self.incidence()
        return A @ A.T

    def to_text(self):
        lines = [f"{self.n} {self.E}"]
        lines += [f"{k} {l} {w!r}" for k, l, w in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows:
            raise GraphError("empty graph file")
        try:
            n, E = int(rows[0][0]), int(rows[0][1])
            edges = [(int(r[0]), int(r[1]), float(r[2])) for r in rows[1:]]
        except (IndexError, ValueError) as exc:
            raise GraphError(f"malformed graph file: {exc}") from None
        if len(edges) != E:
            raise GraphError(f"header announces {E} edges, file has {len(edges)}")
        return cls.from_edges(n, edges)


def save_graph(graph, path):
    with open(path, "w") as fh:
        fh.write(graph.to_text())


def load_graph(path):
    with open(path) as fh:
        return CommGraph.from_text(fh.read())


def build_topology(kind, n, mu2_default=0.5, custom_edges=None, shape=None):
    """Build a canonical communication graph.

    ``kind`` is one of ``complete``, ``ring``, ``grid2d``, ``path`` or
    ``custom``. For ``grid2d`` either ``n`` is a perfect square or ``shape``
    gives ``(rows, cols)`` explicitly.
    """
    n = int(n)
    if n < 2:
        raise GraphError("topologies need n >= 2 (use augment on a 1-node graph for a single machine)")
    if kind == "complete":
        edges = [(k, l) for k in range(n) for l in range(k + 1, n)]
    elif kind == "ring":
        edges = [(k, k + 1) for k in range(n - 1)]
        if n > 2:
            edges.append((0, n - 1))
    elif kind == "path":
        edges = [(k, k + 1) for k in range(n - 1)]
    elif kind == "grid2d":
        if shape is None:
            side = math.isqrt(n)
            if side * side != n:
                raise GraphError(f"grid2d with n={n} needs an explicit (rows, cols) shape")
            rows, cols = side, side
        else:
            rows, cols = map(int, shape)
            if rows * cols != n:
                raise GraphError(f"shape {shape} does not hold {n} nodes")
        edges = []
        for r in range(rows):
            for c in range(cols):
                k = r * cols + c
                if c + 1 < cols:
                    edges.append((k, k + 1))
                if r + 1 < rows:
                    edges.append((k, k + cols))
    elif kind == "custom":
        if custom_edges is None:
            raise GraphError("custom topology needs an edge list")
        edges = list(custom_edges)
    else:
        raise GraphError(f"unknown topology {kind!r}")
    return CommGraph.from_edges(n, edges, mu2_default=mu2_default)


def single_node():
    """The degenerate one-machine communication graph."""
    return CommGraph.from_edges(1, [])


def _pos_eigs(eigs):
    lam_max = eigs.max()
    if lam_max <= 0:
        return eigs[:0]
    return eigs[eigs > EIG_RTOL * lam_max]


def lambda_min_plus(M):
    """Smallest non-zero eigenvalue of a symmetric PSD matrix."""
    eigs = np.linalg.eigvalsh(M)
    pos = _pos_eigs(eigs)
    if pos.size == 0:
        raise DegenerateSpectrumError("matrix has no non-zero eigenvalue")
    return float(pos.min())


def laplacian_lambda_min(graph):
    if graph.E == 0:
        return float("nan")
    return lambda_min_plus(graph.laplacian())


@dataclass(frozen=True)
class AugmentedGraph:
    """Communication graph with every node replaced by a star of ``m`` virtual nodes."""

    base: CommGraph
    m: int
    virtual_mu2: np.ndarray = field(repr=False)  # (n, m)
    sigma: np.ndarray = field(repr=False)  # (n,) regularization at centers
    L: np.ndarray = field(repr=False)  # (n, m) smoothness at virtual nodes
    Sigma: np.ndarray = field(repr=False)  # (n(1+m),) diagonal
    col_k: np.ndarray = field(repr=False)
    col_l: np.ndarray = field(repr=False)
    col_mu2: np.ndarray = field(repr=False)
    rule: str = "explicit"

    @property
    def n(self):
        return self.base.n

    @property
    def E(self):
        return self.base.E

    @property
    def n_nodes(self):
        return self.n * (1 + self.m)

    @property
    def n_edges(self):
        return self.E + self.n * self.m

    def virtual_node(self, i, j):
        return self.n + i * self.m + j

    def virtual_col(self, i, j):
        return self.E + i * self.m + j

    def is_virtual(self, col):
        return col >= self.E

    def virtual_index(self, col):
        """``(i, j)`` of a virtual edge column."""
        r = col - self.E
        return divmod(r, self.m)

    def column_index(self, edge):
        """Column of a communication edge ``(k, l)`` or virtual edge ``('v', i, j)``."""
        if edge[0] == "v":
            return self.virtual_col(edge[1], edge[2])
        k, l = sorted(edge[:2])
        for c, (a, b, _) in enumerate(self.base.edges):
            if (a, b) == (k, l):
                return c
        raise KeyError(edge)

    def incidence(self):
        """Dense ``n(1+m) x (E+nm)`` incidence-style matrix."""
        A = np.zeros((self.n_nodes, self.n_edges))
        mu = np.sqrt(self.col_mu2)
        cols = np.arange(self.n_edges)
        A[self.col_k, cols] = mu
        A[self.col_l, cols] = -mu
        return A

    def sigma_inv(self):
        with np.errstate(divide="ignore"):
            return np.where(np.isinf(self.Sigma), 0.0, 1.0 / self.Sigma)

    def kappa(self):
        return 1.0 + self.L.sum(axis=1) / self.sigma

    def edge_smoothness(self):
        """Directional smoothness ``mu^2 (1/Sigma_k + 1/Sigma_l)`` of the dual per edge."""
        si = self.sigma_inv()
        return self.col_mu2 * (si[self.col_k] + si[self.col_l])


def augment(graph, L, sigma, rule="default", virtual_mu2=None):
    """Build the augmented graph.

    Parameters
    ----------
    graph : CommGraph
    L : array (n, m)
        Per-sample smoothness. ``np.inf`` entries denote non-smooth samples.
    sigma : float or array (n,)
        Per-node regularization.
    rule : {"default", "nonsmooth", "explicit"}
        ``default`` sets ``mu_ij^2 = lmin(L) L_ij / (sigma_max kappa_i)``;
        ``nonsmooth`` sets ``mu_ij^2 = lmin(L) / (1 + m)``; ``explicit`` takes
        ``virtual_mu2``.
    """
    n = graph.n
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = L.reshape(n, -1)
    if L.shape[0] != n:
        raise GraphError(f"L has {L.shape[0]} rows for {n} nodes")
    m = L.shape[1]
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,)).copy()
    if np.any(~(L > 0)):
        raise GraphError("smoothness constants must be positive")
    if np.any(~(sigma > 0)) or np.any(~np.isfinite(sigma)):
        raise GraphError("regularization must be positive and finite")

    lam = laplacian_lambda_min(graph)
    if n == 1:
        # no communication Laplacian; the rate does not depend on this scale
        lam = float(sigma.max())

    if rule == "default":
        if np.any(np.isinf(L)):
            raise GraphError("default rule needs finite smoothness; use rule='nonsmooth'")
        kappa = 1.0 + L.sum(axis=1) / sigma
        vmu2 = lam * L / (sigma.max() * kappa[:, None])
    elif rule == "nonsmooth":
        vmu2 = np.full((n, m), lam / (1.0 + m))
    elif rule == "explicit":
        if virtual_mu2 is None:
            raise GraphError("rule='explicit' needs virtual_mu2")
        vmu2 = np.broadcast_to(np.asarray(virtual_mu2, dtype=float), (n, m)).copy()
        if np.any(~(vmu2 > 0)):
            raise GraphError("virtual edge weights must be positive")
    else:
        raise GraphError(f"unknown rule {rule!r}")

    Sigma = np.concatenate([sigma, L.ravel()])
    centers = np.repeat(np.arange(n), m)
    virt = n + np.arange(n * m)
    col_k = np.concatenate([graph.heads, centers]).astype(np.int64)
    col_l = np.concatenate([graph.tails, virt]).astype(np.int64)
    col_mu2 = np.concatenate([graph.mu2, vmu2.ravel()])
    return AugmentedGraph(graph, m, _readonly(vmu2), _readonly(sigma), _readonly(L),
                          _readonly(Sigma), _readonly(col_k), _readonly(col_l),
                          _readonly(col_mu2), rule)


@dataclass(frozen=True)
class SpectralData:
    sigma_A: float
    sigma_A_nodeside: float
    lambda_max_A2: float
    R: np.ndarray = field(repr=False)
    gamma: float
    gamma_tilde: float
    lambda_min_L: float
    lambda_min_AtA: float
    n_comm_edges: int

    @property
    def R_comm(self):
        return self.R[: self.n_comm_edges]

    @property
    def R_virtual(self):
        return self.R[self.n_comm_edges:]


def effective_resistances(A):
    """Diagonal of the projector ``A^+ A`` (one entry per column of ``A``)."""
    # A^+ A = A^T (A A^T)^+ A
    G = A @ A.T
    w, U = np.linalg.eigh(G)
    keep = w > EIG_RTOL * w.max()
    B = U[:, keep].T @ A  # rows: eigen-directions
    return np.sum(B * B / w[keep, None], axis=0)


def spectral_quantities(aug):
    """All spectral constants entering rates and step sizes (dense eigensolves)."""
    A = aug.incidence()
    si = aug.sigma_inv()

    # edge side: A^T Sigma^-1 A
    edge_side = A.T @ (si[:, None] * A)
    eigs_edge = np.linalg.eigvalsh(edge_side)
    pos = _pos_eigs(eigs_edge)
    if pos.size == 0:
        raise DegenerateSpectrumError("A^T Sigma^-1 A has no positive eigenvalue")
    sigma_A = float(pos.min())
    if sigma_A < 1e-12 * float(pos.max()):
        raise DegenerateSpectrumError(f"sigma_A={sigma_A:g} is numerically zero")

    # node side: Sigma^-1/2 A A^T Sigma^-1/2, same non-zero spectrum
    sh = np.sqrt(si)
    node_side = sh[:, None] * (A @ A.T) * sh[None, :]
    sigma_A_node = lambda_min_plus(node_side)

    # same non-zero spectra as A^T Sigma^-2 A and A^T A, on the node side
    lam_max_A2 = float(np.linalg.eigvalsh(si[:, None] * (A @ A.T) * si[None, :]).max())
    G = A @ A.T
    w, U = np.linalg.eigh(G)
    keep = w > EIG_RTOL * w.max()
    lam_min_AtA = float(w[keep].min())
    B = U[:, keep].T @ A
    R = np.sum(B * B / w[keep, None], axis=0)

    g = aug.base
    if g.E > 0:
        lam_L = np.linalg.eigvalsh(g.laplacian())
        lmax = float(lam_L.max())
        lmin = float(_pos_eigs(lam_L).min())
        gamma = lmin / lmax
        Rc = R[: g.E]
        gamma_tilde = float(np.min(lmin * g.n**2 / (g.mu2 * Rc * g.E**2)))
    else:
        lmin, gamma, gamma_tilde = float("nan"), 1.0, float("inf")
    return SpectralData(sigma_A, sigma_A_node, lam_max_A2, _readonly(R), gamma,
                        gamma_tilde, lmin, lam_min_AtA, g.E)


@dataclass(frozen=True)
class GapBoundReport:
    lhs: float
    rhs: float
    holds: bool


def check_gap_bound(aug, spectra=None):
    """Compare ``lmin+(Sigma^-1/2 A A^T Sigma^-1/2)`` with ``lmin+(L)/(2 sigma kappa)``."""
    if spectra is None:
        spectra = spectral_quantities(aug)
    lam = laplacian_lambda_min(aug.base) if aug.n > 1 else float(aug.sigma.max())
    kappa = float(aug.kappa().max())
    rhs = lam / (2.0 * float(aug.sigma.max()) * kappa)
    lhs = spectra.sigma_A_nodeside
    # relative slack for round-off only
    return GapBoundReport(lhs, rhs, bool(lhs >= rhs * (1 - 1e-10)))
