"""Finite-sum objectives, single-sample proximal operators and data ingestion.

The objective is ``F(theta) = sum_ij f_ij(theta) + sum_i sigma_i/2 ||theta||^2``
with linear-model losses ``f_ij(theta) = phi_ij(X_ij . theta)``. Losses are not
normalized by ``m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

LOSSES = ("quadratic", "logistic")


class ProxError(ValueError):
    pass


class StepTooLargeError(ProxError):
    """``eta_tilde / L >= 1``: the conjugate prox cannot go through the primal one."""


# --------------------------------------------------------------------------
# scalar losses phi(u; t) where t is the label (logistic) or target (quadratic)


def phi(loss, u, t):
    if loss == "quadratic":
        return 0.5 * (u - t) ** 2
    return np.logaddexp(0.0, -t * u)


def dphi(loss, u, t):
    if loss == "quadratic":
        return u - t
    return -t * expit(-t * u)


def d2phi(loss, u, t):
    if loss == "quadratic":
        return np.ones_like(np.asarray(u, dtype=float))
    s = expit(t * u)
    return s * (1.0 - s)


def _sig(s):
    # 1 / (1 + exp(-s)), scalar and overflow-safe
    if s >= 0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


def dphi_scalar(loss, u, t):
    if loss == "quadratic":
        return u - t
    return -t * _sig(-t * u)


def phi_conjugate(loss, s, t):
    """Convex conjugate of ``u -> phi(u; t)`` at ``s`` (``inf`` outside the domain)."""
    if loss == "quadratic":
        return 0.5 * s * s + s * t
    r = -s * t
    if r < -1e-12 or r > 1 + 1e-12:
        return math.inf
    r = min(max(r, 0.0), 1.0)
    out = 0.0
    for q in (r, 1.0 - r):
        if q > 0:
            out += q * math.log(q)
    return out


def prox_loss_1d(loss, c, eta, x, warm=None, label=1.0, tol=1e-12, max_newton=20):
    """Solve ``min_v (v - x)^2 / (2 eta) + phi(c v; label)``.

    Quadratic losses use the closed form. Logistic losses run safeguarded
    Newton from ``warm`` (default ``x``) inside the bracket
    ``[x - eta|c|, x + eta|c|]``, which contains the root because
    ``|phi'| <= 1``; steps leaving the bracket, or a Newton budget exhausted
    before ``|grad| <= tol``, fall back to bisection.
    """
    if not (math.isfinite(c) and math.isfinite(eta) and math.isfinite(x)):
        raise ProxError(f"non-finite prox input c={c}, eta={eta}, x={x}")
    if eta < 0:
        raise ProxError(f"negative step {eta}")
    if eta == 0.0 or c == 0.0:
        return float(x)
    if loss == "quadratic":
        return (x + eta * c * label) / (1.0 + eta * c * c)
    if loss != "logistic":
        raise ProxError(f"unknown loss {loss!r}")

    inv_eta = 1.0 / eta
    lo = x - eta * abs(c)
    hi = x + eta * abs(c)
    v = x if warm is None or not math.isfinite(warm) else min(max(warm, lo), hi)
    it = 0
    while True:
        s = _sig(label * c * v)
        g = (v - x) * inv_eta - c * label * (1.0 - s)
        if abs(g) <= tol:
            return v
        if g > 0:
            hi = v
        else:
            lo = v
        if hi - lo <= 4e-16 * max(1.0, abs(v)):
            return v
        if it < max_newton:
            h = inv_eta + c * c * s * (1.0 - s)
            v_new = v - g / h
            if not (lo < v_new < hi):
                v_new = 0.5 * (lo + hi)
        else:
            v_new = 0.5 * (lo + hi)
        if v_new == v:
            return v
        v = v_new
        it += 1
        if it > max_newton + 200:
            return v


def prox_linear(loss, X, label, step, w, warm=None, norm=None):
    """``prox_{step f}(w)`` for ``f(theta) = phi(X . theta)``; returns ``(theta, u)``.

    ``u`` is the coordinate of the result along ``X / ||X||`` (the value that is
    worth caching as a warm start).
    """
    c = float(np.sqrt(X @ X)) if norm is None else norm
    xh = X / c
    s = float(xh @ w)
    u = prox_loss_1d(loss, c, step, s, warm=warm, label=label)
    return w + (u - s) * xh, u


def prox_conjugate_tilde(eta_t, L, z, prox_f):
    """Prox of ``f~*(v) = f*(v) - ||v||^2 / (2L)`` through the primal prox of ``f``.

    Uses ``(1 - eta_t/L) prox_{eta_t f~*}(z) = z - eta_t prox_{(1/eta_t - 1/L) f}(z / eta_t)``.

    Parameters
    ----------
    eta_t : float
        Step on the conjugate; must satisfy ``0 <= eta_t / L < 1``.
    L : float
        Smoothness of ``f``.
    z : float or ndarray
    prox_f : callable ``(step, point) -> point``

    Returns
    -------
    (result, consumed_mass) with ``consumed_mass = z - result``.
    """
    if eta_t < 0:
        raise ProxError(f"negative step {eta_t}")
    ratio = eta_t / L
    if ratio >= 1.0:
        raise StepTooLargeError(f"eta_tilde/L = {ratio:.6g} >= 1; clamp rho")
    z = np.asarray(z, dtype=float)
    if eta_t == 0.0:
        return z.copy(), np.zeros_like(z)
    inner = prox_f(1.0 / eta_t - 1.0 / L, z / eta_t)
    out = (z - eta_t * np.asarray(inner)) / (1.0 - ratio)
    return out, z - out


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothnessSummary:
    kappa: np.ndarray
    kappa_s: float
    r_kappa: float
    S_comp: float

    @classmethod
    def from_constants(cls, L, sigma):
        L = np.asarray(L, dtype=float)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (L.shape[0],))
        kappa = 1.0 + L.sum(axis=1) / sigma
        kappa_s = float(kappa.max())
        S_comp = float(np.sqrt(1.0 + L / sigma[:, None]).sum() / L.shape[0])
        return cls(kappa, kappa_s, float(kappa.min() / kappa_s), S_comp)


@dataclass(frozen=True)
class ProblemSpec:
    """Per-node, per-sample linear-model losses with l2 regularization.

    ``X`` has shape ``(n, m, d)``, ``targets`` shape ``(n, m)`` (labels in
    {-1, +1} for logistic, regression targets for quadratic).
    """

    loss: str
    X: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 3:
            raise ValueError("X must have shape (n, m, d)")
        t = np.asarray(self.targets, dtype=float).reshape(X.shape[:2])
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (X.shape[0],)).copy()
        if np.any(~(sigma > 0)):
            raise ValueError("sigma_i must be positive")
        if self.loss == "logistic" and not np.all(np.isin(t, (-1.0, 1.0))):
            raise ValueError("logistic labels must be -1 or +1")
        norms = np.sqrt(np.einsum("ijk,ijk->ij", X, X))
        if np.any(norms == 0):
            raise ValueError("zero feature vector: smoothness constant would be 0")
        for name, val in (("X", X), ("targets", t), ("sigma", sigma), ("norms", norms)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    @property
    def d(self):
        return self.X.shape[2]

    @property
    def L(self):
        sq = self.norms**2
        return sq / 4.0 if self.loss == "logistic" else sq

    def summary(self):
        return SmoothnessSummary.from_constants(self.L, self.sigma)

    def value(self, theta):
        return primal_value(theta, self)

    def gradient(self, theta):
        u = self.X @ theta
        g = np.einsum("ij,ijk->k", dphi(self.loss, u, self.targets), self.X)
        return g + self.sigma.sum() * theta

    def sample_prox(self, i, j, step, w, warm=None):
        return prox_linear(self.loss, self.X[i, j], self.targets[i, j], step, w,
                           warm=warm, norm=self.norms[i, j])

    def sample_grad(self, i, j, theta):
        x = self.X[i, j]
        return dphi(self.loss, x @ theta, self.targets[i, j]) * x

    def conjugate(self, i, j, u, rtol=1e-8):
        """``f*_ij(u)``; finite only for ``u`` parallel to ``X_ij``."""
        x = self.X[i, j]
        s = float(x @ u) / self.norms[i, j] ** 2
        if np.linalg.norm(u - s * x) > rtol * max(1.0, np.linalg.norm(u)):
            return math.inf
        return phi_conjugate(self.loss, s, self.targets[i, j])

    def with_sigma(self, sigma):
        return ProblemSpec(self.loss, self.X, self.targets, sigma)


def primal_value(theta, p):
    theta = np.asarray(theta, dtype=float)
    u = p.X @ theta
    return float(phi(p.loss, u, p.targets).sum() + 0.5 * p.sigma.sum() * (theta @ theta))


def dual_value_nodes(p, aug, v):
    """``sum_ij f*_ij(v^(ij)) + sum_i ||v^(i)||^2 / (2 sigma_i)`` for node-space ``v``.

    Equals the dual objective (to be minimized); its minimum is ``-min F``.
    """
    out = 0.5 * float(np.sum(v[: p.n] ** 2 / p.sigma[:, None]))
    for i in range(p.n):
        for j in range(p.m):
            out += p.conjugate(i, j, v[aug.virtual_node(i, j)])
    return out


class ReferenceSolverError(RuntimeError):
    pass


def solve_reference(p, tol=1e-10, max_iter=1_000_000):
    """Accelerated full-gradient descent until ``||grad F|| <= tol * min_i sigma_i``.

    Deterministic; used as a test oracle only.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    Xf = p.X.reshape(-1, p.d)
    curv = 0.25 if p.loss == "logistic" else 1.0
    smooth = curv * float(np.linalg.eigvalsh(Xf.T @ Xf).max()) + p.sigma.sum()
    strong = float(p.sigma.sum())
    q = math.sqrt(strong / smooth)
    beta = (1.0 - q) / (1.0 + q)
    target = tol * float(p.sigma.min())
    theta = np.zeros(p.d)
    prev = theta
    for k in range(max_iter):
        yk = theta + beta * (theta - prev)
        g = p.gradient(yk)
        prev = theta
        theta = yk - g / smooth
        if k % 10 == 0 and np.linalg.norm(p.gradient(theta)) <= target:
            return theta
    raise ReferenceSolverError(f"no convergence to {target:g} in {max_iter} iterations")


# --------------------------------------------------------------------------
# data


class LibSVMFormatError(ValueError):
    pass


def load_libsvm(path, d):
    """Parse a LibSVM text file into a dense ``(N, d)`` matrix and labels.

    Indices are 1-based; an index above ``d`` is an error, as is a malformed
    line (reported with its 1-based line number) or an empty file.
    """
    rows, labels = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise LibSVMFormatError(f"line {lineno}: bad label {parts[0]!r}") from None
            feats = {}
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    k = int(idx)
                    x = float(val)
                except ValueError:
                    raise LibSVMFormatError(f"line {lineno}: bad feature {tok!r}") from None
                if not sep:
                    raise LibSVMFormatError(f"line {lineno}: bad feature {tok!r}")
                if k < 1 or k > d:
                    raise LibSVMFormatError(f"line {lineno}: index {k} out of range 1..{d}")
                feats[k - 1] = x
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise LibSVMFormatError(f"{path}: no samples")
    X = np.zeros((len(rows), d))
    for r, feats in enumerate(rows):
        for k, x in feats.items():
            X[r, k] = x
    return X, np.array(labels)


def partition_dataset(X, y, n, m, loss="logistic", sigma=1.0, seed=0, overlap=False):
    """Split a dataset into ``n`` local datasets of ``m`` samples.

    Default: contiguous disjoint blocks of a seeded shuffle. ``overlap=True``
    draws ``m`` samples at random for every node independently.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    N = X.shape[0]
    rng = np.random.default_rng(seed)
    if overlap:
        idx = np.stack([rng.choice(N, size=m, replace=False) for _ in range(n)])
    else:
        if n * m > N:
            raise ValueError(f"need {n * m} samples for disjoint blocks, dataset has {N}")
        idx = rng.permutation(N)[: n * m].reshape(n, m)
    t = y[idx]
    if loss == "logistic":
        t = np.where(t > 0, 1.0, -1.0)
    return ProblemSpec(loss, X[idx], t, sigma)


def _scaled_features(rng, n, m, d, target_median):
    X = rng.standard_normal((n, m, d))
    sq = np.einsum("ijk,ijk->ij", X, X)
    return X * math.sqrt(target_median / float(np.median(sq)))


def synth_classification(seed, n, m, d, separability=1.0, flip=0.0, sigma=1.0):
    """Deterministic logistic-regression problem with median ``L_ij`` of 1."""
    if min(n, m, d) <= 0:
        raise ValueError("counts must be positive")
    rng = np.random.default_rng(seed)
    X = _scaled_features(rng, n, m, d, 4.0)
    w = rng.standard_normal(d)
    w *= 2.0 / np.linalg.norm(w)
    prob = expit(separability * (X @ w))
    labels = np.where(rng.random((n, m)) < prob, 1.0, -1.0)
    if flip > 0:
        labels = np.where(rng.random((n, m)) < flip, -labels, labels)
    return ProblemSpec("logistic", X, labels, sigma)


def synth_regression(seed, n, m, d, noise=0.1, sigma=1.0):
    """Deterministic least-squares problem with median ``L_ij`` of 1."""
    if min(n, m, d) <= 0:
        raise ValueError("counts must be positive")
    rng = np.random.default_rng(seed)
    X = _scaled_features(rng, n, m, d, 1.0)
    w = rng.standard_normal(d)
    b = X @ w + noise * rng.standard_normal((n, m))
    return ProblemSpec("quadratic", X, b, sigma)


class AbsoluteLossProblem:
    """Non-smooth toy: ``f_ij(theta) = |X_ij . theta - b_ij|`` with l2 regularization.

    ``f*_ij(s X_ij) = s b_ij`` for ``|s| <= 1`` and ``+inf`` otherwise, so every
    conjugate prox is a clipped scalar.
    """

    loss = "absolute"

    def __init__(self, X, b, sigma):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3:
            raise ValueError("X must have shape (n, m, d)")
        self.X = X
        self.b = np.asarray(b, dtype=float).reshape(X.shape[:2])
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (X.shape[0],)).copy()
        if np.any(~(self.sigma > 0)):
            raise ValueError("sigma_i must be positive")
        self.norms = np.sqrt(np.einsum("ijk,ijk->ij", X, X))
        if np.any(self.norms == 0):
            raise ValueError("zero feature vector")

    n = property(lambda self: self.X.shape[0])
    m = property(lambda self: self.X.shape[1])
    d = property(lambda self: self.X.shape[2])

    @property
    def L(self):
        return np.full((self.n, self.m), np.inf)

    def value(self, theta):
        r = self.X @ theta - self.b
        return float(np.abs(r).sum() + 0.5 * self.sigma.sum() * (theta @ theta))

    def conj_prox_coef(self, i, j, step, z):
        """Coefficient ``s`` of ``prox_{step f*_ij}(z) = s X_ij``."""
        x = self.X[i, j]
        return min(1.0, max(-1.0, (float(x @ z) - step * self.b[i, j]) / self.norms[i, j] ** 2))

    def conj_prox(self, i, j, step, z):
        return self.conj_prox_coef(i, j, step, z) * self.X[i, j]

    def conjugate(self, i, j, u, rtol=1e-8):
        x = self.X[i, j]
        s = float(x @ u) / self.norms[i, j] ** 2
        if np.linalg.norm(u - s * x) > rtol * max(1.0, np.linalg.norm(u)) or abs(s) > 1 + rtol:
            return math.inf
        return s * self.b[i, j]

    def dual_value(self, x_nodes):
        """``sum_ij f*_ij(x^(ij)) + sum_i ||x^(i)||^2 / (2 sigma_i)`` (node ordering of the augmented graph)."""
        n, m = self.n, self.m
        out = 0.5 * float(np.sum(x_nodes[:n] ** 2 / self.sigma[:, None]))
        for i in range(n):
            for j in range(m):
                out += self.conjugate(i, j, x_nodes[n + i * m + j])
        return out

    def solve_exact(self):
        """Exact primal minimizer by enumerating KKT sign patterns.

        Each sample is either on its kink (``X . theta = b``) or on one side of
        it; the strongly convex objective has exactly one consistent pattern.
        Exponential in ``n m``: toy sizes only.
        """
        import itertools

        G = self.X.reshape(-1, self.d)
        b = self.b.ravel()
        N = G.shape[0]
        if N > 12:
            raise ValueError("exact enumeration is limited to 12 samples")
        st = float(self.sigma.sum())
        best = None
        for pattern in itertools.product((-1, 0, 1), repeat=N):
            pat = np.array(pattern)
            K = np.flatnonzero(pat == 0)
            if K.size > self.d:
                continue
            g0 = G[pat != 0].T @ pat[pat != 0]
            # [st I, G_K'; G_K, 0] [theta; nu] = [-g0; b_K]
            k = K.size
            M = np.zeros((self.d + k, self.d + k))
            M[: self.d, : self.d] = st * np.eye(self.d)
            M[: self.d, self.d:] = G[K].T
            M[self.d:, : self.d] = G[K]
            rhs = np.concatenate([-g0, b[K]])
            try:
                sol = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                continue
            theta, nu = sol[: self.d], sol[self.d:]
            r = G @ theta - b
            ok = np.all(np.abs(nu) <= 1 + 1e-12)
            nz = pat != 0
            ok = ok and np.all(np.sign(r[nz]) == pat[nz]) and np.all(np.abs(r[nz]) > 0)
            if ok:
                val = self.value(theta)
                if best is None or val < best[1]:
                    best = (theta, val)
        if best is None:
            raise RuntimeError("no consistent KKT pattern found")
        return best
