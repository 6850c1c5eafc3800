"""Shared edge schedules and the local-synchrony clock.

Every participant of an update waits until all participants are free, then the
update occupies them for its duration: ``tau`` for a communication, 1 for a
local proximal step. Lazy convex-combination bookkeeping costs nothing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def inverse_cdf_draws(p, t, seed):
    """``t`` i.i.d. indices with probabilities ``p``.

    Uniforms come from ``numpy.random.Generator(PCG64(seed)).random(t)``
    (53-bit doubles) and are mapped through the cumulative sum of ``p`` with a
    right-sided search, so zero-probability entries are never returned.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not p.sum() > 0:
        raise ValueError("p must be a nonempty nonnegative vector")
    if t < 0:
        raise ValueError("t must be nonnegative")
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    u = np.random.Generator(np.random.PCG64(seed)).random(int(t))
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, p.size - 1)


@dataclass(frozen=True)
class Schedule:
    seed: int
    events: np.ndarray  # column indices of the augmented graph
    n_comm: int  # columns below this index are communication edges

    @property
    def t(self):
        return len(self.events)

    def is_comm(self, idx):
        return self.events[idx] < self.n_comm


def sample_schedule(plan, t, seed):
    """Draw ``t`` edges from ``plan.p`` (one probability per augmented-graph column)."""
    return Schedule(int(seed), inverse_cdf_draws(plan.p, t, seed), int(plan.n_comm))


@dataclass
class TimingTrace:
    tau: float
    kind: np.ndarray  # 'comm' or 'local'
    k: np.ndarray
    l: np.ndarray  # equals k for local events
    start: np.ndarray
    finish: np.ndarray
    availability: np.ndarray  # per-node time after the last event
    t_max: np.ndarray  # T_max after each prefix

    @property
    def T(self):
        return float(self.t_max[-1]) if len(self.t_max) else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["event_index", "edge_kind", "k", "l", "start", "finish"])
            for e in range(len(self.start)):
                w.writerow([e, self.kind[e], int(self.k[e]), int(self.l[e]),
                            repr(float(self.start[e])), repr(float(self.finish[e]))])


def simulate_events(events, n, tau):
    """Run the availability recursion on a list of participant tuples.

    A 2-tuple ``(k, l)`` is a communication taking ``tau``; a 1-tuple ``(i,)``
    is a local step taking 1.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    avail = np.zeros(n)
    m = len(events)
    start = np.empty(m)
    finish = np.empty(m)
    ks = np.empty(m, dtype=int)
    ls = np.empty(m, dtype=int)
    kind = np.empty(m, dtype=object)
    t_max = np.empty(m)
    running = 0.0
    for e, ev in enumerate(events):
        if len(ev) == 2:
            k, l = ev
            s = max(avail[k], avail[l])
            f = s + tau
            avail[k] = avail[l] = f
            kind[e] = "comm"
        elif len(ev) == 1:
            k = l = ev[0]
            s = avail[k]
            f = s + 1.0
            avail[k] = f
            kind[e] = "local"
        else:
            raise ValueError(f"event {e} has {len(ev)} participants")
        ks[e], ls[e] = k, l
        start[e], finish[e] = s, f
        running = max(running, f)
        t_max[e] = running
    return TimingTrace(float(tau), kind, ks, ls, start, finish, avail, t_max)


def _participants(aug):
    parts = []
    for c in range(aug.n_edges):
        if c < aug.E:
            parts.append((int(aug.col_k[c]), int(aug.col_l[c])))
        else:
            parts.append((int(aug.col_k[c]),))  # the center node
    return parts


def simulate_time(schedule, aug, tau):
    """Idealized execution time of a schedule on the centers of ``aug``."""
    parts = _participants(aug)
    return simulate_events([parts[c] for c in schedule.events], aug.n, tau)


def _fast_T(events, comm_k, comm_l, center, n_comm, n, tau):
    avail = [0.0] * n
    for c in events:
        if c < n_comm:
            k = comm_k[c]
            l = comm_l[c]
            f = max(avail[k], avail[l]) + tau
            avail[k] = avail[l] = f
        else:
            avail[center[c]] += 1.0
    return max(avail)


def comm_load(p, aug):
    """``p_comm^max = n max_k sum_{l in N(k)} p_kl / 2``."""
    p = np.asarray(p, dtype=float)
    per_node = np.zeros(aug.n)
    for c in range(aug.E):
        per_node[aug.col_k[c]] += p[c]
        per_node[aug.col_l[c]] += p[c]
    return float(aug.n * per_node.max() / 2.0) if aug.E else 0.0


@dataclass(frozen=True)
class ThroughputReport:
    mean_time_per_iter: float
    stderr: float
    C: float
    below_24: bool
    hypothesis_ok: bool
    p_comp: float
    p_comm_max: float
    tau: float
    t: int
    trials: int

    @property
    def warning(self):
        if self.hypothesis_ok:
            return None
        return "throughput hypothesis violated: need p_comp > p_comm_max or tau > 1"


def estimate_throughput(plan, aug, tau, t=10_000, trials=10, seed=0):
    """Empirical ``C`` in ``mean T(t)/t = (C/n)(p_comp + 2 tau p_comm_max)``.

    Trial ``r`` uses schedule seed ``seed + r``.
    """
    if trials < 1 or t < 1:
        raise ValueError("t and trials must be positive")
    p = np.asarray(plan.p, dtype=float)
    p_comm = float(p[: aug.E].sum())
    p_comp = 1.0 - p_comm
    pmax = comm_load(p, aug)
    ck = [int(v) for v in aug.col_k]
    cl = [int(v) for v in aug.col_l]
    ratios = []
    for r in range(trials):
        ev = inverse_cdf_draws(p, t, seed + r).tolist()
        ratios.append(_fast_T(ev, ck, cl, ck, aug.E, aug.n, tau) / t)
    ratios = np.array(ratios)
    mean = float(ratios.mean())
    se = float(ratios.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    C = aug.n * mean / (p_comp + 2.0 * tau * pmax)
    ok = p_comp > pmax or tau > 1
    return ThroughputReport(mean, se, float(C), bool(C < 24), bool(ok), p_comp, pmax,
                            float(tau), int(t), int(trials))
