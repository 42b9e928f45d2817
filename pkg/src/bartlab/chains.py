"""Finite Markov chains and electrical networks.

Dense linear algebra throughout: the state spaces handled here are small
enumerations, so clarity wins over sparse machinery.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import CapacityError, ConfigError, NumericalError, ReducibleChainError
from .model import log_marginal_likelihood, log_tree_prior
from .samplers import SamplerConfig
from .trees import MoveOracle, q_matrix

__all__ = [
    "FiniteChain",
    "SpectralGap",
    "Network",
    "build_chain",
    "tempered_log_weights",
    "stationary",
    "spectral_gap",
    "expected_hitting_times",
    "hitting_time_survival",
    "hitting_precedence",
    "network_reduce",
    "effective_resistance",
    "bfs_paths",
    "congestion",
    "gap_lower_bound",
    "write_edge_list",
    "write_manifest",
]

MAX_STATES = 20_000
ROW_TOL = 1e-12


@dataclass(frozen=True)
class FiniteChain:
    """Row-stochastic ``P`` with optional unnormalized log target weights."""

    P: np.ndarray
    log_w: Optional[np.ndarray] = None
    space: object = None
    T: float = 1.0
    lazy: bool = False

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ConfigError("P must be square")
        if P.shape[0] > MAX_STATES:
            raise CapacityError(f"{P.shape[0]} states exceed the cap of {MAX_STATES}", P.shape[0])
        if np.any(P < 0) or np.abs(P.sum(axis=1) - 1).max(initial=0.0) > ROW_TOL:
            raise ConfigError("P must be row-stochastic")
        object.__setattr__(self, "P", P)
        if self.log_w is not None:
            lw = np.asarray(self.log_w, dtype=float)
            if lw.shape != (P.shape[0],) or not np.all(np.isfinite(lw)):
                raise ConfigError("log weights must be finite, one per state")
            object.__setattr__(self, "log_w", lw)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def target(self) -> np.ndarray:
        """Normalized target distribution."""
        if self.log_w is None:
            raise ConfigError("chain carries no target weights")
        w = np.exp(self.log_w - self.log_w.max())
        return w / w.sum()

    def lazify(self) -> "FiniteChain":
        P = 0.5 * (self.P + np.eye(self.n))
        return FiniteChain(P, self.log_w, self.space, self.T, True)


def tempered_log_weights(space, data, config: SamplerConfig, prior: str = "chipman") -> tuple:
    """``(log p(E), log p(y|E))`` for every ensemble of an enumerated space."""
    pri = config.priors
    if pri.sigma2 is None:
        raise ConfigError("exact chains need a fixed sigma2")
    lam = pri.leaf_lambda(pri.sigma2, space.m)
    n_bins = data.space.n_bins
    if prior == "chipman":
        tp = {t: log_tree_prior(t, pri, n_bins) for t in space.trees}
        lp = np.array([sum(tp[t] for t in tse) for tse in space.tses])
    elif prior == "uniform":
        lp = np.zeros(len(space))
    else:
        raise ConfigError(f"unknown ensemble prior {prior!r}")
    ll = np.array([log_marginal_likelihood(tse, data.X, data.y, pri.sigma2, lam) for tse in space.tses])
    return lp, ll


def build_chain(space, data, config: SamplerConfig, prior: str = "chipman", T: Optional[float] = None) -> FiniteChain:
    """Transition matrix of the marginalized sampler over an enumerated space.

    ``T`` defaults to the config's constant temperature. Multistep configs use
    the ``r``-th power of the proposal matrix, lazy configs map ``P`` to
    ``(P + I) / 2``.
    """
    if len(space) > MAX_STATES:
        raise CapacityError(f"{len(space)} states exceed the cap of {MAX_STATES}", len(space))
    if config.variant == "default":
        raise ConfigError("exact chains model the marginalized sampler family")
    if T is None:
        if config.temperature.t_min is not None:
            raise ConfigError("exact chains need a constant temperature")
        T = config.temperature.t_max
    oracle = MoveOracle(data, space.max_internal, getattr(space, "rule_selection", "pairs"))
    Q = q_matrix(space, config.weights, data, oracle=oracle)
    if config.variant == "multistep" and config.r > 1:
        Q = np.linalg.matrix_power(Q, config.r)
    lp, ll = tempered_log_weights(space, data, config, prior)
    log_w = lp + ll / T
    P = _metropolis(Q, lp, ll, T)
    chain = FiniteChain(P, log_w, space, T)
    return chain.lazify() if config.lazy else chain


def _metropolis(Q, lp, ll, T):
    n = Q.shape[0]
    P = np.zeros_like(Q)
    i, j = np.nonzero(Q)
    off = i != j
    i, j = i[off], j[off]
    with np.errstate(divide="ignore"):
        log_ratio = lp[j] - lp[i] + np.log(Q[j, i]) - np.log(Q[i, j]) + (ll[j] - ll[i]) / T
    P[i, j] = Q[i, j] * np.exp(np.minimum(log_ratio, 0.0))
    P[np.arange(n), np.arange(n)] = 0.0
    P[np.arange(n), np.arange(n)] = 1.0 - P.sum(axis=1)
    return P


# ---------------------------------------------------------------------------
# reachability


def _reach(adj: np.ndarray, sources: Iterable[int]) -> np.ndarray:
    """States reachable from ``sources`` along positive entries of ``adj``."""
    seen = np.zeros(adj.shape[0], dtype=bool)
    queue = deque(int(s) for s in sources)
    seen[list(queue)] = True
    nbrs = [np.flatnonzero(row) for row in adj > 0]
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen


def check_irreducible(P: np.ndarray):
    fwd = _reach(P, [0])
    back = _reach(P.T, [0])
    bad = np.flatnonzero(~(fwd & back))
    if bad.size:
        raise ReducibleChainError(f"chain is reducible; states not communicating with 0: {bad.tolist()}", bad)


def stationary(chain: FiniteChain) -> np.ndarray:
    """Stationary distribution by Grassmann-Taksar-Heyman elimination.

    The elimination is subtraction-free, which keeps tiny probabilities
    accurate when the target is sharply peaked.
    """
    P = chain.P
    check_irreducible(P)
    n = chain.n
    A = P.copy()
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0:
            raise NumericalError(f"elimination pivot vanished at state {k}")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ A[:k, k]
    return pi / pi.sum()


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class SpectralGap:
    gap: float
    t_mix: float
    eigenvalues: np.ndarray
    pi_min: float


def _reference_measure(chain):
    if chain.log_w is not None:
        return chain.target()
    if np.allclose(chain.P, chain.P.T, atol=1e-14, rtol=0):
        return np.full(chain.n, 1.0 / chain.n)
    return stationary(chain)


def spectral_gap(chain: FiniteChain, eps: float = 0.25, tol: float = 1e-10) -> SpectralGap:
    """Gap ``1 - lambda_2`` of a lazy reversible chain and the mixing bound
    ``log(1 / (eps * pi_min)) / gap``."""
    P = chain.P
    if np.diag(P).min() < 0.5 - tol:
        raise ConfigError("spectral_gap needs a lazy chain (all self-loop probabilities >= 1/2)")
    pi = _reference_measure(chain)
    if np.any(pi <= 0):
        raise NumericalError("reference measure has zero entries")
    flow = pi[:, None] * P
    if np.abs(flow - flow.T).max() > tol:
        raise ConfigError("chain is not reversible with respect to its target")
    s = np.sqrt(pi)
    S = s[:, None] * P / s[None, :]
    S = 0.5 * (S + S.T)
    ev = np.sort(linalg.eigvalsh(S))[::-1]
    gap = float(1.0 - ev[1]) if ev.size > 1 else 1.0
    pi_min = float(pi.min())
    t_mix = math.log(1.0 / (eps * pi_min)) / gap if gap > tol else math.inf
    return SpectralGap(gap, t_mix, ev, pi_min)


# ---------------------------------------------------------------------------
# hitting times and harmonic functions


def _as_mask(states, n) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    idx = np.fromiter((int(s) for s in states), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ConfigError("state index out of range")
    mask[idx] = True
    return mask


def _absorb_solve(P: np.ndarray, inner: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Solve ``h = r + P h`` on ``inner`` (``h = 0`` elsewhere) by state reduction.

    Pivots are recomputed as sums of the remaining off-diagonal transition
    mass instead of ``1 - P[k, k]``, so no subtraction ever happens and
    nearly-absorbing states keep full relative accuracy.
    """
    idx = np.flatnonzero(inner)
    m = idx.size
    if m == 0:
        return np.zeros(0)
    out = np.where(inner, 0.0, 1.0)
    Q = P[np.ix_(idx, idx)].copy()
    exit_mass = P[idx] @ out  # mass leaving the inner set
    r = np.asarray(r, dtype=float).copy()
    piv = np.zeros(m)
    for k in range(m):
        Q[k, k] = 0.0
        s_k = Q[k, k + 1 :].sum() + exit_mass[k]
        if s_k <= 0:
            raise ReducibleChainError(f"state {idx[k]} cannot leave its class", [idx[k]])
        piv[k] = s_k
        rest = slice(k + 1, m)
        w = Q[rest, k] / s_k
        Q[rest, rest] += np.outer(w, Q[k, rest])
        exit_mass[rest] += w * exit_mass[k]
        r[rest] += w * r[k]
    h = np.zeros(m)
    for k in range(m - 1, -1, -1):
        h[k] = (r[k] + Q[k, k + 1 :] @ h[k + 1 :]) / piv[k]
    return h


def expected_hitting_times(chain: FiniteChain, target) -> np.ndarray:
    """``E[tau_A | X_0 = x]`` for every state ``x``."""
    P = chain.P
    A = _as_mask(target, chain.n)
    if not A.any():
        raise ConfigError("target set is empty")
    stuck = np.flatnonzero(~_reach(P.T, np.flatnonzero(A)))
    if stuck.size:
        raise ReducibleChainError(f"states never reach the target: {stuck.tolist()}", stuck)
    C = ~A
    h = np.zeros(chain.n)
    h[C] = _absorb_solve(P, C, np.ones(int(C.sum())))
    return h


def hitting_time_survival(chain: FiniteChain, target, start: int, t_max: int) -> np.ndarray:
    """``P(tau_A > t | X_0 = start)`` for ``t = 0..t_max``."""
    A = _as_mask(target, chain.n)
    C = ~A
    Pc = chain.P[np.ix_(C, C)]
    out = np.zeros(t_max + 1)
    if A[start]:
        return out
    v = np.zeros(int(C.sum()))
    v[int(np.flatnonzero(C).tolist().index(start))] = 1.0
    for t in range(t_max + 1):
        out[t] = v.sum()
        v = v @ Pc
    return out


def hitting_precedence(chain: FiniteChain, A, B) -> np.ndarray:
    """Probability of reaching ``A`` before ``B`` from each state."""
    P = chain.P
    a, b = _as_mask(A, chain.n), _as_mask(B, chain.n)
    if not a.any() or not b.any():
        raise ConfigError("both boundary sets must be non-empty")
    if (a & b).any():
        raise ConfigError("boundary sets must be disjoint")
    stuck = np.flatnonzero(~_reach(P.T, np.flatnonzero(a | b)))
    if stuck.size:
        raise ReducibleChainError(f"states disconnected from the boundary: {stuck.tolist()}", stuck)
    h = a.astype(float)
    C = ~(a | b)
    h[C] = _absorb_solve(P, C, P[np.ix_(C, a)].sum(axis=1))
    return h


# ---------------------------------------------------------------------------
# networks


class Network:
    """Symmetric conductances over labeled nodes."""

    def __init__(self, conductance, labels: Optional[Sequence] = None):
        c = np.array(conductance, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ConfigError("conductance matrix must be square")
        if np.any(c < 0) or not np.allclose(c, c.T, rtol=0, atol=1e-14):
            raise ConfigError("conductances must be symmetric and non-negative")
        np.fill_diagonal(c, 0.0)
        self.c = c
        self.labels = list(range(c.shape[0])) if labels is None else list(labels)
        if len(set(self.labels)) != len(self.labels) or len(self.labels) != c.shape[0]:
            raise ConfigError("need one distinct label per node")
        self._pos = {lab: i for i, lab in enumerate(self.labels)}

    @classmethod
    def from_edges(cls, edges, labels: Optional[Sequence] = None):
        """``edges`` are ``(u, v, conductance)``; parallel edges add up."""
        edges = list(edges)
        if labels is None:
            labels = sorted({e[0] for e in edges} | {e[1] for e in edges})
        pos = {lab: i for i, lab in enumerate(labels)}
        c = np.zeros((len(labels), len(labels)))
        for u, v, w in edges:
            if w < 0:
                raise ConfigError("conductances must be non-negative")
            if u != v:
                c[pos[u], pos[v]] += w
                c[pos[v], pos[u]] += w
        return cls(c, labels)

    @classmethod
    def from_chain(cls, chain: FiniteChain):
        """Conductances ``pi(x) P(x, y)`` of a reversible chain."""
        pi = chain.target() if chain.log_w is not None else stationary(chain)
        flow = pi[:, None] * chain.P
        return cls(0.5 * (flow + flow.T))

    def __len__(self):
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self._pos[label]
        except KeyError:
            raise ConfigError(f"unknown node {label!r}") from None

    def edges(self):
        i, j = np.nonzero(np.triu(self.c))
        return [(self.labels[a], self.labels[b], float(self.c[a, b])) for a, b in zip(i, j)]

    def _without(self, k):
        keep = [i for i in range(len(self)) if i != k]
        return Network(self.c[np.ix_(keep, keep)], [self.labels[i] for i in keep])

    def glue(self, u, v) -> "Network":
        """Merge node ``v`` into ``u``; conductances to shared neighbors add."""
        a, b = self.index(u), self.index(v)
        if a == b:
            raise ConfigError("cannot glue a node to itself")
        c = self.c.copy()
        c[a] += c[b]
        c[:, a] += c[:, b]
        c[a, a] = 0.0
        return Network(c, self.labels)._without(b)

    def series_parallel(self, u, v, w) -> "Network":
        """Replace the path ``u - v - w`` through a degree-two node ``v`` by one
        edge, adding it in parallel to any existing ``u - w`` edge."""
        a, b, z = self.index(u), self.index(v), self.index(w)
        if len({a, b, z}) != 3:
            raise ConfigError("series reduction needs three distinct nodes")
        for x in np.flatnonzero(self.c[b]):
            if x not in (a, z):
                raise ConfigError(f"node {v!r} has a neighbor {self.labels[x]!r} outside {{{u!r}, {w!r}}}")
        c1, c2 = self.c[a, b], self.c[b, z]
        c = self.c.copy()
        if c1 > 0 and c2 > 0:
            extra = c1 * c2 / (c1 + c2)
            c[a, z] += extra
            c[z, a] += extra
        return Network(c, self.labels)._without(b)

    def laplacian(self) -> np.ndarray:
        return np.diag(self.c.sum(axis=1)) - self.c


def network_reduce(network: Network, ops) -> Network:
    """Apply ``("glue", u, v)`` and ``("series_parallel", u, v, w)`` in order."""
    for op in ops:
        name, *args = op
        if name == "glue":
            network = network.glue(*args)
        elif name == "series_parallel":
            network = network.series_parallel(*args)
        else:
            raise ConfigError(f"unknown reduction {name!r}")
    return network


def _harmonic_resistance(net: Network, a, z) -> float:
    ia, iz = net.index(a), net.index(z)
    if ia == iz:
        raise ConfigError("source and sink must differ")
    L = net.laplacian()
    n = len(net)
    W = np.zeros(n)
    W[ia] = 1.0
    inner = np.array([i for i in range(n) if i not in (ia, iz)], dtype=np.int64)
    if inner.size:
        # nodes cut off from both terminals carry no current; pin them at 0
        conn = _reach(net.c, [ia, iz])
        live = inner[conn[inner]]
        if live.size:
            rhs = net.c[np.ix_(live, [ia])].ravel()
            W[live] = linalg.solve(L[np.ix_(live, live)], rhs)
    current = float(net.c[ia] @ (W[ia] - W))
    if current <= 0:
        return math.inf
    return 1.0 / current


def effective_resistance(network: Network, a, z, ops=None, tol: float = 1e-10) -> float:
    """Resistance between ``a`` and ``z`` from the harmonic voltage solve.

    With ``ops`` the network is also reduced first and the two values must
    agree to ``tol`` (relative).
    """
    r = _harmonic_resistance(network, a, z)
    if ops:
        r2 = _harmonic_resistance(network_reduce(network, ops), a, z)
        if not math.isclose(r, r2, rel_tol=tol, abs_tol=0.0) and not (math.isinf(r) and math.isinf(r2)):
            raise NumericalError(f"reduced network gives R={r2!r}, harmonic solve gives R={r!r}")
    return r


# ---------------------------------------------------------------------------
# canonical paths


def bfs_paths(chain: FiniteChain) -> dict:
    """Shortest path (fewest transitions) for every ordered pair of distinct states."""
    P = chain.P.copy()
    np.fill_diagonal(P, 0.0)
    nbrs = [np.flatnonzero(row) for row in P > 0]
    paths = {}
    for s in range(chain.n):
        prev = np.full(chain.n, -1)
        prev[s] = s
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if prev[v] < 0:
                    prev[v] = u
                    queue.append(v)
        for t in range(chain.n):
            if t == s:
                continue
            if prev[t] < 0:
                raise ReducibleChainError(f"state {t} unreachable from {s}", [t])
            path = [t]
            while path[-1] != s:
                path.append(int(prev[path[-1]]))
            paths[(s, t)] = path[::-1]
    return paths


def congestion(chain: FiniteChain, paths: dict, pi=None) -> tuple:
    """Congestion ``rho`` of a path ensemble and its longest path length.

    ``paths`` maps ordered pairs ``(x, y)`` to state sequences from ``x`` to
    ``y``; each consecutive pair is a directed edge whose load is
    ``sum pi(x) pi(y)`` over the paths using it, divided by ``pi(z) P(z, w)``.
    """
    if pi is None:
        pi = chain.target() if chain.log_w is not None else stationary(chain)
    pi = np.asarray(pi, dtype=float)
    load = {}
    longest = 0
    for (x, y), path in paths.items():
        if path[0] != x or path[-1] != y:
            raise ConfigError(f"path for {(x, y)} does not join its endpoints")
        longest = max(longest, len(path) - 1)
        for z, w in zip(path[:-1], path[1:]):
            if chain.P[z, w] <= 0:
                raise ConfigError(f"path for {(x, y)} uses the zero-probability edge {(z, w)}")
            load[(z, w)] = load.get((z, w), 0.0) + pi[x] * pi[y]
    if not load:
        return 0.0, 0
    rho = max(v / (pi[z] * chain.P[z, w]) for (z, w), v in load.items())
    return float(rho), longest


def gap_lower_bound(rho: float, max_len: int) -> float:
    if rho <= 0 or max_len <= 0:
        return math.inf
    return 1.0 / (rho * max_len)


# ---------------------------------------------------------------------------
# export


def write_edge_list(path, chain: FiniteChain, config_hash: str = ""):
    i, j = np.nonzero(chain.P)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "P_ij", "config_hash"])
        for a, b in zip(i, j):
            w.writerow([int(a), int(b), repr(float(chain.P[a, b])), config_hash])


def write_manifest(path, space, config_hash: str = ""):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [f"tree{j}" for j in range(space.m)] + ["config_hash"])
        for k, tse in enumerate(space.tses):
            w.writerow([k] + [t.serialize() for t in tse] + [config_hash])
