"""Immutable tree structures, the four local moves and the proposal kernel.

A tree is a nested tuple: a leaf is ``()`` and an internal node is
``(feature, threshold, left, right)`` with 0-based feature index and threshold
index (rows with ``code <= threshold`` go left). Nodes are addressed by their
path from the root, a tuple of 0 (left) / 1 (right) steps. Leaves are numbered
in breadth-first order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import CapacityError, ConfigError

__all__ = [
    "LEAF",
    "Tree",
    "Move",
    "MoveWeights",
    "Proposal",
    "MoveOracle",
    "KINDS",
    "trivial_tree",
    "leaf_assignment",
    "apply_move",
    "enumerate_feasible_moves",
    "propose",
    "tree_transition_row",
    "q_matrix",
]

LEAF = ()
KINDS = ("grow", "prune", "change", "swap")
REVERSE = {"grow": "prune", "prune": "grow", "change": "change", "swap": "swap"}


def _get(node, path):
    for step in path:
        node = node[2 + step]
    return node


def _replace(node, path, new):
    if not path:
        return new
    f, t, left, right = node
    if path[0] == 0:
        return (f, t, _replace(left, path[1:], new), right)
    return (f, t, left, _replace(right, path[1:], new))


class Tree:
    """Hashable tree structure; equality is labeled-structure equality."""

    __slots__ = ("root", "_bfs", "_flat", "_hash")

    def __init__(self, root=LEAF):
        self.root = root
        self._bfs = None
        self._flat = None
        self._hash = hash(root)

    def __eq__(self, other):
        return isinstance(other, Tree) and self.root == other.root

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Tree({self.serialize()})"

    def _walk(self):
        if self._bfs is None:
            nodes = []
            queue = deque([((), self.root, 0)])
            while queue:
                path, node, depth = queue.popleft()
                nodes.append((path, node, depth))
                if node:
                    queue.append((path + (0,), node[2], depth + 1))
                    queue.append((path + (1,), node[3], depth + 1))
            self._bfs = nodes
        return self._bfs

    def nodes(self):
        """``(path, node, depth)`` triples in breadth-first order."""
        return self._walk()

    def leaves(self):
        return [p for p, node, _ in self._walk() if not node]

    def internal(self):
        return [p for p, node, _ in self._walk() if node]

    @property
    def n_leaves(self) -> int:
        return sum(1 for _, node, _ in self._walk() if not node)

    @property
    def n_internal(self) -> int:
        return sum(1 for _, node, _ in self._walk() if node)

    @property
    def depth(self) -> int:
        return max(d for _, _, d in self._walk())

    def get(self, path):
        return _get(self.root, path)

    def rule(self, path):
        node = _get(self.root, path)
        return (node[0], node[1]) if node else None

    def replace(self, path, subtree) -> "Tree":
        return Tree(_replace(self.root, tuple(path), subtree))

    def is_leaf(self, path) -> bool:
        return not _get(self.root, path)

    def cell_bounds(self, path, n_bins):
        """Inclusive code range ``[lo, hi]`` per feature of the node's cell."""
        lo = np.zeros(len(n_bins), dtype=np.int64)
        hi = np.asarray(n_bins, dtype=np.int64) - 1
        node = self.root
        for step in path:
            f, t = node[0], node[1]
            if step == 0:
                hi[f] = min(hi[f], t)
            else:
                lo[f] = max(lo[f], t + 1)
            node = node[2 + step]
        return lo, hi

    def flatten(self):
        """Arrays ``feat, thr, left, right, leaf_id`` indexed by breadth-first node id."""
        if self._flat is None:
            nodes = self._walk()
            index = {p: i for i, (p, _, _) in enumerate(nodes)}
            k = len(nodes)
            feat = np.full(k, -1, dtype=np.int64)
            thr = np.zeros(k, dtype=np.int64)
            left = np.zeros(k, dtype=np.int64)
            right = np.zeros(k, dtype=np.int64)
            leaf_id = np.full(k, -1, dtype=np.int64)
            n_leaf = 0
            for i, (p, node, _) in enumerate(nodes):
                if node:
                    feat[i], thr[i] = node[0], node[1]
                    left[i] = index[p + (0,)]
                    right[i] = index[p + (1,)]
                else:
                    leaf_id[i] = n_leaf
                    n_leaf += 1
            self._flat = (feat, thr, left, right, leaf_id)
        return self._flat

    def serialize(self) -> str:
        leaf_ids = {p: i for i, p in enumerate(self.leaves())}

        def rec(node, path):
            if not node:
                return f"(leaf {leaf_ids[path]})"
            return f"(split {node[0]} {node[1]} {rec(node[2], path + (0,))} {rec(node[3], path + (1,))})"

        return rec(self.root, ())

    @classmethod
    def parse(cls, text: str) -> "Tree":
        tokens = text.replace("(", " ( ").replace(")", " ) ").split()
        pos = 0

        def rec():
            nonlocal pos
            if tokens[pos] != "(":
                raise ConfigError(f"malformed tree text at token {pos}: {tokens[pos]!r}")
            head = tokens[pos + 1]
            if head == "leaf":
                pos += 4
                return LEAF
            if head != "split":
                raise ConfigError(f"unknown tree node {head!r}")
            f, t = int(tokens[pos + 2]), int(tokens[pos + 3])
            pos += 4
            left = rec()
            right = rec()
            if tokens[pos] != ")":
                raise ConfigError("malformed tree text: missing ')'")
            pos += 1
            return (f, t, left, right)

        root = rec()
        if pos != len(tokens):
            raise ConfigError("trailing tokens after tree text")
        return cls(root)


def trivial_tree() -> Tree:
    return Tree(LEAF)


def leaf_assignment(tree: Tree, X, n_bins=None) -> np.ndarray:
    """Breadth-first leaf index of every row of ``X`` (integer codes)."""
    X = np.asarray(X)
    if n_bins is not None and X.size:
        if X.min() < 0 or np.any(X.max(axis=0) >= np.asarray(n_bins)):
            raise ConfigError("feature code outside the covariate space")
    if not tree.root:
        return np.zeros(X.shape[0], dtype=np.int64)
    feat, thr, left, right, leaf_id = tree.flatten()
    return _kernels.route(X, feat, thr, left, right, leaf_id)


# ---------------------------------------------------------------------------
# moves


@dataclass(frozen=True)
class Move:
    """``path`` is the target node; ``rule`` the new (feature, threshold) for
    grow/change; ``child`` the swapped child side (``None`` means the
    both-children variant)."""

    kind: str
    path: tuple
    rule: Optional[tuple] = None
    child: Optional[int] = None


@dataclass(frozen=True)
class MoveWeights:
    grow: float = 0.25
    prune: float = 0.25
    change: float = 0.4
    swap: float = 0.1
    stay: float = 0.0

    def __post_init__(self):
        vals = self.as_tuple()
        if any(v < 0 for v in vals):
            raise ConfigError("move probabilities must be non-negative")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ConfigError(f"move probabilities must sum to 1 (got {sum(vals)})")

    def as_tuple(self):
        return (self.grow, self.prune, self.change, self.swap, self.stay)

    def of(self, kind: str) -> float:
        return getattr(self, kind)

    @classmethod
    def grow_prune(cls, stay: float = 0.0):
        return cls(grow=(1 - stay) / 2, prune=(1 - stay) / 2, change=0.0, swap=0.0, stay=stay)


def apply_move(tree: Tree, move: Move) -> Tree:
    node = tree.get(move.path)
    if move.kind == "grow":
        f, t = move.rule
        return tree.replace(move.path, (f, t, LEAF, LEAF))
    if move.kind == "prune":
        return tree.replace(move.path, LEAF)
    if move.kind == "change":
        f, t = move.rule
        return tree.replace(move.path, (f, t, node[2], node[3]))
    if move.kind == "swap":
        pf, pt, left, right = node
        if move.child is None:
            new_left = (pf, pt, left[2], left[3])
            new_right = (pf, pt, right[2], right[3])
            return tree.replace(move.path, (left[0], left[1], new_left, new_right))
        child = node[2 + move.child]
        new_child = (pf, pt, child[2], child[3])
        if move.child == 0:
            return tree.replace(move.path, (child[0], child[1], new_child, right))
        return tree.replace(move.path, (child[0], child[1], left, new_child))
    raise ConfigError(f"unknown move kind {move.kind!r}")


def _all_leaves_nonempty(tree: Tree, X) -> bool:
    leaf = leaf_assignment(tree, X)
    return np.bincount(leaf, minlength=tree.n_leaves).min() > 0


def _subtree_rows(tree: Tree, leaf, path):
    """Boolean mask of rows whose leaf lies under ``path``."""
    k = len(path)
    under = np.array([p[:k] == path for p in tree.leaves()])
    return under[leaf]


def _grow_moves(tree, X, n_bins):
    leaf = leaf_assignment(tree, X)
    moves = []
    for i, path in enumerate(tree.leaves()):
        rows = X[leaf == i]
        if rows.shape[0] == 0:
            continue
        lo, hi = rows.min(axis=0), rows.max(axis=0)
        for f in range(X.shape[1]):
            for t in range(int(lo[f]), int(hi[f])):
                moves.append(Move("grow", path, (f, t)))
    return moves


def _prune_moves(tree):
    return [
        Move("prune", p)
        for p, node, _ in tree.nodes()
        if node and not node[2] and not node[3]
    ]


def _change_moves(tree, X, n_bins):
    """Feasible thresholds for each feature form an interval: every leaf of the
    left subtree needs a routed row with code <= t, every leaf of the right
    subtree one with code > t."""
    leaf = leaf_assignment(tree, X)
    d = X.shape[1]
    moves = []
    for path in tree.internal():
        node = tree.get(path)
        rows = X[_subtree_rows(tree, leaf, path)]
        lo_t = np.zeros(d, dtype=np.int64)
        hi_t = np.asarray(n_bins, dtype=np.int64) - 2
        ok = True
        for side, sub in ((0, node[2]), (1, node[3])):
            st = Tree(sub)
            sub_leaf = leaf_assignment(st, rows)
            for j in range(st.n_leaves):
                r = rows[sub_leaf == j]
                if r.shape[0] == 0:
                    ok = False
                    break
                if side == 0:
                    lo_t = np.maximum(lo_t, r.min(axis=0))
                else:
                    hi_t = np.minimum(hi_t, r.max(axis=0) - 1)
            if not ok:
                break
        if not ok:
            continue
        for f in range(d):
            for t in range(int(lo_t[f]), int(hi_t[f]) + 1):
                if (f, t) != (node[0], node[1]):
                    moves.append(Move("change", path, (f, t)))
    return moves


def _swap_moves(tree, X):
    moves = []
    for path, node, _ in tree.nodes():
        if not node:
            continue
        left, right = node[2], node[3]
        if left and right and (left[0], left[1]) == (right[0], right[1]):
            candidates = [Move("swap", path, None, None)]
        else:
            candidates = [Move("swap", path, None, c) for c in (0, 1) if node[2 + c]]
        for mv in candidates:
            if _all_leaves_nonempty(apply_move(tree, mv), X):
                moves.append(mv)
    return moves


def _brute_change_moves(tree, X, n_bins):
    """Reference enumeration of change moves by rebuilding every candidate."""
    moves = []
    for path in tree.internal():
        node = tree.get(path)
        for f in range(X.shape[1]):
            for t in range(int(n_bins[f]) - 1):
                if (f, t) == (node[0], node[1]):
                    continue
                mv = Move("change", path, (f, t))
                if _all_leaves_nonempty(apply_move(tree, mv), X):
                    moves.append(mv)
    return moves


def enumerate_feasible_moves(tree: Tree, kind: str, data, max_internal: Optional[int] = None):
    """All moves of ``kind`` whose result keeps every leaf non-empty on ``data``.

    ``max_internal`` disables grow moves on trees already at that many internal
    nodes (used to keep enumerated state spaces closed).
    """
    X = data.X
    n_bins = data.space.n_bins
    if kind == "grow":
        if max_internal is not None and tree.n_internal >= max_internal:
            return []
        return _grow_moves(tree, X, n_bins)
    if kind == "prune":
        return _prune_moves(tree)
    if kind == "change":
        return _change_moves(tree, X, n_bins)
    if kind == "swap":
        return _swap_moves(tree, X)
    raise ConfigError(f"unknown move kind {kind!r}")


def _selection_probs(moves, rule_selection):
    """Probability of picking each move given its kind was drawn."""
    k = len(moves)
    if rule_selection == "pairs" or not moves or moves[0].kind not in ("grow", "change"):
        return np.full(k, 1.0 / k) if k else np.zeros(0)
    if rule_selection != "feature_first":
        raise ConfigError(f"unknown rule_selection {rule_selection!r}")
    by_node = {}
    for i, mv in enumerate(moves):
        by_node.setdefault(mv.path, {}).setdefault(mv.rule[0], []).append(i)
    probs = np.zeros(k)
    for feats in by_node.values():
        for idx in feats.values():
            probs[idx] = 1.0 / (len(by_node) * len(feats) * len(idx))
    return probs


class MoveOracle:
    """Caches feasible move lists per tree for one dataset."""

    def __init__(self, data, max_internal: Optional[int] = None, rule_selection: str = "pairs"):
        if not data.binned:
            raise ConfigError("move enumeration needs binned covariates")
        if rule_selection not in ("pairs", "feature_first"):
            raise ConfigError(f"unknown rule_selection {rule_selection!r}")
        self.data = data
        self.max_internal = max_internal
        self.rule_selection = rule_selection
        self._cache = {}

    def moves(self, tree: Tree, kind: str):
        key = (tree, kind)
        hit = self._cache.get(key)
        if hit is None:
            moves = enumerate_feasible_moves(tree, kind, self.data, self.max_internal)
            hit = (moves, _selection_probs(moves, self.rule_selection))
            self._cache[key] = hit
        return hit

    def kind_prob(self, src: Tree, dst: Tree, kind: str) -> float:
        """Probability that a move of ``kind`` from ``src`` yields ``dst``."""
        moves, probs = self.moves(src, kind)
        return float(sum(p for mv, p in zip(moves, probs) if apply_move(src, mv) == dst))


@dataclass(frozen=True)
class Proposal:
    tree: Tree
    q_fwd: float
    q_bwd: float
    move: Optional[Move]

    @property
    def noop(self) -> bool:
        return self.move is None


def propose(tree: Tree, weights: MoveWeights, data, rng, oracle: Optional[MoveOracle] = None) -> Proposal:
    """Draw one proposal from the tree kernel.

    ``q_fwd``/``q_bwd`` are the kernel probabilities of the forward and
    reverse transitions. An empty feasible set or the stay move returns the
    unchanged tree with both probabilities equal to 1.
    """
    if oracle is None:
        oracle = MoveOracle(data)
    pi = np.array(weights.as_tuple())
    k = int(rng.choice(5, p=pi / pi.sum()))
    if k == 4:
        return Proposal(tree, 1.0, 1.0, None)
    kind = KINDS[k]
    moves, probs = oracle.moves(tree, kind)
    if not moves:
        return Proposal(tree, 1.0, 1.0, None)
    i = int(rng.choice(len(moves), p=probs))
    move = moves[i]
    new = apply_move(tree, move)
    q_fwd = pi[k] * oracle.kind_prob(tree, new, kind)
    rev = REVERSE[kind]
    q_bwd = weights.of(rev) * oracle.kind_prob(new, tree, rev)
    return Proposal(new, q_fwd, q_bwd, move)


def tree_transition_row(tree: Tree, weights: MoveWeights, oracle: MoveOracle) -> dict:
    """Full proposal distribution ``{tree*: Q(tree, tree*)}`` of one tree."""
    row = {tree: weights.stay}
    for kind in KINDS:
        w = weights.of(kind)
        if w == 0:
            continue
        moves, probs = oracle.moves(tree, kind)
        if not moves:
            row[tree] += w
            continue
        for mv, p in zip(moves, probs):
            dst = apply_move(tree, mv)
            row[dst] = row.get(dst, 0.0) + w * p
    return row


def q_matrix(space, weights: MoveWeights, data, max_states: int = 20_000, oracle=None) -> np.ndarray:
    """Dense proposal matrix of the ensemble sampler over an enumerated space.

    One tree index is picked uniformly, then that tree is moved by the tree
    kernel.
    """
    N = len(space)
    if N > max_states:
        raise CapacityError(f"{N} states exceed the dense-matrix cap of {max_states}", N)
    if oracle is None:
        oracle = MoveOracle(data, space.max_internal, getattr(space, "rule_selection", "pairs"))
    rows = {t: tree_transition_row(t, weights, oracle) for t in space.trees}
    Q = np.zeros((N, N))
    m = space.m
    for i, tse in enumerate(space.tses):
        for k in range(m):
            for dst, p in rows[tse[k]].items():
                j = space.index[tse[:k] + (dst,) + tse[k + 1:]]
                Q[i, j] += p / m
    return Q
