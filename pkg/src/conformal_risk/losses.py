"""Step-loss constructors for common set-valued prediction losses.

Each constructor returns a :class:`StepLoss` that is non-increasing in its
threshold parameter, where a larger parameter always means a larger (more
conservative) prediction set. When the natural parameterization runs the
other way, the curve is expressed in the negated parameter and
``StepLoss.meta["parameter"]`` says so.

Class indices are zero-based throughout.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .steps import StepLoss, TableError

Answer = Union[str, Sequence[str]]

NEGATED_SCORE = "negated score threshold: set = {y : score(y) >= -lambda}"
NEGATED_ANCESTOR = (
    "negated ancestor-score threshold: ancestors a with g(a) > lambda are binding"
)


def miscoverage_loss(score: float) -> StepLoss:
    """``1{score > lam}``: the miscoverage indicator of a conformal score."""
    if not math.isfinite(score):
        raise ValueError("score must be finite")
    return StepLoss([score], [1.0, 0.0])


_EPS = float(np.finfo(float).eps)


# -- false negative rate ------------------------------------------------------


@dataclass(frozen=True)
class ScoredClasses:
    """Per-class scores for one input and its set of true classes."""

    scores: tuple[float, ...]
    labels: frozenset[int]

    def __init__(self, scores: Sequence[float], labels):
        object.__setattr__(self, "scores", tuple(float(s) for s in scores))
        object.__setattr__(self, "labels", frozenset(int(k) for k in labels))
        if not self.labels:
            raise ValueError("label set must be nonempty")
        if not all(math.isfinite(s) for s in self.scores):
            raise ValueError("scores must be finite")
        if min(self.labels) < 0 or max(self.labels) >= len(self.scores):
            raise ValueError("label index out of range")


def _float_key(x: float) -> int:
    # order-preserving map from floats to integers
    i = int(np.float64(x).view(np.int64))
    return i if i >= 0 else -(i & 0x7FFFFFFFFFFFFFFF)


def _key_float(k: int) -> float:
    i = k if k >= 0 else (-k) | -0x8000000000000000
    return float(np.int64(i).view(np.float64))


def _inclusion_threshold(score: float) -> float:
    # smallest float lam with score >= 1 - lam evaluated in float arithmetic;
    # 1 - lam is monotone under rounding, so bisect over the float ordering
    def holds(lam):
        return score >= 1.0 - lam

    hi = 1.0 - score
    step = 4 * _EPS * max(1.0, abs(hi))
    while not holds(hi):
        hi += step
        step *= 2
    lo, step = hi, 4 * _EPS * max(1.0, abs(hi))
    while holds(lo):
        lo -= step
        step *= 2
    klo, khi = _float_key(lo), _float_key(hi)  # fails at klo, holds at khi
    while khi - klo > 1:
        mid = (klo + khi) // 2
        if holds(_key_float(mid)):
            khi = mid
        else:
            klo = mid
    return _key_float(khi)


def fnr_loss(item: ScoredClasses) -> StepLoss:
    """Fraction of true classes missing from ``{k : score_k >= 1 - lam}``."""
    y = len(item.labels)
    cuts = sorted(_inclusion_threshold(item.scores[k]) for k in item.labels)
    bps, counts = np.unique(cuts, return_counts=True)
    covered = np.cumsum(counts)
    values = [1.0 - 0 / y] + [1.0 - int(c) / y for c in covered]
    return StepLoss(bps, values).canonical()


# -- hierarchical graph distance ---------------------------------------------


class ClassTree:
    """Rooted tree over integer node ids.

    ``parents`` maps every node to its parent, with ``None`` (or -1) for the
    root. Leaves are the nodes without children.
    """

    def __init__(self, parents: Mapping[int, int | None] | Sequence[int | None]):
        if not isinstance(parents, Mapping):
            parents = dict(enumerate(parents))
        par = {}
        for v, p in parents.items():
            par[int(v)] = None if p is None or p == -1 else int(p)
        roots = [v for v, p in par.items() if p is None]
        if len(roots) != 1:
            raise TableError(f"tree needs exactly one root, found {len(roots)}")
        self.root = roots[0]
        self.parent = par
        self.children: dict[int, list[int]] = {v: [] for v in par}
        for v, p in par.items():
            if p is not None:
                if p not in par:
                    raise TableError(f"node {v} has unknown parent {p}")
                self.children[p].append(v)
        for kids in self.children.values():
            kids.sort()

        self.depth = {self.root: 0}
        stack = [self.root]
        while stack:
            v = stack.pop()
            for c in self.children[v]:
                self.depth[c] = self.depth[v] + 1
                stack.append(c)
        if len(self.depth) != len(par):
            raise TableError("parent links contain a cycle or a disconnected node")

        self.nodes = tuple(sorted(par))
        self.leaves = tuple(v for v in self.nodes if not self.children[v])
        self.max_depth = max(self.depth[v] for v in self.leaves)

        # leaf descendants and the shallowest leaf below each node, bottom-up
        self._leaves_under: dict[int, tuple[int, ...]] = {}
        self._min_leaf_depth: dict[int, int] = {}
        for v in sorted(par, key=lambda u: -self.depth[u]):
            kids = self.children[v]
            if not kids:
                self._leaves_under[v] = (v,)
                self._min_leaf_depth[v] = self.depth[v]
            else:
                self._leaves_under[v] = tuple(
                    sorted(x for c in kids for x in self._leaves_under[c])
                )
                self._min_leaf_depth[v] = min(self._min_leaf_depth[c] for c in kids)

    def chain(self, v: int) -> list[int]:
        """``v`` followed by its ancestors up to the root."""
        out = [v]
        while self.parent[out[-1]] is not None:
            out.append(self.parent[out[-1]])
        return out

    def leaves_under(self, v: int) -> tuple[int, ...]:
        return self._leaves_under[v]

    def lca(self, u: int, v: int) -> int:
        anc = set(self.chain(u))
        for a in self.chain(v):
            if a in anc:
                return a
        raise AssertionError("tree is connected")


def predicted_leaf(tree: ClassTree, leaf_probs: Mapping[int, float]) -> int:
    """Highest-scoring leaf; ties go to the smallest node id."""
    return min(tree.leaves, key=lambda v: (-leaf_probs[v], v))


def subtree_score(tree: ClassTree, leaf_probs: Mapping[int, float], v: int) -> float:
    return math.fsum(leaf_probs[x] for x in tree.leaves_under(v))


def graph_distance_loss(
    tree: ClassTree,
    leaf_probs: Mapping[int, float] | Sequence[float],
    true_leaf: int,
) -> StepLoss:
    """Scaled hierarchical distance from the true leaf to the prediction set.

    The prediction set is the leaf set below the deepest ancestor ``a`` of
    the top-scoring leaf whose subtree score exceeds the threshold; when no
    ancestor qualifies it is every leaf. The curve is in the negated
    ancestor-score parameter (see ``meta``), in which it is non-increasing
    and right-continuous.
    """
    if not isinstance(leaf_probs, Mapping):
        leaf_probs = dict(zip(tree.leaves, leaf_probs))
    missing = [v for v in tree.leaves if v not in leaf_probs]
    if missing:
        raise ValueError(f"no score for leaves {missing[:5]}")
    if true_leaf not in tree.parent or tree.children[true_leaf]:
        raise ValueError(f"true_leaf {true_leaf} is not a leaf of the tree")

    y_hat = predicted_leaf(tree, leaf_probs)
    chain = tree.chain(y_hat)
    truth_chain = set(tree.chain(true_leaf))
    depth_scale = tree.max_depth

    def node_loss(a: int) -> float:
        if a in truth_chain or depth_scale == 0:
            return 0.0
        dist = tree._min_leaf_depth[a] - tree.depth[tree.lca(true_leaf, a)]
        return dist / depth_scale

    # deepest binding ancestor changes where the running max of g rises
    bps: list[float] = []
    values = [node_loss(chain[0])]
    best = subtree_score(tree, leaf_probs, chain[0])
    bps.append(best)
    for a in chain[1:]:
        g = subtree_score(tree, leaf_probs, a)
        if g > best:
            values.append(node_loss(a))
            best = g
            bps.append(best)
    values.append(0.0)
    meta = {"parameter": NEGATED_ANCESTOR}
    return StepLoss(bps, values, meta=meta).canonical()


# -- token F1 ------------------------------------------------------------------

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(text: Answer) -> list[str]:
    """Lowercase, drop punctuation and articles, split on whitespace."""
    if not isinstance(text, str):
        text = " ".join(text)
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return text.split()


def token_f1(prediction: Answer, gold: Answer) -> float:
    """Bag-of-tokens F1 (harmonic mean of precision and recall)."""
    pred = normalize_answer(prediction)
    ref = normalize_answer(gold)
    if not pred or not ref:
        return float(pred == ref)
    same = sum((Counter(pred) & Counter(ref)).values())
    if same == 0:
        return 0.0
    precision = same / len(pred)
    recall = same / len(ref)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ScoredCandidates:
    """Scored candidate answers for one question and its gold answers."""

    candidates: tuple[tuple[Answer, float], ...]
    gold_answers: tuple[Answer, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple((a, float(s)) for a, s in self.candidates))
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        if not self.candidates:
            raise ValueError("candidate list must be nonempty")
        if not self.gold_answers:
            raise ValueError("need at least one gold answer")
        if not all(math.isfinite(s) for _, s in self.candidates):
            raise ValueError("candidate scores must be finite")


def f1_loss(item: ScoredCandidates) -> StepLoss:
    """``1 - max F1(gold, c)`` over candidates scoring at least the threshold.

    Expressed in the negated score threshold so that the set grows with the
    parameter; an empty set has loss 1.
    """
    f1 = [max(token_f1(c, a) for a in item.gold_answers) for c, _ in item.candidates]
    scores = np.array([s for _, s in item.candidates])
    order = np.argsort(-scores, kind="stable")
    bps: list[float] = []
    values = [1.0]
    best = 0.0
    i = 0
    while i < order.size:
        s = scores[order[i]]
        while i < order.size and scores[order[i]] == s:
            best = max(best, f1[order[i]])
            i += 1
        bps.append(-float(s))
        values.append(1.0 - best)
    return StepLoss(bps, values, meta={"parameter": NEGATED_SCORE}).canonical()
