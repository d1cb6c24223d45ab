"""Brute-force reference evaluators.

These restate each definition literally, with no shared code paths beyond
the input containers, and are used to check the fast implementations.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter, deque
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np


def _binom_terms(n: int, p: float):
    """Integer numerators ``C(n,k) a^k b^(n-k)`` over the common denominator ``d^n``."""
    a, d = Fraction(p).as_integer_ratio()
    b = d - a
    b_pow = [1] * (n + 1)
    for j in range(1, n + 1):
        b_pow[j] = b_pow[j - 1] * b
    a_k = 1
    for k in range(n + 1):
        yield math.comb(n, k) * a_k * b_pow[n - k]
        a_k *= a
    return d**n


def binom_cdf_exact(n: int, p: float, m: int) -> Fraction:
    """``P(Binomial(n, p) <= m)`` as an exact rational in the float ``p``."""
    d = Fraction(p).as_integer_ratio()[1]
    total = 0
    for k, term in enumerate(_binom_terms(n, p)):
        if k > m:
            break
        total += term
    return Fraction(total, d**n)


def binom_cdf_exact_all(n: int, p: float) -> list[float]:
    """``[P(X <= m) for m in 0..n]``, each exact sum rounded once to float."""
    d = Fraction(p).as_integer_ratio()[1]
    den = d**n
    out, total = [], 0
    for term in _binom_terms(n, p):
        total += term
        out.append(total / den)  # int / int rounds correctly
    return out


def scan_threshold(evaluate, candidates: Sequence[float], alpha: float, bound: float, n: int):
    """First candidate where ``(sum of losses + B) / (n + 1) <= alpha`` exactly.

    ``evaluate(lam)`` returns the list of per-row losses. Returns the index
    into ``candidates`` or ``None``.
    """
    lhs_limit = Fraction(alpha) * (n + 1)
    for i, lam in enumerate(candidates):
        s = sum((Fraction(v) for v in evaluate(lam)), Fraction(0))
        if s + Fraction(bound) <= lhs_limit:
            return i
    return None


# -- loss definitions, literally ---------------------------------------------


def fnr_literal(scores: Sequence[float], labels, lam: float) -> float:
    pred = {k for k in range(len(scores)) if scores[k] >= 1 - lam}
    y = set(labels)
    return 1 - len(y & pred) / len(y)


def _tree_parts(parents: Mapping[int, int | None]):
    kids: dict[int, list[int]] = {v: [] for v in parents}
    root = None
    for v, p in parents.items():
        if p is None:
            root = v
        else:
            kids[p].append(v)
    leaves = {v for v in parents if not kids[v]}
    adj: dict[int, list[int]] = {v: list(kids[v]) for v in parents}
    for v, p in parents.items():
        if p is not None:
            adj[v].append(p)
    dist = {}
    for s in parents:
        seen = {s: 0}
        q = deque([s])
        while q:
            u = q.popleft()
            for w in adj[u]:
                if w not in seen:
                    seen[w] = seen[u] + 1
                    q.append(w)
        dist[s] = seen

    def ancestors(v):
        out = {v}
        while parents[v] is not None:
            v = parents[v]
            out.add(v)
        return out

    def leaf_desc(v):
        return {x for x in leaves if v in ancestors(x)}

    return root, leaves, dist, ancestors, leaf_desc


def graph_literal_fn(
    parents: Mapping[int, int | None],
    leaf_probs: Mapping[int, float],
    true_leaf: int,
):
    """``lam -> loss`` for the hierarchical-distance loss in the original orientation.

    Binding ancestors of the argmax leaf are those with subtree score
    ``>= -lam``; the empty intersection is the whole leaf set. Tree distances
    are computed once; the set and distance are rebuilt for every ``lam``.
    """
    root, leaves, dist, ancestors, leaf_desc = _tree_parts(parents)
    depth = max(dist[root][x] for x in leaves)
    y_hat = sorted(leaves, key=lambda v: (-leaf_probs[v], v))[0]
    desc = {v: leaf_desc(v) for v in parents}
    g = {v: math.fsum(leaf_probs[x] for x in sorted(desc[v])) for v in parents}
    chain = ancestors(y_hat)
    truth = ancestors(true_leaf)

    def loss(lam: float) -> float:
        pred = set(leaves)
        for a in chain:
            if g[a] >= -lam:
                pred &= desc[a]
        d_h = min(min(dist[a][s] for a in truth) for s in pred)
        return d_h / depth if depth else 0.0

    return loss


def graph_literal(
    parents: Mapping[int, int | None],
    leaf_probs: Mapping[int, float],
    true_leaf: int,
    lam: float,
) -> float:
    return graph_literal_fn(parents, leaf_probs, true_leaf)(lam)


_ARTICLES = re.compile(r"\b(a|an|the)\b")


def _normalize(s: str) -> str:
    s = s.lower()
    s = "".join(ch for ch in s if ch not in set(string.punctuation))
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def squad_f1(prediction: str, ground_truth: str) -> float:
    pred_tokens = _normalize(prediction).split()
    gold_tokens = _normalize(ground_truth).split()
    if len(pred_tokens) == 0 or len(gold_tokens) == 0:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = 1.0 * num_same / len(pred_tokens)
    recall = 1.0 * num_same / len(gold_tokens)
    return (2 * precision * recall) / (precision + recall)


def f1_literal(candidates, gold_answers, lam: float) -> float:
    """``1 - max F1`` over candidates with score ``>= lam`` (original orientation)."""
    chosen = [c for c, s in candidates if s >= lam]
    scores = [squad_f1(c, a) for c in chosen for a in gold_answers]
    return 1 - max(scores) if scores else 1.0


def probe_points(cuts: Sequence[float], pad: float = 1.0) -> list[float]:
    """Points inside every regime delimited by ``cuts``: ends, midpoints, neighbours."""
    u = sorted(set(float(c) for c in cuts))
    if not u:
        return [0.0]
    pts = [u[0] - pad, u[-1] + pad]
    for a, b in zip(u, u[1:]):
        mid = a + (b - a) / 2
        if a < mid < b:  # adjacent floats leave no interior
            pts.append(mid)
    return sorted(set(p for p in pts if math.isfinite(p)))


def probe_points_with_edges(cuts: Sequence[float], pad: float = 1.0) -> list[float]:
    """:func:`probe_points` plus each cut and its float neighbours."""
    pts = set(probe_points(cuts, pad))
    for c in cuts:
        c = float(c)
        pts.update((c, float(np.nextafter(c, -math.inf)), float(np.nextafter(c, math.inf))))
    return sorted(pts)
