"""Exact distributions of the root color given a partial leaf coloring.

Everything here is deterministic.  The central recursion computes, per
color c, the probability that a uniformly random proper coloring
consistent with the given leaf data puts c at the root.  At a leaf the
answer is a point mass (or uniform if the leaf is unconstrained); one
level up, the weight of c is the product over children of (1 - child's
probability of c), renormalized.

Two backends:

* "rational" carries `fractions.Fraction` values and is exact; intended
  for trees up to roughly 10^4 vertices.
* "float" carries per-color log-weights and normalizes by subtracting the
  maximum, which keeps deep products stable; it is also available in a
  batched form used heavily by the samplers.

Independent routes to the same numbers (brute-force enumeration, the
big-integer counting DP) live here as well, so tests can cross-check
without shared code paths.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import CapacityError, InfeasibleBoundaryError, ValidationError
from .tree_model import (
    STAR,
    PartialLeafColoring,
    TreeShape,
    check_leaf_coloring,
    is_allowed,
)

ENUMERATION_GUARD = 10**8


@dataclass(frozen=True)
class ColorDistribution:
    """A distribution over colors 1..k, tagged with the backend that made it."""

    k: int
    weights: tuple
    backend: str

    def __post_init__(self):
        if self.k < 2:
            raise ValidationError(f"need at least 2 colors, got k={self.k}")
        if self.backend not in ("rational", "float"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        if len(self.weights) != self.k:
            raise ValidationError("weight vector length must equal k")
        if any(w < 0 for w in self.weights):
            raise ValidationError("weights must be nonnegative")
        total = sum(self.weights)
        if self.backend == "rational":
            if total != 1:
                raise ValidationError(f"rational weights must sum to 1, got {total}")
        elif abs(total - 1.0) > 1e-9:
            raise ValidationError(f"float weights must sum to 1, got {total}")

    def probability(self, color: int):
        if not 1 <= color <= self.k:
            raise ValidationError(f"color {color} out of range 1..{self.k}")
        return self.weights[color - 1]

    def as_floats(self) -> np.ndarray:
        return np.array([float(w) for w in self.weights], dtype=float)


@dataclass(frozen=True)
class BiasReport:
    """Per-color deviation of the root law from uniform, two ways.

    `alpha[c-1]` averages |P(root=c | leaves) - 1/k| over leaf colorings
    drawn from the unconditioned measure; `beta[c-1]` is the deviation of
    the re-inferred root law after conditioning the *leaves* on root
    color c.
    """

    k: int
    alpha: tuple
    beta: tuple
    exact: bool

    def __post_init__(self):
        if len(self.alpha) != self.k or len(self.beta) != self.k:
            raise ValidationError("alpha/beta must have one entry per color")
        for x in (*self.alpha, *self.beta):
            if not 0 <= x <= 1:
                raise ValidationError("bias values must lie in [0, 1]")


def p_max(dist: ColorDistribution):
    """Largest single-color probability."""
    return max(dist.weights)


def tv_distance(d1: ColorDistribution, d2: ColorDistribution):
    if d1.k != d2.k:
        raise ValidationError("distributions have different color counts")
    diffs = [abs(a - b) for a, b in zip(d1.weights, d2.weights)]
    return sum(diffs) / 2


# ---------------------------------------------------------------------------
# rational recursion


def _leaf_message(value: int, k: int) -> tuple:
    if value == STAR:
        u = Fraction(1, k)
        return (u,) * k
    return tuple(Fraction(1) if c == value else Fraction(0) for c in range(1, k + 1))


def _combine_rational(msgs: list, k: int) -> tuple:
    weights = []
    for c in range(k):
        w = Fraction(1)
        for m in msgs:
            w *= 1 - m[c]
            if w == 0:
                break
        weights.append(w)
    total = sum(weights)
    if total == 0:
        raise InfeasibleBoundaryError("subtree admits no proper extension")
    return tuple(w / total for w in weights)


def _up_message_rational(values: np.ndarray, k: int, branching: int, height: int) -> tuple:
    """Root message of a complete subtree over the given leaf slice."""
    level = [_leaf_message(int(v), k) for v in values]
    for _ in range(height):
        level = [
            _combine_rational(level[i : i + branching], k)
            for i in range(0, len(level), branching)
        ]
    return level[0]


def root_marginal(
    shape: TreeShape,
    k: int,
    coloring: PartialLeafColoring,
    forbidden_root: int | None = None,
    backend: str = "rational",
) -> ColorDistribution:
    """Distribution of the root color given the leaf coloring.

    The coloring must be allowed (checked up front); `forbidden_root`
    additionally conditions the root to avoid one color.
    """
    check_leaf_coloring(shape, coloring)
    _check_colors_match(k, coloring)
    if not is_allowed(shape, k, coloring):
        raise InfeasibleBoundaryError("leaf coloring admits no proper extension")
    if backend == "rational":
        weights = list(_up_message_rational(coloring.values, k, shape.branching, shape.depth))
    elif backend == "float":
        weights = list(root_marginal_batch(shape, k, coloring.values[np.newaxis, :])[0])
    else:
        raise ValidationError(f"unknown backend {backend!r}")
    if forbidden_root is not None:
        if not 1 <= forbidden_root <= k:
            raise ValidationError(f"forbidden_root {forbidden_root} out of range 1..{k}")
        weights[forbidden_root - 1] = type(weights[forbidden_root - 1])(0)
        total = sum(weights)
        if total == 0:
            raise InfeasibleBoundaryError(
                "no proper extension avoids the forbidden root color"
            )
        weights = [w / total for w in weights]
    return ColorDistribution(k, tuple(weights), backend)


# ---------------------------------------------------------------------------
# batched float recursion


def _normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    """Rows of log-weights -> probability rows; all -inf rows are infeasible."""
    mx = logw.max(axis=-1)
    if np.isneginf(mx).any():
        raise InfeasibleBoundaryError("a leaf coloring admits no proper extension")
    p = np.exp(logw - mx[..., np.newaxis])
    p /= p.sum(axis=-1, keepdims=True)
    return p


def _combine_up_float(msgs: np.ndarray, branching: int, levels: int) -> np.ndarray:
    """Fold (batch, width, k) probability messages up `levels` times."""
    for _ in range(levels):
        grouped = msgs.reshape(msgs.shape[0], -1, branching, msgs.shape[-1])
        with np.errstate(divide="ignore"):
            logw = np.log1p(-np.clip(grouped, 0.0, 1.0)).sum(axis=2)
        msgs = _normalize_log_weights(logw)
    return msgs


def root_marginal_batch(shape: TreeShape, k: int, leaf_rows: np.ndarray) -> np.ndarray:
    """Float-backend root marginals for many leaf colorings at once.

    Rows use 0 for unconstrained leaves.  Returns an array of shape
    (batch, k).  Infeasible rows raise rather than produce NaNs.
    """
    if k < 2:
        raise ValidationError(f"need at least 2 colors, got k={k}")
    rows = np.asarray(leaf_rows)
    if rows.ndim != 2 or rows.shape[1] != shape.leaf_count:
        raise ValidationError("leaf_rows must be (batch, leaf_count)")
    if rows.size and (rows.min() < 0 or rows.max() > k):
        raise ValidationError(f"leaf entries must lie in [0, {k}]")
    eye = np.eye(k, dtype=float)
    msgs = np.where(
        (rows == STAR)[..., np.newaxis],
        np.full(k, 1.0 / k),
        eye[np.clip(rows.astype(np.int64), 1, k) - 1],
    )
    msgs = _combine_up_float(msgs, shape.branching, shape.depth)
    return msgs[:, 0, :]


def root_marginal_from_block_counts(
    shape: TreeShape, k: int, block_counts: np.ndarray
) -> np.ndarray:
    """Root marginals given only per-color leaf counts of each bottom block.

    The recursion one level above the leaves sees a block of siblings only
    through the set of colors the block uses, so per-block counts are a
    sufficient statistic.  Deep-tree samplers exploit this to skip
    materializing the leaf level.  Requires depth >= 1.
    """
    if shape.depth < 1:
        raise ValidationError("block counts need a tree of depth >= 1")
    counts = np.asarray(block_counts)
    expected_blocks = shape.branching ** (shape.depth - 1)
    if counts.ndim != 3 or counts.shape[1] != expected_blocks or counts.shape[2] != k:
        raise ValidationError("block_counts must be (batch, block_count, k)")
    msgs = (counts == 0).astype(float)
    sums = msgs.sum(axis=-1, keepdims=True)
    if (sums == 0).any():
        raise InfeasibleBoundaryError("a bottom block uses all colors")
    msgs /= sums
    msgs = _combine_up_float(msgs, shape.branching, shape.depth - 1)
    return msgs[:, 0, :]


# ---------------------------------------------------------------------------
# independent routes: enumeration and counting


def _guard_enumeration(count_log: float, what: str) -> None:
    if count_log > math.log(ENUMERATION_GUARD):
        raise CapacityError(f"{what} exceeds the enumeration guard of {ENUMERATION_GUARD:.0e}")


def root_marginal_bruteforce(
    shape: TreeShape,
    k: int,
    coloring: PartialLeafColoring,
    forbidden_root: int | None = None,
) -> ColorDistribution:
    """Exact root law by enumerating every coloring of the unconstrained
    vertices and filtering for properness.  Deliberately shares nothing
    with the recursion."""
    check_leaf_coloring(shape, coloring)
    _check_colors_match(k, coloring)
    n = shape.vertex_count
    b = shape.branching
    first_leaf = shape.level_start(shape.depth)
    fixed_vals = np.zeros(n, dtype=np.int16)
    fixed_vals[first_leaf:] = coloring.values
    free = np.flatnonzero(fixed_vals == STAR)
    _guard_enumeration(len(free) * math.log(k), "bruteforce state space")
    total_candidates = k ** len(free)
    parents = (np.arange(1, n) - 1) // b
    counts = np.zeros(k, dtype=np.int64)
    chunk = 1 << 16
    for start in range(0, total_candidates, chunk):
        idx = np.arange(start, min(start + chunk, total_candidates), dtype=np.int64)
        assign = np.broadcast_to(fixed_vals, (len(idx), n)).copy()
        for j, v in enumerate(free):
            assign[:, v] = (idx // k**j) % k + 1
        proper = (assign[:, 1:] != assign[:, parents]).all(axis=1)
        if forbidden_root is not None:
            proper &= assign[:, 0] != forbidden_root
        counts += np.bincount(assign[proper, 0].astype(np.int64), minlength=k + 1)[1:]
    total = int(counts.sum())
    if total == 0:
        raise InfeasibleBoundaryError("no proper coloring matches the constraints")
    return ColorDistribution(k, tuple(Fraction(int(c), total) for c in counts), "rational")


def count_extensions(shape: TreeShape, k: int, coloring: PartialLeafColoring) -> int:
    """Number of proper colorings of the whole tree consistent with the leaves.

    Bottom-up counting DP with exact big integers; O(vertices * k^2).
    """
    check_leaf_coloring(shape, coloring)
    _check_colors_match(k, coloring)
    level = [
        [1] * k if v == STAR else [1 if c == v else 0 for c in range(1, k + 1)]
        for v in map(int, coloring.values)
    ]
    b = shape.branching
    for _ in range(shape.depth):
        nxt = []
        for i in range(0, len(level), b):
            group = level[i : i + b]
            totals = [sum(cnt) for cnt in group]
            vec = []
            for c in range(k):
                w = 1
                for cnt, tot in zip(group, totals):
                    w *= tot - cnt[c]
                    if w == 0:
                        break
                vec.append(w)
            nxt.append(vec)
        level = nxt
    return sum(level[0])


# ---------------------------------------------------------------------------
# conditional marginal at an interior vertex


def vertex_conditional_marginal(
    shape: TreeShape,
    k: int,
    coloring: PartialLeafColoring,
    u: int,
    removed_child: int | None = None,
    parent_color: int | None = None,
    backend: str = "rational",
) -> ColorDistribution:
    """Exact color law at vertex u after deleting one child's subtree.

    The measure is uniform over proper colorings of the pruned tree that
    agree with `coloring` on the remaining leaves.  If `parent_color` is
    set, the neighbor above u (a fresh one, if u is the root) is pinned to
    that color; leaves outside u's subtree then no longer matter.
    """
    check_leaf_coloring(shape, coloring)
    _check_colors_match(k, coloring)
    shape._check_vertex(u)
    if backend not in ("rational", "float"):
        raise ValidationError(f"unknown backend {backend!r}")
    b = shape.branching
    kids = [] if shape.is_leaf(u) else list(range(u * b + 1, u * b + b + 1))
    if removed_child is not None and removed_child not in kids:
        raise ValidationError(f"{removed_child} is not a child of {u}")
    if parent_color is not None and not 1 <= parent_color <= k:
        raise ValidationError(f"parent_color {parent_color} out of range 1..{k}")

    def subtree_message(v: int) -> tuple:
        lo, hi = shape.leaf_slice(v)
        return _up_message_rational(coloring.values[lo:hi], k, b, shape.height_of(v))

    if shape.is_leaf(u):
        # u carries its own leaf constraint
        lo, _ = shape.leaf_slice(u)
        weights = list(_leaf_message(int(coloring.values[lo]), k))
    else:
        weights = [Fraction(1)] * k
    for child in kids:
        if child == removed_child:
            continue
        m = subtree_message(child)
        weights = [w * (1 - m[c]) for c, w in enumerate(weights)]

    if parent_color is not None:
        weights[parent_color - 1] = Fraction(0)
    elif u != 0:
        down = _downward_message(shape, k, coloring, u, subtree_message)
        weights = [w * (1 - down[c]) for c, w in enumerate(weights)]

    total = sum(weights)
    if total == 0:
        raise InfeasibleBoundaryError("pruned instance admits no proper coloring")
    probs = tuple(w / total for w in weights)
    if backend == "float":
        return ColorDistribution(k, tuple(float(p) for p in probs), "float")
    return ColorDistribution(k, probs, "rational")


def _downward_message(shape, k, coloring, u, subtree_message) -> tuple:
    """Color law of u's parent in the tree with u's subtree removed."""
    b = shape.branching
    path = [u]
    while path[-1] != 0:
        path.append((path[-1] - 1) // b)
    path.reverse()  # root ... u
    down = None
    for vertex, excluded in zip(path, path[1:]):
        weights = [Fraction(1)] * k
        for child in range(vertex * b + 1, vertex * b + b + 1):
            if child == excluded:
                continue
            m = subtree_message(child)
            weights = [w * (1 - m[c]) for c, w in enumerate(weights)]
        if down is not None:
            weights = [w * (1 - down[c]) for c, w in enumerate(weights)]
        total = sum(weights)
        if total == 0:
            raise InfeasibleBoundaryError("pruned instance admits no proper coloring")
        down = tuple(w / total for w in weights)
    return down


def tv_root(
    shape: TreeShape,
    k: int,
    first: PartialLeafColoring,
    second: PartialLeafColoring,
    backend: str = "rational",
):
    """Total-variation distance between the two root laws."""
    d1 = root_marginal(shape, k, first, backend=backend)
    d2 = root_marginal(shape, k, second, backend=backend)
    return tv_distance(d1, d2)


# ---------------------------------------------------------------------------
# exact bias by full enumeration


@lru_cache(maxsize=None)
def _bias_tables(branching: int, depth: int, k: int):
    shape = TreeShape(branching, depth)
    L = shape.leaf_count
    _guard_enumeration(L * math.log(k), "leaf-coloring enumeration")
    grand_total = 0
    abs_dev = [0] * k  # sum over X of |k * omega_c - total(X)|
    cross = [[Fraction(0)] * k for _ in range(k)]  # sum of omega_c * omega_c' / total(X)
    for combo in itertools.product(range(1, k + 1), repeat=L):
        level = [[1 if c == v else 0 for c in range(1, k + 1)] for v in combo]
        for _ in range(depth):
            nxt = []
            for i in range(0, len(level), branching):
                group = level[i : i + branching]
                totals = [sum(cnt) for cnt in group]
                nxt.append(
                    [
                        math.prod(tot - cnt[c] for cnt, tot in zip(group, totals))
                        for c in range(k)
                    ]
                )
            level = nxt
        omega = level[0]
        total = sum(omega)
        if total == 0:
            continue
        grand_total += total
        for c in range(k):
            abs_dev[c] += abs(k * omega[c] - total)
            row = cross[c]
            for c2 in range(k):
                if omega[c] and omega[c2]:
                    row[c2] += Fraction(omega[c] * omega[c2], total)
    alphas = tuple(Fraction(s, k * grand_total) for s in abs_dev)
    # row c of the matrix: law of the re-inferred root given true root c
    matrix = tuple(
        tuple(Fraction(k, grand_total) * cell for cell in row) for row in cross
    )
    return alphas, matrix


def down_up_matrix(shape: TreeShape, k: int) -> tuple:
    """Row c: expected root law recovered from leaves broadcast from root c."""
    if k < 2:
        raise ValidationError(f"need at least 2 colors, got k={k}")
    _, matrix = _bias_tables(shape.branching, shape.depth, k)
    return matrix


def exact_bias(shape: TreeShape, k: int) -> BiasReport:
    """Exact per-color alpha and beta by enumerating all full leaf colorings."""
    if k < 2:
        raise ValidationError(f"need at least 2 colors, got k={k}")
    alphas, matrix = _bias_tables(shape.branching, shape.depth, k)
    betas = tuple(abs(matrix[c][c] - Fraction(1, k)) for c in range(k))
    return BiasReport(k=k, alpha=alphas, beta=betas, exact=True)


def _check_colors_match(k: int, coloring: PartialLeafColoring) -> None:
    if coloring.k != k:
        raise ValidationError(f"coloring was built for k={coloring.k}, not k={k}")
