"""A recursive classifier for leaf colorings that leave the root nearly free.

A bottom block (the children of one height-1 vertex) passes when it
leaves at least branching**(eps/2) colors unused; higher vertices pass
when at most branching**(1-eps) of their children fail.  Thresholds are
real-valued and compared against integer counts; equality counts as
passing, with a 1e-9 slack so that thresholds that are mathematically
integers survive floating-point rounding.

The parameter eps is free (0 < eps <= 1/3); `epsilon_from` derives the
canonical value from how many colors there are relative to the branching
factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import broadcast_sampler
from .errors import RegimeError, ValidationError
from .estimators import Estimate, proportion_estimate
from .rng import RandomSource
from .tree_model import PartialLeafColoring, TreeShape, check_leaf_coloring

_TIE = 1e-9  # tolerance making threshold comparisons inclusive at exact ties


@dataclass(frozen=True)
class UnbiasingParams:
    epsilon: float

    def __post_init__(self):
        # compare against the exact third so Fraction(1, 3) is accepted
        if not 0 < self.epsilon <= Fraction(1, 3):
            raise ValidationError(
                f"epsilon must lie in (0, 1/3], got {self.epsilon}"
            )


def epsilon_from(k: int, branching: int) -> UnbiasingParams:
    """Canonical epsilon for k colors on a branching-ary tree.

    Writing k = C * branching / ln(branching), requires C > 1 and takes
    eps = min(C - 1, 1/3).
    """
    if k < 2 or branching < 2:
        raise ValidationError("need k >= 2 and branching >= 2")
    C = k * math.log(branching) / branching
    if C <= 1:
        raise RegimeError(
            f"k={k} colors on a {branching}-ary tree gives C={C:.4f} <= 1; "
            "no epsilon is defined in this regime"
        )
    return UnbiasingParams(min(C - 1.0, 1 / 3))


def count_unused_colors(block, k: int) -> int:
    """Colors in 1..k absent from the block; unconstrained entries never count."""
    if k < 2:
        raise ValidationError(f"need at least 2 colors, got k={k}")
    vals = np.asarray(block)
    present = np.unique(vals[(vals >= 1) & (vals <= k)])
    return k - present.size


def _level_flags(
    unused_counts: np.ndarray, branching: int, depth: int, eps: float
) -> list[np.ndarray]:
    """Pass/fail flags per height, starting from per-block unused counts."""
    base_threshold = branching ** (eps / 2)
    step_threshold = branching ** (1 - eps)
    flags = [unused_counts >= base_threshold - _TIE]
    for _ in range(depth - 1):
        failed = (~flags[-1]).reshape(flags[-1].shape[0], -1, branching).sum(axis=2)
        flags.append(failed <= step_threshold + _TIE)
    return flags


def _unused_counts_from_rows(rows: np.ndarray, branching: int, k: int) -> np.ndarray:
    blocks = rows.reshape(rows.shape[0], -1, branching)
    used = np.zeros(blocks.shape[:2], dtype=np.int64)
    for c in range(1, k + 1):
        used += (blocks == c).any(axis=2)
    return k - used


def classify_rows(
    shape: TreeShape, k: int, params: UnbiasingParams, leaf_rows: np.ndarray
) -> list[np.ndarray]:
    """Vectorized classifier; returns per-height flag arrays for every row."""
    if shape.depth < 1:
        raise ValidationError("the classifier is undefined on a depth-0 tree")
    rows = np.asarray(leaf_rows)
    if rows.ndim != 2 or rows.shape[1] != shape.leaf_count:
        raise ValidationError("leaf_rows must be (batch, leaf_count)")
    unused = _unused_counts_from_rows(rows, shape.branching, k)
    return _level_flags(unused, shape.branching, shape.depth, params.epsilon)


def is_unbiasing(
    shape: TreeShape, k: int, params: UnbiasingParams, coloring: PartialLeafColoring
) -> bool:
    check_leaf_coloring(shape, coloring)
    flags = classify_rows(shape, k, params, coloring.values[np.newaxis, :])
    return bool(flags[-1][0, 0])


def qualifying_heights(shape: TreeShape, params: UnbiasingParams) -> range:
    """Heights whose vertices the strong form inspects: h >= eps * depth, h >= 1."""
    lo = max(1, math.ceil(params.epsilon * shape.depth - _TIE))
    return range(lo, shape.depth + 1)


def is_highly_unbiasing(
    shape: TreeShape, k: int, params: UnbiasingParams, coloring: PartialLeafColoring
) -> bool:
    """Whether the restriction below *every* sufficiently high vertex passes."""
    check_leaf_coloring(shape, coloring)
    flags = classify_rows(shape, k, params, coloring.values[np.newaxis, :])
    return all(bool(flags[h - 1].all()) for h in qualifying_heights(shape, params))


def star_out(coloring: PartialLeafColoring, positions) -> PartialLeafColoring:
    """Copy of the coloring with the given leaf positions made unconstrained."""
    pos = np.asarray(list(positions), dtype=np.int64)
    if pos.size and (pos.min() < 0 or pos.max() >= len(coloring)):
        raise ValidationError("star positions out of range")
    values = coloring.values.copy()
    values[pos] = 0
    return PartialLeafColoring(coloring.k, values)


def estimate_q(
    shape: TreeShape,
    k: int,
    params: UnbiasingParams,
    samples: int,
    rng: RandomSource,
    highly: bool = False,
) -> Estimate:
    """Monte Carlo probability that a typical leaf coloring *fails* the
    classifier (or its strong form), sampling leaves by broadcast."""
    if shape.depth < 1:
        raise ValidationError("the classifier is undefined on a depth-0 tree")
    if samples <= 0:
        raise ValidationError("samples must be positive")
    heights = qualifying_heights(shape, params) if highly else None
    use_counts = shape.leaf_count > broadcast_sampler.BLOCK_COUNT_THRESHOLD
    per_sample = (
        shape.branching ** (shape.depth - 1) * k if use_counts else shape.leaf_count
    )
    chunk = max(1, 4_000_000 // max(per_sample, 1))
    failures = 0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        if use_counts:
            counts = broadcast_sampler.sample_block_counts(shape, k, m, rng)
            unused = (counts == 0).sum(axis=2)
            flags = _level_flags(unused, shape.branching, shape.depth, params.epsilon)
        else:
            rows = broadcast_sampler.sample_leaf_rows(shape, k, m, rng)
            flags = classify_rows(shape, k, params, rows)
        if highly:
            good = np.ones(m, dtype=bool)
            for h in heights:
                good &= flags[h - 1].all(axis=1)
        else:
            good = flags[-1][:, 0]
        failures += int(m - good.sum())
        done += m
    return proportion_estimate(failures, samples)
