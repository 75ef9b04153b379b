"""Top-down sampling of uniform proper colorings.

Coloring the root uniformly and each child uniformly among the colors its
parent does not use yields exactly the uniform distribution over proper
colorings of the tree, so "broadcast" samples double as Gibbs samples.
Levels are generated as whole numpy arrays; the only per-vertex state
that ever exists is the level currently being produced.

`sample_block_counts` stops one level above the leaves and draws, for
each bottom block, the multinomial color counts of its leaves instead of
the leaves themselves.  Root-marginal recursions only see a bottom block
through which colors it uses, so this is a lossless shortcut for deep
wide trees (see exact_engine.root_marginal_from_block_counts).
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .rng import RandomSource
from .tree_model import FullColoring, PartialLeafColoring, TreeShape

#: switch from materialized leaves to per-block counts above this leaf count
BLOCK_COUNT_THRESHOLD = 4096


def _check_k(k: int) -> None:
    if k < 2:
        raise ValidationError(f"need at least 2 colors, got k={k}")


def _root_row(k: int, n: int, gen: np.random.Generator, root_color) -> np.ndarray:
    if root_color is None:
        return gen.integers(1, k + 1, size=(n, 1), dtype=np.int16)
    color = int(root_color)
    if not 1 <= color <= k:
        raise ValidationError(f"root color {color} out of range 1..{k}")
    return np.full((n, 1), color, dtype=np.int16)


def _next_level(parents: np.ndarray, k: int, branching: int, gen) -> np.ndarray:
    """Children drawn uniformly from the k-1 colors their parent avoids.

    Branch-free: draw r in 1..k-1 and shift it past the parent's color.
    """
    stretched = np.repeat(parents, branching, axis=1)
    r = gen.integers(1, k, size=stretched.shape, dtype=np.int16)
    return r + (r >= stretched)


def sample_levels(
    shape: TreeShape,
    k: int,
    n: int,
    rng: RandomSource,
    root_color=None,
    down_to: int | None = None,
) -> list[np.ndarray]:
    """Rows of sampled colors per level, from the root down to depth `down_to`."""
    _check_k(k)
    stop = shape.depth if down_to is None else down_to
    if not 0 <= stop <= shape.depth:
        raise ValidationError("down_to out of range")
    gen = rng.generator
    levels = [_root_row(k, n, gen, root_color)]
    for _ in range(stop):
        levels.append(_next_level(levels[-1], k, shape.branching, gen))
    return levels


def sample_full(
    shape: TreeShape, k: int, rng: RandomSource, root_color=None
) -> FullColoring:
    """One uniform proper coloring of the whole tree."""
    levels = sample_levels(shape, k, 1, rng, root_color)
    return FullColoring(k, np.concatenate([lvl[0] for lvl in levels]))


def sample_leaves_given_root(
    shape: TreeShape, k: int, root_color: int, rng: RandomSource
) -> PartialLeafColoring:
    """Leaf row of a uniform proper coloring whose root has the given color."""
    levels = sample_levels(shape, k, 1, rng, root_color)
    return PartialLeafColoring(k, levels[-1][0])


def sample_leaf_rows(
    shape: TreeShape, k: int, n: int, rng: RandomSource, root_colors=None
) -> np.ndarray:
    """(n, leaf_count) leaf rows; `root_colors` may be None, a scalar, or (n,)."""
    _check_k(k)
    gen = rng.generator
    if root_colors is None or np.isscalar(root_colors):
        level = _root_row(k, n, gen, root_colors)
    else:
        level = np.asarray(root_colors, dtype=np.int16).reshape(n, 1)
        if level.size and (level.min() < 1 or level.max() > k):
            raise ValidationError(f"root colors must lie in 1..{k}")
    for _ in range(shape.depth):
        level = _next_level(level, k, shape.branching, gen)
    return level


def sample_block_counts(
    shape: TreeShape, k: int, n: int, rng: RandomSource, root_colors=None
) -> np.ndarray:
    """(n, blocks, k) color counts of each bottom block's leaves.

    Distributed exactly as counting the leaves of `sample_leaf_rows`
    block by block, without generating them.
    """
    _check_k(k)
    if shape.depth < 1:
        raise ValidationError("block counts need a tree of depth >= 1")
    gen = rng.generator
    if root_colors is None or np.isscalar(root_colors):
        level = _root_row(k, n, gen, root_colors)
    else:
        level = np.asarray(root_colors, dtype=np.int16).reshape(n, 1)
        if level.size and (level.min() < 1 or level.max() > k):
            raise ValidationError(f"root colors must lie in 1..{k}")
    for _ in range(shape.depth - 1):
        level = _next_level(level, k, shape.branching, gen)
    # Per-block leaf law: multinomial over the k-1 colors differing from
    # the parent.  The counts over "allowed slots" (1st, 2nd, ... color
    # != parent) have a fixed uniform multinomial law, so draw them as a
    # chain of scalar-p conditional binomials and scatter each slot past
    # the parent's color.  Identical law, no batched-pvals multinomial.
    remaining = np.full(level.shape, shape.branching, dtype=np.int64)
    slot_counts = []
    for slot in range(k - 1):
        if slot == k - 2:
            slot_counts.append(remaining)
        else:
            drawn = gen.binomial(remaining, 1.0 / (k - 1 - slot))
            slot_counts.append(drawn)
            remaining = remaining - drawn
    slots = np.stack(slot_counts, axis=-1)
    slot_index = np.arange(k - 1)
    colors = slot_index + (slot_index >= (level - 1)[..., np.newaxis])
    counts = np.zeros(level.shape + (k,), dtype=np.int16)
    np.put_along_axis(counts, colors.astype(np.int64), slots.astype(np.int16), axis=-1)
    return counts


def sample_down_up(
    shape: TreeShape, k: int, root_color: int, rng: RandomSource, backend: str = "float"
) -> int:
    """Broadcast from `root_color`, then redraw a root color from the
    exact posterior given only the sampled leaves."""
    from . import exact_engine  # local import to keep module load cheap

    leaves = sample_leaves_given_root(shape, k, root_color, rng)
    dist = exact_engine.root_marginal(shape, k, leaves, backend=backend)
    u = rng.generator.random()
    acc = 0.0
    for c in range(1, k + 1):
        acc += float(dist.probability(c))
        if u < acc:
            return c
    return k


def posterior_rows(
    shape: TreeShape, k: int, n: int, rng: RandomSource, root_colors=None
) -> np.ndarray:
    """(n, k) float root posteriors for n independent broadcast samples.

    Picks the materialized-leaf route or the block-count route by size;
    both produce the same distribution.
    """
    from . import exact_engine

    if shape.depth == 0:
        # the root is the only leaf: posterior is a point mass on its color
        roots = sample_leaf_rows(shape, k, n, rng, root_colors)[:, 0]
        return np.eye(k, dtype=float)[roots.astype(np.int64) - 1]
    if shape.leaf_count > BLOCK_COUNT_THRESHOLD:
        counts = sample_block_counts(shape, k, n, rng, root_colors)
        return exact_engine.root_marginal_from_block_counts(shape, k, counts)
    rows = sample_leaf_rows(shape, k, n, rng, root_colors)
    return exact_engine.root_marginal_batch(shape, k, rows)


def sample_from_rows(rows: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Draw one color (1..k) from each probability row."""
    cum = np.cumsum(rows, axis=1)
    u = gen.random((rows.shape[0], 1))
    idx = (cum < u).sum(axis=1)
    return (np.minimum(idx, rows.shape[1] - 1) + 1).astype(np.int16)
