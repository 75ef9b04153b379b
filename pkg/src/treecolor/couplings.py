"""Coupled pairs of leaf colorings and the estimators built on them.

The central construction couples two broadcasts whose roots disagree.  At
a vertex carrying disagreement (a, b), each child draws u uniform on
[k]\\{a}; the first copy takes u, the second takes u unless u = b, in
which case it takes a and the child carries disagreement (b, a).  Both
marginals are exact broadcasts, disagreements stay transpositions, and a
child goes into disagreement with probability exactly 1/(k-1).  Agreeing
vertices sample once and share.

Sampling is done level by level over whole batches; the second copy is
stored as the first plus a disagreement overlay, so agreeing subtrees are
never duplicated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import broadcast_sampler, exact_engine
from .errors import InfeasibleChannelError, ValidationError
from .estimators import Estimate, TailEstimate, mean_estimate, tail_estimate
from .exact_engine import ColorDistribution
from .rng import RandomSource
from .tree_model import PartialLeafColoring, TreeShape, check_leaf_coloring

_BATCH_ELEMS = 4_000_000


@dataclass(frozen=True, eq=False)
class CouplingPair:
    """Two leaf colorings plus the set of positions where they differ."""

    x: PartialLeafColoring
    y: PartialLeafColoring
    disagreements: frozenset

    def __post_init__(self):
        if self.x.k != self.y.k or len(self.x) != len(self.y):
            raise ValidationError("coupled colorings must share shape and k")
        actual = frozenset(int(i) for i in np.flatnonzero(self.x.values != self.y.values))
        if actual != self.disagreements:
            raise ValidationError("disagreement set does not match the colorings")

    @property
    def hamming(self) -> int:
        return len(self.disagreements)


def _check_color(k: int, c: int, name: str) -> int:
    c = int(c)
    if not 1 <= c <= k:
        raise ValidationError(f"{name}={c} out of range 1..{k}")
    return c


def coupled_leaf_rows(
    shape: TreeShape, k: int, c1: int, c2: int, n: int, rng: RandomSource
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """n coupled pairs as arrays: first-copy rows, second-copy rows, and the
    boolean disagreement overlay."""
    if k < 2:
        raise ValidationError(f"need at least 2 colors, got k={k}")
    c1 = _check_color(k, c1, "c1")
    c2 = _check_color(k, c2, "c2")
    gen = rng.generator
    x = np.full((n, 1), c1, dtype=np.int16)
    if c1 == c2:
        for _ in range(shape.depth):
            x = broadcast_sampler._next_level(x, k, shape.branching, gen)
        return x, x.copy(), np.zeros_like(x, dtype=bool)
    disagree = np.ones((n, 1), dtype=bool)
    partner = np.full((n, 1), c2, dtype=np.int16)
    for _ in range(shape.depth):
        child_x = broadcast_sampler._next_level(x, k, shape.branching, gen)
        b = shape.branching
        parent_x = np.repeat(x, b, axis=1)
        parent_dis = np.repeat(disagree, b, axis=1)
        parent_partner = np.repeat(partner, b, axis=1)
        child_dis = parent_dis & (child_x == parent_partner)
        # a child in disagreement flips to its parent's first-copy color
        partner = np.where(child_dis, parent_x, 0).astype(np.int16)
        x, disagree = child_x, child_dis
    y = np.where(disagree, partner, x).astype(np.int16)
    return x, y, disagree


def downward_couple(
    shape: TreeShape, k: int, c1: int, c2: int, rng: RandomSource
) -> CouplingPair:
    """One coupled pair of leaf colorings with roots pinned to c1 and c2."""
    x, y, disagree = coupled_leaf_rows(shape, k, c1, c2, 1, rng)
    return CouplingPair(
        x=PartialLeafColoring(k, x[0]),
        y=PartialLeafColoring(k, y[0]),
        disagreements=frozenset(int(i) for i in np.flatnonzero(disagree[0])),
    )


def estimate_hamming(
    shape: TreeShape, k: int, c1: int, c2: int, samples: int, rng: RandomSource
) -> Estimate:
    """Mean number of disagreeing leaves across coupled pairs."""
    if samples <= 0:
        raise ValidationError("samples must be positive")
    chunk = max(1, _BATCH_ELEMS // max(shape.leaf_count, 1))
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        _, _, disagree = coupled_leaf_rows(shape, k, c1, c2, m, rng)
        h = disagree.sum(axis=1).astype(float)
        total += float(h.sum())
        total_sq += float((h * h).sum())
        done += m
    return mean_estimate(total, total_sq, samples)


# ---------------------------------------------------------------------------
# the disagreement branching process


def simulate_disagreement_process(
    branching: int, k: int, depth: int, rng: RandomSource
) -> int:
    """One draw of the chain D_0 = 1, D_{i+1} ~ Bin(branching * D_i, 1/(k-1))."""
    return int(disagreement_counts(branching, k, depth, 1, rng)[0])


def disagreement_counts(
    branching: int, k: int, depth: int, n: int, rng: RandomSource
) -> np.ndarray:
    if branching < 2 or k < 2:
        raise ValidationError("need branching >= 2 and k >= 2")
    if depth < 0:
        raise ValidationError("depth must be >= 0")
    gen = rng.generator
    counts = np.ones(n, dtype=np.int64)
    for _ in range(depth):
        counts = gen.binomial(branching * counts, 1.0 / (k - 1))
    return counts


def hamming_tail(
    branching: int, k: int, depth: int, threshold: float, samples: int, rng: RandomSource
) -> TailEstimate:
    """Monte Carlo Pr[D_depth > threshold] for the branching process."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    chunk = max(1, _BATCH_ELEMS // max(depth, 1))
    successes = 0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        counts = disagreement_counts(branching, k, depth, m, rng)
        successes += int((counts > threshold).sum())
        done += m
    return tail_estimate(threshold, successes, samples)


def branching_mean(
    branching: int, k: int, depth: int, samples: int, rng: RandomSource
) -> Estimate:
    """Mean of D_depth across independent branching-process runs."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    chunk = max(1, _BATCH_ELEMS // max(depth, 1))
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        counts = disagreement_counts(branching, k, depth, m, rng).astype(float)
        total += float(counts.sum())
        total_sq += float((counts * counts).sum())
        done += m
    return mean_estimate(total, total_sq, samples)


def hamming_tail_tree(
    shape: TreeShape,
    k: int,
    c1: int,
    c2: int,
    threshold: float,
    samples: int,
    rng: RandomSource,
) -> TailEstimate:
    """Pr[number of disagreeing leaves > threshold] under the tree coupling."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    chunk = max(1, _BATCH_ELEMS // max(shape.leaf_count, 1))
    successes = 0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        _, _, disagree = coupled_leaf_rows(shape, k, c1, c2, m, rng)
        successes += int((disagree.sum(axis=1) > threshold).sum())
        done += m
    return tail_estimate(threshold, successes, samples)


# ---------------------------------------------------------------------------
# the upward channel


def upward_channel_tv(dist: ColorDistribution, c1: int, c2: int):
    """Distance between the laws of a fresh neighbor's other endpoint when
    the new vertex is pinned to c1 versus c2.

    Equals max of mu(c1)/(1-mu(c2)) and mu(c2)/(1-mu(c1)).
    """
    c1 = _check_color(dist.k, c1, "c1")
    c2 = _check_color(dist.k, c2, "c2")
    p1 = dist.probability(c1)
    p2 = dist.probability(c2)
    if p1 == 1 or p2 == 1:
        raise InfeasibleChannelError(
            "conditioning forbids a color of probability 1; the channel is degenerate"
        )
    return max(p1 / (1 - p2), p2 / (1 - p1))


def channel_tv_bound(dist: ColorDistribution):
    """The coarser bound p_max/(1 - p_max), valid for every color pair."""
    p = exact_engine.p_max(dist)
    if p == 1:
        raise InfeasibleChannelError("distribution is a point mass; bound diverges")
    return p / (1 - p)


# ---------------------------------------------------------------------------
# interpolation between two leaf colorings


def interpolation_path(
    x: PartialLeafColoring, y: PartialLeafColoring
) -> list[PartialLeafColoring]:
    """x, ..., all differing sites unconstrained, ..., y; one leaf at a time.

    Differing sites are visited in ascending leaf order.  Consecutive
    elements differ in exactly one position.
    """
    if x.k != y.k or len(x) != len(y):
        raise ValidationError("interpolation endpoints must share shape and k")
    sites = [int(i) for i in np.flatnonzero(x.values != y.values)]
    path = [x]
    vals = x.values.copy()
    for i in sites:
        vals[i] = 0
        path.append(PartialLeafColoring(x.k, vals.copy()))
    for i in sites:
        vals[i] = y.values[i]
        path.append(PartialLeafColoring(x.k, vals.copy()))
    return path


def single_disagreement_report(
    shape: TreeShape, k: int, first: PartialLeafColoring, second: PartialLeafColoring
) -> dict:
    """Exact root-law TV for two colorings differing at one leaf, next to the
    product over that leaf's ancestors of p_max/(1-p_max) in the pruned tree."""
    check_leaf_coloring(shape, first)
    check_leaf_coloring(shape, second)
    diff = np.flatnonzero(first.values != second.values)
    if diff.size != 1:
        raise ValidationError("colorings must differ at exactly one leaf")
    leaf_pos = int(diff[0])
    exact_tv = exact_engine.tv_root(shape, k, first, second)
    vertex = shape.level_start(shape.depth) + leaf_pos
    bound = None
    chain = []
    factor = 1
    while vertex != 0:
        parent = (vertex - 1) // shape.branching
        dist = exact_engine.vertex_conditional_marginal(
            shape, k, first, parent, removed_child=vertex
        )
        factor = factor * channel_tv_bound(dist)
        chain.append(parent)
        vertex = parent
    bound = factor if chain else None
    return {
        "leaf": leaf_pos,
        "exact_tv": exact_tv,
        "channel_bound": bound,
        "ancestors": chain,
    }


def interpolation_tv_report(
    shape: TreeShape, k: int, x: PartialLeafColoring, y: PartialLeafColoring
) -> dict:
    """Per-step exact TVs along the interpolation path, with channel bounds.

    The sum over steps dominates the direct TV by the triangle inequality;
    each step's bound is the ancestor-product from single_disagreement_report.
    """
    path = interpolation_path(x, y)
    steps = []
    for z, z_next in zip(path, path[1:]):
        steps.append(single_disagreement_report(shape, k, z, z_next))
    total = sum(step["exact_tv"] for step in steps) if steps else 0
    return {
        "steps": steps,
        "stepwise_total": total,
        "direct_tv": exact_engine.tv_root(shape, k, x, y) if steps else 0,
    }


# ---------------------------------------------------------------------------
# Monte Carlo bias and concentration estimators


def estimate_alpha(
    shape: TreeShape, k: int, c: int, samples: int, rng: RandomSource
) -> Estimate:
    """Average deviation |P(root=c | leaves) - 1/k| over broadcast leaves."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    c = _check_color(k, c, "c")
    per_sample = max(shape.leaf_count, k)
    chunk = max(1, _BATCH_ELEMS // per_sample)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        rows = broadcast_sampler.posterior_rows(shape, k, m, rng)
        dev = np.abs(rows[:, c - 1] - 1.0 / k)
        total += float(dev.sum())
        total_sq += float((dev * dev).sum())
        done += m
    return mean_estimate(total, total_sq, samples)


@dataclass(frozen=True)
class BetaTvReport:
    """Two estimators of how far apart two conditioned root laws are.

    `coupling_bound` averages tv_root over coupled pairs (an upper bound
    by construction); `plugin_tv` is the empirical TV between re-inferred
    root colors.  Different quantities -- keep the labels apart.
    """

    coupling_bound: Estimate
    plugin_tv: Estimate


def estimate_beta_tv(
    shape: TreeShape, k: int, c1: int, c2: int, samples: int, rng: RandomSource
) -> BetaTvReport:
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    c1 = _check_color(k, c1, "c1")
    c2 = _check_color(k, c2, "c2")
    if c1 == c2:
        zero = Estimate(mean=0.0, stderr=0.0, n=samples)
        return BetaTvReport(coupling_bound=zero, plugin_tv=zero)
    per_sample = max(shape.leaf_count, k) * 2
    chunk = max(1, _BATCH_ELEMS // per_sample)
    gen = rng.generator
    total = 0.0
    total_sq = 0.0
    counts1 = np.zeros(k, dtype=np.int64)
    counts2 = np.zeros(k, dtype=np.int64)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x, y, _ = coupled_leaf_rows(shape, k, c1, c2, m, rng)
        if shape.depth == 0:
            px = np.eye(k)[x[:, 0].astype(np.int64) - 1]
            py = np.eye(k)[y[:, 0].astype(np.int64) - 1]
        else:
            px = exact_engine.root_marginal_batch(shape, k, x)
            py = exact_engine.root_marginal_batch(shape, k, y)
        tv = 0.5 * np.abs(px - py).sum(axis=1)
        total += float(tv.sum())
        total_sq += float((tv * tv).sum())
        # plug-in: independent re-inferred root draws from each conditioning
        counts1 += np.bincount(
            broadcast_sampler.sample_from_rows(px, gen).astype(np.int64), minlength=k + 1
        )[1:]
        counts2 += np.bincount(
            broadcast_sampler.sample_from_rows(py, gen).astype(np.int64), minlength=k + 1
        )[1:]
        done += m
    coupling = mean_estimate(total, total_sq, samples)
    freq1 = counts1 / samples
    freq2 = counts2 / samples
    tv_plug = 0.5 * float(np.abs(freq1 - freq2).sum())
    sign = np.sign(freq1 - freq2)
    var1 = (1.0 - float(sign @ freq1) ** 2) / samples
    var2 = (1.0 - float(sign @ freq2) ** 2) / samples
    plugin = Estimate(
        mean=tv_plug, stderr=0.5 * math.sqrt(max(0.0, var1 + var2)), n=samples
    )
    return BetaTvReport(coupling_bound=coupling, plugin_tv=plugin)


def concentration_tail(
    shape: TreeShape, k: int, c: int, threshold: float, samples: int, rng: RandomSource
) -> TailEstimate:
    """Monte Carlo Pr[|P(root=c | leaves) - 1/k| > threshold] under broadcast."""
    if not 0 < threshold < 1:
        raise ValidationError("threshold must lie in (0, 1)")
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    c = _check_color(k, c, "c")
    per_sample = max(shape.leaf_count, k)
    chunk = max(1, _BATCH_ELEMS // per_sample)
    successes = 0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        rows = broadcast_sampler.posterior_rows(shape, k, m, rng)
        dev = np.abs(rows[:, c - 1] - 1.0 / k)
        successes += int((dev > threshold).sum())
        done += m
    return tail_estimate(threshold, successes, samples)


def check_concentration_reduction(A: float, delta: float, measured_tail: float) -> bool:
    """Whether a measured tail obeys the bound 2(e^{-1/delta} + A/delta)."""
    if not 0 < delta < 0.1:
        raise ValidationError("delta must lie in (0, 1/10)")
    if A < 0:
        raise ValidationError("A must be nonnegative")
    return measured_tail <= 2 * (math.exp(-1.0 / delta) + A / delta)
