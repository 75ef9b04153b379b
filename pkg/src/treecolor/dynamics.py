"""Heat-bath block dynamics on proper colorings, with exact diagnostics.

A move picks a uniform vertex, walks up to its `block_depth`-th ancestor
(clipped at the root), and redraws the depth-`block_depth` subtree under
that ancestor uniformly among proper completions given everything
outside: the block root's parent color and, for each vertex on the
block's lower frontier, the colors of its children outside the block.
Routing the chosen vertex to its ancestor keeps blocks full-depth and
makes every move a whole-tree resample once block_depth reaches the tree
depth; at block_depth 0 it is plain single-site Glauber.

On instances small enough to enumerate, the full transition matrix is
assembled in exact rationals; the mixing time is then computed from exact
integer matrix powers, so the 1/(2e) threshold test never relies on
floating point.  Entropy functionals over the state space support the
local-vs-global entropy comparison on the same tiny instances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .broadcast_sampler import sample_full
from .errors import CapacityError, NonErgodicChainError, ValidationError
from .rng import RandomSource, integer_below
from .tree_model import FullColoring, TreeShape, is_proper

STATE_GUARD = 10**4
_MIXING_STATE_GUARD = 400
_MIXING_STEP_GUARD = 10_000


@dataclass(frozen=True)
class DynamicsState:
    shape: TreeShape
    k: int
    coloring: FullColoring
    time: int = 0

    def __post_init__(self):
        if self.k != self.coloring.k:
            raise ValidationError("state k does not match its coloring")
        if len(self.coloring) != self.shape.vertex_count:
            raise ValidationError("coloring length does not match the tree")


def initial_state(shape: TreeShape, k: int, rng: RandomSource) -> DynamicsState:
    """A uniform proper coloring to start a chain from."""
    return DynamicsState(shape, k, sample_full(shape, k, rng), 0)


def block_vertices(shape: TreeShape, v: int, block_depth: int) -> list[int]:
    """All descendants of v within distance block_depth, v included."""
    shape._check_vertex(v)
    if block_depth < 0:
        raise ValidationError("block_depth must be >= 0")
    out = [v]
    frontier = [v]
    b = shape.branching
    for _ in range(block_depth):
        nxt = []
        for w in frontier:
            if not shape.is_leaf(w):
                nxt.extend(range(w * b + 1, w * b + b + 1))
        if not nxt:
            break
        out.extend(nxt)
        frontier = nxt
    return out


def block_root(shape: TreeShape, v: int, block_depth: int) -> int:
    """The ancestor of v whose depth-`block_depth` block contains v.

    Walking up block_depth levels (clipped at the root) before updating
    keeps chosen blocks full depth; vertices near the leaves select the
    same block as their ancestors instead of a truncated one.
    """
    shape._check_vertex(v)
    if block_depth < 0:
        raise ValidationError("block_depth must be >= 0")
    for _ in range(block_depth):
        if v == 0:
            break
        v = (v - 1) // shape.branching
    return v


def _block_levels(shape: TreeShape, v: int, block_depth: int) -> list[list[int]]:
    levels = [[v]]
    b = shape.branching
    for _ in range(block_depth):
        nxt = []
        for w in levels[-1]:
            if not shape.is_leaf(w):
                nxt.extend(range(w * b + 1, w * b + b + 1))
        if not nxt:
            break
        levels.append(nxt)
    return levels


def _allowed_masks(shape, k, values, levels) -> dict[int, int]:
    """Forbidden-color constraints from outside children, as per-vertex bitmasks."""
    b = shape.branching
    masks = {}
    frontier = levels[-1]
    for w in frontier:
        mask = (1 << k) - 1
        if not shape.is_leaf(w):
            for child in range(w * b + 1, w * b + b + 1):
                mask &= ~(1 << (int(values[child]) - 1))
        masks[w] = mask
    return masks


def heat_bath_block(
    state: DynamicsState, v: int, block_depth: int, rng: RandomSource
) -> DynamicsState:
    """Resample the block under v exactly uniformly given the outside."""
    shape, k = state.shape, state.k
    values = state.coloring.values
    gen = rng.generator
    b = shape.branching
    parent_color = None if v == 0 else int(values[(v - 1) // b])

    if block_depth == 0 or shape.is_leaf(v):
        # single-site fast path: avoid any color used by a neighbor
        forbidden = set()
        if parent_color is not None:
            forbidden.add(parent_color)
        if not shape.is_leaf(v):
            forbidden.update(int(values[c]) for c in range(v * b + 1, v * b + b + 1))
        options = [c for c in range(1, k + 1) if c not in forbidden]
        new_color = options[int(gen.integers(0, len(options)))]
        new_values = values.copy()
        new_values[v] = new_color
        return DynamicsState(shape, k, FullColoring(k, new_values), state.time)

    levels = _block_levels(shape, v, block_depth)
    frontier_masks = _allowed_masks(shape, k, values, levels)
    full_mask = (1 << k) - 1
    # upward counting pass: counts[w][c] = proper completions of w's block subtree
    counts: dict[int, list[int]] = {}
    for level in reversed(levels):
        for w in level:
            mask = frontier_masks.get(w, full_mask)
            in_block_children = (
                []
                if w in frontier_masks or shape.is_leaf(w)
                else list(range(w * b + 1, w * b + b + 1))
            )
            vec = []
            for c in range(k):
                if not mask >> c & 1:
                    vec.append(0)
                    continue
                w_count = 1
                for child in in_block_children:
                    child_counts = counts[child]
                    w_count *= sum(child_counts) - child_counts[c]
                    if w_count == 0:
                        break
                vec.append(w_count)
            counts[w] = vec
    root_vec = list(counts[v])
    if parent_color is not None:
        root_vec[parent_color - 1] = 0
    total = sum(root_vec)
    if total == 0:  # cannot happen: the current block coloring is a completion
        raise ValidationError("no proper completion of the block exists")
    new_values = values.copy()
    # downward sampling pass, exact against the big-integer counts
    r = integer_below(gen, total)
    for c in range(k):
        r -= root_vec[c]
        if r < 0:
            new_values[v] = c + 1
            break
    for level in levels[:-1]:
        for w in level:
            if shape.is_leaf(w):
                continue
            parent_c = int(new_values[w])
            for child in range(w * b + 1, w * b + b + 1):
                vec = counts[child]
                weights = [0 if c + 1 == parent_c else vec[c] for c in range(k)]
                r = integer_below(gen, sum(weights))
                for c in range(k):
                    r -= weights[c]
                    if r < 0:
                        new_values[child] = c + 1
                        break
    return DynamicsState(shape, k, FullColoring(k, new_values), state.time)


def step(state: DynamicsState, block_depth: int, rng: RandomSource) -> DynamicsState:
    """One move: uniform vertex choice, then a heat-bath update of the
    block rooted at that vertex's block_depth-th ancestor."""
    v = int(rng.generator.integers(0, state.shape.vertex_count))
    nxt = heat_bath_block(state, block_root(state.shape, v, block_depth), block_depth, rng)
    nxt = DynamicsState(nxt.shape, nxt.k, nxt.coloring, state.time + 1)
    assert is_proper(nxt.shape, nxt.coloring)
    return nxt


def run_chain(
    state: DynamicsState,
    block_depth: int,
    steps: int,
    rng: RandomSource,
    visit_counts: dict | None = None,
    thin: int = 1,
) -> DynamicsState:
    """Advance `steps` moves; optionally tally visited colorings by tuple key.

    Same per-step law as step(), but vertex choices are pre-drawn in one
    batch, so the raw stream consumption differs from looping step().
    With `thin=m`, only every m-th visited coloring is tallied --
    consecutive chain states are correlated, so thinned tallies are the
    ones to feed into independence-assuming test statistics.
    """
    if steps < 0:
        raise ValidationError("steps must be >= 0")
    if thin < 1:
        raise ValidationError("thin must be >= 1")
    if steps == 0:
        return state
    choices = rng.generator.integers(0, state.shape.vertex_count, size=steps)
    roots = {v: block_root(state.shape, v, block_depth)
             for v in range(state.shape.vertex_count)}
    time = state.time
    for i, v in enumerate(choices):
        state = heat_bath_block(state, roots[int(v)], block_depth, rng)
        assert is_proper(state.shape, state.coloring)
        if visit_counts is not None and (i + 1) % thin == 0:
            key = tuple(int(c) for c in state.coloring.values)
            visit_counts[key] = visit_counts.get(key, 0) + 1
    return DynamicsState(state.shape, state.k, state.coloring, time + steps)


# ---------------------------------------------------------------------------
# exact matrix diagnostics


def state_space_size(shape: TreeShape, k: int) -> int:
    """k(k-1)^(V-1): proper colorings of a tree factor along edges."""
    return k * (k - 1) ** (shape.vertex_count - 1)


def enumerate_states(shape: TreeShape, k: int) -> list[tuple]:
    """All proper colorings, lexicographic in the level-order color vector."""
    size = state_space_size(shape, k)
    if size > STATE_GUARD:
        raise CapacityError(
            f"{size} proper colorings exceed the {STATE_GUARD} state guard"
        )
    n = shape.vertex_count
    b = shape.branching
    states = []
    assignment = [0] * n

    def extend(v: int):
        if v == n:
            states.append(tuple(assignment))
            return
        parent_color = assignment[(v - 1) // b] if v else None
        for c in range(1, k + 1):
            if c != parent_color:
                assignment[v] = c
                extend(v + 1)

    extend(0)
    return states


@dataclass(frozen=True)
class TransitionMatrix:
    """Exact rational block-dynamics kernel on an enumerated tiny instance."""

    shape: TreeShape
    k: int
    block_depth: int
    states: tuple
    rows: tuple = field(repr=False)  # tuple of {column: Fraction}

    @property
    def size(self) -> int:
        return len(self.states)

    def entry(self, i: int, j: int) -> Fraction:
        return self.rows[i].get(j, Fraction(0))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.size, self.size))
        for i, row in enumerate(self.rows):
            for j, val in row.items():
                dense[i, j] = float(val)
        return dense


def _block_completions(shape, k, block, values) -> list[tuple]:
    """All proper colorings of `block` consistent with the frozen outside."""
    block_set = set(block)
    b = shape.branching
    completions = []
    scratch = list(values)

    def neighbors_ok(w: int, c: int) -> bool:
        # parents inside the block were assigned already; outside ones are frozen
        if w and scratch[(w - 1) // b] == c:
            return False
        if not shape.is_leaf(w):
            for child in range(w * b + 1, w * b + b + 1):
                if child not in block_set and scratch[child] == c:
                    return False
        return True

    def extend(i: int):
        if i == len(block):
            completions.append(tuple(scratch[w] for w in block))
            return
        w = block[i]
        for c in range(1, k + 1):
            if neighbors_ok(w, c):
                scratch[w] = c
                extend(i + 1)
        scratch[w] = values[w]

    extend(0)
    return completions


def build_transition_matrix(
    shape: TreeShape, k: int, block_depth: int
) -> TransitionMatrix:
    """P = (1/N) * sum over v of the heat-bath kernel on the block that a
    move choosing v updates (the block rooted at v's block_depth-th
    ancestor), matching step() exactly."""
    states = enumerate_states(shape, k)
    index = {s: i for i, s in enumerate(states)}
    n_vertices = shape.vertex_count
    multiplicity: dict[int, int] = {}
    for v in range(n_vertices):
        root = block_root(shape, v, block_depth)
        multiplicity[root] = multiplicity.get(root, 0) + 1
    blocks = [
        (block_vertices(shape, root, block_depth), count)
        for root, count in sorted(multiplicity.items())
    ]
    rows = [dict() for _ in states]
    for i, x in enumerate(states):
        row = rows[i]
        for block, count in blocks:
            completions = _block_completions(shape, k, block, x)
            weight = Fraction(count, n_vertices * len(completions))
            y = list(x)
            for completion in completions:
                for w, c in zip(block, completion):
                    y[w] = c
                j = index[tuple(y)]
                row[j] = row.get(j, Fraction(0)) + weight
            for w in block:
                y[w] = x[w]
    return TransitionMatrix(
        shape=shape,
        k=k,
        block_depth=block_depth,
        states=tuple(states),
        rows=tuple(rows),
    )


def stationary_and_gap(matrix: TransitionMatrix) -> dict:
    """Exact uniform-stationarity check plus a numerical spectral gap."""
    size = matrix.size
    col_sums = [Fraction(0)] * size
    for row in matrix.rows:
        for j, val in row.items():
            col_sums[j] += val
    is_uniform = all(s == 1 for s in col_sums)
    dense = matrix.to_dense()
    if size <= 4000:
        eigs = np.linalg.eigvalsh(dense)
        lambda2 = float(eigs[-2]) if size > 1 else 0.0
    else:
        lambda2 = _second_eigenvalue_power(dense)
    return {"is_uniform_stationary": is_uniform, "spectral_gap": 1.0 - lambda2}


def _second_eigenvalue_power(dense: np.ndarray, tol: float = 1e-10) -> float:
    """Deflated power iteration on (I+P)/2; monotone in the signed eigenvalue."""
    size = dense.shape[0]
    rng = np.random.default_rng(0)
    x = rng.standard_normal(size)
    x -= x.mean()
    x /= np.linalg.norm(x)
    prev = 0.0
    for _ in range(100_000):
        y = 0.5 * (x + dense @ x)
        y -= y.mean()
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0  # rank-one kernel: nothing beyond the trivial eigenvalue
        x = y / norm
        est = float(x @ (0.5 * (x + dense @ x)))
        if abs(est - prev) < tol:
            break
        prev = est
    return 2.0 * est - 1.0


def _e_bounds() -> tuple[Fraction, Fraction]:
    """Rational lower/upper bounds on e, tight to ~1e-60."""
    total = Fraction(0)
    term = Fraction(1)
    for i in range(1, 52):
        total += term
        term /= i
    return total, total + 2 * term


def is_ergodic(matrix: TransitionMatrix) -> bool:
    """Reachability over nonzero transitions (symmetric, so plain BFS)."""
    size = matrix.size
    seen = [False] * size
    stack = [0]
    seen[0] = True
    found = 1
    while stack:
        i = stack.pop()
        for j in matrix.rows[i]:
            if not seen[j]:
                seen[j] = True
                found += 1
                stack.append(j)
    return found == size


def mixing_time_exact(matrix: TransitionMatrix) -> int:
    """Smallest t with worst-start TV from uniform at most 1/(2e), exactly.

    Works on an integer matrix over a common denominator, so the
    comparison against the irrational threshold is decided with rational
    bounds on e rather than floats.
    """
    size = matrix.size
    if size > _MIXING_STATE_GUARD:
        raise CapacityError(
            f"exact mixing time supports at most {_MIXING_STATE_GUARD} states"
        )
    if not is_ergodic(matrix):
        raise NonErgodicChainError(
            "transition graph is disconnected; no mixing time exists"
        )
    denom = 1
    for row in matrix.rows:
        for val in row.values():
            denom = denom * val.denominator // math.gcd(denom, val.denominator)
    base = [
        [int(matrix.entry(i, j) * denom) for j in range(size)] for i in range(size)
    ]
    e_lo, e_hi = _e_bounds()
    power = [row[:] for row in base]
    scale = denom
    for t in range(1, _MIXING_STEP_GUARD + 1):
        worst = max(sum(abs(size * m - scale) for m in row) for row in power)
        # TV <= 1/(2e)  <=>  worst * e <= size * scale
        if worst * e_hi <= size * scale:
            return t
        if worst * e_lo <= size * scale:  # pragma: no cover - e known to 1e-60
            raise CapacityError("mixing threshold undecidable at current e precision")
        power = _int_matmul(power, base)
        scale *= denom
    raise CapacityError(f"mixing time exceeds {_MIXING_STEP_GUARD} steps")


def _int_matmul(a: list, b: list) -> list:
    n = len(a)
    bt = list(zip(*b))
    return [[sum(x * y for x, y in zip(row, col)) for col in bt] for row in a]


# ---------------------------------------------------------------------------
# entropy functionals over the enumerated state space


def entropy_functional(f) -> float:
    """Ent(f) = E[f ln f] - E[f] ln E[f] under the uniform distribution."""
    arr = np.asarray(f, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("f must be a nonempty vector")
    if (arr < 0).any():
        raise ValidationError("f must be nonnegative")
    mean = arr.mean()
    if mean == 0:
        raise ValidationError("f must not be identically zero")
    with np.errstate(divide="ignore", invalid="ignore"):
        flnf = np.where(arr > 0, arr * np.log(arr), 0.0)
    return float(flnf.mean() - mean * math.log(mean))


def _outside_groups(shape: TreeShape, k: int, block_depth: int):
    """For each vertex: state indices grouped by their outside-block colors.

    The block attributed to v is the one a move choosing v updates -- the
    depth-block_depth subtree under v's block_depth-th ancestor -- so the
    entropy functionals decompose the same kernel the chain runs.
    """
    states = enumerate_states(shape, k)
    by_root: dict[int, list] = {}
    all_groups = []
    for v in range(shape.vertex_count):
        root = block_root(shape, v, block_depth)
        if root not in by_root:
            inside = set(block_vertices(shape, root, block_depth))
            outside = [w for w in range(shape.vertex_count) if w not in inside]
            groups: dict[tuple, list[int]] = {}
            for i, s in enumerate(states):
                key = tuple(s[w] for w in outside)
                groups.setdefault(key, []).append(i)
            by_root[root] = list(groups.values())
        all_groups.append(by_root[root])
    return states, all_groups


def conditional_entropy(f, shape: TreeShape, k: int, block_depth: int, v: int) -> float:
    """E[Ent(f | colors outside the block a move at v updates)], uniform E."""
    arr = np.asarray(f, dtype=float)
    states, all_groups = _outside_groups(shape, k, block_depth)
    if arr.shape != (len(states),):
        raise ValidationError("f must have one entry per enumerated state")
    total = 0.0
    for members in all_groups[v]:
        sub = arr[members]
        mean = sub.mean()
        if mean == 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            flnf = np.where(sub > 0, sub * np.log(sub), 0.0)
        total += (len(members) / len(states)) * (flnf.mean() - mean * math.log(mean))
    return total


def local_entropy_sum(f, shape: TreeShape, k: int, block_depth: int) -> float:
    """Sum over vertices of the conditional entropy given the block's outside."""
    return sum(
        conditional_entropy(f, shape, k, block_depth, v)
        for v in range(shape.vertex_count)
    )


def block_projection(f, shape: TreeShape, k: int, block_depth: int, v: int) -> np.ndarray:
    """The heat-bath kernel a move at v applies: conditional mean given the outside."""
    arr = np.asarray(f, dtype=float)
    states, all_groups = _outside_groups(shape, k, block_depth)
    if arr.shape != (len(states),):
        raise ValidationError("f must have one entry per enumerated state")
    out = np.empty_like(arr)
    for members in all_groups[v]:
        out[members] = arr[members].mean()
    return out


def average_projection(f, shape: TreeShape, k: int, block_depth: int) -> np.ndarray:
    """The full kernel applied to f: average of the per-vertex projections."""
    arr = np.asarray(f, dtype=float)
    acc = np.zeros_like(arr, dtype=float)
    for v in range(shape.vertex_count):
        acc += block_projection(arr, shape, k, block_depth, v)
    return acc / shape.vertex_count


def entropy_ratio_report(
    shape: TreeShape, k: int, block_depth: int, trials: int, rng: RandomSource
) -> dict:
    """Worst observed ratio of summed local entropies to global entropy over
    random log-normal test functions.  Diagnostic only."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    states, _ = _outside_groups(shape, k, block_depth)
    gen = rng.generator
    worst = math.inf
    for _ in range(trials):
        f = gen.lognormal(size=len(states))
        ent = entropy_functional(f)
        if ent <= 0:
            continue
        worst = min(worst, local_entropy_sum(f, shape, k, block_depth) / ent)
    return {"min_ratio": worst, "trials": trials}
