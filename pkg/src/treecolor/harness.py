"""Experiment orchestration: configs, replicas, aggregation, decay curves.

A run is fully determined by (config, seed, code version).  Replicas get
independent RNG streams via RandomSource.split and are folded in replica
order, so the aggregate is deterministic regardless of how the replicas
would be scheduled.  Serialized records never include wall-clock data;
durations are returned in-memory only, keeping output files byte-stable.
"""
from __future__ import annotations

import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import couplings, dynamics, unbiasing
from .broadcast_sampler import sample_leaf_rows
from .errors import ValidationError
from .estimators import Estimate, mean_estimate, proportion_estimate
from .exact_engine import root_marginal
from .rng import RandomSource
from .tree_model import PartialLeafColoring, TreeShape
from .unbiasing import UnbiasingParams, epsilon_from

EXPERIMENT_KINDS = (
    "marginal",
    "broadcast",
    "unbiasing",
    "couple",
    "bias",
    "concentration",
    "dynamics",
)

#: kinds whose estimates may be split across replicas
_REPLICABLE = {"unbiasing", "couple", "bias", "concentration"}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: dict
    seed: int = 0
    samples: int = 1
    replicas: int = 1
    out: str | None = None
    fmt: str = "json"
    series_index: int | None = None

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValidationError(f"unknown experiment kind {self.kind!r}")
        if self.replicas < 1:
            raise ValidationError("replicas must be >= 1")
        if self.fmt not in ("json", "csv"):
            raise ValidationError(f"format must be csv or json, got {self.fmt!r}")
        if self.replicas > 1 and self.kind not in _REPLICABLE:
            raise ValidationError(
                f"kind {self.kind!r} does not support replicas > 1"
            )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["params"] = dict(self.params)
        return d


@dataclass(frozen=True)
class RunRecord:
    config: ExperimentConfig
    replica_results: tuple
    aggregate: dict
    duration: float
    version: str

    def to_dict(self, include_duration: bool = False) -> dict:
        d = {
            "config": self.config.to_dict(),
            "replicas": list(self.replica_results),
            "aggregate": self.aggregate,
            "version": self.version,
        }
        if include_duration:
            d["duration_seconds"] = self.duration
        return d


def _require(params: dict, *names):
    missing = [n for n in names if params.get(n) is None]
    if missing:
        raise ValidationError(f"missing required parameter(s): {', '.join(missing)}")
    return [params[n] for n in names]


def _estimate_dict(est: Estimate) -> dict:
    d = {"mean": est.mean, "stderr": est.stderr, "n": est.n}
    if est.wilson is not None:
        d["wilson95"] = [est.wilson[0], est.wilson[1]]
    return d


def _split_samples(total: int, replicas: int) -> list[int]:
    base, extra = divmod(total, replicas)
    sizes = [base + (1 if i < extra else 0) for i in range(replicas)]
    if any(s == 0 for s in sizes):
        raise ValidationError("more replicas than samples")
    return sizes


def _pool_means(results: list[dict]) -> dict:
    """Exact pooled mean/stderr from per-replica (mean, stderr, n)."""
    total = 0.0
    total_sq = 0.0
    n = 0
    for r in results:
        ni, mi, si = r["n"], r["mean"], r["stderr"]
        sample_var = si * si * ni
        total += mi * ni
        total_sq += sample_var * (ni - 1) + ni * mi * mi
        n += ni
    return _estimate_dict(mean_estimate(total, total_sq, n))


def _pool_proportions(results: list[dict]) -> dict:
    successes = 0
    n = 0
    for r in results:
        successes += round(r["mean"] * r["n"])
        n += r["n"]
    return _estimate_dict(proportion_estimate(successes, n))


def _replica_sources(config: ExperimentConfig) -> list[RandomSource]:
    base = RandomSource(config.seed)
    if config.series_index is not None:
        base = base.split(config.series_index)
    return base.split_many(config.replicas)


def run_experiment(config: ExperimentConfig) -> RunRecord:
    """Dispatch a config to its implementation and aggregate the replicas."""
    start = time.perf_counter()
    runner = _RUNNERS.get(config.kind)
    replica_results, aggregate = runner(config)
    duration = time.perf_counter() - start
    from . import __version__

    return RunRecord(
        config=config,
        replica_results=tuple(replica_results),
        aggregate=aggregate,
        duration=duration,
        version=__version__,
    )


# ---------------------------------------------------------------------------
# per-kind runners


def _shape_from(params: dict, depth_key: str = "depth") -> tuple[TreeShape, int]:
    delta, k, depth = _require(params, "delta", "k", depth_key)
    return TreeShape(int(delta), int(depth)), int(k)


def _run_marginal(config: ExperimentConfig):
    shape, k = _shape_from(config.params)
    leaves = config.params.get("leaves")
    if leaves is None:
        raise ValidationError("missing required parameter(s): leaves")
    coloring = PartialLeafColoring(k, np.asarray(leaves, dtype=np.int16))
    backend = "rational" if config.params.get("exact") else "float"
    dist = root_marginal(
        shape, k, coloring,
        forbidden_root=config.params.get("forbidden_root"),
        backend=backend,
    )
    if backend == "rational":
        weights = [f"{w.numerator}/{w.denominator}" for w in dist.weights]
    else:
        weights = [float(w) for w in dist.weights]
    result = {"weights": weights, "backend": backend}
    return [result], result


def _run_broadcast(config: ExperimentConfig):
    shape, k = _shape_from(config.params)
    if config.samples < 1:
        raise ValidationError("samples must be >= 1")
    rng = _replica_sources(config)[0]
    rows = sample_leaf_rows(shape, k, config.samples, rng,
                            root_colors=config.params.get("root_color"))
    if config.params.get("summary"):
        counts = np.bincount(rows.ravel().astype(np.int64), minlength=k + 1)
        result = {
            "samples": config.samples,
            "leaf_count": shape.leaf_count,
            "color_counts": [int(c) for c in counts[1:]],
        }
        return [result], result
    lines = [",".join(str(int(v)) for v in row) for row in rows]
    result = {"lines": lines}
    return [result], result


def _unbiasing_params(params: dict, k: int, delta: int) -> UnbiasingParams:
    eps = params.get("epsilon")
    if eps is None:
        return epsilon_from(k, delta)
    return UnbiasingParams(float(eps))


def _run_unbiasing(config: ExperimentConfig):
    shape, k = _shape_from(config.params)
    up = _unbiasing_params(config.params, k, shape.branching)
    highly = bool(config.params.get("highly"))
    results = []
    for source, n in zip(_replica_sources(config),
                         _split_samples(config.samples, config.replicas)):
        est = unbiasing.estimate_q(shape, k, up, n, source, highly=highly)
        results.append(_estimate_dict(est))
    pooled = _pool_proportions(results)
    aggregate = {
        "q_hat": pooled["mean"],
        "stderr": pooled["stderr"],
        "wilson95": pooled["wilson95"],
        "n": pooled["n"],
        "epsilon": up.epsilon,
        "highly": highly,
    }
    return results, aggregate


def _run_couple(config: ExperimentConfig):
    params = config.params
    mode = params.get("mode", "down")
    delta, k = int(params.get("delta", 0)), int(params.get("k", 0))
    depth = int(params.get("depth", -1))
    if delta < 2 or k < 2 or depth < 0:
        raise ValidationError("couple needs delta >= 2, k >= 2, depth >= 0")
    threshold = params.get("threshold")
    sources = _replica_sources(config)
    sizes = _split_samples(config.samples, config.replicas)

    if mode == "branching":
        results = []
        for source, n in zip(sources, sizes):
            if threshold is None:
                est = couplings.branching_mean(delta, k, depth, n, source)
                results.append(_estimate_dict(est))
            else:
                tail = couplings.hamming_tail(delta, k, depth, float(threshold), n, source)
                results.append({"mean": tail.probability, "stderr": tail.stderr,
                                "n": tail.n, "wilson95": list(tail.wilson)})
        pooled = _pool_proportions(results) if threshold is not None else _pool_means(results)
        name = ("branching_tail" if threshold is not None else "branching_mean")
        aggregate = {"estimators": [{"estimator": name,
                                     **pooled,
                                     **({"threshold": float(threshold)} if threshold is not None else {})}]}
        return results, aggregate

    shape = TreeShape(delta, depth)
    c1, c2 = _require(params, "c1", "c2")
    c1, c2 = int(c1), int(c2)
    if mode == "down":
        results = []
        for source, n in zip(sources, sizes):
            if threshold is None:
                est = couplings.estimate_hamming(shape, k, c1, c2, n, source)
                results.append(_estimate_dict(est))
            else:
                tail = couplings.hamming_tail_tree(
                    shape, k, c1, c2, float(threshold), n, source)
                results.append({"mean": tail.probability, "stderr": tail.stderr,
                                "n": tail.n, "wilson95": list(tail.wilson)})
        pooled = _pool_proportions(results) if threshold is not None else _pool_means(results)
        name = "hamming_tail" if threshold is not None else "hamming_mean"
        aggregate = {"estimators": [{"estimator": name,
                                     **pooled,
                                     **({"threshold": float(threshold)} if threshold is not None else {})}]}
        return results, aggregate

    if mode == "downup":
        results = []
        for source, n in zip(sources, sizes):
            report = couplings.estimate_beta_tv(shape, k, c1, c2, n, source)
            results.append({
                "coupling_bound": _estimate_dict(report.coupling_bound),
                "plugin_tv": _estimate_dict(report.plugin_tv),
            })
        coupling = _pool_means([r["coupling_bound"] for r in results])
        # plug-in TVs do not pool exactly; replicas are averaged by weight
        plug_n = sum(r["plugin_tv"]["n"] for r in results)
        plug_mean = sum(r["plugin_tv"]["mean"] * r["plugin_tv"]["n"] for r in results) / plug_n
        plug_stderr = math.sqrt(sum(
            (r["plugin_tv"]["n"] / plug_n) ** 2 * r["plugin_tv"]["stderr"] ** 2
            for r in results))
        aggregate = {"estimators": [
            {"estimator": "coupling_tv_bound", **coupling},
            {"estimator": "plugin_tv", "mean": plug_mean,
             "stderr": plug_stderr, "n": plug_n},
        ]}
        return results, aggregate

    raise ValidationError(f"unknown couple mode {mode!r}")


def _run_bias(config: ExperimentConfig):
    shape, k = _shape_from(config.params)
    color = config.params.get("color")
    if color is None:
        raise ValidationError("missing required parameter(s): color")
    results = []
    for source, n in zip(_replica_sources(config),
                         _split_samples(config.samples, config.replicas)):
        est = couplings.estimate_alpha(shape, k, int(color), n, source)
        results.append(_estimate_dict(est))
    pooled = _pool_means(results)
    aggregate = {"ell": shape.depth, "alpha_hat": pooled["mean"],
                 "stderr": pooled["stderr"], "n": pooled["n"]}
    return results, aggregate


def _run_concentration(config: ExperimentConfig):
    shape, k = _shape_from(config.params)
    color, threshold = _require(config.params, "color", "threshold")
    results = []
    for source, n in zip(_replica_sources(config),
                         _split_samples(config.samples, config.replicas)):
        tail = couplings.concentration_tail(
            shape, k, int(color), float(threshold), n, source)
        results.append({"mean": tail.probability, "stderr": tail.stderr,
                        "n": tail.n, "wilson95": list(tail.wilson)})
    pooled = _pool_proportions(results)
    aggregate = {"threshold": float(threshold), "probability": pooled["mean"],
                 "stderr": pooled["stderr"], "wilson95": pooled["wilson95"],
                 "n": pooled["n"]}
    return results, aggregate


def _run_dynamics(config: ExperimentConfig):
    params = config.params
    delta, k, n_depth, block_depth = _require(params, "delta", "k", "n", "block_depth")
    shape = TreeShape(int(delta), int(n_depth))
    k = int(k)
    block_depth = int(block_depth)
    if block_depth < 0:
        raise ValidationError("block_depth must be >= 0")
    if params.get("exact"):
        matrix = dynamics.build_transition_matrix(shape, k, block_depth)
        info = dynamics.stationary_and_gap(matrix)
        symmetric = all(
            matrix.entry(i, j) == matrix.entry(j, i)
            for i in range(matrix.size)
            for j in matrix.rows[i]
        )
        try:
            t_mix = dynamics.mixing_time_exact(matrix)
            ergodic = True
        except dynamics.NonErgodicChainError:
            t_mix, ergodic = None, False
        result = {
            "states": matrix.size,
            "gap": info["spectral_gap"],
            "t_mix": t_mix,
            "symmetric": symmetric,
            "uniform_stationary": info["is_uniform_stationary"],
            "ergodic": ergodic,
        }
        if params.get("matrix_out"):
            _write_matrix_csv(matrix, params["matrix_out"])
        return [result], result
    steps = int(params.get("steps", 0))
    if steps < 1:
        raise ValidationError("steps must be >= 1 for an empirical dynamics run")
    rng = _replica_sources(config)[0]
    state = dynamics.initial_state(shape, k, rng)
    final = dynamics.run_chain(state, block_depth, steps, rng)
    result = {"steps": steps, "final_time": final.time,
              "root_color": int(final.coloring.values[0]),
              "proper": True}
    return [result], result


def _write_matrix_csv(matrix, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("row_state,col_state,numerator,denominator\n")
        for i, row in enumerate(matrix.rows):
            for j in sorted(row):
                val = row[j]
                fh.write(f"{i},{j},{val.numerator},{val.denominator}\n")


_RUNNERS = {
    "marginal": _run_marginal,
    "broadcast": _run_broadcast,
    "unbiasing": _run_unbiasing,
    "couple": _run_couple,
    "bias": _run_bias,
    "concentration": _run_concentration,
    "dynamics": _run_dynamics,
}


# ---------------------------------------------------------------------------
# decay curves


def emit_decay_curve(records: list[RunRecord]) -> dict:
    """Rows of (ell, estimate, stderr, n, log_estimate) plus a fitted slope.

    Estimates of zero keep their row with a null log entry and are left
    out of the fit.  The slope is descriptive only.
    """
    if not records:
        raise ValidationError("no records to tabulate")
    keys = set()
    rows = []
    for record in records:
        agg = record.aggregate
        p = record.config.params
        keys.add((p.get("delta"), p.get("k"), p.get("color") or p.get("c1")))
        if "estimators" in agg:  # couple runs report a list; lead with the first
            agg = agg["estimators"][0]
        est = agg.get("alpha_hat", agg.get("probability", agg.get("q_hat", agg.get("mean"))))
        stderr = agg.get("stderr")
        if est is None or stderr is None:
            raise ValidationError("record carries no (estimate, stderr) aggregate")
        ell = p.get("depth")
        rows.append({
            "ell": int(ell),
            "estimate": float(est),
            "stderr": float(stderr),
            "n": int(agg.get("n", record.config.samples)),
            "log_estimate": math.log(est) if est > 0 else None,
        })
    if len(keys) != 1:
        raise ValidationError("records must share delta, k and color")
    ells = [r["ell"] for r in rows]
    if len(set(ells)) != len(ells):
        raise ValidationError("records must have distinct depths")
    fit = [(r["ell"], r["log_estimate"]) for r in rows if r["log_estimate"] is not None]
    slope = None
    if len(fit) >= 2:
        xs = np.array([f[0] for f in fit], dtype=float)
        ys = np.array([f[1] for f in fit], dtype=float)
        slope = float(np.polyfit(xs, ys, 1)[0])
    return {"rows": rows, "log_slope": slope}


def decay_curve_csv(table: dict) -> str:
    out = io.StringIO()
    out.write("ell,estimate,stderr,n,log_estimate\n")
    for r in table["rows"]:
        log_part = "" if r["log_estimate"] is None else repr(r["log_estimate"])
        out.write(f"{r['ell']},{r['estimate']!r},{r['stderr']!r},{r['n']},{log_part}\n")
    slope = table.get("log_slope")
    out.write(f"# log_slope = {'' if slope is None else repr(slope)}\n")
    return out.getvalue()


def record_json(record: RunRecord) -> str:
    return json.dumps(record.to_dict(), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# flat key=value config files


def parse_config_file(path: str) -> dict:
    """Flat `key = value` lines; '#' starts a comment; later keys win."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValidationError(
                        f"{path}:{lineno}: expected key=value, got {raw.strip()!r}"
                    )
                key, value = line.split("=", 1)
                out[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}") from None
    return out
