"""Recall@K evaluation, yaw-offset sweeps, cost accounting and query benchmarks."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import MissingTruth, ShapeMismatch, ValidationError
from .index import EmbeddingIndex, RetrievalResult, brute_force_topk, build_index, query_topk

STANDARD_KS = (1, 5, 10)
DEFAULT_OFFSETS = (0.0, 5.0, 15.0, 25.0, 35.0, 45.0)


def _pmap(fn, items, jobs: int = 1):
    """Ordered map; results never depend on the worker count."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def recall_at_k(retrievals, truth, k: int) -> float:
    """Percentage of queries whose true id appears among their first ``k`` results."""
    retrievals = list(retrievals)
    truth = list(truth)
    if len(truth) != len(retrievals):
        raise MissingTruth(f"{len(retrievals)} queries but {len(truth)} truth ids")
    if any(t is None for t in truth):
        raise MissingTruth("a query has no truth id")
    if k < 1:
        raise ValidationError("k", "k must be >= 1")
    if not retrievals:
        return 0.0
    hits = sum(1 for r, t in zip(retrievals, truth) if int(t) in r.ids[:k])
    return 100.0 * hits / len(retrievals)


def top_percent_k(n: int, pct: float = 1.0) -> int:
    """K for "top pct%" of a gallery of ``n``: floor(n * pct / 100), at least 1."""
    if n < 1:
        raise ValidationError("n", "gallery size must be >= 1")
    return max(1, math.floor(n * pct / 100.0))


@dataclass(frozen=True)
class RecallReport:
    recall: dict  # K -> percentage
    top_pct: float
    top_pct_k: int
    recall_top_pct: float
    n_queries: int
    index_size: int

    def row(self) -> dict:
        out = {f"R@{k}": v for k, v in sorted(self.recall.items())}
        out[f"R@{self.top_pct:g}%"] = self.recall_top_pct
        out.update(top_pct_k=self.top_pct_k, queries=self.n_queries, index_size=self.index_size)
        return out

    def is_monotone(self) -> bool:
        ks = sorted(self.recall)
        vals = [self.recall[k] for k in ks]
        ok = all(a <= b for a, b in zip(vals, vals[1:]))
        if ks and self.top_pct_k >= ks[-1]:
            ok = ok and vals[-1] <= self.recall_top_pct
        return ok


def recall_report(retrievals, truth, index_size: int, ks=STANDARD_KS, pct: float = 1.0) -> RecallReport:
    retrievals = list(retrievals)
    kp = top_percent_k(index_size, pct)
    return RecallReport(
        recall={k: recall_at_k(retrievals, truth, k) for k in ks},
        top_pct=pct,
        top_pct_k=kp,
        recall_top_pct=recall_at_k(retrievals, truth, kp),
        n_queries=len(retrievals),
        index_size=index_size,
    )


def retrieve_all(index: EmbeddingIndex, queries, k: int, jobs: int = 1) -> list[RetrievalResult]:
    queries = np.asarray(queries, dtype=np.float64)
    return _pmap(lambda q: query_topk(index, q, k), queries, jobs)


def evaluate(index: EmbeddingIndex, queries, truth, ks=STANDARD_KS, pct: float = 1.0,
             jobs: int = 1) -> RecallReport:
    """Retrieve every query and score it against its true aerial id."""
    k_max = max(max(ks), top_percent_k(max(len(index), 1), pct))
    retrievals = retrieve_all(index, queries, k_max, jobs)
    return recall_report(retrievals, truth, len(index), ks, pct)


def offset_signs(n: int, seed: int) -> np.ndarray:
    """Per-item +/-1 signs for the offset sweep, fixed by ``seed``."""
    return np.where(np.random.default_rng(seed).random(n) < 0.5, -1.0, 1.0)


def offset_sweep(pipeline, yaws, truth, index: EmbeddingIndex, offsets=DEFAULT_OFFSETS,
                 seed: int = 0, jobs: int = 1, ks=STANDARD_KS, pct: float = 1.0):
    """Recall at each yaw offset.

    ``pipeline(i, yaw_deg)`` embeds query ``i`` cropped at ``yaw_deg``.  Item
    ``i`` is cropped at ``yaws[i] + s_i * offset`` with ``s_i`` drawn once from
    ``seed``, so every offset shares the same signs.  Returns
    ``[(offset, RecallReport), ...]``.
    """
    yaws = np.asarray(yaws, dtype=np.float64)
    signs = offset_signs(len(yaws), seed)
    rows = []
    for delta in offsets:
        shifted = yaws + signs * float(delta)
        queries = np.stack(_pmap(lambda i: np.asarray(pipeline(i, shifted[i]), np.float64),
                                 range(len(yaws)), jobs)) if len(yaws) else np.zeros((0, index.dim))
        rows.append((float(delta), evaluate(index, queries, truth, ks, pct, jobs)))
    return rows


# --------------------------------------------------------------------------- complexity


@dataclass(frozen=True)
class ComplexityReport:
    """Closed-form cost of a layer graph.  FLOPs are 2 x multiply-accumulates."""

    params: int = 0
    macs: int = 0
    flops: int = 0
    bias_adds: int = 0
    embed_dim: int = 0
    ref_dim: int = 0
    relative_memory: float = 0.0
    relative_query_cost: float = 0.0

    @property
    def memory_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.relative_memory) if self.ref_dim else 0.0

    @property
    def query_cost_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.relative_query_cost) if self.ref_dim else 0.0

    def __add__(self, other: "ComplexityReport") -> "ComplexityReport":
        if (self.embed_dim, self.ref_dim) != (other.embed_dim, other.ref_dim):
            raise ValidationError("embed_dim", "cannot add reports computed for different dimensionalities")
        return replace(self, params=self.params + other.params, macs=self.macs + other.macs,
                       flops=self.flops + other.flops, bias_adds=self.bias_adds + other.bias_adds)

    def row(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["memory_reduction_pct"] = self.memory_reduction_pct
        out["query_cost_reduction_pct"] = self.query_cost_reduction_pct
        return out


def layer_cost(layer) -> tuple[int, int, int]:
    """(params, MACs, bias adds) of one LayerSpec."""
    kind = layer.kind
    cin, cout, k = layer.in_features, layer.out_features, layer.kernel
    if kind == "conv":
        oh, ow = layer.out_hw
        params = cout * cin * k * k
        macs = cout * oh * ow * cin * k * k
        bias = cout * oh * ow if layer.bias else 0
    elif kind == "deconv":
        ih, iw = layer.in_hw
        oh, ow = layer.out_hw
        params = cin * cout * k * k
        macs = cin * ih * iw * cout * k * k
        bias = cout * oh * ow if layer.bias else 0
    elif kind == "fc":
        params = cin * cout
        macs = cin * cout
        bias = cout if layer.bias else 0
    elif kind == "matmul":
        params = cin * cout
        macs = cin * cout * layer.columns
        bias = 0
    elif kind == "bn":
        return 2 * cout, 0, 0
    else:
        raise ShapeMismatch(f"unknown layer kind {kind!r}")
    if min(cin, cout, k) < 1:
        raise ShapeMismatch(f"layer {layer.name} has non-positive extents")
    return params + (cout if layer.bias else 0), macs, bias


def complexity_report(graph, embed_dim: int = 512, ref_dim: int = 768) -> ComplexityReport:
    """Parameter and FLOP totals plus the sqrt(D) retrieval cost model.

    Relative memory is ``embed_dim / ref_dim``; relative query cost follows
    the O(sqrt(D) + k) KD-tree cost model, ``sqrt(embed_dim / ref_dim)``.
    """
    params = macs = bias = 0
    for layer in graph:
        p, m, b = layer_cost(layer)
        params += p
        macs += m
        bias += b
    if ref_dim < 0 or embed_dim < 0:
        raise ValidationError("ref_dim", "dimensionalities must be >= 0")
    rel_mem = embed_dim / ref_dim if ref_dim else 0.0
    rel_q = math.sqrt(embed_dim / ref_dim) if ref_dim else 0.0
    return ComplexityReport(params, macs, 2 * macs, bias, embed_dim, ref_dim, rel_mem, rel_q)


# --------------------------------------------------------------------------- benchmarks


@dataclass
class TimingSummary:
    method: str
    dim: int
    size: int
    k: int
    median_s: float
    p95_s: float
    samples: list = field(default_factory=list, repr=False)


def _time_queries(fn, queries, repeats):
    out = []
    for q in queries:
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(q)
            best = min(best, time.perf_counter() - t0)
        out.append(best)
    return out


def benchmark_queries(index: EmbeddingIndex, queries, k: int = 10, repeats: int = 3):
    """Per-query latency of the KD-tree and of a brute-force scan.

    Returns ``(tree_summary, brute_summary)``.  Raises if the two methods ever
    disagree on a result.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    ids, vecs = index.ids, index.vectors
    for q in queries:
        a, b = query_topk(index, q, k), brute_force_topk(ids, vecs, q, k)
        if a.ids != b.ids:
            raise AssertionError("KD-tree and brute force disagree during benchmark")
    tree_t = _time_queries(lambda q: query_topk(index, q, k), queries, repeats)
    brute_t = _time_queries(lambda q: brute_force_topk(ids, vecs, q, k), queries, repeats)

    def summary(name, ts):
        return TimingSummary(name, index.dim, len(index), k, float(np.median(ts)),
                             float(np.percentile(ts, 95)), ts)

    return summary("kdtree", tree_t), summary("brute", brute_t)


def random_unit(rng, n, dim) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def benchmark_scaling(dims=(128, 512, 768), sizes=(1000, 2000, 4000, 8000), n_queries: int = 20,
                      k: int = 10, seed: int = 0, repeats: int = 3) -> list[TimingSummary]:
    rng = np.random.default_rng(seed)
    rows = []
    for dim in dims:
        for size in sizes:
            idx = build_index(np.arange(size), random_unit(rng, size, dim))
            rows.extend(benchmark_queries(idx, random_unit(rng, n_queries, dim), k, repeats))
    return rows


def linear_fit(xs, ys) -> tuple[float, float, float]:
    """Least-squares (slope, intercept, r^2)."""
    xs = np.asarray(xs, np.float64)
    ys = np.asarray(ys, np.float64)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = ((ys - pred) ** 2).sum()
    ss_tot = ((ys - ys.mean()) ** 2).sum()
    return float(slope), float(intercept), float(1.0 - ss_res / ss_tot) if ss_tot else 1.0
