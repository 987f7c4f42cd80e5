"""Exact top-K cosine retrieval over unit-norm embeddings.

On the unit sphere ``|a - b|^2 = 2 - 2 a.b``, so descending cosine order is
ascending Euclidean order and an ordinary KD-tree branch-and-bound gives
exact cosine top-K.  Ties are broken by ascending id everywhere.

Similarities are always computed by :func:`_similarities` (elementwise
product + row sum in float64), so the tree and the brute-force scan see
bit-identical scores for identical rows.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DuplicateId, ValidationError

NORM_TOL = 1e-5
# prune only when the splitting plane is farther than the current worst hit
# by more than this, so float rounding can never drop an exact tie
PRUNE_SLACK = 1e-9


@dataclass(frozen=True)
class RetrievalResult:
    ids: tuple
    similarities: tuple

    def __len__(self):
        return len(self.ids)

    def rank_of(self, ident) -> int | None:
        """1-based rank of ``ident``, or None when absent."""
        try:
            return self.ids.index(ident) + 1
        except ValueError:
            return None


def _similarities(vectors: np.ndarray, q: np.ndarray) -> np.ndarray:
    return (vectors * q).sum(axis=1)


def _as_ids(ids) -> np.ndarray:
    arr = np.asarray(ids) if len(ids) else np.zeros(0, np.int64)
    if arr.dtype.kind not in "iu":
        arr = arr.astype(np.int64)
    if arr.ndim != 1:
        raise ValidationError("ids", "ids must be one-dimensional")
    return arr


def _check_unique(ids: np.ndarray):
    if ids.size:
        uniq, counts = np.unique(ids, return_counts=True)
        if (counts > 1).any():
            raise DuplicateId(int(uniq[counts > 1][0]))


def _prepare(ids, vectors, dim, normalize):
    ids = _as_ids(ids)
    vec = np.asarray(vectors, dtype=np.float64)
    if vec.size == 0:
        vec = vec.reshape(0, dim if dim is not None else (vec.shape[-1] if vec.ndim == 2 else 0))
    if vec.ndim != 2:
        raise DimensionMismatch(f"vectors must be (N, D), got shape {vec.shape}")
    if len(ids) != len(vec):
        raise DimensionMismatch(f"{len(ids)} ids for {len(vec)} vectors")
    if dim is not None and vec.shape[1] != dim:
        raise DimensionMismatch(f"vectors have dim {vec.shape[1]}, index expects {dim}")
    _check_unique(ids)
    norms = np.linalg.norm(vec, axis=1)
    if normalize:
        if (norms == 0).any():
            raise ValidationError("vectors", "cannot normalise a zero vector")
        vec = vec / norms[:, None]
    elif vec.size and np.abs(norms - 1.0).max() > NORM_TOL:
        raise ValidationError("vectors", "vectors must be unit-norm (pass normalize=True to normalise on build)")
    return ids, vec


def _topk_order(ids: np.ndarray, sims: np.ndarray, k: int) -> np.ndarray:
    order = np.lexsort((ids, -sims))
    return order[:k]


def brute_force_topk(ids, vectors, q, k: int) -> RetrievalResult:
    """Full scan; identical ranking rule to :meth:`EmbeddingIndex.query`."""
    ids = _as_ids(ids)
    vec = np.asarray(vectors, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if len(ids) == 0:
        return RetrievalResult((), ())
    if vec.ndim != 2 or q.shape != (vec.shape[1],):
        raise DimensionMismatch(f"query shape {q.shape} does not match vectors {vec.shape}")
    if k < 1:
        raise ValidationError("k", "k must be >= 1")
    sims = _similarities(vec, q)
    top = _topk_order(ids, sims, k)
    return RetrievalResult(tuple(int(i) for i in ids[top]), tuple(float(s) for s in sims[top]))


@dataclass(frozen=True)
class _Node:
    start: int
    stop: int
    dim: int = -1
    split: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self):
        return self.left is None


@dataclass(frozen=True, eq=False)
class EmbeddingIndex:
    """Immutable KD-tree over unit-norm vectors.

    ``vectors`` and ``ids`` are stored permuted into tree order so that every
    node owns a contiguous slice ``[start, stop)``.
    """

    dim: int
    ids: np.ndarray
    vectors: np.ndarray
    root: _Node | None = field(repr=False)
    leaf_size: int = 16
    norm_excess: float = 0.0  # max(|v|^2 - 1, 0) over stored rows

    def __len__(self):
        return len(self.ids)

    def query(self, q, k: int) -> RetrievalResult:
        return query_topk(self, q, k)

    def depth(self) -> int:
        def walk(node):
            return 0 if node is None or node.is_leaf else 1 + max(walk(node.left), walk(node.right))
        return walk(self.root)

    def leaves(self) -> list[_Node]:
        out, stack = [], [self.root] if self.root else []
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend((node.right, node.left))
        return out


def build_index(ids, vectors, dim: int | None = None, leaf_size: int = 16,
                normalize: bool = False) -> EmbeddingIndex:
    """Balanced KD-tree: median split on the dimension of maximal spread."""
    if leaf_size < 1:
        raise ValidationError("leaf_size", "leaf_size must be >= 1")
    ids, vec = _prepare(ids, vectors, dim, normalize)
    dim = vec.shape[1] if dim is None else dim
    perm = np.arange(len(ids))

    def build(start, stop):
        if stop - start <= leaf_size:
            return _Node(start, stop)
        block = vec[perm[start:stop]]
        spread = block.max(axis=0) - block.min(axis=0)
        d = int(np.argmax(spread))
        if spread[d] == 0.0:  # all points identical
            return _Node(start, stop)
        mid = (stop - start) // 2
        # stable order on (value, id) keeps the build deterministic under ties
        order = np.lexsort((ids[perm[start:stop]], block[:, d]))
        perm[start:stop] = perm[start:stop][order]
        split = float(vec[perm[start + mid], d])
        return _Node(start, stop, d, split, build(start, start + mid), build(start + mid, stop))

    root = build(0, len(ids)) if len(ids) else None
    excess = float(max(((vec * vec).sum(axis=1) - 1.0).max(), 0.0)) if len(ids) else 0.0
    return EmbeddingIndex(dim, ids[perm], vec[perm], root, leaf_size, excess)


def query_topk(index: EmbeddingIndex, q, k: int) -> RetrievalResult:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimensionMismatch(f"query has shape {q.shape}, index dim is {index.dim}")
    if k < 1:
        raise ValidationError("k", "k must be >= 1")
    if index.root is None:
        return RetrievalResult((), ())
    k = min(k, len(index))
    vec, ids = index.vectors, index.ids
    # min-heap holding the best k so far, keyed so the worst hit sits on top:
    # entries are (sim, -id); worst = lowest sim, then highest id
    heap: list[tuple[float, int]] = []
    # |q - v|^2 = 2 - 2 q.v + (|q|^2 - 1) + (|v|^2 - 1); the bound below uses
    # 2 - 2 q.v, so widen it by the worst-case norm excess
    slack = PRUNE_SLACK + max(float(q @ q) - 1.0, 0.0) + index.norm_excess

    def worst_dist2():
        return 2.0 - 2.0 * heap[0][0] if len(heap) == k else np.inf

    def visit(node):
        if node.is_leaf:
            sims = _similarities(vec[node.start:node.stop], q)
            for s, ident in zip(sims.tolist(), ids[node.start:node.stop].tolist()):
                item = (s, -ident)
                if len(heap) < k:
                    heapq.heappush(heap, item)
                elif item > heap[0]:
                    heapq.heapreplace(heap, item)
            return
        diff = q[node.dim] - node.split
        near, far = (node.left, node.right) if diff < 0 else (node.right, node.left)
        visit(near)
        if diff * diff <= worst_dist2() + slack:
            visit(far)

    visit(index.root)
    ranked = sorted(heap, key=lambda t: (-t[0], -t[1]))
    return RetrievalResult(tuple(-i for _, i in ranked), tuple(s for s, _ in ranked))
