"""Projection heads mapping branch features to unit-norm embeddings.

pov:    maxpool -> BatchNorm -> LeakyReLU -> FC -> L2 normalise
aerial: maxpool -> FC (reduce) -> BatchNorm -> LeakyReLU -> FC -> L2 normalise

Head math runs in float64.  Only head parameters are trainable, so the
backward pass stops at the pooled features.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .ops import LEAKY_SLOPE, global_maxpool

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
NORM_EPS = 1e-12  # floor on |z|; a zero pre-embedding maps to the zero vector

BRANCHES = ("pov", "aer")


def _prefix(branch: str) -> str:
    if branch in ("aerial", "aer"):
        return "proj_aer"
    if branch == "pov":
        return "proj_pov"
    raise ValueError(f"unknown branch {branch!r}")


def trainable_names(branch: str) -> list[str]:
    p = _prefix(branch)
    names = [f"{p}.bn.scale", f"{p}.bn.shift", f"{p}.fc.weight", f"{p}.fc.bias"]
    if p == "proj_aer":
        names = [f"{p}.reduce.weight", f"{p}.reduce.bias"] + names
    return names


def pool_features(feat) -> np.ndarray:
    """Global max pool; (C,H,W) -> (1,C), (N,C,H,W) -> (N,C)."""
    feat = np.asarray(feat)
    pooled = global_maxpool(feat)
    return pooled[None, :] if pooled.ndim == 1 else pooled


def head_forward(pooled, weights, branch: str, training: bool = False):
    """Run a head on pooled (N, C) features.

    Returns ``(embeddings, cache)``.  In training mode the cache also holds the
    updated BatchNorm running statistics under ``running``.
    """
    p = _prefix(branch)
    x = np.asarray(pooled, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"head expects (N, C) pooled features, got {x.shape}")
    cache = {"pooled": x}
    if p == "proj_aer":
        wr = np.asarray(weights[f"{p}.reduce.weight"], np.float64)
        if x.shape[1] != wr.shape[1]:
            raise ShapeMismatch(f"aerial head expects {wr.shape[1]} channels, got {x.shape[1]}")
        x = x @ wr.T + np.asarray(weights[f"{p}.reduce.bias"], np.float64)
        cache["reduced"] = x
    scale = np.asarray(weights[f"{p}.bn.scale"], np.float64)
    shift = np.asarray(weights[f"{p}.bn.shift"], np.float64)
    if x.shape[1] != scale.shape[0]:
        raise ShapeMismatch(f"{p} expects {scale.shape[0]} features, got {x.shape[1]}")
    if training:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        n = x.shape[0]
        unbiased = var * n / max(n - 1, 1)
        cache["running"] = {
            f"{p}.bn.mean": (1 - BN_MOMENTUM) * np.asarray(weights[f"{p}.bn.mean"], np.float64) + BN_MOMENTUM * mu,
            f"{p}.bn.var": (1 - BN_MOMENTUM) * np.asarray(weights[f"{p}.bn.var"], np.float64) + BN_MOMENTUM * unbiased,
        }
    else:
        mu = np.asarray(weights[f"{p}.bn.mean"], np.float64)
        var = np.asarray(weights[f"{p}.bn.var"], np.float64)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv_std
    h = xhat * scale + shift
    a = np.where(h > 0, h, LEAKY_SLOPE * h)
    w = np.asarray(weights[f"{p}.fc.weight"], np.float64)
    z = a @ w.T + np.asarray(weights[f"{p}.fc.bias"], np.float64)
    norm = np.maximum(np.sqrt((z * z).sum(axis=1, keepdims=True)), NORM_EPS)
    emb = z / norm
    cache.update(xhat=xhat, inv_std=inv_std, h=h, a=a, norm=norm, emb=emb, training=training)
    return emb, cache


def head_backward(cache, weights, branch: str, upstream) -> dict:
    """Parameter gradients of ``sum(upstream * embeddings)``."""
    p = _prefix(branch)
    g = np.asarray(upstream, np.float64)
    emb = cache["emb"]
    if g.shape != emb.shape:
        raise ShapeMismatch(f"upstream gradient {g.shape} != embeddings {emb.shape}")
    # d(z/|z|): project out the radial component
    gz = (g - emb * (g * emb).sum(axis=1, keepdims=True)) / cache["norm"]
    grads = {f"{p}.fc.weight": gz.T @ cache["a"], f"{p}.fc.bias": gz.sum(axis=0)}
    ga = gz @ np.asarray(weights[f"{p}.fc.weight"], np.float64)
    gh = np.where(cache["h"] > 0, ga, LEAKY_SLOPE * ga)
    xhat = cache["xhat"]
    grads[f"{p}.bn.scale"] = (gh * xhat).sum(axis=0)
    grads[f"{p}.bn.shift"] = gh.sum(axis=0)
    if p == "proj_aer":
        gxhat = gh * np.asarray(weights[f"{p}.bn.scale"], np.float64)
        if cache["training"]:
            gx = cache["inv_std"] * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
        else:
            gx = gxhat * cache["inv_std"]
        grads[f"{p}.reduce.weight"] = gx.T @ cache["pooled"]
        grads[f"{p}.reduce.bias"] = gx.sum(axis=0)
    return grads


def projection_forward(feat, weights, branch: str, training: bool = False) -> np.ndarray:
    """Unit-norm embedding(s) for a (C,H,W) feature map or an (N,C,H,W) batch."""
    feat = np.asarray(feat)
    emb, _ = head_forward(pool_features(feat), weights, branch, training)
    return emb[0] if feat.ndim == 3 else emb


def projection_backward(feat, weights, upstream_grad, branch: str) -> dict:
    """Gradients of ``sum(upstream_grad * projection_forward(feat))`` w.r.t. head parameters.

    BatchNorm runs in training mode (batch statistics), matching how the heads
    are trained.
    """
    feat = np.asarray(feat)
    upstream = np.asarray(upstream_grad, np.float64)
    if feat.ndim == 3:
        upstream = upstream[None, :]
    _, cache = head_forward(pool_features(feat), weights, branch, training=True)
    return head_backward(cache, weights, branch, upstream)
