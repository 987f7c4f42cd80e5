"""Contrastive losses over batches of (pov, aerial) embedding pairs.

Pair ``i`` is positive; every other aerial embedding in the batch is a
negative for pov ``i``.  Losses return ``(loss, grad_pov, grad_aer)`` with
gradients taken w.r.t. the raw (not necessarily unit) embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateBatch, ShapeMismatch, ValidationError

VARIANTS = ("paper-exact", "standard")
NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1
    variant: str = "paper-exact"
    margin: float = 0.3
    symmetric: bool = False
    kind: str = "ntxent"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValidationError("temperature", f"temperature must be > 0, got {self.temperature}")
        if self.variant not in VARIANTS:
            raise ValidationError("variant", f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.margin >= 0:
            raise ValidationError("margin", f"margin must be >= 0, got {self.margin}")
        if self.kind not in ("ntxent", "triplet"):
            raise ValidationError("kind", f"kind must be 'ntxent' or 'triplet', got {self.kind!r}")


def cosine_kernel(a, b, tau: float) -> float:
    """exp(cos(a, b) / tau)."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return float(np.exp(a @ b / (tau * np.linalg.norm(a) * np.linalg.norm(b))))


def _normalize(x):
    norm = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), NORM_EPS)
    return x / norm, norm


def _unnormalize_grad(g, xhat, norm):
    return (g - xhat * (g * xhat).sum(axis=1, keepdims=True)) / norm


def _anchor_terms(logits, exclude_positive):
    """Per-anchor losses and d(loss_i)/d(logits[i, :]) for anchors along rows."""
    b = logits.shape[0]
    eye = np.eye(b, dtype=bool)
    denom_logits = np.where(eye, -np.inf, logits) if exclude_positive else logits
    lse = logsumexp(denom_logits, axis=1)
    per = lse - np.diag(logits)
    soft = np.exp(denom_logits - lse[:, None])
    return per, soft - eye


def ntxent_per_pair(pov, aer, cfg: LossConfig = LossConfig()) -> np.ndarray:
    return _ntxent(pov, aer, cfg)[3]


def ntxent_loss(pov, aer, cfg: LossConfig = LossConfig()):
    """Mean NT-Xent over the batch with gradients for every embedding.

    ``paper-exact`` leaves the positive out of the denominator (the loss can
    go negative); ``standard`` keeps it.  With ``symmetric`` the aerial-anchored
    mean is averaged in.
    """
    loss, gp, ga, _ = _ntxent(pov, aer, cfg)
    return loss, gp, ga


def _ntxent(pov, aer, cfg):
    pov = np.asarray(pov, np.float64)
    aer = np.asarray(aer, np.float64)
    if pov.ndim != 2 or pov.shape != aer.shape:
        raise ShapeMismatch(f"pov {pov.shape} and aerial {aer.shape} batches must be equal (B, D)")
    b = pov.shape[0]
    if b < 2:
        raise DegenerateBatch(f"NT-Xent needs at least 2 pairs, got {b}")
    ph, pn = _normalize(pov)
    ah, an = _normalize(aer)
    logits = ph @ ah.T / cfg.temperature
    exclude = cfg.variant == "paper-exact"

    per, dlog = _anchor_terms(logits, exclude)
    loss = per.mean()
    g_logits = dlog / b
    if cfg.symmetric:
        per_t, dlog_t = _anchor_terms(logits.T, exclude)
        loss = 0.5 * (loss + per_t.mean())
        g_logits = 0.5 * (g_logits + dlog_t.T / b)
    g_s = g_logits / cfg.temperature
    gp = _unnormalize_grad(g_s @ ah, ph, pn)
    ga = _unnormalize_grad(g_s.T @ ph, ah, an)
    return float(loss), gp, ga, per


def triplet_loss(anchor, positive, negative, margin: float = 0.3):
    """max(0, |a-p|^2 - |a-n|^2 + margin) for single vectors or (N, D) batches (mean).

    Returns ``(loss, grad_anchor, grad_positive, grad_negative)``; the
    subgradient at the hinge point is zero.
    """
    a = np.asarray(anchor, np.float64)
    p = np.asarray(positive, np.float64)
    n = np.asarray(negative, np.float64)
    if not (a.shape == p.shape == n.shape):
        raise ShapeMismatch("triplet inputs must share a shape")
    single = a.ndim == 1
    a2, p2, n2 = (np.atleast_2d(v) for v in (a, p, n))
    d_ap = ((a2 - p2) ** 2).sum(axis=1)
    d_an = ((a2 - n2) ** 2).sum(axis=1)
    raw = d_ap - d_an + margin
    active = (raw > 0).astype(np.float64)[:, None] / a2.shape[0]
    loss = float(np.maximum(raw, 0.0).mean())
    ga = active * 2.0 * (n2 - p2)
    gp = active * -2.0 * (a2 - p2)
    gn = active * 2.0 * (a2 - n2)
    if single:
        return loss, ga[0], gp[0], gn[0]
    return loss, ga, gp, gn


def batch_triplet_loss(pov, aer, margin: float = 0.3):
    """Triplet loss averaged over every in-batch negative (B(B-1) triplets), no mining."""
    pov = np.asarray(pov, np.float64)
    aer = np.asarray(aer, np.float64)
    b = pov.shape[0]
    if b < 2:
        raise DegenerateBatch(f"triplet batch needs at least 2 pairs, got {b}")
    ii, kk = np.nonzero(~np.eye(b, dtype=bool))
    loss, ga, gp, gn = triplet_loss(pov[ii], aer[ii], aer[kk], margin)
    gpov = np.zeros_like(pov)
    gaer = np.zeros_like(aer)
    np.add.at(gpov, ii, ga)
    np.add.at(gaer, ii, gp)
    np.add.at(gaer, kk, gn)
    return loss, gpov, gaer
