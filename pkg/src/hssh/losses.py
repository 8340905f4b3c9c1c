"""Hyperbolic consistency loss, cross-entropy, and their combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import poincare
from . import tensor as T
from .tensor import Tensor
from .encoder import StateEmbedding

DEFAULT_LAMBDA = 0.5


class LabelOutOfRange(T.TensorError):
    pass


@dataclass
class BatchLabels:
    fine: np.ndarray
    coarse: np.ndarray


@dataclass
class HyperbolicEmbeddingSet:
    """Row-aligned ball points per stage, before and after hallucination.

    ``z_tilde`` is None when no hallucinated branch ran; the consistency
    term is then zero and only the same-coarse pair term remains.
    """

    z: dict[int, Tensor]
    z_tilde: dict[int, Tensor] | None
    stages: tuple[int, ...]


def project_stage(f: StateEmbedding, c: float) -> Tensor:
    """Pool a feature block over space and map each row onto the ball."""
    pooled = T.mean(f.f, axes=[2, 3])
    return poincare.project_to_ball(poincare.exp_map_0(pooled, c), c, margin_only=True)


def same_coarse_pairs(coarse: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unordered distinct index pairs sharing a coarse label, in
    lexicographic sample order."""
    n = len(coarse)
    ai, bi = [], []
    for i in range(n):
        for j in range(i + 1, n):
            if coarse[i] == coarse[j]:
                ai.append(i)
                bi.append(j)
    return np.asarray(ai, dtype=np.intp), np.asarray(bi, dtype=np.intp)


def hmc_loss(emb: HyperbolicEmbeddingSet, labels: BatchLabels, c: float) -> Tensor:
    """Mean over stages of the pre/post-hallucination consistency distance,
    plus the mean distance over same-coarse-category pairs of the stage-4
    pre-hallucination embeddings (zero when no such pair exists)."""
    terms = []
    if emb.z_tilde is not None:
        for stage in emb.stages:
            d = poincare.distance(emb.z[stage], emb.z_tilde[stage], c)
            terms.append(T.mean(d, axes=[0]))
    if terms:
        consistency = terms[0]
        for t in terms[1:]:
            consistency = consistency + t
        consistency = consistency / float(len(terms))
    else:
        consistency = Tensor(0.0)
    ai, bi = same_coarse_pairs(labels.coarse)
    if len(ai) == 0:
        return consistency
    z4 = emb.z[4]
    za = T.take(z4, ai, axis=0)
    zb = T.take(z4, bi, axis=0)
    pair = T.mean(poincare.distance(za, zb, c), axes=[0])
    return consistency + pair


def cls_loss(logits: Tensor, fine: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class, stabilized by
    subtracting the (detached) row max."""
    b, k = logits.shape
    if k < 2:
        raise LabelOutOfRange("need at least two classes")
    fine = np.asarray(fine)
    if fine.min() < 0 or fine.max() >= k:
        raise LabelOutOfRange(f"labels outside [0, {k})")
    shift = logits - Tensor(logits.data.max(axis=1, keepdims=True))
    lse = T.ln(T.sum_(T.exp(shift), axes=[1], keepdims=True))
    logp = shift - lse
    onehot = np.zeros((b, k))
    onehot[np.arange(b), fine] = 1.0
    return -T.sum_(logp * Tensor(onehot), axes=[0, 1]) / float(b)


def total_loss(cls: Tensor, cls_tilde: Tensor | None, hmc: Tensor | None,
               lam: float = DEFAULT_LAMBDA) -> Tensor:
    """cls + cls_tilde + lam * hmc, with absent terms dropped."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    out = cls
    if cls_tilde is not None:
        out = out + cls_tilde
    if hmc is not None:
        out = out + lam * hmc
    return out
