"""Feature-alignment losses computed across gossip neighbors.

Two penalties discourage neighboring models from drifting apart in feature
space when their local data differs:

* model-variant: each agent runs every received neighbor model on its own
  mini-batch (forward only) and penalizes the distance between its own
  features and those cross-features, sample by sample.
* data-variant: neighbors exchange per-class feature sums and counts; the
  pooled class means act as fixed anchors and each local feature is pulled
  toward the anchor of its label.

Cross-features and class anchors are constants in the gradient: only the
local feature path is differentiated, and the penalty gradients join the
cross-entropy signal at the feature layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    FeatureBatch,
    ModelSpec,
    ShapeMismatch,
    ce_grad_from_tape,
    forward_features,
)

SIMILARITY_KINDS = ("l1", "mse", "cosine")

_COS_EPS = 1e-12


@dataclass(frozen=True)
class CrossFeatureSummary:
    """Per-class feature sums (C, feature_dim) and sample counts (C,)."""

    class_sums: np.ndarray
    class_counts: np.ndarray


@dataclass(frozen=True)
class NeighborhoodRepresentation:
    """Pooled per-class mean features; valid marks classes seen at least once."""

    class_means: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class LossParts:
    ce: float
    mv: float
    dv: float


def summarize(features: FeatureBatch, num_classes: int) -> CrossFeatureSummary:
    """Reduce a feature batch to class-wise sums and counts.

    Classes absent from the batch get a zero row and a zero count, so the
    summary always has num_classes rows regardless of batch content.
    """
    z, labels = features.z, features.labels
    if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels out of range for {num_classes} classes")
    sums = np.zeros((num_classes, z.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, z)
    counts = np.bincount(labels, minlength=num_classes).astype(np.int64)
    return CrossFeatureSummary(sums, counts)


def aggregate(summaries: Sequence[CrossFeatureSummary]) -> NeighborhoodRepresentation:
    """Pool summaries into per-class mean features.

    Equivalent to concatenating every contributing batch and taking class
    means directly; classes with zero total count are flagged invalid and get
    a zero mean row.
    """
    if not summaries:
        raise ValueError("aggregate needs at least one summary")
    shape = summaries[0].class_sums.shape
    for s in summaries:
        if s.class_sums.shape != shape:
            raise ShapeMismatch(f"summary shape {s.class_sums.shape} does not match {shape}")
    total_sums = np.sum([s.class_sums for s in summaries], axis=0)
    total_counts = np.sum([s.class_counts for s in summaries], axis=0)
    valid = total_counts > 0
    means = np.zeros_like(total_sums)
    means[valid] = total_sums[valid] / total_counts[valid, None]
    return NeighborhoodRepresentation(means, valid)


def _pair_terms(u: np.ndarray, v: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-row distance terms between matched rows of u and v, and d(term)/du."""
    if kind == "mse":
        diff = u - v
        return np.einsum("ij,ij->i", diff, diff), 2.0 * diff
    if kind == "l1":
        diff = u - v
        return np.abs(diff).sum(axis=1), np.sign(diff)
    if kind == "cosine":
        nu = np.maximum(np.linalg.norm(u, axis=1), _COS_EPS)
        nv = np.maximum(np.linalg.norm(v, axis=1), _COS_EPS)
        dot = np.einsum("ij,ij->i", u, v)
        cos = dot / (nu * nv)
        grad = (cos / (nu * nu))[:, None] * u - v / (nu * nv)[:, None]
        return 1.0 - cos, grad
    raise ValueError(f"kind must be one of {SIMILARITY_KINDS}, got {kind!r}")


def model_variant_loss(z_local: FeatureBatch, z_cross: Sequence[FeatureBatch],
                       kind: str = "mse") -> tuple[float, np.ndarray]:
    """Distance between local features and each neighbor's cross-features.

    l1 and mse terms are summed over neighbors and averaged over the batch;
    the cosine variant averages over neighbors as well. Returns the loss and
    its gradient with respect to the local feature matrix (cross-features are
    constants).
    """
    z = z_local.z
    total = 0.0
    grad = np.zeros_like(z)
    for fb in z_cross:
        if fb.z.shape != z.shape:
            raise ShapeMismatch(f"cross-feature shape {fb.z.shape} does not match local {z.shape}")
        terms, g = _pair_terms(z, fb.z, kind)
        total += float(terms.sum())
        grad += g
    if not z_cross:
        return 0.0, grad
    scale = 1.0 / len(z) if kind != "cosine" else 1.0 / (len(z) * len(z_cross))
    return total * scale, grad * scale


def data_variant_loss(z_local: FeatureBatch, rep: NeighborhoodRepresentation,
                      kind: str = "mse") -> tuple[float, np.ndarray]:
    """Distance between each local feature and its class's pooled anchor.

    Samples whose class never appeared in the neighborhood are skipped, but
    the average keeps the full batch size in the denominator. Anchors are
    constants in the gradient.
    """
    z, labels = z_local.z, z_local.labels
    if rep.class_means.shape[1] != z.shape[1]:
        raise ShapeMismatch(
            f"anchor dim {rep.class_means.shape[1]} does not match feature dim {z.shape[1]}")
    mask = rep.valid[labels]
    grad = np.zeros_like(z)
    if not mask.any():
        return 0.0, grad
    targets = rep.class_means[labels[mask]]
    terms, g = _pair_terms(z[mask], targets, kind)
    grad[mask] = g / len(z)
    return float(terms.sum()) / len(z), grad


def combined_grad(spec: ModelSpec, params: np.ndarray, x: np.ndarray, labels: np.ndarray,
                  neighbor_params: Sequence[np.ndarray],
                  neighbor_summaries: Sequence[CrossFeatureSummary],
                  lambda_m: float, lambda_d: float, kind: str = "mse",
                  include_self_summary: bool = True) -> tuple[LossParts, np.ndarray]:
    """One agent's full objective gradient for a round, plus its loss parts.

    Runs the local forward once, evaluates every neighbor model on the local
    batch (forward only), pools the received summaries (optionally with the
    agent's own), and backpropagates cross-entropy plus the weighted feature
    penalties in a single reverse sweep. With lambda_m = lambda_d = 0 the
    returned gradient is bit-for-bit the plain cross-entropy gradient; the
    penalty losses are still reported for diagnostics.
    """
    fb, tape = forward_features(spec, params, x, labels)
    cross = [forward_features(spec, p, x, labels)[0] for p in neighbor_params]
    mv, dz_mv = model_variant_loss(fb, cross, kind)

    pool = [summarize(fb, spec.num_classes)] if include_self_summary else []
    pool += list(neighbor_summaries)
    if pool:
        rep = aggregate(pool)
        dv, dz_dv = data_variant_loss(fb, rep, kind)
    else:
        dv, dz_dv = 0.0, np.zeros_like(fb.z)

    upstream = None
    if lambda_m != 0.0 or lambda_d != 0.0:
        upstream = lambda_m * dz_mv + lambda_d * dz_dv
    ce, grad, _ = ce_grad_from_tape(spec, params, tape, labels, upstream)
    return LossParts(ce, mv, dv), grad
