"""Semantic latent-space editing: attribute shifts along probe directions,
identity interpolation, and identity swap. Pure functions over frozen
model snapshots."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analytics import Probe
from .model import D2AEModel, FeaturePair

logger = logging.getLogger(__name__)


@dataclass
class EditRequest:
    attribute_edits: list = field(default_factory=list)  # [(attribute, alpha)]
    identity_target: Optional[tuple] = None              # (f_t_b, beta)
    source_image: Optional[np.ndarray] = None
    source_pair: Optional[FeaturePair] = None


def alpha_max(model: D2AEModel, probe: Probe) -> float:
    """Confidence bound for an edit strength: 3 * sqrt(w' diag(sigma^2) w)
    using the branch's running augmentation sigma."""
    sigma = model.sigma_t if probe.source.upper() == "T" else model.sigma_p
    return float(3.0 * np.sqrt(float(probe.w @ (sigma.astype(np.float64) ** 2 * probe.w))))


def edit_attribute(fp: FeaturePair, probes: dict, edits,
                   model: Optional[D2AEModel] = None) -> tuple[FeaturePair, list]:
    """Apply additive shifts alpha_n * w_n along per-branch probe directions.

    ``probes`` maps attribute name -> Probe (source 'T' or 'P'). When a model
    is supplied, |alpha| is clamped to the 3-sigma confidence bound; applied
    (possibly clamped) strengths are returned alongside the edited pair.
    """
    f_t = np.array(fp.f_t, dtype=np.float64, copy=True)
    f_p = np.array(fp.f_p, dtype=np.float64, copy=True)
    applied = []
    for name, alpha in edits:
        probe = probes.get(name)
        if probe is None:
            raise KeyError(f"unknown attribute {name!r}")
        if probe.source.upper() == "C":
            raise ValueError(f"probe {name!r} was trained on concatenated "
                             "features; editing needs a per-branch probe")
        alpha = float(alpha)
        if model is not None:
            bound = alpha_max(model, probe)
            if bound > 0 and abs(alpha) > bound:
                logger.warning("edit %s: alpha %.4g clamped to +/-%.4g",
                               name, alpha, bound)
                alpha = float(np.clip(alpha, -bound, bound))
        if probe.source.upper() == "T":
            f_t += alpha * probe.w
        else:
            f_p += alpha * probe.w
        applied.append((name, alpha))
    return FeaturePair(f_t, f_p), applied


def identity_interpolate(fp_a: FeaturePair, f_t_b: np.ndarray, beta: float) -> FeaturePair:
    """beta * f_T^A + (1-beta) * f_T^B with f_P^A kept."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    f_t_b = np.asarray(f_t_b, dtype=np.float64)
    if f_t_b.shape != np.shape(fp_a.f_t):
        raise ValueError("identity feature length mismatch")
    return FeaturePair(beta * np.asarray(fp_a.f_t, dtype=np.float64) + (1.0 - beta) * f_t_b,
                       np.array(fp_a.f_p, copy=True))


def identity_swap(fp_a: FeaturePair, fp_b: FeaturePair) -> FeaturePair:
    """Take identity from B, everything else from A."""
    if np.shape(fp_a.f_t) != np.shape(fp_b.f_t):
        raise ValueError("identity feature length mismatch")
    return FeaturePair(np.array(fp_b.f_t, copy=True), np.array(fp_a.f_p, copy=True))


def render_edit(model: D2AEModel, probes: dict, req: EditRequest) -> tuple[np.ndarray, dict]:
    """encode -> apply edits -> decode; returns (image, provenance)."""
    if req.source_pair is not None:
        fp = FeaturePair(np.asarray(req.source_pair.f_t), np.asarray(req.source_pair.f_p))
    elif req.source_image is not None:
        fp = model.encode(np.asarray(req.source_image))
    else:
        raise ValueError("EditRequest needs a source image or feature pair")
    fp, applied = edit_attribute(fp, probes, req.attribute_edits, model=model)
    beta_used = None
    if req.identity_target is not None:
        f_t_b, beta = req.identity_target
        fp = identity_interpolate(fp, np.asarray(f_t_b, dtype=np.float64), float(beta))
        beta_used = float(beta)
    image = model.decode(fp)
    provenance = {"attribute_edits": [[n, a] for n, a in applied], "beta": beta_used}
    return image, provenance
