"""Measurements over trained models: verification metrics, linear attribute
probes, channel Gaussianity (adjusted R^2), channel correlation, residual
maps, and a 2-D PCA embedding export.

All functions are pure over frozen model snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .model import D2AEModel, FeaturePair
from . import data as data_mod


# ------------------------------------------------------------------ features

def extract_features(model: D2AEModel, images: np.ndarray,
                     batch_size: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Encode a stack of images; returns (f_T, f_P) matrices."""
    fts, fps = [], []
    for start in range(0, len(images), batch_size):
        chunk = np.asarray(images[start:start + batch_size], dtype=model.config.np_dtype)
        f_t, f_p = model.encode_batch(Tensor(chunk))
        fts.append(f_t.data)
        fps.append(f_p.data)
    return np.concatenate(fts), np.concatenate(fps)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------- ROC sweep

@dataclass
class VerificationReport:
    accuracy: float
    best_threshold: float
    tpr_at_fpr: dict
    roc: list  # (fpr, tpr) points, sorted by fpr

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "best_threshold": self.best_threshold,
                "tpr_at_fpr": {str(k): v for k, v in self.tpr_at_fpr.items()},
                "roc": [list(p) for p in self.roc]}


def verification_roc(scores_same: Sequence[float], scores_diff: Sequence[float],
                     fprs: Sequence[float] = (0.001, 0.01, 0.1)) -> VerificationReport:
    """Exhaustive threshold sweep: predict 'same' when score >= threshold.

    Accuracy is the best (TP+TN)/total over all thresholds; TPR@FPR is the max
    TPR among thresholds with FPR <= target, ties broken toward the higher
    threshold.
    """
    same = np.asarray(scores_same, dtype=np.float64)
    diff = np.asarray(scores_diff, dtype=np.float64)
    if len(same) == 0 or len(diff) == 0:
        raise ValueError("both score lists must be nonempty")
    all_scores = np.concatenate([same, diff])
    distinct = np.unique(all_scores)
    # midpoints between consecutive distinct scores, plus sentinels outside
    cands = np.concatenate([[distinct[0] - 1.0],
                            (distinct[:-1] + distinct[1:]) / 2.0,
                            [distinct[-1] + 1.0]])
    n_s, n_d = len(same), len(diff)
    best_acc, best_thr = -1.0, cands[0]
    points = []
    for thr in cands:  # descending thresholds give ascending FPR
        tpr = float((same >= thr).sum()) / n_s
        fpr = float((diff >= thr).sum()) / n_d
        acc = ((same >= thr).sum() + (diff < thr).sum()) / (n_s + n_d)
        points.append((fpr, tpr, thr))
        if acc > best_acc:
            best_acc, best_thr = float(acc), float(thr)
    tpr_at = {}
    for target in fprs:
        ok = [(tpr, thr) for fpr, tpr, thr in points if fpr <= target]
        # max TPR; among equals prefer the higher threshold
        tpr_at[float(target)] = max(ok, key=lambda p: (p[0], p[1]))[0] if ok else 0.0
    roc = sorted({(round(f, 12), round(t, 12)) for f, t, _ in points})
    return VerificationReport(best_acc, best_thr, tpr_at, [tuple(p) for p in roc])


# ------------------------------------------------------------- linear probes

@dataclass
class Probe:
    attribute: str
    source: str           # "T", "P", or "C"
    w: np.ndarray         # unit-norm direction in raw feature space
    bias: float           # rescaled to match the unit direction
    accuracy: float       # held-out accuracy
    epochs: int
    l2: float


@dataclass
class ProbeConfig:
    epochs: int = 200
    lr: float = 0.1
    l2: float = 1e-3
    holdout: float = 0.3
    seed: int = 0


def train_probe(features: np.ndarray, labels: np.ndarray,
                cfg: Optional[ProbeConfig] = None,
                attribute: str = "", source: str = "") -> Probe:
    """Soft-margin linear SVM via subgradient descent on hinge loss + L2.

    Features are standardized internally; the returned direction is mapped
    back to raw feature space and unit-normalized.
    """
    cfg = cfg or ProbeConfig()
    x = np.asarray(features, dtype=np.float64)
    y01 = np.asarray(labels).astype(np.int64)
    classes = np.unique(y01)
    if len(classes) < 2:
        raise ValueError("labels contain a single class")
    y = np.where(y01 > 0, 1.0, -1.0)
    if min((y > 0).sum(), (y < 0).sum()) < 2:
        raise ValueError("need >=2 samples per class")

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(x))
    n_hold = max(1, int(round(len(x) * cfg.holdout)))
    hold, fit = order[:n_hold], order[n_hold:]
    mu, sd = x[fit].mean(axis=0), x[fit].std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    xs = (x - mu) / sd

    w = np.zeros(x.shape[1])
    b = 0.0
    for t in range(1, cfg.epochs + 1):
        margin = y[fit] * (xs[fit] @ w + b)
        active = margin < 1.0
        gw = cfg.l2 * w - (y[fit, None] * xs[fit])[active].sum(axis=0) / len(fit)
        gb = -float(y[fit][active].sum()) / len(fit)
        step = cfg.lr / np.sqrt(t)
        w -= step * gw
        b -= step * gb
    pred = (xs[hold] @ w + b) >= 0
    acc = float((pred == (y[hold] > 0)).mean())

    w_raw = w / sd
    scale = np.linalg.norm(w_raw)
    if scale < 1e-12:
        raise ValueError("probe collapsed to the zero direction")
    w_unit = w_raw / scale
    bias_unit = float((b - w_raw @ mu) / scale)
    return Probe(attribute=attribute, source=source, w=w_unit, bias=bias_unit,
                 accuracy=acc, epochs=cfg.epochs, l2=cfg.l2)


def probe_decision(probe: Probe, features: np.ndarray) -> np.ndarray:
    return np.asarray(features, dtype=np.float64) @ probe.w + probe.bias


def train_identity_probe(features: np.ndarray, labels: np.ndarray, n_classes: int,
                         epochs: int = 400, lr: float = 0.5, l2: float = 1e-4):
    """Multinomial logistic regression (full-batch GD); returns (W, b)."""
    x = np.asarray(features, dtype=np.float64)
    mu, sd = x.mean(axis=0), x.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    xs = (x - mu) / sd
    n, d = xs.shape
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    hot = np.zeros((n, n_classes))
    hot[np.arange(n), labels] = 1.0
    for _ in range(epochs):
        z = xs @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - hot) / n
        w -= lr * (xs.T @ g + l2 * w)
        b -= lr * g.sum(axis=0)
    return {"w": w, "b": b, "mu": mu, "sd": sd}


def identity_probe_accuracy(probe: dict, features: np.ndarray, labels: np.ndarray) -> float:
    xs = (np.asarray(features, dtype=np.float64) - probe["mu"]) / probe["sd"]
    pred = (xs @ probe["w"] + probe["b"]).argmax(axis=1)
    return float((pred == labels).mean())


def probe_suite(model: D2AEModel, dataset, cfg: Optional[ProbeConfig] = None) -> dict:
    """Attribute probes per (attribute x feature source) on the test split.

    Returns {"accuracy": {attr: {"T":..,"P":..,"C":..}},
             "t_minus_p": {attr: diff}, "probes": {(attr, source): Probe}}.
    """
    images, _, _ = dataset.subset("test")
    idx = dataset.split_indices("test")
    labels_all = data_mod.binarize_factors(dataset)[idx]
    f_t, f_p = extract_features(model, images)
    sources = {"T": f_t, "P": f_p, "C": np.concatenate([f_t, f_p], axis=1)}
    accuracy: dict = {}
    probes: dict = {}
    for a_i, attr in enumerate(data_mod.ATTRIBUTES):
        accuracy[attr] = {}
        for tag, feats in sources.items():
            try:
                probe = train_probe(feats, labels_all[:, a_i], cfg,
                                    attribute=attr, source=tag)
            except ValueError:
                # test split too small/imbalanced for this attribute
                accuracy[attr][tag] = None
                continue
            probes[(attr, tag)] = probe
            accuracy[attr][tag] = probe.accuracy
    t_minus_p = {a: accuracy[a]["T"] - accuracy[a]["P"] for a in accuracy
                 if accuracy[a]["T"] is not None and accuracy[a]["P"] is not None}
    return {"accuracy": accuracy, "t_minus_p": t_minus_p, "probes": probes}


# --------------------------------------------------- channel-level statistics

def channel_gaussianity(features: np.ndarray) -> list:
    """Per-channel adjusted R^2 of a Gaussian-density fit to the empirical
    histogram. Returns a list of floats (nan where variance vanishes)."""
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    if n < 100:
        raise ValueError("need >= 100 samples")
    k = min(50, n // 20)
    out = []
    for ch in range(x.shape[1]):
        col = x[:, ch]
        mu, sd = col.mean(), col.std()
        if sd * sd <= 1e-12:
            out.append(float("nan"))
            continue
        lo, hi = mu - 4 * sd, mu + 4 * sd
        heights, edges = np.histogram(col, bins=k, range=(lo, hi), density=True)
        centers = (edges[:-1] + edges[1:]) / 2.0
        fit = np.exp(-0.5 * ((centers - mu) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
        ss_res = float(((heights - fit) ** 2).sum())
        ss_tot = float(((heights - heights.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
        out.append(1.0 - (1.0 - r2) * (k - 1) / (k - 3))
    return out


def channel_correlation(features_t: np.ndarray, features_p: np.ndarray) -> dict:
    """Pearson correlation over concatenated channels; the |rho| histogram and
    the below-0.3 fraction exclude the diagonal."""
    x = np.concatenate([np.asarray(features_t, dtype=np.float64),
                        np.asarray(features_p, dtype=np.float64)], axis=1)
    if len(x) < 100:
        raise ValueError("need >= 100 samples")
    sd = x.std(axis=0)
    degenerate = sd * sd <= 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(x, rowvar=False)
    corr[np.ix_(degenerate, degenerate)] = np.nan
    np.fill_diagonal(corr, 1.0)
    off = corr[~np.eye(len(corr), dtype=bool)]
    off = off[np.isfinite(off)]
    hist, edges = np.histogram(np.abs(off), bins=20, range=(0.0, 1.0))
    return {
        "corr": corr,
        "abs_hist": hist,
        "abs_hist_edges": edges,
        "frac_below_0.3": float((np.abs(off) < 0.3).mean()) if len(off) else float("nan"),
        "degenerate_channels": np.flatnonzero(degenerate).tolist(),
    }


# --------------------------------------------------------- decoder diagnostics

def residual_map(model: D2AEModel, mean_pair: FeaturePair, branch: str,
                 w: np.ndarray, alpha: float) -> np.ndarray:
    """decode(mean features with alpha*w added on one branch) minus
    decode(mean features); signed image."""
    w = np.asarray(w, dtype=np.float64)
    tag = branch.lower()
    if tag == "t":
        if w.shape != (model.config.feat_dim_t,):
            raise ValueError(f"direction length {w.shape} != feat_dim_t")
        edited = FeaturePair(mean_pair.f_t + alpha * w, mean_pair.f_p)
    elif tag == "p":
        if w.shape != (model.config.feat_dim_p,):
            raise ValueError(f"direction length {w.shape} != feat_dim_p")
        edited = FeaturePair(mean_pair.f_t, mean_pair.f_p + alpha * w)
    else:
        raise ValueError(f"branch must be 'T' or 'P', got {branch!r}")
    return model.decode(edited) - model.decode(mean_pair)


def embed_2d(features: np.ndarray) -> np.ndarray:
    """Top-2 PCA projection with a deterministic sign convention (the largest-
    magnitude loading of each component is positive)."""
    x = np.asarray(features, dtype=np.float64)
    if len(x) < 3:
        raise ValueError("need >= 3 samples")
    centered = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int((s > 1e-12).sum())
    comps = vt[:2]
    coords = np.zeros((len(x), 2))
    for i in range(min(2, rank)):
        c = comps[i]
        if c[np.argmax(np.abs(c))] < 0:
            c = -c
        coords[:, i] = centered @ c
    return coords


# ------------------------------------------------------------------- reports

def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def reconstruction_psnr(model: D2AEModel, images: np.ndarray,
                        batch_size: int = 128) -> float:
    vals = []
    for start in range(0, len(images), batch_size):
        chunk = np.asarray(images[start:start + batch_size], dtype=model.config.np_dtype)
        f_t, f_p = model.encode_batch(Tensor(chunk))
        rec = model.decode_batch(f_t, f_p).data
        vals.append(((chunk - rec) ** 2).mean(axis=(1, 2, 3)))
    mse = float(np.concatenate(vals).mean())
    return float("inf") if mse == 0 else float(10.0 * np.log10(1.0 / mse))


def mean_prediction_entropy(model: D2AEModel, images: np.ndarray) -> float:
    """Mean entropy of the dispelling classifier's prediction (eval mode)."""
    f_t, f_p = extract_features(model, images)
    y = model.classify(Tensor(np.asarray(f_p, dtype=model.config.np_dtype)), "P").data
    y = np.clip(y, 1e-12, 1.0)
    return float((-y * np.log(y)).sum(axis=1).mean())


def verification_report(model: D2AEModel, dataset, n_pairs: int = 400,
                        seed: int = 0, source: str = "T") -> VerificationReport:
    # cap the request by what the test split can combinatorially provide
    ids = dataset.identities[dataset.split_indices("test")]
    _, counts = np.unique(ids, return_counts=True)
    same_avail = int((counts * (counts - 1) // 2).sum())
    diff_avail = int((counts.sum() ** 2 - (counts ** 2).sum()) // 2)
    n_pairs = min(n_pairs, 2 * min(same_avail, diff_avail))
    pairs = data_mod.make_pairs(dataset, n_pairs, seed=seed)
    f_t, f_p = extract_features(model, dataset.images)
    feats = {"T": f_t, "P": f_p,
             "C": np.concatenate([f_t, f_p], axis=1)}[source.upper()]
    same = [cosine_similarity(feats[i], feats[j]) for i, j, s in pairs if s]
    diff = [cosine_similarity(feats[i], feats[j]) for i, j, s in pairs if not s]
    return verification_roc(same, diff)
