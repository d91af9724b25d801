"""Loss terms, the weighted total objective, and the routed training step.

Gradient composition per term:

* identity loss           -> encoder, distilling branch, its classifier
* adversarial identity    -> the dispelling classifier only
* confusion loss          -> encoder and dispelling branch (classifier fixed)
* both reconstructions    -> whole autoencoder except the two classifiers
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional

import numpy as np

from .autodiff import Graph, Group, Tensor, backward
from .autodiff import ops
from .model import D2AEModel

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-12

ROUTES = {
    "l_id": frozenset({Group.ENC, Group.BRANCH_T, Group.CLS_T}),
    "l_adv": frozenset({Group.CLS_P}),
    "l_conf": frozenset({Group.ENC, Group.BRANCH_P}),
    "l_rec_clean": frozenset({Group.ENC, Group.BRANCH_T, Group.BRANCH_P, Group.DEC}),
    "l_rec_aug": frozenset({Group.ENC, Group.BRANCH_T, Group.BRANCH_P, Group.DEC}),
}


@dataclass
class TrainConfig:
    lambda_t: float = 1.0
    lambda_p: float = 0.1
    # the dispelling classifier trains at full strength: scaling its only
    # loss down with lambda_p would just slow the adversary, letting it lag
    # the moving dispelled features and destabilize the minimax game
    lambda_adv: float = 1.0
    # chosen so lambda_x * pixel_count ~ 3.6 for 3 x 32 x 32 inputs, keeping
    # the reconstruction term's pull comparable across image resolutions
    lambda_x: float = 1.2e-3
    lr: float = 0.01
    lr_decay: float = 0.1
    lr_decay_every: int = 40
    # epochs at the full rate before decay begins: identity structure needs a
    # sustained high-rate phase, while the adversarial game settles best under
    # a gradual cool-down afterwards
    lr_hold: int = 0
    batch_size: int = 32
    epochs: int = 120
    seed: int = 0
    momentum: float = 0.9
    # small L2 decay keeps classifier logits bounded; without it the softmax
    # saturates late in training and clamped log-probabilities stop learning
    weight_decay: float = 1e-4
    cls_on_augmented: bool = True
    # updates of the dispelling classifier per batch: the encoder moves the
    # dispelled features every step, and a classifier refreshed only once per
    # step lags behind, letting identity hide in directions it has not caught
    # up with yet; extra refinement steps (on the same batch's features) keep
    # the confusion gradient pointed at the real residual identity signal
    adv_steps: int = 1
    # per-parameter gradient-norm ceiling (0 disables). The classifier losses
    # on noise-augmented features can enter a runaway where confidently-wrong
    # logits grow faster than weight decay can shrink them once the learning
    # rate is small; capping the update norm bounds that feedback loop
    grad_clip: float = 0.0
    # target smoothing for the two identity cross-entropies: mixes the one-hot
    # target with the uniform distribution, bounding the logit gap the loss can
    # reward. Without it the identity logits grow without limit once training
    # enters its confident phase, and that growth eventually destabilizes the
    # shared encoder (reconstruction and dispelling collapse with it)
    label_smoothing: float = 0.0
    # ablation switches: drop a term from the objective entirely
    ablate_confusion: bool = False
    ablate_adversary: bool = False

    def __post_init__(self):
        if min(self.lambda_t, self.lambda_p, self.lambda_adv, self.lambda_x) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.adv_steps < 1:
            raise ValueError("adv_steps must be >= 1")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        past = max(0, epoch - self.lr_hold)
        return self.lr * self.lr_decay ** (past // self.lr_decay_every)

    def term_weights(self) -> dict[str, float]:
        return {
            "l_id": self.lambda_t,
            "l_adv": 0.0 if self.ablate_adversary else self.lambda_adv,
            "l_conf": 0.0 if self.ablate_confusion else self.lambda_p,
            "l_rec_clean": self.lambda_x,
            "l_rec_aug": self.lambda_x,
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class LossBundle:
    l_id: float
    l_adv: float
    l_conf: float
    l_rec_clean: float
    l_rec_aug: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def _clamped_log(y: Tensor, what: str) -> Tensor:
    if float(y.data.min()) <= PROB_CLAMP:
        logger.warning("%s: probability clamped at %g", what, PROB_CLAMP)
    return ops.log(ops.clip_min(y, PROB_CLAMP))


def _one_hot(t: np.ndarray, n: int, dtype) -> np.ndarray:
    out = np.zeros((len(t), n), dtype=dtype)
    out[np.arange(len(t)), t] = 1.0
    return out


def loss_identity(y: Tensor, t: np.ndarray) -> Tensor:
    """Batch-mean cross-entropy against the true identity index."""
    t = np.atleast_1d(np.asarray(t))
    n, n_id = y.shape
    if np.any(t < 0) or np.any(t >= n_id):
        raise ValueError("label out of range")
    hot = _one_hot(t, n_id, y.dtype)
    picked = ops.sum_(ops.mul(_clamped_log(y, "loss_identity"), Tensor(hot)))
    return ops.scale(picked, -1.0 / n)


def loss_adv_identity(y_gated: Tensor, t: np.ndarray) -> Tensor:
    """Same cross-entropy; callers must feed predictions computed behind a
    stop_gradient so only the classifier ever receives gradient."""
    return loss_identity(y_gated, t)


def loss_confusion(y: Tensor) -> Tensor:
    """Cross-entropy to the uniform identity target; minimum log(n_id) at the
    uniform prediction (equivalently, maximizing prediction entropy)."""
    n, n_id = y.shape
    s = ops.sum_(_clamped_log(y, "loss_confusion"))
    return ops.scale(s, -1.0 / (n * n_id))


def loss_identity_logp(ls: Tensor, t: np.ndarray, smoothing: float = 0.0) -> Tensor:
    """loss_identity on log-probabilities (fused log-softmax). Same value
    wherever the probability clamp is inactive, but the gradient never dies
    on saturated predictions.

    ``smoothing`` mixes the one-hot target with the uniform distribution:
    target = (1-s)*one_hot + s/K. A nonzero value bounds the logit gap the
    loss rewards, which keeps the identity logits from growing without limit
    late in training (unbounded growth eventually destabilizes every other
    term sharing the encoder).
    """
    t = np.atleast_1d(np.asarray(t))
    n, n_id = ls.shape
    if np.any(t < 0) or np.any(t >= n_id):
        raise ValueError("label out of range")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing must be in [0, 1)")
    if float(ls.data[np.arange(len(t)), t].min()) <= math.log(PROB_CLAMP):
        logger.warning("loss_identity_logp: probability below %g", PROB_CLAMP)
    hot = _one_hot(t, n_id, ls.dtype)
    if smoothing:
        hot = (1.0 - smoothing) * hot + smoothing / n_id
    picked = ops.sum_(ops.mul(ls, Tensor(hot)))
    return ops.scale(picked, -1.0 / n)


def loss_confusion_logp(ls: Tensor) -> Tensor:
    """loss_confusion on log-probabilities; see loss_identity_logp."""
    n, n_id = ls.shape
    if float(ls.data.min()) <= math.log(PROB_CLAMP):
        logger.warning("loss_confusion_logp: probability below %g", PROB_CLAMP)
    return ops.scale(ops.sum_(ls), -1.0 / (n * n_id))


def loss_reconstruction(x: Tensor, xr: Tensor) -> Tensor:
    """Half the summed squared error; batch-mean when inputs are batched."""
    norm = 0.5 / x.shape[0] if x.data.ndim == 4 else 0.5
    return ops.scale(ops.sq_diff(x, xr), norm)


def loss_terms(model: D2AEModel, x: Tensor, labels: np.ndarray, outputs: dict,
               smoothing: float = 0.0) -> dict:
    return {
        "l_id": loss_identity_logp(outputs["ls_t"], labels, smoothing),
        "l_adv": loss_identity_logp(outputs["ls_p_adv"], labels, smoothing),
        "l_conf": loss_confusion_logp(outputs["ls_p"]),
        "l_rec_clean": loss_reconstruction(x, outputs["x_clean"]),
        "l_rec_aug": loss_reconstruction(x, outputs["x_aug"]),
    }


def total_objective(bundle, cfg: TrainConfig) -> float:
    b = bundle.to_dict() if isinstance(bundle, LossBundle) else dict(bundle)
    weights = cfg.term_weights()
    return sum(weights[name] * b[name] for name in weights)


def _bundle_from(terms: dict, cfg: TrainConfig) -> LossBundle:
    vals = {k: float(v.data) for k, v in terms.items()}
    return LossBundle(total=total_objective(vals, cfg), **vals)


class SGD:
    """SGD on routed gradients with optional momentum and L2 weight decay."""

    def __init__(self, model: D2AEModel, momentum: float = 0.0,
                 weight_decay: float = 0.0, grad_clip: float = 0.0):
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self._velocity = {name: np.zeros_like(p.data)
                          for name, p in model.params.items()} if momentum else None

    def step(self, lr: float, groups=None) -> None:
        allowed = None if groups is None else frozenset(groups)
        for name, p in self.model.params.items():
            if allowed is not None and p.group not in allowed:
                continue
            g = p.grad
            if self.grad_clip:
                norm = float(np.linalg.norm(g))
                if norm > self.grad_clip:
                    g = g * (self.grad_clip / norm)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self._velocity is not None:
                v = self._velocity[name]
                v[...] = self.momentum * v + g
                p.data -= lr * v
            else:
                p.data -= lr * g


def backward_routed(graph: Graph, terms: dict, cfg: TrainConfig) -> None:
    """Accumulate each term's gradient into exactly its routed groups."""
    weights = cfg.term_weights()
    for name, loss in terms.items():
        w = weights[name]
        if w != 0.0:
            backward(graph, loss, groups=ROUTES[name], scale=w)


def train_step(model: D2AEModel, batch, cfg: TrainConfig,
               rng: np.random.Generator, lr: Optional[float] = None,
               optimizer: Optional[SGD] = None) -> LossBundle:
    """One SGD update over a (images, labels) batch with exact routing."""
    x_np, labels = batch
    if len(x_np) < 2:
        raise ValueError("train_step needs a batch of >= 2 samples")
    x = Tensor(np.asarray(x_np, dtype=model.config.np_dtype))
    with Graph() as g:
        outputs = model.forward_full(x, mode="train", rng=rng,
                                     cls_on_augmented=cfg.cls_on_augmented)
        terms = loss_terms(model, x, labels, outputs, cfg.label_smoothing)
        # same route and weight, so one sweep covers both reconstructions
        l_rec = ops.add(terms["l_rec_clean"], terms["l_rec_aug"])
    bundle = _bundle_from(terms, cfg)
    if not math.isfinite(bundle.total):
        raise FloatingPointError(f"non-finite loss: {bundle}")
    weights = cfg.term_weights()
    for name in ("l_id", "l_adv", "l_conf"):
        if weights[name] != 0.0:
            backward(g, terms[name], ROUTES[name], scale=weights[name])
    if weights["l_rec_clean"] != 0.0:
        backward(g, l_rec, ROUTES["l_rec_clean"], scale=weights["l_rec_clean"])
    opt = optimizer or SGD(model, cfg.momentum, cfg.weight_decay, cfg.grad_clip)
    step_lr = cfg.lr if lr is None else lr
    opt.step(step_lr)
    model.zero_grads()
    if weights["l_adv"] != 0.0:
        # extra dispelling-classifier refinements on this batch's (constant)
        # feature snapshot; only the CLS_P group is touched
        cls_in = outputs["ft_p"] if cfg.cls_on_augmented else outputs["f_p"]
        snap = cls_in.data.copy()
        for _ in range(cfg.adv_steps - 1):
            with Graph() as g2:
                l_extra = loss_identity_logp(
                    model.classify_log(Tensor(snap), "P"), labels,
                    cfg.label_smoothing)
            backward(g2, l_extra, ROUTES["l_adv"], scale=weights["l_adv"])
            opt.step(step_lr, groups=ROUTES["l_adv"])
            model.zero_grads()
    return bundle


def train(model: D2AEModel, dataset, cfg: TrainConfig,
          log_path=None, eval_fn: Optional[Callable[[D2AEModel, int], dict]] = None,
          log_every: int = 1) -> list[dict]:
    """Epoch loop with deterministic seeded shuffling and step lr decay.

    ``dataset`` is an (images, labels) pair of arrays. Returns per-epoch
    records; also appends them to ``log_path`` as line-delimited JSON.
    """
    x_all, labels_all = dataset
    n = len(x_all)
    if n == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    optimizer = SGD(model, cfg.momentum, cfg.weight_decay, cfg.grad_clip)
    records: list[dict] = []
    fh = open(log_path, "a") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = rng.permutation(n)
            sums = None
            n_batches = 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                if len(idx) < 2:
                    continue
                bundle = train_step(model, (x_all[idx], labels_all[idx]), cfg,
                                    rng, lr=lr, optimizer=optimizer)
                d = bundle.to_dict()
                sums = d if sums is None else {k: sums[k] + d[k] for k in d}
                n_batches += 1
            record = {"epoch": epoch, "lr": lr}
            record.update({k: v / n_batches for k, v in sums.items()})
            if eval_fn is not None:
                record.update(eval_fn(model, epoch))
            records.append(record)
            if fh and epoch % log_every == 0:
                fh.write(json.dumps(record) + "\n")
                fh.flush()
    finally:
        if fh:
            fh.close()
    return records
