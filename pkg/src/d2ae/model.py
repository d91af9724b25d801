"""The two-branch autoencoder: shared conv encoder, identity-distilling and
identity-dispelling branches, two linear identity classifiers, per-channel
statistical augmentation, and a conv/upsample decoder.

Toy scale: 32x32x3 inputs, 4 stride-2 encoder stages, 3 decoder upsamples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Group, Parameter, ShapeError, Tensor
from .autodiff import ops


@dataclass
class ModelConfig:
    n_id: int
    input_size: int = 32
    feat_dim_t: int = 32
    feat_dim_p: int = 32
    enc_channels: tuple = (16, 32, 64, 64)
    branch_channels: int = 64
    dec_channels: tuple = (64, 32, 16)
    augment_momentum: float = 0.9
    # extra noise multiplier on the distilling branch: attribute detail held
    # in f_T is corrupted for both classification and the augmented
    # reconstruction, so it migrates to f_P, while identity structure (which
    # the classifier forces to be noise-robust) survives
    noise_scale_t: float = 1.0
    init: str = "uniform"  # or "gaussian"
    dtype: str = "float32"

    def __post_init__(self):
        if self.n_id < 2:
            raise ValueError("n_id must be >= 2")
        if self.feat_dim_t < 1 or self.feat_dim_p < 1:
            raise ValueError("feature dims must be >= 1")
        if self.input_size % 8 != 0:
            raise ValueError("input_size must be divisible by 8 (3 decoder upsamples)")
        if self.init not in ("uniform", "gaussian"):
            raise ValueError(f"unknown init {self.init!r}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return {
            "n_id": self.n_id, "input_size": self.input_size,
            "feat_dim_t": self.feat_dim_t, "feat_dim_p": self.feat_dim_p,
            "enc_channels": list(self.enc_channels),
            "branch_channels": self.branch_channels,
            "dec_channels": list(self.dec_channels),
            "augment_momentum": self.augment_momentum,
            "noise_scale_t": self.noise_scale_t,
            "init": self.init, "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["enc_channels"] = tuple(d["enc_channels"])
        d["dec_channels"] = tuple(d["dec_channels"])
        return cls(**d)


@dataclass
class FeaturePair:
    """Latent split of one image (or a batch: rows are samples)."""
    f_t: np.ndarray
    f_p: np.ndarray

    @property
    def f_c(self) -> np.ndarray:
        return np.concatenate([self.f_t, self.f_p], axis=-1)


class D2AEModel:
    """All learnable parameter groups plus running augmentation statistics."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Parameter] = {}
        self.sigma_t = np.zeros(config.feat_dim_t, dtype=config.np_dtype)
        self.sigma_p = np.zeros(config.feat_dim_p, dtype=config.np_dtype)
        self._build(np.random.default_rng(seed))

    # ------------------------------------------------------------------ setup

    def _init_w(self, rng, shape, fan_in, gain=1.0):
        # gain sqrt(2) on relu-fed layers keeps activation variance from
        # collapsing through the stack; linear outputs use gain 1
        if self.config.init == "gaussian":
            w = rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)
        else:
            limit = gain * np.sqrt(3.0 / fan_in)
            w = rng.uniform(-limit, limit, size=shape)
        return w.astype(self.config.np_dtype)

    def _add(self, name, data, group):
        p = Parameter(np.asarray(data, dtype=self.config.np_dtype), group, name)
        self.params[name] = p
        return p

    def _conv_pair(self, rng, name, group, c_in, c_out, k=3, gain=np.sqrt(2.0)):
        self._add(f"{name}.w",
                  self._init_w(rng, (c_out, c_in, k, k), c_in * k * k, gain), group)
        self._add(f"{name}.b", np.zeros(c_out), group)

    def _fc_pair(self, rng, name, group, d_in, d_out, gain=1.0):
        self._add(f"{name}.w", self._init_w(rng, (d_in, d_out), d_in, gain), group)
        self._add(f"{name}.b", np.zeros(d_out), group)

    def _build(self, rng):
        cfg = self.config
        c_prev = 3
        for i, c in enumerate(cfg.enc_channels):
            self._conv_pair(rng, f"enc.conv{i}", Group.ENC, c_prev, c)
            c_prev = c
        for tag, group, feat in (("t", Group.BRANCH_T, cfg.feat_dim_t),
                                 ("p", Group.BRANCH_P, cfg.feat_dim_p)):
            self._conv_pair(rng, f"branch_{tag}.conv", group, c_prev, cfg.branch_channels)
            self._fc_pair(rng, f"branch_{tag}.fc", group, cfg.branch_channels, feat)
        # classifier weights stored (n_id x feat): one row per identity
        self._add("cls_t.w", self._init_w(rng, (cfg.n_id, cfg.feat_dim_t), cfg.feat_dim_t),
                  Group.CLS_T)
        self._add("cls_t.b", np.zeros(cfg.n_id), Group.CLS_T)
        self._add("cls_p.w", self._init_w(rng, (cfg.n_id, cfg.feat_dim_p), cfg.feat_dim_p),
                  Group.CLS_P)
        self._add("cls_p.b", np.zeros(cfg.n_id), Group.CLS_P)

        s0 = cfg.input_size // 8
        self._dec_s0 = s0
        d_in = cfg.feat_dim_t + cfg.feat_dim_p
        self._fc_pair(rng, "dec.fc", Group.DEC, d_in,
                      cfg.dec_channels[0] * s0 * s0, gain=np.sqrt(2.0))
        chans = list(cfg.dec_channels)
        for i in range(len(chans) - 1):
            self._conv_pair(rng, f"dec.conv{i}", Group.DEC, chans[i], chans[i + 1])
        last = len(chans) - 1
        self._conv_pair(rng, f"dec.conv{last}", Group.DEC, chans[-1], chans[-1])
        self._conv_pair(rng, "dec.out", Group.DEC, chans[-1], 3, gain=1.0)

    # ------------------------------------------------------------ param admin

    def parameters(self, groups=None):
        allowed = None if groups is None else set(groups)
        for p in self.params.values():
            if allowed is None or p.group in allowed:
                yield p

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def cast(self, dtype) -> "D2AEModel":
        """Copy of the model in another working precision (for verification)."""
        cfg = ModelConfig.from_dict({**self.config.to_dict(), "dtype": dtype})
        other = D2AEModel.__new__(D2AEModel)
        other.config = cfg
        other.params = {}
        other.sigma_t = self.sigma_t.astype(cfg.np_dtype)
        other.sigma_p = self.sigma_p.astype(cfg.np_dtype)
        other._dec_s0 = self._dec_s0
        for name, p in self.params.items():
            other.params[name] = Parameter(p.data.astype(cfg.np_dtype), p.group, name)
        return other

    # --------------------------------------------------------------- forward

    def _conv_block(self, x, name, stride):
        out = ops.conv2d(x, self.params[f"{name}.w"], stride=stride)
        out = ops.bias_add(out, self.params[f"{name}.b"])
        return ops.relu(out)

    def _encoder_trunk(self, x: Tensor) -> Tensor:
        h = x
        for i in range(len(self.config.enc_channels)):
            h = self._conv_block(h, f"enc.conv{i}", stride=2)
        return h

    def _branch(self, h: Tensor, tag: str) -> Tensor:
        b = self._conv_block(h, f"branch_{tag}.conv", stride=1)
        b = ops.global_avg_pool(b)
        return ops.bias_add(ops.matmul(b, self.params[f"branch_{tag}.fc.w"]),
                            self.params[f"branch_{tag}.fc.b"])

    def encode_batch(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Both branches on the shared trunk activation, computed once."""
        s = self.config.input_size
        if x.data.ndim != 4 or x.shape[1:] != (3, s, s):
            raise ShapeError(f"encode: expected (N, 3, {s}, {s}), got {x.shape}")
        h = self._encoder_trunk(x)
        return self._branch(h, "t"), self._branch(h, "p")

    def encode(self, x: np.ndarray) -> FeaturePair:
        """Single image (3, S, S) -> FeaturePair of plain vectors."""
        x = np.asarray(x, dtype=self.config.np_dtype)
        single = x.ndim == 3
        if single:
            x = x[None]
        f_t, f_p = self.encode_batch(Tensor(x))
        if single:
            return FeaturePair(f_t.data[0].copy(), f_p.data[0].copy())
        return FeaturePair(f_t.data.copy(), f_p.data.copy())

    def _logits(self, f: Tensor, branch: str) -> Tensor:
        tag = branch.lower()
        if tag not in ("t", "p"):
            raise ValueError(f"branch must be 'T' or 'P', got {branch!r}")
        w = self.params[f"cls_{tag}.w"]
        b = self.params[f"cls_{tag}.b"]
        return ops.bias_add(ops.matmul(f, ops.transpose(w)), b)

    def classify(self, f: Tensor, branch: str) -> Tensor:
        """softmax(W f + b) identity prediction for branch 'T' or 'P'."""
        return ops.softmax(self._logits(f, branch))

    def classify_log(self, f: Tensor, branch: str) -> Tensor:
        """log-probability counterpart of classify; same math, but fused
        log-softmax so cross-entropy gradients survive saturation."""
        return ops.log_softmax(self._logits(f, branch))

    def augment(self, f_t: Tensor, f_p: Tensor, mode: str = "train",
                rng: Optional[np.random.Generator] = None,
                fixed_noise=None, fixed_sigma=None) -> tuple[Tensor, Tensor]:
        """Per-channel Gaussian feature augmentation f~ = f + eps*sigma.

        In train mode sigma is the current batch standard deviation (running
        sigma EMA-updated as a side effect); in eval mode the running sigma is
        used. sigma is a constant for differentiation. ``fixed_noise`` /
        ``fixed_sigma`` pin both for gradient verification.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"augment: unknown mode {mode!r}")
        out = []
        for f, which in ((f_t, "t"), (f_p, "p")):
            n = f.shape[0]
            if fixed_sigma is not None:
                sigma = np.asarray(fixed_sigma[which], dtype=f.dtype)
            elif mode == "train":
                if n < 2:
                    raise ValueError("augment: batch std undefined for batch size 1")
                sigma = f.data.std(axis=0)
                running = self.sigma_t if which == "t" else self.sigma_p
                m = self.config.augment_momentum
                running[...] = m * running + (1.0 - m) * sigma
            else:
                sigma = self.sigma_t if which == "t" else self.sigma_p
            if fixed_sigma is None and which == "t":
                # the multiplier rides on the statistics, never on a
                # caller-pinned sigma, so fixed-sigma checks stay exact
                sigma = sigma * self.config.noise_scale_t
            if fixed_noise is not None:
                eps = np.asarray(fixed_noise[which], dtype=f.dtype)
            else:
                if rng is None:
                    raise ValueError("augment: rng required unless fixed_noise given")
                eps = rng.standard_normal(size=f.shape).astype(f.dtype)
            out.append(ops.add(f, Tensor(eps * sigma[None, :])))
        return out[0], out[1]

    def decode_batch(self, f_t: Tensor, f_p: Tensor) -> Tensor:
        cfg = self.config
        if f_t.shape[-1] != cfg.feat_dim_t or f_p.shape[-1] != cfg.feat_dim_p:
            raise ShapeError(
                f"decode: feature dims {f_t.shape[-1]}/{f_p.shape[-1]} do not match "
                f"config {cfg.feat_dim_t}/{cfg.feat_dim_p}")
        n = f_t.shape[0]
        s0 = self._dec_s0
        fc = ops.bias_add(ops.matmul(ops.concat(f_t, f_p, axis=1),
                                     self.params["dec.fc.w"]),
                          self.params["dec.fc.b"])
        h = ops.relu(ops.reshape(fc, (n, cfg.dec_channels[0], s0, s0)))
        n_stages = len(cfg.dec_channels)
        for i in range(n_stages - 1):
            h = ops.upsample2x(h)
            h = self._conv_block(h, f"dec.conv{i}", stride=1)
        h = ops.upsample2x(h)
        h = self._conv_block(h, f"dec.conv{n_stages - 1}", stride=1)
        out = ops.conv2d(h, self.params["dec.out.w"], stride=1)
        out = ops.bias_add(out, self.params["dec.out.b"])
        return ops.sigmoid(out)

    def decode(self, fp: FeaturePair) -> np.ndarray:
        f_t = np.asarray(fp.f_t, dtype=self.config.np_dtype)
        f_p = np.asarray(fp.f_p, dtype=self.config.np_dtype)
        single = f_t.ndim == 1
        if single:
            f_t, f_p = f_t[None], f_p[None]
        img = self.decode_batch(Tensor(f_t), Tensor(f_p)).data
        return img[0].copy() if single else img.copy()

    def forward_full(self, x: Tensor, mode: str = "train",
                     rng: Optional[np.random.Generator] = None,
                     fixed_noise=None, fixed_sigma=None,
                     cls_on_augmented: bool = True) -> dict:
        """One full pass: latent split, augmented split, both identity
        predictions (the adversarial one behind a stop_gradient), and both
        reconstructions (clean and augmented features).
        """
        f_t, f_p = self.encode_batch(x)
        ft_t, ft_p = self.augment(f_t, f_p, mode=mode, rng=rng,
                                  fixed_noise=fixed_noise, fixed_sigma=fixed_sigma)
        cls_t_in = ft_t if cls_on_augmented else f_t
        cls_p_in = ft_p if cls_on_augmented else f_p
        gated_p_in = ops.stop_gradient(cls_p_in)
        y_t = self.classify(cls_t_in, "T")
        y_p = self.classify(cls_p_in, "P")
        y_p_adv = self.classify(gated_p_in, "P")
        x_clean = self.decode_batch(f_t, f_p)
        x_aug = self.decode_batch(ft_t, ft_p)
        return {
            "f_t": f_t, "f_p": f_p, "ft_t": ft_t, "ft_p": ft_p,
            "y_t": y_t, "y_p": y_p, "y_p_adv": y_p_adv,
            # log-probability twins of the predictions; the losses train on
            # these so saturated samples keep a usable gradient
            "ls_t": self.classify_log(cls_t_in, "T"),
            "ls_p": self.classify_log(cls_p_in, "P"),
            "ls_p_adv": self.classify_log(gated_p_in, "P"),
            "x_clean": x_clean, "x_aug": x_aug,
        }
