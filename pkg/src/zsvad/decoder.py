"""Mask decoder producing frame- and pixel-level anomaly scores, plus losses.

Per frame the decoder runs a small token set ``[mask token, object-score
token, prompt]`` against the patch embeddings through two-way blocks.
Pixel logits are the inner product of the (mapped) mask token with
per-patch embeddings, bilinearly upsampled. The frame logit is a linear
head on the object-score token.

Training losses are sigmoid focal and dice on pixel logits plus binary
cross-entropy on the object-score logit. Each returns
its value and the closed-form gradient with respect to the logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import VisionFeatures
from .errors import ContractViolation
from .masks import resize_nearest
from .nn import TwoWayBlock, flatten_params, gaussian, load_params, save_params, unflatten_into
from .numerics import Rng, sigmoid, string_seed


@dataclass
class DecoderWeights:
    w_img: np.ndarray       # vision_dim x prompt_dim
    b_img: np.ndarray       # prompt_dim
    mask_token: np.ndarray  # prompt_dim
    obj_token: np.ndarray   # prompt_dim
    blocks: list = field(default_factory=list)
    w_hyper: np.ndarray = None  # prompt_dim x pixel_dim, mask token -> pixel embedding space
    w_up: np.ndarray = None     # prompt_dim x pixel_dim, patch embedding -> pixel embedding space
    b_mask: np.ndarray = None   # scalar
    w_obj: np.ndarray = None    # prompt_dim
    b_obj: np.ndarray = None    # scalar

    @classmethod
    def init(cls, seed: int = 0, vision_dim: int = 64, prompt_dim: int = 64, pixel_dim: int = 32, depth: int = 2,
             mlp_dim: int = 128) -> "DecoderWeights":
        rng = Rng(string_seed(seed, "decoder"))
        return cls(
            w_img=gaussian(rng, vision_dim, prompt_dim),
            b_img=np.zeros(prompt_dim),
            mask_token=rng.normals((prompt_dim,)),
            obj_token=rng.normals((prompt_dim,)),
            blocks=[TwoWayBlock.init(rng, prompt_dim, prompt_dim, prompt_dim, mlp_dim) for _ in range(depth)],
            w_hyper=gaussian(rng, prompt_dim, pixel_dim),
            w_up=gaussian(rng, prompt_dim, pixel_dim),
            b_mask=np.zeros(()),
            w_obj=gaussian(rng, prompt_dim, 1)[:, 0],
            b_obj=np.zeros(()),
        )

    @property
    def prompt_dim(self) -> int:
        return self.mask_token.shape[0]

    def save(self, directory) -> None:
        save_params(directory, flatten_params(self))

    @classmethod
    def load(cls, directory, template: "DecoderWeights") -> "DecoderWeights":
        return unflatten_into(template, load_params(directory))


@dataclass
class ScoreBundle:
    frame_scores: np.ndarray   # T, in [0, 1]
    pixel_scores: np.ndarray   # T x H' x W', in [0, 1]
    frame_logits: np.ndarray
    pixel_logits: np.ndarray
    patch_logits: np.ndarray   # T x rows x cols, before upsampling


def _interp_matrix(n_in: int, factor: int) -> np.ndarray:
    """Rows of weights for half-pixel-centred linear upsampling with edge clamp."""
    n_out = n_in * factor
    src = np.clip((np.arange(n_out) + 0.5) / factor - 0.5, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def bilinear_upsample(x, factor: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if factor == 1:
        return x.copy()
    r = _interp_matrix(x.shape[-2], factor)
    c = _interp_matrix(x.shape[-1], factor)
    return r @ x @ c.T


def decode(prompts, vision: VisionFeatures, w: DecoderWeights, upsample: int = 4) -> ScoreBundle:
    prompts = np.asarray(getattr(prompts, "prompts", prompts), dtype=np.float64)
    feats = vision.features
    if prompts.ndim != 2 or prompts.shape[1] != w.prompt_dim:
        raise ContractViolation(f"prompt must be T x prompt_dim={w.prompt_dim}, got {prompts.shape}")
    if prompts.shape[0] != feats.shape[0]:
        raise ContractViolation(f"{prompts.shape[0]} prompts for {feats.shape[0]} frames")
    if feats.shape[2] != w.w_img.shape[0]:
        raise ContractViolation(f"decoder expects vision_dim={w.w_img.shape[0]}, got {feats.shape[2]}")
    if upsample < 1:
        raise ContractViolation("upsample factor must be >= 1")
    rows, cols = vision.patch_grid
    frame_logits = np.empty(prompts.shape[0])
    patch_logits = np.empty((prompts.shape[0], rows, cols))
    for t in range(prompts.shape[0]):
        tokens = np.stack([w.mask_token, w.obj_token, prompts[t]])
        src = feats[t] @ w.w_img + w.b_img
        for block in w.blocks:
            tokens, src = block(tokens, src)
        mask_vec = tokens[0] @ w.w_hyper
        patch_logits[t] = ((src @ w.w_up) @ mask_vec + w.b_mask).reshape(rows, cols)
        frame_logits[t] = tokens[1] @ w.w_obj + w.b_obj
    pixel_logits = bilinear_upsample(patch_logits, upsample)
    return ScoreBundle(sigmoid(frame_logits), sigmoid(pixel_logits), frame_logits, pixel_logits, patch_logits)


@dataclass(frozen=True)
class LossConfig:
    seg_weight: float = 1.0
    focal_weight: float = 20.0
    dice_weight: float = 1.0
    obj_weight: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    obj_loss: str = "bce"

    def __post_init__(self):
        weights = (self.seg_weight, self.focal_weight, self.dice_weight, self.obj_weight)
        if not all(np.isfinite(v) and v >= 0 for v in weights):
            raise ContractViolation("loss weights must be finite and non-negative")
        if self.focal_gamma < 0 or not 0.0 <= self.focal_alpha <= 1.0:
            raise ContractViolation("focal gamma must be >= 0 and alpha in [0, 1]")
        if self.obj_loss not in ("bce", "focal"):
            raise ContractViolation("obj_loss must be 'bce' or 'focal'")


def focal_loss(logits, targets, alpha: float | None = 0.25, gamma: float = 2.0):
    """Mean sigmoid focal loss and its gradient w.r.t. ``logits``.

    ``alpha=None`` disables class weighting; with ``gamma=0`` that is
    plain binary cross-entropy.
    """
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if x.shape != t.shape:
        raise ContractViolation(f"focal_loss: logits {x.shape} vs targets {t.shape}")
    p = sigmoid(x)
    q = sigmoid(-x)                      # 1 - p without cancellation
    log_p = -np.logaddexp(0.0, -x)
    log_q = -np.logaddexp(0.0, x)
    a1, a0 = (1.0, 1.0) if alpha is None else (alpha, 1.0 - alpha)
    pos = a1 * q ** gamma
    neg = a0 * p ** gamma
    loss = -(t * pos * log_p + (1.0 - t) * neg * log_q)
    grad = t * pos * (gamma * p * log_p - q) + (1.0 - t) * neg * (p - gamma * q * log_q)
    n = max(x.size, 1)
    return float(loss.sum() / n), grad / n


def dice_loss_from_probs(probs, targets, smooth: float = 1.0):
    """``1 - (2 sum(p t) + s) / (sum p + sum t + s)`` and its gradient w.r.t. ``probs``."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ContractViolation(f"dice_loss: probs {p.shape} vs targets {t.shape}")
    num = 2.0 * (p * t).sum() + smooth
    den = p.sum() + t.sum() + smooth
    grad = -(2.0 * t * den - num) / den ** 2
    return float(1.0 - num / den), grad


def dice_loss(logits, targets, smooth: float = 1.0):
    """Dice loss on ``sigmoid(logits)``; gradient is w.r.t. ``logits``."""
    x = np.asarray(logits, dtype=np.float64)
    p = sigmoid(x)
    loss, grad_p = dice_loss_from_probs(p, targets, smooth)
    return loss, grad_p * p * sigmoid(-x)


def seg_loss(frame_logits, pixel_logits, frame_targets, pixel_targets, cfg: LossConfig = LossConfig()):
    """Weighted segmentation objective.

    ``seg_weight * (focal_weight * focal(pixels) + dice_weight * mean_t dice(pixels_t)
    + obj_weight * obj(frame logits))``. Pixel targets at a different
    resolution are resampled to the logit grid by nearest neighbour.

    Returns ``(loss, grads, parts)`` with ``grads = {"frame": ..., "pixel": ...}``
    and the unweighted component values in ``parts``.
    """
    fl = np.asarray(frame_logits, dtype=np.float64)
    pl = np.asarray(pixel_logits, dtype=np.float64)
    ft = np.asarray(frame_targets, dtype=np.float64)
    pt = np.asarray(pixel_targets, dtype=np.float64)
    if pl.ndim != 3 or fl.shape != (pl.shape[0],) or ft.shape != fl.shape:
        raise ContractViolation(f"seg_loss: frame {fl.shape}/{ft.shape}, pixel {pl.shape}")
    if pt.ndim != 3 or pt.shape[0] != pl.shape[0]:
        raise ContractViolation(f"seg_loss: pixel targets {pt.shape} for logits {pl.shape}")
    if pt.shape != pl.shape:
        pt = resize_nearest(pt, pl.shape[1:]).astype(np.float64)

    focal, g_focal = focal_loss(pl, pt, cfg.focal_alpha, cfg.focal_gamma)
    dice = 0.0
    g_dice = np.empty_like(pl)
    for t in range(pl.shape[0]):
        d, g = dice_loss(pl[t], pt[t])
        dice += d / pl.shape[0]
        g_dice[t] = g / pl.shape[0]
    if cfg.obj_loss == "bce":
        obj, g_obj = focal_loss(fl, ft, alpha=None, gamma=0.0)
    else:
        obj, g_obj = focal_loss(fl, ft, cfg.focal_alpha, cfg.focal_gamma)

    s = cfg.seg_weight
    loss = s * (cfg.focal_weight * focal + cfg.dice_weight * dice + cfg.obj_weight * obj)
    grads = {
        "pixel": s * (cfg.focal_weight * g_focal + cfg.dice_weight * g_dice),
        "frame": s * cfg.obj_weight * g_obj,
    }
    parts = {"focal": focal, "dice": dice, "obj": obj}
    return loss, grads, parts
