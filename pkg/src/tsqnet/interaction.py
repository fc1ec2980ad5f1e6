"""Cross-modality interaction: swapped-attention responses and the weighted
four-term training objective, with full analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DimensionError
from .layers import (
    cross_entropy,
    cs_head_bwd,
    cs_head_fwd,
    fc_head_bwd,
    fc_head_fwd,
    ffn_bwd,
    ffn_fwd,
    shared_head_bwd,
    shared_head_fwd,
    softmax,
)
from .model import BranchPass, ModelConfig, branch_backward, branch_forward, zero_grads


@dataclass(frozen=True)
class LossWeights:
    """Weights of the two swapped-response terms in the total objective."""

    alpha: float = 0.6
    beta: float = 0.6

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ConfigError("loss weights must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class BranchOutputs:
    """Single-video outputs of both branches, as consumed by the swap op."""

    A_visual: np.ndarray   # (C, T)
    A_textual: np.ndarray  # (C, T)
    X_visual: np.ndarray   # (T, dp) reduced visual frames
    X_textual: np.ndarray  # (T, dp) reduced textual frames
    z_visual: np.ndarray | None = None
    z_textual: np.ndarray | None = None


def swap_responses(outputs: BranchOutputs) -> tuple[np.ndarray, np.ndarray]:
    """Gather each branch's reduced features with the *other* branch's
    attention rows: (A_t X_v, A_v X_t)."""
    Av, At = np.asarray(outputs.A_visual, float), np.asarray(outputs.A_textual, float)
    Xv, Xt = np.asarray(outputs.X_visual, float), np.asarray(outputs.X_textual, float)
    if Av.shape != At.shape:
        raise DimensionError(f"attention shapes differ: {Av.shape} vs {At.shape}")
    if Xv.shape[0] != Av.shape[1] or Xt.shape[0] != Av.shape[1]:
        raise DimensionError("frame count mismatch between attention and features")
    return At @ Xv, Av @ Xt


def total_loss(
    z_visual: np.ndarray,
    z_textual: np.ndarray,
    z_swap_to_visual: np.ndarray,
    z_swap_to_textual: np.ndarray,
    label: int,
    weights: LossWeights,
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Weighted sum of the four cross-entropy terms for one video.

    Returns the scalar loss and the gradients w.r.t. the four logit
    vectors (already scaled by their loss weights)."""
    zs = [np.asarray(z, dtype=np.float64).reshape(1, -1)
          for z in (z_visual, z_textual, z_swap_to_visual, z_swap_to_textual)]
    C = zs[0].shape[1]
    if not (0 <= label < C):
        raise ConfigError(f"label {label} out of range for {C} categories")
    y = np.array([label])
    scales = (1.0, 1.0, weights.alpha, weights.beta)
    loss = 0.0
    grads = []
    for z, s in zip(zs, scales):
        losses, dz = cross_entropy(z, y)
        loss += s * float(losses[0])
        grads.append(s * dz[0])
    return loss, tuple(grads)


# ---------------------------------------------------------------------------
# Full-network objective on a batch
# ---------------------------------------------------------------------------

def _head_fwd(kind, Rhat, W, b):
    if kind == "cs":
        return cs_head_fwd(Rhat, W, b)
    if kind == "shared":
        return shared_head_fwd(Rhat, W, b)
    return fc_head_fwd(Rhat, W, b)


def _head_bwd(kind, dz, cache):
    if kind == "cs":
        return cs_head_bwd(dz, cache)
    if kind == "shared":
        return shared_head_bwd(dz, cache)
    return fc_head_bwd(dz, cache)


def _swap_branch(params, cfg, branch, R_swap):
    """Push a swapped response through `branch`'s last feed-forward block and
    classifier."""
    lp = f"{branch}.L{cfg.n_layers - 1}."
    Rhat, ffn_cache = ffn_fwd(
        R_swap,
        params[lp + "ffn.W1"], params[lp + "ffn.b1"],
        params[lp + "ffn.W2"], params[lp + "ffn.b2"],
        params[lp + "ffn.gamma"], params[lp + "ffn.beta"], cfg.ffn_norm,
    )
    z, head_cache = _head_fwd(cfg.head_kind, Rhat, params[f"{branch}.cls.W"], params[f"{branch}.cls.b"])
    return z, (ffn_cache, head_cache, lp, branch)


def _swap_branch_bwd(grads, cfg, dz, cache):
    ffn_cache, head_cache, lp, branch = cache
    dRhat, dW, db = _head_bwd(cfg.head_kind, dz, head_cache)
    grads[f"{branch}.cls.W"] += dW
    grads[f"{branch}.cls.b"] += db
    dR, dW1, db1, dW2, db2, dgamma, dbeta = ffn_bwd(dRhat, ffn_cache)
    grads[lp + "ffn.W1"] += dW1
    grads[lp + "ffn.b1"] += db1
    grads[lp + "ffn.W2"] += dW2
    grads[lp + "ffn.b2"] += db2
    grads[lp + "ffn.gamma"] += dgamma
    grads[lp + "ffn.beta"] += dbeta
    return dR


@dataclass
class BatchResult:
    loss: float
    parts: dict[str, float]
    grads: dict[str, np.ndarray] | None
    z_visual: np.ndarray
    z_textual: np.ndarray


def network_loss(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    visual_frames: np.ndarray,   # (B, T, d)
    textual_frames: np.ndarray,  # (B, T, D) precomputed object-embedding features
    labels: np.ndarray,          # (B,)
    weights: LossWeights,
    compute_grads: bool = True,
) -> BatchResult:
    """Mean total objective over a batch, with gradients for every parameter.

    Gradients flow through both branches and, via the swapped responses,
    across them (no stop-gradient anywhere)."""
    labels = np.asarray(labels)
    B = labels.shape[0]

    vp = branch_forward(params, cfg, "vqm", visual_frames)
    tp = branch_forward(params, cfg, "tqm", textual_frames)

    # swapped responses use the other branch's attention over this branch's
    # reduced features (positional rows excluded: they are layer-internal)
    R_tv = np.einsum("bct,btd->bcd", tp.A, vp.Xred)
    R_vt = np.einsum("bct,btd->bcd", vp.A, tp.Xred)
    z_tv, cache_tv = _swap_branch(params, cfg, "vqm", R_tv)
    z_vt, cache_vt = _swap_branch(params, cfg, "tqm", R_vt)

    loss_v, dzv = cross_entropy(vp.z, labels)
    loss_t, dzt = cross_entropy(tp.z, labels)
    loss_tv, dztv = cross_entropy(z_tv, labels)
    loss_vt, dzvt = cross_entropy(z_vt, labels)

    parts = {
        "visual": float(loss_v.mean()),
        "textual": float(loss_t.mean()),
        "swap_to_visual": float(loss_tv.mean()),
        "swap_to_textual": float(loss_vt.mean()),
    }
    total = parts["visual"] + parts["textual"] + weights.alpha * parts["swap_to_visual"] \
        + weights.beta * parts["swap_to_textual"]

    if not compute_grads:
        return BatchResult(total, parts, None, vp.z, tp.z)

    grads = zero_grads(params)
    inv_b = 1.0 / B
    dR_tv = _swap_branch_bwd(grads, cfg, dztv * (weights.alpha * inv_b), cache_tv)
    dR_vt = _swap_branch_bwd(grads, cfg, dzvt * (weights.beta * inv_b), cache_vt)

    dAt_ext = np.einsum("bcd,btd->bct", dR_tv, vp.Xred)
    dXv_ext = np.einsum("bct,bcd->btd", tp.A, dR_tv)
    dAv_ext = np.einsum("bcd,btd->bct", dR_vt, tp.Xred)
    dXt_ext = np.einsum("bct,bcd->btd", vp.A, dR_vt)

    branch_backward(grads, cfg, "vqm", vp, dzv * inv_b, dA_ext=dAv_ext, dXred_ext=dXv_ext)
    branch_backward(grads, cfg, "tqm", tp, dzt * inv_b, dA_ext=dAt_ext, dXred_ext=dXt_ext)
    return BatchResult(total, parts, grads, vp.z, tp.z)


def coarse_predictions(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    visual_frames: np.ndarray,
    textual_frames: np.ndarray,
) -> tuple[BranchPass, BranchPass]:
    """Inference-mode forward of both branches (no interaction)."""
    vp = branch_forward(params, cfg, "vqm", visual_frames)
    tp = branch_forward(params, cfg, "tqm", textual_frames)
    return vp, tp


def fused_probabilities(z_visual: np.ndarray, z_textual: np.ndarray) -> np.ndarray:
    """Mean of the two branches' softmax distributions, for video-level
    scoring of the sampler itself."""
    return 0.5 * (softmax(z_visual, axis=-1) + softmax(z_textual, axis=-1))
