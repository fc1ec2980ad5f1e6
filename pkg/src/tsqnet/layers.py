"""Query-attention building blocks with hand-derived backward passes.

Everything here is plain float64 numpy.  The *_fwd/*_bwd pairs operate on a
batch axis and return the caches the backward pass needs; the public
single-video operations (`tsq_attention`, `ffn_forward`, the classifiers)
wrap them with batch size 1.

Shape conventions: B batch, C categories (query rows), T frames, dp reduced
feature dimension, H attention heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DimensionError, NumericError

NORM_EPS = 1e-6


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtraction)."""
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_bwd(s: np.ndarray, ds: np.ndarray) -> np.ndarray:
    return s * (ds - (ds * s).sum(axis=-1, keepdims=True))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _check_finite(arr: np.ndarray, layer: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{layer}: non-finite values")


# ---------------------------------------------------------------------------
# Cross attention (queries against a frame sequence)
# ---------------------------------------------------------------------------

def attention_fwd(E, X, Wq, Wk, Wv, n_heads: int = 1):
    """Scaled dot-product attention of query rows E against sequence X.

    E: (C, dp) shared across the batch, or (B, C, dp) per item.
    X: (B, T, dp).  Returns (A, R, cache) with A (B, C, T) the head-averaged
    attention and R (B, C, dp) the gathered responses.
    """
    shared = E.ndim == 2
    B, T, dp = X.shape
    C = E.shape[-2]
    H = n_heads
    if dp % H:
        raise ConfigError(f"head count {H} must divide reduced dim {dp}")
    dh = dp // H
    scale = 1.0 / np.sqrt(dh)

    Q = E @ Wq
    K = X @ Wk
    V = X @ Wv
    Kh = K.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    Vh = V.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    if shared:
        Qh = Q.reshape(C, H, dh).transpose(1, 0, 2)  # (H, C, dh)
        logits = np.einsum("hcd,bhtd->bhct", Qh, Kh) * scale
    else:
        Qh = Q.reshape(B, C, H, dh).transpose(0, 2, 1, 3)  # (B, H, C, dh)
        logits = np.einsum("bhcd,bhtd->bhct", Qh, Kh) * scale

    Ah = softmax(logits, axis=-1)  # (B, H, C, T)
    Rh = np.einsum("bhct,bhtd->bhcd", Ah, Vh)
    R = Rh.transpose(0, 2, 1, 3).reshape(B, C, dp)
    A = Ah.mean(axis=1)

    cache = (E, X, Qh, Kh, Vh, Ah, Wq, Wk, Wv, scale, shared)
    return A, R, cache


def attention_bwd(dA_ext, dR, cache):
    """Backward of attention_fwd.

    dA_ext: (B, C, T) gradient arriving on the head-averaged attention map
    (e.g. from a swapped-response path), or None.  dR: (B, C, dp).
    Returns (dE, dX, dWq, dWk, dWv); dE is (C, dp) summed over the batch
    when the queries were shared.
    """
    E, X, Qh, Kh, Vh, Ah, Wq, Wk, Wv, scale, shared = cache
    B, T, dp = X.shape
    C = Ah.shape[2]
    H = Ah.shape[1]
    dh = dp // H

    dRh = dR.reshape(B, C, H, dh).transpose(0, 2, 1, 3)
    dAh = np.einsum("bhcd,bhtd->bhct", dRh, Vh)
    if dA_ext is not None:
        dAh = dAh + dA_ext[:, None, :, :] / H
    dVh = np.einsum("bhct,bhcd->bhtd", Ah, dRh)
    dlogits = _softmax_bwd(Ah, dAh) * scale

    if shared:
        dQh = np.einsum("bhct,bhtd->hcd", dlogits, Kh)
        dKh = np.einsum("bhct,hcd->bhtd", dlogits, Qh)
        dQ = dQh.transpose(1, 0, 2).reshape(C, dp)
    else:
        dQh = np.einsum("bhct,bhtd->bhcd", dlogits, Kh)
        dKh = np.einsum("bhct,bhcd->bhtd", dlogits, Qh)
        dQ = dQh.transpose(0, 2, 1, 3).reshape(B, C, dp)
    dK = dKh.transpose(0, 2, 1, 3).reshape(B, T, dp)
    dV = dVh.transpose(0, 2, 1, 3).reshape(B, T, dp)

    dE = dQ @ Wq.T
    dX = dK @ Wk.T + dV @ Wv.T
    if shared:
        dWq = E.T @ dQ
    else:
        dWq = np.einsum("bcd,bce->de", E, dQ)
    Xf = X.reshape(B * T, dp)
    dWk = Xf.T @ dK.reshape(B * T, dp)
    dWv = Xf.T @ dV.reshape(B * T, dp)
    return dE, dX, dWq, dWk, dWv


# ---------------------------------------------------------------------------
# Optional self-attention over the query rows (ablation path)
# ---------------------------------------------------------------------------

def self_attention_fwd(E, Wq, Wk, Wv):
    """Residual single-head self-attention over query rows.

    E: (C, dp) or (B, C, dp).  Returns (E_out, cache)."""
    dp = E.shape[-1]
    scale = 1.0 / np.sqrt(dp)
    Q = E @ Wq
    K = E @ Wk
    V = E @ Wv
    logits = Q @ np.swapaxes(K, -1, -2) * scale
    S = softmax(logits, axis=-1)
    out = E + S @ V
    return out, (E, Q, K, V, S, Wq, Wk, Wv, scale)


def self_attention_bwd(dOut, cache):
    E, Q, K, V, S, Wq, Wk, Wv, scale = cache
    dE = dOut.copy()
    dS = dOut @ np.swapaxes(V, -1, -2)
    dV = np.swapaxes(S, -1, -2) @ dOut
    dlogits = _softmax_bwd(S, dS) * scale
    dQ = dlogits @ K
    dK = np.swapaxes(dlogits, -1, -2) @ Q
    dE += dQ @ Wq.T + dK @ Wk.T + dV @ Wv.T

    def flat(a):
        return a.reshape(-1, a.shape[-1])

    dWq = flat(E).T @ flat(dQ)
    dWk = flat(E).T @ flat(dK)
    dWv = flat(E).T @ flat(dV)
    return dE, dWq, dWk, dWv


# ---------------------------------------------------------------------------
# Feed-forward block with residual and per-row standardization
# ---------------------------------------------------------------------------

def ffn_fwd(R, W1, b1, W2, b2, gamma, beta, norm: bool = True):
    """R -> Norm(R + W2 relu(W1 R + b1) + b2), applied row-wise."""
    shape = R.shape
    x = R.reshape(-1, shape[-1])
    h1 = x @ W1 + b1
    hr = np.maximum(h1, 0.0)
    f = hr @ W2 + b2
    y0 = x + f
    if norm:
        mu = y0.mean(axis=1, keepdims=True)
        yc = y0 - mu
        var = (yc * yc).mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + NORM_EPS)
        yhat = yc * inv
        y = yhat * gamma + beta
    else:
        yhat = inv = None
        y = y0
    cache = (x, h1, W1, W2, gamma, yhat, inv, norm, shape)
    return y.reshape(shape), cache


def ffn_bwd(dY, cache):
    x, h1, W1, W2, gamma, yhat, inv, norm, shape = cache
    dy = dY.reshape(-1, shape[-1])
    if norm:
        dgamma = (dy * yhat).sum(axis=0)
        dbeta = dy.sum(axis=0)
        dyhat = dy * gamma
        dy0 = inv * (
            dyhat
            - dyhat.mean(axis=1, keepdims=True)
            - yhat * (dyhat * yhat).mean(axis=1, keepdims=True)
        )
    else:
        dgamma = np.zeros_like(gamma)
        dbeta = np.zeros_like(gamma)
        dy0 = dy
    hr = np.maximum(h1, 0.0)
    df = dy0
    dW2 = hr.T @ df
    db2 = df.sum(axis=0)
    dhr = df @ W2.T
    dh1 = dhr * (h1 > 0.0)
    dW1 = x.T @ dh1
    db1 = dh1.sum(axis=0)
    dx = dy0 + dh1 @ W1.T
    return dx.reshape(shape), dW1, db1, dW2, db2, dgamma, dbeta


# ---------------------------------------------------------------------------
# Classification heads
# ---------------------------------------------------------------------------

def cs_head_fwd(Rhat, W, b):
    """One projection per category: z_c = W_c . Rhat_c + b_c.  Rhat (B,C,dp)."""
    z = np.einsum("bcd,cd->bc", Rhat, W) + b
    return z, (Rhat, W)


def cs_head_bwd(dz, cache):
    Rhat, W = cache
    dRhat = dz[:, :, None] * W[None, :, :]
    dW = np.einsum("bc,bcd->cd", dz, Rhat)
    db = dz.sum(axis=0)
    return dRhat, dW, db


def shared_head_fwd(Rhat, w, b):
    """Single shared projection applied to every category row."""
    z = Rhat @ w + b
    return z, (Rhat, w)


def shared_head_bwd(dz, cache):
    Rhat, w = cache
    dRhat = dz[:, :, None] * w[None, None, :]
    dw = np.einsum("bc,bcd->d", dz, Rhat)
    db = np.array(dz.sum())
    return dRhat, dw, db


def fc_head_fwd(Rhat, W, b):
    """Full projection from a single response row to C logits (used when the
    attention side is class-agnostic).  Rhat (B,1,dp), W (dp,C)."""
    z = Rhat[:, 0, :] @ W + b
    return z, (Rhat, W)


def fc_head_bwd(dz, cache):
    Rhat, W = cache
    dRhat = np.zeros_like(Rhat)
    dRhat[:, 0, :] = dz @ W.T
    dW = Rhat[:, 0, :].T @ dz
    db = dz.sum(axis=0)
    return dRhat, dW, db


def linear_fwd(x, W, b):
    """Affine map on the trailing axis; x (..., din)."""
    return x @ W + b, (x, W)


def linear_bwd(dy, cache):
    x, W = cache
    din = x.shape[-1]
    dout = dy.shape[-1]
    dx = dy @ W.T
    dW = x.reshape(-1, din).T @ dy.reshape(-1, dout)
    db = dy.reshape(-1, dout).sum(axis=0)
    return dx, dW, db


def cross_entropy(z, labels):
    """Softmax cross-entropy.  z (B,C), labels (B,).

    Returns (per-item losses, dz) where dz is the unscaled gradient
    softmax(z) - onehot(labels)."""
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    idx = np.arange(z.shape[0])
    losses = lse - z[idx, labels]
    dz = np.exp(z - lse[:, None])
    dz[idx, labels] -= 1.0
    return losses, dz


# ---------------------------------------------------------------------------
# Public single-video operations
# ---------------------------------------------------------------------------

@dataclass
class TsqLayerParams:
    """Projection matrices for one query-attention layer plus the optional
    learnable positional table (T_max x dp, added to the frame sequence
    before key/value projection)."""

    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    positional: np.ndarray | None = None
    n_heads: int = 1


@dataclass
class FfnParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    scale: np.ndarray
    shift: np.ndarray
    norm: bool = True


def tsq_attention(E: np.ndarray, X: np.ndarray, params: TsqLayerParams,
                  use_positional: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-category saliency rows and response vectors for one video.

    E (C, dp) query embeddings, X (T, dp) frame features.  Returns
    (A, R): A (C, T) row-stochastic attention, R (C, dp) responses."""
    E = np.asarray(E, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if E.ndim != 2 or X.ndim != 2 or E.shape[1] != X.shape[1]:
        raise DimensionError(
            f"tsq_attention: queries {E.shape} and frames {X.shape} must share the reduced dim"
        )
    if E.shape[1] != params.Wq.shape[0]:
        raise DimensionError("tsq_attention: projection matrices do not match input dim")
    if use_positional:
        if params.positional is None:
            raise ConfigError("tsq_attention: positional table requested but not provided")
        T = X.shape[0]
        if T > params.positional.shape[0]:
            raise DimensionError(
                f"tsq_attention: sequence length {T} exceeds positional table {params.positional.shape[0]}"
            )
        X = X + params.positional[:T]
    A, R, _ = attention_fwd(E, X[None], params.Wq, params.Wk, params.Wv, params.n_heads)
    _check_finite(A, "tsq_attention")
    _check_finite(R, "tsq_attention")
    return A[0], R[0]


def ffn_forward(R: np.ndarray, params: FfnParams) -> np.ndarray:
    """Feed-forward block over response rows: Norm(R + lin2(relu(lin1(R))))."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-1] != params.W1.shape[0]:
        raise DimensionError("ffn_forward: input dim does not match lin1")
    out, _ = ffn_fwd(R, params.W1, params.b1, params.W2, params.b2,
                     params.scale, params.shift, params.norm)
    _check_finite(out, "ffn_forward")
    return out


def class_specific_classify(Rhat: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """z_c = W_c . Rhat_c + b_c; row c of Rhat only ever reaches logit c."""
    Rhat = np.asarray(Rhat, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if Rhat.shape != W.shape:
        raise DimensionError(
            f"class_specific_classify: responses {Rhat.shape} vs weights {W.shape}"
        )
    z, _ = cs_head_fwd(Rhat[None], W, np.asarray(b, dtype=np.float64))
    return z[0]


def class_agnostic_classify(Rhat: np.ndarray, w: np.ndarray, b: float) -> np.ndarray:
    """Single shared projection applied to every response row."""
    Rhat = np.asarray(Rhat, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if Rhat.shape[-1] != w.shape[0]:
        raise DimensionError("class_agnostic_classify: weight dim does not match responses")
    z, _ = shared_head_fwd(Rhat[None], w, float(b))
    return z[0]
