"""Dual-branch network container: configuration, parameter initialization,
and the per-branch forward/backward used by training and inference.

Parameters live in a flat dict keyed ``<branch>.<field>`` (branches ``vqm``
and ``tqm``); the canonical checkpoint field order is the sorted key list.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .exceptions import ConfigError, DimensionError, NumericError
from .layers import (
    attention_bwd,
    attention_fwd,
    cs_head_bwd,
    cs_head_fwd,
    fc_head_bwd,
    fc_head_fwd,
    ffn_bwd,
    ffn_fwd,
    linear_bwd,
    linear_fwd,
    self_attention_bwd,
    self_attention_fwd,
    shared_head_bwd,
    shared_head_fwd,
)

BRANCHES = ("vqm", "tqm")


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    visual_dim: int
    word_dim: int
    reduced_dim: int = 64
    ffn_hidden: int = 0  # 0 -> 4 * reduced_dim
    t_max: int = 64
    top_n_objects: int = 10
    use_positional: bool = True
    attention: str = "cs"  # "cs" (one query per category) | "ca" (single query)
    classifier: str = "cs"  # "cs" (per-category projections) | "ca" (shared)
    self_attention: bool = False
    n_layers: int = 1
    n_heads: int = 1
    ffn_norm: bool = True

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least 2 categories")
        for name in ("visual_dim", "word_dim", "reduced_dim", "t_max", "n_layers", "n_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.attention not in ("cs", "ca") or self.classifier not in ("cs", "ca"):
            raise ConfigError("attention and classifier modes must be 'cs' or 'ca'")
        if self.attention == "ca" and self.classifier == "cs":
            raise ConfigError("class-specific classifier requires class-specific attention")
        if self.reduced_dim % self.n_heads:
            raise ConfigError("head count must divide reduced_dim")
        if self.top_n_objects < 1:
            raise ConfigError("top_n_objects must be >= 1")

    @property
    def hidden(self) -> int:
        return self.ffn_hidden if self.ffn_hidden else 4 * self.reduced_dim

    @property
    def query_rows(self) -> int:
        return self.num_classes if self.attention == "cs" else 1

    @property
    def head_kind(self) -> str:
        # cs+cs -> per-category rows; cs+ca -> one shared row; ca+ca -> full
        # projection from the single response row to all C logits.
        if self.attention == "ca":
            return "fc"
        return "cs" if self.classifier == "cs" else "shared"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _raw_dim(cfg: ModelConfig, branch: str) -> int:
    return cfg.visual_dim if branch == "vqm" else cfg.word_dim


def init_params(
    cfg: ModelConfig,
    rng: np.random.Generator,
    visual_embed: np.ndarray | None = None,
    textual_embed: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Fresh parameter dict.  `visual_embed` / `textual_embed` (C x raw dim)
    seed the query embeddings; omitted ones fall back to a scaled Gaussian.

    Draw order is fixed (vqm then tqm, fields in creation order below) so a
    given rng state always produces the same parameters."""
    dp, h = cfg.reduced_dim, cfg.hidden
    params: dict[str, np.ndarray] = {}
    inits = {"vqm": visual_embed, "tqm": textual_embed}
    for branch in BRANCHES:
        raw = _raw_dim(cfg, branch)
        pre = f"{branch}."

        given = inits[branch]
        if given is not None:
            given = np.asarray(given, dtype=np.float64)
            if cfg.attention == "ca":
                # single query: collapse the per-category init
                embed = given.mean(axis=0, keepdims=True)
            else:
                if given.shape != (cfg.num_classes, raw):
                    raise DimensionError(
                        f"{branch} embedding init {given.shape}, expected {(cfg.num_classes, raw)}"
                    )
                embed = given.copy()
        else:
            embed = rng.standard_normal((cfg.query_rows, raw)) / np.sqrt(raw)
        params[pre + "embed"] = embed

        # the two reductions start from the same matrix so the initial
        # query-frame similarities mirror the raw-space geometry (they are
        # independent parameters and diverge during training)
        reduce_w = rng.standard_normal((raw, dp)) / np.sqrt(raw)
        params[pre + "reduce.W"] = reduce_w
        params[pre + "reduce.b"] = np.zeros(dp)
        params[pre + "embed_reduce.W"] = reduce_w.copy()
        params[pre + "embed_reduce.b"] = np.zeros(dp)
        if cfg.use_positional:
            params[pre + "pos"] = np.zeros((cfg.t_max, dp))
        for l in range(cfg.n_layers):
            lp = f"{pre}L{l}."
            if cfg.self_attention:
                for name in ("Wq", "Wk", "Wv"):
                    params[lp + "self." + name] = rng.standard_normal((dp, dp)) / np.sqrt(dp)
            for name in ("Wq", "Wk", "Wv"):
                params[lp + "cross." + name] = rng.standard_normal((dp, dp)) / np.sqrt(dp)
            params[lp + "ffn.W1"] = rng.standard_normal((dp, h)) / np.sqrt(dp)
            params[lp + "ffn.b1"] = np.zeros(h)
            params[lp + "ffn.W2"] = rng.standard_normal((h, dp)) / np.sqrt(h)
            params[lp + "ffn.b2"] = np.zeros(dp)
            params[lp + "ffn.gamma"] = np.ones(dp)
            params[lp + "ffn.beta"] = np.zeros(dp)
        kind = cfg.head_kind
        if kind == "cs":
            params[pre + "cls.W"] = rng.standard_normal((cfg.num_classes, dp)) / np.sqrt(dp)
            params[pre + "cls.b"] = np.zeros(cfg.num_classes)
        elif kind == "shared":
            params[pre + "cls.W"] = rng.standard_normal(dp) / np.sqrt(dp)
            params[pre + "cls.b"] = np.zeros(())
        else:
            params[pre + "cls.W"] = rng.standard_normal((dp, cfg.num_classes)) / np.sqrt(dp)
            params[pre + "cls.b"] = np.zeros(cfg.num_classes)
    return params


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


@dataclass
class BranchPass:
    """Everything the backward pass (and the samplers) need from one branch."""

    A: np.ndarray      # (B, C_q, T) final-layer attention, head-averaged
    Rhat: np.ndarray   # (B, C_q, dp)
    z: np.ndarray      # (B, C)
    Xred: np.ndarray   # (B, T, dp) reduced frames, before positional
    red_cache: tuple = field(repr=False, default=())
    emb_cache: tuple = field(repr=False, default=())
    layer_caches: list = field(repr=False, default_factory=list)
    head_cache: tuple = field(repr=False, default=())


def branch_forward(params: dict[str, np.ndarray], cfg: ModelConfig, branch: str,
                   X_raw: np.ndarray) -> BranchPass:
    """Run one branch on a batch of raw frame features (B, T, raw)."""
    if branch not in BRANCHES:
        raise ConfigError(f"unknown branch {branch!r}")
    X_raw = np.asarray(X_raw, dtype=np.float64)
    if X_raw.ndim != 3 or X_raw.shape[2] != _raw_dim(cfg, branch):
        raise DimensionError(
            f"{branch}: input {X_raw.shape}, expected (B, T, {_raw_dim(cfg, branch)})"
        )
    p = params
    pre = f"{branch}."
    B, T, _ = X_raw.shape

    Xred, red_cache = linear_fwd(X_raw, p[pre + "reduce.W"], p[pre + "reduce.b"])
    E0, emb_cache = linear_fwd(p[pre + "embed"], p[pre + "embed_reduce.W"], p[pre + "embed_reduce.b"])

    X_in = Xred
    if cfg.use_positional:
        pos = p[pre + "pos"]
        if T > pos.shape[0]:
            raise DimensionError(f"{branch}: sequence length {T} exceeds positional table {pos.shape[0]}")
        X_in = Xred + pos[:T]

    E_cur: np.ndarray = E0
    layer_caches = []
    A = None
    Rhat = None
    for l in range(cfg.n_layers):
        lp = f"{pre}L{l}."
        sa_cache = None
        if cfg.self_attention:
            E_cur, sa_cache = self_attention_fwd(
                E_cur, p[lp + "self.Wq"], p[lp + "self.Wk"], p[lp + "self.Wv"]
            )
        A, R, att_cache = attention_fwd(
            E_cur, X_in, p[lp + "cross.Wq"], p[lp + "cross.Wk"], p[lp + "cross.Wv"], cfg.n_heads
        )
        Rhat, ffn_cache = ffn_fwd(
            R, p[lp + "ffn.W1"], p[lp + "ffn.b1"], p[lp + "ffn.W2"], p[lp + "ffn.b2"],
            p[lp + "ffn.gamma"], p[lp + "ffn.beta"], cfg.ffn_norm,
        )
        layer_caches.append((sa_cache, att_cache, ffn_cache))
        E_cur = Rhat

    kind = cfg.head_kind
    if kind == "cs":
        z, head_cache = cs_head_fwd(Rhat, p[pre + "cls.W"], p[pre + "cls.b"])
    elif kind == "shared":
        z, head_cache = shared_head_fwd(Rhat, p[pre + "cls.W"], p[pre + "cls.b"])
    else:
        z, head_cache = fc_head_fwd(Rhat, p[pre + "cls.W"], p[pre + "cls.b"])

    if not (np.isfinite(A).all() and np.isfinite(z).all()):
        raise NumericError(f"{branch}: non-finite forward pass")

    return BranchPass(A=A, Rhat=Rhat, z=z, Xred=Xred, red_cache=red_cache,
                      emb_cache=emb_cache, layer_caches=layer_caches, head_cache=head_cache)


def branch_backward(
    grads: dict[str, np.ndarray],
    cfg: ModelConfig,
    branch: str,
    bp: BranchPass,
    dz: np.ndarray,
    dA_ext: np.ndarray | None = None,
    dXred_ext: np.ndarray | None = None,
) -> None:
    """Accumulate gradients for one branch into `grads`.

    dz: (B, C) gradient on the branch logits.  dA_ext: gradient reaching the
    final attention map from outside the branch (swapped-response path).
    dXred_ext: gradient reaching the reduced frame features from outside."""
    pre = f"{branch}."
    kind = cfg.head_kind
    if kind == "cs":
        dRhat, dW, db = cs_head_bwd(dz, bp.head_cache)
    elif kind == "shared":
        dRhat, dW, db = shared_head_bwd(dz, bp.head_cache)
    else:
        dRhat, dW, db = fc_head_bwd(dz, bp.head_cache)
    grads[pre + "cls.W"] += dW
    grads[pre + "cls.b"] += db

    T = bp.Xred.shape[1]
    dX_in = None
    dE_next = dRhat
    for l in reversed(range(cfg.n_layers)):
        lp = f"{pre}L{l}."
        sa_cache, att_cache, ffn_cache = bp.layer_caches[l]
        dR, dW1, db1, dW2, db2, dgamma, dbeta = ffn_bwd(dE_next, ffn_cache)
        grads[lp + "ffn.W1"] += dW1
        grads[lp + "ffn.b1"] += db1
        grads[lp + "ffn.W2"] += dW2
        grads[lp + "ffn.b2"] += db2
        grads[lp + "ffn.gamma"] += dgamma
        grads[lp + "ffn.beta"] += dbeta

        ext = dA_ext if l == cfg.n_layers - 1 else None
        dE_cur, dX_l, dWq, dWk, dWv = attention_bwd(ext, dR, att_cache)
        grads[lp + "cross.Wq"] += dWq
        grads[lp + "cross.Wk"] += dWk
        grads[lp + "cross.Wv"] += dWv
        dX_in = dX_l if dX_in is None else dX_in + dX_l

        if cfg.self_attention:
            dE_cur, dWqs, dWks, dWvs = self_attention_bwd(dE_cur, sa_cache)
            grads[lp + "self.Wq"] += dWqs
            grads[lp + "self.Wk"] += dWks
            grads[lp + "self.Wv"] += dWvs
        dE_next = dE_cur

    # dE_next is now the gradient on the reduced embedding rows (C_q, dp)
    dE0 = dE_next
    dE_raw, dWe, dbe = linear_bwd(dE0, bp.emb_cache)
    grads[pre + "embed_reduce.W"] += dWe
    grads[pre + "embed_reduce.b"] += dbe
    grads[pre + "embed"] += dE_raw

    if cfg.use_positional:
        grads[pre + "pos"][:T] += dX_in.sum(axis=0)
    dXred = dX_in
    if dXred_ext is not None:
        dXred = dXred + dXred_ext
    _, dWr, dbr = linear_bwd(dXred, bp.red_cache)
    grads[pre + "reduce.W"] += dWr
    grads[pre + "reduce.b"] += dbr
